"""Dense float64 arrays with define-by-run reverse-mode differentiation.

Operations are recorded on the :class:`Tape` that is active in the current
context. A tape is opened with ``with Tape() as tape:`` and every op whose
inputs require gradients appends one node to it. Backward rules are written
in terms of the same ops, so gradients can themselves be differentiated when
``create_graph=True`` is requested (used by second-order meta-learning).
"""

from __future__ import annotations

import contextlib
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "TapeError",
    "backward",
    "record",
    "no_grad",
    "current_tape",
    "elementwise_map",
    "matmul",
    "conv2d",
    "conv1x1",
    "maxpool2d",
    "log_softmax",
    "concat",
    "gather_flat",
]

_ACTIVE_TAPE: ContextVar["Tape | None"] = ContextVar("geezocr_active_tape", default=None)


class TapeError(RuntimeError):
    """Raised for misuse of the tape (non-scalar loss, unrecorded tensors, ...)."""


class Tensor:
    """A float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 4:
            raise ValueError(f"rank {arr.ndim} exceeds the supported maximum of 4")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the values."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def copy(self, requires_grad: bool | None = None) -> "Tensor":
        rg = self.requires_grad if requires_grad is None else requires_grad
        return Tensor(self.data.copy(), requires_grad=rg)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- method forms of common ops ------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def relu(self):
        return elementwise_map(self, "relu")

    def sigmoid(self):
        return elementwise_map(self, "sigmoid")

    def tanh(self):
        return elementwise_map(self, "tanh")

    def exp(self):
        return elementwise_map(self, "exp")

    def log(self):
        return elementwise_map(self, "log")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[Tensor], Sequence[Tensor | None]]
    twice: bool
    name: str


class Tape:
    """Ordered record of differentiable operations for one forward pass.

    Nodes are appended as ops execute, so the list is topologically sorted by
    construction. A tape belongs to the thread (context) that opened it.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._producer: dict[int, int] = {}
        self._paused = 0
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    @property
    def recording(self) -> bool:
        return self._paused == 0

    @contextlib.contextmanager
    def paused(self):
        self._paused += 1
        try:
            yield
        finally:
            self._paused -= 1

    def _append(self, node: _Node) -> None:
        self._producer[id(node.output)] = len(self.nodes)
        self.nodes.append(node)

    def gradient(
        self,
        loss: Tensor,
        wrt: Iterable[Tensor],
        create_graph: bool = False,
        allow_unused: bool = True,
    ) -> list[Tensor]:
        """Gradients of scalar ``loss`` with respect to each tensor in ``wrt``.

        With ``create_graph`` the backward computation is itself recorded, so
        the returned tensors stay differentiable functions of the inputs.
        Unused inputs get a zero gradient.
        """
        wrt = list(wrt)
        if loss.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        if not np.isfinite(loss.data).all():
            raise FloatingPointError("loss is not finite")
        wanted = {id(t) for t in wrt}
        grads: dict[int, Tensor] = {}
        end = self._producer.get(id(loss))
        if end is None:
            if id(loss) in wanted and loss.requires_grad:
                return [Tensor(np.ones_like(t.data)) if t is loss else Tensor(np.zeros_like(t.data)) for t in wrt]
            raise TapeError("loss was not produced by an operation recorded on this tape")
        grads[id(loss)] = Tensor(np.ones_like(loss.data))
        nodes = self.nodes[: end + 1]

        ctx = contextlib.nullcontext() if create_graph else self.paused()
        with ctx:
            for node in reversed(nodes):
                key = id(node.output)
                g = grads.get(key) if key in wanted else grads.pop(key, None)
                if g is None:
                    continue
                if create_graph and not node.twice:
                    raise TapeError(f"op '{node.name}' does not support higher-order differentiation")
                in_grads = node.backward(g)
                for inp, ig in zip(node.inputs, in_grads):
                    if ig is None or not inp.requires_grad:
                        continue
                    k = id(inp)
                    prev = grads.get(k)
                    grads[k] = ig if prev is None else add(prev, ig)

        out = []
        for t in wrt:
            g = grads.get(id(t))
            if g is None:
                if not allow_unused:
                    raise TapeError("a requested tensor does not influence the loss")
                g = Tensor(np.zeros_like(t.data))
            elif g.shape != t.shape:
                g = Tensor(np.broadcast_to(g.data, t.shape).copy()) if not create_graph else broadcast_to(g, t.shape)
            if not np.isfinite(g.data).all():
                raise FloatingPointError("non-finite gradient")
            out.append(g)
        return out

    def leaves(self) -> list[Tensor]:
        """Tensors requiring grad that enter the tape without being produced on it."""
        seen: dict[int, Tensor] = {}
        for node in self.nodes:
            for inp in node.inputs:
                if inp.requires_grad and id(inp) not in self._producer:
                    seen.setdefault(id(inp), inp)
        return list(seen.values())


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` (as numpy arrays) on every leaf tensor reached from ``loss``.

    Existing ``.grad`` values are overwritten, not accumulated.
    """
    leaves = tape.leaves()
    grads = tape.gradient(loss, leaves)
    for leaf, g in zip(leaves, grads):
        leaf.grad = g.data.copy()


def current_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


@contextlib.contextmanager
def no_grad():
    """Suspend recording on the active tape, if any."""
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        yield
    else:
        with tape.paused():
            yield


def record(
    out_data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: Callable[[Tensor], Sequence[Tensor | None]],
    *,
    twice: bool = True,
    name: str = "op",
) -> Tensor:
    """Wrap ``out_data`` in a Tensor and record it on the active tape.

    ``backward_fn`` maps the output gradient to one gradient (or None) per
    input. Set ``twice=False`` when the rule is computed outside the op set
    and therefore cannot be differentiated again.
    """
    out = Tensor(out_data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and tape._paused == 0 and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._append(_Node(tuple(inputs), out, backward_fn, twice, name))
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    axes = list(range(lead))
    for i, n in enumerate(shape):
        if n == 1 and g.shape[lead + i] != 1:
            axes.append(lead + i)
    out = tsum(g, tuple(axes), keepdims=True) if axes else g
    return reshape(out, shape)


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    return record(
        np.broadcast_to(x.data, shape).copy(),
        (x,),
        lambda g: (_unbroadcast(g, x.shape),),
        name="broadcast_to",
    )


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        name="add",
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)),
        name="sub",
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return record(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(mul(g, b), a.shape) if a.requires_grad else None,
            _unbroadcast(mul(g, a), b.shape) if b.requires_grad else None,
        ),
        name="mul",
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("division by zero in tensor div")

    def bw(g):
        ga = _unbroadcast(div(g, b), a.shape) if a.requires_grad else None
        gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape) if b.requires_grad else None
        return ga, gb

    return record(a.data / b.data, (a, b), bw, name="div")


def neg(x: Tensor) -> Tensor:
    return record(-x.data, (x,), lambda g: (neg(g),), name="neg")


def power(x: Tensor, p: float) -> Tensor:
    """Elementwise ``x ** p`` for a constant real exponent."""
    p = float(p)
    if p != int(p) and np.any(x.data < 0):
        raise ValueError("fractional power of a negative value")
    return record(
        x.data**p,
        (x,),
        lambda g: (mul(g, mul(power(x, p - 1.0), p)),) if p != 0 else (None,),
        name="power",
    )


def _relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(np.float64)
    return record(x.data * mask, (x,), lambda g: (mul(g, mask),), name="relu")


def _sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    data = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = None

    def bw(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = record(data, (x,), bw, name="sigmoid")
    return out


def _tanh(x: Tensor) -> Tensor:
    out = None

    def bw(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = record(np.tanh(x.data), (x,), bw, name="tanh")
    return out


def _exp(x: Tensor) -> Tensor:
    out = None

    def bw(g):
        return (mul(g, out),)

    out = record(np.exp(x.data), (x,), bw, name="exp")
    return out


def _log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log of a non-positive value")
    return record(np.log(x.data), (x,), lambda g: (div(g, x),), name="log")


_MAPS = {
    "relu": _relu,
    "sigmoid": _sigmoid,
    "tanh": _tanh,
    "negate": neg,
    "exp": _exp,
    "log": _log,
}


def elementwise_map(x: Tensor, f: str) -> Tensor:
    """Apply one of relu, sigmoid, tanh, negate, exp, log to every element."""
    try:
        fn = _MAPS[f]
    except KeyError:
        raise ValueError(f"unknown elementwise function {f!r}; expected one of {sorted(_MAPS)}") from None
    return fn(_as_tensor(x))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(x.shape))

    def bw(g):
        return (broadcast_to(reshape(g, kept_shape), x.shape),)

    return record(x.data.sum(axis=axes, keepdims=keepdims), (x,), bw, name="sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(tsum(x, axes, keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return record(x.data.reshape(shape), (x,), lambda g: (reshape(g, x.shape),), name="reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (transpose(g, inv),),
        name="transpose",
    )


def getitem(x: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing; the gradient scatters back into a zero array."""
    return record(np.array(x.data[index]), (x,), lambda g: (_setitem_zero(g, index, x.shape),), name="getitem")


def _setitem_zero(g: Tensor, index, shape) -> Tensor:
    out = np.zeros(shape)
    out[index] = g.data
    return record(out, (g,), lambda gg: (getitem(gg, index),), name="scatter_slice")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        outs = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(lo), int(hi))
            outs.append(getitem(g, tuple(sl)) if t.requires_grad else None)
        return outs

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, name="concat")


def gather_flat(x: Tensor, index: np.ndarray) -> Tensor:
    """``x.ravel()[index]``; gradient scatter-adds (duplicate indices sum)."""
    index = np.asarray(index, dtype=np.int64)
    return record(
        x.data.reshape(-1)[index],
        (x,),
        lambda g: (_scatter_flat(g, index, x.shape),),
        name="gather_flat",
    )


def _scatter_flat(g: Tensor, index: np.ndarray, shape) -> Tensor:
    size = int(np.prod(shape))
    data = np.bincount(index.reshape(-1), weights=g.data.reshape(-1), minlength=size).reshape(shape)
    return record(data, (g,), lambda gg: (gather_flat(gg, index),), name="scatter_flat")


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product. dA = dC @ B^T, dB = A^T @ dC."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")

    def bw(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return record(a.data @ b.data, (a, b), bw, name="matmul")


def _im2col3(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N, C*9, H*W) 3x3 neighbourhoods with zero padding 1."""
    n, c, h, w = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))  # (N,C,H,W,3,3)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * 9, h * w)
    return record(cols, (x,), lambda g: (_col2im3(g, x.shape),), name="im2col")


def _col2im3(g: Tensor, shape) -> Tensor:
    n, c, h, w = shape
    gd = g.data.reshape(n, c, 3, 3, h, w)
    out = np.zeros((n, c, h + 2, w + 2))
    for ky in range(3):
        for kx in range(3):
            out[:, :, ky : ky + h, kx : kx + w] += gd[:, :, ky, kx]
    return record(
        np.ascontiguousarray(out[:, :, 1:-1, 1:-1]),
        (g,),
        lambda gg: (_im2col3(gg),),
        name="col2im",
    )


def shared_matmul(a: Tensor, b: Tensor) -> Tensor:
    """``out[n] = a @ b[n]`` for a rank-2 ``a`` and a rank-3 batch ``b``."""
    if a.ndim != 2 or b.ndim != 3 or a.shape[1] != b.shape[1]:
        raise ValueError(f"shared_matmul shapes disagree: {a.shape} and {b.shape}")

    def bw(g):
        ga = _outer_sum(g, b) if a.requires_grad else None
        gb = shared_matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return record(np.matmul(a.data, b.data), (a, b), bw, name="shared_matmul")


def _outer_sum(g: Tensor, b: Tensor) -> Tensor:
    """``sum_n g[n] @ b[n].T`` (the weight gradient of :func:`shared_matmul`)."""

    def bw(gg):
        dg = shared_matmul(gg, b) if g.requires_grad else None
        db = shared_matmul(transpose(gg), g) if b.requires_grad else None
        return dg, db

    data = np.einsum("nij,nkj->ik", g.data, b.data, optimize=True)
    return record(data, (g, b), bw, name="outer_sum")


def conv2d(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1 (output keeps H and W)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d expects rank-4 input and weight")
    c_out, c_in, kh, kw = w.shape
    if (kh, kw) != (3, 3):
        raise ValueError(f"conv2d supports 3x3 kernels only, got {kh}x{kw}")
    if x.shape[1] != c_in:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, kernel expects {c_in}")
    if bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} does not match {c_out} output channels")
    n, _, h, wd = x.shape
    out = shared_matmul(reshape(w, (c_out, c_in * 9)), _im2col3(x))
    return reshape(out, (n, c_out, h, wd)) + reshape(bias, (1, c_out, 1, 1))


def conv1x1(x: Tensor, w: Tensor) -> Tensor:
    """Pointwise channel projection; ``w`` has shape (C_out, C_in)."""
    n, c, h, wd = x.shape
    if w.shape[1] != c:
        raise ValueError(f"channel mismatch: input has {c}, projection expects {w.shape[1]}")
    out = shared_matmul(w, reshape(x, (n, c, h * wd)))
    return reshape(out, (n, w.shape[0], h, wd))


def maxpool2d(x: Tensor, pool_h: int, pool_w: int) -> Tensor:
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped.

    Ties resolve to the first element of the window in row-major order.
    """
    n, c, h, w = x.shape
    if pool_h > h or pool_w > w:
        raise ValueError(f"pool {pool_h}x{pool_w} exceeds spatial size {h}x{w}")
    ho, wo = h // pool_h, w // pool_w
    flat_idx = np.arange(x.size).reshape(x.shape)[:, :, : ho * pool_h, : wo * pool_w]
    win = flat_idx.reshape(n, c, ho, pool_h, wo, pool_w).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, -1)
    vals = x.data.reshape(-1)[win]
    arg = vals.argmax(axis=-1)
    chosen = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return gather_flat(x, chosen)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted log-softmax along ``axis``."""
    d = x.data
    if not np.isfinite(d).all():
        raise FloatingPointError("log_softmax input is not finite")
    shifted = d - d.max(axis=axis, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = None

    def bw(g):
        return (sub(g, mul(elementwise_map(out, "exp"), tsum(g, axis, keepdims=True))),)

    out = record(data, (x,), bw, name="log_softmax")
    return out
