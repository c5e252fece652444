from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from ..tensor import Tensor


class ModelParams(dict):
    """Ordered ``name -> Tensor`` mapping with slash-delimited names.

    Insertion order is the canonical parameter order (checkpoints, optimizer
    state, meta-gradients all follow it).
    """

    def __init__(self, entries: Iterable[tuple[str, Tensor]] | Mapping[str, Tensor] = ()):
        super().__init__()
        items = entries.items() if isinstance(entries, Mapping) else entries
        for name, t in items:
            if name in self:
                raise ValueError(f"duplicate parameter name {name!r}")
            self[name] = t if isinstance(t, Tensor) else Tensor(t)

    def clone(self, requires_grad: bool | None = None) -> "ModelParams":
        """Deep copy; the clone shares no storage with the original."""
        return ModelParams((n, t.copy(requires_grad)) for n, t in self.items())

    def detached(self) -> "ModelParams":
        return ModelParams((n, Tensor(t.data)) for n, t in self.items())

    def requiring_grad(self) -> "ModelParams":
        for t in self.values():
            t.requires_grad = True
        return self

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.items()}

    def num_values(self) -> int:
        return sum(t.size for t in self.values())

    def subset(self, prefix: str) -> "ModelParams":
        return ModelParams((n, t) for n, t in self.items() if n.startswith(prefix))
