"""Procedural glyph images standing in for handwritten characters and words.

Each class is a fixed random polyline skeleton. Each style applies a fixed
shear/rotation/scale, stroke width, ink level and letter spacing to every
glyph it draws, and individual samples add small jitter on top. Pixel values
are quantised to multiples of 1/255 so a PGM round trip is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..rng import make_rng
from .codec import LabelCodec, ethiopic_syllables
from .dataset import Sample

CHAR_HW = (28, 28)
WORD_HW = (32, 128)
MAX_WORD_GLYPHS = 6


@dataclass(frozen=True)
class GlyphStyle:
    shear: float
    rotation_deg: float
    scale_x: float
    scale_y: float
    stroke: float
    ink: float
    spacing: float

    def matrix(self) -> np.ndarray:
        th = math.radians(self.rotation_deg)
        rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        shear = np.array([[1.0, self.shear], [0.0, 1.0]])  # (x, y) order: x += shear * y
        return rot @ shear @ np.diag([self.scale_x, self.scale_y])


def glyph_skeleton(seed: int, cls: int) -> list[np.ndarray]:
    """2-3 polylines with 2-4 vertices each, in unit (x, y) coordinates."""
    rng = make_rng(seed, "glyph", cls)
    strokes = []
    for _ in range(int(rng.integers(2, 4))):
        pts = rng.uniform(0.1, 0.9, size=(int(rng.integers(2, 5)), 2))
        strokes.append(pts)
    return strokes


def style_for(seed: int, style: int) -> GlyphStyle:
    rng = make_rng(seed, "style", style)
    return GlyphStyle(
        shear=rng.uniform(-0.35, 0.35),
        rotation_deg=rng.uniform(-8.0, 8.0),
        scale_x=rng.uniform(0.75, 1.05),
        scale_y=rng.uniform(0.8, 1.05),
        stroke=rng.uniform(1.2, 2.6),
        ink=rng.uniform(0.65, 1.0),
        spacing=rng.uniform(0.0, 2.0),
    )


def draw_polyline(canvas: np.ndarray, pts: np.ndarray, width: float, ink: float) -> None:
    """Anti-aliased thick polyline, max-composited into ``canvas``; ``pts`` are (x, y) pixel coordinates."""
    h, w = canvas.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    half = width / 2.0
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        lo_x = int(max(0, math.floor(min(x0, x1) - half - 1)))
        hi_x = int(min(w, math.ceil(max(x0, x1) + half + 2)))
        lo_y = int(max(0, math.floor(min(y0, y1) - half - 1)))
        hi_y = int(min(h, math.ceil(max(y0, y1) + half + 2)))
        if lo_x >= hi_x or lo_y >= hi_y:
            continue
        px = xx[lo_y:hi_y, lo_x:hi_x]
        py = yy[lo_y:hi_y, lo_x:hi_x]
        dx, dy = x1 - x0, y1 - y0
        length2 = dx * dx + dy * dy
        t = np.zeros_like(px) if length2 == 0 else np.clip(((px - x0) * dx + (py - y0) * dy) / length2, 0, 1)
        dist = np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))
        val = np.clip(half + 0.5 - dist, 0.0, 1.0) * ink
        region = canvas[lo_y:hi_y, lo_x:hi_x]
        np.maximum(region, val, out=region)


def render_glyph(
    canvas: np.ndarray,
    strokes: list[np.ndarray],
    style: GlyphStyle,
    center: tuple[float, float],
    size: tuple[float, float],
    rng: np.random.Generator,
) -> None:
    m = style.matrix()
    jitter_rot = math.radians(rng.uniform(-3.0, 3.0))
    jr = np.array([[math.cos(jitter_rot), -math.sin(jitter_rot)], [math.sin(jitter_rot), math.cos(jitter_rot)]])
    width = max(0.8, style.stroke * rng.uniform(0.9, 1.1))
    for pts in strokes:
        local = pts - 0.5 + rng.normal(0.0, 0.02, size=pts.shape)
        local = local @ (jr @ m).T
        px = center[0] + local[:, 0] * size[0]
        py = center[1] + local[:, 1] * size[1]
        draw_polyline(canvas, np.stack([px, py], axis=1), width, style.ink)


def _quantise(canvas: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(canvas, 0.0, 1.0) * 255.0) / 255.0


def render_char(seed: int, cls: int, style: int, index: int) -> np.ndarray:
    rng = make_rng(seed, "char-sample", cls, style, index)
    canvas = np.zeros(CHAR_HW)
    center = (13.5 + rng.uniform(-1.5, 1.5), 13.5 + rng.uniform(-1.5, 1.5))
    render_glyph(canvas, glyph_skeleton(seed, cls), style_for(seed, style), center, (18.0, 18.0), rng)
    return _quantise(canvas)


def render_word(seed: int, classes: list[int], style: int, index: int) -> np.ndarray:
    if len(classes) > MAX_WORD_GLYPHS:
        raise ValueError(f"a word of {len(classes)} glyphs overflows the {WORD_HW[1]}-pixel canvas")
    rng = make_rng(seed, "word-sample", "-".join(map(str, classes)), style, index)
    st = style_for(seed, style)
    canvas = np.zeros(WORD_HW)
    cell = 17.0
    pitch = cell + st.spacing
    span = pitch * len(classes)
    x = rng.uniform(2.0, max(2.0, WORD_HW[1] - span - 2.0))
    cy = 15.5 + rng.uniform(-1.5, 1.5)
    for cls in classes:
        center = (x + pitch / 2.0, cy + rng.uniform(-0.7, 0.7))
        render_glyph(canvas, glyph_skeleton(seed, cls), st, center, (cell - 1.0, 22.0), rng)
        x += pitch
    return _quantise(canvas)


def make_vocabulary(seed: int, num_classes: int, vocab_size: int, min_len: int = 2, max_len: int = 6) -> list[list[int]]:
    """Distinct random words as class-index lists."""
    if max_len > MAX_WORD_GLYPHS:
        raise ValueError(f"words longer than {MAX_WORD_GLYPHS} glyphs overflow the canvas")
    rng = make_rng(seed, "vocab")
    words: list[list[int]] = []
    seen = set()
    attempts = 0
    while len(words) < vocab_size:
        attempts += 1
        if attempts > 1000 * vocab_size:
            raise ValueError("cannot draw that many distinct words from this charset")
        n = int(rng.integers(min_len, max_len + 1))
        w = tuple(int(v) for v in rng.integers(0, num_classes, size=n))
        if w not in seen:
            seen.add(w)
            words.append(list(w))
    return words


def synth_generate(
    num_classes: int,
    samples_per_class: int,
    num_styles: int,
    kind: str = "char",
    seed: int = 42,
    vocab_size: int = 20,
    style_offset: int = 0,
) -> tuple[list[Sample], LabelCodec]:
    """Synthetic samples and their codec.

    ``kind="char"``: ``samples_per_class`` 28x28 images per glyph class.
    ``kind="word"``: a vocabulary of ``vocab_size`` words over ``num_classes``
    glyphs, ``samples_per_class`` 32x128 images per word.

    Sample ``j`` of each class/word uses style ``style_offset + j % num_styles``;
    writer and style ids coincide.
    """
    if num_styles < 1 or samples_per_class < 1 or num_classes < 1:
        raise ValueError("counts must be positive")
    codec = LabelCodec(ethiopic_syllables(num_classes))
    samples = []
    if kind == "char":
        for cls in range(num_classes):
            for j in range(samples_per_class):
                style = style_offset + j % num_styles
                pixels = render_char(seed, cls, style, j)
                samples.append(Sample(pixels, codec.chars[cls], f"writer{style:03d}", f"style{style:03d}"))
    elif kind == "word":
        for word in make_vocabulary(seed, num_classes, vocab_size):
            label = codec.decode(word)
            for j in range(samples_per_class):
                style = style_offset + j % num_styles
                pixels = render_word(seed, word, style, j)
                samples.append(Sample(pixels, label, f"writer{style:03d}", f"style{style:03d}"))
    else:
        raise ValueError(f"kind must be 'char' or 'word', got {kind!r}")
    return samples, codec
