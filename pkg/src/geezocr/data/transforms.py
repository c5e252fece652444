"""Bilinear resizing and random affine augmentation."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np


def resize_bilinear(pixels: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resize (output corners sample input corners)."""
    src = np.asarray(pixels, dtype=np.float64)
    h, w = int(target[0]), int(target[1])
    if h < 1 or w < 1:
        raise ValueError(f"target size must be positive, got {target}")
    sh, sw = src.shape
    if (sh, sw) == (h, w):
        return src.copy()

    def coords(n_out, n_in):
        if n_out == 1:
            return np.full(1, (n_in - 1) / 2.0)
        return np.arange(n_out) * ((n_in - 1) / (n_out - 1))

    ys, xs = coords(h, sh), coords(w, sw)
    y0 = np.clip(np.floor(ys).astype(int), 0, sh - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bottom * wy
    return np.clip(out, src.min(), src.max())


def sample_bilinear(pixels: np.ndarray, ys: np.ndarray, xs: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Sample at fractional coordinates; neighbours outside the image read as ``fill``."""
    h, w = pixels.shape
    padded = np.full((h + 2, w + 2), fill, dtype=np.float64)
    padded[1:-1, 1:-1] = pixels
    # shift into padded coordinates and clamp far-away points onto the fill border
    py = np.clip(ys + 1.0, 0.0, h + 1.0)
    px = np.clip(xs + 1.0, 0.0, w + 1.0)
    y0 = np.minimum(np.floor(py).astype(int), h)
    x0 = np.minimum(np.floor(px).astype(int), w)
    wy = py - y0
    wx = px - x0
    out = (
        padded[y0, x0] * (1 - wy) * (1 - wx)
        + padded[y0, x0 + 1] * (1 - wy) * wx
        + padded[y0 + 1, x0] * wy * (1 - wx)
        + padded[y0 + 1, x0 + 1] * wy * wx
    )
    return out


def affine_warp(
    pixels: np.ndarray,
    rotation_deg: float = 0.0,
    shear: float = 0.0,
    zoom: float = 1.0,
    shift: tuple[float, float] = (0.0, 0.0),
    fill: float = 0.0,
) -> np.ndarray:
    """Rotate/shear/zoom about the image centre, then translate by ``shift`` = (dy, dx) pixels.

    Implemented by inverse mapping every output pixel into the source.
    """
    h, w = pixels.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    th = math.radians(rotation_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    shr = np.array([[1.0, 0.0], [shear, 1.0]])  # (y, x) order: x += shear * y
    forward = rot @ shr * zoom
    inv = np.linalg.inv(forward)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    oy = yy - cy - shift[0]
    ox = xx - cx - shift[1]
    sy = inv[0, 0] * oy + inv[0, 1] * ox + cy
    sx = inv[1, 0] * oy + inv[1, 1] * ox + cx
    out = sample_bilinear(pixels, sy, sx, fill)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: float = 10.0
    shift_frac: float = 0.1
    shear: float = 0.1
    zoom: tuple[float, float] = (0.9, 1.1)

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls(0.0, 0.0, 0.0, (1.0, 1.0))


def augment(sample, params: AugmentParams, rng: np.random.Generator):
    """Random affine copy of ``sample``; label and ids are untouched."""
    h, w = sample.pixels.shape
    rot = rng.uniform(-params.rotation_deg, params.rotation_deg)
    shear = rng.uniform(-params.shear, params.shear)
    zoom = rng.uniform(*params.zoom)
    dy = rng.uniform(-params.shift_frac, params.shift_frac) * h
    dx = rng.uniform(-params.shift_frac, params.shift_frac) * w
    pixels = affine_warp(sample.pixels, rot, shear, zoom, (dy, dx))
    return dataclasses.replace(sample, pixels=pixels)
