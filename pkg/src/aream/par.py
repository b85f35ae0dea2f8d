"""Pixel-adaptive refinement: iterated local averaging with intensity/position kernels.

Neighbours of a pixel are the pixel itself plus the eight points of a 3x3
ring at every dilation, clipped at the image border. Each kernel mixes a
softmax over intensity similarity with a softmax over spatial nearness,
both scaled by locally estimated variances.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .tensor import as_tensor

VAR_EPS = 1e-8


@dataclass(frozen=True)
class ParConfig:
    w_I: float = 0.8
    w_L: float = 0.2
    c_I: float = 0.3
    c_L: float = 0.01
    dilations: tuple = (1, 2, 4, 8)
    iterations: int = 10

    def __post_init__(self):
        if self.w_I < 0 or self.w_L < 0 or abs(self.w_I + self.w_L - 1.0) > 1e-12:
            raise ArgumentError(f"w_I + w_L must equal 1, got {self.w_I} + {self.w_L}")
        if self.c_I <= 0 or self.c_L <= 0:
            raise ArgumentError("c_I and c_L must be positive")
        if len(self.dilations) == 0 or any(int(d) < 1 for d in self.dilations):
            raise ArgumentError(f"dilations must be positive integers, got {self.dilations}")
        if self.iterations < 0:
            raise ArgumentError("iterations must be >= 0")
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        object.__setattr__(self, "iterations", int(self.iterations))


def neighbor_offsets(dilations):
    """(K, 2) array of (dy, dx); row 0 is the pixel itself."""
    offs = [(0, 0)]
    for d in dilations:
        for dy in (-d, 0, d):
            for dx in (-d, 0, d):
                if dy or dx:
                    offs.append((dy, dx))
    return np.array(offs, dtype=np.int64)


def _as_image(image):
    image = as_tensor(image, "image")
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3:
        raise ArgumentError(f"image must be channels x H x W, got {image.shape}")
    return image


def build_kernel(image, pixel, config=ParConfig()):
    """Kernel weights around one pixel.

    Returns ``(neighbors, weights)`` where ``neighbors`` is an (M, 2) array of
    in-bounds (row, col) coordinates and ``weights`` sums to 1.
    """
    image = _as_image(image)
    _, h, w = image.shape
    i, j = (int(v) for v in pixel)
    if not (0 <= i < h and 0 <= j < w):
        raise ArgumentError(f"pixel {pixel} outside {h} x {w} image")
    offs = neighbor_offsets(config.dilations)
    coords = offs + np.array([i, j])
    keep = (coords[:, 0] >= 0) & (coords[:, 0] < h) & (coords[:, 1] >= 0) & (coords[:, 1] < w)
    coords, offs = coords[keep], offs[keep]

    vals = image[:, coords[:, 0], coords[:, 1]]              # channels x M
    diff2 = np.sum((vals - image[:, i, j][:, None]) ** 2, axis=0)
    var_i = np.mean(np.var(vals, axis=1))
    dist = np.sqrt(np.sum(offs.astype(np.float64) ** 2, axis=1))
    var_l = np.var(dist)

    k_int = -diff2 / (config.c_I * (var_i + VAR_EPS))
    k_loc = -dist**2 / (config.c_L * (var_l + VAR_EPS))
    e_int = np.exp(k_int - k_int.max())
    e_loc = np.exp(k_loc - k_loc.max())
    weights = config.w_I * e_int / e_int.sum() + config.w_L * e_loc / e_loc.sum()
    return coords, weights


def _shift(x, dy, dx):
    """out[..., y, x] = x[..., y + dy, x + dx] where in bounds, else 0."""
    h, w = x.shape[-2:]
    out = np.zeros_like(x)
    if abs(dy) >= h or abs(dx) >= w:
        return out
    ys, yd = slice(max(dy, 0), h + min(dy, 0)), slice(max(-dy, 0), h + min(-dy, 0))
    xs, xd = slice(max(dx, 0), w + min(dx, 0)), slice(max(-dx, 0), w + min(-dx, 0))
    out[..., yd, xd] = x[..., ys, xs]
    return out


def pixel_kernels(image, config=ParConfig()):
    """Kernels for every pixel at once.

    Returns ``(offsets, weights)`` with ``weights`` of shape K x H x W; entries
    for out-of-bounds neighbours are exactly zero.
    """
    image = _as_image(image)
    _, h, w = image.shape
    offs = neighbor_offsets(config.dilations)
    ones = np.ones((h, w))
    valid = np.stack([_shift(ones, dy, dx) for dy, dx in offs]).astype(bool)
    nb = np.stack([_shift(image, dy, dx) for dy, dx in offs])  # K x ch x H x W
    count = valid.sum(axis=0)

    diff2 = np.sum((nb - image[None]) ** 2, axis=1)
    mean_nb = nb.sum(axis=0) / count
    var_i = np.mean(
        np.sum(np.where(valid[:, None], (nb - mean_nb[None]) ** 2, 0.0), axis=0) / count,
        axis=0,
    )
    dist = np.sqrt(np.sum(offs.astype(np.float64) ** 2, axis=1))[:, None, None] * valid
    mean_d = dist.sum(axis=0) / count
    var_l = np.sum(np.where(valid, (dist - mean_d) ** 2, 0.0), axis=0) / count

    k_int = -diff2 / (config.c_I * (var_i + VAR_EPS))
    k_loc = -(dist**2) / (config.c_L * (var_l + VAR_EPS))
    weights = config.w_I * _masked_softmax(k_int, valid) + config.w_L * _masked_softmax(
        k_loc, valid
    )
    return offs, weights


def _masked_softmax(logits, valid):
    logits = np.where(valid, logits, -np.inf)
    z = np.exp(logits - logits.max(axis=0, keepdims=True))
    return z / z.sum(axis=0, keepdims=True)


def refine(maps, image, config=ParConfig()):
    """Apply ``config.iterations`` rounds of kernel averaging to C x H x W maps.

    Each round reads only the previous round's buffer. The update is written
    as y + sum_k w_k (y_k - y), which leaves constant maps exactly fixed.
    """
    maps = as_tensor(maps, "maps")
    image = _as_image(image)
    if maps.ndim != 3 or maps.shape[1:] != image.shape[1:]:
        raise ArgumentError(
            f"maps {maps.shape} and image {image.shape} disagree on spatial size"
        )
    if config.iterations == 0:
        return maps.copy()
    offs, weights = pixel_kernels(image, config)
    out = maps.copy()
    for _ in range(config.iterations):
        delta = np.zeros_like(out)
        for k, (dy, dx) in enumerate(offs):
            if dy == 0 and dx == 0:
                continue
            # out-of-bounds weights are zero, so the shifted fill value is irrelevant
            delta += weights[k][None] * (_shift(out, dy, dx) - out)
        out = out + delta
    return out
