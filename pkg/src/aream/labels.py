"""Reliable segmentation labels and pairwise affinity labels."""

import numpy as np

from .errors import ArgumentError
from .tensor import as_tensor

IGNORE = 255
MODES = ("reliable", "literal")
# (alpha_low, alpha_high) pairs for the two backbone configurations
THRESHOLD_PRESETS = {"conformer": (0.35, 0.55), "mctformer": (0.15, 0.35)}


def make_segmentation_labels(refined, alpha_low=0.35, alpha_high=0.55, mode="reliable"):
    """Threshold C x H x W scores into an H x W label map.

    Foreground classes are numbered 1..C (channel index + 1), 0 is background
    and 255 marks uncertain pixels.

    ``reliable`` keeps foreground only where the top score reaches
    ``alpha_high``, background where it is at most ``alpha_low``, and ignores
    the band in between. ``literal`` evaluates the branches in the order
    "argmax if max > low, else 0 if max < high, else 255", under which the
    ignore branch cannot fire when low < high.
    """
    refined = as_tensor(refined, "refined maps")
    if refined.ndim != 3 or refined.shape[0] < 1:
        raise ArgumentError(f"refined maps must be C x H x W, got {refined.shape}")
    if not 0.0 < alpha_low < alpha_high < 1.0:
        raise ArgumentError(
            f"thresholds must satisfy 0 < low < high < 1, got {alpha_low}, {alpha_high}"
        )
    if mode not in MODES:
        raise ArgumentError(f"unknown threshold mode {mode!r}")
    top = refined.max(axis=0)
    fg = refined.argmax(axis=0).astype(np.int64) + 1
    out = np.full(top.shape, IGNORE, dtype=np.int64)
    if mode == "reliable":
        out[top <= alpha_low] = 0
        sel = top >= alpha_high
        out[sel] = fg[sel]
    else:
        first = top > alpha_low
        second = ~first & (top < alpha_high)
        out[first] = fg[first]
        out[second] = 0
    return out.astype(np.uint8)


def make_affinity_labels(seg):
    """N x N pair labels from an H x W label map: 1 same, 0 different, 255 ignore."""
    flat = np.asarray(seg).ravel().astype(np.int64)
    same = flat[:, None] == flat[None, :]
    out = np.where(same, 1, 0).astype(np.uint8)
    ignored = flat == IGNORE
    out[ignored, :] = IGNORE
    out[:, ignored] = IGNORE
    return out
