"""Class activation maps from a feature map and linear classifier weights."""

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .tensor import as_tensor, minmax_normalize


@dataclass(frozen=True)
class CamStack:
    maps: np.ndarray     # C x H x W, values in [0, 1]
    present: np.ndarray  # bool, length C

    @property
    def num_classes(self):
        return self.maps.shape[0]

    @property
    def spatial_shape(self):
        return self.maps.shape[1:]

    def flat(self):
        """Present channels flattened to (n_present, H*W)."""
        return self.maps[self.present].reshape(int(self.present.sum()), -1)


def _present_mask(present, num_classes):
    present = np.asarray(present, dtype=bool).ravel()
    if present.shape[0] != num_classes:
        raise ArgumentError(
            f"present has length {present.shape[0]}, expected {num_classes}"
        )
    return present


def compute_raw_cam(features, classifier, present):
    """ReLU of the classifier projection, with absent classes zeroed.

    ``features`` is D x H x W and ``classifier`` is D x C.
    """
    features = as_tensor(features, "features")
    classifier = as_tensor(classifier, "classifier")
    if features.ndim != 3 or classifier.ndim != 2:
        raise ArgumentError(
            f"expected features D x H x W and classifier D x C, got "
            f"{features.shape} and {classifier.shape}"
        )
    if features.shape[0] != classifier.shape[0]:
        raise ArgumentError(
            f"feature dim {features.shape[0]} != classifier dim {classifier.shape[0]}"
        )
    present = _present_mask(present, classifier.shape[1])
    if not present.any():
        raise ArgumentError("at least one class must be present")
    raw = np.einsum("dc,dhw->chw", classifier, features, optimize=False)
    raw = np.maximum(raw, 0.0)
    raw[~present] = 0.0
    return raw


def normalize_cam(raw, present):
    raw = as_tensor(raw, "raw cam")
    if raw.ndim != 3:
        raise ArgumentError(f"raw cam must be C x H x W, got {raw.shape}")
    present = _present_mask(present, raw.shape[0])
    maps = np.zeros_like(raw)
    for c in np.flatnonzero(present):
        maps[c] = minmax_normalize(raw[c])
    return CamStack(maps=maps, present=present)


def cam_from_features(features, classifier, present):
    return normalize_cam(compute_raw_cam(features, classifier, present), present)
