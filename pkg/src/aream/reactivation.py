"""Entropy-weighted re-activation of CAMs through per-layer affinities.

Each layer's affinity propagates the CAM; the sharper the resulting
distribution over positions, the more that layer is trusted when fusing.
The complementary weights (1 - raw) drive supervision of the layers the
forward pass distrusts.
"""

from dataclasses import dataclass

import numpy as np

from .cam import CamStack
from .errors import ArgumentError
from .tensor import matmul, minmax_normalize, normalized_entropy, softmax


@dataclass(frozen=True)
class LayerWeights:
    raw: np.ndarray        # 1 - normalized entropy, per layer
    fuse: np.ndarray       # raw / sum(raw), sums to 1
    supervise: np.ndarray  # 1 - raw

    def __len__(self):
        return len(self.fuse)

    @classmethod
    def uniform(cls, num_layers):
        return cls(
            raw=np.zeros(num_layers),
            fuse=np.full(num_layers, 1.0 / num_layers),
            supervise=np.ones(num_layers),
        )

    def masked(self, mask):
        """Copy with supervision switched off where ``mask`` is False."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self.supervise.shape:
            raise ArgumentError(
                f"mask length {mask.size} != number of layers {self.supervise.size}"
            )
        return LayerWeights(self.raw, self.fuse, np.where(mask, self.supervise, 0.0))


def _check_tokens(cams, aff):
    aff = np.asarray(aff, dtype=np.float64)
    n = int(np.prod(cams.spatial_shape))
    if aff.shape != (n, n):
        raise ArgumentError(
            f"affinity shape {aff.shape} does not match {cams.spatial_shape} CAM ({n} tokens)"
        )
    return aff


def propagate(cams, aff):
    """Raw propagation, flatten(M_c) @ aff.T per present channel; C x H x W."""
    aff = _check_tokens(cams, aff)
    out = np.zeros_like(cams.maps)
    if cams.present.any():
        out[cams.present] = matmul(cams.flat(), aff.T).reshape(
            (-1,) + cams.spatial_shape
        )
    return out


def _renormalized(cams, raw):
    maps = np.zeros_like(raw)
    for c in np.flatnonzero(cams.present):
        maps[c] = minmax_normalize(raw[c])
    return CamStack(maps=maps, present=cams.present)


def enhanced_distribution(cams, aff):
    """Softmax over all positions of the class-summed propagated CAM, H x W."""
    summed = propagate(cams, aff).sum(axis=0)
    return softmax(summed.ravel()).reshape(cams.spatial_shape)


def layer_weight(p_hat):
    return 1.0 - normalized_entropy(np.ravel(p_hat))


def propagate_single(cams, aff):
    return _renormalized(cams, propagate(cams, aff))


def fuse_layers(cams, layers, weights):
    fuse = weights.fuse if isinstance(weights, LayerWeights) else np.asarray(weights)
    if len(fuse) != len(layers):
        raise ArgumentError(f"{len(fuse)} fuse weights for {len(layers)} layers")
    if len(layers) == 0:
        raise ArgumentError("no layers to fuse")
    combined = np.zeros_like(np.asarray(layers[0], dtype=np.float64))
    for w, a in zip(fuse, layers):
        combined = combined + w * np.asarray(a, dtype=np.float64)
    return propagate_single(cams, combined)


def compute_layer_weights(cams, layers):
    if len(layers) == 0:
        raise ArgumentError("need at least one layer")
    raw = np.array([layer_weight(enhanced_distribution(cams, a)) for a in layers])
    return weights_from_raw(raw)


def weights_from_raw(raw):
    """Normalised fusion weights (uniform if all zero) and 1 - raw supervision weights."""
    raw = np.asarray(raw, dtype=np.float64)
    total = raw.sum()
    if total > 0:
        fuse = raw / total
    else:
        fuse = np.full(len(raw), 1.0 / len(raw))
    return LayerWeights(raw=raw, fuse=fuse, supervise=1.0 - raw)
