"""Seeded synthetic scenes with a planted over-smoothing failure mode.

A scene holds rectangular objects on a background, a CAM-producing feature
map that only covers each object's discriminative core (plus some salient
background clutter), and an L-layer attention stack. Shallow layers attend
locally and within objects. Deeper layers are blended, per
``collapse_profile``, towards a shared distribution over a few "sink"
background tokens, so their rows converge onto the same columns.
"""

from dataclasses import dataclass, field

import numpy as np

from .affinity import AffinityStack
from .cam import compute_raw_cam
from .errors import ArgumentError
from .tensor import softmax


def ramp(num_layers, top=0.95):
    return tuple(float(v) for v in np.linspace(0.0, top, num_layers))


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    height: int = 16
    width: int = 16
    classes: int = 2
    layers: int = 6
    heads: int = 2
    collapse_profile: tuple = None  # defaults to a 0 -> 0.95 ramp
    noise_level: float = 0.1
    sinks: int = 4

    def __post_init__(self):
        if self.height < 4 or self.width < 4:
            raise ArgumentError(f"scene must be at least 4 x 4, got {self.height} x {self.width}")
        if self.classes < 1 or self.layers < 1 or self.heads < 1 or self.sinks < 1:
            raise ArgumentError("classes, layers, heads and sinks must be >= 1")
        if self.noise_level < 0:
            raise ArgumentError("noise_level must be >= 0")
        profile = self.collapse_profile
        if profile is None:
            profile = ramp(self.layers)
        profile = tuple(float(v) for v in profile)
        if len(profile) != self.layers:
            raise ArgumentError(f"collapse_profile has {len(profile)} entries for {self.layers} layers")
        if any(not 0.0 <= v <= 1.0 for v in profile):
            raise ArgumentError("collapse_profile entries must lie in [0, 1]")
        if any(b < a for a, b in zip(profile, profile[1:])):
            raise ArgumentError("collapse_profile must be non-decreasing")
        object.__setattr__(self, "collapse_profile", profile)


@dataclass
class Scene:
    spec: SceneSpec
    features: np.ndarray     # D x H x W
    classifier: np.ndarray   # D x C
    affinity: AffinityStack
    gt: np.ndarray           # H x W uint8, 0 = background, 1..C objects
    image: np.ndarray        # 1 x H x W intensities
    present: np.ndarray = field(default=None)
    sinks: np.ndarray = field(default=None)


def _place_objects(rng, h, w, classes):
    gt = np.zeros((h, w), dtype=np.uint8)
    boxes = []
    for c in range(1, classes + 1):
        for attempt in range(200):
            bh = int(rng.integers(max(2, h // 4), max(3, h // 2) + 1))
            bw = int(rng.integers(max(2, w // 4), max(3, w // 2) + 1))
            y0 = int(rng.integers(0, h - bh + 1))
            x0 = int(rng.integers(0, w - bw + 1))
            # keep a one-pixel gap to earlier objects when possible
            ys, xs = slice(max(y0 - 1, 0), y0 + bh + 1), slice(max(x0 - 1, 0), x0 + bw + 1)
            if attempt == 199 or not gt[ys, xs].any():
                break
        gt[y0:y0 + bh, x0:x0 + bw] = c
        boxes.append((y0, x0, bh, bw))
    return gt, boxes


def _blob(yy, xx, cy, cx, sigma):
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))


def generate_scene(spec):
    rng = np.random.default_rng(spec.seed)
    h, w, C = spec.height, spec.width, spec.classes
    n = h * w
    gt, boxes = _place_objects(rng, h, w, C)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    bg = gt == 0

    image = np.full((h, w), 0.2)
    for c in range(1, C + 1):
        image[gt == c] = 0.45 + 0.45 * c / C
    image = image + rng.normal(0.0, 0.02 + 0.1 * spec.noise_level, size=(h, w))
    image = image[None]

    # class channels: discriminative core + background clutter; last channel is shared texture
    feats = np.zeros((C + 1, h, w))
    for c, (y0, x0, bh, bw) in enumerate(boxes):
        cy = y0 + (bh - 1) / 2 + rng.uniform(-0.25, 0.25) * bh
        cx = x0 + (bw - 1) / 2 + rng.uniform(-0.25, 0.25) * bw
        feats[c] = _blob(yy, xx, cy, cx, 0.4 * min(bh, bw))
        bg_idx = np.flatnonzero(bg.ravel())
        for p in rng.choice(bg_idx, size=min(2, bg_idx.size), replace=False):
            py, px = divmod(int(p), w)
            feats[c] += rng.uniform(0.4, 0.8) * _blob(yy, xx, py, px, 1.0)
    feats[C] = np.abs(rng.normal(0.0, 1.0, size=(h, w)))
    classifier = np.zeros((C + 1, C))
    classifier[:C, :C] = np.eye(C)
    classifier[C, :] = spec.noise_level

    # salient background tokens act as attention sinks in collapsed layers
    salience = compute_raw_cam(feats, classifier, np.ones(C, dtype=bool)).sum(axis=0).ravel()
    bg_flat = np.flatnonzero(bg.ravel())
    if bg_flat.size == 0:
        bg_flat = np.arange(n)
    k = min(spec.sinks, bg_flat.size)
    sinks = bg_flat[np.argsort(-salience[bg_flat], kind="stable")[:k]]

    coords = np.stack([yy.ravel(), xx.ravel()], axis=1)
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=-1)
    flat_gt = gt.ravel()
    same_obj = (flat_gt[:, None] == flat_gt[None, :]) & (flat_gt[:, None] > 0)
    base = 2.0 * np.eye(n) + 4.0 * same_obj + 2.0 * np.exp(-d2 / (2.0 * 1.5**2))

    shared = np.zeros(n)
    shared[sinks] = rng.dirichlet(np.full(k, 2.0))
    row_mix = np.zeros((n, n))
    row_mix[:, sinks] = rng.dirichlet(np.full(k, 0.5), size=n)
    collapsed = 0.5 * shared[None, :] + 0.5 * row_mix

    logits = np.empty((spec.layers, spec.heads, n, n))
    for l, gamma in enumerate(spec.collapse_profile):
        for hd in range(spec.heads):
            s = softmax(base + 0.5 * rng.normal(size=(n, n)), axis=-1)
            p = (1.0 - gamma) * s + gamma * collapsed
            lp = np.log(np.maximum(p, 1e-300))
            logits[l, hd] = lp - lp.mean(axis=1, keepdims=True)

    return Scene(
        spec=spec,
        features=feats,
        classifier=classifier,
        affinity=AffinityStack(logits, d_k=1),
        gt=gt,
        image=image,
        present=np.ones(C, dtype=bool),
        sinks=sinks,
    )
