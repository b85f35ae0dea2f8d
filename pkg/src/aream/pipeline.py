"""End-to-end composition: CAM -> weighted fusion -> PAR -> labels -> affinity optimisation."""

from dataclasses import dataclass

import numpy as np

from .affinity import AffinityStack, layer_average
from .cam import cam_from_features
from .errors import ArgumentError
from .labels import make_affinity_labels, make_segmentation_labels
from .loss import optimize_logits, stack_loss
from .metrics import DEFAULT_SWEEP, threshold_sweep
from .par import ParConfig, refine
from .reactivation import LayerWeights, compute_layer_weights, fuse_layers, propagate_single
from .scene import generate_scene


@dataclass
class RefineResult:
    cams: object
    weights: LayerWeights
    fused: np.ndarray
    refined: np.ndarray
    labels: np.ndarray


def supervise_mask(spec, num_layers):
    """``all``, ``deep`` (upper half of the stack), ``none`` or comma-separated indices."""
    if isinstance(spec, str):
        key = spec.strip().lower()
        if key == "all":
            return np.ones(num_layers, dtype=bool)
        if key == "deep":
            return np.arange(num_layers) >= num_layers // 2
        if key in ("none", ""):
            return np.zeros(num_layers, dtype=bool)
        spec = [int(s) for s in key.split(",")]
    mask = np.zeros(num_layers, dtype=bool)
    for i in spec:
        if not 0 <= int(i) < num_layers:
            raise ArgumentError(f"supervised layer {i} outside 0..{num_layers - 1}")
        mask[int(i)] = True
    return mask


def run_refine(features, classifier, stack, image, present=None, par=ParConfig(),
               alpha_low=0.35, alpha_high=0.55, mode="reliable", uniform_weights=False):
    features = np.asarray(features, dtype=np.float64)
    if present is None:
        present = np.ones(np.shape(classifier)[1], dtype=bool)
    cams = cam_from_features(features, classifier, present)
    n = int(np.prod(cams.spatial_shape))
    if stack.num_tokens != n:
        raise ArgumentError(
            f"affinity has {stack.num_tokens} tokens but the feature map is "
            f"{cams.spatial_shape[0]} x {cams.spatial_shape[1]} = {n}"
        )
    layers = stack.layer_probs()
    if uniform_weights:
        weights = LayerWeights.uniform(len(layers))
    else:
        weights = compute_layer_weights(cams, layers)
    fused = fuse_layers(cams, layers, weights).maps
    refined = refine(fused, image, par)
    labels = make_segmentation_labels(refined, alpha_low, alpha_high, mode)
    return RefineResult(cams, weights, fused, refined, labels)


def aggregated_report(cams, stack, gt, thresholds=DEFAULT_SWEEP):
    """Best-threshold mIoU of CAMs propagated through the layer-averaged affinity."""
    avg = layer_average(stack.layer_probs())
    return threshold_sweep(propagate_single(cams, avg).maps, gt, thresholds)


def per_layer_miou(cams, stack, gt, thresholds=DEFAULT_SWEEP):
    return [
        threshold_sweep(propagate_single(cams, a).maps, gt, thresholds).miou
        for a in stack.layer_probs()
    ]


@dataclass
class DemoResult:
    scene: object
    refine: RefineResult
    affinity_labels: np.ndarray
    weights: LayerWeights       # supervision already masked
    optimized: AffinityStack
    trace: list
    pre_layer_miou: list
    post_layer_miou: list
    pre_miou: float
    post_miou: float

    @property
    def pre_loss(self):
        return self.trace[0]

    @property
    def post_loss(self):
        return self.trace[-1]


def run_demo(scene_spec, par=ParConfig(), alpha_low=0.35, alpha_high=0.55,
             mode="reliable", step_size=0.5, steps=200, supervise="all",
             uniform_weights=False, thresholds=DEFAULT_SWEEP, pair_scaled=True):
    scene = generate_scene(scene_spec)
    res = run_refine(scene.features, scene.classifier, scene.affinity, scene.image,
                     scene.present, par, alpha_low, alpha_high, mode, uniform_weights)
    aff_labels = make_affinity_labels(res.labels)
    weights = res.weights.masked(supervise_mask(supervise, scene.affinity.num_layers))
    optimized, trace = optimize_logits(scene.affinity, aff_labels, weights,
                                       step_size, steps, pair_scaled=pair_scaled)
    return DemoResult(
        scene=scene,
        refine=res,
        affinity_labels=aff_labels,
        weights=weights,
        optimized=optimized,
        trace=trace,
        pre_layer_miou=per_layer_miou(res.cams, scene.affinity, scene.gt, thresholds),
        post_layer_miou=per_layer_miou(res.cams, optimized, scene.gt, thresholds),
        pre_miou=aggregated_report(res.cams, scene.affinity, scene.gt, thresholds).miou,
        post_miou=aggregated_report(res.cams, optimized, scene.gt, thresholds).miou,
    )


def demo_loss(result):
    """Recompute the aggregated loss of the optimised stack from scratch."""
    return stack_loss(result.optimized, result.affinity_labels, result.weights).total
