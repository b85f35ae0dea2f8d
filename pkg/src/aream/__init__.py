"""Class activation map re-activation through entropy-weighted attention affinities."""

from .affinity import (
    AffinityStack,
    build_affinity_logits,
    head_average,
    hellinger,
    layer_average,
    oversmoothing_score,
)
from .cam import CamStack, compute_raw_cam, normalize_cam
from .errors import ArgumentError, InvariantError
from .labels import make_affinity_labels, make_segmentation_labels
from .loss import LossReport, affinity_loss, aggregate_loss, optimize_logits
from .metrics import IoUReport, miou, threshold_sweep
from .par import ParConfig, build_kernel, refine
from .reactivation import (
    LayerWeights,
    compute_layer_weights,
    enhanced_distribution,
    fuse_layers,
    layer_weight,
    propagate_single,
)
from .scene import SceneSpec, generate_scene

__version__ = "0.1.0"
