"""Command-line entry point.

Parameters resolve as built-in defaults, then the ``--config`` file, then
explicit flags. Every run writes ``manifest.json`` next to its outputs with
the resolved parameters.

Exit codes: 0 success, 1 argument or format error, 2 invariant violation.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import io as aio
from .affinity import AffinityStack, column_concentration, head_average, oversmoothing_score
from .cam import cam_from_features
from .errors import ArgumentError, InvariantError
from .labels import MODES, THRESHOLD_PRESETS, make_affinity_labels, make_segmentation_labels
from .loss import gradient_check
from .metrics import DEFAULT_SWEEP, miou, threshold_sweep
from .par import ParConfig
from .pipeline import run_demo, run_refine
from .reactivation import enhanced_distribution, layer_weight
from .scene import SceneSpec, ramp
from .tensor import check_distribution, normalized_entropy

GRADCHECK_TOL = 1e-5


def _floats(s):
    return tuple(float(x) for x in str(s).split(",") if x.strip())


def _ints(s):
    return tuple(int(x) for x in str(s).split(",") if x.strip())


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ArgumentError(f"not a boolean: {s!r}")


def _mode(s):
    if s not in MODES:
        raise ArgumentError(f"threshold_mode must be one of {MODES}, got {s!r}")
    return s


def _preset(s):
    key = str(s).strip().lower()
    if key not in THRESHOLD_PRESETS:
        raise ArgumentError(f"threshold_preset must be one of {sorted(THRESHOLD_PRESETS)}, got {s!r}")
    return key


def _profile(s):
    return None if str(s).strip().lower() in ("", "ramp", "default") else _floats(s)


# key -> (parser, default); config keys and flag names share these names
PARAMS = {
    "seed": (int, 0),
    "w_I": (float, 0.8),
    "w_L": (float, 0.2),
    "c_I": (float, 0.3),
    "c_L": (float, 0.01),
    "dilations": (_ints, (1, 2, 4, 8)),
    "iterations": (int, 10),
    "alpha_low": (float, 0.35),
    "alpha_high": (float, 0.55),
    "threshold_mode": (_mode, "reliable"),
    "threshold_preset": (_preset, None),
    "sweep": (_bool, False),
    "sweep_grid": (_floats, DEFAULT_SWEEP),
    "step_size": (float, 0.5),
    "steps": (int, 200),
    "supervise": (str, "all"),
    "pair_scaled": (_bool, True),
    "uniform_weights": (_bool, False),
    "sample_pairs": (int, 2048),
    "size": (int, 16),
    "height": (int, 16),
    "width": (int, 16),
    "classes": (int, 2),
    "layers": (int, 6),
    "heads": (int, 2),
    "collapse_profile": (_profile, None),
    "noise_level": (float, 0.1),
    "sinks": (int, 4),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_param(p, key, help=None):
    flag = "--" + key.replace("_", "-")
    if PARAMS[key][0] is _bool:
        p.add_argument(flag, dest=key, action="store_const", const=True, default=None, help=help)
    else:
        p.add_argument(flag, dest=key, default=None, help=help)


def build_parser():
    parser = _Parser(prog="aream", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, keys=()):
        p.add_argument("--config", help="flat key=value parameter file")
        p.add_argument("--out", default=".", help="output directory")
        for k in ("seed",) + tuple(keys):
            _add_param(p, k)
        return p

    par_keys = ("w_I", "w_L", "c_I", "c_L", "dilations", "iterations")
    lbl_keys = ("alpha_low", "alpha_high", "threshold_mode", "threshold_preset")
    scene_keys = ("height", "width", "classes", "layers", "heads",
                  "collapse_profile", "noise_level", "sinks")

    p = common(sub.add_parser("diagnose", help="per-layer over-smoothing diagnostics"),
               ("sample_pairs",))
    p.add_argument("--affinity", required=True)
    p.add_argument("--features")
    p.add_argument("--classifier")
    p.add_argument("--present", help="comma-separated 0/1 flags per class")

    p = common(sub.add_parser("refine", help="CAM -> weighted fusion -> PAR -> labels"),
               par_keys + lbl_keys + ("uniform_weights",))
    for name in ("features", "classifier", "affinity", "image"):
        p.add_argument("--" + name, required=True)
    p.add_argument("--present")

    p = common(sub.add_parser("labels", help="segmentation and affinity labels from refined maps"),
               lbl_keys)
    p.add_argument("--refined", required=True)

    common(sub.add_parser("gradcheck", help="finite-difference check of the affinity loss"),
           ("size",))

    common(sub.add_parser("demo", help="synthetic scene, full pipeline, affinity optimisation"),
           scene_keys + par_keys + lbl_keys
           + ("step_size", "steps", "supervise", "pair_scaled", "uniform_weights", "sweep_grid"))

    p = common(sub.add_parser("eval", help="mIoU of labels, or best-threshold mIoU of maps"),
               ("sweep_grid", "sweep"))
    p.add_argument("--gt", required=True)
    p.add_argument("--pred")
    p.add_argument("--refined")
    p.add_argument("--classes", dest="num_classes", type=int)
    return parser


def resolve_params(args, keys):
    """Defaults < config file < flags, restricted to ``keys``."""
    file_params = aio.read_config(args.config) if getattr(args, "config", None) else {}
    out, explicit = {}, set()
    for key in keys:
        parse, default = PARAMS[key]
        flag = getattr(args, key, None)
        if flag is not None:
            value = parse(flag)
        elif key in file_params:
            value = parse(file_params[key])
        else:
            value = default
        if flag is not None or key in file_params:
            explicit.add(key)
        out[key] = value
    # a preset only fills thresholds that were not set explicitly
    if out.get("threshold_preset") is not None:
        low, high = THRESHOLD_PRESETS[out["threshold_preset"]]
        for key, v in (("alpha_low", low), ("alpha_high", high)):
            if key in out and key not in explicit:
                out[key] = v
    return out


def _snapshot(params):
    snap = {}
    for k, v in params.items():
        if isinstance(v, tuple):
            v = list(v)
        snap[k] = v
    return snap


def write_manifest(out, command, args, params, inputs):
    manifest = {
        "subcommand": command,
        "config": getattr(args, "config", None),
        "inputs": inputs,
        "out": out,
        "params": _snapshot(params),
    }
    with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    aio.write_config(os.path.join(out, "params.cfg"),
                     {k: v for k, v in params.items() if v is not None})


def _par_config(params):
    return ParConfig(w_I=params["w_I"], w_L=params["w_L"], c_I=params["c_I"],
                     c_L=params["c_L"], dilations=params["dilations"],
                     iterations=params["iterations"])


def _present(arg, num_classes):
    if arg is None:
        return np.ones(num_classes, dtype=bool)
    flags = [bool(int(x)) for x in arg.split(",")]
    if len(flags) != num_classes:
        raise ArgumentError(f"--present has {len(flags)} entries for {num_classes} classes")
    return np.array(flags)


def _load_stack(path):
    logits = aio.read_tensor(path)
    if logits.ndim == 3:
        logits = logits[None]
    try:
        return AffinityStack(logits)
    except ArgumentError as e:
        raise aio.TensorFormatError(str(e), path) from None


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return repr(float(x))


def cmd_diagnose(args):
    params = resolve_params(args, ("seed", "sample_pairs"))
    stack = _load_stack(args.affinity)
    cams = None
    if args.features or args.classifier:
        if not (args.features and args.classifier):
            raise ArgumentError("--features and --classifier must be given together")
        clf = aio.read_tensor(args.classifier)
        cams = cam_from_features(aio.read_tensor(args.features), clf,
                                 _present(args.present, clf.shape[1]))
    rows = []
    for l in range(stack.num_layers):
        aff = head_average(stack.logits[l])
        score = oversmoothing_score(aff, params["sample_pairs"], params["seed"])
        if cams is not None:
            w = layer_weight(enhanced_distribution(cams, aff))
        else:
            # without a CAM, fall back to the distribution of received attention
            w = 1.0 - normalized_entropy(check_distribution(aff.sum(axis=0) / aff.shape[0]))
        rows.append([l, _fmt(score), _fmt(column_concentration(aff)), _fmt(w)])
    out = aio.ensure_dir(args.out)
    header = ["layer", "oversmoothing_score", "column_concentration", "raw_entropy_weight"]
    _write_csv(os.path.join(out, "diagnose.csv"), header, rows)
    write_manifest(out, "diagnose", args, params,
                   {"affinity": args.affinity, "features": args.features,
                    "classifier": args.classifier})
    print(",".join(header))
    for r in rows:
        print(",".join(str(x) for x in r))
    return 0


def cmd_refine(args):
    keys = ("seed", "w_I", "w_L", "c_I", "c_L", "dilations", "iterations",
            "alpha_low", "alpha_high", "threshold_mode", "threshold_preset", "uniform_weights")
    params = resolve_params(args, keys)
    features = aio.read_tensor(args.features)
    classifier = aio.read_tensor(args.classifier)
    stack = _load_stack(args.affinity)
    image = aio.read_tensor(args.image)
    if classifier.ndim != 2:
        raise ArgumentError(f"classifier must be D x C, got {classifier.shape}")
    res = run_refine(features, classifier, stack, image,
                     _present(args.present, classifier.shape[1]), _par_config(params),
                     params["alpha_low"], params["alpha_high"], params["threshold_mode"],
                     params["uniform_weights"])
    out = aio.ensure_dir(args.out)
    aio.write_tensor(os.path.join(out, "fused.atsr"), res.fused)
    aio.write_tensor(os.path.join(out, "refined.atsr"), res.refined)
    aio.write_pgm(os.path.join(out, "labels.pgm"), res.labels)
    _write_weights(os.path.join(out, "weights.csv"), res.weights)
    write_manifest(out, "refine", args, params,
                   {"features": args.features, "classifier": args.classifier,
                    "affinity": args.affinity, "image": args.image})
    print(f"labels written to {os.path.join(out, 'labels.pgm')}")
    return 0


def _write_weights(path, weights):
    _write_csv(path, ["layer", "raw", "fuse", "supervise"],
               [[l, _fmt(r), _fmt(f), _fmt(s)] for l, (r, f, s)
                in enumerate(zip(weights.raw, weights.fuse, weights.supervise))])


def cmd_labels(args):
    params = resolve_params(args, ("seed", "alpha_low", "alpha_high", "threshold_mode",
                                   "threshold_preset"))
    refined = aio.read_tensor(args.refined)
    seg = make_segmentation_labels(refined, params["alpha_low"], params["alpha_high"],
                                   params["threshold_mode"])
    out = aio.ensure_dir(args.out)
    aio.write_pgm(os.path.join(out, "labels.pgm"), seg)
    aio.write_tensor(os.path.join(out, "affinity_labels.atsr"), make_affinity_labels(seg))
    write_manifest(out, "labels", args, params, {"refined": args.refined})
    return 0


def cmd_gradcheck(args):
    params = resolve_params(args, ("seed", "size"))
    err = gradient_check(params["seed"], params["size"])
    print(f"seed={params['seed']} size={params['size']} max_relative_error={err:.3e}")
    if not err < GRADCHECK_TOL:
        raise InvariantError(f"gradient check failed: {err:.3e} >= {GRADCHECK_TOL:g}")
    return 0


def cmd_demo(args):
    keys = ("seed", "height", "width", "classes", "layers", "heads", "collapse_profile",
            "noise_level", "sinks", "w_I", "w_L", "c_I", "c_L", "dilations", "iterations",
            "alpha_low", "alpha_high", "threshold_mode", "threshold_preset", "step_size",
            "steps", "supervise", "pair_scaled", "uniform_weights", "sweep_grid")
    params = resolve_params(args, keys)
    if params["collapse_profile"] is None:
        params["collapse_profile"] = ramp(params["layers"])
    spec = SceneSpec(seed=params["seed"], height=params["height"], width=params["width"],
                     classes=params["classes"], layers=params["layers"], heads=params["heads"],
                     collapse_profile=params["collapse_profile"],
                     noise_level=params["noise_level"], sinks=params["sinks"])
    r = run_demo(spec, _par_config(params), params["alpha_low"], params["alpha_high"],
                 params["threshold_mode"], params["step_size"], params["steps"],
                 params["supervise"], params["uniform_weights"], params["sweep_grid"],
                 params["pair_scaled"])
    out = aio.ensure_dir(args.out)
    sc = r.scene
    for name, arr in (("features", sc.features), ("classifier", sc.classifier),
                      ("image", sc.image), ("affinity", sc.affinity.logits),
                      ("affinity_optimized", r.optimized.logits),
                      ("fused", r.refine.fused), ("refined", r.refine.refined)):
        aio.write_tensor(os.path.join(out, f"{name}.atsr"), arr)
    aio.write_tensor(os.path.join(out, "affinity_labels.atsr"), r.affinity_labels)
    aio.write_pgm(os.path.join(out, "gt.pgm"), sc.gt)
    aio.write_pgm(os.path.join(out, "labels.pgm"), r.refine.labels)
    _write_weights(os.path.join(out, "weights.csv"), r.weights)
    _write_csv(os.path.join(out, "loss_trace.csv"), ["step", "loss"],
               [[i, _fmt(v)] for i, v in enumerate(r.trace)])
    _write_csv(os.path.join(out, "layer_miou.csv"), ["layer", "pre_miou", "post_miou"],
               [[l, _fmt(a), _fmt(b)] for l, (a, b)
                in enumerate(zip(r.pre_layer_miou, r.post_layer_miou))])
    summary = {
        "pre_loss": r.pre_loss,
        "post_loss": r.post_loss,
        "pre_miou": r.pre_miou,
        "post_miou": r.post_miou,
        "label_miou": miou(r.refine.labels, sc.gt, spec.classes).miou,
        "steps": params["steps"],
    }
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    write_manifest(out, "demo", args, params, {})
    print(f"{'layer':>5} {'pre mIoU':>9} {'post mIoU':>9}")
    for l, (a, b) in enumerate(zip(r.pre_layer_miou, r.post_layer_miou)):
        print(f"{l:>5} {a:>9.4f} {b:>9.4f}")
    print(f"{'avg':>5} {r.pre_miou:>9.4f} {r.post_miou:>9.4f}")
    print(f"loss {r.pre_loss:.6f} -> {r.post_loss:.6f}")
    return 0


def cmd_eval(args):
    params = resolve_params(args, ("seed", "sweep_grid", "sweep"))
    gt = aio.read_pgm(args.gt)
    if (args.pred is None) == (args.refined is None):
        raise ArgumentError("give exactly one of --pred or --refined")
    if args.refined is not None:
        refined = aio.read_tensor(args.refined)
        if refined.ndim != 3 or refined.shape[1:] != gt.shape:
            raise ArgumentError(f"refined maps {refined.shape} do not match gt {gt.shape}")
        thresholds = params["sweep_grid"] if params["sweep"] else (0.5,)
        report = threshold_sweep(refined, gt, thresholds, args.num_classes)
    else:
        pred = aio.read_pgm(args.pred)
        report = miou(pred, gt, args.num_classes)
    out = aio.ensure_dir(args.out)
    with open(os.path.join(out, "report.csv"), "w", encoding="utf-8") as f:
        f.write(report.to_csv())
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as f:
        f.write(report.to_json())
    write_manifest(out, "eval", args, params,
                   {"gt": args.gt, "pred": args.pred, "refined": args.refined})
    line = f"miou={report.miou:.4f}"
    if report.best_threshold is not None:
        line += f" best_threshold={report.best_threshold}"
    print(line)
    return 0


COMMANDS = {
    "diagnose": cmd_diagnose,
    "refine": cmd_refine,
    "labels": cmd_labels,
    "gradcheck": cmd_gradcheck,
    "demo": cmd_demo,
    "eval": cmd_eval,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InvariantError as e:
        print(f"aream {args.command}: invariant violated: {e}", file=sys.stderr)
        return 2
    except (ArgumentError, aio.TensorFormatError, aio.PgmFormatError, ValueError, OSError) as e:
        print(f"aream {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
