# # Copyright (c) 2024 SemanticVoxels
# # SPDX-License-Identifier: MIT
# #
# # SemanticVoxels 3D pedestrian detection
# # LiDAR-camera fusion with semantic voxel features

"""Command-line interface for SemanticVoxels."""

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path

import pandas as pd
from pydantic import ValidationError

from .config.loader import load_config, validate_config
from .config.models import Config, LoggingConfig, RuntimeConfig
from .core.errors import SemanticVoxelsError, ShapeMismatch
from .core.logging import get_logger, setup_logging
from .data.formats import (
    atomic_write_text,
    read_checkpoint,
    write_checkpoint,
    write_named_arrays,
    write_painted,
)
from .data.kitti import PEDESTRIAN, read_labels, write_labels
from .data.scene import LABEL_FILE, SceneBundle, list_scenes, read_scene, write_scene
from .data.synth import SynthSceneSpec, synth_scene
from .encoders.painting import paint
from .evaluation.kitti_eval import EvalReport, evaluate
from .evaluation.plots import plot_pr_curves
from .evaluation.postprocess import Detection
from .network.weights import FUSION_SCHEMES, NetworkWeights, init_weights
from .pipeline import Detector, detection_lines
from .training.gradcheck import run_gradcheck
from .training.overfit import overfit_head, overfit_scene_spec

logger = get_logger(__name__)

DETECTION_SUFFIX = ".txt"


def _with_scheme(config: Config, scheme: str | None) -> Config:
    if scheme is None:
        return config
    backbone = config.backbone.model_copy(update={"fusion_scheme": scheme})
    return config.model_copy(update={"backbone": backbone})


def _load_weights(args: argparse.Namespace, config: Config) -> NetworkWeights:
    """Checkpoint from --weights, or seeded random weights for the configured scheme."""
    if getattr(args, "weights", None):
        weights = read_checkpoint(args.weights, config)
        if args.scheme and weights.scheme != args.scheme:
            raise ShapeMismatch(
                f"Checkpoint {args.weights} holds {weights.scheme} weights, not {args.scheme}"
            )
        return weights
    return init_weights(config, config.backbone.fusion_scheme, seed=args.weights_seed)


def _synth_spec(args: argparse.Namespace, seed: int) -> SynthSceneSpec:
    return SynthSceneSpec(
        seed=seed,
        num_pedestrians=args.peds,
        num_poles=args.poles,
        num_clutter=args.clutter,
        ground_points=args.ground,
        noise=args.noise,
        fidelity=args.fidelity,
        x_range=tuple(args.x_range),
        y_range=tuple(args.y_range),
    )


def cmd_synth(args: argparse.Namespace, config: Config) -> int:
    out = Path(args.out)
    for offset in range(args.count):
        scene = synth_scene(_synth_spec(args, args.seed + offset))
        target = out if args.count == 1 else out / scene.frame_id
        write_scene(scene, target)
    print(f"Wrote {args.count} scene(s) to {out}")
    return 0


def cmd_paint(args: argparse.Namespace, config: Config) -> int:
    scene = read_scene(args.scene)
    painted = paint(scene.cloud, scene.scores, scene.calib)
    write_painted(painted, args.out)
    print(f"Painted {len(painted)} points of frame {scene.frame_id} -> {args.out}")
    return 0


def cmd_init_weights(args: argparse.Namespace, config: Config) -> int:
    weights = init_weights(config, config.backbone.fusion_scheme, seed=args.seed)
    write_checkpoint(weights, args.out)
    print(f"Wrote {weights.scheme} weights ({len(weights.tensors)} tensors) to {args.out}")
    return 0


def cmd_encode(args: argparse.Namespace, config: Config) -> int:
    scene = read_scene(args.scene)
    detector = Detector(config, _load_weights(args, config))
    encoded = detector.encode(detector.paint(scene))
    arrays = {"geometric": encoded.geometric.values}
    if encoded.semantic is not None:
        arrays["semantic"] = encoded.semantic.values
    arrays["head_input"] = detector.head_input(encoded).values
    write_named_arrays(arrays, args.out)
    shapes = ", ".join(f"{name} {tuple(value.shape)}" for name, value in arrays.items())
    print(f"Encoded frame {scene.frame_id} ({detector.scheme}): {shapes} -> {args.out}")
    return 0


def cmd_forward(args: argparse.Namespace, config: Config) -> int:
    scene_dirs = list_scenes(args.scene)
    detector = Detector(config, _load_weights(args, config))
    scenes = [read_scene(d) for d in scene_dirs]
    results = detector.detect_batch(scenes, config.runtime.effective_threads())

    out = Path(args.out)
    single_file = len(scenes) == 1 and out.suffix == DETECTION_SUFFIX
    for scene, detections in zip(scenes, results):
        target = out if single_file else out / f"{scene.frame_id}{DETECTION_SUFFIX}"
        target.parent.mkdir(parents=True, exist_ok=True)
        write_labels(detection_lines(detections, scene), target, scene.calib)
    total = sum(len(d) for d in results)
    print(f"Wrote {total} detections for {len(scenes)} frame(s) to {out}")
    return 0


def _detection_file(dets: Path, scene_dir: Path, frame_id: str, single: bool) -> Path | None:
    """Detections of one frame: ``<dets>/<frame_id>.txt`` or a scene directory's label file."""
    if dets.is_file():
        return dets if single else None
    candidates = (
        dets / f"{frame_id}{DETECTION_SUFFIX}",
        dets / scene_dir.name / LABEL_FILE,
        dets / LABEL_FILE,
    )
    for candidate in candidates:
        if candidate.is_file():
            return candidate
    return None


def load_detections(path: Path, scene: SceneBundle) -> list[Detection]:
    """Pedestrian entries of a KITTI-format file; entries without a score count as 1.0."""
    detections = []
    for label in read_labels(path, scene.calib):
        if label.object_type == PEDESTRIAN and label.box is not None:
            score = 1.0 if label.score is None else label.score
            detections.append(Detection(box=label.box, score=score))
    return sorted(detections, key=lambda d: -d.score)


def cmd_eval(args: argparse.Namespace, config: Config) -> int:
    eval_cfg = config.eval.model_copy(update={"num_recall_points": args.mode})
    scene_dirs = list_scenes(args.gts)
    dets_root = Path(args.dets)

    detections, ground_truth = [], []
    for scene_dir in scene_dirs:
        scene = read_scene(scene_dir)
        if scene.labels is None:
            raise FileNotFoundError(f"Scene {scene_dir} has no label file")
        det_file = _detection_file(dets_root, scene_dir, scene.frame_id, len(scene_dirs) == 1)
        if det_file is None:
            logger.warning(f"No detections for frame {scene.frame_id}; counting it as empty")
        detections.append(load_detections(det_file, scene) if det_file else [])
        ground_truth.append(scene.labels)

    report = evaluate(detections, ground_truth, eval_cfg)
    print(report.to_table())
    if args.out:
        atomic_write_text(args.out, report.to_key_values())
    if args.plot:
        plot_pr_curves(report, args.plot)
    return 0


def cmd_gradcheck(args: argparse.Namespace, config: Config) -> int:
    report = run_gradcheck(seed=args.seed, num_scenes=args.scenes, cfg=config.loss)
    status = "PASSED" if report.passed else "FAILED"
    print(
        f"Gradient check {status}: {report.num_checks} elements, "
        f"max abs error {report.max_abs_error:.3g}, max rel error {report.max_rel_error:.3g}"
    )
    for failure in report.failures[:20]:
        print(f"  {failure}")
    return 0 if report.passed else 1


def compare_schemes(
    scenes: Sequence[SceneBundle],
    config: Config,
    weights_seed: int = 0,
    schemes: Sequence[str] = FUSION_SCHEMES,
) -> pd.DataFrame:
    """
    Evaluate the same scenes under every fusion scheme.

    Returns:
        One row per scheme with mAP_3D, mAP_BEV and their delta against the baseline
    """
    ground_truth = [scene.labels or [] for scene in scenes]
    rows = []
    for scheme in schemes:
        scheme_config = _with_scheme(config, scheme)
        detector = Detector(scheme_config, init_weights(scheme_config, scheme, seed=weights_seed))
        detections = detector.detect_batch(list(scenes), config.runtime.effective_threads())
        report: EvalReport = evaluate(detections, ground_truth, config.eval)
        rows.append(
            {"scheme": scheme, "mAP_3D": report.mean_ap("3d"), "mAP_BEV": report.mean_ap("bev")}
        )

    frame = pd.DataFrame(rows).set_index("scheme")
    if "none" in frame.index:
        frame["delta_3D"] = frame["mAP_3D"] - frame.loc["none", "mAP_3D"]
        frame["delta_BEV"] = frame["mAP_BEV"] - frame.loc["none", "mAP_BEV"]
    return frame.round(4)


def cmd_compare(args: argparse.Namespace, config: Config) -> int:
    if args.scene:
        scenes = [read_scene(d) for d in list_scenes(args.scene)]
    else:
        scenes = [synth_scene(_synth_spec(args, args.seed + i)) for i in range(args.count)]
    frame = compare_schemes(scenes, config, weights_seed=args.weights_seed)
    print(f"Scheme comparison over {len(scenes)} frames (weights seed {args.weights_seed})")
    print(frame.to_string())
    return 0


def cmd_overfit(args: argparse.Namespace, config: Config) -> int:
    scene = synth_scene(overfit_scene_spec(args.seed))
    detector = Detector(config, _load_weights(args, config))
    report = overfit_head(detector, scene, steps=args.steps)
    status = "PASSED" if report.passed else "FAILED"
    print(
        f"Overfit {status}: loss {report.initial_loss:.6f} -> {report.final_loss:.6f} "
        f"({report.reduction:.1f}x over {report.steps} steps), AP_BEV {report.ap_bev}"
    )
    return 0 if report.passed else 1


def _add_synth_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="Seed of the first scene")
    parser.add_argument("--count", type=int, default=1, help="Number of consecutive seeds")
    parser.add_argument("--peds", type=int, default=3, help="Pedestrians per scene")
    parser.add_argument("--poles", type=int, default=2, help="Poles per scene")
    parser.add_argument("--clutter", type=int, default=200, help="Background clutter points")
    parser.add_argument("--ground", type=int, default=3000, help="Ground-plane points")
    parser.add_argument("--noise", type=float, default=0.02, help="Point noise std (m)")
    parser.add_argument("--fidelity", type=float, default=1.0, help="Segmentation fidelity in [0, 1]")
    parser.add_argument(
        "--x-range", type=float, nargs=2, default=(6.0, 40.0), help="Placement x range (m)"
    )
    parser.add_argument(
        "--y-range", type=float, nargs=2, default=(-12.0, 12.0), help="Placement y range (m)"
    )


def _add_weight_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scheme", choices=FUSION_SCHEMES, help="Fusion scheme (default from config)")
    parser.add_argument("--weights", help="Checkpoint file (.svck)")
    parser.add_argument(
        "--weights-seed", type=int, default=0, help="Seed of random weights without --weights"
    )


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per pipeline stage."""
    parser = argparse.ArgumentParser(
        prog="semantic-voxels", description="SemanticVoxels pedestrian detection"
    )
    parser.add_argument("--config", help="JSON configuration file (default: $SEMVOX_CONFIG)")
    parser.add_argument("--preset", choices=["kitti", "desk"], help="Configuration preset")
    parser.add_argument("--log-level", help="Override the configured logging level")
    parser.add_argument("--threads", type=int, help="Worker threads for batch directories")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate synthetic scene bundles")
    _add_synth_options(p)
    p.add_argument("--out", required=True, help="Output scene directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("paint", help="Write the painted point cloud of a scene")
    p.add_argument("--scene", required=True, help="Scene directory")
    p.add_argument("--out", required=True, help="Output .svpc file")
    p.set_defaults(func=cmd_paint)

    p = sub.add_parser("init-weights", help="Write seeded random network weights")
    p.add_argument("--scheme", choices=FUSION_SCHEMES, help="Fusion scheme (default from config)")
    p.add_argument("--seed", type=int, default=0, help="Weight seed")
    p.add_argument("--out", required=True, help="Output .svck checkpoint")
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("encode", help="Write geometric, semantic and fused feature maps")
    p.add_argument("--scene", required=True, help="Scene directory")
    _add_weight_options(p)
    p.add_argument("--out", required=True, help="Output .svck file of named feature maps")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("forward", help="Run the full pipeline and write KITTI-format detections")
    p.add_argument("--scene", required=True, help="Scene directory or a directory of scenes")
    _add_weight_options(p)
    p.add_argument("--out", required=True, help="Output .txt (single scene) or directory")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("eval", help="KITTI-style AP of detections against labelled scenes")
    p.add_argument("--dets", required=True, help="Detection directory (<frame_id>.txt) or file")
    p.add_argument("--gts", required=True, help="Scene directory or a directory of scenes")
    p.add_argument("--mode", type=int, choices=[11, 40], default=40, help="Recall interpolation points")
    p.add_argument("--out", help="Report file (key=value lines)")
    p.add_argument("--plot", help="Precision-recall chart (PNG)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="Verify analytic loss gradients by finite differences")
    p.add_argument("--seed", type=int, default=0, help="Seed of the random trials")
    p.add_argument("--scenes", type=int, default=100, help="Number of random trials")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("compare", help="Evaluate all fusion schemes on the same scenes")
    p.add_argument("--scene", help="Scene directory or directory of scenes (default: synthesise)")
    _add_synth_options(p)
    p.add_argument("--weights-seed", type=int, default=0, help="Seed of the random weights")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("overfit", help="Fit the detection head to one synthetic scene")
    p.add_argument("--seed", type=int, default=0, help="Scene seed")
    p.add_argument("--steps", type=int, default=500, help="Gradient steps")
    _add_weight_options(p)
    p.set_defaults(func=cmd_overfit)

    return parser


def _configure(args: argparse.Namespace) -> Config:
    config = load_config(args.config, args.preset)
    updates = {}
    if args.log_level:
        updates["logging"] = LoggingConfig(**{**config.logging.model_dump(), "level": args.log_level})
    if args.threads:
        updates["runtime"] = RuntimeConfig(threads=args.threads)
    config = config.model_copy(update=updates)
    config = _with_scheme(config, getattr(args, "scheme", None))
    setup_logging(config.logging)
    validate_config(config)
    return config


def main(argv: Sequence[str] | None = None) -> int:
    """Run a SemanticVoxels command; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = _configure(args)
        return args.func(args, config)
    except (SemanticVoxelsError, FileNotFoundError, ValidationError, json.JSONDecodeError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
