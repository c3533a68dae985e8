"""Command-line surface: synth, preprocess, train, eval, fuse, weights-search.

Commands compose through the files they exchange: ``preprocess`` turns an
annotation file into a tensor cache (plus a filled-sequences sidecar for
per-epoch snippet resampling), ``train`` turns the cache into a checkpoint
and a metrics trace, ``eval`` turns checkpoint + cache into a score CSV and
an accuracy report, and ``fuse`` combines score CSVs from this and external
streams. Every command is deterministic given its config and seed, every
output embeds the config hash and seed, and all writes are atomic
(temp file + rename). Errors leave a machine-readable JSON line on stderr
and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys
import warnings
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import convnet, fusion, preprocess, synth, tensorize
from .config import PipelineConfig, load_config
from .preprocess import (
    AnnotationError,
    NormalizedPoseSequence,
    PoseSequence,
    VIS_OBSERVED,
    VIS_SPATIAL,
    VIS_SYNTHETIC,
    VIS_TEMPORAL,
)
from .skeleton import SkeletonTopology, build_topology, euler_tour


class CliError(ValueError):
    """User-facing command error."""


def _atomic_write(path: str | Path, writer: Callable[[Path], None]) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _write_json(path: str | Path, payload: dict) -> None:
    _atomic_write(
        path,
        lambda p: p.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8"),
    )


def _video_seed(base_seed: int, video: str, extra: int | None = None) -> list[int]:
    """Stable per-video (and optionally per-epoch) seed sequence."""
    digest = hashlib.sha256(video.encode("utf-8")).digest()
    parts = [base_seed, int.from_bytes(digest[:8], "little")]
    if extra is not None:
        parts.append(extra)
    return parts


def _load_topology(cfg: PipelineConfig) -> SkeletonTopology:
    return build_topology(cfg.profile, cfg.topology_file)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(spec: synth.SyntheticSpec, out: str | Path) -> dict:
    spec_dict = asdict(spec)
    spec_hash = hashlib.sha256(
        json.dumps(spec_dict, sort_keys=True, default=list).encode("utf-8")
    ).hexdigest()[:12]
    meta = {"seed": spec.seed, "config_hash": spec_hash, "spec": spec_dict}
    poses = synth.generate(spec)
    _atomic_write(out, lambda p: preprocess.write_annotations(p, poses, meta=meta))
    return {"videos": len(poses), "classes": len(spec.classes), "out": str(out)}


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

def _fill_counts(sequences: Sequence[PoseSequence]) -> dict[str, int]:
    flags = np.concatenate([seq.visibility.ravel() for seq in sequences])
    return {
        "observed": int((flags == VIS_OBSERVED).sum()),
        "temporal": int((flags == VIS_TEMPORAL).sum()),
        "spatial": int((flags == VIS_SPATIAL).sum()),
        "synthetic": int((flags == VIS_SYNTHETIC).sum()),
    }


def cmd_preprocess(cfg: PipelineConfig) -> dict:
    """Annotations -> tensor cache + filled-sequences sidecar + report."""
    cfg.require("annotations", "cache")
    topology = _load_topology(cfg)
    tour = euler_tour(topology)
    run_meta = {"config_hash": cfg.hash(), "seed": cfg.seed}

    poses: list[PoseSequence] = []
    rejected: list[dict] = []
    for lineno, line in preprocess.iter_annotation_lines(cfg.annotations):
        try:
            pose = preprocess.parse_annotation_line(line, n_expected=topology.n)
        except AnnotationError as exc:
            rejected.append({"line": lineno, "error": str(exc)})
            continue
        if pose is not None:
            poses.append(pose)
    if not poses:
        raise CliError(f"no valid records in {cfg.annotations} ({len(rejected)} rejected)")

    if cfg.interpolate:
        poses = [preprocess.temporal_interpolate(p, max_gap=cfg.max_gap) for p in poses]
    normalized = [preprocess.normalize(p, topology) for p in poses]

    if cfg.interpolate:
        if cfg.spatial_model:
            model = preprocess.SpatialModel.load(cfg.spatial_model)
            if model.topology_name != topology.name:
                raise CliError(
                    f"spatial model '{cfg.spatial_model}' was fit on '{model.topology_name}', "
                    f"not '{topology.name}'"
                )
        else:
            model = preprocess.fit_spatial_model(normalized, topology, degree=cfg.poly_degree)
        if cfg.save_spatial_model:
            _atomic_write(cfg.save_spatial_model, model.save)
        filled = [preprocess.spatial_interpolate(p, model, topology) for p in normalized]
    else:
        filled = [preprocess.zero_fill(p) for p in normalized]

    tensors = []
    for seq in filled:
        plan = tensorize.plan_snippets(
            seq.num_frames,
            k=cfg.k,
            mode=cfg.sampling,
            seed=_video_seed(cfg.seed, seq.video),  # type: ignore[arg-type]
        )
        tensors.append(tensorize.build_pose_tensor(seq, tour, plan, divide_by_gap=cfg.divide_by_gap))

    _atomic_write(
        cfg.cache,
        lambda p: tensorize.write_tensor_cache(p, tensors, seed=cfg.seed, config_hash=cfg.hash()),
    )
    sequences_path = cfg.sequences or str(Path(cfg.cache).with_suffix(".seq.jsonl"))
    _atomic_write(
        sequences_path, lambda p: preprocess.write_annotations(p, filled, meta=run_meta)
    )

    report = {
        **run_meta,
        "videos": len(poses),
        "rejected": rejected,
        "frames": int(sum(p.num_frames for p in poses)),
        "unusable_frames": int(sum((~seq.frame_usable).sum() for seq in normalized)),
        "fills": _fill_counts(filled),
        "tensor_shape": [cfg.k, 2 * len(tour), tensorize.CHANNELS],
        "cache": str(cfg.cache),
        "sequences": sequences_path,
    }
    if cfg.report:
        _write_json(cfg.report, report)
    return report


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _sequences_resampler(
    cfg: PipelineConfig, topology: SkeletonTopology, sequences_path: str
) -> Callable[[int], tuple[np.ndarray, np.ndarray]]:
    tour = euler_tour(topology)
    records = preprocess.read_annotations(sequences_path, n_expected=topology.n)
    filled = [
        NormalizedPoseSequence(
            video=p.video, coords=p.coords, visibility=p.visibility, label=p.label
        )
        for p in records
    ]
    if any(p.label is None for p in filled):
        raise CliError(f"{sequences_path}: records without labels cannot be used for training")

    def resample(epoch: int) -> tuple[np.ndarray, np.ndarray]:
        tensors = []
        for seq in filled:
            plan = tensorize.plan_snippets(
                seq.num_frames,
                k=cfg.k,
                mode=cfg.sampling,
                seed=_video_seed(cfg.seed, seq.video, extra=epoch),  # type: ignore[arg-type]
            )
            tensors.append(
                tensorize.build_pose_tensor(seq, tour, plan, divide_by_gap=cfg.divide_by_gap)
            )
        return tensorize.stack_tensors(tensors)

    return resample


def cmd_train(cfg: PipelineConfig) -> dict:
    """Tensor cache -> checkpoint + per-epoch CSV trace."""
    cfg.require("cache", "checkpoint")
    cache = tensorize.read_tensor_cache(cfg.cache)
    if not cache.tensors:
        raise CliError(f"tensor cache {cfg.cache} is empty")
    data, labels = tensorize.stack_tensors(cache.tensors)
    num_classes = int(labels.max()) + 1
    if num_classes < 2:
        raise CliError("training needs at least two classes in the cache")

    arch = convnet.NetSpec(
        conv1_channels=cfg.conv1_channels, conv2_channels=cfg.conv2_channels, hidden=cfg.hidden
    )
    net = convnet.init_net(
        input_shape=data.shape[1:], num_classes=num_classes, seed=cfg.seed, arch=arch
    )
    train_cfg = convnet.TrainConfig(
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        weight_decay=cfg.weight_decay,
        resample_each_epoch=cfg.resample_each_epoch,
    )

    resample = None
    sequences_path = cfg.sequences or str(Path(cfg.cache).with_suffix(".seq.jsonl"))
    if cfg.resample_each_epoch and Path(sequences_path).exists():
        topology = _load_topology(cfg)
        resample = _sequences_resampler(cfg, topology, sequences_path)

    trained, trace = convnet.train(net, data, labels, train_cfg, resample=resample)

    meta = {"config_hash": cfg.hash(), "seed": cfg.seed, "num_classes": num_classes}
    _atomic_write(cfg.checkpoint, lambda p: convnet.save_checkpoint(trained, p, meta=meta))
    if cfg.trace:
        lines = [f"# config_hash={cfg.hash()} seed={cfg.seed}", "epoch,loss,accuracy"]
        lines += [f"{s.epoch},{s.loss:.12g},{s.accuracy:.12g}" for s in trace]
        _atomic_write(cfg.trace, lambda p: p.write_text("\n".join(lines) + "\n", "utf-8"))
    final = trace[-1] if trace else None
    return {
        "epochs": len(trace),
        "final_loss": final.loss if final else None,
        "final_accuracy": final.accuracy if final else None,
        "resampled": resample is not None,
        "checkpoint": str(cfg.checkpoint),
    }


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(cfg: PipelineConfig) -> dict:
    """Checkpoint + cache -> per-video score CSV + accuracy report."""
    cfg.require("cache", "checkpoint", "scores")
    cache = tensorize.read_tensor_cache(cfg.cache)
    if not cache.tensors:
        raise CliError(f"tensor cache {cfg.cache} holds no videos; nothing to evaluate")
    net, _ = convnet.load_checkpoint(cfg.checkpoint)
    shape = (cache.k, cache.width, tensorize.CHANNELS)
    if tuple(net.input_shape) != shape:
        raise CliError(
            f"checkpoint expects input {tuple(net.input_shape)}, cache provides {shape}"
        )

    data = np.stack([t.data for t in cache.tensors])
    probs = convnet.forward(net, data)
    scores = fusion.StreamScores(
        stream="pose",
        scores={t.video: probs[i] for i, t in enumerate(cache.tensors)},
        kind=fusion.PROBABILITIES,
    )
    run_meta = {"config_hash": cfg.hash(), "seed": cfg.seed}
    _atomic_write(cfg.scores, lambda p: fusion.write_scores(p, scores, meta=run_meta))

    labels = {t.video: t.label for t in cache.tensors if t.label is not None}
    if len(labels) != len(cache.tensors):
        raise CliError(f"cache {cfg.cache} has unlabeled videos; cannot report accuracy")
    if cfg.labels:
        _atomic_write(cfg.labels, lambda p: fusion.write_labels(p, labels, meta=run_meta))

    result = fusion.evaluate(scores, labels)
    report = {
        **run_meta,
        "videos": len(cache.tensors),
        "accuracy": result.accuracy,
        "per_class_accuracy": [None if np.isnan(v) else float(v) for v in result.per_class],
        "confusion": result.confusion.tolist(),
        "scores": str(cfg.scores),
    }
    if cfg.report:
        _write_json(cfg.report, report)
    return report


# ---------------------------------------------------------------------------
# fuse / weights-search
# ---------------------------------------------------------------------------

_STREAM_ORDER = ("pose", "spatial", "temporal")


def _load_streams(cfg: PipelineConfig) -> dict[str, fusion.StreamScores | None]:
    paths = {
        "pose": cfg.pose_scores,
        "spatial": cfg.spatial_scores,
        "temporal": cfg.temporal_scores,
    }
    streams = {
        name: fusion.read_scores(path, stream=name) if path else None
        for name, path in paths.items()
    }
    if all(s is None for s in streams.values()):
        raise CliError("fusion needs at least one of pose/spatial/temporal score files")
    return streams


def cmd_fuse(cfg: PipelineConfig) -> dict:
    """Score CSVs + labels -> fused score CSV + accuracy table per subset."""
    cfg.require("labels", "fused_scores")
    streams = _load_streams(cfg)
    labels = fusion.read_labels(cfg.labels)
    weights = fusion.FusionWeights(*cfg.weights)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fused = fusion.fuse(streams["pose"], streams["spatial"], streams["temporal"], weights)
    run_meta = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "weights": ",".join(f"{w:g}" for w in weights.as_tuple()),
    }
    _atomic_write(cfg.fused_scores, lambda p: fusion.write_scores(p, fused, meta=run_meta))

    present = [name for name in _STREAM_ORDER if streams[name] is not None]
    subsets = {}
    for size in range(1, len(present) + 1):
        for combo in itertools.combinations(present, size):
            picked = {name: (streams[name] if name in combo else None) for name in _STREAM_ORDER}
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                combo_scores = fusion.fuse(
                    picked["pose"], picked["spatial"], picked["temporal"], weights
                )
            subsets["+".join(combo)] = fusion.evaluate(combo_scores, labels).accuracy

    report = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "weights": list(weights.as_tuple()),
        "streams": present,
        "accuracy": subsets,
        "fused_accuracy": subsets["+".join(present)],
        "fused_scores": str(cfg.fused_scores),
    }
    if cfg.report:
        _write_json(cfg.report, report)
    return report


def cmd_weights_search(cfg: PipelineConfig) -> dict:
    """Grid search fusion weights against a labeled validation split."""
    cfg.require("labels")
    streams = _load_streams(cfg)
    labels = fusion.read_labels(cfg.labels)

    axes = [
        cfg.weight_grid if streams[name] is not None else (0.0,) for name in _STREAM_ORDER
    ]
    grid = [
        combo for combo in itertools.product(*axes) if any(w != 0.0 for w in combo)
    ]
    if not grid:
        raise CliError("weight grid contains no usable (non-zero) combination")
    best, rows = fusion.search_weights(
        streams["pose"], streams["spatial"], streams["temporal"], labels, grid
    )
    best_accuracy = max(row["accuracy"] for row in rows)
    report = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "best_weights": list(best.as_tuple()),
        "best_accuracy": best_accuracy,
        "candidates": [
            {"weights": list(row["weights"]), "accuracy": row["accuracy"]} for row in rows
        ],
    }
    if cfg.report:
        _write_json(cfg.report, report)
    return report


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        print(json.dumps({"error": "UsageError", "message": message}), file=sys.stderr)
        raise SystemExit(2)


def _add_config_args(parser: argparse.ArgumentParser, *names: str) -> None:
    """Register override flags whose dest matches a PipelineConfig field."""
    specs: dict[str, dict] = {
        "profile": dict(type=str, help="skeleton profile (jhmdb_gt, estimated_14, penn, custom)"),
        "topology_file": dict(type=str, help="description file for --profile custom"),
        "k": dict(type=int, help="segments per video"),
        "sampling": dict(type=str, choices=["random", "center"], help="snippet sampling mode"),
        "seed": dict(type=int, help="master seed"),
        "max_gap": dict(type=int, help="longest temporal gap filled by interpolation"),
        "poly_degree": dict(type=int, choices=[1, 2], help="spatial model polynomial degree"),
        "conv1_channels": dict(type=int), "conv2_channels": dict(type=int),
        "hidden": dict(type=int),
        "learning_rate": dict(type=float), "epochs": dict(type=int),
        "batch_size": dict(type=int), "weight_decay": dict(type=float),
        "annotations": dict(type=str), "cache": dict(type=str), "sequences": dict(type=str),
        "spatial_model": dict(type=str, help="load a previously fitted spatial model (.npz)"),
        "save_spatial_model": dict(type=str, help="save the fitted spatial model (.npz)"),
        "checkpoint": dict(type=str), "trace": dict(type=str),
        "scores": dict(type=str), "labels": dict(type=str), "report": dict(type=str),
        "fused_scores": dict(type=str),
        "pose_scores": dict(type=str), "spatial_scores": dict(type=str),
        "temporal_scores": dict(type=str),
    }
    for name in names:
        flag = "--" + name.replace("_", "-")
        parser.add_argument(flag, dest=name, default=None, **specs[name])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="posestream", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic annotation file")
    p_synth.add_argument("--out", required=True, help="annotation JSONL to write")
    p_synth.add_argument("--classes", default=",".join(synth.CLASS_NAMES),
                         help="comma-separated motion class names")
    p_synth.add_argument("--videos-per-class", type=int, default=50)
    p_synth.add_argument("--frames", type=int, default=40)
    p_synth.add_argument("--noise-sigma", type=float, default=1.0)
    p_synth.add_argument("--dropout", type=float, default=0.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--profile", default="jhmdb_gt")

    for name, needed in {
        "preprocess": ("annotations", "cache", "sequences", "profile", "topology_file", "k",
                       "sampling", "seed", "max_gap", "poly_degree", "spatial_model",
                       "save_spatial_model", "report"),
        "train": ("cache", "sequences", "checkpoint", "trace", "profile", "topology_file", "k",
                  "sampling", "seed", "learning_rate", "epochs", "batch_size", "weight_decay",
                  "conv1_channels", "conv2_channels", "hidden"),
        "eval": ("cache", "checkpoint", "scores", "labels", "report", "seed"),
        "fuse": ("pose_scores", "spatial_scores", "temporal_scores", "labels", "fused_scores",
                 "report", "seed"),
        "weights-search": ("pose_scores", "spatial_scores", "temporal_scores", "labels",
                           "report", "seed"),
    }.items():
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", default=None, help="YAML/JSON config file")
        _add_config_args(p, *needed)
        if name == "preprocess":
            p.add_argument("--no-interpolate", action="store_true",
                           help="skip interpolation; zero-fill missing joints (baseline)")
        if name == "train":
            p.add_argument("--no-resample", action="store_true",
                           help="reuse cached tensors instead of redrawing snippets per epoch")
        if name == "fuse":
            p.add_argument("--weights", default=None,
                           help="comma-separated w_pose,w_spatial,w_temporal")
        if name == "weights-search":
            p.add_argument("--grid", default=None, help="comma-separated candidate weight values")
    return parser


def _overrides_from_args(args: argparse.Namespace) -> dict:
    skip = {"command", "config", "func", "no_interpolate", "no_resample", "weights", "grid"}
    overrides = {k: v for k, v in vars(args).items() if k not in skip}
    if getattr(args, "no_interpolate", False):
        overrides["interpolate"] = False
    if getattr(args, "no_resample", False):
        overrides["resample_each_epoch"] = False
    if getattr(args, "weights", None):
        overrides["weights"] = tuple(float(v) for v in args.weights.split(","))
    if getattr(args, "grid", None):
        overrides["weight_grid"] = tuple(float(v) for v in args.grid.split(","))
    return overrides


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            spec = synth.SyntheticSpec(
                classes=tuple(args.classes.split(",")),
                videos_per_class=args.videos_per_class,
                frames=args.frames,
                noise_sigma=args.noise_sigma,
                dropout=args.dropout,
                seed=args.seed,
                profile=args.profile,
            )
            result = cmd_synth(spec, args.out)
        else:
            cfg = load_config(args.config, _overrides_from_args(args))
            command = {
                "preprocess": cmd_preprocess,
                "train": cmd_train,
                "eval": cmd_eval,
                "fuse": cmd_fuse,
                "weights-search": cmd_weights_search,
            }[args.command]
            result = command(cfg)
        print(json.dumps(result, sort_keys=True))
        return 0
    except Exception as exc:  # all command failures surface as JSON on stderr
        payload = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(payload), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
