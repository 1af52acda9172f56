"""Command-line front end.

Subcommands: gen, init-detect, selftrain, eval, ablate, simulate-hitl,
serve. Options resolve as defaults < flat key=value config file (--config)
< explicit flags. Experiment commands require --seed and write their
delimited output next to rendered figures.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import report, runio
from .data import (
    DataError,
    load_feature_csv,
    load_ground_truth_csv,
    load_image_frames,
    save_feature_csv,
    save_ground_truth_csv,
    save_image_frames,
    synth_image_scene,
    synth_vector_scene,
)
from .initial import InitConfig, initial_scores
from .metrics import auc
from .nets import TrainConfig
from .pipeline import RunConfig, ensemble_score, run_self_training
from .feedback import (
    DEFAULT_FEEDBACK_EPOCHS,
    DEFAULT_FEEDBACK_K,
    simulate_expert,
    start_session,
)

# knob name -> (section, type); sections map onto the config dataclasses
_KNOBS = {
    "iterations": ("run", int),
    "anomaly_fraction": ("run", float),
    "normal_fraction": ("run", float),
    "backbone": ("run", str),
    "warm_start": ("run", bool),
    "learning_rate": ("train", float),
    "batch_size": ("train", int),
    "epochs": ("train", int),
    "c1": ("train", float),
    "c2": ("train", float),
    "pca_components": ("init", int),
    "sp_subsample": ("init", int),
    "sp_bags": ("init", int),
    "forest_trees": ("init", int),
    "forest_subsample": ("init", int),
}


def _parse_bool(text: str) -> bool:
    if str(text).lower() in ("1", "true", "yes", "on"):
        return True
    if str(text).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < explicit flags, plus the mandatory seed."""
    values: dict[str, object] = {}
    if getattr(args, "config", None):
        file_map = runio.read_flat_config(args.config)
        for key, raw in file_map.items():
            if key == "seed":
                values[key] = int(raw)
                continue
            if key not in _KNOBS:
                raise SystemExit(f"unknown config key {key!r} in {args.config}")
            _, typ = _KNOBS[key]
            values[key] = _parse_bool(raw) if typ is bool else typ(raw)
    for key in _KNOBS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    seed = args.seed if args.seed is not None else values.get("seed")
    if seed is None:
        raise SystemExit("--seed is required")
    run_kw = {k: v for k, v in values.items() if _KNOBS.get(k, ("", 0))[0] == "run"}
    train_kw = {k: v for k, v in values.items() if _KNOBS.get(k, ("", 0))[0] == "train"}
    init_kw = {k: v for k, v in values.items() if _KNOBS.get(k, ("", 0))[0] == "init"}
    return RunConfig(
        seed=int(seed),
        train=TrainConfig(**train_kw),
        init=InitConfig(**init_kw),
        **run_kw,
    )


def run_config_to_flat(cfg: RunConfig) -> dict:
    flat = {"seed": cfg.seed}
    for key, (section, _) in _KNOBS.items():
        src = {"run": cfg, "train": cfg.train, "init": cfg.init}[section]
        flat[key] = getattr(src, key)
    return flat


def _add_knob_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    for key, (_, typ) in _KNOBS.items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            p.add_argument(flag, type=_parse_bool, default=None, metavar="BOOL")
        else:
            p.add_argument(flag, type=typ, default=None)


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--features", help="numeric CSV, one frame per row")
    g.add_argument("--manifest", help="text manifest of PGM frames")


def _load_dataset(args: argparse.Namespace):
    if getattr(args, "features", None):
        return load_feature_csv(args.features)
    return load_image_frames(args.manifest)


def cmd_gen(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    if args.kind == "vector":
        fs, gt = synth_vector_scene(
            args.k_normal, args.k_anomaly, args.d, args.separation, args.seed
        )
        save_feature_csv(fs, os.path.join(args.out_dir, "features.csv"))
    else:
        fs, gt = synth_image_scene(
            args.k_normal, args.k_anomaly, args.height, args.width, args.seed
        )
        save_image_frames(fs, args.out_dir)
        rows = [
            (i, *gt.boxes[i])
            for i in range(fs.k)
            if gt.boxes is not None and gt.boxes[i] is not None
        ]
        report.write_csv(
            os.path.join(args.out_dir, "boxes.csv"),
            ["frame_id", "r0", "c0", "r1", "c1"],
            rows,
        )
    save_ground_truth_csv(gt, os.path.join(args.out_dir, "gt.csv"))
    print(f"wrote {fs.k} frames ({args.kind}) to {args.out_dir}")
    return 0


def cmd_init_detect(args) -> int:
    cfg = resolve_run_config(args)
    fs = _load_dataset(args)
    scores = initial_scores(fs, replace(cfg.init, seed=cfg.seed))
    runio.write_scores_csv(args.out, scores)
    print(f"wrote {len(scores)} fused scores to {args.out}")
    return 0


def cmd_selftrain(args) -> int:
    cfg = resolve_run_config(args)
    fs = _load_dataset(args)
    os.makedirs(args.run_dir, exist_ok=True)
    runio.write_flat_config(os.path.join(args.run_dir, "config.txt"), run_config_to_flat(cfg))
    res = run_self_training(fs, cfg, run_dir=args.run_dir)
    ens = ensemble_score(res.ensemble, fs)
    runio.write_scores_csv(os.path.join(args.run_dir, "ensemble_scores.csv"), ens)
    print(f"self-training done: {res.ensemble.t} models in {args.run_dir}")
    if args.gt:
        gt = load_ground_truth_csv(args.gt)
        rows = [("initial", cfg.seed, 0, auc(res.score_history[0], gt).auc)]
        per_iter = []
        for i in range(1, res.ensemble.t + 1):
            a = auc(res.prefix_ensemble_scores(i), gt).auc
            per_iter.append(a)
            rows.append(("ensemble", cfg.seed, i, a))
        report.write_csv(
            os.path.join(args.run_dir, "report.csv"),
            ["dataset", "seed", "iteration", "auc"],
            rows,
        )
        report.save_iteration_figure(
            np.array([per_iter]), [rows[0][3]],
            os.path.join(args.run_dir, "auc_by_iteration.png"),
        )
        print(f"ensemble AUC {per_iter[-1]:.4f} (initial {rows[0][3]:.4f})")
    return 0


def cmd_eval(args) -> int:
    scores = runio.read_scores_csv(args.scores)
    gt = load_ground_truth_csv(args.gt)
    result = auc(scores, gt)
    os.makedirs(args.out_dir, exist_ok=True)
    report.write_csv(
        os.path.join(args.out_dir, "report.csv"),
        ["dataset", "seed", "iteration", "auc"],
        [(args.dataset, args.seed if args.seed is not None else "-", args.iteration, result.auc)],
    )
    report.write_csv(
        os.path.join(args.out_dir, "roc_curve.csv"),
        ["fpr", "tpr"],
        [tuple(p) for p in result.curve],
    )
    report.save_roc_figure(result.curve, result.auc, os.path.join(args.out_dir, "roc.png"))
    print(f"auc {result.auc:.6f} -> {args.out_dir}")
    return 0


def _sweep_anomaly_rate(args, cfg: RunConfig, out_dir: str) -> None:
    rates = (0.05, 0.10, 0.15, 0.20)
    rows, med_init, med_ens = [], [], []
    for rate in rates:
        k_anom = max(1, round(args.k_normal * rate / (1.0 - rate)))
        inits, ens = [], []
        for r in range(args.repeats):
            seed = cfg.seed + r
            fs, gt = synth_vector_scene(args.k_normal, k_anom, args.d, args.separation, seed)
            res = run_self_training(fs, replace(cfg, seed=seed))
            a0 = auc(res.score_history[0], gt).auc
            a1 = auc(res.prefix_ensemble_scores(res.ensemble.t), gt).auc
            inits.append(a0)
            ens.append(a1)
            rows.append((rate, seed, a0, a1))
        med_init.append(float(np.median(inits)))
        med_ens.append(float(np.median(ens)))
        print(f"rate {rate:.2f}: initial {med_init[-1]:.4f} ensemble {med_ens[-1]:.4f}")
    report.write_csv(
        os.path.join(out_dir, "anomaly_rate.csv"),
        ["rate", "seed", "initial_auc", "ensemble_auc"],
        rows,
    )
    report.save_rate_sweep_figure(rates, med_init, med_ens, os.path.join(out_dir, "anomaly_rate.png"))


def _sweep_iterations(args, cfg: RunConfig, out_dir: str) -> None:
    rows, curves, inits = [], [], []
    for r in range(args.repeats):
        seed = cfg.seed + r
        fs, gt = synth_vector_scene(args.k_normal, args.k_anomaly, args.d, args.separation, seed)
        res = run_self_training(fs, replace(cfg, seed=seed))
        inits.append(auc(res.score_history[0], gt).auc)
        curve = [auc(res.prefix_ensemble_scores(i), gt).auc for i in range(1, res.ensemble.t + 1)]
        curves.append(curve)
        rows.append((seed, 0, inits[-1]))
        rows.extend((seed, i, a) for i, a in enumerate(curve, start=1))
    report.write_csv(os.path.join(out_dir, "iterations.csv"), ["seed", "iteration", "auc"], rows)
    report.save_iteration_figure(np.array(curves), inits, os.path.join(out_dir, "iterations.png"))
    med = np.median(np.array(curves), axis=0)
    print("median per-iteration AUC:", " ".join(f"{a:.4f}" for a in med))


def _sweep_backbone(args, cfg: RunConfig, out_dir: str) -> None:
    backbones = ("mlp", "conv-gap", "conv-gap-linear")
    rows, medians = [], []
    for backbone in backbones:
        aucs = []
        for r in range(args.repeats):
            seed = cfg.seed + r
            fs, gt = synth_image_scene(args.k_normal, args.k_anomaly, args.height, args.width, seed)
            res = run_self_training(fs, replace(cfg, backbone=backbone, seed=seed))
            aucs.append(auc(res.prefix_ensemble_scores(res.ensemble.t), gt).auc)
            rows.append((backbone, seed, aucs[-1]))
        medians.append(float(np.median(aucs)))
        print(f"{backbone}: median ensemble AUC {medians[-1]:.4f}")
    report.write_csv(os.path.join(out_dir, "backbone.csv"), ["backbone", "seed", "auc"], rows)
    report.save_backbone_figure(backbones, medians, os.path.join(out_dir, "backbone.png"))


def cmd_ablate(args) -> int:
    cfg = resolve_run_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    if args.sweep == "anomaly-rate":
        _sweep_anomaly_rate(args, cfg, args.out_dir)
    elif args.sweep == "iterations":
        _sweep_iterations(args, cfg, args.out_dir)
    else:
        _sweep_backbone(args, cfg, args.out_dir)
    return 0


def cmd_simulate_hitl(args) -> int:
    cfg = resolve_run_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    from_files = bool(getattr(args, "features", None) or getattr(args, "manifest", None))
    if from_files and not args.gt:
        raise SystemExit("--gt is required when simulating on a dataset from disk")
    gt = load_ground_truth_csv(args.gt) if args.gt else None
    trajectories = []
    for r in range(args.repeats):
        seed = cfg.seed + r
        if from_files:
            fs = _load_dataset(args)
        else:
            fs, gt = synth_vector_scene(args.k_normal, args.k_anomaly, args.d, args.separation, seed)
        res = run_self_training(fs, replace(cfg, seed=seed))
        session = start_session(
            res.ensemble, fs, l=args.l, replay_labels=res.label_history[-1], seed=seed
        )
        traj = simulate_expert(
            session, gt,
            k=args.k, rounds=args.rounds,
            neighbor_radius=args.neighbor_radius,
            epochs=args.feedback_epochs, replay=args.replay,
        )
        trajectories.append(traj)
        print(f"seed {seed}: " + " ".join(f"{a:.4f}" for a in traj))
    rows = [
        (cfg.seed + r, rnd, a)
        for r, traj in enumerate(trajectories)
        for rnd, a in enumerate(traj)
    ]
    report.write_csv(os.path.join(args.out_dir, "trajectory.csv"), ["seed", "round", "auc"], rows)
    report.save_trajectory_figure(trajectories, os.path.join(args.out_dir, "trajectory.png"))
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    serve(args.run_dir, port=args.port, host=args.host)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selfrank",
        description="Unsupervised anomaly ranking with self-trained ordinal regression.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene with ground truth")
    p.add_argument("--kind", choices=("vector", "image"), required=True)
    p.add_argument("--k-normal", type=int, default=400)
    p.add_argument("--k-anomaly", type=int, default=40)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--separation", type=float, default=5.0)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("init-detect", help="fused detector scores for a dataset")
    _add_dataset_flags(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output scores.csv")
    _add_knob_flags(p)
    p.set_defaults(func=cmd_init_detect)

    p = sub.add_parser("selftrain", help="run the full self-training loop")
    _add_dataset_flags(p)
    p.add_argument("--gt", help="optional ground-truth CSV for reporting")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    _add_knob_flags(p)
    p.set_defaults(func=cmd_selftrain)

    p = sub.add_parser("eval", help="AUC report for a scores file")
    p.add_argument("--scores", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dataset", default="-")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iteration", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="experiment sweeps with figures")
    p.add_argument("--sweep", choices=("anomaly-rate", "iterations", "backbone"), required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k-normal", type=int, default=400)
    p.add_argument("--k-anomaly", type=int, default=40)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--separation", type=float, default=5.0)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    _add_knob_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("simulate-hitl", help="simulated expert feedback rounds")
    g = p.add_mutually_exclusive_group(required=False)
    g.add_argument("--features")
    g.add_argument("--manifest")
    p.add_argument("--gt", help="ground-truth CSV (required for datasets from disk)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--k", type=int, default=DEFAULT_FEEDBACK_K)
    p.add_argument("--l", type=int, default=None)
    p.add_argument("--neighbor-radius", type=int, default=0)
    p.add_argument("--feedback-epochs", type=int, default=DEFAULT_FEEDBACK_EPOCHS)
    p.add_argument("--replay", type=_parse_bool, default=True, metavar="BOOL")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k-normal", type=int, default=400)
    p.add_argument("--k-anomaly", type=int, default=40)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--separation", type=float, default=3.5)
    _add_knob_flags(p)
    p.set_defaults(func=cmd_simulate_hitl)

    p = sub.add_parser("serve", help="HTTP/JSON service over a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataError, runio.RunDirError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
