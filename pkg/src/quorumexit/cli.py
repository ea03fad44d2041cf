"""Command-line entry point.

Subcommands cover the full pipeline: ``gen-data`` (synthetic task on disk),
``train`` (joint-loss ensemble -> bundle), ``infer`` (adaptive inference ->
traces, reports, figures), ``sweep`` (threshold/criterion grid), ``search``
(posterior fit + particle sampling + ensemble training).

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every output
directory gets a machine-readable ``manifest.json`` with the full
configuration and seeds so runs can be replayed exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import figures, metrics
from .bundle import read_bundle
from .engine import InferenceTrace, infer_dataset
from .gate import CriterionKind, ExitCriterion
from .search import (
    SVGDConfig,
    fit_posterior,
    init_swarm,
    make_logits_posterior,
    run_svgd,
    select_ensemble,
)
from .supernet import build_supernet
from .toytrain import (
    ConfigError,
    JointLossConfig,
    SyntheticTask,
    TaskData,
    ToyLearner,
    ensemble_widths,
    export_ensemble,
    gen_task,
    load_kv_config,
    train_joint,
)

DEFAULT_SEED = 7
TASK_CONFIG_NAME = "task.txt"
TAU_PRESETS = (0.95, 0.6, 0.3)


def _write_manifest(out_dir: str, command: str, config: dict) -> None:
    metrics.write_json(
        os.path.join(out_dir, "manifest.json"),
        {"command": command, "config": config},
    )


def _parse_tau(text: str) -> float | tuple[float, ...]:
    parts = [p for p in text.split(",") if p.strip()]
    values = [float(p) for p in parts]
    return values[0] if len(values) == 1 else tuple(values)


def _criterion(args, tau) -> ExitCriterion:
    kind = CriterionKind.TTEST_LCB if args.criterion == "ttest" else CriterionKind.MEAN_CONFIDENCE
    return ExitCriterion(kind=kind, tau_conf=tau, alpha=args.alpha)


# --- task directory I/O ------------------------------------------------------


def save_task_dir(data: TaskData, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    task = data.task
    lines = (
        f"classes = {task.classes}\n"
        f"dim = {task.dim}\n"
        f"overlap = {task.overlap!r}\n"
        f"n_train = {task.n_train}\n"
        f"n_test = {task.n_test}\n"
        f"seed = {task.seed}\n"
    )
    with open(os.path.join(out_dir, TASK_CONFIG_NAME), "w", encoding="ascii") as fh:
        fh.write(lines)
    np.save(os.path.join(out_dir, "train_x.npy"), data.x_train)
    np.save(os.path.join(out_dir, "train_y.npy"), data.y_train)
    np.save(os.path.join(out_dir, "test_x.npy"), data.x_test)
    np.save(os.path.join(out_dir, "test_y.npy"), data.y_test)


def load_task_dir(path: str) -> TaskData:
    cfg = load_kv_config(os.path.join(path, TASK_CONFIG_NAME))
    task = SyntheticTask(
        classes=int(cfg["classes"]),
        dim=int(cfg["dim"]),
        overlap=float(cfg["overlap"]),
        n_train=int(cfg["n_train"]),
        n_test=int(cfg["n_test"]),
        seed=int(cfg["seed"]),
    )
    data = TaskData(
        task,
        np.load(os.path.join(path, "train_x.npy")),
        np.load(os.path.join(path, "train_y.npy")),
        np.load(os.path.join(path, "test_x.npy")),
        np.load(os.path.join(path, "test_y.npy")),
    )
    if data.x_train.shape != (task.n_train, task.dim):
        raise ConfigError(f"train_x.npy shape {data.x_train.shape} does not match {TASK_CONFIG_NAME}")
    if data.x_test.shape != (task.n_test, task.dim):
        raise ConfigError(f"test_x.npy shape {data.x_test.shape} does not match {TASK_CONFIG_NAME}")
    return data


# --- subcommands -------------------------------------------------------------


def cmd_gen_data(args) -> int:
    task = SyntheticTask(
        classes=args.classes,
        dim=args.dim,
        overlap=args.overlap,
        n_train=args.train_samples,
        n_test=args.test_samples,
        seed=args.seed,
    )
    data = gen_task(task)
    save_task_dir(data, args.out)
    _write_manifest(
        args.out,
        "gen-data",
        {
            "classes": task.classes,
            "dim": task.dim,
            "overlap": task.overlap,
            "n_train": task.n_train,
            "n_test": task.n_test,
            "seed": task.seed,
        },
    )
    print(f"task written to {args.out}")
    return 0


def _train_config(args) -> JointLossConfig:
    overrides = load_kv_config(args.config) if args.config else {}
    return JointLossConfig(
        epochs=int(overrides.get("epochs", args.epochs)),
        learning_rate=float(overrides.get("learning_rate", 0.05)),
        batch_size=int(overrides.get("batch_size", 32)),
        final_weight=float(overrides.get("final_weight", 1.0)),
        seed=args.seed,
    )


def cmd_train(args) -> int:
    data = load_task_dir(args.task)
    cfg = _train_config(args)
    widths = ensemble_widths(args.learners, args.exits)
    learners = []
    curves = []
    for k, width in enumerate(widths):
        learner = ToyLearner(data.task.dim, data.task.classes, width, seed=args.seed + k)
        curve = train_joint(
            learner, data, dataclasses.replace(cfg, seed=args.seed + 100 + k)
        )
        learners.append(learner)
        curves.append(curve)
        print(f"learner {k} widths={width} final-loss={curve[-1]:.4f}")
    os.makedirs(args.out, exist_ok=True)
    export_ensemble(learners, data.x_test, data.y_test, args.out)
    metrics.write_csv(
        os.path.join(args.out, "loss_curves.csv"),
        ("learner", "epoch", "loss"),
        [(k, e, loss) for k, curve in enumerate(curves) for e, loss in enumerate(curve)],
    )
    _write_manifest(
        args.out,
        "train",
        {
            "task": args.task,
            "learners": args.learners,
            "exits": args.exits,
            "widths": widths,
            "seed": args.seed,
            "epochs": cfg.epochs,
            "learning_rate": cfg.learning_rate,
            "batch_size": cfg.batch_size,
            "final_weight": cfg.final_weight,
        },
    )
    print(f"bundle written to {args.out}")
    return 0


def _trace_payload(trace: InferenceTrace, label: int) -> dict:
    return {
        "sample_index": trace.sample_index,
        "predicted_class": trace.predicted_class,
        "label": label,
        "decided_exit": trace.decided_exit,
        "forced": trace.forced,
        "f_m": trace.f_m,
        "f_mt": trace.f_mt,
        "confidence": trace.confidence,
        "stages": [
            {
                "exit_index": s.exit_index,
                "kind": s.outcome.kind.value,
                "pivot_rank": s.outcome.pivot_rank,
                "consensus_class": s.outcome.consensus_class,
                "supporters": list(s.outcome.supporters),
                "fm_contrib": s.fm_contrib,
                "fmt_contrib": s.fmt_contrib,
                "gate": None
                if s.gate is None
                else {
                    "exit": s.gate.exit,
                    "statistic": s.gate.statistic,
                    "sample_mean": s.gate.sample_mean,
                    "sample_sd": s.gate.sample_sd,
                    "n": s.gate.n,
                },
            }
            for s in trace.stages
        ],
    }


def cmd_infer(args) -> int:
    bundle = read_bundle(args.bundle)
    criterion = _criterion(args, _parse_tau(args.tau))
    traces, summary = infer_dataset(bundle, criterion)
    os.makedirs(args.out, exist_ok=True)

    with open(os.path.join(args.out, "traces.jsonl"), "w", encoding="ascii") as fh:
        for trace in traces:
            label = int(bundle.labels.y[trace.sample_index])
            fh.write(json.dumps(_trace_payload(trace, label), sort_keys=True) + "\n")

    usage = metrics.usage_report(traces, num_exits=bundle.tensor.E)
    summary_rows = [
        ("accuracy", summary.accuracy),
        ("mean_f_m", summary.mean_f_m),
        ("mean_f_mt", summary.mean_f_mt),
    ] + metrics.usage_rows(usage)
    metrics.write_csv(os.path.join(args.out, "summary.csv"), metrics.USAGE_HEADER, summary_rows)
    metrics.write_json(
        os.path.join(args.out, "summary.json"),
        {
            "accuracy": summary.accuracy,
            "mean_f_m": summary.mean_f_m,
            "mean_f_mt": summary.mean_f_mt,
            "n_samples": summary.n_samples,
            **metrics.usage_payload(usage),
        },
    )

    calibration = metrics.calibration_by_exit(traces, bundle.labels, num_bins=args.bins)
    metrics.write_csv(
        os.path.join(args.out, "calibration.csv"),
        metrics.CALIBRATION_HEADER,
        metrics.calibration_rows(calibration),
    )
    metrics.write_json(
        os.path.join(args.out, "calibration.json"),
        metrics.calibration_payload(calibration),
    )

    diversity = metrics.diversity_report(bundle.tensor)
    metrics.write_csv(
        os.path.join(args.out, "diversity.csv"),
        metrics.DIVERSITY_HEADER,
        metrics.diversity_rows(diversity),
    )
    metrics.write_json(
        os.path.join(args.out, "diversity.json"), metrics.diversity_payload(diversity)
    )

    figures.save_usage_figure(usage, os.path.join(args.out, "usage.png"))
    figures.save_calibration_figure(
        calibration, os.path.join(args.out, "calibration.png")
    )

    _write_manifest(
        args.out,
        "infer",
        {
            "bundle": args.bundle,
            "criterion": args.criterion,
            "tau": args.tau,
            "alpha": args.alpha,
            "bins": args.bins,
        },
    )
    print(
        f"accuracy={summary.accuracy:.4f} mean_f_m={summary.mean_f_m:.1f} "
        f"mean_f_mt={summary.mean_f_mt:.1f} over {summary.n_samples} samples"
    )
    return 0


def cmd_sweep(args) -> int:
    bundle = read_bundle(args.bundle)
    taus = []
    for part in args.tau.split(","):
        part = part.strip()
        if part:
            taus.append(float(part))
    if not taus:
        raise ConfigError("sweep needs a non-empty tau grid")
    kinds = {
        "mean": [CriterionKind.MEAN_CONFIDENCE],
        "ttest": [CriterionKind.TTEST_LCB],
        "both": [CriterionKind.MEAN_CONFIDENCE, CriterionKind.TTEST_LCB],
    }[args.criterion]

    criteria = []
    seen = set()
    for kind in kinds:
        for tau in taus:
            key = (kind, tau)
            if key not in seen:
                seen.add(key)
                criteria.append(ExitCriterion(kind=kind, tau_conf=tau, alpha=args.alpha))

    rows = metrics.sweep(bundle, criteria)
    os.makedirs(args.out, exist_ok=True)
    metrics.write_csv(
        os.path.join(args.out, "sweep.csv"), metrics.SWEEP_HEADER, metrics.sweep_rows(rows)
    )
    metrics.write_json(
        os.path.join(args.out, "sweep.json"),
        [dataclasses.asdict(r) for r in rows],
    )
    figures.save_sweep_figure(rows, os.path.join(args.out, "sweep.png"))
    _write_manifest(
        args.out,
        "sweep",
        {
            "bundle": args.bundle,
            "criterion": args.criterion,
            "tau": taus,
            "alpha": args.alpha,
        },
    )
    for row in rows:
        print(
            f"{row.criterion} tau={row.tau:g}: accuracy={row.accuracy:.4f} "
            f"mean_f_m={row.mean_f_m:.1f} mean_f_mt={row.mean_f_mt:.1f}"
        )
    return 0


def _search_overrides(args) -> dict[str, str]:
    return load_kv_config(args.config) if args.config else {}


def cmd_search(args) -> int:
    data = load_task_dir(args.task)
    overrides = _search_overrides(args)
    op_widths_text = overrides.get("op_widths", "8,16,24")
    menu = tuple(int(w) for w in op_widths_text.split(","))
    os.makedirs(args.out, exist_ok=True)

    supernet = build_supernet(data, [menu] * args.exits, seed=args.seed)
    phi, history = fit_posterior(
        supernet,
        iterations=int(overrides.get("elbo_iterations", 200)),
        eta=float(overrides.get("eta", 0.05)),
        beta_kl=float(overrides.get("beta_kl", 0.25)),
        cost_weight=float(overrides.get("cost_weight", 1e-3)),
        seed=args.seed,
        lambda_start=float(overrides.get("lambda_start", 1.0)),
        lambda_end=float(overrides.get("lambda_end", 0.1)),
    )
    metrics.write_csv(
        os.path.join(args.out, "posterior_history.csv"),
        ("iteration", "nll", "kl"),
        [(i, nll, kl) for i, (nll, kl) in enumerate(history)],
    )

    cfg = SVGDConfig(
        particle_count=args.particles,
        step_size=float(overrides.get("step_size", 0.1)),
        momentum=float(overrides.get("momentum", 0.9)),
        delta=args.delta,
        iterations=args.iters,
        seed=args.seed,
    )
    swarm = init_swarm(
        phi.flatten(), cfg.particle_count,
        spread=float(overrides.get("spread", 2.0)), seed=args.seed + 1,
    )
    swarm, trajectory = run_svgd(
        swarm, make_logits_posterior(phi), cfg,
        record_every=max(cfg.iterations // 50, 1),
    )
    dim = swarm[0].position.size
    metrics.write_csv(
        os.path.join(args.out, "trajectory.csv"),
        ("iteration", "particle") + tuple(f"x{d}" for d in range(dim)),
        [
            (it, p_idx) + tuple(float(v) for v in positions[p_idx])
            for it, positions in trajectory
            for p_idx in range(positions.shape[0])
        ],
    )

    archs = select_ensemble(swarm, supernet, args.ensemble_size)
    if len(archs) < args.ensemble_size:
        print(
            f"warning: only {len(archs)} distinct architectures found "
            f"(requested {args.ensemble_size})",
            file=sys.stderr,
        )
    # a valid bundle needs two voters: reuse the best architecture with a
    # fresh training seed when the swarm collapsed to a single one
    train_plan = list(archs)
    while len(train_plan) < 2:
        train_plan.append(archs[0])

    metrics.write_json(
        os.path.join(args.out, "architectures.json"),
        [
            {
                "ops": list(arch),
                "widths": list(supernet.materialize(arch)),
                "validation_nll": supernet.nll_of_discrete(arch),
                "macs": supernet.macs_of_discrete(arch),
            }
            for arch in archs
        ],
    )

    train_cfg = JointLossConfig(
        epochs=int(overrides.get("epochs", 150)),
        learning_rate=float(overrides.get("learning_rate", 0.05)),
        batch_size=int(overrides.get("batch_size", 32)),
    )
    learners = []
    for j, arch in enumerate(train_plan):
        learner = ToyLearner(
            data.task.dim, data.task.classes, supernet.materialize(arch),
            seed=args.seed + 100 + j,
        )
        train_joint(learner, data, dataclasses.replace(train_cfg, seed=args.seed + 200 + j))
        learners.append(learner)
    bundle_dir = os.path.join(args.out, "bundle")
    export_ensemble(learners, data.x_test, data.y_test, bundle_dir)

    _write_manifest(
        args.out,
        "search",
        {
            "task": args.task,
            "exits": args.exits,
            "ensemble_size": args.ensemble_size,
            "particles": args.particles,
            "iters": args.iters,
            "delta": args.delta,
            "seed": args.seed,
            "op_widths": list(menu),
            "architectures": [list(a) for a in train_plan],
            "overrides": overrides,
        },
    )
    print(f"search output written to {args.out} ({len(archs)} architectures)")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quorumexit",
        description="Quorum-voted early-exit ensemble inference and toy search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic task directory")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--train-samples", type=int, default=512)
    p.add_argument("--test-samples", type=int, default=256)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train an ensemble and export its bundle")
    p.add_argument("--task", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--learners", type=int, default=3)
    p.add_argument("--exits", type=int, default=2)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--config", default=None, help="key = value overrides file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run adaptive inference over a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--criterion", choices=("mean", "ttest"), default="ttest")
    p.add_argument("--tau", default="0.6", help="threshold or per-stage csv list")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--bins", type=int, default=metrics.DEFAULT_BINS)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("sweep", help="grid over thresholds and exit criteria")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--criterion", choices=("mean", "ttest", "both"), default="both")
    p.add_argument("--tau", default=",".join(str(t) for t in TAU_PRESETS))
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("search", help="full pipeline: posterior fit, sampling, training")
    p.add_argument("--task", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ensemble-size", type=int, default=3)
    p.add_argument("--exits", type=int, default=2)
    p.add_argument("--particles", type=int, default=16)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--delta", type=float, default=-1.3)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--config", default=None, help="key = value overrides file")
    p.set_defaults(func=cmd_search)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # deliberate catch-all: map failures to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
