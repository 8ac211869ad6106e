"""Command-line front end.

Subcommands::

    train      run an experiment spec (method x seed sweep) and summarize
    dynamics   emit the collapse/recovery scenario curves as CSV
    coverage   teacher-forced Top-K recall table for a generated tree
    gradcheck  finite-difference verification of every analytic gradient
    summarize  aggregate per-cell metrics into a per-method mean/std table

Specs are JSON files (see README for the schema). Exit codes: 0 success,
2 malformed config, 3 I/O failure. ``ANCHORLAB_SEED`` overrides the spec's
seed list for smoke tests; an explicit ``--seeds`` flag wins over both.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from .anchor import build_anchor, grad_anchor_ratio
from .env import EnvConfig, generate_tree, oracle_coverage
from .gradients import (
    finite_diff,
    grad_log_prob,
    grad_prob,
    grad_support_mass,
    max_relative_error,
)
from .metrics import (
    METRIC_FIELD_NAMES,
    read_metrics_csv,
    write_metrics_csv,
)
from .objectives import MethodConfig, kl_penalty, method_token_update
from .policy import softmax
from .trainer import TrainConfig, run_experiment, write_steps_jsonl

GRADCHECK_TOLERANCE = 1e-6


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    name: str
    env: EnvConfig
    methods: list[MethodConfig]
    seeds: list[int]
    train: dict
    output_dir: str | None = None
    # env.seed == null in the JSON: each cell generates its own tree from
    # the cell's training seed instead of sharing one fixed tree.
    env_seed_follows_cell: bool = False


_TRAIN_KEYS = (
    "total_steps",
    "groups_per_step",
    "inner_epochs",
    "eval_every",
    "eval_samples_k",
    "support_k",
)


def spec_from_dict(data: dict) -> ExperimentSpec:
    try:
        name = data["name"]
        env_data = dict(data["env"])
        follows_cell = env_data.get("seed", 0) is None
        if follows_cell:
            env_data["seed"] = 0
        env = EnvConfig(**env_data)
        methods = [MethodConfig(**m) for m in data["methods"]]
        seeds = [int(s) for s in data["seeds"]]
        train = dict(data.get("train", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if not seeds:
        raise ConfigError("seeds must be nonempty")
    names = [m.method for m in methods]
    if len(set(names)) != len(names):
        raise ConfigError(f"method names must be unique, got {names}")
    unknown = set(train) - set(_TRAIN_KEYS)
    if unknown:
        raise ConfigError(f"unknown train keys: {sorted(unknown)}")
    return ExperimentSpec(
        name=str(name),
        env=env,
        methods=methods,
        seeds=seeds,
        train=train,
        output_dir=data.get("output_dir"),
        env_seed_follows_cell=follows_cell,
    )


def spec_to_dict(spec: ExperimentSpec) -> dict:
    env = asdict(spec.env)
    if spec.env_seed_follows_cell:
        env["seed"] = None
    out = {
        "name": spec.name,
        "env": env,
        "methods": [asdict(m) for m in spec.methods],
        "seeds": list(spec.seeds),
        "train": dict(spec.train),
    }
    if spec.output_dir is not None:
        out["output_dir"] = spec.output_dir
    return out


def load_spec(path) -> ExperimentSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return spec_from_dict(data)


def _timestamp(args) -> str | None:
    if args.no_timestamp:
        return None
    return datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# gradcheck


def gradient_check_suite(n_cases: int = 1000, seed: int = 0) -> dict[str, float]:
    """Max relative error of every analytic gradient vs central differences.

    Cases cycle through V in {2, 4, 8, 32} with random logits, targets,
    anchor sets, and advantages. Method surrogates are checked on their
    unclipped branches only, away from the clip boundary.
    """
    rng = np.random.default_rng(seed)
    sizes = (2, 4, 8, 32)
    h = 1e-5
    worst: dict[str, float] = {}

    def track(name: str, analytic, numeric) -> None:
        err = max_relative_error(analytic, numeric)
        if err > worst.get(name, 0.0):
            worst[name] = err

    for case in range(n_cases):
        v = sizes[case % len(sizes)]
        z = rng.normal(0.0, 1.5, size=v)
        dist = softmax(z)
        old = softmax(rng.normal(0.0, 1.5, size=v))
        ref = softmax(rng.normal(0.0, 1.0, size=v))
        target = int(rng.integers(v))
        set_size = int(rng.integers(1, v + 1))
        members = tuple(int(i) for i in rng.choice(v, size=set_size, replace=False))
        advantage = float(rng.normal(0.0, 1.5))

        track("grad_log_prob", grad_log_prob(dist, target),
              finite_diff(lambda zz: np.log(softmax(zz)[target]), z, h))
        track("grad_prob", grad_prob(dist, target),
              finite_diff(lambda zz: softmax(zz)[target], z, h))
        track("grad_support_mass", grad_support_mass(dist, members),
              finite_diff(lambda zz: float(softmax(zz)[list(members)].sum()), z, h))
        track("kl_penalty", kl_penalty(dist, ref)[1],
              finite_diff(lambda zz: kl_penalty(softmax(zz), ref)[0], z, h))

        k = int(rng.integers(1, v + 1))
        err_token = int(rng.integers(v))
        try:
            anch = build_anchor(ref, dist, err_token, k)
        except ValueError:
            anch = None
        if anch is not None:
            idx = list(anch.anchor_set)
            zm = anch.z_ref_mass
            track("grad_anchor_ratio", grad_anchor_ratio(dist, anch),
                  finite_diff(lambda zz: float(softmax(zz)[idx].sum()) / zm, z, h))

        for method in ("grpo", "grpo_kl", "grpo_kl_error_only", "nsr", "apo"):
            cfg = MethodConfig(method=method, anchor_k=max(1, min(8, v - 1)))

            def surrogate(zz, c=cfg):
                return method_token_update(softmax(zz), old, ref, target, advantage, c).surrogate_value

            update = method_token_update(dist, old, ref, target, advantage, cfg)
            if update.clipped:
                continue
            ratio = float(dist[target] / old[target])
            if method == "apo" and advantage < 0:
                ratio = update.surrogate_value / advantage  # recover rectified ratio
            if min(abs(ratio - (1 - cfg.clip_eps)), abs(ratio - (1 + cfg.clip_eps))) < 1e-3:
                continue  # too close to the clip kink for central differences
            if method == "nsr" and advantage >= 0:
                continue
            track(f"surrogate_{method}", update.gradient, finite_diff(surrogate, z, h))
    return worst


# ---------------------------------------------------------------------------
# subcommands


def _run_cell(spec: ExperimentSpec, method: MethodConfig, seed: int, out_root: Path,
              timestamp: str | None) -> Path:
    env = spec.env
    if spec.env_seed_follows_cell:
        env = replace(env, seed=seed)
    cfg = TrainConfig(
        method_config=method,
        env=env,
        seed=seed,
        **spec.train,
    )
    records, stats = run_experiment(cfg)
    cell_dir = out_root / spec.name / method.method / str(seed)
    cell_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(records, cell_dir / "metrics.csv", timestamp)
    write_steps_jsonl(stats, cell_dir / "steps.jsonl")
    return cell_dir


def _summary_rows(spec: ExperimentSpec, out_root: Path) -> list[str]:
    stat_fields = [f for f in METRIC_FIELD_NAMES if f not in ("step", "eval_k")]
    header = ["method", "seeds"]
    for name in stat_fields:
        header += [f"{name}_mean", f"{name}_std"]
    rows = [",".join(header)]
    for method in spec.methods:
        finals = []
        for seed in spec.seeds:
            path = out_root / spec.name / method.method / str(seed) / "metrics.csv"
            records = read_metrics_csv(path)
            finals.append(records[-1])
        row = [method.method, str(len(finals))]
        for name in stat_fields:
            values = np.array([getattr(r, name) for r in finals], dtype=np.float64)
            row += [repr(float(values.mean())), repr(float(values.std()))]
        rows.append(",".join(row))
    return rows


def _write_summary(spec: ExperimentSpec, out_root: Path, timestamp: str | None) -> Path:
    rows = _summary_rows(spec, out_root)
    path = out_root / spec.name / "summary.csv"
    with open(path, "w", encoding="ascii", newline="") as fh:
        if timestamp is not None:
            fh.write(f"# generated {timestamp}\n")
        fh.write("\n".join(rows) + "\n")
    return path


def _resolve_seeds(spec: ExperimentSpec, args) -> list[int]:
    if args.seeds:
        return [int(s) for s in args.seeds.split(",")]
    env_seed = os.environ.get("ANCHORLAB_SEED")
    if env_seed is not None:
        return [int(env_seed)]
    return spec.seeds


def cmd_train(args) -> int:
    spec = load_spec(args.spec)
    spec.seeds = _resolve_seeds(spec, args)
    out_root = Path(args.out or spec.output_dir or "results")
    timestamp = _timestamp(args)
    cells = [(m, s) for m in spec.methods for s in spec.seeds]
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(_run_cell, spec, m, s, out_root, timestamp) for m, s in cells
            ]
            for fut in futures:
                fut.result()
    else:
        for m, s in cells:
            _run_cell(spec, m, s, out_root, timestamp)
    summary = _write_summary(spec, out_root, timestamp)
    print(f"wrote {len(cells)} cells under {out_root / spec.name}; summary: {summary}")
    return 0


def cmd_summarize(args) -> int:
    spec = load_spec(args.spec)
    if args.seeds:
        spec.seeds = [int(s) for s in args.seeds.split(",")]
    out_root = Path(args.out or spec.output_dir or "results")
    path = _write_summary(spec, out_root, _timestamp(args))
    for row in _summary_rows(spec, out_root):
        print(row)
    print(f"summary: {path}")
    return 0


def cmd_coverage(args) -> int:
    if args.spec:
        env = load_spec(args.spec).env
    else:
        env = EnvConfig(args.depth, args.branching, args.leaves,
                        args.concentration, args.noise, args.seed)
    tree = generate_tree(env)
    ks = sorted(int(k) for k in args.k_values.split(","))
    table = oracle_coverage(tree, tree.ref_policy, ks)
    print("K,recall,loss_rate")
    lines = ["K,recall,loss_rate"]
    for k in ks:
        line = f"{k},{table[k]!r},{1.0 - table[k]!r}"
        print(line)
        lines.append(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "coverage.csv").write_text("\n".join(lines) + "\n", encoding="ascii")
    return 0


def cmd_gradcheck(args) -> int:
    worst = gradient_check_suite(args.cases, args.seed)
    failed = False
    for name in sorted(worst):
        status = "ok" if worst[name] < GRADCHECK_TOLERANCE else "FAIL"
        failed = failed or status == "FAIL"
        print(f"{name}: max_rel_err={worst[name]:.3e} [{status}]")
    if failed:
        print(f"error: gradcheck: at least one kernel exceeded {GRADCHECK_TOLERANCE}")
        return 1
    return 0


def cmd_dynamics(args) -> int:
    rng = np.random.default_rng(args.seed)
    reports = []

    uniform = np.zeros(4)
    rep = dyn.DynamicsReport("passive_suppression")
    for i, adv in enumerate((0.25, 0.5, 1.0, 2.0)):
        rep.add(i, "advantage", adv)
        rep.add(i, "delta_z_valid", dyn.passive_suppression_step(uniform, 0, 1, adv, 0.1))
    reports.append(rep)

    reports.append(
        dyn.vanishing_recovery_sweep(np.logspace(-6, -0.5, 12), penalty=1.0, eta=0.1)
    )
    reports.append(
        dyn.redistribution_compare([0.6, 0.25, 0.1, 0.04, 0.01], 0, {1, 2})
    )

    bandit_logits = np.array([1.0, 1.0, 0, 0, 0, 0, 0, 0])
    for method in ("grpo", "apo"):
        cfg = MethodConfig(method=method, anchor_k=4)
        reports.append(
            dyn.collapse_trajectory(
                bandit_logits, {0, 1}, cfg, args.steps,
                np.random.default_rng(rng.integers(2**32)),
            )
        )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dyn.write_reports_csv(reports, out / "dynamics.csv")
    print(f"wrote {out / 'dynamics.csv'} ({sum(len(r.records) for r in reports)} records)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchorlab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run an experiment spec")
    p_train.add_argument("--spec", required=True)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--seeds", default=None, help="comma-separated seed list")
    p_train.add_argument("--no-timestamp", action="store_true")
    p_train.add_argument("--jobs", type=int, default=1)
    p_train.set_defaults(func=cmd_train)

    p_sum = sub.add_parser("summarize", help="aggregate metrics.csv files")
    p_sum.add_argument("--spec", required=True)
    p_sum.add_argument("--out", default=None)
    p_sum.add_argument("--seeds", default=None)
    p_sum.add_argument("--no-timestamp", action="store_true")
    p_sum.set_defaults(func=cmd_summarize)

    p_cov = sub.add_parser("coverage", help="teacher-forced Top-K recall table")
    p_cov.add_argument("--spec", default=None)
    p_cov.add_argument("--k-values", default="1,4,8")
    p_cov.add_argument("--depth", type=int, default=4)
    p_cov.add_argument("--branching", type=int, default=8)
    p_cov.add_argument("--leaves", type=int, default=8)
    p_cov.add_argument("--concentration", type=float, default=1.5)
    p_cov.add_argument("--noise", type=float, default=0.5)
    p_cov.add_argument("--seed", type=int, default=0)
    p_cov.add_argument("--out", default=None)
    p_cov.set_defaults(func=cmd_coverage)

    p_grad = sub.add_parser("gradcheck", help="finite-difference verification")
    p_grad.add_argument("--cases", type=int, default=1000)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_dyn = sub.add_parser("dynamics", help="collapse/recovery scenario curves")
    p_dyn.add_argument("--out", default="results/dynamics")
    p_dyn.add_argument("--seed", type=int, default=0)
    p_dyn.add_argument("--steps", type=int, default=400)
    p_dyn.set_defaults(func=cmd_dynamics)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}")
        return 2
    except OSError as exc:
        print(f"error: io: {exc}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
