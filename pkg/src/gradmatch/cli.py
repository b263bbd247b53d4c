"""Command-line front end: ``select``, ``train``, ``report`` and ``verify``.

Exit codes:
    0  success
    1  usage error (bad arguments, nothing to report)
    2  configuration error (invalid or missing config values, missing paths)
    3  numeric failure (non-convergence, non-finite loss, degenerate bank)
    4  missing or corrupt run records
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
THREADS_ENV = "GRADMATCH_THREADS"

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC, EXIT_RECORDS = 0, 1, 2, 3, 4


class ConfigError(Exception):
    pass


class RecordsError(Exception):
    pass


@dataclass
class DatasetSpec:
    source: str = "blobs"  # blobs | mnist | csv
    n_per_class: int = 500
    class_count: int = 2
    dim: int = 10
    class_sep: float = 2.0
    images_path: str | None = None
    labels_path: str | None = None
    csv_path: str | None = None
    imbalance: list | None = None  # [affected_fraction, removal_fraction]
    train_fraction: float = 0.8
    validation_fraction: float = 0.1
    data_seed: int = 0


@dataclass
class ModelSpec:
    arch: str = "logreg"
    hidden_width: int = 0
    init_seed: int = 0


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: dict = field(default_factory=lambda: {"epochs": 100})
    output_dir: str = "runs"
    seeds: list = field(default_factory=lambda: [0])
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        version = raw.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            ds = DatasetSpec(**raw.get("dataset", {}))
            model = ModelSpec(**raw.get("model", {}))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg = cls(ds, model, dict(raw.get("train", {"epochs": 100})),
                  raw.get("output_dir", "runs"), list(raw.get("seeds", [0])), version)
        cfg.validate()
        return cfg

    def validate(self):
        from .trainer import TrainConfig

        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.dataset.source not in ("blobs", "mnist", "csv"):
            raise ConfigError(f"unknown dataset source {self.dataset.source!r}")
        paths = {"mnist": ("images_path", "labels_path"), "csv": ("csv_path",)}.get(self.dataset.source, ())
        for name in paths:
            p = getattr(self.dataset, name)
            if p is None or not Path(p).exists():
                raise ConfigError(f"dataset.{name} does not exist: {p}")
        if self.model.arch not in ("logreg", "mlp"):
            raise ConfigError(f"unknown model arch {self.model.arch!r}")
        try:
            self.train_config(self.seeds[0])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train settings: {exc}") from None
        return self

    def train_config(self, seed):
        from .trainer import TrainConfig

        return TrainConfig(**{**self.train, "seed": int(seed)})


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig().validate()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(raw)


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    """Command-line flags win over file values."""
    train = dict(cfg.train)
    for flag, key in (("strategy", "strategy"), ("budget", "budget_fraction"),
                      ("warm_kappa", "warm_kappa"), ("epochs", "epochs")):
        value = getattr(args, flag, None)
        if value is not None:
            train[key] = value
    for flag, key in (("per_batch", "per_batch"), ("is_valid", "is_valid")):
        if getattr(args, flag, False):
            train[key] = True
    seeds = cfg.seeds
    if getattr(args, "seed", None) is not None:
        seeds = [args.seed]
    out = replace(cfg, train=train, seeds=list(seeds))
    if getattr(args, "output", None):
        out.output_dir = args.output
    return out.validate()


def build_data(spec: DatasetSpec):
    from .data import (SplitSpec, induce_class_imbalance, load_csv, load_mnist_idx,
                       make_gaussian_blobs, split)

    if spec.source == "blobs":
        d = make_gaussian_blobs(spec.n_per_class, spec.class_count, spec.dim, spec.class_sep, spec.data_seed)
    elif spec.source == "mnist":
        d = load_mnist_idx(spec.images_path, spec.labels_path)
    else:
        d = load_csv(spec.csv_path)
    tr, va, te = split(d, SplitSpec(spec.train_fraction, spec.validation_fraction, spec.data_seed))
    if spec.imbalance:
        tr = induce_class_imbalance(tr, spec.imbalance[0], spec.imbalance[1], spec.data_seed)
    return tr, va, te


def build_model(spec: ModelSpec, train_d, checkpoint=None):
    from .models import init_model, load_checkpoint

    if checkpoint:
        return load_checkpoint(checkpoint)
    return init_model(spec.arch, train_d.n_features, train_d.class_count, spec.hidden_width, spec.init_seed)


def _set_threads():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return
    # only effective if numpy's BLAS has not started its pool yet
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, n)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_select(args) -> int:
    from .bank import build_per_sample
    from .selectors import SelectorConfig, select
    from .trainer import alignment_diagnostic, budget_size

    cfg = apply_overrides(load_config(args.config), args)
    tr, va, te = build_data(cfg.dataset)
    model = build_model(cfg.model, tr, args.checkpoint)
    tc = cfg.train_config(cfg.seeds[0])
    k = budget_size(tc.budget_fraction, tr.n_samples) if args.k is None else args.k
    eps = tc.epsilon if args.epsilon is None else args.epsilon
    sel_cfg = SelectorConfig(k, tc.lam, eps, tc.per_batch, tc.batch_size, tc.per_class, tc.is_valid)
    sel = select(tc.strategy, model, (tr, va), sel_cfg, tc.seed)
    out = sel.to_json()
    diagnostics = {"residual": None if math.isnan(sel.residual) else sel.residual}
    if len(sel):
        bank = build_per_sample(model, tr, va, tc.is_valid)
        try:
            diag = alignment_diagnostic(bank, sel)
            diagnostics.update(alignment_dot=diag.dot, alignment_cos=diag.cos_angle)
        except Exception:  # zero gradients at init are possible; diagnostics are optional
            pass
    out["diagnostics"] = diagnostics
    text = _dump(out)
    if args.output_file:
        Path(args.output_file).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def cmd_train(args) -> int:
    from .trainer import train

    cfg = apply_overrides(load_config(args.config), args)
    tr, va, te = build_data(cfg.dataset)
    model0 = build_model(cfg.model, tr)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(_dump(cfg.to_dict()))
    finals = []
    for seed in cfg.seeds:
        tc = cfg.train_config(seed)
        ckpt = out_dir / f"seed_{seed}" / "checkpoints" if args.checkpoints else None
        _, record = train(tc, (tr, va, te), model0, checkpoint_dir=ckpt)
        record.save(out_dir / f"seed_{seed}")
        finals.append(record.final)
    acc_mean, acc_std = _mean_std(f["final_accuracy"] for f in finals)
    time_mean, time_std = _mean_std(f["total_time_s"] for f in finals)
    summary = {
        "config": cfg.to_dict(),
        "tag": finals[0]["tag"],
        "strategy": finals[0]["strategy"],
        "budget_fraction": finals[0]["budget_fraction"],
        "seeds": list(cfg.seeds),
        "final_accuracy": acc_mean,
        "final_accuracy_std": acc_std,
        "total_time_s": time_mean,
        "total_time_s_std": time_std,
        "mean_grad_error": _mean_std(f["mean_grad_error"] for f in finals)[0],
        "redundancy_pct": _mean_std(f["redundancy_pct"] for f in finals)[0],
        "selection_performed": any(f["selection_performed"] for f in finals),
    }
    if not summary["selection_performed"]:
        summary["note"] = "no selection performed"
    (out_dir / "summary.json").write_text(_dump(summary))
    print(f"{summary['tag']}: accuracy {acc_mean:.4f} +/- {acc_std:.4f} over {len(finals)} seed(s) -> {out_dir}")
    return EXIT_OK


def _load_summary(run_dir: Path) -> dict:
    path = run_dir / "summary.json"
    try:
        summary = json.loads(path.read_text())
    except FileNotFoundError:
        raise RecordsError(f"missing {path}") from None
    except json.JSONDecodeError:
        raise RecordsError(f"corrupt {path}") from None
    for key in ("strategy", "budget_fraction", "final_accuracy", "total_time_s"):
        if key not in summary:
            raise RecordsError(f"{path} lacks {key!r}")
    return summary


def cmd_report(args) -> int:
    from .metrics import scatter_csv, summaries_table, summarize, to_csv, to_markdown

    if not args.run_dirs:
        print("report: at least one run directory is required", file=sys.stderr)
        return EXIT_USAGE
    dirs, seen = [], set()
    for d in args.run_dirs:
        key = Path(d).resolve()
        if key not in seen:
            seen.add(key)
            dirs.append(Path(d))
    summaries = {d: _load_summary(d) for d in dirs}
    full = [s for s in summaries.values() if s["strategy"] == "full"]
    if args.full:
        reference = _load_summary(Path(args.full))
    elif full:
        reference = full[0]
    else:
        print("report: no full-training run to compare against (pass --full)", file=sys.stderr)
        return EXIT_USAGE
    rows = [summarize(s, reference, run=str(d)) for d, s in summaries.items()]
    table = summaries_table(rows)
    out = Path(args.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(to_csv(table))
    (out / "summary.md").write_text(to_markdown(table))
    (out / "scatter.csv").write_text(scatter_csv(rows))
    sys.stdout.write(to_markdown(table))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .bank import GradientBank
    from .metrics import brute_force_verifier

    rng = np.random.default_rng(args.seed)
    failures = 0
    for trial in range(args.trials):
        rows = rng.standard_normal((args.n, args.d))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        bank = GradientBank(rows, rng.standard_normal(args.d))
        res = brute_force_verifier(bank, args.k, args.lam, with_gamma=args.n <= 6)
        factor_ok = res.omp_F >= res.approximation_factor * res.optimum_F - 1e-9
        gamma_ok = math.isnan(res.gamma_hat) or res.gamma_hat >= res.bound - 1e-9
        ok = factor_ok and gamma_ok
        failures += not ok
        print(f"trial {trial}: optimum_F={res.optimum_F:.6g} omp_F={res.omp_F:.6g} "
              f"gamma_hat={res.gamma_hat:.4g} bound={res.bound:.4g} {'ok' if ok else 'FAIL'}")
    print(f"{args.trials - failures}/{args.trials} instances satisfy the greedy guarantees")
    return EXIT_OK if failures == 0 else EXIT_NUMERIC


# ---------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy", choices=["gradmatch", "craig", "glister", "random", "full"])
    p.add_argument("--budget", type=float, help="budget fraction in (0, 1]")
    p.add_argument("--per-batch", action="store_true")
    p.add_argument("--warm-kappa", type=float)
    p.add_argument("--is-valid", action="store_true")
    p.add_argument("--epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradmatch", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="run one selection round")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--k", type=int, help="absolute budget (overrides --budget)")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--output-file", "-o")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="train one run per seed")
    _add_common(p)
    p.add_argument("--output", help="run directory")
    p.add_argument("--checkpoints", action="store_true", help="save the model at each selection epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="tables and scatter data from run directories")
    p.add_argument("run_dirs", nargs="*")
    p.add_argument("--full", help="full-training run directory to compare against")
    p.add_argument("--output", help="directory for CSV/Markdown outputs")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="exhaustive check of the greedy guarantees on random banks")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    from .errors import DegenerateBank, NoConvergence, NonFiniteGradient, NonFiniteLoss, ZeroGradient

    _set_threads()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoConvergence, NonFiniteLoss, NonFiniteGradient, DegenerateBank, ZeroGradient) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        if isinstance(exc, NonFiniteLoss):
            print(json.dumps(exc.diagnostics, default=str), file=sys.stderr)
        return EXIT_NUMERIC
    except RecordsError as exc:
        print(f"records error: {exc}", file=sys.stderr)
        return EXIT_RECORDS


if __name__ == "__main__":
    sys.exit(main())
