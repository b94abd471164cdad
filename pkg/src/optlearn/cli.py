"""Command-line pipeline: generate -> tune -> train -> eval -> report.

Every stage reads a flat key = value config file (overridable with flags),
fans all randomness out of one master seed through a documented hash
(util.derive_seed), and embeds the config hash and master seed in every
artifact it writes, so reruns with the same seed are byte-identical.

Exit codes: 0 success, 1 validation error (bad config, missing
artifacts), 2 runtime failure.
"""

import argparse
import itertools
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import evaluation as ev
from . import gps
from . import objectives as obj
from . import policy as pol
from .util import config_hash, derive_rng, derive_seed

DEFAULT_TRAIN_COUNTS = {obj.LOGISTIC: 90, obj.ROBUST_REG: 120, obj.NEURAL_NET: 80}


class ConfigError(ValueError):
    """Invalid configuration or missing prerequisite artifact."""


@dataclass
class ExperimentConfig:
    family: str = obj.LOGISTIC
    train_count: int = 0              # 0 -> family default (90/120/80)
    test_count: int = 100
    horizon_train: int = 40
    horizon_eval: int = 100
    samples_per_instance: int = 20
    history: int = 25
    master_seed: int = 0
    gps_iterations: int = 20
    trust_region_eps: float = 1.0
    entropy_coeff_init: float = 1e-3
    entropy_coeff_factor: float = 1.5
    entropy_coeff_cap: float = 1.0
    supervised_epochs: int = 200
    supervised_lr: float = 1e-3
    hidden_units: int = 50
    include_current_grad: bool = True
    step_size_grid: tuple = bl.STEP_SIZE_GRID
    momentum_decay_grid: tuple = bl.MOMENTUM_DECAY_GRID
    jobs: int = 1
    out: str = "runs/default"

    def resolved_train_count(self):
        return self.train_count or DEFAULT_TRAIN_COUNTS[self.family]

    def hash(self):
        """Provenance hash over everything that affects results (not paths
        or worker counts)."""
        payload = asdict(self)
        payload.pop("out")
        payload.pop("jobs")
        return config_hash(payload)

    def provenance(self):
        return f"config_hash={self.hash()} master_seed={self.master_seed}"

    def validate(self):
        if self.family not in obj.FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        for name in ("test_count", "horizon_train", "horizon_eval",
                     "samples_per_instance", "history", "hidden_units",
                     "supervised_epochs", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.train_count < 0:
            raise ConfigError("train_count must be non-negative")
        if self.resolved_train_count() < 1:
            raise ConfigError("train_count must be at least 1")
        if self.gps_iterations < 0:
            raise ConfigError("gps_iterations must be non-negative")
        if self.trust_region_eps <= 0:
            raise ConfigError("trust_region_eps must be positive")
        if not self.step_size_grid or not self.momentum_decay_grid:
            raise ConfigError("hyperparameter grids must be non-empty")
        return self


_BOOL_STRINGS = {"true": True, "false": False, "1": True, "0": False,
                 "yes": True, "no": False}


def _coerce(name, raw, target):
    try:
        if isinstance(target, bool):
            return _BOOL_STRINGS[raw.strip().lower()]
        if isinstance(target, int):
            return int(raw)
        if isinstance(target, float):
            return float(raw)
        if isinstance(target, tuple):
            return tuple(float(v) for v in raw.split(","))
        return raw.strip()
    except (ValueError, KeyError):
        raise ConfigError(f"cannot parse value {raw!r} for key {name!r}")


def load_config(path=None, overrides=None):
    """Resolve defaults <- config file <- CLI overrides, then validate."""
    cfg = ExperimentConfig()
    known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    if path is not None:
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            setattr(cfg, key, _coerce(key, raw, known[key]))
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()


# --------------------------------------------------------------- artifacts

def _instances_dir(cfg):
    return Path(cfg.out) / "instances"


def _tuned_dir(cfg):
    return Path(cfg.out) / "tuned"


def _checkpoint_dir(cfg):
    return Path(cfg.out) / "checkpoints"


def _report_dir(cfg):
    return Path(cfg.out) / "report"


def _instance_path(cfg, role, index):
    return _instances_dir(cfg) / f"{role}_{index:03d}.json"


def _load_instances(cfg, role, count):
    paths = [_instance_path(cfg, role, i) for i in range(count)]
    missing = [p for p in paths if not p.exists()]
    if missing:
        raise ConfigError(f"missing {role} instances under {_instances_dir(cfg)}; "
                          "run 'generate' first")
    return [obj.load_instance(p) for p in paths]


def _train_x0s(cfg, count):
    dim = _param_dim(cfg)
    return [derive_rng(cfg.master_seed, "x0", "train", j).standard_normal(dim)
            for j in range(count)]


def _test_x0s(cfg, count):
    dim = _param_dim(cfg)
    return [derive_rng(cfg.master_seed, "x0", "test", j).standard_normal(dim)
            for j in range(count)]


def _param_dim(cfg):
    if cfg.family == obj.NEURAL_NET:
        return obj.NN_HIDDEN * obj.NN_DIM + obj.NN_HIDDEN \
            + obj.NN_CLASSES * obj.NN_HIDDEN + obj.NN_CLASSES
    return 4  # d=3 plus bias for the linear-model families


def _gps_config(cfg):
    return gps.GPSConfig(
        iterations=cfg.gps_iterations,
        samples_per_instance=cfg.samples_per_instance,
        horizon=cfg.horizon_train,
        history=cfg.history,
        trust_region_eps=cfg.trust_region_eps,
        entropy_coeff_init=cfg.entropy_coeff_init,
        entropy_coeff_factor=cfg.entropy_coeff_factor,
        entropy_coeff_cap=cfg.entropy_coeff_cap,
        supervised_epochs=cfg.supervised_epochs,
        supervised_lr=cfg.supervised_lr,
        hidden_units=cfg.hidden_units,
        include_current_grad=cfg.include_current_grad,
        momentum_grid=tuple(itertools.product(cfg.step_size_grid,
                                              cfg.momentum_decay_grid)),
        seed=cfg.master_seed,
    )


def _method_grid(cfg, method):
    if method == bl.MOMENTUM:
        return [bl.BaselineConfig(method, step_size=s, momentum_decay=m)
                for s, m in itertools.product(cfg.step_size_grid,
                                              cfg.momentum_decay_grid)]
    if method == bl.GD:
        return [bl.BaselineConfig(method, step_size=s) for s in cfg.step_size_grid]
    return [bl.BaselineConfig(method, step_size=s, line_search=bl.LS_NONE)
            for s in cfg.step_size_grid]


# -------------------------------------------------------------- subcommands

def cmd_generate(cfg):
    """Write the train and test objective-instance files."""
    out = _instances_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    gen = obj.GENERATORS[cfg.family]
    extra = {"config_hash": cfg.hash(), "master_seed": cfg.master_seed}
    counts = {"train": cfg.resolved_train_count(), "test": cfg.test_count}
    for role, count in counts.items():
        for i in range(count):
            seed = derive_seed(cfg.master_seed, "gen", cfg.family, role, i)
            obj.save_instance(gen(seed), _instance_path(cfg, role, i), extra=extra)
    print(f"generated {counts['train']} train + {counts['test']} test "
          f"{cfg.family} instances under {out}")
    return 0


def cmd_tune(cfg):
    """Grid-search every baseline on the training set and persist the picks."""
    train_set = _load_instances(cfg, "train", cfg.resolved_train_count())
    x0s = _train_x0s(cfg, len(train_set))
    tuned_dir = _tuned_dir(cfg)
    tuned_dir.mkdir(parents=True, exist_ok=True)
    extra = {"config_hash": cfg.hash(), "master_seed": cfg.master_seed}
    for method in bl.METHODS:
        best = bl.grid_search(method, train_set, _method_grid(cfg, method),
                              cfg.horizon_train, x0s, jobs=cfg.jobs)
        bl.save_config(best, cfg.family, tuned_dir / f"{method}.json", extra=extra)
        print(f"tuned {method}: step_size={best.step_size} "
              f"momentum_decay={best.momentum_decay}")
    return 0


def _save_gps_state(state, path, cfg):
    rec = {
        "next_iteration": state.next_iteration,
        "trust_eps": state.trust_eps,
        "consecutive_failures": state.consecutive_failures,
        "policy": {
            "W1": state.policy.w1.tolist(), "b1": state.policy.b1.tolist(),
            "W2": state.policy.w2.tolist(), "b2": state.policy.b2.tolist(),
            "log_var": state.policy.log_var.tolist(),
        },
        "controllers": [
            {"K": c.K.tolist(), "k": c.k.tolist(), "sigma": c.sigma.tolist()}
            for c in state.controllers
        ],
        "config_hash": cfg.hash(),
        "master_seed": cfg.master_seed,
    }
    with open(path, "w") as fh:
        json.dump(rec, fh, sort_keys=True)
        fh.write("\n")


def _load_gps_state(path):
    with open(path) as fh:
        rec = json.load(fh)
    params = pol.PolicyParams(
        w1=np.asarray(rec["policy"]["W1"], dtype=float),
        b1=np.asarray(rec["policy"]["b1"], dtype=float),
        w2=np.asarray(rec["policy"]["W2"], dtype=float),
        b2=np.asarray(rec["policy"]["b2"], dtype=float),
        log_var=np.asarray(rec["policy"]["log_var"], dtype=float),
    )
    controllers = [gps.LinearGaussianController(
        K=np.asarray(c["K"], dtype=float),
        k=np.asarray(c["k"], dtype=float),
        sigma=np.asarray(c["sigma"], dtype=float)) for c in rec["controllers"]]
    return gps.GPSState(next_iteration=rec["next_iteration"], policy=params,
                        controllers=controllers, trust_eps=rec["trust_eps"],
                        consecutive_failures=rec["consecutive_failures"])


def _write_training_log(metrics, path, provenance):
    cols = ("iteration", "mean_cost", "mean_kl", "entropy_coeff",
            "supervised_loss", "mean_log_var", "regression_pairs",
            "augmented_pairs", "discarded")
    with open(path, "w") as fh:
        fh.write(f"# {provenance}\n")
        fh.write(",".join(cols) + "\n")
        for row in metrics:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float)
                              else str(row[c]) for c in cols) + "\n")


def cmd_train(cfg, resume=None):
    """Run guided policy search; checkpoint the policy every round."""
    train_set = _load_instances(cfg, "train", cfg.resolved_train_count())
    ckpt_dir = _checkpoint_dir(cfg)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    gps_cfg = _gps_config(cfg)
    state = None
    if resume is not None:
        resume_path = Path(resume)
        if not resume_path.exists():
            raise ConfigError(f"resume state {resume_path} does not exist")
        state = _load_gps_state(resume_path)
        print(f"resuming from round {state.next_iteration}")

    def checkpoint(st, row):
        meta = {"gps_iteration": row["iteration"],
                "entropy_coeff": row["entropy_coeff"],
                "config_hash": cfg.hash(), "master_seed": cfg.master_seed}
        pol.save_policy(st.policy,
                        ckpt_dir / f"policy_iter_{row['iteration']:03d}.json",
                        metadata=meta)
        _save_gps_state(st, ckpt_dir / "gps_state.json", cfg)
        print(f"round {row['iteration']}: mean_cost={row['mean_cost']:.4f} "
              f"mean_kl={row['mean_kl']:.3f} sup_loss={row['supervised_loss']:.4f}")

    params, metrics, _ = gps.gps_train(train_set, gps_cfg, state=state,
                                       iteration_callback=checkpoint)
    meta = {"gps_iteration": cfg.gps_iterations, "entropy_coeff":
            metrics[-1]["entropy_coeff"] if metrics else cfg.entropy_coeff_init,
            "config_hash": cfg.hash(), "master_seed": cfg.master_seed}
    pol.save_policy(params, ckpt_dir / "policy_final.json", metadata=meta)
    if metrics:
        _write_training_log(metrics, ckpt_dir / "training_log.csv", cfg.provenance())
    print(f"saved final policy to {ckpt_dir / 'policy_final.json'}")
    return 0


def cmd_eval(cfg, checkpoint=None):
    """Benchmark the trained policy against the tuned baselines."""
    ckpt = Path(checkpoint) if checkpoint else _checkpoint_dir(cfg) / "policy_final.json"
    if not ckpt.exists():
        raise ConfigError(f"policy checkpoint {ckpt} does not exist; run 'train'")
    tuned = {}
    for method in bl.METHODS:
        path = _tuned_dir(cfg) / f"{method}.json"
        if not path.exists():
            raise ConfigError(f"missing tuned config {path}; run 'tune' first")
        tuned[method], _ = bl.load_config(path)
    test_set = _load_instances(cfg, "test", cfg.test_count)
    params, _ = pol.load_policy(ckpt)

    report = ev.evaluate(params, tuned, test_set, cfg.horizon_eval,
                         _test_x0s(cfg, len(test_set)), history=cfg.history,
                         include_current_grad=cfg.include_current_grad,
                         jobs=cfg.jobs,
                         metadata={"config_hash": cfg.hash(),
                                   "master_seed": cfg.master_seed,
                                   "horizon": cfg.horizon_eval,
                                   "family": cfg.family})

    rep_dir = _report_dir(cfg)
    traces_dir = rep_dir / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    ev.write_summary_csv(report, rep_dir / "summary.csv", cfg.provenance())
    ev.write_instance_traces(report, traces_dir, cfg.provenance())

    included = [i for i in range(len(test_set)) if i not in report.excluded]
    summary = {
        "algorithms": report.algorithms,
        "excluded_instances": report.excluded,
        "excluded_count": len(report.excluded),
        "diverged_counts": {name: int(report.diverged[name].sum())
                            for name in report.algorithms},
        "capped_margins": report.capped_margins,
        "mean_final_objective": {
            name: float(np.mean(report.values[name][included, -1]))
            for name in report.algorithms},
        "final_mean_margin": {name: float(report.mean_margins[name][-1])
                              for name in report.algorithms},
        "config_hash": cfg.hash(),
        "master_seed": cfg.master_seed,
        "horizon": cfg.horizon_eval,
        "family": cfg.family,
        "test_count": len(test_set),
    }
    with open(rep_dir / "report.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"excluded {len(report.excluded)} of {len(test_set)} instances "
          f"for baseline divergence")
    for name in report.algorithms:
        print(f"  {name}: mean final objective "
              f"{summary['mean_final_objective'][name]:.6f}, "
              f"final mean margin {summary['final_mean_margin'][name]:.6f}")
    return 0


def cmd_report(cfg):
    """Summarize an existing evaluation report on stdout."""
    path = _report_dir(cfg) / "report.json"
    if not path.exists():
        raise ConfigError(f"no report at {path}; run 'eval' first")
    with open(path) as fh:
        summary = json.load(fh)
    print(f"family={summary['family']} horizon={summary['horizon']} "
          f"instances={summary['test_count']} "
          f"excluded={summary['excluded_count']}")
    print(f"{'algorithm':<12} {'mean final obj':>16} {'final mean MoV':>16} "
          f"{'diverged':>9}")
    for name in summary["algorithms"]:
        print(f"{name:<12} {summary['mean_final_objective'][name]:>16.6f} "
              f"{summary['final_mean_margin'][name]:>16.6f} "
              f"{summary['diverged_counts'][name]:>9d}")
    return 0


# ---------------------------------------------------------------- frontend

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="optlearn",
        description="Learn a first-order optimizer and benchmark it against "
                    "tuned classical methods.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("generate", "write train/test objective instances"),
            ("tune", "grid-search baseline hyperparameters on the train set"),
            ("train", "run guided policy search"),
            ("eval", "benchmark policy and baselines on the test set"),
            ("report", "print a summary of an existing evaluation")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="flat key = value config file")
        cmd.add_argument("--out", help="output directory")
        cmd.add_argument("--seed", type=int, help="master seed")
        cmd.add_argument("--family", choices=obj.FAMILIES)
        cmd.add_argument("--jobs", type=int, help="worker processes")
        cmd.add_argument("--horizon", type=int, help="evaluation horizon")
        if name == "train":
            cmd.add_argument("--resume", help="gps_state.json to continue from")
        if name == "eval":
            cmd.add_argument("--checkpoint", help="policy checkpoint to evaluate")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    overrides = {"out": args.out, "master_seed": args.seed,
                 "family": args.family, "jobs": args.jobs,
                 "horizon_eval": args.horizon}
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "tune":
            return cmd_tune(cfg)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        if args.command == "eval":
            return cmd_eval(cfg, checkpoint=args.checkpoint)
        return cmd_report(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
