"""Benchmark harness: margin-of-victory curves with divergence exclusion.

Every algorithm optimizes every held-out objective from a shared starting
point. The margin of victory of an algorithm at an iteration is the best
competing objective value minus its own (positive means strictly best).
Objectives on which any tuned baseline blows up or oscillates are excluded
from the aggregate curves, mirroring how the rare conjugate-gradient and
L-BFGS failures are reported.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import run_baseline
from .gps import policy_mean
from .mdp import rollout

POLICY_NAME = "autonomous"
MARGIN_CAP = 1e6
BLOWUP_FACTOR = 1e6
OSCILLATION_RATIO = 10.0


def margin_of_victory(values):
    """Per-algorithm margin at one iteration: min over competitors minus own.

    Non-finite entries are treated as +inf (they cannot win and do not
    drag competitors' margins down); margins themselves may come out +inf
    when every competitor is non-finite. All-non-finite input is an error.
    """
    if len(values) < 2:
        raise ValueError("need at least two algorithms")
    cleaned = {name: (float(v) if np.isfinite(v) else np.inf)
               for name, v in values.items()}
    if not any(np.isfinite(v) for v in cleaned.values()):
        raise ValueError("every algorithm is non-finite at this iteration")
    margins = {}
    for name, own in cleaned.items():
        best_other = min(v for n, v in cleaned.items() if n != name)
        if np.isinf(best_other) and np.isinf(own):
            margins[name] = -np.inf
        else:
            margins[name] = best_other - own
    return margins


def detect_divergence(values):
    """Blow-up / oscillation heuristic over one objective-value trace.

    Flags non-finite values, values beyond BLOWUP_FACTOR * max(1, start),
    and traces whose last-quarter mean exceeds the first-quarter mean
    OSCILLATION_RATIO times over.
    """
    vals = np.asarray(getattr(values, "objective_values", values), dtype=float)
    if not np.all(np.isfinite(vals)):
        return True
    if np.max(vals) > BLOWUP_FACTOR * max(1.0, vals[0]):
        return True
    quarter = max(len(vals) // 4, 1)
    return bool(np.mean(vals[-quarter:]) > OSCILLATION_RATIO * np.mean(vals[:quarter]))


@dataclass
class EvalReport:
    algorithms: list                  # sorted names, policy included
    values: dict                      # name -> (n_instances, T+1)
    diverged: dict                    # name -> (n_instances,) bool
    mean_margins: dict                # name -> (T+1,)
    excluded: list                    # instance indices dropped from aggregates
    capped_margins: int               # count of +-inf margins clamped to the cap
    metadata: dict = field(default_factory=dict)


def _run_instance(args):
    policy_params, include_grad, history, baseline_cfgs, inst, x0, horizon = args
    values = {}
    for name, cfg in baseline_cfgs.items():
        trace = run_baseline(cfg, inst, x0, horizon)
        values[name] = trace.objective_values
    traj = rollout(inst, policy_mean(policy_params, include_grad), x0, horizon,
                   history=history)
    values[POLICY_NAME] = traj.costs
    return values


def evaluate(policy_params, baseline_cfgs, test_set, horizon, x0s,
             history=25, include_current_grad=False, jobs=1, metadata=None):
    """Run the policy (noiseless mean actions) and all baselines on a test set.

    Args:
        policy_params: trained PolicyParams.
        baseline_cfgs: dict name -> BaselineConfig of tuned baselines.
        test_set: list of objectives.
        horizon: evaluation steps; may exceed the training horizon.
        x0s: per-instance initial iterates, shared across algorithms.
        jobs: worker processes for per-instance runs (deterministic order).

    Exclusion from the aggregate margins is triggered by any *baseline*
    tripping detect_divergence on an instance; the policy never causes
    exclusion but is flagged in the report when it misbehaves.
    """
    if not test_set:
        raise ValueError("test set is empty")
    if not baseline_cfgs:
        raise ValueError("no tuned baselines supplied")
    names = sorted(baseline_cfgs) + [POLICY_NAME]
    work = [(policy_params, include_current_grad, history, baseline_cfgs,
             inst, x0s[i], horizon) for i, inst in enumerate(test_set)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_instance = list(pool.map(_run_instance, work))
    else:
        per_instance = [_run_instance(w) for w in work]

    n = len(test_set)
    values = {name: np.stack([per_instance[i][name] for i in range(n)])
              for name in names}
    diverged = {name: np.array([detect_divergence(values[name][i]) for i in range(n)])
                for name in names}
    excluded = [i for i in range(n)
                if any(diverged[name][i] for name in baseline_cfgs)]
    included = [i for i in range(n) if i not in excluded]
    if not included:
        raise RuntimeError("every test instance was excluded for divergence")

    capped = 0
    mean_margins = {name: np.zeros(horizon + 1) for name in names}
    for t in range(horizon + 1):
        sums = {name: 0.0 for name in names}
        for i in included:
            margins = margin_of_victory({name: values[name][i, t] for name in names})
            for name, m in margins.items():
                if np.isinf(m):
                    m = np.sign(m) * MARGIN_CAP
                    capped += 1
                sums[name] += m
        for name in names:
            mean_margins[name][t] = sums[name] / len(included)

    return EvalReport(
        algorithms=names,
        values=values,
        diverged=diverged,
        mean_margins=mean_margins,
        excluded=excluded,
        capped_margins=capped,
        metadata=metadata or {},
    )


def write_summary_csv(report, path, provenance=None):
    """Mean margin-of-victory table: one row per iteration, one column per
    algorithm; directly plottable."""
    with open(path, "w") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        fh.write("iteration," + ",".join(f"mov_{n}" for n in report.algorithms) + "\n")
        horizon = len(next(iter(report.mean_margins.values()))) - 1
        for t in range(horizon + 1):
            row = ",".join(repr(float(report.mean_margins[n][t]))
                           for n in report.algorithms)
            fh.write(f"{t},{row}\n")


def write_instance_traces(report, directory, provenance=None):
    """One CSV per instance: objective value of every algorithm per iteration."""
    paths = []
    n = next(iter(report.values.values())).shape[0]
    for i in range(n):
        path = directory / f"instance_{i:03d}.csv"
        with open(path, "w") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            fh.write("iteration," + ",".join(report.algorithms) + "\n")
            horizon = report.values[report.algorithms[0]].shape[1] - 1
            for t in range(horizon + 1):
                row = ",".join(repr(float(report.values[name][i, t]))
                               for name in report.algorithms)
                fh.write(f"{t},{row}\n")
        paths.append(path)
    return paths
