"""The four classical baselines on one logistic-regression instance.

Runs gradient descent, momentum, conjugate gradient and L-BFGS from a
shared starting point and prints the objective values every few
iterations, then shows what grid-search tuning picks for momentum.
"""
import numpy as np

from optlearn import baselines as bl
from optlearn import objectives as obj

inst = obj.gen_logistic(seed=1)
x0 = np.random.default_rng(1).standard_normal(4)
horizon = 60

configs = {
    "gd": bl.BaselineConfig(bl.GD, step_size=0.3),
    "momentum": bl.BaselineConfig(bl.MOMENTUM, step_size=0.1, momentum_decay=0.9),
    "cg": bl.BaselineConfig(bl.CG, step_size=1.0, line_search=bl.LS_BACKTRACKING),
    "lbfgs": bl.BaselineConfig(bl.LBFGS, step_size=1.0, line_search=bl.LS_STRONG_WOLFE),
}

traces = {name: bl.run_baseline(cfg, inst, x0, horizon)
          for name, cfg in configs.items()}

print(f"{'iter':>5}" + "".join(f"{name:>12}" for name in traces))
for t in range(0, horizon + 1, 10):
    row = "".join(f"{traces[name].objective_values[t]:>12.6f}" for name in traces)
    print(f"{t:>5}{row}")

# tuning: pick the momentum config with the lowest mean final objective
train_set = [obj.gen_logistic(s) for s in range(5)]
x0s = [np.random.default_rng(100 + s).standard_normal(4) for s in range(5)]
best = bl.grid_search(bl.MOMENTUM, train_set, bl.default_grid(bl.MOMENTUM),
                      horizon, x0s)
print(f"\ntuned momentum on 5 instances: step_size={best.step_size}, "
      f"decay={best.momentum_decay}")
