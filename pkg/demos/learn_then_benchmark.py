"""Miniature end-to-end experiment: learn an optimizer, then benchmark it.

Trains on a handful of robust-regression instances for a few rounds of
guided policy search, then pits the learned optimizer against tuned
baselines on held-out instances and prints the margin-of-victory table.
Scaled way down so it finishes in about a minute; the CLI runs the full
experiment (see README).
"""
import numpy as np

from optlearn import baselines as bl
from optlearn import evaluation as ev
from optlearn import gps
from optlearn import objectives as obj
from optlearn.util import derive_rng

train_set = [obj.gen_robustreg(seed) for seed in range(6)]
test_set = [obj.gen_robustreg(100 + seed) for seed in range(8)]
x0s_train = [derive_rng(0, "x0", "train", j).standard_normal(4) for j in range(6)]
x0s_test = [derive_rng(0, "x0", "test", j).standard_normal(4) for j in range(8)]

cfg = gps.GPSConfig(iterations=4, samples_per_instance=10, horizon=30,
                    history=25, supervised_epochs=150, seed=0)
print("training (imitation round + 4 LQG rounds)...")
params, metrics, _ = gps.gps_train(train_set, cfg, x0s=x0s_train)
for row in metrics:
    print(f"  round {row['iteration']}: mean cumulative cost "
          f"{row['mean_cost']:.3f}, supervised loss {row['supervised_loss']:.3f}")

print("\ntuning baselines on the training set...")
tuned = {}
for method in bl.METHODS:
    tuned[method] = bl.grid_search(method, train_set, bl.default_grid(method),
                                   30, x0s_train)

print("evaluating on held-out instances at a longer horizon (60 steps)...")
with np.errstate(all="ignore"):
    report = ev.evaluate(params, tuned, test_set, 60, x0s_test, history=25)

print(f"excluded for baseline divergence: {report.excluded}")
print(f"\n{'iter':>5}" + "".join(f"{name:>13}" for name in report.algorithms))
for t in range(0, 61, 10):
    row = "".join(f"{report.mean_margins[name][t]:>13.4f}"
                  for name in report.algorithms)
    print(f"{t:>5}{row}")
print("\n(positive margin = strictly best among all algorithms at that step)")
