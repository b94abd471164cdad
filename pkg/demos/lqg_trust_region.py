"""KL-constrained LQG on a small synthetic control problem.

Builds random linear dynamics and quadratic costs, then shows the two
knobs of the trust-region machinery: trajectory KL falls monotonically as
the dual variable eta grows, and the bisection lands the KL on a
requested budget.
"""
import numpy as np

from optlearn import gps

rng = np.random.default_rng(2)
ns, na, horizon = 4, 2, 10

a = rng.standard_normal((horizon, ns, ns)) / np.sqrt(ns)
b = rng.standard_normal((horizon, ns, na))
c = 0.1 * rng.standard_normal((horizon, ns))
c_cost = np.zeros((horizon + 1, ns, ns))
for t in range(horizon + 1):
    m = rng.standard_normal((ns, ns))
    c_cost[t] = m @ m.T + 0.5 * np.eye(ns)
d_cost = rng.standard_normal((horizon + 1, ns))

dyn = gps.LinearDynamics(a, b, c, np.tile(1e-6 * np.eye(ns), (horizon, 1, 1)))
cost = gps.QuadraticCost(c_cost, d_cost, np.zeros(horizon + 1), anchors=None)
prev = gps.LinearGaussianController(
    K=np.zeros((horizon, na, ns)), k=np.zeros((horizon, na)),
    sigma=np.tile(0.5 * np.eye(na), (horizon, 1, 1)))
init_mean, init_cov = np.zeros(ns), np.zeros((ns, ns))

print(f"{'eta':>10} {'trajectory KL':>15}")
for eta in np.logspace(-3, 3, 7):
    ctrl, _ = gps.lqg_backward(dyn, cost, prev, eta=eta)
    kl = gps.traj_kl(ctrl, prev, dyn, init_mean, init_cov)
    print(f"{eta:>10.3g} {kl:>15.4f}")

for budget in (50.0, 5.0, 0.5):
    ctrl, info = gps.solve_trust_region(dyn, cost, prev, budget,
                                        init_mean, init_cov)
    print(f"\nbudget eps={budget}: landed KL={info['kl']:.4f} "
          f"at eta={info['eta']:.4g} (active={info['constraint_active']})")
