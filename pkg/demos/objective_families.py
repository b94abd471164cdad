"""Tour of the three random objective families.

Generates one instance of each family, evaluates value and gradient at a
few points, and cross-checks the analytic gradient against the central
finite-difference oracle.
"""
import numpy as np

from optlearn import objectives as obj

rng = np.random.default_rng(0)

for family, gen in [("logistic", obj.gen_logistic),
                    ("robust regression", obj.gen_robustreg),
                    ("neural net", obj.gen_nn)]:
    inst = gen(seed=42)
    print(f"\n=== {family} ===")
    print(f"dataset: {inst.features.shape[0]} samples in R^{inst.features.shape[1]}, "
          f"parameter dimension {inst.param_dim}")

    x0 = np.zeros(inst.param_dim)
    print(f"value at zero parameters: {inst.value(x0):.6f}")

    x = rng.standard_normal(inst.param_dim)
    g = inst.gradient(x)
    g_fd = obj.finite_diff_gradient(inst, x, eps=1e-6)
    rel = np.linalg.norm(g - g_fd) / np.linalg.norm(g_fd)
    print(f"value at random point:    {inst.value(x):.6f}")
    print(f"gradient norm:            {np.linalg.norm(g):.6f}")
    print(f"analytic vs finite-diff relative error: {rel:.2e}")

# the robust loss is bounded in [0, 1): even absurd parameters cannot blow it up
inst = obj.gen_robustreg(7)
wild = 1e6 * rng.standard_normal(4)
print(f"\nrobust regression loss at a wild point: {inst.value(wild):.6f} (< 1)")
