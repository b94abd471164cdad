"""Optimizer execution viewed as an MDP.

Shows the state layout (value-delta and gradient history, location
excluded from the policy features), rolls out a hand-written policy, and
dumps the trajectory to CSV.
"""
import numpy as np

from optlearn import mdp
from optlearn import objectives as obj

inst = obj.gen_logistic(seed=5)
x0 = np.random.default_rng(5).standard_normal(4)

state = mdp.initial_state(inst, x0, history=25)
feat = mdp.featurize(state)
print(f"state dim (location + history): {len(mdp.state_vector(state))}")
print(f"policy feature dim (history only): {len(feat)}")
print(f"features at t=0 are all zero: {bool(np.all(feat == 0))}")

# a policy that steps along the newest *stored* gradient; slot 0 holds the
# gradient of the previous location, so the first action is zero
def lagged_gd(t, state, rng):
    return -0.3 * state.past_gradients[0]

traj = mdp.rollout(inst, lagged_gd, x0, horizon=12)
print("\ncost per step:", np.array2string(traj.costs, precision=4))
print("cumulative cost (the quantity training minimizes):",
      round(traj.total_cost(), 4))

s1 = traj.states[1]
print("\nafter one step, newest history slot holds:")
print("  objective delta:", round(s1.value_deltas[0], 6))
print("  gradient at previous location:", np.round(s1.past_gradients[0], 4))
print("  older slots still zero:", bool(np.all(s1.value_deltas[1:] == 0)))

mdp.dump_trajectory(traj, "trajectory_dump.csv")
print("\nwrote trajectory_dump.csv (t, location, action, cost per row)")
