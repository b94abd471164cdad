"""Optimizer execution as a finite-horizon MDP.

A state is the current iterate plus a bounded history window: for each of
the H most recent *previous* locations, the change in objective value
relative to now and the gradient evaluated there. The action is the step
vector added to the iterate, and the cost of a state is the objective
value at its location, so cumulative cost rewards fast convergence.

The policy network never sees the absolute location; `featurize` strips
it. History slots start at zero and fill as steps are taken, so the
feature vector is a deterministic function of the action sequence.
"""

import numpy as np
from dataclasses import dataclass, field

DEFAULT_HISTORY = 25

# rollouts freeze once the cost passes this bound, keeping batches usable
COST_GUARD = 1e12


@dataclass(frozen=True)
class StateStructure:
    """Index layout of the flattened MDP state vector.

    Layout: [location (n), value deltas (H), past gradients (H, n) row-major],
    with slot j of either history block referring to the (j+1)-th most
    recent previous location (most recent first).
    """

    param_dim: int
    history: int = DEFAULT_HISTORY

    @property
    def state_dim(self):
        return self.param_dim + self.history * (1 + self.param_dim)

    @property
    def feature_dim(self):
        return self.history * (1 + self.param_dim)

    @property
    def location_slice(self):
        return slice(0, self.param_dim)

    @property
    def deltas_slice(self):
        return slice(self.param_dim, self.param_dim + self.history)

    @property
    def grads_slice(self):
        return slice(self.param_dim + self.history, self.state_dim)

    def delta_index(self, j):
        return self.param_dim + j

    def grad_rows(self, j):
        start = self.param_dim + self.history + j * self.param_dim
        return slice(start, start + self.param_dim)


@dataclass
class OptState:
    """One MDP state: iterate, cached value/gradient there, and history."""

    location: np.ndarray        # (n,)
    value: float                # objective at location
    grad: np.ndarray            # gradient at location
    value_deltas: np.ndarray    # (H,) f(now) - f(j+1 steps ago)
    past_gradients: np.ndarray  # (H, n) gradient j+1 steps ago
    steps: int = 0              # how many history slots are populated

    @property
    def history(self):
        return len(self.value_deltas)


def initial_state(inst, x0, history=DEFAULT_HISTORY):
    x0 = np.asarray(x0, dtype=float)
    n = len(x0)
    return OptState(
        location=x0.copy(),
        value=float(inst.value(x0)),
        grad=np.asarray(inst.gradient(x0), dtype=float),
        value_deltas=np.zeros(history),
        past_gradients=np.zeros((history, n)),
        steps=0,
    )


def featurize(state, include_current_grad=False):
    """Policy-net input: history only, most recent first; location excluded.

    With `include_current_grad` the gradient at the current location is
    appended, for ablating the strict previous-locations-only reading.
    """
    parts = [state.value_deltas, state.past_gradients.ravel()]
    if include_current_grad:
        parts.append(state.grad)
    return np.concatenate(parts)


def state_vector(state):
    """Full flattened state (location included), the LQG-facing coordinates."""
    return np.concatenate([state.location, state.value_deltas,
                           state.past_gradients.ravel()])


def advance(inst, state, action):
    """Apply one step vector and shift the history window by one slot.

    The newest slot records the delta against the location just left and
    the gradient evaluated there; unpopulated slots remain zero; the
    oldest populated entry beyond H falls off.
    """
    action = np.asarray(action, dtype=float)
    if action.shape != state.location.shape:
        raise ValueError("action dimension mismatch")
    h = state.history
    new_loc = state.location + action
    new_value = float(inst.value(new_loc))
    new_grad = np.asarray(inst.gradient(new_loc), dtype=float)

    filled = min(state.steps, h)
    deltas = np.zeros(h)
    newest = new_value - state.value
    deltas[0] = newest
    keep = min(filled, h - 1)
    if keep:
        # delta vs an older location = delta vs previous + previous' delta
        deltas[1:1 + keep] = newest + state.value_deltas[:keep]
    grads = np.zeros_like(state.past_gradients)
    grads[0] = state.grad
    if keep:
        grads[1:1 + keep] = state.past_gradients[:keep]

    return OptState(
        location=new_loc,
        value=new_value,
        grad=new_grad,
        value_deltas=deltas,
        past_gradients=grads,
        steps=state.steps + 1,
    )


@dataclass
class Trajectory:
    """One rollout: T+1 states, T actions, T+1 per-state costs."""

    states: list
    actions: np.ndarray  # (T, n)
    costs: np.ndarray    # (T+1,)
    diverged: bool = False

    def total_cost(self):
        return float(np.sum(self.costs))

    def state_matrix(self):
        return np.stack([state_vector(s) for s in self.states])


def rollout(inst, policy, x0, horizon, rng=None, history=DEFAULT_HISTORY):
    """Execute a policy for a fixed horizon.

    Args:
        inst: objective with value/gradient.
        policy: callable (t, state, rng) -> action array.
        x0: initial iterate.
        horizon: number of actions.
        rng: numpy Generator handed to the policy; omit for deterministic
            policies.

    If a step produces a non-finite location/cost (or a cost beyond
    COST_GUARD), the move is discarded and the trajectory is frozen at the
    last good state with zero actions, flagged diverged.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    state = initial_state(inst, x0, history=history)
    n = len(state.location)
    states = [state]
    actions = np.zeros((horizon, n))
    costs = np.zeros(horizon + 1)
    costs[0] = state.value

    for t in range(horizon):
        action = np.asarray(policy(t, state, rng), dtype=float)
        new_state = None
        if np.all(np.isfinite(action)):
            candidate = advance(inst, state, action)
            if (np.all(np.isfinite(candidate.location))
                    and np.isfinite(candidate.value)
                    and abs(candidate.value) <= COST_GUARD
                    and np.all(np.isfinite(candidate.grad))):
                new_state = candidate
        if new_state is None:
            for u in range(t, horizon):
                states.append(state)
                costs[u + 1] = state.value
            return Trajectory(states, actions, costs, diverged=True)
        actions[t] = action
        state = new_state
        states.append(state)
        costs[t + 1] = state.value

    return Trajectory(states, actions, costs, diverged=False)


def dump_trajectory(traj, path):
    """Per-step text dump (t, location, action, cost) for plots/debugging."""
    n = len(traj.states[0].location)
    with open(path, "w") as fh:
        loc_cols = ",".join(f"x{i}" for i in range(n))
        act_cols = ",".join(f"a{i}" for i in range(n))
        fh.write(f"t,{loc_cols},{act_cols},cost\n")
        for t, state in enumerate(traj.states):
            action = traj.actions[t] if t < len(traj.actions) else np.zeros(n)
            loc = ",".join(repr(v) for v in state.location)
            act = ",".join(repr(v) for v in action)
            fh.write(f"{t},{loc},{act},{traj.costs[t]!r}\n")
