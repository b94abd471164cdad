"""Guided policy search over the optimizer-execution MDP.

Each training objective keeps its own time-varying linear-Gaussian
controller (the target trajectory distribution). One round of training:
sample noisy rollouts from the controllers, fit time-varying linear
dynamics to them, build local quadratic cost models, improve each
controller with a KL-trust-region LQG backward pass against the sampler
plus a prior that keeps the targets agreeing with the current policy
(a local linearization of the network), then regress the shared policy
network onto the new controllers' actions at the sampled states. Round
zero skips the LQG update so the first regression targets are exactly the
steps of per-instance tuned noiseless momentum.

The trust region is enforced through the dual variable eta: the backward
pass optimizes cost/eta plus the quadratic expansion of -log p_prev(a|s),
so eta -> infinity reproduces the previous controller and eta -> 0
approaches the unconstrained LQG solution. Trajectory KL is monotone
non-increasing in eta, which a bisection exploits (and asserts).
"""

import itertools
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .baselines import (MOMENTUM_DECAY_GRID, STEP_SIZE_GRID, BaselineConfig,
                        MOMENTUM, run_baseline)
from .mdp import StateStructure, Trajectory, featurize, rollout, state_vector
from .policy import PolicyParams, TrainConfig, forward_mean, init_policy, \
    sample_action, train_policy
from .util import derive_rng, floor_spectrum

DEFAULT_MOMENTUM_GRID = tuple(itertools.product(STEP_SIZE_GRID, MOMENTUM_DECAY_GRID))


@dataclass
class LinearDynamics:
    """s_{t+1} ~ N(A_t s_t + B_t a_t + c_t, Q_t) for t = 0..T-1."""

    A: np.ndarray  # (T, ns, ns)
    B: np.ndarray  # (T, ns, na)
    c: np.ndarray  # (T, ns)
    Q: np.ndarray  # (T, ns, ns)

    @property
    def horizon(self):
        return self.A.shape[0]

    @property
    def state_dim(self):
        return self.A.shape[1]

    @property
    def action_dim(self):
        return self.B.shape[2]


@dataclass
class QuadraticCost:
    """Per-step quadratic cost models.

    With `anchors` set, entry t models the cost locally around anchor
    state s_t: cost(s_t + delta) ~= e_t + d_t' delta + 0.5 delta' C_t delta,
    i.e. d_t is the cost gradient at the visited state. `absolute()`
    rewrites the same quadratics in absolute state coordinates, which is
    what the backward pass consumes. anchors=None means the entries are
    already absolute.
    """

    C: np.ndarray            # (T+1, ns, ns)
    d: np.ndarray            # (T+1, ns)
    e: np.ndarray            # (T+1,)
    anchors: np.ndarray = None  # (T+1, ns) or None

    def absolute(self):
        if self.anchors is None:
            return self.C, self.d, self.e
        d_abs = self.d - np.einsum("tij,tj->ti", self.C, self.anchors)
        e_abs = (self.e - np.einsum("ti,ti->t", self.d, self.anchors)
                 + 0.5 * np.einsum("ti,tij,tj->t", self.anchors, self.C, self.anchors))
        return self.C, d_abs, e_abs


@dataclass
class LinearGaussianController:
    """Time-varying affine-Gaussian controller a_t ~ N(K_t s_t + k_t, Sigma_t)."""

    K: np.ndarray      # (T, na, ns)
    k: np.ndarray      # (T, na)
    sigma: np.ndarray  # (T, na, na)

    @property
    def horizon(self):
        return self.K.shape[0]

    @property
    def action_dim(self):
        return self.K.shape[1]

    @property
    def state_dim(self):
        return self.K.shape[2]

    def mean_action(self, t, s):
        return self.K[t] @ s + self.k[t]


def _ridge_regress(x, y, ridge):
    """Centered ridge regression of y on x with unpenalized intercept.

    Returns (coefs (dy, dx), intercept (dy,), residual covariance (dy, dy)).
    """
    n = x.shape[0]
    xm, ym = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - xm, y - ym
    if ridge > 0:
        gram = xc.T @ xc + ridge * np.eye(x.shape[1])
        w = np.linalg.solve(gram, xc.T @ yc)
    else:
        w, *_ = np.linalg.lstsq(xc, yc, rcond=None)
    resid = yc - xc @ w
    cov = resid.T @ resid / n
    coefs = w.T
    intercept = ym - coefs @ xm
    return coefs, intercept, cov


def _stack_trajectories(trajs):
    states = np.stack([t.state_matrix() for t in trajs])  # (N, T+1, ns)
    actions = np.stack([t.actions for t in trajs])        # (N, T, na)
    return states, actions


def fit_dynamics(trajs, ridge=1e-3, structure=None, noise_floor=1e-6):
    """Fit time-varying linear dynamics to equal-length rollouts.

    Generic mode regresses the full next state on (state, action, 1) per
    time step. With `structure` (the optimizer-MDP layout), the known
    bookkeeping is hard-coded -- the location update is exact and history
    slots shift deterministically -- and only the genuinely unknown
    responses (newest value delta, newest stored gradient) are regressed,
    which matters when the state dimension dwarfs the sample count.

    Args:
        trajs: list of Trajectory (>= 2, equal horizon), or a pair of
            arrays (states (N, T+1, ns), actions (N, T, na)).
        ridge: coefficient penalty; 0 falls back to least squares.
        structure: StateStructure of the MDP state, or None for generic.
        noise_floor: added to the diagonal of every process covariance.
    """
    if isinstance(trajs, (list, tuple)) and trajs and isinstance(trajs[0], Trajectory):
        horizons = {len(t.actions) for t in trajs}
        if len(horizons) != 1:
            raise ValueError("trajectories must share one horizon")
        states, actions = _stack_trajectories(trajs)
    else:
        states, actions = trajs
    n_samples, t_plus_1, ns = states.shape
    horizon = t_plus_1 - 1
    na = actions.shape[2]
    if n_samples < 2:
        raise ValueError("need at least 2 trajectories to fit dynamics")

    a_mats = np.zeros((horizon, ns, ns))
    b_mats = np.zeros((horizon, ns, na))
    c_vecs = np.zeros((horizon, ns))
    q_mats = np.zeros((horizon, ns, ns))

    for t in range(horizon):
        x = np.hstack([states[:, t], actions[:, t]])
        if structure is None:
            coefs, intercept, cov = _ridge_regress(x, states[:, t + 1], ridge)
            a_mats[t] = coefs[:, :ns]
            b_mats[t] = coefs[:, ns:]
            c_vecs[t] = intercept
            q_mats[t] = cov + noise_floor * np.eye(ns)
        else:
            a_mats[t], b_mats[t], c_vecs[t], q_mats[t] = _fit_structured_step(
                x, states[:, t + 1], t, structure, ridge, noise_floor)
    return LinearDynamics(a_mats, b_mats, c_vecs, q_mats)


def _fit_structured_step(x, y, t, struct, ridge, noise_floor):
    ns, na, h = struct.state_dim, struct.param_dim, struct.history
    delta0 = struct.delta_index(0)
    grad0 = struct.grad_rows(0)
    unknown_idx = np.r_[delta0, np.arange(grad0.start, grad0.stop)]
    coefs, intercept, cov = _ridge_regress(x, y[:, unknown_idx], ridge)

    a = np.zeros((ns, ns))
    b = np.zeros((ns, na))
    c = np.zeros(ns)
    loc = struct.location_slice
    a[loc, loc] = np.eye(na)
    b[loc, :] = np.eye(na)

    a[delta0] = coefs[0, :ns]
    b[delta0] = coefs[0, ns:]
    c[delta0] = intercept[0]
    a[grad0, :] = coefs[1:, :ns]
    b[grad0, :] = coefs[1:, ns:]
    c[grad0] = intercept[1:]

    # shifted history: slot j inherits slot j-1 plus the newest delta;
    # slots beyond the populated window stay identically zero
    valid = min(t + 1, h)
    for j in range(1, valid):
        dj = struct.delta_index(j)
        a[dj] = a[delta0].copy()
        a[dj, struct.delta_index(j - 1)] += 1.0
        b[dj] = b[delta0]
        c[dj] = c[delta0]
        gj, gp = struct.grad_rows(j), struct.grad_rows(j - 1)
        a[gj, gp] = np.eye(na)

    mix = np.zeros((ns, 1 + na))
    mix[delta0, 0] = 1.0
    for j in range(1, valid):
        mix[struct.delta_index(j), 0] = 1.0
    mix[grad0, 1:] = np.eye(na)
    q = mix @ cov @ mix.T + noise_floor * np.eye(ns)
    return a, b, c, q


def quadraticize_cost(inst, traj, hess_floor=1e-6):
    """Local quadratic cost models around each visited state.

    The cost depends only on the location block, so every model has the
    objective gradient in the location entries of d_t, a spectrum-floored
    location Hessian in C_t, and zeros everywhere the history lives.
    Objectives without an analytic/Gauss-Newton `hessian` get a central-
    difference Hessian of their gradient.
    """
    n = len(traj.states[0].location)
    horizon = len(traj.actions)
    ns = len(state_vector(traj.states[0]))
    c_mats = np.zeros((horizon + 1, ns, ns))
    d_vecs = np.zeros((horizon + 1, ns))
    e_vals = np.zeros(horizon + 1)
    anchors = np.zeros((horizon + 1, ns))
    for t, state in enumerate(traj.states):
        hess = _location_hessian(inst, state.location)
        c_mats[t, :n, :n] = floor_spectrum(hess, hess_floor)
        d_vecs[t, :n] = state.grad
        e_vals[t] = state.value
        anchors[t] = state_vector(state)
    return QuadraticCost(c_mats, d_vecs, e_vals, anchors)


def _location_hessian(inst, x, eps=1e-5):
    hess_fn = getattr(inst, "hessian", None)
    if hess_fn is not None:
        return np.asarray(hess_fn(x), dtype=float)
    dim = len(x)
    h = np.zeros((dim, dim))
    for j in range(dim):
        step = np.zeros(dim)
        step[j] = eps
        h[:, j] = (inst.gradient(x + step) - inst.gradient(x - step)) / (2 * eps)
    return 0.5 * (h + h.T)


def lqg_backward(dyn, cost, prev, eta, policy_prior=None, policy_weight=1.0,
                 cov_floor=1e-6, max_adjust=20):
    """Backward pass of the KL-regularized LQG problem.

    Minimizes sum_t E[cost(s_t)] + eta * KL(new || prev), optionally plus
    policy_weight * KL(new || policy_prior), by dynamic programming on the
    cost and the quadratic forms of the negative prior log-densities,
    everything normalized by (eta + policy_weight). The policy prior (a
    controller-like local linearization of the network policy) is what
    keeps the target trajectory distribution agreeing with the current
    policy; without it, eta = 0 solves the plain LQR problem on the raw
    cost. Controller covariances are the inverse action Hessians of the
    normalized Q-function, floored at cov_floor.

    If the action Hessian loses positive definiteness the pass restarts
    with a larger eta (Levenberg style); info["eta"] reports the value
    actually used and info["adjusted"] whether it changed.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    c_abs, d_abs, _ = cost.absolute()
    horizon, ns, na = dyn.horizon, dyn.state_dim, dyn.action_dim

    eta_try = eta
    for attempt in range(max_adjust):
        result = _lqg_attempt(dyn, c_abs, d_abs, prev, eta_try, policy_prior,
                              policy_weight, cov_floor, horizon, ns, na)
        if result is not None:
            return result, {"eta": eta_try, "adjusted": attempt > 0}
        eta_try = max(eta_try * 10.0, 1e-6)
    raise RuntimeError("action Hessian not positive definite even after "
                       f"raising eta to {eta_try:g}")


def _controller_precisions(ctrl, horizon, na, label):
    invs = []
    for t in range(horizon):
        try:
            chol = scipy.linalg.cho_factor(ctrl.sigma[t], lower=True)
        except scipy.linalg.LinAlgError:
            raise ValueError(f"{label} covariance is singular")
        invs.append(scipy.linalg.cho_solve(chol, np.eye(na)))
    return invs


def _lqg_attempt(dyn, c_abs, d_abs, prev, eta, policy_prior, policy_weight,
                 cov_floor, horizon, ns, na):
    nu = policy_weight if policy_prior is not None else 0.0
    total = eta + nu
    scale = 1.0 / total if total > 0 else 1.0
    priors = []
    if eta > 0:
        priors.append((eta * scale, prev,
                       _controller_precisions(prev, horizon, na, "previous controller")))
    if nu > 0:
        priors.append((nu * scale, policy_prior,
                       _controller_precisions(policy_prior, horizon, na, "policy prior")))

    k_gains = np.zeros((horizon, na, ns))
    k_offsets = np.zeros((horizon, na))
    sigmas = np.zeros((horizon, na, na))

    v_mat = scale * c_abs[horizon]
    v_vec = scale * d_abs[horizon]
    for t in reversed(range(horizon)):
        a, b, c = dyn.A[t], dyn.B[t], dyn.c[t]
        css = scale * c_abs[t]
        ds = scale * d_abs[t]
        csa = np.zeros((ns, na))
        caa = np.zeros((na, na))
        da = np.zeros(na)
        for weight, ctrl, prec in priors:
            p_inv = weight * prec[t]
            kb, ob = ctrl.K[t], ctrl.k[t]
            caa = caa + p_inv
            csa = csa - kb.T @ p_inv
            css = css + kb.T @ p_inv @ kb
            da = da - p_inv @ ob
            ds = ds + kb.T @ (p_inv @ ob)

        va = v_mat @ a
        vc = v_vec + v_mat @ c
        q_ss = css + a.T @ va
        q_sa = csa + va.T @ b
        q_aa = caa + b.T @ v_mat @ b
        q_s = ds + a.T @ vc
        q_a = da + b.T @ vc

        q_aa = 0.5 * (q_aa + q_aa.T)
        try:
            chol = scipy.linalg.cho_factor(q_aa, lower=True)
        except scipy.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(chol[0])):
            return None
        k_gains[t] = -scipy.linalg.cho_solve(chol, q_sa.T)
        k_offsets[t] = -scipy.linalg.cho_solve(chol, q_a)
        sigmas[t] = floor_spectrum(scipy.linalg.cho_solve(chol, np.eye(na)),
                                   cov_floor)

        v_mat = q_ss + q_sa @ k_gains[t]
        v_mat = 0.5 * (v_mat + v_mat.T)
        v_vec = q_s + q_sa @ k_offsets[t]
    return LinearGaussianController(k_gains, k_offsets, sigmas)


def traj_kl(new, old, dyn, init_mean, init_cov):
    """KL divergence between trajectory distributions of two controllers.

    Sums the expected per-step Gaussian action KL under the state marginals
    induced by the *new* controller propagated through the dynamics.
    """
    if new.K.shape != old.K.shape:
        raise ValueError("controller dimensions differ")
    horizon, na = new.horizon, new.action_dim
    m = np.asarray(init_mean, dtype=float).copy()
    s_cov = np.asarray(init_cov, dtype=float).copy()
    total = 0.0
    for t in range(horizon):
        try:
            chol_old = scipy.linalg.cho_factor(old.sigma[t], lower=True)
        except scipy.linalg.LinAlgError:
            raise ValueError("singular controller covariance at step %d" % t)
        old_inv = scipy.linalg.cho_solve(chol_old, np.eye(na))
        logdet_old = 2.0 * np.sum(np.log(np.diag(chol_old[0])))
        sign, logdet_new = np.linalg.slogdet(new.sigma[t])
        if sign <= 0:
            raise ValueError("singular controller covariance at step %d" % t)

        dk = new.K[t] - old.K[t]
        delta = dk @ m + (new.k[t] - old.k[t])
        step_kl = 0.5 * (
            np.trace(old_inv @ new.sigma[t])
            + np.trace(old_inv @ dk @ s_cov @ dk.T)
            + delta @ old_inv @ delta
            - na + logdet_old - logdet_new)
        total += max(step_kl, 0.0)

        a_cl = dyn.A[t] + dyn.B[t] @ new.K[t]
        m = a_cl @ m + dyn.B[t] @ new.k[t] + dyn.c[t]
        s_cov = a_cl @ s_cov @ a_cl.T + dyn.B[t] @ new.sigma[t] @ dyn.B[t].T + dyn.Q[t]
        s_cov = 0.5 * (s_cov + s_cov.T)
    return float(total)


def solve_trust_region(dyn, cost, prev, epsilon, init_mean, init_cov,
                       policy_prior=None, policy_weight=1.0,
                       eta_min=1e-6, eta_max=1e6, max_iter=40, cov_floor=1e-6):
    """Find the controller whose trajectory KL from `prev` is ~epsilon.

    Bisects the dual variable on a log scale until the KL lands within
    +-10% of the budget, or returns the near-unconstrained solution when
    it already satisfies the constraint. KL must be non-increasing in eta;
    evaluations are checked against that and violations raise. An optional
    policy prior is passed through to the backward pass so the optimized
    controller also stays close to the current policy.

    Returns (controller, info) with info keys eta, kl, constraint_active,
    warning.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")

    evals = []

    def probe(eta):
        ctrl, _ = lqg_backward(dyn, cost, prev, eta, policy_prior=policy_prior,
                               policy_weight=policy_weight, cov_floor=cov_floor)
        kl = traj_kl(ctrl, prev, dyn, init_mean, init_cov)
        evals.append((eta, kl))
        for (e1, k1), (e2, k2) in itertools.combinations(sorted(evals), 2):
            if e1 < e2:
                assert k2 <= k1 + 1e-6 * (1.0 + abs(k1)), \
                    f"KL not monotone in eta: kl({e1:g})={k1:g} < kl({e2:g})={k2:g}"
        return ctrl, kl

    ctrl_lo, kl_lo = probe(eta_min)
    if kl_lo <= epsilon:
        return ctrl_lo, {"eta": eta_min, "kl": kl_lo,
                         "constraint_active": False, "warning": None}

    ctrl_hi, kl_hi = probe(eta_max)
    if kl_hi > 1.1 * epsilon:
        return ctrl_hi, {"eta": eta_max, "kl": kl_hi, "constraint_active": True,
                         "warning": "eta bracket exhausted; KL above budget"}
    if kl_hi >= 0.9 * epsilon:
        return ctrl_hi, {"eta": eta_max, "kl": kl_hi,
                         "constraint_active": True, "warning": None}

    lo, hi = eta_min, eta_max
    best = (ctrl_hi, kl_hi, eta_max)
    for _ in range(max_iter):
        mid = np.sqrt(lo * hi)
        ctrl_mid, kl_mid = probe(mid)
        if abs(kl_mid - epsilon) < abs(best[1] - epsilon):
            best = (ctrl_mid, kl_mid, mid)
        if 0.9 * epsilon <= kl_mid <= 1.1 * epsilon:
            return ctrl_mid, {"eta": mid, "kl": kl_mid,
                              "constraint_active": True, "warning": None}
        if kl_mid > epsilon:
            lo = mid
        else:
            hi = mid
    ctrl, kl, eta = best
    return ctrl, {"eta": eta, "kl": kl, "constraint_active": True,
                  "warning": "bisection budget exhausted; returning closest"}


def linearize_policy(params, trajs, include_current_grad=False, ridge=1e-4,
                     var_floor=1e-6):
    """Local affine-Gaussian model of the network policy along sampled states.

    Per time step, ridge-regresses the net's mean actions on the full
    state vectors of the samples, giving a controller-like object
    a ~ N(K_t s + k_t, diag(var)) that the LQG pass can use as the
    agree-with-the-current-policy prior.
    """
    horizon = len(trajs[0].actions)
    na = params.action_dim
    states = np.stack([t.state_matrix() for t in trajs])  # (N, T+1, ns)
    feats = np.stack([
        np.stack([featurize(s, include_current_grad) for s in t.states])
        for t in trajs])                                  # (N, T+1, F)
    ns = states.shape[2]
    gains = np.zeros((horizon, na, ns))
    offsets = np.zeros((horizon, na))
    for t in range(horizon):
        actions = forward_mean(params, feats[:, t])
        coefs, intercept, _ = _ridge_regress(states[:, t], actions, ridge)
        gains[t] = coefs
        offsets[t] = intercept
    var = np.maximum(np.exp(params.log_var), var_floor)
    sigma = np.tile(np.diag(var), (horizon, 1, 1))
    return LinearGaussianController(gains, offsets, sigma)


def init_target_from_momentum(inst, x0, grid, horizon, structure,
                              sigma_init_sq=0.01, closed_loop=False):
    """Controller reproducing the best noiseless momentum run.

    Grid-selects (step size, decay) by final objective for this instance.
    The default is an open-loop controller: k_t set to the chosen run's
    step vectors, zero gains, isotropic initial covariance. With
    `closed_loop`, the gains implement lagged momentum on the stored
    gradient history (-step * sum_j decay^j * G_j) and the offsets absorb
    the nominal residue, so the mean actions along the noiseless momentum
    trajectory are unchanged but the controller reacts to (and corrects)
    deviations from it, which makes its actions a learnable feedback law
    rather than a per-step constant. Falls back to the smallest step size
    with zero decay (with a warning) if every grid entry diverges.
    """
    if not grid:
        raise ValueError("grid must be non-empty")
    best = None
    for step, decay in grid:
        cfg = BaselineConfig(MOMENTUM, step_size=step, momentum_decay=decay)
        trace = run_baseline(cfg, inst, x0, horizon)
        final = np.inf if trace.diverged else float(trace.objective_values[-1])
        if not np.isfinite(final):
            final = np.inf
        key = (final, step, decay)
        if best is None or key < best[0]:
            best = (key, (step, decay), trace)
    if not np.isfinite(best[0][0]):
        warnings.warn("all momentum grid entries diverged; "
                      "falling back to the smallest step size")
        step, decay = min(s for s, _ in grid), 0.0
        cfg = BaselineConfig(MOMENTUM, step_size=step, momentum_decay=decay)
        trace = run_baseline(cfg, inst, x0, horizon)
    else:
        (step, decay), trace = best[1], best[2]

    na, ns = structure.param_dim, structure.state_dim
    steps = np.diff(trace.points, axis=0)
    gains = np.zeros((horizon, na, ns))
    offsets = steps.copy()
    if closed_loop:
        # replay the chosen run through the MDP to anchor the feedback law
        replay = rollout(inst, lambda t, s, r: steps[t], x0, horizon,
                         history=structure.history)
        nominal = replay.state_matrix()
        feedback = np.zeros((na, ns))
        for j in range(structure.history):
            rows = structure.grad_rows(j)
            feedback[:, rows] = -step * decay ** j * np.eye(na)
        for t in range(horizon):
            gains[t] = feedback
            offsets[t] = steps[t] - feedback @ nominal[t]
    controller = LinearGaussianController(
        K=gains,
        k=offsets,
        sigma=np.tile(sigma_init_sq * np.eye(na), (horizon, 1, 1)),
    )
    return controller, {"step_size": step, "momentum_decay": decay}


def momentum_law_action(state, step, decay, include_current_grad=True):
    """Momentum's step vector as a function of the MDP state.

    Treats the stored gradient history (plus the current gradient when
    visible) as momentum's geometric velocity sum; along a noiseless
    momentum trajectory this reproduces its step vectors exactly. Without
    the current gradient the law is momentum delayed by one step.
    """
    weights = decay ** np.arange(1, len(state.value_deltas) + 1)
    velocity = weights @ state.past_gradients
    if include_current_grad:
        velocity = velocity + state.grad
    else:
        velocity = velocity / decay if decay > 0 else state.past_gradients[0]
    return -step * velocity


def controller_sampler(ctrl, rng_required=True):
    chols = [np.linalg.cholesky(ctrl.sigma[t]) for t in range(ctrl.horizon)]

    def policy(t, state, rng):
        s = state_vector(state)
        noise = chols[t] @ rng.standard_normal(ctrl.action_dim)
        return ctrl.K[t] @ s + ctrl.k[t] + noise

    return policy


def controller_mean(ctrl):
    def policy(t, state, rng):
        return ctrl.mean_action(t, state_vector(state))

    return policy


def policy_sampler(params, include_current_grad=False):
    def policy(t, state, rng):
        return sample_action(params, featurize(state, include_current_grad), rng)

    return policy


def policy_mean(params, include_current_grad=False):
    def policy(t, state, rng):
        return forward_mean(params, featurize(state, include_current_grad))

    return policy


@dataclass(frozen=True)
class GPSConfig:
    iterations: int = 20                 # LQG rounds after the imitation round
    samples_per_instance: int = 20
    horizon: int = 40
    history: int = 25
    trust_region_eps: float = 1.0        # KL budget per trajectory
    entropy_coeff_init: float = 1e-3
    entropy_coeff_factor: float = 1.5
    entropy_coeff_cap: float = 1.0
    supervised_epochs: int = 200
    imitation_epochs: int = 0            # 0: use supervised_epochs for round 0
    supervised_lr: float = 1e-3
    hidden_units: int = 50
    sigma_init_sq: float = 0.01
    cov_floor: float = 1e-6
    dyn_ridge: float = 1e-3
    hess_floor: float = 1e-6
    include_current_grad: bool = True     # feed the net the current gradient
    policy_agreement_weight: float = 1.0  # 0 drops the agree-with-policy prior
    closed_loop_init: bool = True         # momentum init as a feedback law
    augment_copies: int = 2               # jittered copies per regression pair
    augment_scale: float = 1.0            # jitter sd in units of per-dim std
    momentum_grid: tuple = DEFAULT_MOMENTUM_GRID
    max_consecutive_failures: int = 3
    seed: int = 0


@dataclass
class GPSState:
    """Everything needed to continue training from the next round."""

    next_iteration: int
    policy: PolicyParams
    controllers: list
    trust_eps: float
    consecutive_failures: int = 0


def _entropy_coeff(cfg, iteration):
    return min(cfg.entropy_coeff_cap,
               cfg.entropy_coeff_init * cfg.entropy_coeff_factor ** iteration)


def _law_response(step, decay, structure, include_current_grad):
    """d(momentum law)/d(features): exact, since the law is linear in them."""
    na, h = structure.param_dim, structure.history
    n_feat = structure.feature_dim + (na if include_current_grad else 0)
    resp = np.zeros((na, n_feat))
    eye = np.eye(na)
    for j in range(h):
        power = j + 1 if include_current_grad else j
        cols = slice(h + j * na, h + (j + 1) * na)
        resp[:, cols] = -step * decay ** power * eye
    if include_current_grad:
        resp[:, structure.feature_dim:] = -step * eye
    return resp




def _average_absolute_cost(costs):
    mats = [c.absolute() for c in costs]
    c_avg = np.mean([m[0] for m in mats], axis=0)
    d_avg = np.mean([m[1] for m in mats], axis=0)
    e_avg = np.mean([m[2] for m in mats], axis=0)
    return QuadraticCost(c_avg, d_avg, e_avg, anchors=None)


def _regression_data(trajs, ctrl, include_current_grad):
    feats, means = [], []
    horizon = ctrl.horizon
    precisions = np.zeros((horizon, ctrl.action_dim, ctrl.action_dim))
    for t in range(horizon):
        p = np.linalg.inv(ctrl.sigma[t])
        precisions[t] = 0.5 * (p + p.T)
    prec_rows = []
    for traj in trajs:
        for t in range(horizon):
            state = traj.states[t]
            feats.append(featurize(state, include_current_grad))
            means.append(ctrl.mean_action(t, state_vector(state)))
            prec_rows.append(precisions[t])
    return feats, means, prec_rows


def _augment_block(feats, means, response, copies, stds, rng):
    """Jittered copies of one homogeneous block of regression pairs.

    `response` is the targets' exact derivative w.r.t. the feature vector
    (action_dim, feature_dim), valid for every pair in the block; both the
    momentum law and the LQG controllers are affine in the jittered
    coordinates. `stds` is the per-dimension jitter scale, zeroed for
    coordinates whose response is unknown. The jitter teaches the net the
    local structure of the targets off the sampled tube, keeping rollouts
    benign where data is thin, without regularizing weight magnitudes.
    """
    out_f, out_m = [feats], [means]
    for _ in range(copies):
        delta = stds * rng.standard_normal(feats.shape)
        out_f.append(feats + delta)
        out_m.append(means + delta @ response.T)
    return np.vstack(out_f), np.vstack(out_m)


def gps_train(train_set, cfg, x0s=None, policy=None, state=None,
              iteration_callback=None):
    """Train the policy network by guided policy search.

    Args:
        train_set: list of objectives (value/gradient/param_dim).
        cfg: GPSConfig.
        x0s: optional per-instance initial iterates; derived from cfg.seed
            when omitted.
        policy: optional starting parameters (fresh random net otherwise).
        state: optional GPSState to resume from (overrides `policy`).
        iteration_callback: optional fn(state, metrics_row) invoked after
            every round, e.g. to write checkpoints and log rows.

    Returns (policy, metrics, state); metrics is one dict per round with
    iteration, mean_cost, mean_kl, entropy_coeff, supervised_loss and
    mean_log_var.

    A non-finite supervised fit discards the round (previous policy and
    controllers are kept) and halves the KL budget;
    cfg.max_consecutive_failures such rounds in a row abort.
    """
    if not train_set:
        raise ValueError("train_set must be non-empty")
    param_dim = train_set[0].param_dim
    structure = StateStructure(param_dim, cfg.history)
    feature_len = structure.feature_dim + (param_dim if cfg.include_current_grad else 0)

    if x0s is None:
        x0s = [derive_rng(cfg.seed, "x0", "train", j).standard_normal(param_dim)
               for j in range(len(train_set))]

    momentum_settings = {}
    if state is None:
        if policy is None:
            policy = init_policy(feature_len, param_dim,
                                 derive_rng(cfg.seed, "policy-init"),
                                 hidden=cfg.hidden_units)
        controllers = []
        for j, inst in enumerate(train_set):
            ctrl, info = init_target_from_momentum(
                inst, x0s[j], cfg.momentum_grid, cfg.horizon, structure,
                cfg.sigma_init_sq, closed_loop=cfg.closed_loop_init)
            controllers.append(ctrl)
            momentum_settings[j] = (info["step_size"], info["momentum_decay"])
        state = GPSState(next_iteration=0, policy=policy,
                         controllers=controllers, trust_eps=cfg.trust_region_eps)

    metrics = []
    init_cov = np.zeros((structure.state_dim, structure.state_dim))
    for it in range(state.next_iteration, cfg.iterations + 1):
        entropy = _entropy_coeff(cfg, it)
        proposed = []
        kls, costs = [], []
        feats, means, precs = [], [], []
        sampled_pairs = 0
        for j, inst in enumerate(train_set):
            ctrl = state.controllers[j]
            trajs = [rollout(inst, controller_sampler(ctrl), x0s[j], cfg.horizon,
                             rng=derive_rng(cfg.seed, "noise", it, j, i),
                             history=cfg.history)
                     for i in range(cfg.samples_per_instance)]
            costs.append(np.mean([tr.total_cost() for tr in trajs]))

            if it == 0:
                # imitation round: targets are the momentum steps themselves,
                # as the state-dependent law when the init is closed-loop
                new_ctrl, kl = ctrl, 0.0
            else:
                dyn = fit_dynamics(trajs, ridge=cfg.dyn_ridge, structure=structure)
                avg_cost = _average_absolute_cost(
                    [quadraticize_cost(inst, tr, cfg.hess_floor) for tr in trajs])
                init_mean = trajs[0].state_matrix()[0]
                prior = None
                if cfg.policy_agreement_weight > 0:
                    prior = linearize_policy(state.policy, trajs,
                                             cfg.include_current_grad)
                new_ctrl, info = solve_trust_region(
                    dyn, avg_cost, ctrl, state.trust_eps, init_mean, init_cov,
                    policy_prior=prior, policy_weight=cfg.policy_agreement_weight,
                    cov_floor=cfg.cov_floor)
                kl = info["kl"]
            proposed.append(new_ctrl)
            kls.append(kl)
            aug_rng = derive_rng(cfg.seed, "augment", it, j)
            if it == 0 and cfg.closed_loop_init and j in momentum_settings:
                step, decay = momentum_settings[j]
                f, m = [], []
                for traj in trajs:
                    for t in range(cfg.horizon):
                        st = traj.states[t]
                        f.append(featurize(st, cfg.include_current_grad))
                        m.append(momentum_law_action(st, step, decay,
                                                     cfg.include_current_grad))
                f, m = np.asarray(f), np.asarray(m)
                sampled = len(f)
                if cfg.augment_copies > 0:
                    response = _law_response(step, decay, structure,
                                             cfg.include_current_grad)
                    stds = cfg.augment_scale * f.std(axis=0)
                    f, m = _augment_block(f, m, response, cfg.augment_copies,
                                          stds, aug_rng)
                p = np.tile(np.eye(param_dim) / cfg.sigma_init_sq, (len(f), 1, 1))
            else:
                f, m, p = _regression_data(trajs, new_ctrl, cfg.include_current_grad)
                f, m, p = np.asarray(f), np.asarray(m), np.asarray(p)
                sampled = len(f)
            feats.append(f)
            means.append(m)
            precs.append(p)
            sampled_pairs += sampled

        feats = np.vstack(feats)
        means = np.vstack(means)
        precs = np.vstack(precs)
        epochs = cfg.supervised_epochs
        if it == 0 and cfg.imitation_epochs > 0:
            epochs = cfg.imitation_epochs
        train_cfg = TrainConfig(learning_rate=cfg.supervised_lr,
                                epochs=epochs,
                                entropy_coeff=entropy)
        new_policy, fit_info = train_policy(state.policy, feats, means, precs,
                                            train_cfg)

        if fit_info["diverged"] or not np.isfinite(fit_info["best_loss"]):
            failures = state.consecutive_failures + 1
            if failures >= cfg.max_consecutive_failures:
                raise RuntimeError(
                    f"supervised regression diverged {failures} rounds in a row "
                    f"(last entry loss {fit_info['entry_loss']:g})")
            state = replace(state, next_iteration=it + 1, trust_eps=state.trust_eps * 0.5,
                            consecutive_failures=failures)
            row = {"iteration": it, "mean_cost": float(np.mean(costs)),
                   "mean_kl": float(np.mean(kls)), "entropy_coeff": entropy,
                   "supervised_loss": np.nan,
                   "mean_log_var": float(np.mean(state.policy.log_var)),
                   "regression_pairs": sampled_pairs,
                   "augmented_pairs": len(feats), "discarded": True}
        else:
            state = GPSState(next_iteration=it + 1, policy=new_policy,
                             controllers=proposed, trust_eps=state.trust_eps,
                             consecutive_failures=0)
            row = {"iteration": it, "mean_cost": float(np.mean(costs)),
                   "mean_kl": float(np.mean(kls)), "entropy_coeff": entropy,
                   "supervised_loss": float(fit_info["best_loss"]),
                   "mean_log_var": float(np.mean(state.policy.log_var)),
                   "regression_pairs": sampled_pairs,
                   "augmented_pairs": len(feats), "discarded": False}
        metrics.append(row)
        if iteration_callback is not None:
            iteration_callback(state, row)

    return state.policy, metrics, state
