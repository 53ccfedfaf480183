"""LQG systems: representation, simulation, filtering, and optimal costs.

Conventions (fixed throughout the package):

* dynamics      x_{t+1} = A x_t + B u_t + w_t,   w_t ~ N(0, I_n)
* observation   y_t     = C x_t + z_t,           z_t ~ N(0, I_p)
* cost          c(y, u) = y'Qy + u'Ru            (Q, R positive definite)
* x_0 ~ N(0, I_n); the filter prior is zero mean with unit covariance.

Noise draws are consumed in a fixed order (state noise w first, then
observation noise z; the initial draw is x_0 then z_0), so trajectories are
bit-reproducible for a given seeded generator.  A ``noise_scale`` of zero
gives a deterministic test mode (draws are still consumed, keeping stream
alignment identical between modes).
"""

import json

import numpy as np

from . import riccati
from .riccati import DimensionMismatch

__all__ = [
    "LqgSystem",
    "CostSpec",
    "SolvedSystem",
    "BeliefState",
    "Trajectory",
    "FiniteHorizonSolution",
    "LqgEnv",
    "solve",
    "step_env",
    "filter_update",
    "initial_belief",
    "bias_function",
    "finite_horizon_optimal",
    "rollout_policy",
    "ZeroPolicy",
    "StaticFilterPolicy",
    "ScheduledFilterPolicy",
    "HistoryPolicy",
    "dump_spec",
    "load_spec",
    "save_spec",
    "read_spec",
]


def _matrix(name, X, rows=None, cols=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if rows is not None and X.shape[0] != rows:
        raise DimensionMismatch(f"{name}: expected {rows} rows, got {X.shape[0]}")
    if cols is not None and X.shape[1] != cols:
        raise DimensionMismatch(f"{name}: expected {cols} cols, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise DimensionMismatch(f"{name}: non-finite entries")
    return X


class LqgSystem:
    """A linear system triple (A, B, C) with identity noise covariances.

    Parameters
    ----------
    A : (n, n) array — state transition.
    B : (n, m) array — control input map.
    C : (p, n) array — observation map.
    name : optional stable identifier (used by classes of systems).
    """

    def __init__(self, A, B, C, name=None):
        self.A = _matrix("A", A)
        self.n = self.A.shape[0]
        if self.A.shape[1] != self.n:
            raise DimensionMismatch(f"A must be square, got {self.A.shape}")
        self.B = _matrix("B", B, rows=self.n)
        self.m = self.B.shape[1]
        self.C = _matrix("C", C, cols=self.n)
        self.p = self.C.shape[0]
        self.name = name

    def __repr__(self):
        tag = f" '{self.name}'" if self.name else ""
        return f"LqgSystem{tag}(n={self.n}, m={self.m}, p={self.p})"


class CostSpec:
    """Quadratic stage-cost weights: c(y, u) = y'Qy + u'Ru.

    Both weights must be symmetric positive definite.
    """

    def __init__(self, Q, R):
        self.Q = _matrix("Q", Q)
        self.R = _matrix("R", R)
        for name, W in (("Q", self.Q), ("R", self.R)):
            if W.shape[0] != W.shape[1]:
                raise DimensionMismatch(f"{name} must be square, got {W.shape}")
            if np.linalg.norm(W - W.T, 2) > 1e-12 * max(1.0, np.linalg.norm(W, 2)):
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(W)) <= 0:
                raise ValueError(f"{name} must be positive definite")
        self.p = self.Q.shape[0]
        self.m = self.R.shape[0]

    def stage_cost(self, y, u):
        y = np.asarray(y, dtype=float).ravel()
        u = np.asarray(u, dtype=float).ravel()
        return float(y @ self.Q @ y + u @ self.R @ u)


class BeliefState:
    """Conditional state mean produced by the Kalman filter.

    ``filtered`` distinguishes the posterior mean (given observations up to
    and including the current step) from the one-step prediction.
    """

    def __init__(self, mean, step, model_id=None, filtered=True):
        self.mean = np.asarray(mean, dtype=float).ravel()
        self.step = int(step)
        self.model_id = model_id
        self.filtered = bool(filtered)

    def __repr__(self):
        kind = "t|t" if self.filtered else "t|t-1"
        return f"BeliefState({kind}, step={self.step}, model={self.model_id})"


class Trajectory:
    """Simulated episode: states, actions, observations, stage costs."""

    def __init__(self, xs, us, ys, cs, rng_seed=None):
        self.xs = np.asarray(xs, dtype=float)
        self.us = np.asarray(us, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.cs = np.asarray(cs, dtype=float)
        self.rng_seed = rng_seed

    def total_cost(self):
        return float(np.sum(self.cs))

    def __len__(self):
        return len(self.cs)


class SolvedSystem:
    """An LQG system together with its steady-state control/filter solution.

    Fields: ``P`` (control Riccati solution), ``K`` (feedback gain),
    ``Sigma`` (steady one-step prediction covariance), ``L`` (innovation
    gain), ``F = A L`` (predictor gain), and ``J_star`` (optimal long-run
    average cost per step, including the irreducible observation-noise floor
    tr(Q)).

    Several closed-loop products are precomputed for the filtering hot path:
    the filtered transition (I-LC)A, the filtered input map (I-LC)B, and the
    innovation covariance C Sigma C' + I.
    """

    def __init__(self, system, cost, P, K, Sigma, L):
        self.system = system
        self.cost = cost
        self.P = P
        self.K = K
        self.Sigma = Sigma
        self.L = L
        A, B, C = system.A, system.B, system.C
        Q = cost.Q
        self.F = A @ L
        n = system.n
        ILC = np.eye(n) - L @ C
        self.filt_A = ILC @ A          # (I-LC)A : clipped/filter propagation
        self.filt_B = ILC @ B          # (I-LC)B
        self.pred_A = A - self.F @ C   # A - FC = A(I-LC) : predictor loop
        self.CQC = C.T @ Q @ C
        self.bias_matrix = P - self.CQC          # weight of the belief term
        self.innov_cov = C @ Sigma @ C.T + np.eye(system.p)
        self.J_star = (
            float(np.trace(P @ L @ C @ Sigma))
            + float(np.trace(self.CQC @ (Sigma - L @ C @ Sigma)))
            + float(np.trace(Q))
        )

    @property
    def model_id(self):
        return self.system.name

    def filter_step(self, x_hat, u, y_next):
        """Posterior mean update: (I-LC)(A x_hat + B u) + L y_next."""
        return self.filt_A @ x_hat + self.filt_B @ u + self.L @ y_next

    def bias(self, x_hat, y):
        """Relative value of (belief, observation): x'(P-C'QC)x + y'Qy."""
        x_hat = np.asarray(x_hat, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        return float(x_hat @ self.bias_matrix @ x_hat + y @ self.cost.Q @ y)

    def __repr__(self):
        return f"SolvedSystem({self.system!r}, J_star={self.J_star:.6g})"


def solve(system, cost, tol=1e-10, max_iter=100000):
    """Compute the steady-state solution of an LQG system.

    Solves both Riccati equations, forms the optimal feedback and innovation
    gains, and evaluates the optimal average cost per step

        J* = tr(P L C Sigma) + tr(C'QC (I - LC) Sigma) + tr(Q),

    where the final tr(Q) is the irreducible observation-noise cost (present
    in any Monte Carlo average, independent of the policy).
    """
    if cost.p != system.p or cost.m != system.m:
        raise DimensionMismatch(
            f"cost dims (p={cost.p}, m={cost.m}) do not match "
            f"system (p={system.p}, m={system.m})")
    P = riccati.solve_dare_control(system.A, system.B, system.C, cost.Q, cost.R,
                                   tol=tol, max_iter=max_iter)
    K = riccati.control_gain(P, system.A, system.B, cost.R)
    Sigma = riccati.solve_dare_filter(system.A, system.C, tol=tol,
                                      max_iter=max_iter)
    L = riccati.kalman_gain(Sigma, system.C)
    return SolvedSystem(system, cost, P, K, Sigma, L)


def step_env(system, x, u, rng, noise_scale=1.0):
    """Advance the environment one step; returns (x_next, y_next).

    Consumes n standard-normal draws for the state noise, then p draws for
    the observation noise, in that order.
    """
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    w = rng.standard_normal(system.n)
    z = rng.standard_normal(system.p)
    x_next = system.A @ x + system.B @ u + noise_scale * w
    y_next = system.C @ x_next + noise_scale * z
    return x_next, y_next


class LqgEnv:
    """Stateful environment wrapper around one true system.

    Draw order: x_0 (n draws), z_0 (p draws), then per step the ``step_env``
    order (w, then z).  ``y0`` is available immediately after construction.
    """

    def __init__(self, system, rng, noise_scale=1.0):
        self.system = system
        self.rng = rng
        self.noise_scale = noise_scale
        self.t = 0
        self.x = noise_scale * rng.standard_normal(system.n)
        z0 = rng.standard_normal(system.p)
        self.y = system.C @ self.x + noise_scale * z0

    def step(self, u):
        """Apply action u; advances time and returns the next observation."""
        self.x, self.y = step_env(self.system, self.x, u, self.rng,
                                  self.noise_scale)
        self.t += 1
        return self.y


def initial_belief(solved, y0):
    """Posterior mean at step 0 from the unit-covariance zero-mean prior."""
    mean = solved.L @ np.asarray(y0, dtype=float).ravel()
    return BeliefState(mean, 0, model_id=solved.model_id, filtered=True)


def filter_update(solved, belief, u, y_next):
    """One posterior-to-posterior Kalman update.

    Accepts either a :class:`BeliefState` or a bare mean vector; returns a
    :class:`BeliefState` for the next step.
    """
    if isinstance(belief, BeliefState):
        mean, step = belief.mean, belief.step
    else:
        mean, step = np.asarray(belief, dtype=float).ravel(), 0
    if mean.shape[0] != solved.system.n:
        raise DimensionMismatch(
            f"belief dim {mean.shape[0]} != state dim {solved.system.n}")
    u = np.asarray(u, dtype=float).ravel()
    y_next = np.asarray(y_next, dtype=float).ravel()
    if u.shape[0] != solved.system.m or y_next.shape[0] != solved.system.p:
        raise DimensionMismatch("action/observation dims do not match system")
    new_mean = solved.filter_step(mean, u, y_next)
    return BeliefState(new_mean, step + 1, model_id=solved.model_id,
                       filtered=True)


def bias_function(solved, cost, x_hat, y):
    """Relative value function h(x_hat, y) = x'(P - C'QC)x + y'Qy."""
    x_hat = np.asarray(x_hat, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    C = solved.system.C
    M = solved.P - C.T @ cost.Q @ C
    return float(x_hat @ M @ x_hat + y @ cost.Q @ y)


class FiniteHorizonSolution:
    """Backward/forward recursion output for the horizon-H problem.

    ``V_star`` is the optimal expected total cost over steps 0..H (including
    the per-step observation-noise floor, (H+1) tr(Q)).  ``K_gains[h]`` is
    the feedback gain applied to the posterior mean at step h (the final
    gain is zero: the last action buys nothing).  ``Sigma_pred``/
    ``Sigma_filt``/``L_gains`` hold the time-varying filter schedule with
    the unit prior Sigma_pred[0] = I.
    """

    def __init__(self, V_star, K_gains, Sigma_pred, Sigma_filt, L_gains,
                 P_list):
        self.V_star = V_star
        self.K_gains = K_gains
        self.Sigma_pred = Sigma_pred
        self.Sigma_filt = Sigma_filt
        self.L_gains = L_gains
        self.P_list = P_list
        self.H = len(K_gains) - 1


def finite_horizon_optimal(system, cost, H):
    """Solve the horizon-H problem exactly via the Riccati recursions.

    Runs the backward control recursion from the terminal weight C'QC and
    the forward filter recursion from the unit prior, then assembles

        V* = sum_h tr(P_h (Sigma_{h|h-1} - Sigma_{h|h}))
             + sum_h tr(C'QC Sigma_{h|h}) + (H+1) tr(Q).
    """
    if H < 0:
        raise ValueError("H must be >= 0")
    A, B, C = system.A, system.B, system.C
    Q, R = cost.Q, cost.R
    n, p = system.n, system.p
    CQC = C.T @ Q @ C

    P_list = [None] * (H + 1)
    P_list[H] = CQC.copy()
    for h in range(H - 1, -1, -1):
        P_next = P_list[h + 1]
        APB = A.T @ P_next @ B
        gain = np.linalg.solve(R + B.T @ P_next @ B, APB.T)
        Ph = A.T @ P_next @ A + CQC - APB @ gain
        P_list[h] = 0.5 * (Ph + Ph.T)

    K_gains = []
    for h in range(H):
        K_gains.append(riccati.control_gain(P_list[h + 1], A, B, R))
    K_gains.append(np.zeros((system.m, n)))

    Sigma_pred = [np.eye(n)]
    Sigma_filt = []
    L_gains = []
    for h in range(H + 1):
        Sp = Sigma_pred[h]
        Lh = riccati.kalman_gain(Sp, C)
        Sf = Sp - Lh @ C @ Sp
        Sf = 0.5 * (Sf + Sf.T)
        L_gains.append(Lh)
        Sigma_filt.append(Sf)
        if h < H:
            Sn = A @ Sf @ A.T + np.eye(n)
            Sigma_pred.append(0.5 * (Sn + Sn.T))

    V = (H + 1) * float(np.trace(Q))
    for h in range(H + 1):
        V += float(np.trace(P_list[h] @ (Sigma_pred[h] - Sigma_filt[h])))
        V += float(np.trace(CQC @ Sigma_filt[h]))
    return FiniteHorizonSolution(V, K_gains, Sigma_pred, Sigma_filt, L_gains,
                                 P_list)


# ---------------------------------------------------------------------------
# Policies

class _PolicyBase:
    """Sequential policy protocol: reset(), then act(y_t) -> u_t each step."""

    def reset(self):
        raise NotImplementedError

    def act(self, y):
        raise NotImplementedError


class ZeroPolicy(_PolicyBase):
    def __init__(self, m):
        self.m = m

    def reset(self):
        pass

    def act(self, y):
        return np.zeros(self.m)


class StaticFilterPolicy(_PolicyBase):
    """Certainty-equivalence controller of a fixed solved model.

    Runs that model's steady-state Kalman filter on the realized
    observations and plays u = -K x_hat.
    """

    def __init__(self, solved):
        self.solved = solved
        self.x_hat = None
        self._u_prev = None

    def reset(self):
        self.x_hat = None
        self._u_prev = None

    def act(self, y):
        s = self.solved
        if self.x_hat is None:
            self.x_hat = s.L @ np.asarray(y, dtype=float).ravel()
        else:
            self.x_hat = s.filter_step(self.x_hat, self._u_prev, y)
        u = -(s.K @ self.x_hat)
        self._u_prev = u
        return u


class ScheduledFilterPolicy(_PolicyBase):
    """Time-varying optimal policy from a finite-horizon solution."""

    def __init__(self, system, fh_solution):
        self.system = system
        self.sol = fh_solution
        self.reset()

    def reset(self):
        self._pred = np.zeros(self.system.n)
        self._h = 0

    def act(self, y):
        sol, sys_ = self.sol, self.system
        h = min(self._h, sol.H)
        y = np.asarray(y, dtype=float).ravel()
        Lh = sol.L_gains[h]
        x_filt = self._pred + Lh @ (y - sys_.C @ self._pred)
        u = -(sol.K_gains[h] @ x_filt)
        self._pred = sys_.A @ x_filt + sys_.B @ u
        self._h += 1
        return u


class HistoryPolicy(_PolicyBase):
    """Adapter for a plain callable of the observable history.

    ``fn(ys, us) -> u`` receives the lists [y_0..y_t] and [u_0..u_{t-1}].
    """

    def __init__(self, fn):
        self.fn = fn
        self.ys = []
        self.us = []

    def reset(self):
        self.ys = []
        self.us = []

    def act(self, y):
        self.ys.append(np.asarray(y, dtype=float).ravel())
        u = np.asarray(self.fn(self.ys, self.us), dtype=float).ravel()
        self.us.append(u)
        return u


def _coerce_policy(policy, m):
    if isinstance(policy, _PolicyBase):
        return policy
    if callable(policy):
        return HistoryPolicy(policy)
    raise TypeError(f"unsupported policy object: {policy!r}")


def _seed_children(rng, reps):
    """Per-episode generators derived from a seed/SeedSequence/Generator."""
    if isinstance(rng, np.random.Generator):
        return [rng] * reps, None
    if isinstance(rng, np.random.SeedSequence):
        ss = rng
    else:
        ss = np.random.SeedSequence(rng)
    return [np.random.default_rng(c) for c in ss.spawn(reps)], ss


def rollout_policy(system, cost, policy, H, rng, reps=1, noise_scale=1.0):
    """Monte Carlo estimate of the expected total cost over steps 0..H.

    ``policy`` may be a policy object (see :class:`StaticFilterPolicy`) or a
    plain callable ``fn(ys, us) -> u`` of the observable history.  Episodes
    use independent generators spawned from the given seed (or share the
    generator if one is passed directly).

    Returns
    -------
    (mean_total_cost, std_error, first_episode_trajectory)
    """
    policy = _coerce_policy(policy, system.m)
    gens, _ = _seed_children(rng, reps)
    totals = np.empty(reps)
    sample = None
    for r in range(reps):
        g = gens[r]
        env = LqgEnv(system, g, noise_scale=noise_scale)
        policy.reset()
        xs, us, ys, cs = [env.x.copy()], [], [env.y.copy()], []
        total = 0.0
        for t in range(H + 1):
            u = np.asarray(policy.act(env.y), dtype=float).ravel()
            c = cost.stage_cost(env.y, u)
            us.append(u)
            cs.append(c)
            total += c
            if t < H:
                env.step(u)
                xs.append(env.x.copy())
                ys.append(env.y.copy())
        totals[r] = total
        if r == 0:
            seed_repr = rng if isinstance(rng, (int, np.integer)) else None
            sample = Trajectory(xs, us, ys, cs, rng_seed=seed_repr)
    mean = float(np.mean(totals))
    se = float(np.std(totals, ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
    return mean, se, sample


# ---------------------------------------------------------------------------
# Serialization

def dump_spec(system, cost):
    """System + cost as a JSON-ready dict of row-major nested lists."""
    return {
        "A": system.A.tolist(),
        "B": system.B.tolist(),
        "C": system.C.tolist(),
        "Q": cost.Q.tolist(),
        "R": cost.R.tolist(),
    }


def load_spec(doc, name=None):
    """Inverse of :func:`dump_spec`; returns (LqgSystem, CostSpec)."""
    system = LqgSystem(doc["A"], doc["B"], doc["C"], name=name)
    cost = CostSpec(doc["Q"], doc["R"])
    return system, cost


def save_spec(path, system, cost):
    with open(path, "w") as fh:
        json.dump(dump_spec(system, cost), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_spec(path):
    with open(path) as fh:
        return load_spec(json.load(fh))
