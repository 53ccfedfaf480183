"""Online value-target-regression learner over a finite candidate class.

The learner runs in two phases.  A warm-up phase drives the true system with
unit-variance random actions, estimates the impulse-response (Markov)
parameter matrix by least squares, and prunes the candidate class to the
members whose exact Markov parameters sit within a data-driven radius of the
estimate.  The main phase then follows low-switching optimistic planning:
play the certainty-equivalence controller of the cheapest surviving model,
record one regression sample per step (predicted one-step value backup per
candidate vs. the realized next-step value), and only re-plan when the new
data would move some pair of candidate predictors by as much as the old data
plus a margin (the importance score reaching one).  Re-planning performs a
least-squares model regression over the pruned class, rebuilds the
confidence set around the minimizer, and adopts the set member with the
smallest steady-state optimal cost.

Candidate predictions use a clipped history window: the belief state of a
candidate is approximated by the exponentially-weighted sum of the last
``l`` action/observation pairs, which is accurate up to kappa (1-gamma)^l
because the filtered loop (I - LC)A is a stable contraction.
"""

import math
from collections import deque

import numpy as np

from . import lqg
from .riccati import DimensionMismatch

__all__ = [
    "EmptyDataset",
    "RankDeficient",
    "ClippedHistory",
    "RegressionSample",
    "ConfidenceSet",
    "MarkovEstimate",
    "PruneResult",
    "LearnerConfig",
    "ResolvedParams",
    "LearnerState",
    "RegretTrace",
    "VtrResult",
    "clipped_belief",
    "f_closed_form",
    "regress_model",
    "confidence_set",
    "compute_beta",
    "importance_score",
    "warmup_markov",
    "markov_parameters",
    "prune_class",
    "bound_D",
    "run_lqg_vtr",
    "clipping_error_probe",
]


class EmptyDataset(ValueError):
    """Regression requested on an empty sample list."""


class RankDeficient(RuntimeError):
    """Warm-up regressors do not span the parameter space."""


# ---------------------------------------------------------------------------
# Histories and samples

class ClippedHistory:
    """The last ``l_clip`` observation/action pairs, newest first.

    ``ys[0]`` is the current observation y_t, ``us[0]`` the previous action
    u_{t-1}; index s-1 holds (y_{t-s+1}, u_{t-s}).  The effective length is
    min(l, t): early in a trajectory the window is simply shorter, never
    zero-padded.
    """

    def __init__(self, ys, us):
        self.ys = [np.asarray(y, dtype=float).ravel() for y in ys]
        self.us = [np.asarray(u, dtype=float).ravel() for u in us]
        if len(self.ys) != len(self.us):
            raise DimensionMismatch(
                f"window needs equal counts, got {len(self.ys)} obs "
                f"and {len(self.us)} actions")
        self.l_clip = len(self.ys)

    @classmethod
    def from_series(cls, ys_series, us_series, t, l):
        """Window ending at time t built from full trajectories.

        ``ys_series[t]`` must be y_t and ``us_series[t-1]`` must be u_{t-1}.
        """
        l_clip = min(l, t)
        ys = [ys_series[t - s + 1] for s in range(1, l_clip + 1)]
        us = [us_series[t - s] for s in range(1, l_clip + 1)]
        return cls(ys, us)

    @property
    def window(self):
        """Alternating tuple (y_t, u_{t-1}, y_{t-1}, ..., u_{t-l_clip})."""
        out = []
        for s in range(self.l_clip):
            out.append(self.ys[s])
            out.append(self.us[s])
        return tuple(out)

    def __len__(self):
        return self.l_clip


class RegressionSample:
    """One recorded transition for value-target regression.

    ``next_belief`` is the filtered mean of the model that generated the
    action (the current optimistic model), advanced with exactly this
    action/observation pair; ``target`` caches the realized next-step value.
    """

    __slots__ = ("tau", "belief", "model_id", "action", "next_belief",
                 "next_obs", "target", "fvals", "step")

    def __init__(self, tau, belief, model_id, action, next_belief, next_obs,
                 target=None, fvals=None, step=None):
        self.tau = tau
        self.belief = np.asarray(belief, dtype=float).ravel()
        self.model_id = model_id
        self.action = np.asarray(action, dtype=float).ravel()
        self.next_belief = np.asarray(next_belief, dtype=float).ravel()
        self.next_obs = np.asarray(next_obs, dtype=float).ravel()
        self.target = target
        self.fvals = fvals
        self.step = step


class ConfidenceSet:
    """Members whose cumulative squared prediction gap to the center is small."""

    def __init__(self, center, beta, members, episode, distances=None):
        self.center = center
        self.beta = float(beta)
        self.members = list(members)
        self.episode = int(episode)
        self.distances = distances

    def __contains__(self, model_id):
        return model_id in self.members

    def __repr__(self):
        return (f"ConfidenceSet(center={self.center!r}, beta={self.beta:.4g}, "
                f"members={self.members}, episode={self.episode})")


class MarkovEstimate:
    """Least-squares estimate of the impulse-response matrix.

    ``M_hat`` has the block layout
    [C F, C Ab F, ..., C Ab^{H-1} F, C B, C Ab B, ..., C Ab^{H-1} B]
    with Ab the predictor loop A - FC of the generating system.
    """

    def __init__(self, M_hat, H_tilde, sample_count, residual_trace_mean,
                 regressor_dim, rank):
        self.M_hat = M_hat
        self.H_tilde = int(H_tilde)
        self.sample_count = int(sample_count)
        self.residual_trace_mean = float(residual_trace_mean)
        self.regressor_dim = int(regressor_dim)
        self.rank = int(rank)

    def error_scale(self):
        """Empirical 1/sqrt(T) error scale used for the pruning radius."""
        c_w = self.residual_trace_mean * self.regressor_dim
        return math.sqrt(c_w / max(self.sample_count, 1))


class PruneResult:
    """Outcome of warm-up pruning: the surviving subclass plus diagnostics."""

    def __init__(self, simclass, kept_ids, distances, radius_requested,
                 radius_used, inflations):
        self.simclass = simclass
        self.kept_ids = list(kept_ids)
        self.distances = distances
        self.radius_requested = float(radius_requested)
        self.radius_used = float(radius_used)
        self.inflations = int(inflations)


# ---------------------------------------------------------------------------
# Clipped belief and the closed-form value backup

def clipped_belief(solved, tau):
    """Belief mean reconstructed from a clipped window only.

    Evaluates sum_{s=1..l} ((I-LC)A)^{s-1} ((I-LC)B u_{t-s} + L y_{t-s+1])
    by a Horner pass from the oldest pair; an empty window gives zero.
    """
    x = np.zeros(solved.system.n)
    for s in range(tau.l_clip, 0, -1):
        inj = solved.filt_B @ tau.us[s - 1] + solved.L @ tau.ys[s - 1]
        x = solved.filt_A @ x + inj if s < tau.l_clip else inj
    return x


def _f_terms(target, x_clip, x_hat, u, optimistic, cost):
    """Deterministic part of the value backup; trace constants separate."""
    A, B, C = target.system.A, target.system.B, target.system.C
    ybar = C @ (A @ x_clip + B @ u)
    Mt = optimistic.P - optimistic.system.C.T @ cost.Q @ optimistic.system.C
    v = optimistic.L @ ybar + optimistic.filt_A @ x_hat + optimistic.filt_B @ u
    return float(v @ Mt @ v + ybar @ cost.Q @ ybar), Mt


def f_closed_form(target, tau, x_hat, u, optimistic, cost):
    """Exact one-step expected value backup under a candidate model.

    Treats the clipped-window belief of ``target`` as the state summary,
    pushes it through ``target``'s dynamics to get the predicted observation
    mean and innovation covariance, and evaluates the expectation of
    ``optimistic``'s value function at the resulting next belief and
    observation in closed form (four terms: two quadratic in the means, two
    innovation traces).  No sampling.
    """
    u = np.asarray(u, dtype=float).ravel()
    x_hat = np.asarray(x_hat, dtype=float).ravel()
    x_clip = clipped_belief(target, tau)
    quad, Mt = _f_terms(target, x_clip, x_hat, u, optimistic, cost)
    S = target.innov_cov
    Lt = optimistic.L
    tr = float(np.trace(Lt.T @ Mt @ Lt @ S) + np.trace(cost.Q @ S))
    return quad + tr


# ---------------------------------------------------------------------------
# Regression, confidence sets, switching score

def _sample_target(simclass, sample, cost):
    if sample.target is not None:
        return sample.target
    opt = simclass.solved_by_id(sample.model_id)
    return lqg.bias_function(opt, cost, sample.next_belief, sample.next_obs)


def _sample_fvals(simclass, sample, cost):
    if sample.fvals is not None:
        return sample.fvals
    opt = simclass.solved_by_id(sample.model_id)
    return np.array([
        f_closed_form(s, sample.tau, sample.belief, sample.action, opt, cost)
        for s in simclass.solved
    ])


class _GramAccumulator:
    """Sufficient statistics of (f-vector, target) pairs.

    Keeps S_ff = sum f f', s_fy = sum f*y, s_yy = sum y^2 so that per-member
    regression losses and per-pair squared prediction gaps are O(M^2) reads,
    and each arriving sample costs one M x M outer-product update.
    """

    def __init__(self, M):
        self.M = M
        self.S_ff = np.zeros((M, M))
        self.s_fy = np.zeros(M)
        self.s_yy = 0.0
        self.count = 0

    def update(self, fvals, target):
        self.S_ff += np.outer(fvals, fvals)
        self.s_fy += fvals * target
        self.s_yy += target * target
        self.count += 1

    def merge(self, other):
        self.S_ff += other.S_ff
        self.s_fy += other.s_fy
        self.s_yy += other.s_yy
        self.count += other.count

    def reset(self):
        self.S_ff[:] = 0.0
        self.s_fy[:] = 0.0
        self.s_yy = 0.0
        self.count = 0

    def losses(self):
        d = np.diag(self.S_ff)
        return d - 2.0 * self.s_fy + self.s_yy

    def pair_dists(self):
        d = np.diag(self.S_ff)
        return d[:, None] + d[None, :] - 2.0 * self.S_ff


def _fill_accumulator(acc, simclass, samples, cost):
    for s in samples:
        acc.update(_sample_fvals(simclass, s, cost),
                   _sample_target(simclass, s, cost))
    return acc


def regress_model(simclass, Z, cost):
    """Least-squares model choice over the class by full enumeration.

    Returns (model_id, losses) where losses[i] is the summed squared gap
    between member i's predicted backups and the realized value targets.
    Ties break to the earliest member.
    """
    if not Z:
        raise EmptyDataset("regression needs at least one sample")
    acc = _fill_accumulator(_GramAccumulator(len(simclass)), simclass, Z, cost)
    losses = acc.losses()
    return simclass.ids[int(np.argmin(losses))], losses


def confidence_set(simclass, Z, center, beta, cost, episode=0):
    """Members within squared prediction distance ``beta`` of the center."""
    acc = _fill_accumulator(_GramAccumulator(len(simclass)), simclass, Z, cost)
    dists = acc.pair_dists()[simclass.index_of(center)]
    members = [simclass.ids[i] for i in range(len(simclass))
               if dists[i] <= beta]
    return ConfidenceSet(center, beta, members, episode, distances=dists)


def compute_beta(D, class_size, H, delta, Delta, scale=1.0):
    """Confidence radius for the value-target regression.

    beta = scale * (2 D^2 log(2 N) + 4 Delta D H + 4 (D + Delta)
                    + 4 D sqrt(2 log(4 H (H+1) / delta)))

    with N the (finite) class size standing in for the covering number.
    The printed constants are loose, hence the multiplicative ``scale``.
    """
    if class_size < 1 or H < 1:
        raise ValueError("class_size and H must be >= 1")
    term1 = 2.0 * D * D * math.log(2.0 * class_size)
    term2 = 4.0 * Delta * D * H
    term3 = 4.0 * (D + Delta)
    term4 = 4.0 * D * math.sqrt(2.0 * math.log(4.0 * H * (H + 1) / delta))
    return scale * (term1 + term2 + term3 + term4)


def importance_score(simclass, Z, Z_new, psi, cost):
    """Largest ratio of new-data to old-data pairwise prediction gaps.

    score = max over member pairs of ||f_i - f_j||^2_{Z_new}
    / (||f_i - f_j||^2_Z + psi).  Empty new data or a singleton class give
    zero.  Used to trigger re-planning when it reaches one.
    """
    if psi <= 0:
        raise ValueError("psi must be positive")
    M = len(simclass)
    if M < 2 or not Z_new:
        return 0.0
    acc_old = _fill_accumulator(_GramAccumulator(M), simclass, Z, cost)
    acc_new = _fill_accumulator(_GramAccumulator(M), simclass, Z_new, cost)
    return _score_from_accumulators(acc_old, acc_new, psi)


def _score_from_accumulators(acc_old, acc_new, psi):
    if acc_new.count == 0 or acc_new.M < 2:
        return 0.0
    num = acc_new.pair_dists()
    den = acc_old.pair_dists() + psi
    iu = np.triu_indices(acc_new.M, k=1)
    return float(np.max(num[iu] / den[iu]))


# ---------------------------------------------------------------------------
# Warm-up: Markov-parameter estimation and pruning

def markov_parameters(solved, H_tilde):
    """Exact impulse-response blocks of a solved system.

    [C F, C Ab F, ..., C Ab^{H-1} F, C B, C Ab B, ..., C Ab^{H-1} B]
    with Ab = A - FC.
    """
    C = solved.system.C
    Ab = solved.pred_A
    blocks_F, blocks_B = [], []
    XF, XB = solved.F, solved.system.B
    for _ in range(int(H_tilde)):
        blocks_F.append(C @ XF)
        blocks_B.append(C @ XB)
        XF = Ab @ XF
        XB = Ab @ XB
    return np.hstack(blocks_F + blocks_B)


def _collect_warmup(env, T_w, sigma_u):
    """Drive the environment with N(0, sigma_u^2 I) actions for T_w steps."""
    m = env.system.m
    ys = [env.y.copy()]
    us = []
    costs_input = []
    for _ in range(int(T_w)):
        u = sigma_u * env.rng.standard_normal(m)
        us.append(u)
        costs_input.append((ys[-1], u))
        ys.append(env.step(u).copy())
    return ys, us, costs_input


def _estimate_markov(ys, us, H_tilde, p, m):
    H_tilde = int(H_tilde)
    T = len(us)
    if T < H_tilde + 1:
        raise ValueError("warm-up shorter than the truncation window")
    d = H_tilde * (p + m)
    rows = []
    targets = []
    for t in range(H_tilde, T + 1):
        phi = np.concatenate(
            [ys[t - 1 - j] for j in range(H_tilde)]
            + [us[t - 1 - j] for j in range(H_tilde)])
        rows.append(phi)
        targets.append(ys[t])
    Phi = np.asarray(rows)
    Y = np.asarray(targets)
    sol, _, rank, _ = np.linalg.lstsq(Phi, Y, rcond=None)
    if rank < d:
        raise RankDeficient(
            f"warm-up regressors have rank {rank} < {d}; "
            "need a longer or better-excited warm-up")
    resid = Y - Phi @ sol
    residual_trace_mean = float(np.mean(np.sum(resid * resid, axis=1)))
    return MarkovEstimate(sol.T, H_tilde, Phi.shape[0], residual_trace_mean,
                          d, rank)


def warmup_markov(env, T_w, H_tilde, sigma_u=1.0):
    """Random-action warm-up followed by impulse-response least squares.

    The action noise is drawn from the environment's own generator (one
    stream per run keeps trajectories bit-reproducible).
    """
    ys, us, _ = _collect_warmup(env, T_w, sigma_u)
    return _estimate_markov(ys, us, H_tilde, env.system.p, env.system.m)


def prune_class(simclass, M_hat, radius, H_tilde=None):
    """Keep members whose exact Markov parameters are close to the estimate.

    If no member lands within ``radius``, the radius doubles until one does
    (each inflation is counted on the result), so the surviving class is
    never empty.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if H_tilde is None:
        H_tilde = (M_hat.H_tilde if isinstance(M_hat, MarkovEstimate)
                   else None)
        if H_tilde is None:
            raise ValueError("pass H_tilde when M_hat is a bare matrix")
    M_mat = M_hat.M_hat if isinstance(M_hat, MarkovEstimate) else M_hat
    dists = np.array([
        np.linalg.norm(markov_parameters(s, H_tilde) - M_mat, 2)
        for s in simclass.solved
    ])
    radius_used = float(radius)
    inflations = 0
    while not np.any(dists <= radius_used):
        radius_used *= 2.0
        inflations += 1
    keep = [simclass.ids[i] for i in range(len(simclass))
            if dists[i] <= radius_used]
    return PruneResult(simclass.subset(keep), keep, dists, radius,
                       radius_used, inflations)


# ---------------------------------------------------------------------------
# Uniform bound on the predictor values

def bound_D(profile, X1, X2, Ybar, Ubar, cost, parts=False):
    """Uniform bound on |f| and |h| over the bounded input box.

    Combines the printed quadratic bound
    D2 = (N_P + N_S^2 N_U) X2^2 + N_U Ybar^2 with a direct triangle-
    inequality bound D1 on the four closed-form terms; returns max(D1, D2)
    (or the triple when ``parts`` is set).
    """
    N_S, N_U, N_P = profile.N_S, profile.N_U, profile.N_P
    N_L, N_Sig = profile.N_L, profile.N_Sigma
    p = cost.p
    Mt_norm = N_P + N_S ** 2 * N_U
    ybar = N_S ** 2 * (X2 + Ubar)
    vbar = N_L * ybar + (1.0 + N_L * N_S) * N_S * (X1 + Ubar)
    innov = N_S ** 2 * N_Sig + 1.0
    D1 = (Mt_norm * vbar ** 2 + N_U * ybar ** 2
          + Mt_norm * N_L ** 2 * p * innov + N_U * p * innov)
    D2 = Mt_norm * X2 ** 2 + N_U * Ybar ** 2
    D = max(D1, D2)
    if parts:
        return D, D1, D2
    return D


# ---------------------------------------------------------------------------
# Configuration

class LearnerConfig:
    """Tunable knobs; "auto" entries are resolved against class and horizon.

    Auto rules: the truncation window grows logarithmically with the horizon
    at the certified filter decay rate, warm-up covers 20 windows of
    regressors (at least 500 steps), the clip length makes the clipped-
    history bias O(1/H), the state guard is c_x (sqrt(n)+sqrt(p)) log(H+e),
    psi = 4 D^2 + 1, and the episode cap scales with log|class| log^2(D H).
    ``d_mode`` picks between the analytic bound on the predictor values and
    an empirical one (1.5 x the largest magnitude observed on warm-up data).
    """

    _FIELDS = ("T_w", "H_tilde", "l", "psi", "beta_scale", "K_bar", "M_x",
               "c_x", "delta", "sigma_u", "d_mode", "c_K", "D", "seed")

    def __init__(self, T_w="auto", H_tilde="auto", l="auto", psi="auto",
                 beta_scale=0.01, K_bar="auto", M_x="auto", c_x=10.0,
                 delta=0.05, sigma_u=1.0, d_mode="analytic", c_K=1.0,
                 D="auto", seed=0):
        self.T_w = T_w
        self.H_tilde = H_tilde
        self.l = l
        self.psi = psi
        self.beta_scale = beta_scale
        self.K_bar = K_bar
        self.M_x = M_x
        self.c_x = c_x
        self.delta = delta
        self.sigma_u = sigma_u
        self.d_mode = d_mode
        self.c_K = c_K
        self.D = D
        self.seed = seed

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - set(cls._FIELDS)
        if unknown:
            raise ValueError(f"unknown learner config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self):
        return {k: getattr(self, k) for k in self._FIELDS}


class ResolvedParams:
    """Concrete values of every knob for one (class, horizon) pair."""

    def __init__(self, **kw):
        self.__dict__.update(kw)

    def to_dict(self):
        return dict(self.__dict__)

    def __repr__(self):
        inner = ", ".join(f"{k}={v}" for k, v in sorted(self.__dict__.items())
                          if not isinstance(v, (list, np.ndarray)))
        return f"ResolvedParams({inner})"


def _resolve_structure(config, simclass, H):
    """Phase-independent parameters (everything except D and its children)."""
    prof = simclass.profile
    n = simclass.members[0].n
    m = simclass.members[0].m
    p = simclass.members[0].p
    gamma2 = prof.gamma2
    kappa2 = prof.kappa2
    decay = -math.log(max(1.0 - gamma2, 1e-12))

    if config.H_tilde == "auto":
        H_tilde = max(2 * n + 1,
                      math.ceil(math.log(max(kappa2, math.e) * H * H) / decay))
        H_tilde = min(H_tilde, 80)
    else:
        H_tilde = int(config.H_tilde)

    T_w = (max(500, 20 * H_tilde * (m + p)) if config.T_w == "auto"
           else int(config.T_w))
    l = (max(1, math.ceil(math.log(max(H * (n + p), 2)) / decay))
         if config.l == "auto" else int(config.l))
    M_x = (config.c_x * (math.sqrt(n) + math.sqrt(p)) * math.log(H + math.e)
           if config.M_x == "auto" else float(config.M_x))

    Ubar = prof.N_K * M_x
    Ybar = prof.N_S * M_x + 3.0 * math.sqrt(p * math.log(H + math.e))
    X1 = M_x
    X2 = (kappa2 * (1.0 + prof.N_L * prof.N_S) * prof.N_S * Ubar
          + kappa2 * (1.0 + gamma2) * prof.N_L * Ybar) / gamma2
    Delta = kappa2 * (1.0 - gamma2) ** l * (n + p) * math.log(H + math.e) ** 2
    return dict(n=n, m=m, p=p, H=H, H_tilde=H_tilde, T_w=T_w, l=l, M_x=M_x,
                Ubar=Ubar, Ybar=Ybar, X1=X1, X2=X2, Delta=Delta,
                gamma2=gamma2, kappa2=kappa2, sigma_u=float(config.sigma_u),
                delta=float(config.delta), beta_scale=float(config.beta_scale))


def _resolve_with_D(config, simclass, cost, base, D):
    psi = 4.0 * D * D + 1.0 if config.psi == "auto" else float(config.psi)
    beta = compute_beta(D, len(simclass), base["H"], base["delta"],
                        base["Delta"], scale=base["beta_scale"])
    if config.K_bar == "auto":
        K_bar = math.ceil(config.c_K * (math.log2(len(simclass)) + 1.0)
                          * math.log(D * base["H"] + math.e) ** 2)
        K_bar = max(K_bar, 2)
    else:
        K_bar = int(config.K_bar)
    return ResolvedParams(D=D, psi=psi, beta=beta, K_bar=K_bar, **base)


def resolve_config(config, simclass, cost, H):
    """Resolve every "auto" knob except empirical-D (which needs data)."""
    base = _resolve_structure(config, simclass, H)
    if config.D != "auto":
        D = float(config.D)
    elif config.d_mode == "analytic":
        D = bound_D(simclass.profile, base["X1"], base["X2"], base["Ybar"],
                    base["Ubar"], cost)
    else:
        D = None  # filled in after warm-up from observed magnitudes
    if D is None:
        return base
    return _resolve_with_D(config, simclass, cost, base, D)


# ---------------------------------------------------------------------------
# Online run

class _MemberTracker:
    """Per-candidate filter state and rolling clipped-belief window."""

    def __init__(self, solved, l):
        self.solved = solved
        self.l = l
        self.belief = None
        self.x_clip = np.zeros(solved.system.n)
        self._window = deque()
        self._A_pow_l = np.linalg.matrix_power(solved.filt_A, l)

    def start(self, y0):
        self.belief = self.solved.L @ y0

    def observe(self, u, y_next):
        s = self.solved
        self.belief = s.filter_step(self.belief, u, y_next)
        inj = s.filt_B @ u + s.L @ y_next
        self.x_clip = s.filt_A @ self.x_clip + inj
        self._window.append(inj)
        if len(self._window) > self.l:
            old = self._window.popleft()
            self.x_clip = self.x_clip - self._A_pow_l @ old


class LearnerState:
    """Mutable run state: datasets, episode index, optimistic model, flags."""

    def __init__(self, U1_ids, K_bar, psi, l, T_w, M_x, D, beta):
        self.U1_ids = list(U1_ids)
        self.Z = []
        self.Z_new = []
        self.k = 1
        self.optimistic_id = None
        self.episode_starts = []
        self.psi = psi
        self.K_bar = K_bar
        self.l = l
        self.T_w = T_w
        self.M_x = M_x
        self.D = D
        self.beta = beta
        self.halted = False
        self.halt_step = None
        self.max_belief_norm = 0.0
        self.confidence_sets = []


class RegretTrace:
    """Per-step log: step, cost, cumulative_regret, episode, score, halted."""

    COLUMNS = ("step", "cost", "cumulative_regret", "episode", "score",
               "halted")

    def __init__(self, H):
        self.step = np.arange(H, dtype=int)
        self.cost = np.zeros(H)
        self.cumulative_regret = np.zeros(H)
        self.episode = np.zeros(H, dtype=int)
        self.score = np.zeros(H)
        self.halted = np.zeros(H, dtype=int)

    def row(self, t, cost, cum_regret, episode, score, halted):
        self.cost[t] = cost
        self.cumulative_regret[t] = cum_regret
        self.episode[t] = episode
        self.score[t] = score
        self.halted[t] = int(halted)

    def final_regret(self):
        return float(self.cumulative_regret[-1])

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for i in range(len(self.step)):
                fh.write("%d,%.12g,%.12g,%d,%.12g,%d\n" % (
                    self.step[i], self.cost[i], self.cumulative_regret[i],
                    self.episode[i], self.score[i], self.halted[i]))


class VtrResult:
    """Everything produced by one online run."""

    def __init__(self, actions, trace, episodes, halted, markov, prune,
                 params, state):
        self.actions = actions
        self.trace = trace
        self.episodes = episodes
        self.halted = halted
        self.markov = markov
        self.prune = prune
        self.params = params
        self.state = state

    def total_cost(self):
        return float(np.sum(self.trace.cost))

    def switch_count(self):
        return len(self.episodes) - 1


def _empirical_D(U1, opt_idx, cost, ys, us, l, window=400):
    """1.5 x the largest |f| / |target| magnitude over late warm-up steps.

    Replays the tail of the warm-up series through the surviving members'
    clipped windows and the initial optimistic model's filter.  The clipped
    window stands in for the optimistic belief — a magnitude estimate does
    not need the full filtering prefix.
    """
    T = len(us)
    start = max(l + 1, T - window)
    if start >= T:
        return 1.0
    solved = list(U1.solved)
    opt = solved[opt_idx]
    worst = 0.0
    for t in range(start, T):
        tau = ClippedHistory.from_series(ys, us, t, l)
        x_hat = clipped_belief(opt, tau)
        u = us[t]
        for s in solved:
            val = f_closed_form(s, tau, x_hat, u, opt, cost)
            worst = max(worst, abs(val))
        nxt = opt.filter_step(x_hat, u, ys[t + 1])
        worst = max(worst, abs(lqg.bias_function(opt, cost, nxt, ys[t + 1])))
    return 1.5 * max(worst, 1e-9)


def run_lqg_vtr(simclass, cost, env, H, config=None):
    """Full online run: warm-up, pruning, optimistic low-switching control.

    ``env`` is an :class:`lqg.LqgEnv` wrapping the true system (used for
    stepping and, on the experimenter's side, for the per-step regret
    baseline).  Executes exactly ``H`` actions (steps 0..H-1).

    Returns a :class:`VtrResult`; halting on a runaway belief is a recorded
    outcome, not an error.
    """
    config = config or LearnerConfig()
    base = _resolve_structure(config, simclass, H)
    T_w, l = base["T_w"], base["l"]
    if H <= T_w:
        raise ValueError(f"horizon {H} must exceed the warm-up length {T_w}")
    true_solved = lqg.solve(env.system, cost)
    J_true = true_solved.J_star

    trace = RegretTrace(H)
    actions = np.zeros((H, simclass.members[0].m))

    # Phase 1: warm-up with random actions.
    ys, us, _ = _collect_warmup(env, T_w, base["sigma_u"])
    cum = 0.0
    for t in range(T_w):
        c = cost.stage_cost(ys[t], us[t])
        cum += c - J_true
        trace.row(t, c, cum, 0, 0.0, False)
        actions[t] = us[t]

    markov = _estimate_markov(ys, us, base["H_tilde"], base["p"], base["m"])
    radius = 3.0 * markov.error_scale()
    prune = prune_class(simclass, markov, radius)
    U1 = prune.simclass
    M1 = len(U1)

    # Initial optimistic model: cheapest surviving steady-state cost.
    J_values = np.array([s.J_star for s in U1.solved])
    opt_idx = int(np.argmin(J_values))

    # Resolve the data-dependent knobs.
    if config.D != "auto":
        D = float(config.D)
    elif config.d_mode == "analytic":
        D = bound_D(simclass.profile, base["X1"], base["X2"], base["Ybar"],
                    base["Ubar"], cost)
    else:
        D = _empirical_D(U1, opt_idx, cost, ys, us, l)
    params = _resolve_with_D(config, U1, cost, base, D)

    state = LearnerState(U1.ids, params.K_bar, params.psi, l, T_w,
                         params.M_x, D, params.beta)
    state.optimistic_id = U1.ids[opt_idx]
    state.episode_starts.append(T_w)

    # Catch the member filters up over the warm-up prefix.
    trackers = [_MemberTracker(s, l) for s in U1.solved]
    for tr in trackers:
        tr.start(ys[0])
    for t in range(T_w):
        for tr in trackers:
            tr.observe(us[t], ys[t + 1])

    acc_Z = _GramAccumulator(M1)
    acc_new = _GramAccumulator(M1)
    episodes = [{
        "k": 1, "start": T_w, "model": state.optimistic_id,
        "set": list(U1.ids), "beta": params.beta, "center": None,
        "losses": None, "score_at_switch": None,
    }]

    # Pair-constant cache for the trace terms of f, keyed by optimistic idx.
    def _trace_consts(j):
        opt = U1.solved[j]
        Mt = opt.bias_matrix
        LtM = opt.L.T @ Mt @ opt.L
        return np.array([
            float(np.trace(LtM @ U1.solved[i].innov_cov)
                  + np.trace(cost.Q @ U1.solved[i].innov_cov))
            for i in range(M1)
        ])

    consts_cache = {opt_idx: _trace_consts(opt_idx)}

    for t in range(T_w, H):
        opt = U1.solved[opt_idx]
        x_opt = trackers[opt_idx].belief
        x_norm = np.linalg.norm(x_opt)
        if x_norm > state.max_belief_norm:
            state.max_belief_norm = float(x_norm)

        if not state.halted and x_norm > params.M_x:
            state.halted = True
            state.halt_step = t
        u = (np.zeros(base["m"]) if state.halted
             else -(opt.K @ x_opt))
        actions[t] = u
        c = cost.stage_cost(ys[-1], u)
        cum += c - J_true
        y_next = env.step(u).copy()
        us.append(u)
        ys.append(y_next)

        score = 0.0
        if not state.halted:
            # Predicted backups for every member at this transition.
            if opt_idx not in consts_cache:
                consts_cache[opt_idx] = _trace_consts(opt_idx)
            consts = consts_cache[opt_idx]
            base_vec = opt.filt_A @ x_opt + opt.filt_B @ u
            fvals = np.empty(M1)
            for i in range(M1):
                si = U1.solved[i]
                ybar = si.system.C @ (si.system.A @ trackers[i].x_clip
                                      + si.system.B @ u)
                v = opt.L @ ybar + base_vec
                fvals[i] = (v @ opt.bias_matrix @ v
                            + ybar @ cost.Q @ ybar + consts[i])

            for tr in trackers:
                tr.observe(u, y_next)
            next_belief = trackers[opt_idx].belief
            target = float(next_belief @ opt.bias_matrix @ next_belief
                           + y_next @ cost.Q @ y_next)
            tau = ClippedHistory.from_series(ys, us, t, l)
            sample = RegressionSample(
                tau, x_opt, state.optimistic_id, u, next_belief, y_next,
                target=target, fvals=fvals, step=t)
            state.Z_new.append(sample)
            acc_new.update(fvals, target)

            score = _score_from_accumulators(acc_Z, acc_new, params.psi)
            if score >= 1.0 and state.k < params.K_bar:
                acc_Z.merge(acc_new)
                acc_new.reset()
                state.Z.extend(state.Z_new)
                state.Z_new = []
                losses = acc_Z.losses()
                center_idx = int(np.argmin(losses))
                dists = acc_Z.pair_dists()[center_idx]
                member_idx = [i for i in range(M1)
                              if dists[i] <= params.beta]
                cs = ConfidenceSet(U1.ids[center_idx], params.beta,
                                   [U1.ids[i] for i in member_idx],
                                   state.k + 1, distances=dists)
                state.confidence_sets.append(cs)
                opt_idx = member_idx[int(np.argmin(J_values[member_idx]))]
                state.optimistic_id = U1.ids[opt_idx]
                state.k += 1
                state.episode_starts.append(t + 1)
                episodes.append({
                    "k": state.k, "start": t + 1,
                    "model": state.optimistic_id, "set": list(cs.members),
                    "beta": params.beta, "center": cs.center,
                    "losses": losses.tolist(), "score_at_switch": score,
                })
        else:
            for tr in trackers:
                tr.observe(u, y_next)

        trace.row(t, c, cum, state.k, score, state.halted)

    return VtrResult(actions, trace, episodes, state.halted, markov, prune,
                     params, state)


# ---------------------------------------------------------------------------
# Clipping-error probe

def clipping_error_probe(target, optimistic, cost, trajectory, l_values):
    """Measured |f' - f| gaps between clipped and full-history beliefs.

    Replays a recorded trajectory; for each requested clip length the probe
    evaluates the value backup twice per step — once from the clipped
    window, once with the exact filtered belief of ``target`` substituted —
    and reports the largest absolute gap.

    Gaps are compared only on the common suffix where every requested
    window is fully populated (steps ``t > max(l_values)``).  Earlier steps
    carry a truncation remainder that is identical for every ``l >= t`` and
    would flatten the measured decay.

    Returns a dict {l: max_gap}.
    """
    ys = [np.asarray(y, dtype=float).ravel() for y in trajectory.ys]
    us = [np.asarray(u, dtype=float).ravel() for u in trajectory.us]
    T = len(us)
    if T < 3:
        raise ValueError("trajectory too short")

    # Exact filtered beliefs under both models along the trajectory.
    full_t, full_o = [target.L @ ys[0]], [optimistic.L @ ys[0]]
    for t in range(T - 1):
        full_t.append(target.filter_step(full_t[-1], us[t], ys[t + 1]))
        full_o.append(optimistic.filter_step(full_o[-1], us[t], ys[t + 1]))

    S = target.innov_cov
    Mt = optimistic.bias_matrix
    LtM = optimistic.L.T @ Mt @ optimistic.L
    const = float(np.trace(LtM @ S) + np.trace(cost.Q @ S))

    A, B, C = target.system.A, target.system.B, target.system.C

    def f_with(x_state, x_hat, u):
        ybar = C @ (A @ x_state + B @ u)
        v = (optimistic.L @ ybar + optimistic.filt_A @ x_hat
             + optimistic.filt_B @ u)
        return float(v @ Mt @ v + ybar @ cost.Q @ ybar) + const

    t0 = min(int(max(l_values)) + 1, T - 1)
    out = {}
    for l in l_values:
        l = int(l)
        tr = _MemberTracker(target, l)
        tr.start(ys[0])
        worst = 0.0
        for t in range(1, T):
            tr.observe(us[t - 1], ys[t])
            if t < t0:
                continue
            gap = abs(f_with(tr.x_clip, full_o[t], us[t])
                      - f_with(full_t[t], full_o[t], us[t]))
            worst = max(worst, gap)
        out[l] = worst
    return out
