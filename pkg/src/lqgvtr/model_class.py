"""Finite candidate-system classes: validation, low-rank grids, profiles.

A candidate class is an ordered, finite list of systems sharing one cost
spec.  Members are screened by `validate_assumptions`, which certifies, in
order: open-loop stability, parameter norms, controllability/observability,
Riccati solvability, a contractive closed control loop, and strong stability
of the predictor loop A - ALC.  Failures are recorded on the report (and the
member flagged as pruned), never raised.
"""

import itertools
import json

import numpy as np

from . import lqg, riccati

__all__ = [
    "EmptyClass",
    "AssumptionLimits",
    "ValidationReport",
    "ClassProfile",
    "SimulatorClass",
    "LowRankSpec",
    "validate_assumptions",
    "instantiate_lowrank",
    "class_profile",
    "dump_class",
    "load_class",
    "save_class",
    "read_class",
]


class EmptyClass(RuntimeError):
    """Every candidate was pruned."""


class AssumptionLimits:
    """Configured ceilings used by the validators.

    N_S caps the spectral norms of A, B, C; N_K caps the feedback gain;
    gamma1_max caps the closed-loop norm ||A - BK|| (must stay below 1);
    kappa_cap rejects degenerate strong-stability certificates.
    """

    def __init__(self, N_S=10.0, N_K=10.0, gamma1_max=0.999, kappa_cap=1e6):
        self.N_S = float(N_S)
        self.N_K = float(N_K)
        self.gamma1_max = float(gamma1_max)
        self.kappa_cap = float(kappa_cap)


class ValidationReport:
    """Ordered per-assumption outcomes with certified constants."""

    def __init__(self, name):
        self.name = name
        self.checks = []          # list of (check_name, passed, detail)
        self.certified = {}       # numeric certificates gathered on the way
        self.solved = None        # SolvedSystem when the Riccati stage passed
        self.passed = True

    def add(self, check, ok, detail=""):
        self.checks.append((check, bool(ok), detail))
        self.passed = self.passed and bool(ok)
        return bool(ok)

    def failures(self):
        return [c for c in self.checks if not c[1]]

    def __repr__(self):
        state = "pass" if self.passed else "FAIL"
        return f"ValidationReport({self.name!r}, {state}, {len(self.checks)} checks)"


def _ctrb_rank(A, B):
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return int(np.linalg.matrix_rank(np.hstack(blocks)))


def validate_assumptions(system, cost, limits=None, tol=1e-10, max_iter=100000):
    """Screen one system against the class assumptions.

    Checks run in increasing cost order and short-circuit on failure (later
    checks are simply absent from the report).  Solver failures are recorded
    as assumption failures, not raised.
    """
    limits = limits or AssumptionLimits()
    rep = ValidationReport(system.name)
    A, B, C = system.A, system.B, system.C

    rho = riccati.spectral_radius(A)
    rep.certified["rho"] = rho
    if not rep.add("open_loop_stable", rho < 1.0, f"rho(A) = {rho:.6g}"):
        return rep
    phi_A = riccati.stability_report(A).transient_bound
    rep.certified["phi"] = phi_A

    norms = {name: float(np.linalg.norm(M, 2))
             for name, M in (("A", A), ("B", B), ("C", C))}
    rep.certified.update({f"norm_{k}": v for k, v in norms.items()})
    worst = max(norms.values())
    if not rep.add("param_norms", worst <= limits.N_S,
                   f"max norm {worst:.6g} vs N_S = {limits.N_S:.6g}"):
        return rep

    ctrb = _ctrb_rank(A, B)
    obsv = _ctrb_rank(A.T, C.T)
    ok = ctrb == system.n and obsv == system.n
    if not rep.add("controllable_observable", ok,
                   f"ctrb rank {ctrb}/{system.n}, obsv rank {obsv}/{system.n}"):
        return rep

    try:
        solved = lqg.solve(system, cost, tol=tol, max_iter=max_iter)
    except (riccati.NonConvergence, np.linalg.LinAlgError) as exc:
        rep.add("riccati_solvable", False, str(exc))
        return rep
    rep.add("riccati_solvable", True, "")
    rep.solved = solved
    rep.certified["P_norm"] = float(np.linalg.norm(solved.P, 2))
    rep.certified["Sigma_norm"] = float(np.linalg.norm(solved.Sigma, 2))
    rep.certified["L_norm"] = float(np.linalg.norm(solved.L, 2))

    K_norm = float(np.linalg.norm(solved.K, 2))
    closed = float(np.linalg.norm(A - B @ solved.K, 2))
    rep.certified["K_norm"] = K_norm
    rep.certified["closed_loop_norm"] = closed
    ok = K_norm <= limits.N_K and closed <= min(limits.gamma1_max, 1.0 - 1e-12)
    if not rep.add("contractive_control_loop", ok,
                   f"||K|| = {K_norm:.6g}, ||A-BK|| = {closed:.6g}"):
        return rep

    pred_profile = riccati.stability_report(solved.pred_A)
    rep.certified["kappa2"] = pred_profile.strong_stable_kappa
    rep.certified["gamma2"] = pred_profile.strong_stable_gamma
    rep.certified["pred_rho"] = pred_profile.spectral_radius
    rep.certified["pred_fallback"] = float(pred_profile.fallback)
    ok = (pred_profile.strong_stable_gamma > 0.0
          and pred_profile.strong_stable_kappa <= limits.kappa_cap)
    rep.add("predictor_strongly_stable", ok,
            f"kappa = {pred_profile.strong_stable_kappa:.6g}, "
            f"gamma = {pred_profile.strong_stable_gamma:.6g}")
    return rep


class ClassProfile:
    """Aggregated stability bounds for a validated class.

    Empirical values are maxima (minima for gamma margins) of the per-member
    certificates; N_P, N_Sigma, N_L are the analytic series bounds built
    from them and must dominate the corresponding empirical norms.
    """

    def __init__(self, reports, cost):
        certs = [r.certified for r in reports]
        self.N_S = max(max(c["norm_A"], c["norm_B"], c["norm_C"]) for c in certs)
        self.N_K = max(c["K_norm"] for c in certs)
        self.gamma1 = max(c["closed_loop_norm"] for c in certs)
        self.kappa2 = max(c["kappa2"] for c in certs)
        self.gamma2 = min(c["gamma2"] for c in certs)
        self.N_U = max(float(np.linalg.norm(cost.Q, 2)),
                       float(np.linalg.norm(cost.R, 2)))
        g1, g2 = self.gamma1, self.gamma2
        self.N_P = self.N_U * (self.N_S ** 2 + self.N_K ** 2) / (2 * g1 - g1 ** 2)
        self.N_Sigma = self.kappa2 ** 2 * (1 + self.kappa2 ** 2) / (2 * g2 - g2 ** 2)
        self.N_L = self.N_Sigma * self.N_S
        self.P_norm_max = max(c["P_norm"] for c in certs)
        self.Sigma_norm_max = max(c["Sigma_norm"] for c in certs)
        self.L_norm_max = max(c["L_norm"] for c in certs)

    def __repr__(self):
        return (f"ClassProfile(N_S={self.N_S:.4g}, N_K={self.N_K:.4g}, "
                f"gamma1={self.gamma1:.4g}, kappa2={self.kappa2:.4g}, "
                f"gamma2={self.gamma2:.4g}, N_P={self.N_P:.4g}, "
                f"N_Sigma={self.N_Sigma:.4g}, N_L={self.N_L:.4g})")


class SimulatorClass:
    """Ordered finite set of validated candidate systems with shared cost.

    Members failing validation are moved to ``pruned`` (with their reports)
    rather than raising; an entirely pruned candidate list raises
    :class:`EmptyClass`.  Member identifiers default to their list position
    (``m0``, ``m1``, ...) when systems carry no name.
    """

    def __init__(self, members, cost, limits=None, tol=1e-10):
        self.cost = cost
        self.limits = limits or AssumptionLimits()
        self.members = []
        self.solved = []
        self.reports = []
        self.pruned = []
        for idx, system in enumerate(members):
            if system.name is None:
                system.name = f"m{idx}"
            rep = validate_assumptions(system, cost, self.limits, tol=tol)
            if rep.passed:
                self.members.append(system)
                self.solved.append(rep.solved)
                self.reports.append(rep)
            else:
                self.pruned.append((system, rep))
        if not self.members:
            raise EmptyClass(
                f"all {len(members)} candidates failed validation")
        self.ids = [s.name for s in self.members]
        self._index = {name: i for i, name in enumerate(self.ids)}
        self.profile = ClassProfile(self.reports, cost)

    def __len__(self):
        return len(self.members)

    def index_of(self, model_id):
        return self._index[model_id]

    def solved_by_id(self, model_id):
        return self.solved[self._index[model_id]]

    def subset(self, ids):
        """New class restricted to ``ids`` (original order preserved)."""
        keep = [i for i in range(len(self.members)) if self.ids[i] in set(ids)]
        sub = SimulatorClass.__new__(SimulatorClass)
        sub.cost = self.cost
        sub.limits = self.limits
        sub.members = [self.members[i] for i in keep]
        sub.solved = [self.solved[i] for i in keep]
        sub.reports = [self.reports[i] for i in keep]
        sub.pruned = list(self.pruned)
        if not sub.members:
            raise EmptyClass("subset removed every member")
        sub.ids = [s.name for s in sub.members]
        sub._index = {name: i for i, name in enumerate(sub.ids)}
        sub.profile = ClassProfile(sub.reports, sub.cost)
        return sub


def class_profile(simclass):
    """Aggregate (empirical + analytic) stability profile of a class."""
    return ClassProfile(simclass.reports, simclass.cost)


class LowRankSpec:
    """Linear family: each member is sum_i t_i * (A_i, B_i, C_i).

    ``box`` holds per-coefficient inclusive ranges [lo, hi]; candidate
    coefficient vectors outside the box are rejected up front.
    """

    def __init__(self, bases, box=None):
        if not bases:
            raise ValueError("need at least one basis system")
        n, m, p = bases[0].n, bases[0].m, bases[0].p
        for b in bases[1:]:
            if (b.n, b.m, b.p) != (n, m, p):
                raise riccati.DimensionMismatch("basis dimensions differ")
        self.bases = list(bases)
        self.k = len(bases)
        if box is None:
            box = [(-np.inf, np.inf)] * self.k
        if len(box) != self.k:
            raise ValueError("box must have one (lo, hi) pair per basis")
        self.box = [(float(lo), float(hi)) for lo, hi in box]

    def combine(self, coeffs):
        coeffs = [float(t) for t in coeffs]
        if len(coeffs) != self.k:
            raise ValueError(f"expected {self.k} coefficients, got {len(coeffs)}")
        for t, (lo, hi) in zip(coeffs, self.box):
            if not (lo <= t <= hi):
                raise ValueError(f"coefficient {t} outside box [{lo}, {hi}]")
        A = sum(t * b.A for t, b in zip(coeffs, self.bases))
        B = sum(t * b.B for t, b in zip(coeffs, self.bases))
        C = sum(t * b.C for t, b in zip(coeffs, self.bases))
        name = "t=(" + ",".join(f"{t:g}" for t in coeffs) + ")"
        return lqg.LqgSystem(A, B, C, name=name)


def instantiate_lowrank(spec, cost, coefficients=None, grid=None, limits=None):
    """Build a class from explicit coefficient vectors or a grid.

    ``grid`` is a list of per-axis value lists; the cartesian product is
    enumerated in row-major order.  Candidates failing validation are pruned
    (kept on the class's ``pruned`` list); an empty result raises
    :class:`EmptyClass`.
    """
    if (coefficients is None) == (grid is None):
        raise ValueError("pass exactly one of coefficients/grid")
    if grid is not None:
        coefficients = list(itertools.product(*grid))
    members = [spec.combine(t) for t in coefficients]
    return SimulatorClass(members, cost, limits=limits)


# ---------------------------------------------------------------------------
# Serialization

def dump_class(simclass):
    doc = {
        "members": [
            {"A": s.A.tolist(), "B": s.B.tolist(), "C": s.C.tolist(),
             "name": s.name}
            for s in simclass.members
        ],
        "cost": {"Q": simclass.cost.Q.tolist(), "R": simclass.cost.R.tolist()},
    }
    return doc


def load_class(doc, limits=None):
    """Build a SimulatorClass from a parsed class-spec document.

    Accepts either {"members": [...], "cost": {...}} or
    {"lowrank": {"bases": [...], "box": [...], "grid"/"coefficients": ...},
    "cost": {...}}.
    """
    cost = lqg.CostSpec(doc["cost"]["Q"], doc["cost"]["R"])
    if "members" in doc:
        members = [
            lqg.LqgSystem(m["A"], m["B"], m["C"], name=m.get("name"))
            for m in doc["members"]
        ]
        return SimulatorClass(members, cost, limits=limits)
    if "lowrank" in doc:
        lr = doc["lowrank"]
        bases = [lqg.LqgSystem(b["A"], b["B"], b["C"], name=b.get("name"))
                 for b in lr["bases"]]
        spec = LowRankSpec(bases, box=lr.get("box"))
        return instantiate_lowrank(
            spec, cost,
            coefficients=lr.get("coefficients"),
            grid=lr.get("grid"),
            limits=limits)
    raise ValueError("class spec needs a 'members' or 'lowrank' section")


def save_class(path, simclass):
    with open(path, "w") as fh:
        json.dump(dump_class(simclass), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_class(path, limits=None):
    with open(path) as fh:
        return load_class(json.load(fh), limits=limits)
