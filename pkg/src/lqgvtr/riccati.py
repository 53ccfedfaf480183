"""Discrete-time Riccati and Lyapunov solvers plus stability diagnostics.

All solvers use fixed-point iteration of the defining recursions (the control
Riccati recursion initialized at the terminal cost, the filter recursion
initialized at the identity prior) with an explicit residual guarantee on the
returned matrix.  Matrices are small and dense; ``numpy`` throughout.
"""

import numpy as np
import scipy.linalg

__all__ = [
    "NonConvergence",
    "DimensionMismatch",
    "Unstable",
    "StabilityProfile",
    "solve_dare_control",
    "solve_dare_filter",
    "solve_lyapunov",
    "kalman_gain",
    "control_gain",
    "stability_report",
    "spectral_radius",
]


class NonConvergence(RuntimeError):
    """Fixed-point iteration did not reach the residual tolerance."""


class DimensionMismatch(ValueError):
    """Operands have inconsistent shapes."""


class Unstable(RuntimeError):
    """The iteration matrix has spectral radius at or above one."""


def spectral_radius(M):
    """Largest absolute eigenvalue of a square matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def _as_matrix(name, X, rows=None, cols=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if rows == 1 else X.reshape(-1, 1)
    if X.ndim != 2:
        raise DimensionMismatch(f"{name} must be a 2-d matrix, got ndim={X.ndim}")
    if rows is not None and X.shape[0] != rows:
        raise DimensionMismatch(f"{name} has {X.shape[0]} rows, expected {rows}")
    if cols is not None and X.shape[1] != cols:
        raise DimensionMismatch(f"{name} has {X.shape[1]} columns, expected {cols}")
    if not np.all(np.isfinite(X)):
        raise DimensionMismatch(f"{name} contains non-finite entries")
    return X


def _sym(X):
    return 0.5 * (X + X.T)


def solve_dare_control(A, B, C, Q, R, tol=1e-10, max_iter=100000):
    """Solve the control Riccati equation for the output-cost problem.

    Finds the positive semidefinite fixed point of

        P = A'PA + C'QC - A'PB (R + B'PB)^{-1} B'PA

    by iterating the finite-horizon backward recursion from its terminal
    value ``P = C'QC``.  Convergence is geometric once the closed loop
    contracts, so the iteration count stays modest for well-damped systems.

    Parameters
    ----------
    A, B, C : arrays of shape (n, n), (n, m), (p, n)
        System matrices.
    Q, R : arrays of shape (p, p), (m, m)
        Symmetric cost weights; ``R`` must be positive definite, ``Q`` at
        least positive semidefinite.
    tol : float
        Spectral-norm bound on the fixed-point residual of the returned
        matrix.
    max_iter : int
        Iteration budget before :class:`NonConvergence` is raised.

    Returns
    -------
    P : (n, n) symmetric positive semidefinite array.
    """
    A = _as_matrix("A", A)
    n = A.shape[0]
    B = _as_matrix("B", B, rows=n)
    m = B.shape[1]
    C = _as_matrix("C", C, cols=n)
    p = C.shape[0]
    Q = _as_matrix("Q", Q, rows=p, cols=p)
    R = _as_matrix("R", R, rows=m, cols=m)

    CQC = _sym(C.T @ Q @ C)
    P = CQC.copy()
    for _ in range(int(max_iter)):
        APB = A.T @ P @ B
        gain = np.linalg.solve(R + B.T @ P @ B, APB.T)  # (R+B'PB)^{-1} B'PA
        P_next = _sym(A.T @ P @ A + CQC - APB @ gain)
        delta = np.linalg.norm(P_next - P, 2)
        P = P_next
        if delta <= tol:
            return P
    raise NonConvergence(
        f"control Riccati residual {delta:.3e} > tol {tol:.1e} "
        f"after {max_iter} iterations"
    )


def solve_dare_filter(A, C, tol=1e-10, max_iter=100000):
    """Solve the filter Riccati equation with identity noise covariances.

    Finds the positive semidefinite fixed point of

        S = A S A' - A S C' (C S C' + I)^{-1} C S A' + I

    by iterating the prediction-covariance recursion from the unit prior
    ``S = I``.

    Parameters
    ----------
    A : (n, n) array
    C : (p, n) array
    tol, max_iter : see :func:`solve_dare_control`.

    Returns
    -------
    S : (n, n) symmetric positive semidefinite array (steady one-step
        prediction covariance).
    """
    A = _as_matrix("A", A)
    n = A.shape[0]
    C = _as_matrix("C", C, cols=n)
    p = C.shape[0]

    I_n = np.eye(n)
    I_p = np.eye(p)
    S = I_n.copy()
    for _ in range(int(max_iter)):
        CS = C @ S
        gain = np.linalg.solve(CS @ C.T + I_p, CS @ A.T)  # (CSC'+I)^{-1} C S A'
        S_next = _sym(A @ S @ A.T - (A @ S @ C.T) @ gain + I_n)
        delta = np.linalg.norm(S_next - S, 2)
        S = S_next
        if delta <= tol:
            return S
    raise NonConvergence(
        f"filter Riccati residual {delta:.3e} > tol {tol:.1e} "
        f"after {max_iter} iterations"
    )


def solve_lyapunov(M, W, tol=1e-10, stable_margin=1e-9, max_doublings=200):
    """Solve X = M X M' + W for a stable M by doubling.

    Sums the series X = sum_k M^k W (M')^k with the squaring trick
    (X <- X + M_j X M_j', M_j <- M_j^2), which converges in O(log) steps.

    Raises
    ------
    Unstable
        If the spectral radius of ``M`` is >= 1 - ``stable_margin``.
    NonConvergence
        If the residual still exceeds ``tol`` after ``max_doublings``.
    """
    M = _as_matrix("M", M)
    d = M.shape[0]
    W = _as_matrix("W", W, rows=d, cols=d)
    rho = spectral_radius(M)
    if rho >= 1.0 - stable_margin:
        raise Unstable(f"spectral radius {rho:.6f} >= 1 - {stable_margin:.1e}")

    X = _sym(W.copy())
    Mj = M.copy()
    for _ in range(int(max_doublings)):
        X = _sym(X + Mj @ X @ Mj.T)
        Mj = Mj @ Mj
        residual = np.linalg.norm(X - M @ X @ M.T - W, 2)
        if residual <= tol:
            return X
    raise NonConvergence(
        f"Lyapunov residual {residual:.3e} > tol {tol:.1e} "
        f"after {max_doublings} doublings"
    )


def kalman_gain(Sigma, C):
    """Innovation gain L = Sigma C' (C Sigma C' + I)^{-1}."""
    Sigma = _as_matrix("Sigma", Sigma)
    n = Sigma.shape[0]
    C = _as_matrix("C", C, cols=n)
    p = C.shape[0]
    SC = Sigma @ C.T
    return np.linalg.solve((C @ SC + np.eye(p)).T, SC.T).T


def control_gain(P, A, B, R):
    """Optimal feedback gain K = (R + B'PB)^{-1} B'PA."""
    P = _as_matrix("P", P)
    n = P.shape[0]
    A = _as_matrix("A", A, rows=n, cols=n)
    B = _as_matrix("B", B, rows=n)
    m = B.shape[1]
    R = _as_matrix("R", R, rows=m, cols=m)
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


class StabilityProfile:
    """Stability certificate and norm summary for a square matrix or a class.

    Attributes
    ----------
    spectral_radius : float
        rho(M), the largest absolute eigenvalue.
    strong_stable_kappa : float
        kappa of the certified decomposition M = G L G^{-1}: an upper bound
        on cond_2(G) (and on ||M^t||_2 / (1-gamma)^t for all t).
    strong_stable_gamma : float
        gamma in (0, 1]: the certified decay margin, ||L||_2 <= 1 - gamma.
        Zero when no certificate exists (rho >= 1).
    closed_loop_norm : float
        Spectral norm associated with the contractive loop (for a single
        matrix report this is ||M||_2).
    control_gain_norm : float
        Feedback-gain norm bound; 0.0 when not applicable.
    param_norm : float
        Parameter-norm bound; for a single matrix, ||M||_2.
    transient_bound : float
        sup_t ||M^t||_2 / rho(M)^t scanned over a finite horizon (inf for
        nilpotent nonzero matrices, 1 for the zero matrix).
    fallback : bool
        True when the eigenvector certificate was numerically degenerate and
        a Schur-based scan produced the certificate instead.
    """

    def __init__(self, spectral_radius, strong_stable_kappa, strong_stable_gamma,
                 closed_loop_norm=0.0, control_gain_norm=0.0, param_norm=0.0,
                 transient_bound=0.0, fallback=False):
        self.spectral_radius = float(spectral_radius)
        self.strong_stable_kappa = float(strong_stable_kappa)
        self.strong_stable_gamma = float(strong_stable_gamma)
        self.closed_loop_norm = float(closed_loop_norm)
        self.control_gain_norm = float(control_gain_norm)
        self.param_norm = float(param_norm)
        self.transient_bound = float(transient_bound)
        self.fallback = bool(fallback)

    def __repr__(self):
        return (
            "StabilityProfile(rho={:.6g}, kappa={:.6g}, gamma={:.6g}, "
            "phi={:.6g}{})".format(
                self.spectral_radius, self.strong_stable_kappa,
                self.strong_stable_gamma, self.transient_bound,
                ", fallback" if self.fallback else "")
        )


_COND_CAP = 1e8


def stability_report(M, tau_max=200):
    """Certify decay of powers of ``M`` and report stability diagnostics.

    For a diagonalizable matrix the certificate comes from the
    eigendecomposition M = G diag(lam) G^{-1}: kappa = cond_2(G) and
    gamma = 1 - rho(M), which guarantees ||M^t||_2 <= kappa (1-gamma)^t.
    When the eigenvector matrix is numerically degenerate (condition number
    beyond 1e8, e.g. a Jordan block) a fallback certificate is produced by
    scanning powers against a halved margin; the profile is then flagged.

    The transient bound Phi(M) = sup_t ||M^t||_2 / rho(M)^t is scanned over
    t <= tau_max, which captures the true sup once the ratio sequence turns
    decreasing (guaranteed for rho < 1).
    """
    M = _as_matrix("M", M)
    d = M.shape[0]
    norm_M = float(np.linalg.norm(M, 2)) if d else 0.0
    if d == 0:
        return StabilityProfile(0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0)

    eigvals, G = np.linalg.eig(M)
    rho = float(np.max(np.abs(eigvals)))

    # Transient bound: scan ||M^t|| / rho^t.
    if rho < 1e-14:
        phi = 1.0 if norm_M == 0.0 else np.inf
    else:
        phi = 1.0
        Mt = np.eye(d)
        scale = 1.0
        for _tau in range(1, int(tau_max) + 1):
            Mt = Mt @ M
            scale *= rho
            phi = max(phi, float(np.linalg.norm(Mt, 2)) / scale)

    if rho >= 1.0:
        return StabilityProfile(rho, np.inf, 0.0, norm_M, 0.0, norm_M, phi,
                                fallback=True)

    cond_G = np.inf
    try:
        cond_G = float(np.linalg.cond(G, 2))
    except np.linalg.LinAlgError:
        pass

    if np.isfinite(cond_G) and cond_G <= _COND_CAP:
        kappa = cond_G
        gamma = 1.0 - rho
        fallback = False
    else:
        # Degenerate spectrum: certify against a halved decay margin by
        # scanning powers (Schur form has the same power norms).
        gamma = 0.5 * (1.0 - rho)
        base = 1.0 - gamma
        kappa = 1.0
        Mt = np.eye(d)
        scale = 1.0
        tau = 0
        horizon = int(tau_max)
        while True:
            ratio_last = None
            for _ in range(horizon - tau):
                Mt = Mt @ M
                scale *= base
                tau += 1
                ratio_last = float(np.linalg.norm(Mt, 2)) / scale
                kappa = max(kappa, ratio_last)
            if ratio_last is not None and ratio_last < 1.0:
                break
            if horizon >= 32 * int(tau_max):
                break
            horizon *= 2
        kappa *= 1.0 + 1e-9
        fallback = True

    return StabilityProfile(rho, kappa, gamma, norm_M, 0.0, norm_M, phi,
                            fallback=fallback)
