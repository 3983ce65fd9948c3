"""Per-segment solvers.

Every solver minimizes, over the coefficient vector ``phi`` of a single
segment with design ``X`` (m rows) and response ``y``,

    sum_i (y_i - x_i' phi)^2  +  lam * penalty(phi)

where the penalty is ``sum_k w_k |phi_k|`` for the (weighted) lasso,
``sum_k phi_k^2`` for ridge, and ``sum_k |phi_k|^gamma`` for bridge
exponents.  The penalty is a plain sum: it is not divided by 2 or by the
segment length, and the tuning constant ``lam`` multiplies it directly.

The lasso path uses cyclic coordinate descent with exact soft-threshold
updates in Gram form.  An infinite weight pins its coordinate at exactly 0
and contributes nothing to the penalty value; this is how downstream code
encodes coordinates whose least-squares estimate vanished.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import (
    NoConvergenceError,
    SingularGramError,
    SingularSystemError,
    UnderdeterminedError,
)
from .model import SegmentFit

_GRAM_COND_FLOOR = 1e-10


def soft_threshold(z: float, t: float) -> float:
    """Scalar soft-threshold operator: sign(z) * max(|z| - t, 0)."""
    if abs(z) <= t:
        return 0.0
    return z - t if z > 0 else z + t


def penalty_sum(phi: np.ndarray, gamma: float = 1.0, weights: np.ndarray | None = None) -> float:
    """Penalty term without the tuning constant.

    Weighted form uses ``sum_k w_k |phi_k|`` and applies the convention
    that an infinite weight paired with an exactly zero coefficient
    contributes 0.
    """
    a = np.abs(np.asarray(phi, dtype=np.float64))
    if weights is None:
        return float(np.sum(a**gamma))
    w = np.asarray(weights, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        terms = w * a
    terms = np.where(a == 0.0, 0.0, terms)
    return float(np.sum(terms))


def penalized_objective(
    X: np.ndarray,
    y: np.ndarray,
    phi: np.ndarray,
    lam: float,
    gamma: float = 1.0,
    weights: np.ndarray | None = None,
) -> float:
    """Full objective value at ``phi``; used for dominance and oracle checks."""
    r = y - X @ phi
    return float(r @ r) + lam * penalty_sum(phi, gamma=gamma, weights=weights)


def ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of a segment.

    Raises
    ------
    UnderdeterminedError
        When the segment has fewer rows than coefficients.
    SingularGramError
        When the Gram matrix is numerically singular: its smallest singular
        value falls below 1e-10 times its largest.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m, p = X.shape
    if m < p:
        raise UnderdeterminedError(f"{m} rows cannot determine {p} coefficients")
    s = np.linalg.svd(X, compute_uv=False)
    # singular values of the Gram matrix are the squares of those of X
    if s[0] == 0.0 or (s[-1] / s[0]) ** 2 < _GRAM_COND_FLOOR:
        raise SingularGramError(
            f"Gram condition {(s[-1] / s[0]) ** 2 if s[0] else 0.0:.3e} "
            f"below {_GRAM_COND_FLOOR:.0e}"
        )
    phi, *_ = np.linalg.lstsq(X, y, rcond=None)
    return phi


def ridge(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Solve (X'X + lam I) phi = X'y.

    Raises SingularSystemError when the system matrix is singular, which
    can only happen at lam = 0 with rank-deficient X.
    """
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = X.shape[1]
    A = X.T @ X + lam * np.eye(p)
    w = np.linalg.eigvalsh(A)
    if w[-1] <= 0.0 or w[0] < 1e-12 * w[-1]:
        raise SingularSystemError(
            f"system matrix singular at lam={lam} (eigenvalue range "
            f"[{w[0]:.3e}, {w[-1]:.3e}])"
        )
    return np.linalg.solve(A, X.T @ y)


@dataclass(frozen=True)
class KktReport:
    """Outcome of a stationarity check for a weighted-lasso objective.

    ``worst_violation`` is normalized by ``scale = 1 + max_k |X_k'y|`` so
    the same tolerance is meaningful across problem sizes.
    """

    passed: bool
    worst_violation: float
    worst_index: int
    tolerance: float
    scale: float


def kkt_check(
    fit,
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    weights: np.ndarray | None = None,
    tolerance: float = 1e-6,
) -> KktReport:
    """Verify the subgradient conditions of the weighted-lasso objective.

    For an active coordinate k the correlation 2 X_k'(y - X phi) must equal
    lam w_k sign(phi_k); for an inactive one its magnitude must not exceed
    lam w_k.  ``fit`` may be a SegmentFit or a bare coefficient vector.
    Pure function: no state is touched.
    """
    phi = fit.coefficients if isinstance(fit, SegmentFit) else np.asarray(fit, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = X.shape[1]
    w = np.ones(p) if weights is None else np.asarray(weights, dtype=np.float64)
    corr = 2.0 * (X.T @ (y - X @ phi))
    scale = 1.0 + float(np.max(np.abs(X.T @ y))) if p else 1.0
    with np.errstate(invalid="ignore"):
        bound = lam * w
    bound = np.where(np.isnan(bound), 0.0, bound)  # lam = 0 with infinite weight
    active = phi != 0.0
    viol = np.empty(p)
    viol[active] = np.abs(corr[active] - bound[active] * np.sign(phi[active]))
    viol[~active] = np.maximum(0.0, np.abs(corr[~active]) - bound[~active])
    viol /= scale
    worst = int(np.argmax(viol)) if p else 0
    worst_violation = float(viol[worst]) if p else 0.0
    return KktReport(
        passed=bool(worst_violation <= tolerance),
        worst_violation=worst_violation,
        worst_index=worst,
        tolerance=tolerance,
        scale=scale,
    )


def _gram_objective(yy, b, G, phi, lam, weights):
    quad = float(yy - 2.0 * (b @ phi) + phi @ G @ phi)
    return quad + lam * penalty_sum(phi, gamma=1.0, weights=weights)


_FACE_EVERY = 10


def _gram_score(G, b, thr, phi):
    """Weighted-lasso objective minus the constant y'y term.

    thr holds lam * w / 2, so the penalty contributes 2 sum thr |phi|.
    Coordinates pinned at zero by an infinite threshold contribute zero.
    """
    pen = float(np.sum(np.where(phi == 0.0, 0.0, thr * np.abs(phi))))
    return float(phi @ G @ phi - 2.0 * (b @ phi)) + 2.0 * pen


def face_step(G, b, thr, phi):
    """Exact minimizer on the face fixed by the current support and signs.

    Near-collinear columns make plain coordinate descent crawl, but once
    the support and signs have settled the minimizer solves a linear
    system.  The proposal is accepted only if the solution keeps the same
    signs and does not increase the objective, so taking it can never
    break monotone descent.  Returns the candidate vector or None.
    """
    active = np.flatnonzero(phi)
    if active.size == 0:
        return None
    s = np.sign(phi[active])
    rhs = b[active] - thr[active] * s
    try:
        x = np.linalg.solve(G[np.ix_(active, active)], rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(x)) or np.any(np.sign(x) != s):
        return None
    cand = np.zeros_like(phi)
    cand[active] = x
    if _gram_score(G, b, thr, cand) > _gram_score(G, b, thr, phi):
        return None
    return cand


def _cd_gram(G, b, yy, lam, weights, tol, max_iter):
    """Cyclic coordinate descent on the Gram form of the weighted lasso.

    Returns (phi, converged, sweeps).  The objective is asserted to be
    non-increasing across sweeps; a failed assertion means the update
    algebra is wrong, not that the data are bad.  Every few sweeps a
    face_step proposal is tried; see its docstring.
    """
    p = b.shape[0]
    phi = np.zeros(p)
    diag = np.diag(G).copy()
    with np.errstate(invalid="ignore"):
        thr = lam * weights / 2.0
    thr = np.where(np.isnan(thr), 0.0, thr)
    f_prev = _gram_objective(yy, b, G, phi, lam, weights)
    converged = False
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        delta = 0.0
        for k in range(p):
            if diag[k] <= 0.0:
                # zero column inside the segment: penalty keeps it at 0
                continue
            c = b[k] - G[k] @ phi + diag[k] * phi[k]
            new = soft_threshold(c, thr[k]) / diag[k]
            delta = max(delta, abs(new - phi[k]))
            phi[k] = new
        f_new = _gram_objective(yy, b, G, phi, lam, weights)
        assert f_new <= f_prev + 1e-9 * (1.0 + abs(f_prev)), (
            f"coordinate descent objective rose from {f_prev!r} to {f_new!r}"
        )
        f_prev = f_new
        if delta <= tol:
            converged = True
            break
        if sweeps % _FACE_EVERY == 0:
            jump = face_step(G, b, thr, phi)
            if jump is not None:
                phi = jump
                f_prev = _gram_objective(yy, b, G, phi, lam, weights)
    return phi, converged, sweeps


def wrap_coefficients(
    X: np.ndarray,
    y: np.ndarray,
    phi: np.ndarray,
    lam: float,
    gamma: float = 1.0,
    weights: np.ndarray | None = None,
    zero_clamp: float = 0.0,
) -> SegmentFit:
    """Package raw coefficients as a SegmentFit.

    Applies the zero clamp, then recomputes the residual sum of squares and
    penalty value at the returned (clamped) coefficients so that the
    cost decomposition refers to what is actually reported.
    """
    phi = np.asarray(phi, dtype=np.float64)
    phi = np.where(np.abs(phi) <= zero_clamp, 0.0, phi) if zero_clamp > 0 else phi
    r = y - X @ phi
    rss = float(r @ r)
    penalty = lam * penalty_sum(phi, gamma=gamma, weights=weights)
    active = frozenset(int(k) for k in np.flatnonzero(phi != 0.0))
    return SegmentFit(
        coefficients=phi,
        rss=rss,
        penalty_value=penalty,
        active_set=active,
        weights_used=weights,
    )


def lasso_cd(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    weights: np.ndarray | None = None,
    *,
    tol: float = 1e-8,
    max_iter: int = 10000,
    zero_clamp: float = 0.0,
) -> SegmentFit:
    """Weighted lasso via cyclic coordinate descent.

    Sweeps stop when the largest coefficient change in a sweep is at most
    ``tol``.  If the iteration budget runs out, the result is kept only if
    it still passes ``kkt_check`` at 1e-6; otherwise NoConvergenceError is
    raised.  Convergence trouble is never silent.

    Weights must be nonnegative; np.inf pins a coordinate at exactly 0.
    """
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = X.shape[1]
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (p,):
            raise ValueError(f"weights shape {weights.shape} != ({p},)")
        if np.any(weights < 0) or np.any(np.isnan(weights)):
            raise ValueError("weights must be nonnegative")
    w = np.ones(p) if weights is None else weights
    G = X.T @ X
    b = X.T @ y
    yy = float(y @ y)
    phi, converged, _ = _cd_gram(G, b, yy, lam, w, tol, max_iter)
    if not converged:
        report = kkt_check(phi, X, y, lam, weights=w, tolerance=1e-6)
        if not report.passed:
            raise NoConvergenceError(
                f"coordinate descent used all {max_iter} sweeps; worst "
                f"stationarity violation {report.worst_violation:.3e} at "
                f"coordinate {report.worst_index}"
            )
    return wrap_coefficients(X, y, phi, lam, 1.0, weights, zero_clamp)


def _bridge_smooth(G, b, yy, lam, gamma, phi0, grad_tol):
    """Descent for the differentiable bridge penalties (gamma > 1)."""

    def fun(phi):
        a = np.abs(phi)
        return float(yy - 2.0 * (b @ phi) + phi @ G @ phi + lam * np.sum(a**gamma))

    def jac(phi):
        a = np.abs(phi)
        return 2.0 * (G @ phi - b) + lam * gamma * np.sign(phi) * a ** (gamma - 1.0)

    phi = phi0
    for _ in range(4):
        res = minimize(
            fun,
            phi,
            jac=jac,
            method="L-BFGS-B",
            options={"maxiter": 2000, "ftol": 1e-16, "gtol": 0.1 * grad_tol},
        )
        phi = res.x
        if float(np.max(np.abs(jac(phi)))) <= grad_tol:
            return phi
    raise NoConvergenceError(
        f"bridge descent stalled with gradient norm "
        f"{float(np.max(np.abs(jac(phi)))):.3e} > {grad_tol:.3e}"
    )


def _bridge_lla(X, G, b, yy, lam, gamma, starts, tol, max_iter):
    """Local linear approximation for the concave penalties (gamma < 1).

    Each pass replaces |phi_k|^gamma by its tangent at the current iterate
    and solves the resulting weighted lasso, which never increases the true
    objective.  Runs from every start and keeps the best candidate; the
    zero vector always competes, so the result is never worse than giving
    up on the segment entirely.
    """
    p = b.shape[0]
    candidates = [np.zeros(p)]
    for phi0 in starts:
        phi = np.asarray(phi0, dtype=np.float64).copy()
        for _ in range(100):
            a = np.abs(phi)
            with np.errstate(divide="ignore"):
                w = gamma * a ** (gamma - 1.0)  # inf at exact zeros: stays pinned
            new, _, _ = _cd_gram(G, b, yy, lam, w, tol, max_iter)
            if float(np.max(np.abs(new - phi))) <= max(tol, 1e-10):
                phi = new
                break
            phi = new
        candidates.append(phi)

    def true_objective(v):
        return float(yy - 2.0 * (b @ v) + v @ G @ v + lam * np.sum(np.abs(v) ** gamma))

    values = [true_objective(v) for v in candidates]
    return candidates[int(np.argmin(values))]


def bridge(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    gamma: float,
    *,
    tol: float = 1e-8,
    max_iter: int = 10000,
    zero_clamp: float = 1e-10,
) -> SegmentFit:
    """Bridge-penalized fit for exponents other than 1 and 2.

    gamma > 1 gives a smooth convex objective, minimized to gradient
    sup-norm at most 1e-6 * (1 + max_k |X_k'y|).  gamma < 1 is non-convex;
    the fit is a stationary point found by iterated local linearization
    from ridge and least-squares starts, with the zero vector as a fallback
    candidate.  It is a local minimizer, not a certified global one.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if gamma in (1.0, 2.0):
        raise ValueError("use lasso_cd for gamma=1 and ridge for gamma=2")
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    G = X.T @ X
    b = X.T @ y
    yy = float(y @ y)
    try:
        ridge_start = ridge(X, y, lam if lam > 0 else 1e-8)
    except SingularSystemError:
        ridge_start = np.zeros(X.shape[1])
    if gamma > 1:
        scale = 1.0 + float(np.max(np.abs(b))) if b.size else 1.0
        phi = _bridge_smooth(G, b, yy, lam, gamma, ridge_start, 1e-6 * scale)
    else:
        lstsq_start, *_ = np.linalg.lstsq(X, y, rcond=None)
        phi = _bridge_lla(
            X, G, b, yy, lam, gamma, [ridge_start, lstsq_start], tol, max_iter
        )
    return wrap_coefficients(X, y, phi, lam, gamma, None, zero_clamp)
