"""Segment costs and breakpoint search.

The score of a candidate breakpoint vector is the sum over its segments of
the attained per-segment penalized minimum, with the tuning constant
``lambda = (segment length)**rho`` recomputed for every candidate segment.
``optimal_breakpoints`` minimizes the score exactly by dynamic programming
over a table of all admissible segment costs; ties resolve to the
lexicographically smallest breakpoint vector.

The cost table is filled by a vectorized engine that works on cumulative
sufficient statistics (running X'X, X'y, y'y), so each candidate segment
costs O(p^2) regardless of its length.  The engine mirrors the scalar
``segment_cost`` semantics; coherence between the two paths is part of the
test suite.  ``refit_breakpoints_two_stage`` is an explicitly approximate
alternative for long series: a coarse grid search followed by local
refinement of each breakpoint.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    AdaptiveUnavailableError,
    EmptySegmentError,
    InfeasiblePartitionError,
    SingularGramError,
    UnderdeterminedError,
)
from .model import (
    FAMILY_ADAPTIVE,
    ChangePointFit,
    CriterionConfig,
    Dataset,
    PenaltyConfig,
    SegmentRange,
    effective_min_seg_len,
    segment_ranges,
    validate_dataset,
)
from . import solvers


class WriteOnceCache(dict):
    """Mapping that refuses to rebind a key to a different value.

    Used for weight and cost caches keyed by segment bounds: a second write
    to the same key is a programming error unless the value is unchanged.
    """

    def __setitem__(self, key, value):
        if key in self:
            if not _same_cache_value(self[key], value):
                raise ValueError(f"cache key {key!r} is already bound")
            return
        super().__setitem__(key, value)


def _same_cache_value(a, b) -> bool:
    if a is b:
        return True
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return isinstance(a, np.ndarray) and isinstance(b, np.ndarray) and np.array_equal(a, b)
    return a == b


def _as_range(rng) -> SegmentRange:
    if isinstance(rng, SegmentRange):
        return rng
    start, end = rng
    return SegmentRange(start, end)


def lambda_for_segment(rng, rho: float) -> float:
    """Per-segment tuning constant ``(j2 - j1)**rho`` for the range (j1, j2]."""
    if not 0.0 < rho <= 0.5:
        raise ValueError(f"rho must lie in (0, 1/2], got {rho}")
    if isinstance(rng, SegmentRange):
        length = rng.length
    else:
        start, end = rng
        if end <= start:
            raise EmptySegmentError(f"segment ({start}, {end}] is empty")
        length = end - start
    return float(length) ** rho


def adaptive_weights(dataset: Dataset, rng, g: float) -> np.ndarray:
    """Weights ``|phi_LS,k|**(-g)`` from the segment least-squares fit.

    A coordinate whose least-squares estimate is exactly zero receives an
    infinite weight, which pins it at zero in the downstream fit while
    contributing nothing to the penalty value there.

    Raises AdaptiveUnavailableError when the segment is shorter than the
    coefficient count or its Gram matrix is numerically singular; the
    caller is expected to fall back to the unweighted lasso.
    """
    # config-level validation pins g inside (0, 1/4); the raw op only needs g > 0
    if g <= 0.0:
        raise ValueError(f"g must be positive, got {g}")
    rng = _as_range(rng)
    if rng.end > dataset.n:
        raise EmptySegmentError(f"segment end {rng.end} exceeds n={dataset.n}")
    X = dataset.X[rng.start : rng.end]
    y = dataset.y[rng.start : rng.end]
    if rng.length < dataset.p:
        raise AdaptiveUnavailableError(
            f"segment of length {rng.length} cannot support least squares "
            f"with p={dataset.p}"
        )
    try:
        phi_ls = solvers.ols(X, y)
    except (UnderdeterminedError, SingularGramError) as exc:
        raise AdaptiveUnavailableError(str(exc)) from exc
    with np.errstate(divide="ignore"):
        return np.abs(phi_ls) ** (-g)


def segment_cost(
    dataset: Dataset,
    rng,
    config: PenaltyConfig,
    weight_cache: dict | None = None,
):
    """Fit one segment under the configured penalty and return its SegmentFit.

    The tuning constant is ``config.lambda_scale * (length)**rho``.  When it
    is zero the segment is fitted by plain least squares.  For the adaptive
    family the weight vector is taken from ``weight_cache`` when present
    (keyed by the segment bounds; None marks a segment that fell back to the
    unweighted lasso).
    """
    rng = _as_range(rng)
    if rng.end > dataset.n:
        raise EmptySegmentError(f"segment end {rng.end} exceeds n={dataset.n}")
    X = dataset.X[rng.start : rng.end]
    y = dataset.y[rng.start : rng.end]
    lam = config.lambda_scale * lambda_for_segment(rng, config.rho)

    if lam == 0.0:
        try:
            phi = solvers.ols(X, y)
            return solvers.wrap_coefficients(X, y, phi, 0.0, gamma=1.0)
        except (UnderdeterminedError, SingularGramError):
            return solvers.lasso_cd(
                X, y, 0.0, tol=config.cd_tolerance,
                max_iter=config.cd_max_iterations,
            )

    if config.family == FAMILY_ADAPTIVE:
        key = (rng.start, rng.end)
        if weight_cache is not None and key in weight_cache:
            weights = weight_cache[key]
        else:
            try:
                weights = adaptive_weights(dataset, rng, config.g)
            except AdaptiveUnavailableError:
                if not config.adaptive_fallback:
                    raise
                weights = None  # unweighted fallback
            if weight_cache is not None:
                weight_cache[key] = weights
        return solvers.lasso_cd(
            X, y, lam, weights=weights,
            tol=config.cd_tolerance, max_iter=config.cd_max_iterations,
            zero_clamp=config.effective_zero_clamp,
        )

    if config.gamma == 1.0:
        return solvers.lasso_cd(
            X, y, lam,
            tol=config.cd_tolerance, max_iter=config.cd_max_iterations,
            zero_clamp=config.effective_zero_clamp,
        )
    if config.gamma == 2.0:
        phi = solvers.ridge(X, y, lam)
        return solvers.wrap_coefficients(
            X, y, phi, lam, gamma=2.0, zero_clamp=config.effective_zero_clamp
        )
    return solvers.bridge(
        X, y, lam, config.gamma,
        tol=config.cd_tolerance, max_iter=config.cd_max_iterations,
        zero_clamp=config.effective_zero_clamp,
    )


# ---------------------------------------------------------------------------
# vectorized cost engine

def _cumulative_stats(dataset: Dataset):
    X, y = dataset.X, dataset.y
    n, p = X.shape
    cum_xx = np.zeros((n + 1, p, p))
    np.cumsum(np.einsum("ni,nj->nij", X, X), axis=0, out=cum_xx[1:])
    cum_xy = np.zeros((n + 1, p))
    np.cumsum(X * y[:, None], axis=0, out=cum_xy[1:])
    cum_yy = np.zeros(n + 1)
    np.cumsum(y * y, out=cum_yy[1:])
    return cum_xx, cum_xy, cum_yy


def _batch_cd(G, b, thr, tol, max_iter):
    """Coordinate descent over a stack of Gram-form problems.

    Same update and stopping rule as the scalar solver, including the
    periodic face_step proposal.  Converged problems drop out of the
    working set between sweeps.  Returns the coefficient stack and the
    indices of problems that used up the sweep budget.
    """
    m, p = b.shape
    out = np.zeros((m, p))
    idx = np.arange(m)
    x = np.zeros((m, p))
    diag = np.ascontiguousarray(G[:, np.arange(p), np.arange(p)])
    Gc, bc, tc, dc = G, b, thr, diag
    for sweep in range(1, max_iter + 1):
        delta = np.zeros(len(idx))
        for k in range(p):
            c = bc[:, k] - np.einsum("ij,ij->i", Gc[:, k, :], x) + dc[:, k] * x[:, k]
            mag = np.abs(c) - tc[:, k]
            with np.errstate(invalid="ignore"):  # sign(0) * -inf under the mask
                new = np.where(mag > 0.0, np.sign(c) * mag, 0.0)
            safe = np.where(dc[:, k] > 0.0, dc[:, k], 1.0)
            new = np.where(dc[:, k] > 0.0, new / safe, 0.0)
            np.maximum(delta, np.abs(new - x[:, k]), out=delta)
            x[:, k] = new
        done = delta <= tol
        if done.any():
            out[idx[done]] = x[done]
            keep = ~done
            if not keep.any():
                return out, np.empty(0, dtype=int)
            idx = idx[keep]
            Gc, bc, tc, dc, x = Gc[keep], bc[keep], tc[keep], dc[keep], x[keep]
        if sweep % solvers._FACE_EVERY == 0:
            for i in range(len(idx)):
                jump = solvers.face_step(Gc[i], bc[i], tc[i], x[i])
                if jump is not None:
                    x[i] = jump
    out[idx] = x
    return out, idx


def _batch_adaptive_weights(G, b, lengths, p, g):
    """Per-segment weight stack; rows fall back to ones where least squares
    is unavailable, mirroring the scalar fallback."""
    m = b.shape[0]
    w = np.ones((m, p))
    solvable = lengths >= p
    if not solvable.any():
        return w
    Gs, bs = G[solvable], b[solvable]
    phi = np.empty_like(bs)
    ok = np.ones(len(bs), dtype=bool)
    try:
        phi[:] = np.linalg.solve(Gs, bs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        for i in range(len(bs)):
            try:
                phi[i] = np.linalg.solve(Gs[i], bs[i])
            except np.linalg.LinAlgError:
                ok[i] = False
    ok &= np.isfinite(phi).all(axis=1)
    with np.errstate(divide="ignore"):
        w_solved = np.abs(phi) ** (-g)
    rows = np.flatnonzero(solvable)[ok]
    w[rows] = w_solved[ok]
    return w


def _chunk_size(p: int) -> int:
    return max(1024, int(6e6 / max(1, p * p)))


def pair_costs(dataset: Dataset, pairs, config: PenaltyConfig) -> np.ndarray:
    """Penalized minimum cost for each half-open segment in ``pairs``.

    ``pairs`` is an integer array of shape (M, 2) of (start, end) bounds.
    Matches ``segment_cost(...).penalized_cost`` within floating error for
    every admissible pair.
    """
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise ValueError(f"pairs must have shape (M, 2), got {pairs.shape}")
    if pairs.size:
        if (pairs[:, 1] <= pairs[:, 0]).any():
            raise EmptySegmentError("pairs contain an empty segment")
        if (pairs[:, 0] < 0).any() or (pairs[:, 1] > dataset.n).any():
            raise EmptySegmentError("pairs reach outside the sample")
    m_total = pairs.shape[0]
    costs = np.empty(m_total)
    if m_total == 0:
        return costs
    if config.family != FAMILY_ADAPTIVE and config.gamma not in (1.0, 2.0):
        # bridge exponents have no vectorized path
        for i, (a, bnd) in enumerate(pairs):
            costs[i] = segment_cost(dataset, (int(a), int(bnd)), config).penalized_cost
        return costs

    cum_xx, cum_xy, cum_yy = _cumulative_stats(dataset)
    p = dataset.p
    chunk = _chunk_size(p)
    for lo in range(0, m_total, chunk):
        sl = slice(lo, min(lo + chunk, m_total))
        j1, j2 = pairs[sl, 0], pairs[sl, 1]
        G = cum_xx[j2] - cum_xx[j1]
        b = cum_xy[j2] - cum_xy[j1]
        yy = cum_yy[j2] - cum_yy[j1]
        lengths = j2 - j1
        lam = config.lambda_scale * lengths.astype(np.float64) ** config.rho
        costs[sl] = _chunk_costs(dataset, pairs[sl], G, b, yy, lengths, lam, config)
    return costs


def _chunk_costs(dataset, pairs, G, b, yy, lengths, lam, config):
    p = b.shape[1]
    if config.lambda_scale == 0.0:
        phi = np.einsum("ijk,ik->ij", np.linalg.pinv(G, hermitian=True), b)
        quad = yy - 2.0 * np.einsum("ij,ij->i", b, phi) + np.einsum(
            "ij,ijk,ik->i", phi, G, phi
        )
        return np.maximum(quad, 0.0)

    if config.family == FAMILY_ADAPTIVE:
        w = _batch_adaptive_weights(G, b, lengths, p, config.g)
    elif config.gamma == 2.0:
        A = G + lam[:, None, None] * np.eye(p)
        phi = np.linalg.solve(A, b[..., None])[..., 0]
        quad = np.maximum(
            yy - 2.0 * np.einsum("ij,ij->i", b, phi)
            + np.einsum("ij,ijk,ik->i", phi, G, phi),
            0.0,
        )
        return quad + lam * np.einsum("ij,ij->i", phi, phi)
    else:
        w = np.ones((b.shape[0], p))

    thr = lam[:, None] * w / 2.0
    phi, stubborn = _batch_cd(G, b, thr, config.cd_tolerance, config.cd_max_iterations)
    quad = np.maximum(
        yy - 2.0 * np.einsum("ij,ij->i", b, phi)
        + np.einsum("ij,ijk,ik->i", phi, G, phi),
        0.0,
    )
    with np.errstate(invalid="ignore"):
        terms = w * np.abs(phi)
    terms = np.where(phi == 0.0, 0.0, terms)
    out = quad + lam * terms.sum(axis=1)
    # problems that used the whole sweep budget go through the scalar path,
    # which re-checks stationarity and raises NoConvergenceError honestly
    for i in stubborn:
        a, bnd = int(pairs[i, 0]), int(pairs[i, 1])
        out[i] = segment_cost(dataset, (a, bnd), config).penalized_cost
    return out


def build_cost_table(
    dataset: Dataset, config: PenaltyConfig, min_seg_len: int
) -> np.ndarray:
    """Dense (n+1) x (n+1) table of segment costs.

    Entry [j1, j2] is the penalized minimum over the segment (j1, j2];
    inadmissible entries (shorter than ``min_seg_len``) hold +inf.
    """
    if min_seg_len < 1:
        raise ValueError("min_seg_len must be >= 1")
    n = dataset.n
    idx = np.arange(n + 1)
    admissible = (idx[None, :] - idx[:, None]) >= min_seg_len
    j1, j2 = np.nonzero(admissible)
    table = np.full((n + 1, n + 1), np.inf)
    table[j1, j2] = pair_costs(dataset, np.column_stack([j1, j2]), config)
    return table


# ---------------------------------------------------------------------------
# dynamic programming

def _dp_minimize(cost: np.ndarray, k: int):
    """Minimize the K-break score over a node-indexed cost matrix.

    ``cost[i, j]`` is the cost of a segment from node i to node j (+inf if
    inadmissible); the partition runs from node 0 to the last node in
    ``k + 1`` segments.  Returns (total, interior node indices).  Ties
    resolve to the lexicographically smallest vector: the reconstruction
    scans candidates in increasing order and the minima compared are the
    exact floats produced by the backward pass.
    """
    n_nodes = cost.shape[0]
    last = n_nodes - 1
    best = np.empty((k + 2, n_nodes))
    best[1] = cost[:, last]
    for stage in range(2, k + 2):
        best[stage] = np.min(cost + best[stage - 1][None, :], axis=1)
    total = best[k + 1][0]
    if not np.isfinite(total):
        raise InfeasiblePartitionError(
            f"no admissible placement of {k} breakpoints"
        )
    nodes = []
    at = 0
    for stage in range(k + 1, 1, -1):
        vals = cost[at, :] + best[stage - 1]
        at = int(np.flatnonzero(vals == best[stage][at])[0])
        nodes.append(at)
    return float(total), nodes


def _assemble_fit(
    dataset: Dataset,
    breakpoints,
    config: PenaltyConfig,
    *,
    expected_total: float | None = None,
) -> ChangePointFit:
    """Refit the chosen segments through the scalar path and package them."""
    ranges = segment_ranges(breakpoints, dataset.n)
    cache = WriteOnceCache()
    fits = tuple(segment_cost(dataset, r, config, weight_cache=cache) for r in ranges)
    total = float(sum(f.penalized_cost for f in fits))
    if expected_total is not None:
        assert abs(total - expected_total) <= 1e-9 * max(1.0, abs(expected_total)), (
            f"segment refit total {total!r} drifted from search total "
            f"{expected_total!r}"
        )
    return ChangePointFit(
        k=len(ranges) - 1,
        breakpoints=tuple(breakpoints),
        segment_fits=fits,
        total_score=total,
        family=config.family,
    )


def _check_feasible(n: int, k: int, min_seg_len: int):
    if (k + 1) * min_seg_len > n:
        raise InfeasiblePartitionError(
            f"{k + 1} segments of length >= {min_seg_len} do not fit in "
            f"{n} samples"
        )


def optimal_breakpoints(
    dataset: Dataset,
    k: int,
    config: PenaltyConfig,
    criterion: CriterionConfig | None = None,
    *,
    cost_table: np.ndarray | None = None,
) -> ChangePointFit:
    """Exact K-break minimizer of the segment-cost sum.

    Dynamic programming over all admissible segments; ties between score-
    equal breakpoint vectors resolve to the lexicographically smallest one.
    A precomputed ``cost_table`` (from ``build_cost_table`` with the same
    config and minimum segment length) can be supplied to amortize the
    table across several K values.
    """
    validate_dataset(dataset)
    if k < 0:
        raise ValueError("k must be >= 0")
    min_len = effective_min_seg_len(config, criterion, dataset.p)
    _check_feasible(dataset.n, k, min_len)
    if cost_table is None:
        cost_table = build_cost_table(dataset, config, min_len)
    total, nodes = _dp_minimize(cost_table, k)
    return _assemble_fit(dataset, nodes, config, expected_total=total)


def refit_breakpoints_two_stage(
    dataset: Dataset,
    k: int,
    config: PenaltyConfig,
    criterion: CriterionConfig | None = None,
    *,
    grid_step: int,
) -> ChangePointFit:
    """Approximate K-break search: coarse grid, then local refinement.

    Stage 1 runs the exact dynamic program restricted to breakpoints on a
    grid of spacing ``grid_step``.  Stage 2 re-optimizes each breakpoint
    exhaustively within ``grid_step`` of its current value, holding the
    others fixed, sweeping until no breakpoint moves.  The result is
    coordinate-wise locally optimal but not guaranteed to be the global
    minimizer.  ``grid_step=1`` delegates to ``optimal_breakpoints``.
    """
    if grid_step < 1:
        raise ValueError("grid_step must be >= 1")
    if grid_step == 1:
        return optimal_breakpoints(dataset, k, config, criterion)
    validate_dataset(dataset)
    if k < 0:
        raise ValueError("k must be >= 0")
    n = dataset.n
    min_len = effective_min_seg_len(config, criterion, dataset.p)
    _check_feasible(n, k, min_len)
    if k == 0:
        return _assemble_fit(dataset, (), config)

    step = grid_step
    while True:
        interior = [t for t in range(step, n, step) if min_len <= t <= n - min_len]
        nodes = np.array([0, *interior, n], dtype=np.int64)
        i1, i2 = np.nonzero(nodes[None, :] - nodes[:, None] >= min_len)
        matrix = np.full((len(nodes), len(nodes)), np.inf)
        matrix[i1, i2] = pair_costs(
            dataset, np.column_stack([nodes[i1], nodes[i2]]), config
        )
        try:
            _, picked = _dp_minimize(matrix, k)
            break
        except InfeasiblePartitionError:
            if step == 1:
                raise
            step = max(1, step // 2)
    bounds = [0, *(int(nodes[i]) for i in picked), n]

    memo = WriteOnceCache()

    def cost_of(a: int, b: int) -> float:
        key = (a, b)
        if key not in memo:
            memo[key] = segment_cost(dataset, key, config).penalized_cost
        return memo[key]

    for _ in range(200):
        moved = False
        for r in range(1, k + 1):
            lo = max(bounds[r - 1] + min_len, bounds[r] - grid_step)
            hi = min(bounds[r + 1] - min_len, bounds[r] + grid_step)
            best_t = bounds[r]
            best_v = cost_of(bounds[r - 1], best_t) + cost_of(best_t, bounds[r + 1])
            for t in range(lo, hi + 1):
                v = cost_of(bounds[r - 1], t) + cost_of(t, bounds[r + 1])
                if v < best_v:
                    best_t, best_v = t, v
            if best_t != bounds[r]:
                bounds[r] = best_t
                moved = True
        if not moved:
            break
    return _assemble_fit(dataset, bounds[1:-1], config)
