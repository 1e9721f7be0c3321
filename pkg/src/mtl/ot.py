"""Cost construction and exact/regularized solvers for discrete transport.

The exact path is purely combinatorial: square cost matrices between
equal-size uniform supports, solved to a globally optimal permutation with a
deterministic tie-break (lexicographically smallest permutation among the
optima).  General weights go through :func:`sinkhorn_plan` only.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .errors import SolverError, ValidationError
from .measures import DiscreteMeasure

COST_KINDS = ("squared_euclidean", "hierarchical")
BRUTE_FORCE_MAX = 9


@dataclass(frozen=True)
class CostSpec:
    """Pairwise cost: squared Euclidean, or the hierarchical sum eps^k * dx_k^2."""

    kind: str = "squared_euclidean"
    epsilon: float = 1.0

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValidationError(f"unknown cost kind {self.kind!r}")
        if self.kind == "hierarchical" and not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")


SQUARED_EUCLIDEAN = CostSpec("squared_euclidean")


def cost_matrix(src: np.ndarray, dst: np.ndarray, spec: CostSpec = SQUARED_EUCLIDEAN) -> np.ndarray:
    """Pairwise cost matrix; entry (i,j) = sum_k w_k (src_i[k] - dst_j[k])^2.

    w_k = 1 for squared_euclidean and eps^k (k starting at 1) for hierarchical.
    Terms accumulate from the least significant coordinate upward so that the
    hierarchical weights keep discriminating whenever leading coordinates tie
    exactly; with doubles this preserves lexicographic behaviour down to
    eps = 1e-12 for d <= 3.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim == 1:
        src = src.reshape(-1, 1)
    if dst.ndim == 1:
        dst = dst.reshape(-1, 1)
    if src.shape[1] != dst.shape[1]:
        raise ValidationError(f"dimension mismatch: {src.shape[1]} vs {dst.shape[1]}")
    d = src.shape[1]
    out = np.zeros((src.shape[0], dst.shape[0]))
    for k in range(d - 1, -1, -1):
        w = 1.0 if spec.kind == "squared_euclidean" else spec.epsilon ** (k + 1)
        diff = src[:, k, None] - dst[None, :, k]
        out += w * diff * diff
    return out


def _objective(cost: np.ndarray, perm: np.ndarray) -> float:
    return float(cost[np.arange(cost.shape[0]), perm].sum())


def _tie_tol(cost: np.ndarray, opt: float) -> float:
    # float-rounding scale for objective sums: permutations whose objectives
    # differ by less than the summation error are treated as tied optima
    n = cost.shape[0]
    scale = float(np.max(np.abs(cost))) if cost.size else 0.0
    return 32.0 * np.finfo(np.float64).eps * n * scale


@dataclass(frozen=True)
class Assignment:
    """Optimal permutation (source index -> target index) with its total cost."""

    perm: np.ndarray
    objective: float

    def __post_init__(self):
        p = np.asarray(self.perm, dtype=np.int64)
        if sorted(p.tolist()) != list(range(p.size)):
            raise ValidationError("perm must be a bijection of 0..n-1")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "perm", p)


def _validate_cost(cost: np.ndarray) -> np.ndarray:
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
        raise ValidationError("cost matrix must be square and nonempty")
    if not np.all(np.isfinite(c)):
        raise ValidationError("non-finite cost entry")
    return c


def _optimal_duals(cost: np.ndarray, perm: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """Dual potentials (u, v) with c_ij - u_i - v_j >= 0 and equality on perm.

    Computed as shortest-path distances over the reassignment graph of the
    optimal matching (arc j -> k costs c[row(j), k] - c[row(j), j]); the
    optimality of perm rules out negative cycles.  Returns None when float
    noise breaks dual feasibility, in which case callers fall back to an
    unrestricted tie search.
    """
    n = cost.shape[0]
    row_of = np.empty(n, dtype=np.int64)
    row_of[perm] = np.arange(n)
    W = cost[row_of] - cost[row_of, np.arange(n)][:, None]  # W[j, k): arc j -> k
    v = np.zeros(n)
    for _ in range(n + 1):
        relaxed = np.min(v[:, None] + W, axis=0)
        new_v = np.minimum(v, relaxed)
        if np.allclose(new_v, v, rtol=0.0, atol=0.0):
            break
        v = new_v
    u = cost[np.arange(n), perm] - v[perm]
    reduced = cost - u[:, None] - v[None, :]
    slack = 64.0 * np.finfo(np.float64).eps * n * max(1.0, float(np.max(np.abs(cost))))
    if float(reduced.min()) < -slack:
        return None
    return u, v


def _lex_smallest_optimal(cost: np.ndarray, base: np.ndarray, opt: float,
                          tol: float) -> np.ndarray:
    """Lexicographically smallest permutation whose objective is within tol of opt.

    Any such permutation uses only edges of reduced cost <= tol (the reduced
    costs of its edges sum to its suboptimality), so candidates are read off
    the dual-certified tie graph.  The greedy prefix keeps one optimal
    completion current: taking its edge is free, and a cheaper-lex candidate
    is accepted only if a fresh sub-solve keeps the total within tol.
    """
    n = cost.shape[0]
    duals = _optimal_duals(cost, base)
    if duals is not None:
        u, v = duals
        tie_graph = (cost - u[:, None] - v[None, :]) <= tol
        if int(tie_graph.sum()) == n:
            return base.copy()
    else:
        tie_graph = np.ones_like(cost, dtype=bool)

    current = base.copy()  # optimal completion consistent with the fixed prefix
    avail = list(range(n))
    perm = np.empty(n, dtype=np.int64)
    prefix = 0.0
    for i in range(n):
        chosen = -1
        for j in avail:
            if j == current[i]:
                chosen = j
                break
            if not tie_graph[i, j]:
                continue
            keep = np.array([c for c in avail if c != j], dtype=np.int64)
            rest = np.arange(i + 1, n)
            if rest.size == 0:
                total = prefix + cost[i, j]
                if total <= opt + tol:
                    chosen = j
                    break
                continue
            rsub = cost[np.ix_(rest, keep)]
            rr, cc = linear_sum_assignment(rsub)
            total = prefix + cost[i, j] + float(rsub[rr, cc].sum())
            if total <= opt + tol:
                chosen = j
                current[i] = j
                current[rest[rr]] = keep[cc]
                break
        if chosen < 0:
            raise SolverError("tie-break refinement failed to extend an optimal prefix")
        perm[i] = chosen
        prefix += cost[i, chosen]
        avail.remove(chosen)
    return perm


def solve_assignment(cost: np.ndarray) -> Assignment:
    """Globally optimal assignment for a square cost matrix.

    Uses scipy's Jonker-Volgenant-style O(n^3) solver, then refines ties so
    the returned permutation is the lexicographically smallest among optima
    (tolerance scaled to the instance, see _tie_tol).
    """
    c = _validate_cost(cost)
    rows, cols = linear_sum_assignment(c)
    base = np.empty(c.shape[0], dtype=np.int64)
    base[rows] = cols
    opt = _objective(c, base)
    perm = _lex_smallest_optimal(c, base, opt, _tie_tol(c, opt))
    return Assignment(perm, _objective(c, perm))


@lru_cache(maxsize=16)
def _all_perms(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.int8)


def brute_force_assignment(cost: np.ndarray) -> Assignment:
    """Exhaustive minimum over all n! permutations (n <= 9); test oracle.

    Applies the same tie rule as solve_assignment: among permutations whose
    objective is within the tie tolerance of the minimum, the
    lexicographically smallest wins.
    """
    c = _validate_cost(cost)
    n = c.shape[0]
    if n > BRUTE_FORCE_MAX:
        raise ValidationError(f"brute force capped at n={BRUTE_FORCE_MAX}, got {n}")
    perms = _all_perms(n)
    objectives = c[np.arange(n)[None, :], perms].sum(axis=1)
    best = float(objectives.min())
    tol = _tie_tol(c, best)
    idx = int(np.nonzero(objectives <= best + tol)[0][0])  # perms are in lex order
    perm = perms[idx].astype(np.int64)
    return Assignment(perm, _objective(c, perm))


@dataclass(frozen=True)
class CouplingPlan:
    """Nonnegative coupling matrix with prescribed marginals (tolerance 1e-6)."""

    matrix: np.ndarray
    source_weights: np.ndarray
    target_weights: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        a = np.asarray(self.source_weights, dtype=np.float64)
        b = np.asarray(self.target_weights, dtype=np.float64)
        if m.shape != (a.size, b.size):
            raise ValidationError("plan shape must match marginal sizes")
        if np.any(m < -1e-15):
            raise ValidationError("plan entries must be nonnegative")
        if np.max(np.abs(m.sum(axis=1) - a)) > 1e-6 or np.max(np.abs(m.sum(axis=0) - b)) > 1e-6:
            raise ValidationError("plan marginals violate the 1e-6 tolerance")
        for name, arr in (("matrix", m), ("source_weights", a), ("target_weights", b)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def cost(self, cost_mat: np.ndarray) -> float:
        return float((self.matrix * cost_mat).sum())


def sinkhorn_plan(mu: DiscreteMeasure, nu: DiscreteMeasure, spec: CostSpec,
                  lam: float, max_iter: int = 20000, tol: float = 1e-6) -> CouplingPlan:
    """Entropy-regularized coupling via log-domain matrix scaling.

    lam is the regularization strength added to the transport cost; small lam
    approaches the unregularized optimum.  To keep tiny lam tractable the
    scaling anneals lam from the cost scale down to the target (standard
    epsilon-scaling), all in log space.
    """
    if lam <= 0:
        raise ValidationError("lambda must be positive")
    c = cost_matrix(mu.points, nu.points, spec)
    if not np.all(np.isfinite(c)):
        raise ValidationError("non-finite cost entry")
    a = mu.weights
    b = nu.weights
    log_a = np.log(a) if np.all(a > 0) else None
    log_b = np.log(b) if np.all(b > 0) else None
    if log_a is None or log_b is None:
        raise ValidationError("sinkhorn_plan requires strictly positive weights")

    scale = max(float(c.max() - c.min()), lam)
    lams = []
    cur = max(scale / 10.0, lam)
    while cur > lam * 1.0000001:
        lams.append(cur)
        cur /= 2.0
    lams.append(lam)

    f = np.zeros(mu.n)
    g = np.zeros(nu.n)
    iters_used = 0
    for stage, l in enumerate(lams):
        last_stage = stage == len(lams) - 1
        stage_iters = max_iter - iters_used if last_stage else min(60, max_iter - iters_used)
        for _ in range(stage_iters):
            iters_used += 1
            f = -l * logsumexp((g[None, :] - c) / l, b=b[None, :], axis=1)
            g = -l * logsumexp((f[:, None] - c) / l, b=a[:, None], axis=0)
            if iters_used % 10 == 0 or last_stage:
                log_plan = (f[:, None] + g[None, :] - c) / l + log_a[:, None] + log_b[None, :]
                with np.errstate(over="ignore"):
                    plan = np.exp(log_plan)
                if not np.all(np.isfinite(plan)):
                    continue
                res = max(float(np.max(np.abs(plan.sum(axis=1) - a))),
                          float(np.max(np.abs(plan.sum(axis=0) - b))))
                if res <= tol * 0.5 and last_stage:
                    return CouplingPlan(plan, a, b)
                if res <= tol * 0.5 and not last_stage:
                    break
    log_plan = (f[:, None] + g[None, :] - c) / lam + log_a[:, None] + log_b[None, :]
    with np.errstate(over="ignore"):
        plan = np.exp(log_plan)
    if np.all(np.isfinite(plan)):
        res = max(float(np.max(np.abs(plan.sum(axis=1) - a))),
                  float(np.max(np.abs(plan.sum(axis=0) - b))))
    else:
        res = np.inf
    if res > tol:
        raise SolverError(
            f"sinkhorn did not reach marginal tolerance {tol} within {max_iter} "
            f"iterations (residual {res:.3e}); consider raising lambda")
    return CouplingPlan(plan, a, b)


def barycentric_projection(plan: CouplingPlan, dst: np.ndarray) -> np.ndarray:
    """Row-normalized plan applied to target points: row i -> weighted mean image."""
    dst = np.asarray(dst, dtype=np.float64)
    if dst.ndim == 1:
        dst = dst.reshape(-1, 1)
    if plan.matrix.shape[1] != dst.shape[0]:
        raise ValidationError("plan column count must equal target point count")
    masses = plan.matrix.sum(axis=1)
    if np.any(masses <= 0):
        raise ValidationError("zero row mass in coupling plan")
    return (plan.matrix @ dst) / masses[:, None]
