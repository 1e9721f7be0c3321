"""Numerical falsifiers for monotonicity, comonotonicity and family algebra.

Every checker returns a :class:`PropertyReport`.  A pass means "no violation
found at the sampled resolution"; reports carry the trial count and tolerance
so tests can pin both.  A fail always carries a witness that re-evaluates to
a violation of magnitude above the tolerance.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import dsl
from .errors import EvaluationError, ValidationError
from .matchings import DiscreteMatching

DEFAULT_TOL = 1e-9
FD_TOL = 1e-6
FD_STEP = 1e-5
EXHAUSTIVE_LIMIT = 25
DEFAULT_SEED = 1729


class PointMap:
    """Evaluatable map R^d -> R^d backed by a closed form, expressions or a matching."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim: int,
                 label: str = "", backend: str = "closed_form",
                 support: np.ndarray | None = None):
        self._fn = fn
        self.dim = dim
        self.label = label or backend
        self.backend = backend
        self.support = support

    def __call__(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64).reshape(-1)
        if arr.size != self.dim:
            raise EvaluationError(f"{self.label}: expected a {self.dim}-vector, got {arr.size}")
        out = np.asarray(self._fn(arr), dtype=np.float64).reshape(-1)
        if out.size != self.dim or not np.all(np.isfinite(out)):
            raise EvaluationError(f"{self.label}: evaluation failed at {arr.tolist()}")
        return out

    def __repr__(self):
        return f"PointMap({self.label}, d={self.dim})"

    @classmethod
    def from_callable(cls, fn, dim: int, label: str = "") -> "PointMap":
        return cls(fn, dim, label=label, backend="closed_form")

    @classmethod
    def identity(cls, dim: int) -> "PointMap":
        return cls(lambda x: x, dim, label="identity")

    @classmethod
    def from_exprs(cls, components: Sequence, dim: int | None = None,
                   label: str = "") -> "PointMap":
        """Component expressions over X1..Xd, e.g. ["2*X1 + exp(X1 + X2*X2)", ...]."""
        asts = [dsl.parse_expression(c) if isinstance(c, str) else c for c in components]
        d = dim if dim is not None else len(asts)

        def fn(x: np.ndarray) -> np.ndarray:
            env = {f"X{i + 1}": float(x[i]) for i in range(d)}
            return np.array([dsl.evaluate(a, env) for a in asts])

        return cls(fn, d, label=label or "expr", backend="expression")

    @classmethod
    def from_matching(cls, t: DiscreteMatching, tol: float = 1e-9) -> "PointMap":
        """Lookup map defined on the matching's source support only."""
        src = t.source.points
        dst = t.target.points[t.perm]
        exact = {tuple(float(c) for c in p): i for i, p in enumerate(src)}

        def fn(x: np.ndarray) -> np.ndarray:
            i = exact.get(tuple(float(c) for c in x))
            if i is None:
                near = np.nonzero(np.all(np.abs(src - x) <= tol, axis=1))[0]
                if near.size == 0:
                    raise EvaluationError(f"point {x.tolist()} outside matching support")
                i = int(near[0])
            return dst[i]

        return cls(fn, t.source.d, label=f"matching[{t.kind}]", backend="matching",
                   support=src.copy())


@dataclass(frozen=True)
class PropertyReport:
    """Structured verdict of one checker run."""

    name: str
    passed: bool
    trials: int
    tolerance: float
    witness: dict | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.passed and self.witness is None:
            raise ValidationError("failing reports must carry a witness")

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {
            "property": self.name,
            "verdict": self.verdict,
            "trials": self.trials,
            "tolerance": self.tolerance,
            "witness": self.witness,
            "details": self.details,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _as_point_array(pts) -> np.ndarray:
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


def _eval_all(f: PointMap, pts: np.ndarray) -> np.ndarray:
    return np.stack([f(p) for p in pts], axis=0)


def _cycle_sum(B: np.ndarray, cycle: Sequence[int]) -> float:
    total = 0.0
    m = len(cycle)
    for t in range(m):
        i, j = cycle[t], cycle[(t + 1) % m]
        total += B[i, i] - B[i, j]
    return float(total)


def _cycle_search(B: np.ndarray, pts: np.ndarray, m_max: int, trials: int,
                  tol: float, seed: int, exhaustive_limit: int):
    """Minimum cycle sum for B[i,j] = <f_i, g_j>-style data; returns (min, cycle, count).

    Short cycles are enumerated first and a violation there is reported
    directly (shortest witnesses are the most interpretable); random longer
    cycles only run when the exhaustive phase found nothing.
    """
    n = B.shape[0]
    diag = np.diag(B)
    checked = 0
    best = np.inf
    best_cycle: list[int] | None = None
    if n <= exhaustive_limit:
        idx = np.arange(n)
        # ordered pairs
        s2 = diag[:, None] + diag[None, :] - B - B.T
        np.fill_diagonal(s2, np.inf)
        checked += n * (n - 1)
        pos = np.unravel_index(np.argmin(s2), s2.shape)
        if s2[pos] < best:
            best = float(s2[pos])
            best_cycle = [int(pos[0]), int(pos[1])]
        if n >= 3:
            i, j, k = np.meshgrid(idx, idx, idx, indexing="ij")
            s3 = diag[i] + diag[j] + diag[k] - B[i, j] - B[j, k] - B[k, i]
            distinct = (i != j) & (j != k) & (i != k)
            s3 = np.where(distinct, s3, np.inf)
            checked += int(distinct.sum())
            pos3 = np.unravel_index(np.argmin(s3), s3.shape)
            if s3[pos3] < best:
                best = float(s3[pos3])
                best_cycle = [int(i[pos3]), int(j[pos3]), int(k[pos3])]
        if best < -tol:
            return best, best_cycle, checked
    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(trials):
        m = int(rng.integers(2, m_max + 1)) if m_max > 2 else 2
        if m > n:
            m = n
        if m < 2:
            break
        cycle = rng.choice(n, size=m, replace=False).tolist()
        checked += 1
        s = _cycle_sum(B, cycle)
        if s < best:
            best = float(s)
            best_cycle = [int(c) for c in cycle]
    return best, best_cycle, checked


def _cycle_report(name: str, B: np.ndarray, pts: np.ndarray, m_max: int, trials: int,
                  tol: float, seed: int, exhaustive_limit: int,
                  labels: dict) -> PropertyReport:
    best, cycle, checked = _cycle_search(B, pts, m_max, trials, tol, seed, exhaustive_limit)
    passed = best >= -tol
    witness = None
    if not passed:
        witness = {
            "cycle_indices": cycle,
            "cycle_points": [pts[c].tolist() for c in cycle],
            "cycle_sum": best,
        }
    details = {"exhaustive_pairs_and_triples": pts.shape[0] <= exhaustive_limit,
               "note": "pass means no violation at the sampled resolution"}
    details.update(labels)
    return PropertyReport(name, passed, checked, tol, witness, details)


def check_cyclically_monotone(T: PointMap, pts, m_max: int = 4, trials: int = 200,
                              tol: float = DEFAULT_TOL, seed: int = DEFAULT_SEED,
                              exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> PropertyReport:
    """Cycle sums sum_i <x_i - x_{i+1}, T(x_i)> must be >= -tol.

    All 2- and 3-cycles are enumerated when len(pts) <= exhaustive_limit;
    `trials` seeded random cycles of length <= m_max are always added.
    """
    P = _as_point_array(pts)
    TP = _eval_all(T, P)
    B = TP @ P.T  # B[i, j] = <T(x_i), x_j>
    return _cycle_report("cyclic_monotone", B, P, m_max, trials, tol, seed,
                         exhaustive_limit, {"map": T.label})


def check_cyclically_comonotone(f: PointMap, g: PointMap, pts, m_max: int = 4,
                                trials: int = 200, tol: float = DEFAULT_TOL,
                                seed: int = DEFAULT_SEED,
                                exhaustive_limit: int = EXHAUSTIVE_LIMIT) -> PropertyReport:
    """Bilinear cycle sums sum_i <f(x_i), g(x_i) - g(x_{i+1})> must be >= -tol."""
    P = _as_point_array(pts)
    F = _eval_all(f, P)
    G = _eval_all(g, P)
    B = F @ G.T  # B[i, j] = <f(x_i), g(x_j)>
    return _cycle_report("cyclic_comonotone", B, P, m_max, trials, tol, seed,
                         exhaustive_limit, {"f": f.label, "g": g.label})


def check_comonotone_1d(f: Callable[[float], float], g: Callable[[float], float],
                        samples, tol: float = DEFAULT_TOL) -> PropertyReport:
    """(f(x)-f(y))(g(x)-g(y)) >= -tol over all sample pairs."""
    xs = np.asarray(samples, dtype=np.float64).reshape(-1)
    fv = np.array([float(f(x)) for x in xs])
    gv = np.array([float(g(x)) for x in xs])
    prod = (fv[:, None] - fv[None, :]) * (gv[:, None] - gv[None, :])
    pos = np.unravel_index(np.argmin(prod), prod.shape)
    worst = float(prod[pos])
    passed = worst >= -tol
    witness = None
    if not passed:
        witness = {"x": float(xs[pos[0]]), "y": float(xs[pos[1]]), "product": worst}
    return PropertyReport("comonotone_1d", passed, xs.size * (xs.size - 1) // 2,
                          tol, witness)


def check_diagonally_comonotone(f: PointMap, g: PointMap, base_points,
                                pts_per_axis: int = 8, span: float = 1.0,
                                tol: float = DEFAULT_TOL,
                                seed: int = DEFAULT_SEED) -> PropertyReport:
    """Coordinate-i output increments of f and g must have product >= -tol.

    For every coordinate and base point, coordinate i is swept over a seeded
    grid around the base value and all sweep pairs are compared.
    """
    P = _as_point_array(base_points)
    if f.dim != g.dim:
        raise ValidationError("f and g must share arity")
    rng = np.random.Generator(np.random.PCG64(seed))
    checked = 0
    for b in P:
        for i in range(f.dim):
            sweep = np.sort(b[i] + span * (rng.random(pts_per_axis) - 0.5) * 2.0)
            fv = []
            gv = []
            for t in sweep:
                x = b.copy()
                x[i] = t
                fv.append(f(x)[i])
                gv.append(g(x)[i])
            fv = np.array(fv)
            gv = np.array(gv)
            prod = (fv[:, None] - fv[None, :]) * (gv[:, None] - gv[None, :])
            checked += pts_per_axis * (pts_per_axis - 1) // 2
            pos = np.unravel_index(np.argmin(prod), prod.shape)
            if prod[pos] < -tol:
                witness = {
                    "coordinate": i + 1,
                    "base_point": b.tolist(),
                    "values": [float(sweep[pos[0]]), float(sweep[pos[1]])],
                    "product": float(prod[pos]),
                }
                return PropertyReport("diagonal_comonotone", False, checked, tol, witness)
    return PropertyReport("diagonal_comonotone", True, checked, tol)


def check_triangular(T: PointMap, base_points, probes: int = 5,
                     span: float = 0.5, tol: float = DEFAULT_TOL,
                     seed: int = DEFAULT_SEED) -> PropertyReport:
    """Output coordinate i must not move when any later coordinate j > i moves."""
    P = _as_point_array(base_points)
    rng = np.random.Generator(np.random.PCG64(seed))
    checked = 0
    for b in P:
        base_val = T(b)
        for j in range(1, T.dim):
            for _ in range(probes):
                x = b.copy()
                x[j] = b[j] + span * (rng.random() - 0.5) * 2.0
                out = T(x)
                checked += 1
                for i in range(j):
                    delta = abs(float(out[i] - base_val[i]))
                    if delta > tol:
                        witness = {
                            "base_point": b.tolist(),
                            "perturbed_point": x.tolist(),
                            "perturbed_coordinate": j + 1,
                            "moved_coordinate": i + 1,
                            "delta": delta,
                        }
                        return PropertyReport("triangular", False, checked, tol, witness)
    return PropertyReport("triangular", True, checked, tol)


def check_diagonal_nondecreasing(T: PointMap, base_points, probes: int = 5,
                                 span: float = 0.5, tol: float = DEFAULT_TOL,
                                 seed: int = DEFAULT_SEED) -> PropertyReport:
    """Each output coordinate depends only on its own input coordinate, non-decreasingly."""
    P = _as_point_array(base_points)
    rng = np.random.Generator(np.random.PCG64(seed))
    checked = 0
    for b in P:
        base_val = T(b)
        for j in range(T.dim):
            for _ in range(probes):
                x = b.copy()
                x[j] = b[j] + span * (rng.random() - 0.5) * 2.0
                out = T(x)
                checked += 1
                for i in range(T.dim):
                    if i == j:
                        continue
                    delta = abs(float(out[i] - base_val[i]))
                    if delta > tol:
                        witness = {
                            "base_point": b.tolist(),
                            "perturbed_point": x.tolist(),
                            "perturbed_coordinate": j + 1,
                            "moved_coordinate": i + 1,
                            "delta": delta,
                        }
                        return PropertyReport("diagonal_nondecreasing", False, checked,
                                              tol, witness)
            sweep = np.sort(b[j] + span * (rng.random(probes + 2) - 0.5) * 2.0)
            vals = []
            for t in sweep:
                x = b.copy()
                x[j] = t
                vals.append(float(T(x)[j]))
            checked += len(sweep) - 1
            for k in range(len(vals) - 1):
                if vals[k + 1] - vals[k] < -tol:
                    witness = {
                        "base_point": b.tolist(),
                        "coordinate": j + 1,
                        "values": [float(sweep[k]), float(sweep[k + 1])],
                        "outputs": [vals[k], vals[k + 1]],
                    }
                    return PropertyReport("diagonal_nondecreasing", False, checked,
                                          tol, witness)
    return PropertyReport("diagonal_nondecreasing", True, checked, tol)


def finite_difference_jacobian(T: PointMap, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian estimate at x."""
    if h <= 0:
        raise ValidationError("finite-difference step must be positive")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    d = T.dim
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        if np.all(x + e == x):
            raise ValidationError("finite-difference step underflowed at the base point")
        J[:, j] = (T(x + e) - T(x - e)) / (2.0 * h)
    return J


def check_gradient_field(T: PointMap, pts, h: float = FD_STEP,
                         tol: float = FD_TOL) -> PropertyReport:
    """Jacobian symmetry |J_ij - J_ji| <= tol at every sampled point."""
    P = _as_point_array(pts)
    checked = 0
    for x in P:
        J = finite_difference_jacobian(T, x, h)
        checked += 1
        asym = np.abs(J - J.T)
        pos = np.unravel_index(np.argmax(asym), asym.shape)
        if asym[pos] > tol:
            witness = {
                "point": x.tolist(),
                "i": int(pos[0]) + 1,
                "j": int(pos[1]) + 1,
                "J_ij": float(J[pos]),
                "J_ji": float(J.T[pos]),
                "asymmetry": float(asym[pos]),
            }
            return PropertyReport("gradient_field", False, checked, tol, witness,
                                  {"fd_step": h})
    return PropertyReport("gradient_field", True, checked, tol, details={"fd_step": h})


def jacobian_sparsity(T: PointMap, pts, h: float = FD_STEP,
                      tol: float = FD_TOL) -> dict:
    """Diagnostic: boolean pattern of Jacobian entries exceeding tol anywhere."""
    P = _as_point_array(pts)
    pattern = np.zeros((T.dim, T.dim), dtype=bool)
    for x in P:
        pattern |= np.abs(finite_difference_jacobian(T, x, h)) > tol
    return {"pattern": pattern.tolist(), "fd_step": h, "tolerance": tol,
            "points": int(P.shape[0])}


# ---------------------------------------------------------------------------
# Family algebra: identity, path independence, inversion
# ---------------------------------------------------------------------------

def _family_labels(family: Mapping) -> list:
    labels = []
    for a, b in family.keys():
        if a not in labels:
            labels.append(a)
        if b not in labels:
            labels.append(b)
    for a in labels:
        for b in labels:
            if (a, b) not in family:
                raise ValidationError(f"family is missing the pair ({a!r}, {b!r})")
    return labels


def check_family_algebra(family: Mapping, eval_points=None, tol: float = DEFAULT_TOL,
                         max_triples: int = 64, seed: int = DEFAULT_SEED) -> PropertyReport:
    """Identity, path independence and inversion over an indexed family.

    ``family`` maps ordered label pairs (a, b) to the transport from P_a to
    P_b, given either as DiscreteMatchings (checked exactly at permutation
    level) or PointMaps (checked pointwise at eval_points within tol).
    Index triples are capped at max_triples with seeded subsampling.
    """
    labels = _family_labels(family)
    sample = next(iter(family.values()))
    matching_mode = isinstance(sample, DiscreteMatching)
    checked = 0

    def perm_of(pair):
        return family[pair].perm

    if matching_mode:
        pts = None
    else:
        if eval_points is None:
            raise ValidationError("point-map families need eval_points")
        pts = _as_point_array(eval_points)

    # identity
    for a in labels:
        t = family[(a, a)]
        if matching_mode:
            checked += 1
            if not np.array_equal(t.perm, np.arange(t.n)):
                witness = {"law": "identity", "label": a,
                           "perm": t.perm.tolist()}
                return PropertyReport("family_algebra", False, checked, tol, witness)
        else:
            for x in pts:
                checked += 1
                y = t(x)
                if float(np.max(np.abs(y - x))) > tol:
                    witness = {"law": "identity", "label": a, "point": x.tolist(),
                               "image": y.tolist()}
                    return PropertyReport("family_algebra", False, checked, tol, witness)

    # inversion
    for a in labels:
        for b in labels:
            if a == b:
                continue
            if matching_mode:
                checked += 1
                fwd, back = perm_of((a, b)), perm_of((b, a))
                if not np.array_equal(back[fwd], np.arange(fwd.size)):
                    witness = {"law": "inversion", "pair": [a, b]}
                    return PropertyReport("family_algebra", False, checked, tol, witness)
            else:
                for x in pts:
                    checked += 1
                    y = family[(b, a)](family[(a, b)](x))
                    if float(np.max(np.abs(y - x))) > tol:
                        witness = {"law": "inversion", "pair": [a, b],
                                   "point": x.tolist(), "roundtrip": y.tolist()}
                        return PropertyReport("family_algebra", False, checked, tol, witness)

    # path independence over triples
    triples = [(a, b, c) for a in labels for b in labels for c in labels]
    if len(triples) > max_triples:
        rng = np.random.Generator(np.random.PCG64(seed))
        keep = rng.choice(len(triples), size=max_triples, replace=False)
        triples = [triples[int(k)] for k in sorted(keep)]
    for a, b, c in triples:
        direct = family[(a, c)]
        if matching_mode:
            checked += 1
            composed = perm_of((b, c))[perm_of((a, b))]
            if not np.array_equal(composed, direct.perm):
                diff = int(np.nonzero(composed != direct.perm)[0][0])
                witness = {
                    "law": "path_independence", "triple": [a, b, c],
                    "source_index": diff,
                    "via": int(composed[diff]),
                    "direct": int(direct.perm[diff]),
                }
                return PropertyReport("family_algebra", False, checked, tol, witness)
        else:
            for x in pts:
                checked += 1
                via = family[(b, c)](family[(a, b)](x))
                ref = direct(x)
                if float(np.max(np.abs(via - ref))) > tol:
                    witness = {
                        "law": "path_independence", "triple": [a, b, c],
                        "point": x.tolist(), "via": via.tolist(), "direct": ref.tolist(),
                    }
                    return PropertyReport("family_algebra", False, checked, tol, witness)
    return PropertyReport("family_algebra", True, checked, tol,
                          details={"labels": [repr(l) for l in labels],
                                   "mode": "matching" if matching_mode else "pointwise"})
