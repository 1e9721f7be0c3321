"""The three canonical matchings between equal-size uniform discrete measures.

Construction routes:
  * cm_map      - squared-Euclidean optimal assignment (cyclically monotone).
  * qp_map      - composition of two reference assignments (quantile preserving).
  * kr_map      - recursive coordinate-wise conditional rank matching
                  (Knothe-Rosenblatt / triangular monotone).
  * kr_via_eps  - optimal assignment under the hierarchical cost, whose small-eps
                  limit recovers kr_map.

All matchings are permutations of equal-cardinality uniform supports; general
weights are out of scope here and belong to the coupling-plan route in mtl.ot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import ValidationError
from .measures import WEIGHT_TOL, DiscreteMeasure
from .ot import SQUARED_EUCLIDEAN, CostSpec, cost_matrix, solve_assignment

MATCHING_KINDS = ("CM", "QP", "KR", "OTeps", "composed", "identity", "inverse",
                  "counterfactual")
DEFAULT_TIE_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteMatching:
    """Bijective pairing between two equal-size uniform supports."""

    source: DiscreteMeasure
    target: DiscreteMeasure
    perm: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in MATCHING_KINDS:
            raise ValidationError(f"unknown matching kind {self.kind!r}")
        for role, m in (("source", self.source), ("target", self.target)):
            if not m.is_uniform:
                raise ValidationError(f"{role} measure must have uniform weights")
        if self.source.n != self.target.n:
            raise ValidationError("source and target must have equal cardinality")
        p = np.asarray(self.perm, dtype=np.int64)
        if sorted(p.tolist()) != list(range(self.source.n)):
            raise ValidationError("perm must be a bijection of 0..n-1")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "perm", p)

    @property
    def n(self) -> int:
        return self.source.n

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, int(j)) for i, j in enumerate(self.perm)]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the matching as a map at a source support point."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        hits = np.nonzero(np.all(self.source.points == x, axis=1))[0]
        if hits.size == 0:
            near = np.nonzero(np.all(np.abs(self.source.points - x) <= 1e-9, axis=1))[0]
            if near.size == 0:
                raise ValidationError(f"point {x.tolist()} is not in the matching's source support")
            hits = near
        return self.target.points[self.perm[hits[0]]].copy()

    def to_dict(self) -> dict:
        return {
            "source": self.source.id,
            "target": self.target.id,
            "pairs": [[i, j] for i, j in self.pairs()],
            "kind": self.kind,
            "cost_sq_euclidean": matching_cost(self, SQUARED_EUCLIDEAN),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _require_pair(mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
    if not mu.is_uniform or not nu.is_uniform:
        raise ValidationError("transport matchings require uniform weights")
    if mu.n != nu.n:
        raise ValidationError(f"cardinality mismatch: {mu.n} vs {nu.n}")
    if mu.d != nu.d:
        raise ValidationError(f"dimension mismatch: {mu.d} vs {nu.d}")


def identity_matching(mu: DiscreteMeasure) -> DiscreteMatching:
    return DiscreteMatching(mu, mu, np.arange(mu.n), "identity")


def cm_map(mu: DiscreteMeasure, nu: DiscreteMeasure) -> DiscreteMatching:
    """Cyclically monotone matching: squared-Euclidean optimal assignment."""
    _require_pair(mu, nu)
    result = solve_assignment(cost_matrix(mu.points, nu.points, SQUARED_EUCLIDEAN))
    return DiscreteMatching(mu, nu, result.perm, "CM")


def qp_map(mu: DiscreteMeasure, nu: DiscreteMeasure, p0: DiscreteMeasure) -> DiscreteMatching:
    """Quantile-preserving matching relative to reference p0.

    Matches points of equal multivariate rank: the rank of x in mu (through
    the reference assignment p0 -> mu) equals the rank of its image in nu.
    """
    _require_pair(mu, nu)
    _require_pair(p0, mu)
    to_mu = solve_assignment(cost_matrix(p0.points, mu.points, SQUARED_EUCLIDEAN)).perm
    to_nu = solve_assignment(cost_matrix(p0.points, nu.points, SQUARED_EUCLIDEAN)).perm
    inv_to_mu = np.empty_like(to_mu)
    inv_to_mu[to_mu] = np.arange(to_mu.size)
    perm = to_nu[inv_to_mu]
    return DiscreteMatching(mu, nu, perm, "QP")


def _tie_classes(values: np.ndarray, order: np.ndarray, tie_tol: float) -> list[np.ndarray]:
    """Split sorted indices into runs whose consecutive values differ <= tie_tol."""
    classes = []
    start = 0
    sorted_vals = values[order]
    for k in range(1, order.size):
        if sorted_vals[k] - sorted_vals[k - 1] > tie_tol:
            classes.append(order[start:k])
            start = k
    classes.append(order[start:])
    return classes


def _kr_recurse(src_pts: np.ndarray, dst_pts: np.ndarray,
                src_idx: np.ndarray, dst_idx: np.ndarray,
                coord: int, tie_tol: float, perm: np.ndarray) -> None:
    d = src_pts.shape[1]
    sv = src_pts[src_idx, coord]
    dv = dst_pts[dst_idx, coord]
    s_order = src_idx[np.lexsort((src_idx, sv))]
    d_order = dst_idx[np.lexsort((dst_idx, dv))]
    if coord == d - 1:
        perm[s_order] = d_order
        return
    s_classes = _tie_classes(src_pts[:, coord], s_order, tie_tol)
    d_classes = _tie_classes(dst_pts[:, coord], d_order, tie_tol)
    if len(s_classes) != len(d_classes):
        raise ValidationError(
            f"conditional cardinality mismatch at coordinate {coord + 1}: "
            f"{len(s_classes)} source value classes vs {len(d_classes)} target classes")
    for pos, (sc, dc) in enumerate(zip(s_classes, d_classes)):
        if sc.size != dc.size:
            raise ValidationError(
                f"conditional cardinality mismatch at coordinate {coord + 1}, "
                f"class #{pos} (source value {src_pts[sc[0], coord]!r}): "
                f"{sc.size} source points vs {dc.size} target points")
        _kr_recurse(src_pts, dst_pts, sc, dc, coord + 1, tie_tol, perm)


def kr_map(mu: DiscreteMeasure, nu: DiscreteMeasure,
           tie_tol: float = DEFAULT_TIE_TOL) -> DiscreteMatching:
    """Triangular monotone matching built by recursive conditional rank matching.

    Coordinate 1 value classes (values closer than tie_tol merge) are matched
    through the 1D monotone rearrangement; the construction recurses on the
    remaining coordinates inside each matched class.  With all coordinates
    distinct this is exactly the lexicographic sort matching.  Misaligned
    class sizes mean the conditionals are not transportable at uniform
    weights and raise ValidationError.
    """
    _require_pair(mu, nu)
    perm = np.full(mu.n, -1, dtype=np.int64)
    _kr_recurse(mu.points, nu.points, np.arange(mu.n), np.arange(nu.n), 0, tie_tol, perm)
    return DiscreteMatching(mu, nu, perm, "KR")


def kr_via_eps(mu: DiscreteMeasure, nu: DiscreteMeasure, eps: float) -> DiscreteMatching:
    """Optimal assignment under the hierarchical cost; eps=1 reproduces cm_map."""
    _require_pair(mu, nu)
    if not 0.0 < eps <= 1.0:
        raise ValidationError(f"eps must lie in (0, 1], got {eps}")
    result = solve_assignment(cost_matrix(mu.points, nu.points, CostSpec("hierarchical", eps)))
    return DiscreteMatching(mu, nu, result.perm, "OTeps")


def compose(t1: DiscreteMatching, t2: DiscreteMatching) -> DiscreteMatching:
    """Matching A -> C from t2: A -> B and t1: B -> C (endpoints must agree)."""
    if t2.target.id != t1.source.id:
        raise ValidationError(
            f"endpoint mismatch: t2 targets {t2.target.id!r} but t1 sources {t1.source.id!r}")
    perm = t1.perm[t2.perm]
    return DiscreteMatching(t2.source, t1.target, perm, "composed")


def invert(t: DiscreteMatching) -> DiscreteMatching:
    inv = np.empty_like(t.perm)
    inv[t.perm] = np.arange(t.n)
    return DiscreteMatching(t.target, t.source, inv, "inverse")


def matching_cost(t: DiscreteMatching, spec: CostSpec = SQUARED_EUCLIDEAN) -> float:
    """Average per-point transport cost of the matching."""
    src = t.source.points
    dst = t.target.points[t.perm]
    d = src.shape[1]
    acc = np.zeros(src.shape[0])
    for k in range(d - 1, -1, -1):
        w = 1.0 if spec.kind == "squared_euclidean" else spec.epsilon ** (k + 1)
        diff = src[:, k] - dst[:, k]
        acc += w * diff * diff
    return float(acc.sum()) / t.n


def matching_family(measures: Mapping, builder: Callable[[DiscreteMeasure, DiscreteMeasure], DiscreteMatching]) -> dict:
    """All ordered-pair matchings {(a, b): builder(P_a, P_b)} over a label set."""
    labels = list(measures.keys())
    return {(a, b): builder(measures[a], measures[b]) for a in labels for b in labels}
