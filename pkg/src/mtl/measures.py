"""Weighted point clouds, reference-measure generators and 1D quantile machinery.

A :class:`DiscreteMeasure` is the universal carrier of every distribution in
this package: source/target clouds, grid references, interventional samples.
Points live in R^d as float64; weights are nonnegative and sum to one.

Randomized constructors use numpy's PCG64 bit generator so that sampled
measures are bit-reproducible for a fixed seed (see README).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import FormatError, ValidationError

WEIGHT_TOL = 1e-12
MERGE_TOL = 1e-12
GRID_CAP = 10**6


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError("points must form a nonempty (n, d) array")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("points must be finite")
    return arr


def _content_id(points: np.ndarray, weights: np.ndarray) -> str:
    digest = hashlib.sha1(points.tobytes() + weights.tobytes()).hexdigest()
    return f"measure-{digest[:10]}"


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure: n weighted points in R^d."""

    points: np.ndarray
    weights: np.ndarray
    id: str = ""

    def __post_init__(self):
        pts = _as_points(self.points)
        if self.weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != pts.shape[0]:
            raise ValidationError("weights length must match point count")
        if np.any(w < 0):
            raise ValidationError("negative weight")
        if abs(float(w.sum()) - 1.0) > WEIGHT_TOL:
            raise ValidationError(f"weights sum to {w.sum()!r}, expected 1 within {WEIGHT_TOL}")
        pts = pts.copy()
        w = w.copy()
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        if not self.id:
            object.__setattr__(self, "id", _content_id(pts, w))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def is_uniform(self) -> bool:
        return bool(np.max(np.abs(self.weights - 1.0 / self.n)) <= WEIGHT_TOL)

    def with_id(self, new_id: str) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights, new_id)

    def to_dict(self) -> dict:
        return {
            "points": [[float(c) for c in p] for p in self.points],
            "weights": [float(w) for w in self.weights],
            "id": self.id,
        }


def measure(points, weights=None, id: str = "") -> DiscreteMeasure:
    """Convenience constructor accepting lists or arrays."""
    return DiscreteMeasure(_as_points(points), weights, id)


@dataclass(frozen=True)
class Support1DView:
    """Deduplicated sorted support of a 1D measure with cumulative weights."""

    values: np.ndarray
    cumulative: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        c = np.asarray(self.cumulative, dtype=np.float64)
        if v.ndim != 1 or v.shape != c.shape or v.size < 1:
            raise ValidationError("values and cumulative weights must be equal-length 1D arrays")
        if np.any(np.diff(v) <= 0):
            raise ValidationError("values must be strictly increasing after deduplication")
        if np.any(np.diff(c) < -WEIGHT_TOL):
            raise ValidationError("cumulative weights must be non-decreasing")
        if abs(float(c[-1]) - 1.0) > WEIGHT_TOL:
            raise ValidationError("cumulative weights must end at 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "cumulative", c)


def support_1d(m: DiscreteMeasure) -> Support1DView:
    """Sorted, deduplicated view of a 1D measure's CDF."""
    if m.d != 1:
        raise ValidationError(f"support_1d requires d=1, got d={m.d}")
    order = np.argsort(m.points[:, 0], kind="stable")
    vals = m.points[order, 0]
    wts = m.weights[order]
    uniq_vals = []
    uniq_wts = []
    for v, w in zip(vals, wts):
        if uniq_vals and v == uniq_vals[-1]:
            uniq_wts[-1] += w
        else:
            uniq_vals.append(float(v))
            uniq_wts.append(float(w))
    return Support1DView(np.array(uniq_vals), np.cumsum(uniq_wts))


def quantile_1d(m: DiscreteMeasure, alpha: float) -> float:
    """Generalized inverse CDF: smallest support value with cumulative weight >= alpha."""
    if not (0.0 < alpha < 1.0):
        raise ValidationError(f"alpha must lie in (0,1), got {alpha}")
    view = support_1d(m)
    idx = int(np.searchsorted(view.cumulative, alpha, side="left"))
    # guard against cumulative[-1] = 1 - ulp with alpha close to 1
    idx = min(idx, view.values.size - 1)
    if view.cumulative[idx] < alpha - WEIGHT_TOL and idx + 1 < view.values.size:
        idx += 1
    return float(view.values[idx])


def uniform_grid(d: int, k: int, lo: float, hi: float, id: str = "") -> DiscreteMeasure:
    """Uniform measure on the axis-aligned k^d grid over [lo, hi]^d.

    Endpoints are included for k >= 2; k = 1 places the single point at the
    interval midpoint.
    """
    if d < 1 or k < 1:
        raise ValidationError("d and k must be >= 1")
    if not lo < hi:
        raise ValidationError("lo must be < hi")
    if k**d > GRID_CAP:
        raise ValidationError(f"grid size {k}^{d} exceeds cap {GRID_CAP}")
    axis = np.array([(lo + hi) / 2.0]) if k == 1 else np.linspace(lo, hi, k)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return DiscreteMeasure(pts, None, id or f"grid-{d}d-{k}^{d}")


def spherical_uniform_sample(d: int, n: int, seed: int) -> DiscreteMeasure:
    """n i.i.d. draws of R*U with R ~ Unif[0,1] and U uniform on the unit sphere."""
    if d < 1 or n < 1:
        raise ValidationError("d and n must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    radii = rng.random(n)
    if d == 1:
        dirs = np.where(rng.random(n) < 0.5, -1.0, 1.0).reshape(-1, 1)
    else:
        g = rng.standard_normal((n, d))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        # resample exact-zero gaussian vectors is overkill; nudge instead
        norms[norms == 0.0] = 1.0
        dirs = g / norms
    pts = dirs * radii[:, None]
    return DiscreteMeasure(pts, None, f"sphere-{d}d-n{n}-seed{seed}")


def pushforward(m: DiscreteMeasure, f: Callable[[np.ndarray], np.ndarray],
                id: str = "") -> DiscreteMeasure:
    """Image measure: map every support point, merge coincident images.

    Images closer than 1e-12 per coordinate (chained along the lexicographic
    order) are merged with summed weights.
    """
    images = []
    for p in m.points:
        try:
            q = np.asarray(f(p), dtype=np.float64).reshape(-1)
        except Exception as exc:  # surfacing the offending point
            raise ValidationError(f"map evaluation failed at point {p.tolist()}: {exc}") from exc
        if not np.all(np.isfinite(q)):
            raise ValidationError(f"map produced non-finite image at point {p.tolist()}")
        images.append(q)
    pts = np.stack(images, axis=0)
    if pts.shape[0] != m.n:
        raise ValidationError("map must produce one image per point")
    order = np.lexsort(pts.T[::-1])
    merged_pts = []
    merged_wts = []
    for idx in order:
        p = pts[idx]
        w = m.weights[idx]
        if merged_pts and np.all(np.abs(p - merged_pts[-1]) <= MERGE_TOL):
            merged_wts[-1] += w
        else:
            merged_pts.append(p)
            merged_wts.append(float(w))
    out = DiscreteMeasure(np.stack(merged_pts, axis=0), np.array(merged_wts), id)
    return out


# ---------------------------------------------------------------------------
# File I/O.  CSV: one point per row, ';'-separated coordinates, optional
# trailing "w=<real>".  JSON: {"points": [[...]], "weights": [...]}.
# Floats serialize via repr, so both formats round-trip at full precision.
# ---------------------------------------------------------------------------

def _detect_format(path: Path, format: str | None) -> str:
    if format is not None:
        if format not in ("csv", "json"):
            raise ValidationError(f"unknown format {format!r}")
        return format
    return "json" if path.suffix.lower() == ".json" else "csv"


def load_measure(path, format: str | None = None) -> DiscreteMeasure:
    """Load a measure from a CSV or JSON file; missing weights default to 1/n."""
    p = Path(path)
    fmt = _detect_format(p, format)
    text = p.read_text(encoding="utf-8")
    if fmt == "json":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{p}: invalid JSON: {exc}") from exc
        if "points" not in payload:
            raise FormatError(f"{p}: JSON payload missing 'points'")
        pts = payload["points"]
        wts = payload.get("weights")
        try:
            return DiscreteMeasure(_as_points(pts),
                                   None if wts is None else np.asarray(wts, dtype=np.float64),
                                   payload.get("id", ""))
        except ValidationError as exc:
            raise FormatError(f"{p}: {exc}") from exc
    rows = []
    weights = []
    saw_weight = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(";")]
        w = None
        if fields and fields[-1].startswith("w="):
            try:
                w = float(fields[-1][2:])
            except ValueError as exc:
                raise FormatError(f"{p}:{lineno}: malformed weight field {fields[-1]!r}") from exc
            fields = fields[:-1]
        if not fields:
            raise FormatError(f"{p}:{lineno}: empty row")
        try:
            coords = [float(f) for f in fields]
        except ValueError as exc:
            raise FormatError(f"{p}:{lineno}: malformed row {line!r}") from exc
        if rows and len(coords) != len(rows[0]):
            raise FormatError(f"{p}:{lineno}: dimension mismatch "
                              f"({len(coords)} vs {len(rows[0])})")
        rows.append(coords)
        weights.append(w)
        saw_weight = saw_weight or (w is not None)
    if not rows:
        raise FormatError(f"{p}: no data rows")
    if saw_weight and any(w is None for w in weights):
        raise FormatError(f"{p}: weight field present on some rows but not all")
    if saw_weight and any(w < 0 for w in weights):
        raise ValidationError("negative weight")
    try:
        return DiscreteMeasure(np.array(rows, dtype=np.float64),
                               np.array(weights, dtype=np.float64) if saw_weight else None)
    except ValidationError:
        raise


def save_measure(m: DiscreteMeasure, path, format: str | None = None) -> None:
    """Write a measure to CSV or JSON with lossless float serialization."""
    p = Path(path)
    fmt = _detect_format(p, format)
    if fmt == "json":
        p.write_text(json.dumps(m.to_dict(), sort_keys=True), encoding="utf-8")
        return
    lines = []
    for pt, w in zip(m.points, m.weights):
        coords = ";".join(repr(float(c)) for c in pt)
        lines.append(f"{coords};w={repr(float(w))}")
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")


def same_support(a: DiscreteMeasure, b: DiscreteMeasure, tol: float = 0.0) -> bool:
    """Point-set and weight equality up to reordering (exact by default)."""
    if a.n != b.n or a.d != b.d:
        return False
    ka = np.lexsort(a.points.T[::-1])
    kb = np.lexsort(b.points.T[::-1])
    if tol == 0.0:
        return bool(np.array_equal(a.points[ka], b.points[kb])
                    and np.array_equal(a.weights[ka], b.weights[kb]))
    return bool(np.allclose(a.points[ka], b.points[kb], atol=tol, rtol=0.0)
                and np.allclose(a.weights[ka], b.weights[kb], atol=tol, rtol=0.0))
