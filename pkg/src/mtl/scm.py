"""Structural causal models: validation, interventions, counterfactual maps.

An :class:`Scm` holds endogenous nodes X1..Xd plus a single manipulated node
A, one mechanism per node (an expression AST over parents and the node's own
noise symbol) and one independent exogenous distribution per node.

The engine evaluates, for a fixed intervention value ``a``:

  * ``solve_forward``       the noise-to-outcome map of the intervened model,
  * ``recover_noise``       its per-equation inverse,
  * ``counterfactual_point``the cross-world composition of the two.

Sampling uses numpy PCG64 streams keyed by (seed, node index), so the same
noise draws are reused for every intervention value: interventional samples
are index-aligned across values of ``a`` by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import dsl
from .errors import EvaluationError, SolverError, ValidationError
from .matchings import DiscreteMatching
from .measures import DiscreteMeasure

FIXED_POINT_DAMPING = 0.5
FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 10**4
BISECTION_TOL = 1e-12
BISECTION_MAX_DOUBLINGS = 200
SINGULARITY_TOL = 1e-12


# ---------------------------------------------------------------------------
# Exogenous distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExogenousSpec:
    """Distribution tag for one noise symbol: uniform(lo,hi), gaussian(mean,sd) or point(v)."""

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian", "point"):
            raise ValidationError(f"unknown exogenous kind {self.kind!r}")
        p = tuple(float(v) for v in self.params)
        if self.kind == "uniform":
            if len(p) != 2 or not p[0] < p[1]:
                raise ValidationError("uniform spec needs lo < hi")
        elif self.kind == "gaussian":
            if len(p) != 2 or p[1] <= 0:
                raise ValidationError("gaussian spec needs sd > 0")
        elif len(p) != 1:
            raise ValidationError("point spec needs a single value")
        object.__setattr__(self, "params", p)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            lo, hi = self.params
            return lo + (hi - lo) * rng.random(n)
        if self.kind == "gaussian":
            mean, sd = self.params
            return mean + sd * rng.standard_normal(n)
        return np.full(n, self.params[0])

    def mean(self) -> float:
        if self.kind == "uniform":
            return (self.params[0] + self.params[1]) / 2.0
        return self.params[0]

    def var(self) -> float:
        if self.kind == "uniform":
            return (self.params[1] - self.params[0]) ** 2 / 12.0
        if self.kind == "gaussian":
            return self.params[1] ** 2
        return 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}


UNIFORM01 = ExogenousSpec("uniform", (0.0, 1.0))


# ---------------------------------------------------------------------------
# Mechanisms and the model itself
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mechanism:
    """One structural equation: node = body(parents, noise)."""

    node: str
    body: dsl.Expr
    noise_symbol: str | None
    kind: str = ""
    noise_direction: int | None = None
    parents: tuple[str, ...] = ()

    def __post_init__(self):
        refs = dsl.variables(self.body)
        noise_refs = {v for v in refs if v.startswith("U")}
        allowed_noise = {self.noise_symbol} if self.noise_symbol else set()
        if noise_refs - allowed_noise:
            raise ValidationError(
                f"mechanism for {self.node} references foreign noise {sorted(noise_refs - allowed_noise)}")
        parents = tuple(sorted(v for v in refs if not v.startswith("U")))
        object.__setattr__(self, "parents", parents)
        if not self.kind:
            kind = "opaque"
            if self.noise_symbol and dsl.count_occurrences(self.body, self.noise_symbol) > 0:
                kind = dsl.classify_mechanism(self.body, self.noise_symbol)
            object.__setattr__(self, "kind", kind)
        if self.noise_direction is None and self.kind == "monotone_noise":
            object.__setattr__(
                self, "noise_direction", dsl.noise_monotonicity(self.body, self.noise_symbol))
        if self.noise_direction is None and self.kind in ("linear_row", "additive_noise"):
            object.__setattr__(self, "noise_direction", 1)


def _noise_symbol_for(node: str) -> str:
    return "UA" if node == "A" else "U" + node[1:]


@dataclass(frozen=True, eq=False)
class Scm:
    """Graph + mechanisms + exogenous spec over nodes X1..Xd and A."""

    d: int
    mechanisms: Mapping[str, Mechanism]
    exogenous: Mapping[str, ExogenousSpec]
    name: str = ""

    def __post_init__(self):
        nodes = self.x_nodes + ["A"]
        if set(self.mechanisms.keys()) != set(nodes):
            raise ValidationError(f"mechanisms must cover exactly {nodes}")
        noise_names = [_noise_symbol_for(n) for n in nodes]
        exo = dict(self.exogenous)
        for u in noise_names:
            exo.setdefault(u, UNIFORM01)
        unknown = set(exo) - set(noise_names)
        if unknown:
            raise ValidationError(f"exogenous spec for unknown symbols {sorted(unknown)}")
        object.__setattr__(self, "exogenous", exo)
        for node in nodes:
            mech = self.mechanisms[node]
            for p in mech.parents:
                if p not in nodes:
                    raise ValidationError(f"mechanism for {node} references undeclared node {p}")
            if node != "A":
                count = dsl.count_occurrences(mech.body, mech.noise_symbol or "")
                if count == 0:
                    raise ValidationError(
                        f"degenerate mechanism for {node}: noise symbol must appear")
            if node in mech.parents and mech.kind != "linear_row":
                raise ValidationError(
                    f"self-reference in non-linear mechanism for {node} is not solvable")

    @property
    def x_nodes(self) -> list[str]:
        return [f"X{i}" for i in range(1, self.d + 1)]

    def mechanism(self, node: str) -> Mechanism:
        return self.mechanisms[node]

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "name": self.name,
            "equations": {node: dsl.expr_to_text(m.body) for node, m in self.mechanisms.items()},
            "exogenous": {u: spec.to_dict() for u, spec in sorted(self.exogenous.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def with_exogenous(self, overrides: Mapping[str, ExogenousSpec]) -> "Scm":
        exo = dict(self.exogenous)
        exo.update(overrides)
        return Scm(self.d, dict(self.mechanisms), exo, self.name)


def scm_from_equations(equations: Mapping[str, str | dsl.Expr], d: int | None = None,
                       exogenous: Mapping[str, ExogenousSpec] | None = None,
                       name: str = "") -> Scm:
    """Build an Scm from node -> expression mappings (strings or parsed ASTs).

    Unlike the statement parser this constructor accepts self-referencing
    linear equations, which cyclic linear models require.
    """
    mechs = {}
    x_indices = sorted(int(node[1:]) for node in equations if node != "A")
    dim = d if d is not None else (max(x_indices) if x_indices else 0)
    if x_indices != list(range(1, dim + 1)):
        raise ValidationError(f"equations must cover X1..X{dim} exactly")
    if "A" not in equations:
        raise ValidationError("missing equation for A")
    for node, body in equations.items():
        ast = dsl.parse_expression(body) if isinstance(body, str) else body
        mechs[node] = Mechanism(node, ast, _noise_symbol_for(node))
    return Scm(dim, mechs, dict(exogenous or {}), name)


def scm_from_dict(payload: Mapping) -> Scm:
    """Rebuild an Scm from its JSON mirror ({"equations": ..., "exogenous": ...})."""
    equations = payload.get("equations")
    if not isinstance(equations, Mapping):
        raise ValidationError("model payload needs an 'equations' mapping")
    exo = {}
    for sym, spec in (payload.get("exogenous") or {}).items():
        exo[sym] = ExogenousSpec(spec["kind"], tuple(spec["params"]))
    return scm_from_equations(equations, d=payload.get("d"), exogenous=exo,
                              name=payload.get("name", ""))


def load_scm(path) -> Scm:
    """Load a model from a .json mirror or structural-equation text file."""
    from pathlib import Path

    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".json":
        return scm_from_dict(json.loads(text))
    return dsl.parse_scm(text, name=p.stem)


@dataclass(frozen=True)
class InterventionSpec:
    """Perfect intervention do(target, value); only A is manipulable."""

    target: str = "A"
    value: float = 0.0

    def __post_init__(self):
        if self.target != "A":
            raise ValidationError("only the manipulated node A supports interventions")
        if not np.isfinite(self.value):
            raise ValidationError("intervention value must be finite")


def intervene(m: Scm, spec: InterventionSpec) -> Scm:
    """Replace the target's mechanism by a constant and sever its incoming edges."""
    if spec.target not in m.mechanisms:
        raise ValidationError(f"unknown intervention target {spec.target!r}")
    mechs = dict(m.mechanisms)
    mechs[spec.target] = Mechanism(spec.target, dsl.Num(float(spec.value)),
                                   _noise_symbol_for(spec.target))
    return Scm(m.d, mechs, dict(m.exogenous), m.name)


# ---------------------------------------------------------------------------
# Graph analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GraphSummary:
    """validate() result: graph shape, mechanism classes, linear closed forms."""

    acyclic: bool
    topo_order: tuple[str, ...] | None
    cycles: tuple[tuple[str, ...], ...]
    x_acyclic: bool
    x_topo_order: tuple[str, ...] | None
    kinds: Mapping[str, str]
    x_linear: bool
    m_matrix: np.ndarray | None = None
    a_coeffs: np.ndarray | None = None
    intercepts: np.ndarray | None = None
    invertible: bool | None = None
    inv_id_minus_m: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "acyclic": self.acyclic,
            "topo_order": list(self.topo_order) if self.topo_order else None,
            "cycles": [list(c) for c in self.cycles],
            "x_acyclic": self.x_acyclic,
            "mechanism_kinds": dict(self.kinds),
            "x_linear": self.x_linear,
        }
        if self.x_linear:
            out["M_x"] = [[float(v) for v in row] for row in self.m_matrix]
            out["m_x"] = [float(v) for v in self.a_coeffs]
            out["b_x"] = [float(v) for v in self.intercepts]
            out["id_minus_M_invertible"] = bool(self.invertible)
            if self.invertible:
                out["inv_id_minus_M"] = [[float(v) for v in row] for row in self.inv_id_minus_m]
        return out


def _topo_sort(nodes: Sequence[str], parents: Mapping[str, Iterable[str]]) -> list[str] | None:
    """Kahn's algorithm; None when the graph (self-loops included) is cyclic."""
    remaining = {n: set(p for p in parents[n] if p in nodes) for n in nodes}
    order = []
    ready = sorted(n for n, ps in remaining.items() if not ps)
    for n in ready:
        del remaining[n]
    while ready:
        n = ready.pop(0)
        order.append(n)
        newly = sorted(k for k, ps in remaining.items() if ps == {n} or (n in ps and not ps - {n}))
        for k in remaining:
            remaining[k].discard(n)
        for k in newly:
            del remaining[k]
            ready.append(k)
    return None if remaining else order


def _sccs(nodes: Sequence[str], parents: Mapping[str, Iterable[str]]) -> list[list[str]]:
    """Tarjan strongly connected components, child direction parent -> node."""
    children: dict[str, list[str]] = {n: [] for n in nodes}
    for n in nodes:
        for p in parents[n]:
            if p in children:
                children[p].append(n)
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    stack: list[str] = []
    on_stack: set[str] = set()
    out: list[list[str]] = []
    counter = [0]

    def strongconnect(v: str) -> None:
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        for w in children[v]:
            if w not in index:
                strongconnect(w)
                low[v] = min(low[v], low[w])
            elif w in on_stack:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            comp = []
            while True:
                w = stack.pop()
                on_stack.discard(w)
                comp.append(w)
                if w == v:
                    break
            out.append(sorted(comp))

    for v in nodes:
        if v not in index:
            strongconnect(v)
    return out


def validate(m: Scm) -> GraphSummary:
    """Cycle detection, mechanism classification and linear closed forms."""
    nodes = m.x_nodes + ["A"]
    parents = {n: m.mechanisms[n].parents for n in nodes}
    topo = _topo_sort(nodes, parents)
    self_loops = [n for n in nodes if n in parents[n]]
    cycles = [c for c in _sccs(nodes, parents) if len(c) > 1] + [[n] for n in self_loops]
    cycles = sorted(set(tuple(c) for c in cycles))

    x_nodes = m.x_nodes
    x_parents = {n: tuple(p for p in parents[n] if p != "A") for n in x_nodes}
    x_topo = _topo_sort(x_nodes, x_parents)

    kinds = {n: m.mechanisms[n].kind for n in nodes}
    x_linear = all(kinds[n] == "linear_row" for n in x_nodes)

    summary_args = dict(
        acyclic=topo is not None,
        topo_order=tuple(topo) if topo is not None else None,
        cycles=tuple(cycles),
        x_acyclic=x_topo is not None,
        x_topo_order=tuple(x_topo) if x_topo is not None else None,
        kinds=kinds,
        x_linear=x_linear,
    )
    if x_linear:
        d = m.d
        M = np.zeros((d, d))
        a_coeffs = np.zeros(d)
        intercepts = np.zeros(d)
        for i, node in enumerate(x_nodes):
            coeffs, const = dsl.linear_extract(m.mechanisms[node].body)
            intercepts[i] = const
            for var, c in coeffs.items():
                if var == "A":
                    a_coeffs[i] = c
                elif var.startswith("X"):
                    M[i, int(var[1:]) - 1] = c
        ident = np.eye(d)
        det = float(np.linalg.det(ident - M))
        invertible = abs(det) > SINGULARITY_TOL * max(1.0, float(np.abs(ident - M).max()) ** d)
        summary_args.update(
            m_matrix=M, a_coeffs=a_coeffs, intercepts=intercepts, invertible=invertible,
            inv_id_minus_m=np.linalg.inv(ident - M) if invertible else None)
    return GraphSummary(**summary_args)


@lru_cache(maxsize=128)
def _summary(m: Scm) -> GraphSummary:
    # Scm uses identity hashing and is immutable, so caching per instance is safe.
    return validate(m)


# ---------------------------------------------------------------------------
# Solving
# ---------------------------------------------------------------------------

def _check_noise_vector(m: Scm, u_x) -> np.ndarray:
    u = np.asarray(u_x, dtype=np.float64).reshape(-1)
    if u.size != m.d:
        raise ValidationError(f"noise vector must have length d={m.d}")
    return u


def solve_forward(m: Scm, a: float, u_x) -> np.ndarray:
    """Outcome of the X-block under do(A=a) for one exogenous draw u_x.

    Acyclic X-blocks substitute recursively along the topological order;
    fully linear cyclic blocks use the matrix closed form; anything else runs
    a damped fixed-point iteration (damping 0.5, tolerance 1e-12) and raises
    SolverError on non-convergence.
    """
    u = _check_noise_vector(m, u_x)
    info = _summary(m)
    env: dict[str, float] = {"A": float(a)}
    for i in range(m.d):
        env[f"U{i + 1}"] = float(u[i])
    if info.x_acyclic:
        for node in info.x_topo_order:
            env[node] = dsl.evaluate(m.mechanisms[node].body, env)
        return np.array([env[n] for n in m.x_nodes])
    if info.x_linear:
        if not info.invertible:
            raise SolverError("Id - M^x is singular: linear model not uniquely solvable")
        rhs = info.a_coeffs * float(a) + info.intercepts + u
        return np.linalg.solve(np.eye(m.d) - info.m_matrix, rhs)
    x = u.copy()
    for _ in range(FIXED_POINT_MAX_ITER):
        for i, node in enumerate(m.x_nodes):
            env[node] = float(x[i])
        fx = np.array([dsl.evaluate(m.mechanisms[n].body, env) for n in m.x_nodes])
        if not np.all(np.isfinite(fx)):
            raise SolverError("fixed-point iteration diverged to non-finite values")
        residual = float(np.max(np.abs(fx - x)))
        x = (1.0 - FIXED_POINT_DAMPING) * x + FIXED_POINT_DAMPING * fx
        if residual <= FIXED_POINT_TOL:
            return fx
    raise SolverError(
        f"fixed-point iteration did not converge within {FIXED_POINT_MAX_ITER} "
        f"iterations (last residual {residual:.3e})")


def _invert_mechanism(mech: Mechanism, env: dict[str, float], target: float) -> float:
    """Solve body(parents, u) = target for u; mechanisms must be noise-invertible."""
    noise = mech.noise_symbol
    if mech.kind in ("linear_row", "additive_noise"):
        base = dict(env)
        base[noise] = 0.0
        return target - dsl.evaluate(mech.body, base)
    if mech.kind != "monotone_noise":
        hint = ""
        if mech.kind == "opaque" and "ind" in dsl.expr_to_text(mech.body):
            hint = (" (threshold mechanisms are allowed for A but break noise"
                    " injectivity on X-nodes)")
        raise EvaluationError(
            f"noise not recoverable for {mech.node}: mechanism kind is {mech.kind!r}{hint}")

    def f(t: float) -> float:
        e = dict(env)
        e[noise] = t
        return dsl.evaluate(mech.body, e)

    lo, hi = -1.0, 1.0
    for _ in range(BISECTION_MAX_DOUBLINGS):
        try:
            flo, fhi = f(lo), f(hi)
        except EvaluationError:
            break
        if (flo - target) == 0.0:
            return lo
        if (fhi - target) == 0.0:
            return hi
        if (flo - target) * (fhi - target) < 0.0:
            for _ in range(400):
                mid = 0.5 * (lo + hi)
                fmid = f(mid) - target
                if fmid == 0.0 or (hi - lo) <= BISECTION_TOL:
                    return mid
                if (f(lo) - target) * fmid < 0.0:
                    hi = mid
                else:
                    lo = mid
            return 0.5 * (lo + hi)
        lo *= 2.0
        hi *= 2.0
    raise EvaluationError(
        f"bisection bracket failure inverting {mech.node}: target {target!r} "
        f"not attained by the mechanism")


def recover_noise(m: Scm, a: float, x) -> np.ndarray:
    """Exogenous vector u with solve_forward(m, a, u) = x; inversion is per equation.

    The full endogenous vector is given, so each equation is inverted locally
    in its own noise symbol; this is valid for cyclic graphs too.
    """
    xv = np.asarray(x, dtype=np.float64).reshape(-1)
    if xv.size != m.d:
        raise ValidationError(f"endogenous vector must have length d={m.d}")
    env: dict[str, float] = {"A": float(a)}
    for i, node in enumerate(m.x_nodes):
        env[node] = float(xv[i])
    u = np.empty(m.d)
    for i, node in enumerate(m.x_nodes):
        u[i] = _invert_mechanism(m.mechanisms[node], env, float(xv[i]))
    return u


def counterfactual_point(m: Scm, a: float, a_prime: float, x) -> np.ndarray:
    """Cross-world outcome: recover the noise under a, replay it under a_prime."""
    return solve_forward(m, a_prime, recover_noise(m, a, x))


def counterfactual_map(m: Scm, a: float, a_prime: float):
    """The counterfactual transport as an evaluatable PointMap."""
    from .checks import PointMap

    return PointMap.from_callable(
        lambda x: counterfactual_point(m, a, a_prime, x), m.d,
        label=f"counterfactual[{m.name or 'scm'}:{a}->{a_prime}]")


def subsolution_map(m: Scm, a: float):
    """g_a as a PointMap on noise space."""
    from .checks import PointMap

    return PointMap.from_callable(
        lambda u: solve_forward(m, a, u), m.d,
        label=f"forward[{m.name or 'scm'}:a={a}]")


def counterfactual_family(m: Scm, a_values: Sequence[float]) -> dict:
    """All ordered-pair counterfactual maps over the given intervention values."""
    return {(a, b): counterfactual_map(m, a, b) for a in a_values for b in a_values}


def linear_counterfactual(m: Scm, a: float, a_prime: float) -> np.ndarray:
    """Constant translation (Id - M^x)^-1 m^x (a' - a) of a fully linear X-block."""
    info = _summary(m)
    if not info.x_linear:
        raise ValidationError("linear_counterfactual requires a fully linear X-block")
    if not info.invertible:
        raise SolverError("Id - M^x is singular")
    shift = np.linalg.solve(np.eye(m.d) - info.m_matrix, info.a_coeffs)
    return shift * (float(a_prime) - float(a))


def noise_draws(m: Scm, n: int, seed: int) -> np.ndarray:
    """n draws of the X-block noise vector; stream keyed by (seed, node index).

    The draws do not depend on any intervention value, which is what makes
    interventional samples index-aligned across values of A.
    """
    if n < 1:
        raise ValidationError("sample count must be >= 1")
    if seed < 0:
        raise ValidationError("seed must be >= 0")
    cols = []
    for i in range(1, m.d + 1):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i])))
        cols.append(m.exogenous[f"U{i}"].sample(rng, n))
    return np.stack(cols, axis=1)


def interventional_sample(m: Scm, a: float, n: int, seed: int) -> DiscreteMeasure:
    """Empirical interventional marginal: n forward solves on i.i.d. noise."""
    draws = noise_draws(m, n, seed)
    pts = np.stack([solve_forward(m, a, draws[t]) for t in range(n)], axis=0)
    return DiscreteMeasure(pts, None, f"{m.name or 'scm'}-a{a!r}-n{n}-seed{seed}")


def counterfactual_sample_matching(m: Scm, a: float, a_prime: float, n: int,
                                   seed: int) -> DiscreteMatching:
    """Index-aligned counterfactual pairing between two interventional samples."""
    src = interventional_sample(m, a, n, seed)
    dst = interventional_sample(m, a_prime, n, seed)
    return DiscreteMatching(src, dst, np.arange(n), "counterfactual")


# ---------------------------------------------------------------------------
# KR-representation constructor: conditional-quantile tables from marginals
# ---------------------------------------------------------------------------

class QuantileTableModel:
    """Discrete model whose mechanisms are conditional-quantile tables.

    Built from one marginal per intervention label and a topologically
    ordered DAG over [d]; reproduces each input marginal exactly and induces
    triangular monotone counterfactual matchings by construction.
    """

    def __init__(self, marginals: Mapping, parent_sets: Mapping[int, Iterable[int]],
                 tie_tol: float = 1e-9):
        if not marginals:
            raise ValidationError("at least one marginal is required")
        labels = list(marginals.keys())
        first = marginals[labels[0]]
        for a in labels:
            msr = marginals[a]
            if not msr.is_uniform:
                raise ValidationError("marginals must have uniform weights")
            if msr.n != first.n or msr.d != first.d:
                raise ValidationError("marginals must share cardinality and dimension")
        d = first.d
        pa = {i: tuple(sorted(parent_sets.get(i, ()))) for i in range(1, d + 1)}
        for i, ps in pa.items():
            if any(not (1 <= j < i) for j in ps):
                raise ValidationError(
                    f"parents of node {i} must come earlier in the topological order, got {ps}")
        self.labels = labels
        self.d = d
        self.parent_sets = pa
        self.tie_tol = tie_tol
        self.marginals = dict(marginals)
        self._class_of: dict = {}   # (a, coord) -> {value: class id}
        self._tables: dict = {}     # (a, node) -> {parent key: [(value, support idx), ...]}
        self._ranks: dict = {}      # (a, node) -> {support idx: rank in class}
        for a in labels:
            self._build(a)

    def _build(self, a) -> None:
        pts = self.marginals[a].points
        n = pts.shape[0]
        for coord in range(self.d):
            vals = pts[:, coord]
            order = np.argsort(vals, kind="stable")
            class_of: dict[float, int] = {}
            cid = 0
            prev = None
            for idx in order:
                v = float(vals[idx])
                if prev is not None and v - prev > self.tie_tol:
                    cid += 1
                class_of.setdefault(v, cid)
                prev = v
            self._class_of[(a, coord)] = class_of
        for i in range(1, self.d + 1):
            table: dict[tuple, list[tuple[float, int]]] = {}
            for idx in range(n):
                key = tuple(self._class_of[(a, j - 1)][float(pts[idx, j - 1])]
                            for j in self.parent_sets[i])
                table.setdefault(key, []).append((float(pts[idx, i - 1]), idx))
            ranks: dict[int, int] = {}
            for key, entries in table.items():
                entries.sort()
                for r, (_, idx) in enumerate(entries):
                    ranks[idx] = r
            self._tables[(a, i)] = table
            self._ranks[(a, i)] = ranks

    def interventional_support(self, a) -> DiscreteMeasure:
        """The model's intervened marginal: exactly the input measure."""
        return self.marginals[a]

    def quantile_table(self, a, node: int, parent_values: Sequence[float] = ()) -> list[float]:
        """Sorted conditional support values of a node given parent values."""
        key = tuple(self._class_of[(a, j - 1)][float(v)]
                    for j, v in zip(self.parent_sets[node], parent_values))
        entries = self._tables[(a, node)].get(key)
        if entries is None:
            raise ValidationError(f"no conditional class for node {node} with parents {parent_values}")
        return [v for v, _ in entries]

    def counterfactual_matching(self, a, a_prime) -> DiscreteMatching:
        """Support-level counterfactual pairing from marginal a to marginal a_prime.

        Per source point and per node in topological order: read the noise as
        the rank of the coordinate inside its conditional class under a, and
        write the same rank inside the corresponding class under a_prime.
        """
        src = self.marginals[a]
        dst = self.marginals[a_prime]
        n = src.n
        assembled = np.empty((n, self.d))
        for s in range(n):
            p = src.points[s]
            for i in range(1, self.d + 1):
                key_a = tuple(self._class_of[(a, j - 1)][float(p[j - 1])]
                              for j in self.parent_sets[i])
                entries_a = self._tables[(a, i)][key_a]
                key_b = tuple(self._class_of[(a_prime, j - 1)][float(assembled[s, j - 1])]
                              for j in self.parent_sets[i])
                entries_b = self._tables[(a_prime, i)].get(key_b)
                if entries_b is None:
                    raise ValidationError(
                        f"parent-class cardinality mismatch across labels at node {i}: "
                        f"no class in {a_prime!r} for parent key {key_b}")
                if len(entries_b) != len(entries_a):
                    raise ValidationError(
                        f"parent-class cardinality mismatch across labels at node {i}: "
                        f"{len(entries_a)} source points vs {len(entries_b)} target points")
                rank = self._ranks[(a, i)][s]
                assembled[s, i - 1] = entries_b[rank][0]
        lookup: dict[tuple, list[int]] = {}
        for idx in range(n):
            lookup.setdefault(tuple(float(c) for c in dst.points[idx]), []).append(idx)
        perm = np.empty(n, dtype=np.int64)
        for s in range(n):
            key = tuple(float(c) for c in assembled[s])
            bucket = lookup.get(key)
            if not bucket:
                raise ValidationError(
                    "constructed counterfactual point is not in the target support; "
                    "the marginals are not compatible with the requested DAG")
            perm[s] = bucket.pop(0)
        return DiscreteMatching(src, dst, perm, "counterfactual")


def kr_scm_from_marginals(marginals: Mapping, parent_sets: Mapping[int, Iterable[int]],
                          tie_tol: float = 1e-9) -> QuantileTableModel:
    """Conditional-quantile model fitting the given interventional marginals."""
    return QuantileTableModel(marginals, parent_sets, tie_tol)
