"""Built-in worked models and example constructions used by the CLI and tests."""

from __future__ import annotations

import numpy as np

from . import dsl
from .checks import PointMap
from .errors import ValidationError
from .matchings import cm_map, kr_map, matching_family, qp_map
from .measures import DiscreteMeasure, pushforward, uniform_grid
from .scm import ExogenousSpec, Scm, scm_from_equations

DEFAULT_SEED = 1729


def gene_smoking(alpha: float = 0.5, beta: float = 2.0) -> Scm:
    """Two-gene health score model: X1 drives both A (via a threshold) and X2."""
    text = (
        "X1 = U1\n"
        "A = ind(X1 + UA)\n"
        f"X2 = {alpha}*X1 + {beta}*A + U2\n"
    )
    m = dsl.parse_scm(text, name="gene-smoking")
    return m.with_exogenous({
        "U1": ExogenousSpec("gaussian", (0.0, 1.0)),
        "U2": ExogenousSpec("gaussian", (0.0, 0.5)),
        "UA": ExogenousSpec("uniform", (-1.0, 1.0)),
    })


def cyclic_triangular() -> Scm:
    """Cyclic model (X2 <-> X3) whose counterfactuals are triangular but not diagonal."""
    text = (
        "X1 = U1\n"
        "X2 = X1*X3 + U2\n"
        "X3 = A*X2 + U3\n"
        "A = UA\n"
    )
    return dsl.parse_scm(text, name="cyclic-triangular")


def qp_linear() -> Scm:
    """Cyclic linear model whose counterfactual maps preserve hypercube quantiles.

    Self-referencing equations cannot be written in the statement grammar, so
    the model is assembled from raw expressions.  Noise is uniform on [0,1]^2
    so the exogenous law coincides with the hypercube reference measure.
    """
    return scm_from_equations(
        {
            "X1": "A - 1/3*X1 + 2/3*X2 + U1",
            "X2": "A + 2/3*X1 - 1/3*X2 + U2",
            "A": "UA",
        },
        exogenous={
            "U1": ExogenousSpec("uniform", (0.0, 1.0)),
            "U2": ExogenousSpec("uniform", (0.0, 1.0)),
            "UA": ExogenousSpec("uniform", (0.0, 1.0)),
        },
        name="qp-linear",
    )


def noise_flip() -> Scm:
    """Hand-built model whose noise direction flips with the intervention value.

    X2 = X1 + (1 - 2A) * U2 is strictly monotone in U2 for every fixed a != 1/2
    but increasing at a=0 and decreasing at a=1, so the subsolution maps are
    not diagonally comonotone and sampled counterfactual matchings deviate
    from the triangular monotone matching.
    """
    m = scm_from_equations(
        {
            "X1": "U1",
            "X2": "X1 + (1 - 2*A)*U2",
            "A": "UA",
        },
        exogenous={
            "U1": ExogenousSpec("point", (0.5,)),
            "U2": ExogenousSpec("uniform", (0.0, 1.0)),
            "UA": ExogenousSpec("uniform", (0.0, 1.0)),
        },
        name="noise-flip",
    )
    return m


SCM_BUILTINS = {
    "gene-smoking": gene_smoking,
    "cyclic-triangular": cyclic_triangular,
    "qp-linear": qp_linear,
    "noise-flip": noise_flip,
}


# ---------------------------------------------------------------------------
# Built-in maps
# ---------------------------------------------------------------------------

def identity_map(d: int = 2) -> PointMap:
    return PointMap.identity(d)


def rotation_map() -> PointMap:
    """Quarter-turn (x, y) -> (y, -x); not cyclically monotone."""
    return PointMap.from_callable(lambda x: np.array([x[1], -x[0]]), 2, label="rotation")


def stretch_map() -> PointMap:
    """(x, y) -> (3x, y); the gradient of a separable convex function."""
    return PointMap.from_callable(lambda x: np.array([3.0 * x[0], x[1]]), 2, label="stretch3x")


def convex_gradient_map() -> PointMap:
    """Gradient of (x, y) -> exp(x + y^2) + x^2; cyclically monotone."""
    return PointMap.from_exprs(
        ["2*X1 + exp(X1 + X2*X2)", "2*X2*exp(X1 + X2*X2)"], label="convex-gradient")


def nongradient_map() -> PointMap:
    """Composition of stretch and convex gradient; its Jacobian is asymmetric."""
    return PointMap.from_exprs(
        ["6*X1 + exp(3*X1 + X2*X2)", "2*X2*exp(3*X1 + X2*X2)"], label="non-gradient")


MAP_BUILTINS = {
    "identity": identity_map,
    "rotation": rotation_map,
    "convex-gradient": convex_gradient_map,
    "non-gradient": nongradient_map,
}


# ---------------------------------------------------------------------------
# Measure constructions
# ---------------------------------------------------------------------------

def sample_cloud(n: int, seed: int, lo: float = 0.0, hi: float = 1.0, d: int = 2,
                 id: str = "") -> DiscreteMeasure:
    """Seeded i.i.d. uniform sample on [lo, hi]^d."""
    rng = np.random.Generator(np.random.PCG64(seed))
    pts = lo + (hi - lo) * rng.random((n, d))
    return DiscreteMeasure(pts, None, id or f"cloud-n{n}-seed{seed}")


def path_independence_counterexample(seed: int = DEFAULT_SEED, n: int = 49):
    """Three measures on which squared-cost optimal matchings are not path independent.

    P0 is a seeded uniform cloud on [0,1]^2, P1 its image under the 3x
    stretch, P2 the image of P1 under a convex-gradient map.  Returns the
    measures keyed 0, 1, 2 and the two forward maps.
    """
    t10 = stretch_map()
    t21 = convex_gradient_map()
    p0 = sample_cloud(n, seed, id=f"ctrex-P0-seed{seed}")
    p1 = pushforward(p0, t10, id=f"ctrex-P1-seed{seed}")
    p2 = pushforward(p1, t21, id=f"ctrex-P2-seed{seed}")
    if p1.n != n or p2.n != n:
        raise ValidationError("pushforward collapsed points; pick another seed")
    return {0: p0, 1: p1, 2: p2}, {"stretch": t10, "convex_gradient": t21}


def cm_matching_family(seed: int = DEFAULT_SEED, n: int = 49) -> dict:
    measures, _ = path_independence_counterexample(seed, n)
    return matching_family(measures, cm_map)


def figure_instance(seed: int = DEFAULT_SEED):
    """Seeded non-product 2D instance with n=49 and the 7x7 grid reference.

    mu is a correlated (sheared) cloud, nu a nonlinearly warped cloud, so the
    three canonical matchings genuinely differ.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    base = rng.random((49, 2))
    shear = np.array([[1.0, 0.6], [0.0, 1.0]])
    mu_pts = base @ shear.T
    base2 = rng.random((49, 2))
    nu_pts = np.stack([
        1.5 + base2[:, 0] + 0.8 * base2[:, 1] ** 2,
        0.5 + base2[:, 1] + 0.5 * base2[:, 0] ** 2,
    ], axis=1)
    mu = DiscreteMeasure(mu_pts, None, f"fig-mu-seed{seed}")
    nu = DiscreteMeasure(nu_pts, None, f"fig-nu-seed{seed}")
    grid = uniform_grid(2, 7, 0.0, 1.0, id="grid-7x7")
    return mu, nu, grid


def product_grid(seed: int, k: int = 7, jitter: float = 0.35) -> DiscreteMeasure:
    """k x k product grid with independently perturbed axis values."""
    rng = np.random.Generator(np.random.PCG64(seed))
    xs = np.sort(np.arange(k) + jitter * (rng.random(k) - 0.5))
    ys = np.sort(np.arange(k) + jitter * (rng.random(k) - 0.5))
    pts = np.array([(x, y) for x in xs for y in ys])
    return DiscreteMeasure(pts, None, f"product-grid-seed{seed}")
