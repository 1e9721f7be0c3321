import itertools

import numpy as np
import pytest

from mtl import presets
from mtl.checks import (PointMap, PropertyReport, check_comonotone_1d,
                        check_cyclically_comonotone, check_cyclically_monotone,
                        check_diagonal_nondecreasing, check_diagonally_comonotone,
                        check_family_algebra, check_gradient_field,
                        check_triangular, jacobian_sparsity)
from mtl.errors import EvaluationError, ValidationError
from mtl.matchings import cm_map, kr_map, matching_family
from mtl.measures import measure
from mtl.presets import sample_cloud
from mtl.scm import counterfactual_family, counterfactual_map, subsolution_map


def cycle_sum(T, cycle):
    total = 0.0
    for t in range(len(cycle)):
        x, x_next = cycle[t], cycle[(t + 1) % len(cycle)]
        total += float(np.dot(x - x_next, T(x)))
    return total


class TestPointMap:
    def test_identity(self):
        m = PointMap.identity(3)
        x = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(m(x), x)

    def test_from_exprs(self):
        m = PointMap.from_exprs(["X1 + X2", "X2*X2"])
        assert np.allclose(m([2.0, 3.0]), [5.0, 9.0])

    def test_from_matching_lookup_and_domain(self, rng):
        mu = measure(rng.random((6, 2)))
        nu = measure(rng.random((6, 2)))
        t = cm_map(mu, nu)
        m = PointMap.from_matching(t)
        for i, j in t.pairs():
            assert np.array_equal(m(mu.points[i]), nu.points[t.perm[i]])
        with pytest.raises(EvaluationError, match="outside matching support"):
            m(np.array([99.0, 99.0]))

    def test_arity_checked(self):
        m = PointMap.identity(2)
        with pytest.raises(EvaluationError):
            m([1.0, 2.0, 3.0])

    def test_report_requires_witness_on_fail(self):
        with pytest.raises(ValidationError):
            PropertyReport("p", False, 1, 1e-9, witness=None)


class TestCyclicMonotone:
    def test_identity_passes(self, rng):
        rep = check_cyclically_monotone(PointMap.identity(2), rng.random((10, 2)))
        assert rep.passed

    def test_convex_gradient_passes(self, rng):
        rep = check_cyclically_monotone(presets.convex_gradient_map(), rng.random((12, 2)))
        assert rep.passed

    def test_rotation_fails_on_corners_with_short_witness(self):
        corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        rep = check_cyclically_monotone(presets.rotation_map(), corners)
        assert not rep.passed
        assert len(rep.witness["cycle_indices"]) in (2, 3)
        # manual oracle: enumerate all 2- and 3-cycles, find the same minimum
        T = presets.rotation_map()
        sums = []
        for m in (2, 3):
            for combo in itertools.permutations(range(4), m):
                sums.append(cycle_sum(T, [corners[i] for i in combo]))
        assert rep.witness["cycle_sum"] == pytest.approx(min(sums), abs=1e-12)

    def test_witness_reevaluates_to_violation(self):
        corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        rep = check_cyclically_monotone(presets.rotation_map(), corners, tol=1e-9)
        cycle = [np.array(p) for p in rep.witness["cycle_points"]]
        assert cycle_sum(presets.rotation_map(), cycle) < -rep.tolerance

    def test_agrees_with_comonotone_against_identity(self, rng):
        for seed in range(4):
            pts = np.random.Generator(np.random.PCG64(seed)).random((8, 2)) * 2 - 1
            for target in (presets.rotation_map(), presets.convex_gradient_map(),
                           PointMap.identity(2)):
                a = check_cyclically_monotone(target, pts, seed=seed)
                b = check_cyclically_comonotone(target, PointMap.identity(2), pts, seed=seed)
                assert a.passed == b.passed


class TestCyclicComonotone:
    def test_identity_pair_passes(self, rng):
        idm = PointMap.identity(2)
        rep = check_cyclically_comonotone(idm, idm, rng.random((10, 2)))
        assert rep.passed

    def test_linear_translations_pass(self, rng):
        # subsolution maps of a linear model differ by translations
        model = presets.qp_linear()
        g0 = subsolution_map(model, 0.0)
        g1 = subsolution_map(model, 1.0)
        pts = rng.random((20, 2))
        assert check_cyclically_comonotone(g0, g1, pts).passed

    def test_opposite_maps_fail(self, rng):
        idm = PointMap.identity(2)
        neg = PointMap.from_callable(lambda x: -x, 2, label="negate")
        rep = check_cyclically_comonotone(idm, neg, rng.random((8, 2)))
        assert not rep.passed and rep.witness is not None


class TestComonotone1d:
    def test_identity_pair(self):
        xs = np.linspace(-1, 1, 9)
        assert check_comonotone_1d(lambda x: x, lambda x: x, xs).passed

    def test_increasing_vs_decreasing(self):
        xs = np.linspace(-1, 1, 9)
        rep = check_comonotone_1d(lambda x: x, lambda x: -x, xs)
        assert not rep.passed
        x, y = rep.witness["x"], rep.witness["y"]
        assert (x - y) * (-(x - y)) < 0

    def test_shifted_mechanism_family(self):
        # all mechanisms u -> u + shift(a, x) are pairwise comonotone
        xs = np.linspace(0, 1, 15)
        shifts = [0.0, 0.7, -0.4]
        for s1, s2 in itertools.combinations(shifts, 2):
            rep = check_comonotone_1d(lambda u, s=s1: u + s, lambda u, s=s2: u + s, xs)
            assert rep.passed


class TestDiagonallyComonotone:
    def test_identity_pair(self, rng):
        idm = PointMap.identity(2)
        rep = check_diagonally_comonotone(idm, idm, rng.random((5, 2)))
        assert rep.passed

    def test_coordinate_decreasing_fails_with_witness(self, rng):
        f = PointMap.identity(2)
        g = PointMap.from_callable(lambda x: np.array([x[0], -x[1]]), 2)
        rep = check_diagonally_comonotone(f, g, rng.random((4, 2)))
        assert not rep.passed
        assert rep.witness["coordinate"] == 2

    def test_gene_smoking_subsolutions_pass(self, rng):
        model = presets.gene_smoking()
        g0 = subsolution_map(model, 0.0)
        g1 = subsolution_map(model, 1.0)
        rep = check_diagonally_comonotone(g0, g1, rng.random((5, 2)))
        assert rep.passed


class TestTriangular:
    def test_diagonal_map_passes(self, rng):
        d = PointMap.from_callable(lambda x: np.array([2 * x[0], x[1] ** 3]), 2)
        assert check_triangular(d, rng.random((5, 2))).passed

    def test_swap_fails(self, rng):
        s = PointMap.from_callable(lambda x: np.array([x[1], x[0]]), 2)
        rep = check_triangular(s, rng.random((5, 2)))
        assert not rep.passed
        assert rep.witness["moved_coordinate"] == 1

    def test_cyclic_counterfactual_triangular_not_diagonal(self, rng):
        model = presets.cyclic_triangular()
        C = counterfactual_map(model, 0.2, 0.5)
        base = 0.2 + 0.5 * rng.random((6, 3))
        assert check_triangular(C, base, span=0.3).passed
        rep = check_diagonal_nondecreasing(C, base, span=0.3)
        assert not rep.passed


class TestDiagonalNondecreasing:
    def test_translation_passes(self, rng):
        t = PointMap.from_callable(lambda x: x + np.array([1.0, -2.0]), 2)
        assert check_diagonal_nondecreasing(t, rng.random((5, 2))).passed

    def test_cross_dependence_fails(self, rng):
        t = PointMap.from_callable(lambda x: np.array([x[0], x[0] + x[1]]), 2)
        rep = check_diagonal_nondecreasing(t, rng.random((5, 2)))
        assert not rep.passed

    def test_decreasing_component_fails(self, rng):
        t = PointMap.from_callable(lambda x: np.array([-x[0], x[1]]), 2)
        rep = check_diagonal_nondecreasing(t, rng.random((5, 2)))
        assert not rep.passed

    def test_pass_implies_triangular_and_cyclically_monotone(self, rng):
        maps = [
            PointMap.from_callable(lambda x: x + 0.5, 2, label="shift"),
            PointMap.from_callable(lambda x: np.array([x[0] ** 3, np.exp(x[1])]), 2,
                                   label="separable"),
        ]
        pts = rng.random((6, 2))
        for t in maps:
            if check_diagonal_nondecreasing(t, pts).passed:
                assert check_triangular(t, pts).passed
                assert check_cyclically_monotone(t, pts).passed


class TestGradientField:
    def test_identity_passes(self, rng):
        assert check_gradient_field(PointMap.identity(2), rng.random((6, 2))).passed

    def test_convex_gradient_passes(self, rng):
        assert check_gradient_field(presets.convex_gradient_map(), rng.random((8, 2))).passed

    def test_composed_map_fails_with_large_asymmetry(self, rng):
        rep = check_gradient_field(presets.nongradient_map(), rng.random((8, 2)))
        assert not rep.passed
        assert rep.witness["asymmetry"] > 0.1

    def test_step_underflow(self):
        with pytest.raises(ValidationError):
            check_gradient_field(PointMap.identity(1), np.array([[1.0]]), h=0.0)

    def test_jacobian_sparsity_diagnostic(self, rng):
        t = PointMap.from_callable(lambda x: np.array([x[0], x[0] + x[1]]), 2)
        diag = jacobian_sparsity(t, rng.random((4, 2)))
        assert diag["pattern"] == [[True, False], [True, True]]


class TestFamilyAlgebra:
    def test_counterfactual_family_passes(self, rng):
        model = presets.gene_smoking()
        fam = counterfactual_family(model, (0.0, 0.5, 1.0))
        rep = check_family_algebra(fam, eval_points=rng.random((20, 2)))
        assert rep.passed

    def test_cm_family_fails_path_independence(self):
        fam = presets.cm_matching_family(seed=1729)
        rep = check_family_algebra(fam)
        assert not rep.passed
        assert rep.witness["law"] == "path_independence"

    def test_kr_family_passes_on_counterexample_measures(self):
        measures, _ = presets.path_independence_counterexample(seed=1729)
        rep = check_family_algebra(matching_family(measures, kr_map))
        assert rep.passed

    def test_missing_pair_rejected(self):
        measures = {a: sample_cloud(6, 300 + a) for a in range(2)}
        fam = matching_family(measures, cm_map)
        del fam[(0, 1)]
        with pytest.raises(ValidationError, match="missing the pair"):
            check_family_algebra(fam)

    def test_pointwise_identity_violation_detected(self):
        fam = {
            (0, 0): PointMap.from_callable(lambda x: x + 1.0, 1),
            (0, 1): PointMap.identity(1), (1, 0): PointMap.identity(1),
            (1, 1): PointMap.identity(1),
        }
        rep = check_family_algebra(fam, eval_points=np.zeros((1, 1)))
        assert not rep.passed and rep.witness["law"] == "identity"

    def test_matching_exhaustive_support_contract(self):
        # matching-backed maps: 2-/3-cycle checks over the full <= 64-point support
        mu, nu = sample_cloud(49, 61), sample_cloud(49, 62)
        t = cm_map(mu, nu)
        pm = PointMap.from_matching(t)
        rep = check_cyclically_monotone(pm, pm.support, exhaustive_limit=64, trials=0)
        assert rep.details["exhaustive_pairs_and_triples"]
        assert rep.passed  # optimal assignments are cyclically monotone on support
