import itertools
import json

import numpy as np
import pytest

from mtl.errors import ValidationError
from mtl.matchings import (DiscreteMatching, cm_map, compose, identity_matching,
                           invert, kr_map, kr_via_eps, matching_cost,
                           matching_family, qp_map)
from mtl.measures import measure, uniform_grid
from mtl.ot import CostSpec, brute_force_assignment, cost_matrix
from mtl.presets import product_grid, sample_cloud
from mtl.checks import check_family_algebra


def rank_matching_oracle(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    perm = np.empty(len(src), dtype=np.int64)
    perm[np.argsort(src, kind="stable")] = np.argsort(dst, kind="stable")
    return perm


def lex_matching_oracle(mu, nu) -> np.ndarray:
    perm = np.empty(mu.n, dtype=np.int64)
    src_order = np.lexsort(mu.points.T[::-1])
    dst_order = np.lexsort(nu.points.T[::-1])
    perm[src_order] = dst_order
    return perm


class TestCmMap:
    def test_self_matching_is_identity(self, rng):
        mu = measure(rng.random((9, 2)))
        assert np.array_equal(cm_map(mu, mu).perm, np.arange(9))

    def test_1d_rank_matching(self, rng):
        a, b = rng.random(15), rng.random(15)
        mu, nu = measure(a.reshape(-1, 1)), measure(b.reshape(-1, 1))
        assert np.array_equal(cm_map(mu, nu).perm, rank_matching_oracle(a, b))

    def test_matches_brute_force(self, rng):
        mu = measure(rng.random((7, 2)))
        nu = measure(rng.random((7, 2)))
        oracle = brute_force_assignment(cost_matrix(mu.points, nu.points))
        assert np.array_equal(cm_map(mu, nu).perm, oracle.perm)

    def test_requires_uniform_weights(self, rng):
        mu = measure(rng.random((3, 1)), [0.5, 0.25, 0.25])
        nu = measure(rng.random((3, 1)))
        with pytest.raises(ValidationError, match="uniform"):
            cm_map(mu, nu)

    def test_requires_equal_cardinality(self, rng):
        with pytest.raises(ValidationError, match="cardinality"):
            cm_map(measure(rng.random((3, 1))), measure(rng.random((4, 1))))


class TestQpMap:
    def test_1d_equals_rank_matching_any_reference(self, rng):
        a, b, r = rng.random(20), rng.random(20), rng.random(20)
        mu, nu, p0 = (measure(v.reshape(-1, 1)) for v in (a, b, r))
        assert np.array_equal(qp_map(mu, nu, p0).perm, rank_matching_oracle(a, b))

    def test_self_matching_is_identity(self, rng):
        mu = measure(rng.random((8, 2)))
        p0 = measure(rng.random((8, 2)))
        assert np.array_equal(qp_map(mu, mu, p0).perm, np.arange(8))

    def test_product_grids_collapse_to_cm(self):
        mu, nu, p0 = product_grid(11), product_grid(12), product_grid(13)
        assert np.array_equal(qp_map(mu, nu, p0).perm, cm_map(mu, nu).perm)

    def test_definitional_composition(self, rng):
        mu = measure(rng.random((10, 2)))
        nu = measure(rng.random((10, 2)))
        p0 = measure(rng.random((10, 2)))
        via = compose(cm_map(p0, nu), invert(cm_map(p0, mu)))
        assert np.array_equal(qp_map(mu, nu, p0).perm, via.perm)

    def test_rank_preservation_identity(self, rng):
        # the reference rank of x equals the reference rank of its image
        mu = measure(rng.random((12, 2)))
        nu = measure(rng.random((12, 2)))
        p0 = measure(rng.random((12, 2)))
        t = qp_map(mu, nu, p0)
        to_mu = cm_map(p0, mu).perm
        to_nu = cm_map(p0, nu).perm
        inv_mu = np.empty(12, dtype=int); inv_mu[to_mu] = np.arange(12)
        inv_nu = np.empty(12, dtype=int); inv_nu[to_nu] = np.arange(12)
        assert np.array_equal(inv_mu, inv_nu[t.perm])

    def test_reference_dependence_exists(self):
        # two factorizing references can induce different matchings on
        # non-product marginals
        mu, nu = sample_cloud(25, 71), sample_cloud(25, 72)
        p0 = uniform_grid(2, 5, 0.0, 1.0)
        q0 = sample_cloud(25, 73)
        a = qp_map(mu, nu, p0).perm
        b = qp_map(mu, nu, q0).perm
        assert not np.array_equal(a, b)

    def test_cardinality_mismatch_among_three(self, rng):
        mu = measure(rng.random((5, 2)))
        nu = measure(rng.random((5, 2)))
        p0 = measure(rng.random((6, 2)))
        with pytest.raises(ValidationError, match="cardinality"):
            qp_map(mu, nu, p0)


class TestKrMap:
    def test_1d_equals_cm(self, rng):
        mu = measure(rng.random((25, 1)))
        nu = measure(rng.random((25, 1)))
        assert np.array_equal(kr_map(mu, nu).perm, cm_map(mu, nu).perm)

    def test_distinct_coordinates_lexicographic(self, rng):
        mu = measure(rng.random((30, 3)))
        nu = measure(rng.random((30, 3)))
        assert np.array_equal(kr_map(mu, nu).perm, lex_matching_oracle(mu, nu))

    def test_equals_oteps_limit_n49(self):
        mu, nu = sample_cloud(49, 5001), sample_cloud(49, 6001)
        assert np.array_equal(kr_map(mu, nu).perm, kr_via_eps(mu, nu, 1e-12).perm)

    def test_grid_translation(self):
        mu = uniform_grid(2, 2, 0.0, 1.0)
        nu = measure(mu.points + np.array([1.0, 0.0]))
        t = kr_map(mu, nu)
        for i, j in t.pairs():
            assert np.allclose(nu.points[j] - mu.points[i], [1.0, 0.0])

    def test_grouped_blocks_match_by_rank(self):
        mu = measure([[0.0, 0.0], [0.0, 1.0], [1.0, 5.0], [1.0, 2.0]])
        nu = measure([[3.0, 7.0], [3.0, 4.0], [9.0, 0.5], [9.0, 0.1]])
        t = kr_map(mu, nu)
        # x-class {0,0} -> {3,3} ordered by y; x-class {1,1} -> {9,9}
        assert np.array_equal(t.perm, [1, 0, 2, 3])

    def test_block_mismatch_raises(self):
        mu = measure([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        nu = measure([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0]])
        with pytest.raises(ValidationError, match="conditional cardinality mismatch"):
            kr_map(mu, nu)

    def test_tie_tol_merges_close_values(self):
        mu = measure([[0.0, 0.0], [1e-12, 1.0], [1.0, 0.0]])
        nu = measure([[5.0, 0.0], [5.0, 1.0], [6.0, 0.0]])
        t = kr_map(mu, nu, tie_tol=1e-9)
        assert np.array_equal(t.perm, [0, 1, 2])


class TestKrViaEps:
    def test_eps_one_equals_cm(self, rng):
        mu = measure(rng.random((12, 2)))
        nu = measure(rng.random((12, 2)))
        assert np.array_equal(kr_via_eps(mu, nu, 1.0).perm, cm_map(mu, nu).perm)

    def test_eps_domain(self, rng):
        mu = measure(rng.random((3, 2)))
        for bad in (0.0, -1.0, 1.5):
            with pytest.raises(ValidationError):
                kr_via_eps(mu, mu, bad)

    def test_matches_brute_force_any_eps(self, rng):
        for eps in (1e-12, 1e-6, 0.3, 1.0):
            mu = measure(rng.random((8, 3)))
            nu = measure(rng.random((8, 3)))
            spec = CostSpec("hierarchical", eps)
            oracle = brute_force_assignment(cost_matrix(mu.points, nu.points, spec))
            assert np.array_equal(kr_via_eps(mu, nu, eps).perm, oracle.perm)


class TestAlgebra:
    def test_compose_identity(self, rng):
        mu = measure(rng.random((6, 2)))
        nu = measure(rng.random((6, 2)))
        t = cm_map(mu, nu)
        assert np.array_equal(compose(t, identity_matching(mu)).perm, t.perm)
        assert np.array_equal(compose(identity_matching(nu), t).perm, t.perm)

    def test_compose_with_inverse_is_identity(self, rng):
        mu = measure(rng.random((6, 2)))
        nu = measure(rng.random((6, 2)))
        t = cm_map(mu, nu)
        assert np.array_equal(compose(invert(t), t).perm, np.arange(6))

    def test_compose_endpoint_mismatch(self, rng):
        mu = measure(rng.random((4, 2)))
        nu = measure(rng.random((4, 2)))
        other = measure(rng.random((4, 2)))
        t1 = cm_map(nu, other)
        t2 = cm_map(mu, mu)
        with pytest.raises(ValidationError, match="endpoint mismatch"):
            compose(t1, t2)

    def test_invert_involution(self, rng):
        mu = measure(rng.random((7, 2)))
        nu = measure(rng.random((7, 2)))
        t = cm_map(mu, nu)
        back = invert(invert(t))
        assert np.array_equal(back.perm, t.perm)
        assert back.source.id == mu.id

    def test_invert_identity(self, rng):
        mu = measure(rng.random((5, 2)))
        assert np.array_equal(invert(identity_matching(mu)).perm, np.arange(5))

    def test_cm_inversion_property(self, rng):
        mu = measure(rng.random((9, 2)))
        nu = measure(rng.random((9, 2)))
        assert np.array_equal(invert(cm_map(mu, nu)).perm, cm_map(nu, mu).perm)


class TestMatchingCost:
    def test_identity_cost_zero(self, rng):
        mu = measure(rng.random((5, 2)))
        assert matching_cost(identity_matching(mu)) == 0.0

    def test_cm_is_minimal_over_all_permutations(self, rng):
        mu = measure(rng.random((6, 2)))
        nu = measure(rng.random((6, 2)))
        best = matching_cost(cm_map(mu, nu))
        for perm in itertools.permutations(range(6)):
            other = DiscreteMatching(mu, nu, np.array(perm), "composed")
            assert best <= matching_cost(other) + 1e-12

    def test_kr_and_qp_cost_at_least_cm(self):
        mu, nu = sample_cloud(30, 81), sample_cloud(30, 82)
        p0 = sample_cloud(30, 83)
        c_cm = matching_cost(cm_map(mu, nu))
        assert matching_cost(kr_map(mu, nu)) >= c_cm - 1e-12
        assert matching_cost(qp_map(mu, nu, p0)) >= c_cm - 1e-12


class TestCollapsesAndFamilies:
    def test_1d_collapse(self, rng):
        for _ in range(5):
            a, b, r = rng.random(40), rng.random(40), rng.random(40)
            mu, nu, p0 = (measure(v.reshape(-1, 1)) for v in (a, b, r))
            cm, qp, kr = cm_map(mu, nu), qp_map(mu, nu, p0), kr_map(mu, nu)
            assert np.array_equal(cm.perm, qp.perm)
            assert np.array_equal(cm.perm, kr.perm)

    def test_product_collapse_with_product_oracle(self):
        mu, nu, p0 = product_grid(21), product_grid(22), product_grid(23)
        cm, qp, kr = cm_map(mu, nu), qp_map(mu, nu, p0), kr_map(mu, nu)
        assert np.array_equal(cm.perm, qp.perm)
        assert np.array_equal(cm.perm, kr.perm)
        # per-axis sorted-rank product map
        oracle = lex_matching_oracle(mu, nu)
        assert np.array_equal(cm.perm, oracle)

    def test_qp_and_kr_families_path_independent(self):
        measures = {a: sample_cloud(20, 900 + a) for a in range(3)}
        p0 = sample_cloud(20, 999)
        qp_family = matching_family(measures, lambda m, n: qp_map(m, n, p0))
        kr_family = matching_family(measures, kr_map)
        assert check_family_algebra(qp_family).passed
        assert check_family_algebra(kr_family).passed

    def test_cm_family_identity_and_inversion_hold(self):
        measures = {a: sample_cloud(15, 700 + a) for a in range(3)}
        fam = matching_family(measures, cm_map)
        for a in range(3):
            assert np.array_equal(fam[(a, a)].perm, np.arange(15))
            for b in range(3):
                back = fam[(b, a)].perm[fam[(a, b)].perm]
                assert np.array_equal(back, np.arange(15))


class TestSerialization:
    def test_matching_json_shape(self, rng):
        mu = measure(rng.random((4, 2)), id="mu")
        nu = measure(rng.random((4, 2)), id="nu")
        t = cm_map(mu, nu)
        payload = json.loads(t.to_json())
        assert payload["source"] == "mu" and payload["target"] == "nu"
        assert payload["kind"] == "CM"
        assert sorted(j for _, j in payload["pairs"]) == [0, 1, 2, 3]
        assert payload["cost_sq_euclidean"] == pytest.approx(matching_cost(t))

    def test_matching_invariants(self, rng):
        mu = measure(rng.random((3, 1)))
        with pytest.raises(ValidationError, match="bijection"):
            DiscreteMatching(mu, mu, np.array([0, 0, 1]), "CM")
        with pytest.raises(ValidationError, match="kind"):
            DiscreteMatching(mu, mu, np.arange(3), "bogus")
