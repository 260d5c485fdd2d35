"""Exact stationary laws for tiny systems: chain construction, linear solve,
and the closed-form M/M/1 control.
"""
import math

import numpy as np
import pytest

from supermarket.estimators import tv_distance
from supermarket.model import ModelParams
from supermarket.oracle import (
    _rank_pattern,
    _routing_counts,
    build_chain,
    default_cap,
    exact_joint,
    exact_marginal,
    exact_u_power,
    generator_identity_residual,
    stationary,
)


class TestRoutingCounts:
    def test_two_equal_queues(self):
        # lists 00 and 01 start at queue 0; 10 and 11 start at queue 1
        assert _routing_counts((0, 0), 2) == (2, 2)

    def test_shorter_queue_wins(self):
        # only list 00 routes to the longer queue 0
        assert _routing_counts(_rank_pattern((1, 0)), 2) == (1, 3)

    def test_three_queues_strictly_ordered(self):
        # x = (2,1,0): queue 2 wins any list containing it (5 of 9),
        # queue 1 wins lists from {0,1} containing 1 (3), queue 0 only 00
        assert _routing_counts(_rank_pattern((2, 1, 0)), 2) == (1, 3, 5)

    def test_counts_sum_to_total_lists(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = int(rng.integers(1, 5))
            d = int(rng.integers(1, 4))
            x = tuple(int(v) for v in rng.integers(0, 4, n))
            assert sum(_routing_counts(_rank_pattern(x), d)) == n**d


class TestBuildChain:
    def test_row_sums_zero(self):
        chain = build_chain(ModelParams(2, 0.5, 2), cap=6)
        rows = np.asarray(chain.generator.sum(axis=1)).ravel()
        np.testing.assert_allclose(rows, 0.0, atol=1e-12)

    def test_birth_death_rates_n1(self):
        lam = 0.4
        chain = build_chain(ModelParams(1, lam, 3), cap=5)
        g = chain.generator.toarray()
        for k in range(5):
            assert g[k, k + 1] == pytest.approx(lam)
            assert g[k + 1, k] == pytest.approx(1.0)

    def test_empty_state_split_is_half_half(self):
        # from (0,0) with d = 2 the arrival reaches each queue via 2 of the
        # 4 equiprobable lists, so each outgoing arrival rate is lam*n/2
        lam = 0.5
        chain = build_chain(ModelParams(2, lam, 2), cap=4)
        g = chain.generator
        i00 = chain.index_of((0, 0))
        i10 = chain.index_of((1, 0))
        i01 = chain.index_of((0, 1))
        assert g[i00, i10] == pytest.approx(lam * 2 / 2)
        assert g[i00, i01] == pytest.approx(lam * 2 / 2)

    def test_n_above_limit_rejected(self):
        with pytest.raises(ValueError):
            build_chain(ModelParams(5, 0.5, 2), cap=3)

    def test_default_cap_controls_tail_mass(self):
        p = ModelParams(2, 0.5, 2)
        cap = default_cap(p)
        assert p.n * p.lam**cap < 1e-10


class TestStationary:
    def test_mm1_geometric(self):
        lam = 0.5
        chain = build_chain(ModelParams(1, lam, 1), cap=60)
        pi = stationary(chain)
        expected = (1 - lam) * lam ** np.arange(61)
        np.testing.assert_allclose(pi, expected / expected.sum(), atol=1e-12)

    def test_solve_residual(self):
        chain = build_chain(ModelParams(2, 0.7, 2), cap=14)
        pi = stationary(chain)
        assert float(np.max(np.abs(pi @ chain.generator))) <= 1e-12
        assert pi.sum() == pytest.approx(1.0, abs=1e-12)

    def test_marginal_exchangeable(self):
        chain = build_chain(ModelParams(2, 0.5, 2), cap=12)
        pi = stationary(chain)
        m0 = exact_marginal(chain, pi, queue_index=0)
        m1 = exact_marginal(chain, pi, queue_index=1)
        keys = set(m0.pmf) | set(m1.pmf)
        assert all(abs(m0.pmf.get(k, 0.0) - m1.pmf.get(k, 0.0)) < 1e-12 for k in keys)

    def test_u1_equals_lam(self):
        chain = build_chain(ModelParams(2, 0.5, 2), cap=24)
        pi = stationary(chain)
        assert exact_u_power(chain, pi, 1) == pytest.approx(0.5, abs=1e-10)

    def test_u2_exceeds_limit_value(self):
        # finite-n stationary u(2) sits strictly above the n = infinity value
        chain = build_chain(ModelParams(2, 0.5, 2), cap=16)
        pi = stationary(chain)
        assert exact_u_power(chain, pi, 2) > 0.5**3

    def test_generator_identity_residuals(self):
        chain = build_chain(ModelParams(2, 0.7, 2), cap=14)
        pi = stationary(chain)
        for k in range(1, chain.cap - 1):
            assert abs(generator_identity_residual(chain, pi, k)) <= 1e-10

    def test_truncation_insensitive(self):
        p = ModelParams(2, 0.7, 2)
        a = build_chain(p)  # default cap keeps n lam^cap below 1e-10
        b = build_chain(p, cap=a.cap + 10)
        tv = tv_distance(exact_marginal(a, stationary(a)), exact_marginal(b, stationary(b)))
        assert tv < 1e-10


class TestJointLaw:
    def test_joint_marginalises_correctly(self):
        chain = build_chain(ModelParams(2, 0.5, 2), cap=8)
        pi = stationary(chain)
        joint = exact_joint(chain, pi, 2)
        marg = exact_marginal(chain, pi)
        for k in range(9):
            lumped = math.fsum(p for (a, _), p in joint.pmf.items() if a == k)
            assert lumped == pytest.approx(marg.prob(k), abs=1e-12)

    def test_r_validation(self):
        chain = build_chain(ModelParams(2, 0.5, 2), cap=4)
        pi = stationary(chain)
        with pytest.raises(ValueError):
            exact_joint(chain, pi, 3)
