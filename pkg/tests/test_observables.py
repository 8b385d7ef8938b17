from __future__ import annotations

from fractions import Fraction
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from asep_hydro.core_model import ConfigError, LatticeConfig, RateSchedule, ScalingPlan
from asep_hydro.observables import (GridField, block_averages, boundary_block_residual,
                                    comparison_window, empirical_density, h1_residual,
                                    l1_distance, l2_distance, microscopic_currents,
                                    one_block_residual, smoothed_density, smoothed_numerators,
                                    triangular_weights)


def brute_blocks(eta, K):
    """Direct sums with 1-based site labels, straight from the definitions."""
    N = len(eta)
    e = {i + 1: int(v) for i, v in enumerate(eta)}
    w = {ip: Fraction(K - abs(ip), K * K) for ip in range(-K + 1, K)}
    bar = [Fraction(sum(e[i - ip] for ip in range(K)), K) for i in range(K, N + 1)]
    hat = [sum(w[ip] * e[i - ip] for ip in w) for i in range(K, N - K + 2)]
    J = {j: e[j] * (1 - e[j + 1]) for j in range(1, N)}
    cur = [sum(w[ip] * J[i - ip] for ip in w) for i in range(K, N - K + 1)]
    return bar, hat, cur


def trajectory(eta_rows, times=None, schedule=None):
    eta = np.asarray(eta_rows)
    times = np.linspace(0, 1, eta.shape[0]) if times is None else times
    return SimpleNamespace(times=np.asarray(times, float), eta=eta,
                           schedule=schedule or RateSchedule.constant(1, 1, 1, 1))


configs = st.integers(6, 30).flatmap(
    lambda n: arrays(np.int8, n, elements=st.integers(0, 1)))


class TestEmpirical:
    def test_examples(self):
        assert np.all(empirical_density(LatticeConfig.constant(7, 1)).values == 1)
        assert empirical_density(LatticeConfig.from_sequence([1, 0, 0, 0])).values.tolist() == [
            1, 0, 0, 0]

    @given(configs)
    def test_mass(self, eta):
        f = empirical_density(LatticeConfig(np.r_[eta, [0, 1]]))
        assert f.integral() == pytest.approx((eta.sum() + 1) / (eta.size + 2), abs=1e-15)


class TestBlocks:
    @given(configs, st.integers(1, 14))
    def test_against_brute_force(self, eta, K):
        if 2 * K >= eta.size:
            with pytest.raises(ConfigError):
                block_averages(eta, K)
            return
        ba = block_averages(eta, K)
        bar, hat, cur = brute_blocks(eta, K)
        assert ba.bar == pytest.approx([float(x) for x in bar], abs=1e-14)
        assert ba.hat == pytest.approx([float(x) for x in hat], abs=1e-14)
        assert ba.hat_current == pytest.approx([float(x) for x in cur], abs=1e-14)
        assert smoothed_numerators(eta, K).tolist() == [int(x * K * K) for x in hat]
        # hat is the block average of bar
        for m in range(len(hat)):
            assert hat[m] == sum(bar[m:m + K]) / K
        assert np.all(np.abs(np.diff(ba.hat)) <= 1.0 / K + 1e-15)
        for arr in (ba.bar, ba.hat, ba.hat_current):
            assert np.all((arr >= 0) & (arr <= 1))

    def test_constant_configs(self):
        for c in (0, 1):
            ba = block_averages(np.full(20, c), 3)
            assert np.all(ba.bar == c) and np.all(ba.hat == c) and np.all(ba.hat_current == 0)

    def test_alternating_current(self):
        ba = block_averages(np.tile([1, 0], 10), 2)
        assert np.all(ba.bar == 0.5)
        assert np.all(ba.hat_current == 0.5)

    def test_weights_sum_exactly(self):
        for K in range(1, 65):
            w = [Fraction(K - abs(i), K * K) for i in range(-K + 1, K)]
            assert sum(w) == 1
            assert triangular_weights(K) == pytest.approx([float(x) for x in w], abs=1e-16)

    def test_swap_identity_small(self):
        # flipping bond (j, j+1) changes K^2 hat_i by -sign(i - j - 1/2) * grad eta_j inside
        # the window |i - j - 1/2| < K and leaves it unchanged outside
        rng = np.random.default_rng(0)
        for N in range(5, 13):
            for K in range(1, (N + 1) // 2):
                if 2 * K >= N:
                    continue
                eta = rng.integers(0, 2, N)
                before = smoothed_numerators(eta, K)
                for j in range(1, N):
                    sw = eta.copy()
                    sw[j - 1], sw[j] = eta[j], eta[j - 1]
                    delta = smoothed_numerators(sw, K) - before
                    grad = int(eta[j]) - int(eta[j - 1])
                    for m, i in enumerate(range(K, N - K + 2)):
                        inside = abs(i - j - 0.5) < K
                        want = (-grad if i > j else grad) if inside else 0
                        assert delta[m] == want

    def test_domain(self):
        with pytest.raises(ConfigError):
            block_averages(np.zeros(10, dtype=int), 5)
        with pytest.raises(ConfigError):
            block_averages(np.zeros(10, dtype=int), 0)


class TestSmoothedField:
    def test_extension_and_window(self):
        rng = np.random.default_rng(3)
        eta = rng.integers(0, 2, 40)
        K = 6
        rho = smoothed_density(eta, K)
        hat = block_averages(eta, K).hat
        assert rho.shape == (40,)
        assert rho[K:40 - K].tolist() == hat[1:40 - 2 * K + 1].tolist()
        assert np.all(rho[:K] == rho[K]) and np.all(rho[40 - K:] == rho[40 - K - 1])
        assert comparison_window(40, K) == (6 / 40, 34 / 40)

    def test_stack(self):
        eta = np.random.default_rng(1).integers(0, 2, (5, 32))
        rho = smoothed_density(eta, 4)
        assert rho.shape == (5, 32)
        assert np.allclose(rho[2], smoothed_density(eta[2], 4))


class TestCurrents:
    def test_empty_lattice(self):
        plan = ScalingPlan.explicit(6, 3.0, 5.0, 1)
        j = microscopic_currents(np.zeros(6, dtype=int), RateSchedule.constant(2, 1, 1, 4),
                                 plan, 0.0)
        assert j[0] == 5.0 * 2 and j[-1] == -5.0 * 4
        assert np.all(j[1:-1] == 0)

    def test_pair_and_average(self):
        plan = ScalingPlan.explicit(4, 3.0, 1.0, 1, p=2.0)
        sched = RateSchedule.constant(1, 1, 1, 1)
        assert microscopic_currents(np.array([1, 0]), sched, plan, 0.0)[1] == 2.0 + 3.0
        j = microscopic_currents(np.array([1, 0, 1, 0]), sched, plan, 0.0)
        assert j[1:-1].mean() == pytest.approx((2 * 2.0 + 3.0) / 3)


class TestResiduals:
    def test_frozen_constant(self):
        for c in (0, 1):
            tr = trajectory(np.full((5, 20), c))
            assert one_block_residual(tr, 3) == 0.0
            assert h1_residual(tr, 3) == 0.0

    def test_alternating_exact(self):
        # hat = 1/2 and hat current = 1/2 everywhere, so (1/2 - 1/4)^2
        tr = trajectory(np.tile(np.tile([1, 0], 10), (4, 1)))
        assert one_block_residual(tr, 2) == pytest.approx(0.0625, abs=1e-15)

    def test_bernoulli_decreasing_in_K(self):
        rng = np.random.default_rng(7)
        snaps = (rng.random((200, 256)) < 0.4).astype(np.int8)
        vals = [one_block_residual(trajectory(snaps), K) for K in (2, 4, 8, 16, 32)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_fair_coins_large_block_wins(self):
        rng = np.random.default_rng(11)
        N = 128
        wins = 0
        for _ in range(100):
            s = trajectory(rng.integers(0, 2, (1, N)), times=[0.0])
            wins += one_block_residual(s, N // 4) < one_block_residual(s, 4)
        assert wins >= 95

    def test_boundary_residual(self):
        sched = RateSchedule.from_densities(0.3, 0.6)
        K, N = 4, 24
        exact = trajectory(np.tile(np.r_[np.zeros(N - 2 * K), np.ones(2 * K)], (3, 1)), schedule=sched)
        # left block average is 0 and right is 1 here
        left, right = boundary_block_residual(exact, K)
        assert left == pytest.approx(0.09) and right == pytest.approx(0.16)

    def test_boundary_residual_synthetic_offset(self):
        # alternating occupations give hat = 1/2 exactly at K = 2, i.e. rho_- + 0.1
        sched = RateSchedule.constant(0.4, 1.0, 0.6, 1.0)
        tr = trajectory(np.tile(np.tile([1, 0], 10), (3, 1)), schedule=sched)
        left, _ = boundary_block_residual(tr, 2)
        assert left == pytest.approx(0.01)


class TestDistances:
    def test_examples(self):
        one, zero = GridField(np.ones(10)), GridField(np.zeros(7))
        assert l1_distance(one, one) == 0.0
        assert l1_distance(one, zero) == pytest.approx(1.0)
        step = GridField(np.r_[np.ones(5), np.zeros(5)])
        assert l1_distance(step, GridField(np.full(3, 0.5))) == pytest.approx(0.5)
        assert l2_distance(step, GridField(np.full(3, 0.5))) == pytest.approx(0.5)

    @given(st.integers(1, 40), st.integers(1, 40))
    def test_resample_preserves_mass(self, M1, M2):
        f = GridField(np.random.default_rng(M1 * 41 + M2).random(M1))
        assert f.resample(M2).integral() == pytest.approx(f.integral(), abs=1e-12)

    @given(st.integers(1, 30), st.integers(0, 10 ** 6))
    def test_triangle(self, M, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (GridField(rng.random(M)) for _ in range(3))
        assert l1_distance(a, c) <= l1_distance(a, b) + l1_distance(b, c) + 1e-12
        assert l1_distance(a, b) == pytest.approx(l1_distance(b, a))

    def test_window(self):
        a, b = GridField(np.r_[1.0, 0.0]), GridField(np.zeros(2))
        assert l1_distance(a, b, 0.25, 1.0) == pytest.approx(0.25)
