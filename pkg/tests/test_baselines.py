import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import make_batch, random_rotation
from rankedlist.baselines import (
    ProxySet,
    lifted_struct_loss,
    npair_mc_loss,
    npair_pairs,
    proxy_nca_loss,
    triplet_loss,
)
from rankedlist.exceptions import ConfigurationError, ParameterError

SEEDS = st.integers(0, 2**32 - 1)


def isosceles(d_ap, d_an):
    """Anchor and positive symmetric about the negative, so both triplets are identical."""
    h = d_ap / 2
    return np.array([[-h, 0.0], [h, 0.0], [0.0, math.sqrt(d_an**2 - h**2)]]), np.array([0, 0, 1])


class TestTriplet:
    def test_inactive_hinge(self):
        x, y = isosceles(0.5, 0.9)
        assert triplet_loss(x, y, 0.4) == 0.0

    def test_squared_distances(self):
        x, y = isosceles(0.6, 0.7)
        assert triplet_loss(x, y, 0.4) == pytest.approx(0.36 + 0.4 - 0.49, abs=1e-14)

    def test_all_satisfied(self):
        x = np.array([[1, 0], [0.99, 0.14], [-1, 0], [-0.99, -0.14]])
        assert triplet_loss(x, [0, 0, 1, 1], 0.4) == 0.0

    def test_negative_margin(self):
        x, y = isosceles(0.5, 0.9)
        with pytest.raises(ParameterError):
            triplet_loss(x, y, -0.1)

    def test_no_triplet(self):
        with pytest.raises(ConfigurationError):
            triplet_loss(np.eye(3), [0, 1, 2], 0.4)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 4), st.integers(2, 3), st.integers(2, 5), SEEDS, st.floats(0.0, 2.0))
    def test_matches_brute_force(self, c, k, dim, seed, margin):
        x, y = make_batch(np.random.default_rng(seed), c, k, dim)
        expected = oracles.triplet(x.tolist(), y.tolist(), margin)
        got = triplet_loss(x, y, margin)
        assert got >= 0
        assert got == pytest.approx(expected, rel=1e-10, abs=1e-300)


class TestNPair:
    def test_symmetric_configuration(self):
        f = np.array([[1.0, 0.0], [0.0, 1.0]])
        fp = np.array([[0.6, 0.8], [0.6, 0.8]])
        assert npair_mc_loss(f, fp) == pytest.approx(math.log(2), abs=1e-15)

    def test_separated_limit(self):
        f = np.array([[100.0, 0.0], [-100.0, 0.0]])
        fp = np.array([[1.0, 0.0], [-1.0, 0.0]])
        assert 0 <= npair_mc_loss(f, fp) < 1e-80

    def test_duplicate_classes(self):
        with pytest.raises(ConfigurationError):
            npair_mc_loss(np.eye(3), np.eye(3), classes=[0, 1, 1])

    def test_pairs_from_batch(self):
        a, p = npair_pairs([2, 2, 5, 5, 2])
        assert a.tolist() == [0, 2] and p.tolist() == [1, 3]
        with pytest.raises(ConfigurationError):
            npair_pairs([0, 0, 1])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 6), st.integers(2, 5), SEEDS)
    def test_matches_brute_force(self, n, dim, seed):
        rng = np.random.default_rng(seed)
        f, _ = make_batch(rng, n, 1, dim)
        fp, _ = make_batch(rng, n, 1, dim)
        got = npair_mc_loss(f, fp)
        assert got >= 0
        assert got == pytest.approx(oracles.npair(f.tolist(), fp.tolist()), rel=1e-10)


class TestLifted:
    def test_coincident_pair(self):
        x = np.array([[0.0, 0.0], [0.0, 0.0], [1.2, 0.0]])
        # one positive pair whose hinge is log(1 + 1); averaged with the 1 / (2|P|) factor
        assert lifted_struct_loss(x, [0, 0, 1], 1.2) == pytest.approx(math.log(2) / 2, abs=1e-15)

    def test_far_negatives_clamped(self):
        x = np.array([[0.0, 0.0], [0.0, 0.0], [1000.0, 0.0]])
        assert lifted_struct_loss(x, [0, 0, 1], 1.2) == 0.0

    def test_no_positive_pair(self):
        with pytest.raises(ConfigurationError):
            lifted_struct_loss(np.eye(3), [0, 1, 2], 1.0)

    def test_random_six_points(self, rng):
        x, y = make_batch(rng, 2, 3, 3)
        assert lifted_struct_loss(x, y, 1.2) == pytest.approx(oracles.lifted(x.tolist(), y.tolist(), 1.2), rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 4), st.integers(2, 3), st.integers(2, 5), SEEDS, st.floats(0.0, 2.0))
    def test_matches_brute_force(self, c, k, dim, seed, alpha):
        x, y = make_batch(np.random.default_rng(seed), c, k, dim)
        got = lifted_struct_loss(x, y, alpha)
        assert got >= 0
        assert got == pytest.approx(oracles.lifted(x.tolist(), y.tolist(), alpha), rel=1e-10, abs=1e-300)


class TestProxyNCA:
    def test_equal_distances(self):
        assert proxy_nca_loss([[0.0, 0.0]], [0], np.array([[1.0, 0.0], [0.0, 1.0]])) == pytest.approx(0, abs=1e-15)

    def test_all_coincident(self):
        assert proxy_nca_loss([[0.3, 0.4]], [1], np.array([[0.3, 0.4], [0.3, 0.4]])) == 0.0

    def test_hand_example(self):
        proxies = np.array([[0.5, 0.0], [0.0, 1.0], [0.0, -1.5]])
        # -log(e^-0.5 / (e^-1 + e^-1.5))
        expected = 0.5 + math.log(math.exp(-1.0) + math.exp(-1.5))
        assert expected == pytest.approx(-0.025923015819893445, abs=1e-15)
        assert proxy_nca_loss([[0.0, 0.0]], [0], ProxySet(proxies)) == pytest.approx(expected, abs=1e-15)

    def test_can_be_negative(self, rng):
        proxies = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, -1.0]])
        assert proxy_nca_loss([[0.9, 0.1]], [0], proxies) < 0

    def test_missing_proxy(self):
        with pytest.raises(ConfigurationError):
            proxy_nca_loss(np.eye(2), [0, 2], np.eye(2))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 4), st.integers(1, 3), st.integers(2, 5), SEEDS)
    def test_matches_brute_force(self, c, k, dim, seed):
        rng = np.random.default_rng(seed)
        x, y = make_batch(rng, c, k, dim)
        proxies = ProxySet.random(c, dim, rng)
        expected = oracles.proxy_nca(x.tolist(), y.tolist(), proxies.proxies.tolist())
        assert proxy_nca_loss(x, y, proxies) == pytest.approx(expected, rel=1e-10, abs=1e-13)


def test_rotation_invariance(rng):
    x, y = make_batch(rng, 3, 3, 4)
    proxies = ProxySet.random(3, 4, rng).proxies
    q = random_rotation(4, rng)
    xr, pr = x @ q.T, proxies @ q.T
    a, p = npair_pairs(y)
    pairs = [
        (triplet_loss(x, y, 0.3), triplet_loss(xr, y, 0.3)),
        (npair_mc_loss(x[a], x[p]), npair_mc_loss(xr[a], xr[p])),
        (lifted_struct_loss(x, y, 1.0), lifted_struct_loss(xr, y, 1.0)),
        (proxy_nca_loss(x, y, proxies), proxy_nca_loss(xr, y, pr)),
    ]
    for before, after in pairs:
        assert abs(before - after) <= 1e-9
