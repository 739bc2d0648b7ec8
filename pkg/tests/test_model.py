import itertools
import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sbdnet import ClassProfile, DomainError, NonSymmetricWarning, PathLoss, SymmetricProfile, TorusDomain
from sbdnet.errors import ConfigError
from sbdnet.model import (cardinalities, class_masks, critical_rate, hypergeometric_alpha, lambda_bounds,
                          load_factor, mask_to_subset, overlap_matrix, overlap_sum, overlap_sums, profile_from_dict,
                          subset_to_mask, torus_distance)
from sbdnet.quadrature import pathloss_integral

from conftest import random_symmetric_profile
from oracles import mean_pathloss_oracle

# oracle value of the torus integral of (1 + |x|)^-4 over side 10, frozen
MEAN_LOSS_SIDE10 = 0.9812887603967599


# --- torus distance -----------------------------------------------------------

@pytest.mark.parametrize("p, q, expected", [
    ((0, 0), (0, 0), 0.0),
    ((0, 0), (9, 0), 1.0),
    ((1, 1), (6, 6), math.sqrt(50)),
])
def test_torus_distance_examples(p, q, expected):
    assert torus_distance(p, q, TorusDomain(10)) == pytest.approx(expected, abs=1e-12)


def test_torus_distance_matches_nearest_image_bruteforce():
    rng = np.random.default_rng(3)
    dom = TorusDomain(10)
    p, q = rng.random((2, 500, 2)) * 10
    shifts = np.array(list(itertools.product((-10, 0, 10), repeat=2)))
    brute = np.min(np.linalg.norm(p[:, None, :] - q[:, None, :] - shifts[None], axis=-1), axis=1)
    np.testing.assert_allclose(torus_distance(p, q, dom), brute, rtol=0, atol=1e-12)


def test_torus_distance_rejects_out_of_range():
    with pytest.raises(DomainError):
        torus_distance((10.0, 0.0), (0, 0), TorusDomain(10))
    with pytest.raises(DomainError):
        torus_distance((-0.1, 0.0), (0, 0), TorusDomain(10))


coords = st.tuples(st.floats(0, 9.999, allow_nan=False), st.floats(0, 9.999, allow_nan=False))


@given(coords, coords, coords)
def test_torus_distance_is_a_metric(a, b, c):
    dom = TorusDomain(10)
    ab, ba = torus_distance(a, b, dom), torus_distance(b, a, dom)
    assert ab == ba
    assert ab <= 10 * math.sqrt(2) / 2 + 1e-12
    assert torus_distance(a, c, dom) <= ab + torus_distance(b, c, dom) + 1e-12


def test_domain_validation():
    with pytest.raises(DomainError):
        TorusDomain(0)
    with pytest.raises(DomainError):
        TorusDomain(10, r=5)
    assert TorusDomain(10, r=1).area == 100


# --- path loss ------------------------------------------------------------------

@given(st.floats(0, 50), st.floats(0, 50), st.floats(0.5, 8))
def test_power_law_monotone(d1, d2, beta):
    pl = PathLoss.power_law(beta)
    lo, hi = min(d1, d2), max(d1, d2)
    assert pl(lo) >= pl(hi)
    assert pl(0.0) == 1.0


def test_tabulated_pathloss():
    pl = PathLoss.tabulated([0, 1, 2], [1, 0.5, 0.1])
    assert pl(0.5) == pytest.approx(0.75)
    assert pl(10) == pytest.approx(0.1)
    assert PathLoss.constant()(123.0) == 1.0
    assert PathLoss.from_dict(pl.to_dict()) == pl
    for bad in ([[0, 1], [0.9, 0.5]], [[0, 1], [1, 1.2]], [[1, 2], [1, 0.5]], [[0, 1], [1, -0.1]]):
        with pytest.raises(DomainError):
            PathLoss.tabulated(*bad)
    with pytest.raises(DomainError):
        PathLoss.power_law(0)


# --- class profiles -------------------------------------------------------------

def test_masks_and_subsets():
    assert class_masks(2).tolist() == [1, 2, 3]
    assert cardinalities(3).tolist() == [1, 1, 2, 1, 2, 2, 3]
    assert subset_to_mask([1, 3], 3) == 5
    assert mask_to_subset(5) == [1, 3]
    assert overlap_matrix(2).tolist() == [[1, 0, 1], [0, 1, 1], [1, 1, 2]]
    with pytest.raises(DomainError):
        subset_to_mask([4], 3)
    with pytest.raises(DomainError):
        subset_to_mask([], 3)


def test_profile_validation(profile):
    assert profile.symmetric
    with pytest.raises(DomainError):
        ClassProfile(2, [0.5, 0.4, 0.2], [1, 1, 1])
    with pytest.raises(DomainError):
        ClassProfile(2, [0.4, 0.4, 0.2], [1, 0, 1])
    with pytest.raises(DomainError):
        ClassProfile(17, [1.0], [1.0])
    assert not ClassProfile(2, [0.5, 0.3, 0.2], [1, 1, 2]).symmetric
    assert not ClassProfile(2, [0.4, 0.4, 0.2], [1, 2, 2]).symmetric


def test_zero_probability_classes_allowed():
    prof = ClassProfile.from_classes(3, {(1, 2, 3): (1.0, 2.0)})
    assert prof.symmetric
    assert load_factor(prof) == 6.0


@pytest.mark.parametrize("K", [1, 2, 3, 5])
def test_symmetric_expand_reduce_identity(K):
    rng = np.random.default_rng(K)
    prof = random_symmetric_profile(rng, K)
    sym = prof.reduce()
    assert sym.expand() == prof
    np.testing.assert_allclose(SymmetricProfile.from_profile(sym.expand()).p, sym.p, rtol=1e-14)
    assert sym.p.sum() == pytest.approx(1.0, abs=1e-12)


def test_profile_dict_forms(profile):
    assert profile_from_dict(profile.to_dict()) == profile
    sym = profile_from_dict({"K": 2, "symmetric": {"p": [0.8, 0.2], "L": [1, 2]}})
    assert sym == profile
    with pytest.raises(ConfigError):
        profile_from_dict({"K": 2})
    with pytest.raises(ConfigError):
        profile_from_dict({"K": 2, "classes": [{"subset": [1], "p": 0.5}, {"subset": [1], "p": 0.5}]})


# --- load factor and critical rates ----------------------------------------------

def test_load_factor_examples(profile):
    assert load_factor(ClassProfile(1, [1.0], [2.5])) == 2.5
    assert load_factor(profile) == pytest.approx(1.6, abs=1e-15)
    sym3 = SymmetricProfile(3, [1 / 3, 1 / 3, 1 / 3], [1, 1, 1]).expand()
    assert load_factor(sym3) == pytest.approx(2.0, abs=1e-14)


def test_mean_pathloss_matches_oracle(dom, pl):
    oracle = mean_pathloss_oracle(10.0)
    assert oracle == pytest.approx(MEAN_LOSS_SIDE10, rel=1e-13)
    assert pathloss_integral(dom, pl).value == pytest.approx(oracle, rel=1e-9)
    # below the plane value pi/3 but above it minus the whole tail beyond radius 5
    tail = 2 * math.pi * (1 / (2 * 36) - 1 / (3 * 216))
    assert math.pi / 3 - tail < oracle < math.pi / 3
    assert oracle > math.pi / 3 - 0.078


def test_critical_rate_two_band(profile, dom, pl, lam_c):
    assert lam_c == pytest.approx(2 / (1.6 * MEAN_LOSS_SIDE10), rel=1e-9)
    doubled = ClassProfile(2, profile.p, 2 * profile.L)
    assert critical_rate(doubled, dom, pl) == pytest.approx(lam_c / 2, rel=1e-14)


def test_critical_rate_single_class(dom, pl):
    prof = ClassProfile(1, [1.0], [1.0])
    lc = critical_rate(prof, dom, pl)
    lo, hi = lambda_bounds(prof, dom, pl)
    assert lc == pytest.approx(1 / MEAN_LOSS_SIDE10, rel=1e-9)
    assert lo == pytest.approx(lc, rel=1e-14) and hi == pytest.approx(lc, rel=1e-14)


def test_critical_rate_warns_for_non_symmetric(dom, pl):
    with pytest.warns(NonSymmetricWarning):
        critical_rate(ClassProfile(2, [0.5, 0.3, 0.2], [1, 1, 2]), dom, pl)


def test_lambda_bounds_two_band(profile, dom, pl, lam_c):
    lo, hi = lambda_bounds(profile, dom, pl)
    assert lo == pytest.approx(1 / (2 * 2 * MEAN_LOSS_SIDE10), rel=1e-9)
    assert hi == pytest.approx(2 / MEAN_LOSS_SIDE10, rel=1e-9)
    assert lo <= lam_c <= hi


def test_critical_rate_within_bounds_random_profiles(dom, pl):
    rng = np.random.default_rng(11)
    for _ in range(1000):
        K = int(rng.integers(1, 6))
        prof = random_symmetric_profile(rng, K, p_zero=0.3)
        lo, hi = lambda_bounds(prof, dom, pl)
        lc = critical_rate(prof, dom, pl)
        assert lo <= lc * (1 + 1e-12) and lc <= hi * (1 + 1e-12)
        assert hi / lo == pytest.approx(K**2 * prof.L.max() / prof.L.min(), rel=1e-12)


def test_critical_rate_with_dipole_distance(profile, pl):
    dom = TorusDomain(10, r=0.5)
    assert critical_rate(profile, dom, pl) == pytest.approx(2 * pl(0.5) / (1.6 * MEAN_LOSS_SIDE10), rel=1e-9)


# --- combinatorial identities ------------------------------------------------------

def test_overlap_sum_examples():
    a, b = Fraction(3, 7), Fraction(5, 11)
    y = [a, a, b]
    assert overlap_sum(y, 1) == a + b == Fraction(1, 2) * (2 * a + 2 * b)
    for K in (2, 3):
        for C in range(1, 2**K):
            ind = [int(U == C) for U in range(1, 2**K)]
            assert overlap_sum(ind, C) == bin(C).count("1")
    with pytest.raises(DomainError):
        overlap_sum(y, 4)


def _symmetric_vector(rng, K):
    vals = [Fraction(int(v), 97) for v in rng.integers(0, 1000, K)]
    return [vals[bin(U).count("1") - 1] for U in range(1, 2**K)]


def test_overlap_sum_bruteforce_K5():
    rng = np.random.default_rng(5)
    K = 5
    y = _symmetric_vector(rng, K)
    total = sum(bin(U).count("1") * y[U - 1] for U in range(1, 2**K))
    for C in range(1, 2**K):
        brute = sum(len(set(mask_to_subset(C)) & set(mask_to_subset(U))) * y[U - 1] for U in range(1, 2**K))
        assert overlap_sum(y, C) == brute == Fraction(bin(C).count("1"), K) * total



def test_overlap_sums_agree_with_single_class():
    rng = np.random.default_rng(11)
    for K in (1, 3, 6):
        y = _symmetric_vector(rng, K)
        assert overlap_sums(y) == [overlap_sum(y, C) for C in range(1, 2**K)]
        assert all(isinstance(v, Fraction) for v in overlap_sums(y))
    yf = rng.random(7)
    np.testing.assert_allclose(overlap_sums(yf), [overlap_sum(yf, C) for C in range(1, 8)], rtol=1e-14)

@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.data())
def test_symmetric_overlap_identity(K, data):
    vals = data.draw(st.lists(st.fractions(min_value=0, max_value=10, max_denominator=50), min_size=K, max_size=K))
    y = [vals[bin(U).count("1") - 1] for U in range(1, 2**K)]
    total = sum(bin(U).count("1") * y[U - 1] for U in range(1, 2**K))
    C = data.draw(st.integers(1, 2**K - 1))
    assert overlap_sum(y, C) == Fraction(bin(C).count("1"), K) * total


def test_hypergeometric_alpha_examples():
    assert hypergeometric_alpha(2, 1, 1, 1) == Fraction(1, 2)
    assert sum(m * hypergeometric_alpha(4, 2, 2, m) for m in (1, 2)) == 1
    assert hypergeometric_alpha(4, 2, 2, 1) == Fraction(4, 6)
    with pytest.raises(DomainError):
        hypergeometric_alpha(4, 2, 1, 2)
    with pytest.raises(DomainError):
        hypergeometric_alpha(3, 4, 1, 1)


def test_hypergeometric_alpha_counts_subsets():
    # direct enumeration: share of l-subsets meeting a fixed j-subset in m bands
    for K in range(1, 7):
        for j, l in itertools.product(range(1, K + 1), repeat=2):
            fixed = set(range(j))
            subsets = list(itertools.combinations(range(K), l))
            for m in range(1, min(j, l) + 1):
                share = Fraction(sum(len(fixed & set(s)) == m for s in subsets), len(subsets))
                assert hypergeometric_alpha(K, j, l, m) == share


def test_hypergeometric_mean_identity():
    for K in range(1, 13):
        for j, l in itertools.product(range(1, K + 1), repeat=2):
            mean = sum(m * hypergeometric_alpha(K, j, l, m) for m in range(1, min(j, l) + 1))
            assert mean == Fraction(l * j, K)
