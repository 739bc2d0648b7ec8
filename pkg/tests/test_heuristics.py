import numpy as np
import pytest

from sbdnet import ClassProfile, critical_rate, DomainError, NoConvergence, PathLoss, SymmetricProfile, TorusDomain
from sbdnet.heuristics import (SolverSettings, aggregate_by_cardinality, cavity_fixed_point, expand_cardinality,
                               poisson_critical_rate, poisson_fixed_point, poisson_fixed_point_symmetric)
from sbdnet.model import cardinalities, overlap_matrix
from sbdnet.quadrature import get_integrator, pathloss_integral

from conftest import DOM, PL, PROFILE, random_symmetric_profile


def _low_load_limit(profile, lam, N0, dom=DOM, pl=PL):
    return lam * profile.p * profile.L * N0 / (cardinalities(profile.K) * pl(dom.r))


def test_zero_rate_gives_zero():
    sol = poisson_fixed_point(PROFILE, DOM, PL, 0.0)
    assert sol.converged and np.all(sol.mu == 0.0)
    cav = cavity_fixed_point(PROFILE, DOM, PL, 0.0)
    assert np.all(cav.mu_s == 0.0) and np.all(cav.I == 0.0)


@pytest.mark.parametrize("N0", [0.5, 1.0, 3.0])
def test_low_load_limit(lam_c, N0):
    lam = 1e-3 * lam_c
    ref = _low_load_limit(PROFILE, lam, N0)
    sol = poisson_fixed_point(PROFILE, DOM, PL, lam, N0)
    np.testing.assert_allclose(sol.mu, ref, rtol=1e-2)
    cav = cavity_fixed_point(PROFILE, DOM, PL, lam, N0)
    np.testing.assert_allclose(cav.mu_s, ref, rtol=1e-2)
    np.testing.assert_allclose(cav.mu_s, sol.mu, rtol=1e-2)


def test_defect_and_class_symmetry(lam_c):
    sol = poisson_fixed_point(PROFILE, DOM, PL, 0.5 * lam_c)
    assert sol.converged and sol.residual < 1e-8
    assert sol.mu[0] == pytest.approx(sol.mu[1], rel=1e-12)


def test_picard_iterates_increase(lam_c):
    hist = []
    sol = poisson_fixed_point(PROFILE, DOM, PL, 0.8 * lam_c, history=hist)
    steps = np.diff(np.array(hist), axis=0)
    assert sol.converged and np.all(steps >= -1e-15 * np.max(sol.mu))


def test_smallest_solution_below_any_other_start(lam_c):
    sol = poisson_fixed_point(PROFILE, DOM, PL, 0.5 * lam_c, detect_second=True)
    if sol.second_fixed_point is not None:
        assert np.all(sol.second_fixed_point >= sol.mu)
    again = poisson_fixed_point(PROFILE, DOM, PL, 0.5 * lam_c, start=0.5 * sol.mu)
    np.testing.assert_allclose(again.mu, sol.mu, rtol=1e-9)


@pytest.mark.parametrize("K", [1, 2, 3])
def test_symmetric_solver_matches_full(K, lam_c):
    rng = np.random.default_rng(K)
    prof = random_symmetric_profile(rng, K)
    lam = 0.5 * critical_rate(prof, DOM, PL)
    full = poisson_fixed_point(prof, DOM, PL, lam)
    red = poisson_fixed_point_symmetric(prof, DOM, PL, lam)
    assert full.converged and red.converged
    np.testing.assert_allclose(red.mu, aggregate_by_cardinality(full.mu, K), rtol=1e-8)
    np.testing.assert_allclose(expand_cardinality(red.mu, K), full.mu, rtol=1e-8)


def test_symmetric_solver_accepts_reduced_profile(lam_c):
    sym = PROFILE.reduce()
    a = poisson_fixed_point_symmetric(sym, DOM, PL, 0.5 * lam_c)
    b = poisson_fixed_point_symmetric(PROFILE, DOM, PL, 0.5 * lam_c)
    np.testing.assert_array_equal(a.mu, b.mu)
    with pytest.raises(DomainError):
        poisson_fixed_point_symmetric(ClassProfile(2, [0.5, 0.3, 0.2], [1, 1, 2]), DOM, PL, 1.0)


def test_reduced_system_is_smaller():
    K = 6
    prof = SymmetricProfile(K, np.full(K, 1 / K), np.ones(K)).expand()
    lam = 0.2
    full = poisson_fixed_point(prof, DOM, PL, lam)
    red = poisson_fixed_point_symmetric(prof, DOM, PL, lam)
    assert full.n_equations == 63 and red.n_equations == 6
    # one evaluation per equation for every iterate plus the final defect
    assert full.kernel_evaluations == 63 * (full.iterations + 1)
    assert red.kernel_evaluations == 6 * (red.iterations + 1)
    np.testing.assert_allclose(red.mu, aggregate_by_cardinality(full.mu, K), rtol=1e-8)


def test_infeasible_rate_reports_divergence(lam_c):
    sol = poisson_fixed_point(PROFILE, DOM, PL, 1.5 * lam_c)
    assert not sol.converged


def test_solution_json(lam_c):
    import json

    sol = poisson_fixed_point(PROFILE, DOM, PL, 0.5 * lam_c)
    data = json.loads(sol.to_json())
    assert set(data) >= {"lambda", "mu", "residual", "iterations", "converged"}
    cav = json.loads(cavity_fixed_point(PROFILE, DOM, PL, 0.5 * lam_c).to_json())
    assert set(cav) >= {"lambda", "mu", "I", "residual", "iterations", "converged"}


# --- critical rate estimate -----------------------------------------------------------

def test_poisson_critical_rate_two_band(lam_c):
    lo, hi = poisson_critical_rate(PROFILE, DOM, PL, return_bracket=True)
    assert hi - lo < 1e-3 * lam_c
    assert abs(0.5 * (lo + hi) / lam_c - 1) < 0.1
    assert poisson_fixed_point(PROFILE, DOM, PL, lo).converged
    assert not poisson_fixed_point(PROFILE, DOM, PL, hi).converged


def test_poisson_critical_rate_full_equals_reduced():
    a = poisson_critical_rate(PROFILE, DOM, PL, symmetric=True)
    b = poisson_critical_rate(PROFILE, DOM, PL, symmetric=False)
    assert a == pytest.approx(b, rel=1e-3)


def test_poisson_critical_rate_single_class():
    prof = ClassProfile(1, [1.0], [1.5])
    ref = PL(0) / (1.5 * pathloss_integral(DOM, PL).value)
    assert abs(poisson_critical_rate(prof, DOM, PL) / ref - 1) < 0.1


def test_poisson_critical_rate_decreases_with_file_size():
    rates = [poisson_critical_rate(ClassProfile(2, PROFILE.p, [1.0, 1.0, L3]), DOM, PL) for L3 in (1.0, 2.0, 4.0)]
    assert rates[0] >= rates[1] >= rates[2]


@pytest.mark.xfail(strict=True, reason="densities at lam = 0.5 lam_c scale with N0 on this torus")
def test_densities_insensitive_to_noise(lam_c):
    mus = [poisson_fixed_point(PROFILE, DOM, PL, 0.5 * lam_c, N0).mu for N0 in (0.1, 1.0, 10.0)]
    for mu in mus[1:]:
        np.testing.assert_allclose(mu, mus[0], rtol=1e-2)


# --- cavity ---------------------------------------------------------------------------------

def _pair_density(C, U, x_gain, mu, I, lam, N0, profile):
    card = cardinalities(profile.K)
    ov = overlap_matrix(profile.K)[C - 1, U - 1]
    d = (card[C - 1] / profile.L[C - 1]) / (N0 + ov * x_gain + I[C - 1]) \
        + (card[U - 1] / profile.L[U - 1]) / (N0 + ov * x_gain + I[U - 1])
    return lam * (mu[U - 1] * profile.p[C - 1] + mu[C - 1] * profile.p[U - 1]) / d


def test_cavity_fixed_point_equations(lam_c):
    lam, N0 = 0.5 * lam_c, 1.0
    cav = cavity_fixed_point(PROFILE, DOM, PL, lam, N0)
    assert cav.converged and np.all(cav.mu_s >= 0) and np.all(cav.I >= 0)
    np.testing.assert_allclose(cav.mu_s, lam * PROFILE.p * PROFILE.L * (N0 + cav.I) / cardinalities(2), rtol=1e-12)
    integ = get_integrator(DOM, PL)
    ov = overlap_matrix(2)
    for C in (1, 2, 3):
        total = 0.0
        for U in (1, 2, 3):
            rho = lambda r, C=C, U=U: _pair_density(C, U, PL(r), cav.mu_s, cav.I, lam, N0, PROFILE)
            rho_t = lambda r, C=C, U=U: _pair_density(U, C, PL(r), cav.mu_s, cav.I, lam, N0, PROFILE)
            probe = np.linspace(0, 7, 50)
            np.testing.assert_allclose(rho(probe), rho_t(probe), rtol=1e-14)
            total += ov[C - 1, U - 1] / cav.mu_s[C - 1] * integ.integrate(lambda r: PL(r) * rho(r))
        assert total == pytest.approx(cav.I[C - 1], rel=1e-6)


def test_cavity_above_poisson(lam_c):
    lam = 0.5 * lam_c
    cav = cavity_fixed_point(PROFILE, DOM, PL, lam)
    sol = poisson_fixed_point(PROFILE, DOM, PL, lam)
    assert np.all(cav.mu_s >= sol.mu)


def test_cavity_diverges_far_above_threshold(lam_c):
    with pytest.raises(NoConvergence):
        cavity_fixed_point(PROFILE, DOM, PL, 5 * lam_c, settings=SolverSettings(max_iter=2000))


def test_solver_settings_validation():
    with pytest.raises(DomainError):
        SolverSettings(damping=0)
    with pytest.raises(DomainError):
        SolverSettings(tol=-1)
    with pytest.raises(DomainError):
        poisson_fixed_point(PROFILE, DOM, PL, -1.0)
    with pytest.raises(DomainError):
        poisson_fixed_point(PROFILE, DOM, PL, 1.0, N0=0.0)
