import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import BATTERY, battery_ids
from rvinefusion import copulas as cop
from rvinefusion.copulas import (BivariateCopula, CopulaDomainError, CopulaFamily, CopulaFitError,
                                 fit_mle, select_best, tau_inversion)

GRID = np.linspace(0.05, 0.95, 19)
U, V = (a.ravel() for a in np.meshgrid(GRID, GRID))


# -- family codes -----------------------------------------------------------

def test_codes_round_trip():
    for code in ("indep", "gauss", "t", "clayton", "gumbel@90", "joe@270", "clayton@180"):
        assert CopulaFamily.parse(code).code == code


@pytest.mark.parametrize("code", ["gauss@90", "frank@180", "t@270", "clayton@45", "normal"])
def test_bad_codes_rejected(code):
    with pytest.raises(CopulaDomainError):
        CopulaFamily.parse(code)


@pytest.mark.parametrize("kind,params", [("clayton", (-1.0,)), ("gumbel", (0.5,)), ("frank", (0.0,)),
                                         ("gauss", (1.0,)), ("t", (0.5, 2.0)), ("joe", (0.9,))])
def test_parameter_domains(kind, params):
    with pytest.raises(CopulaDomainError):
        BivariateCopula(kind, params)


# -- worked values ------------------------------------------------------------

def test_cdf_examples():
    assert cop.cdf(cop.INDEPENDENCE, 0.3, 0.7) == pytest.approx(0.21, abs=1e-15)
    clay = BivariateCopula("clayton", (2.0,))
    assert clay.cdf(0.5, 0.5) == pytest.approx(7 ** -0.5, abs=1e-12)
    gum1 = BivariateCopula("gumbel", (1.0,))
    np.testing.assert_allclose(gum1.cdf(U, V), U * V, atol=1e-12)


def test_pdf_examples():
    np.testing.assert_allclose(cop.INDEPENDENCE.pdf(U, V), 1.0)
    np.testing.assert_allclose(BivariateCopula("gauss", (0.0,)).pdf(U, V), 1.0, atol=1e-12)


def test_h_examples():
    clay = BivariateCopula("clayton", (2.0,))
    assert cop.h_func(clay, 0.5, 0.5) == pytest.approx(8 * 7 ** -1.5, abs=1e-12)
    eps = 1e-6
    fd = (clay.cdf(0.5, 0.5 + eps) - clay.cdf(0.5, 0.5)) / eps
    assert cop.h_func(clay, 0.5, 0.5) == pytest.approx(fd, abs=1e-5)
    np.testing.assert_allclose(cop.INDEPENDENCE.hfunc(U, V), U)
    np.testing.assert_allclose(BivariateCopula("gauss", (0.0,)).hfunc(U, V), U, atol=1e-12)
    assert cop.h_inverse(clay, 0.431959, 0.5) == pytest.approx(0.5, abs=1e-6)
    np.testing.assert_allclose(cop.INDEPENDENCE.hinv(U, V), U)


def test_tau_examples():
    assert cop.tau_of(cop.INDEPENDENCE) == 0.0
    assert BivariateCopula("clayton", (2.0,)).tau() == pytest.approx(0.5)
    assert BivariateCopula("clayton", (2.0,), 180).tau() == pytest.approx(0.5)
    assert BivariateCopula("clayton", (2.0,), 90).tau() == pytest.approx(-0.5)


@pytest.mark.parametrize("c", [BivariateCopula("clayton", (2.0,)), BivariateCopula("clayton", (2.0,), 90),
                               BivariateCopula("clayton", (2.0,), 180), BivariateCopula("gumbel", (2.5,)),
                               BivariateCopula("frank", (-4.0,)), BivariateCopula("joe", (3.0,), 270),
                               BivariateCopula("gauss", (0.6,)), BivariateCopula("t", (-0.4, 5.0))],
                         ids=lambda c: c.code)
def test_tau_matches_quadrature(c):
    assert c.tau() == pytest.approx(oracles.tau_by_quadrature(c.cdf), abs=2e-3)


# -- closed forms against independent transcriptions --------------------------

@pytest.mark.parametrize("c", [c for c in BATTERY if c.kind in ("clayton", "gumbel", "frank", "joe")],
                         ids=lambda c: f"{c.code}-{c.params[0]:g}")
def test_archimedean_cdf_matches_generator_form(c):
    ref = oracles.rotated(lambda a, b: oracles.archimedean_cdf(c.kind, c.params[0], a, b),
                          c.rotation, U, V)
    np.testing.assert_allclose(c.cdf(U, V), ref, atol=1e-12)


@pytest.mark.parametrize("c", [BivariateCopula("gauss", (-0.7,)), BivariateCopula("gauss", (0.9,)),
                               BivariateCopula("t", (0.5, 4.0))], ids=lambda c: c.code)
def test_elliptical_cdf_matches_scipy(c):
    g = np.array([0.05, 0.3, 0.5, 0.8, 0.97])
    a, b = (x.ravel() for x in np.meshgrid(g, g))
    tol = 1e-9 if c.kind == "gauss" else 2e-6
    np.testing.assert_allclose(c.cdf(a, b), oracles.elliptical_cdf(c.kind, c.params, a, b), atol=tol)


def test_gaussian_h_and_density_match_hand_formulas():
    c = BivariateCopula("gauss", (0.65,))
    np.testing.assert_allclose(c.hfunc(U, V), oracles.gauss_h(U, V, 0.65), atol=1e-12)
    np.testing.assert_allclose(c.pdf(U, V), oracles.gauss_density(U, V, 0.65), rtol=1e-10)


# -- battery invariants -----------------------------------------------------------

@pytest.mark.parametrize("c", BATTERY, ids=battery_ids())
def test_frechet_bounds_and_margins(c):
    r = np.random.default_rng(0).random((1000, 2))
    a, b = r[:, 0], r[:, 1]
    C = c.cdf(a, b)
    assert np.all(C >= np.maximum(a + b - 1, 0) - 1e-12)
    assert np.all(C <= np.minimum(a, b) + 1e-12)
    np.testing.assert_allclose(c.cdf(a, 1.0), a, atol=1e-12)
    np.testing.assert_allclose(c.cdf(1.0, b), b, atol=1e-12)
    assert np.all(c.cdf(a, 0.0) == 0) and np.all(c.cdf(0.0, b) == 0)


@pytest.mark.parametrize("c", BATTERY, ids=battery_ids())
def test_h_matches_central_difference(c):
    eps = 1e-5
    fd = (c.cdf(U, V + eps) - c.cdf(U, V - eps)) / (2 * eps)
    assert np.max(np.abs(c.hfunc(U, V) - fd)) <= 1e-4
    fd2 = (c.cdf(U + eps, V) - c.cdf(U - eps, V)) / (2 * eps)
    assert np.max(np.abs(c.hfunc2(U, V) - fd2)) <= 1e-4


@pytest.mark.parametrize("c", BATTERY, ids=battery_ids())
def test_pdf_matches_mixed_second_difference(c):
    e = 1e-4
    g = np.linspace(0.1, 0.9, 9)
    a, b = (x.ravel() for x in np.meshgrid(g, g))
    fd = (c.cdf(a + e, b + e) - c.cdf(a + e, b - e) - c.cdf(a - e, b + e) + c.cdf(a - e, b - e)) / (4 * e * e)
    assert np.max(np.abs(c.pdf(a, b) - fd)) <= 1e-3


@pytest.mark.parametrize("c", BATTERY, ids=battery_ids())
def test_h_inverse_round_trip(c):
    g = np.arange(1, 10) / 10
    a, b = (x.ravel() for x in np.meshgrid(g, g))
    np.testing.assert_allclose(c.hinv(c.hfunc(a, b), b), a, atol=1e-8)
    np.testing.assert_allclose(c.hinv2(c.hfunc2(a, b), a), b, atol=1e-8)
    w = np.random.default_rng(1).random(200)
    vv = np.random.default_rng(2).random(200)
    np.testing.assert_allclose(c.hfunc(c.hinv(w, vv), vv), w, atol=1e-9)


@pytest.mark.parametrize("c", BATTERY, ids=battery_ids())
def test_rotation_identity_and_tau_sign(c):
    if c.kind in cop.ROTATABLE:
        r180 = BivariateCopula(c.kind, c.params, 180)
        r0 = BivariateCopula(c.kind, c.params, 0)
        np.testing.assert_allclose(r180.cdf(U, V), U + V - 1 + r0.cdf(1 - U, 1 - V), atol=1e-12)
        sign = -1 if c.rotation in (90, 270) else 1
        assert np.sign(c.tau()) == sign
    assert -1 <= c.tau() <= 1


def test_swap_exchanges_arguments():
    for c in BATTERY:
        np.testing.assert_allclose(c.swap().cdf(V, U), c.cdf(U, V), atol=1e-12)


def test_density_integrates_to_one():
    n = 400
    g = (np.arange(n) + 0.5) / n
    a, b = (x.ravel() for x in np.meshgrid(g, g))
    for c in (BivariateCopula("gauss", (0.5,)), BivariateCopula("frank", (4.0,)),
              BivariateCopula("clayton", (1.0,), 90), BivariateCopula("gumbel", (1.5,), 180)):
        assert np.mean(c.pdf(a, b)) == pytest.approx(1.0, abs=1e-2)


def test_boundary_inputs_are_clamped():
    c = BivariateCopula("clayton", (3.0,))
    assert np.isfinite(c.logpdf(0.0, 0.0)) and np.isfinite(c.logpdf(1.0, 1.0))
    assert c.hfunc(0.0, 0.3) == 0.0 and c.hfunc(1.0, 0.3) == 1.0
    assert 0.0 <= c.hfunc(0.4, 0.0) <= 1.0


# -- hypothesis properties ----------------------------------------------------------

unit = st.floats(0.001, 0.999)


@st.composite
def copulas(draw):
    kind = draw(st.sampled_from(["gauss", "t", "clayton", "gumbel", "frank", "joe"]))
    if kind == "gauss":
        return BivariateCopula(kind, (draw(st.floats(-0.95, 0.95)),))
    if kind == "t":
        return BivariateCopula(kind, (draw(st.floats(-0.9, 0.9)), float(draw(st.integers(3, 30)))))
    if kind == "frank":
        th = draw(st.floats(0.2, 20)) * draw(st.sampled_from([-1, 1]))
        return BivariateCopula(kind, (th,))
    lo = {"clayton": 0.05, "gumbel": 1.0, "joe": 1.01}[kind]
    th = draw(st.floats(lo, lo + 8))
    return BivariateCopula(kind, (th,), draw(st.sampled_from([0, 90, 180, 270])))


@settings(max_examples=150, deadline=None)
@given(copulas(), unit, unit, unit)
def test_property_h_monotone_and_bounded(c, a, b, v):
    lo, hi = sorted((a, b))
    h_lo, h_hi = c.hfunc(lo, v), c.hfunc(hi, v)
    assert 0.0 <= h_lo <= h_hi + 1e-12 <= 1.0 + 1e-12


@settings(max_examples=150, deadline=None)
@given(copulas(), unit, unit)
def test_property_inverse_round_trip(c, w, v):
    assert c.hfunc(c.hinv(w, v), v) == pytest.approx(w, abs=1e-9)


@settings(max_examples=150, deadline=None)
@given(copulas(), unit, unit)
def test_property_frechet(c, a, b):
    C = c.cdf(a, b)
    assert max(a + b - 1, 0) - 1e-12 <= C <= min(a, b) + 1e-12


@settings(max_examples=60, deadline=None)
@given(copulas(), st.floats(-0.85, 0.85))
def test_property_tau_inversion(c, tau):
    fam = c.family
    if fam.rotation in (90, 270) and tau > 0 or fam.rotation in (0, 180) and tau < 0 \
            and fam.kind in cop.ROTATABLE:
        tau = -tau
    params = tau_inversion(fam, tau)
    fitted = BivariateCopula(fam.kind, params, fam.rotation)
    if fam.kind in cop.ROTATABLE and abs(tau) < 0.01:
        return
    assert fitted.tau() == pytest.approx(tau, abs=2e-3)


# -- estimation ------------------------------------------------------------------

def test_fit_mle_recovers_clayton():
    data = BivariateCopula("clayton", (3.0,)).sample(2000, np.random.default_rng(7))
    res = fit_mle("clayton", data)
    assert 2.6 <= res.copula.params[0] <= 3.4
    assert res.aic == pytest.approx(-res.loglik + 2)
    assert res.bic == pytest.approx(-res.loglik + math.log(2000))


def test_fit_mle_not_worse_than_start():
    rng = np.random.default_rng(3)
    for c in (BivariateCopula("gumbel", (2.0,)), BivariateCopula("t", (0.4, 6.0)),
              BivariateCopula("frank", (-3.0,)), BivariateCopula("joe", (2.0,), 180)):
        data = c.sample(500, rng)
        tau = cop._empirical_tau(data[:, 0], data[:, 1])
        start = BivariateCopula(c.kind, tau_inversion(c.family, tau), c.rotation)
        res = fit_mle(c.family, data)
        assert res.loglik >= start.loglik(data[:, 0], data[:, 1]) - 1e-9


def test_fit_independent_data_gives_small_frank():
    data = np.random.default_rng(4).random((2000, 2))
    res = fit_mle("frank", data)
    assert abs(res.copula.params[0]) < 0.5
    assert abs(res.loglik) < 3 * math.sqrt(2000)


def test_fit_errors():
    with pytest.raises(CopulaFitError):
        fit_mle("clayton", np.full((50, 2), 0.5))
    with pytest.raises(CopulaFitError):
        fit_mle("gauss", np.random.default_rng(0).random((5, 2)))


def test_select_best_prefers_clayton():
    wins = 0
    for seed in range(20):
        data = BivariateCopula("clayton", (3.0,)).sample(2000, np.random.default_rng(seed))
        wins += select_best(data, families=("gauss", "clayton", "frank"), criterion="aic").copula.kind == "clayton"
    assert wins > 10


def test_select_best_closure_and_single_candidate():
    data = BivariateCopula("gumbel", (1.8,)).sample(400, np.random.default_rng(9))
    only = select_best(data, families=("frank",))
    assert only.copula.kind == "frank"
    assert only.copula == fit_mle("frank", data).copula
    for crit in ("aic", "bic", "mle"):
        res = select_best(data, families=("gauss", "gumbel"), criterion=crit)
        assert res.copula.kind in ("gauss", "gumbel")
    with pytest.raises(ValueError):
        select_best(data, families=())


def test_criteria_disagree_when_the_penalty_matters():
    # t nests the Gaussian, so plain likelihood drifts to t while BIC's penalty holds it back
    split = 0
    for seed in range(5):
        u = BivariateCopula("gauss", (0.5,)).sample(300, np.random.default_rng(seed))
        picks = {c: select_best(u, families=("gauss", "t"), criterion=c) for c in ("bic", "mle")}
        assert picks["mle"].loglik >= picks["bic"].loglik
        split += picks["mle"].copula.kind == "t" and picks["bic"].copula.kind == "gauss"
    assert split >= 1


def test_select_best_duplicate_candidates_collapse():
    data = np.random.default_rng(5).random((200, 2))
    res = select_best(data, families=("clayton@0", "clayton@0"))
    assert res.copula.family == CopulaFamily("clayton", 0)
    assert cop.expand_candidates(("clayton@0", "clayton@0", "gauss"), 0.3) == [
        CopulaFamily("gauss", 0), CopulaFamily("clayton", 0)]
    assert cop.expand_candidates(("joe",), -0.2) == [CopulaFamily("joe", 90), CopulaFamily("joe", 270)]


def test_negative_dependence_uses_rotations():
    data = BivariateCopula("clayton", (3.0,), 90).sample(1500, np.random.default_rng(8))
    res = select_best(data, families=("clayton",))
    assert res.copula.rotation in (90, 270)
    assert res.copula.tau() < -0.4


def test_sampling_reproduces_tau():
    for c in (BivariateCopula("clayton", (2.0,)), BivariateCopula("joe", (2.5,), 90)):
        x = c.sample(5000, np.random.default_rng(11))
        assert cop._empirical_tau(x[:, 0], x[:, 1]) == pytest.approx(c.tau(), abs=0.03)


def test_serialisation():
    c = BivariateCopula("gumbel", (2.2,), 270)
    assert BivariateCopula.from_dict(c.to_dict()) == c
    assert BivariateCopula.from_code("t", (0.3, 5)).params == (0.3, 5.0)


# -- multivariate closed forms ------------------------------------------------------

def test_mv_archimedean_examples():
    assert cop.mv_archimedean_cdf("independent", 0, [0.5, 0.5, 0.5]) == pytest.approx(0.125)
    # generator form psi^-1(sum psi(u_l)) with psi(u) = (u^-phi - 1)/phi: (12 - 2)^(-1/2)
    assert cop.mv_archimedean_cdf("clayton", 2.0, [0.5, 0.5, 0.5]) == pytest.approx(10 ** -0.5, abs=1e-12)
    u = np.random.default_rng(0).random((50, 4))
    np.testing.assert_allclose(cop.mv_archimedean_cdf("gumbel", 1.0, u), np.prod(u, axis=1), atol=1e-12)


@pytest.mark.parametrize("kind,phi", [("clayton", 2.5), ("gumbel", 1.7), ("frank", 3.0), ("frank", -3.0)])
def test_mv_archimedean_reduces_to_bivariate(kind, phi):
    pts = np.column_stack([U, V])
    np.testing.assert_allclose(cop.mv_archimedean_cdf(kind, phi, pts), BivariateCopula(kind, (phi,)).cdf(U, V),
                               atol=1e-12)


@pytest.mark.parametrize("kind,phi", [("clayton", 2.0), ("frank", 4.0), ("gumbel", 2.0)])
def test_mv_archimedean_margins_are_lower_dimensional_copulas(kind, phi):
    # setting one argument to 1 must give the (d-1)-dimensional copula
    u = np.random.default_rng(3).uniform(0.05, 0.95, (40, 3))
    full = cop.mv_archimedean_cdf(kind, phi, np.column_stack([u, np.ones(40)]))
    np.testing.assert_allclose(full, cop.mv_archimedean_cdf(kind, phi, u), atol=1e-12)
    tri = cop.mv_archimedean_cdf(kind, phi, np.column_stack([u[:, :2], np.ones(40)]))
    np.testing.assert_allclose(tri, BivariateCopula(kind, (phi,)).cdf(u[:, 0], u[:, 1]), atol=1e-12)


def test_mv_archimedean_domain():
    with pytest.raises(CopulaDomainError):
        cop.mv_archimedean_cdf("gumbel", 0.5, [0.5, 0.5])
    with pytest.raises(CopulaDomainError):
        cop.mv_archimedean_cdf("clayton", 1.0, [0.5])


def test_mv_gaussian_pdf():
    from scipy import stats
    u = np.random.default_rng(1).random((20, 3))
    np.testing.assert_allclose(cop.mv_gaussian_copula_pdf(np.eye(3), u), 1.0)
    R2 = np.array([[1, 0.4], [0.4, 1]])
    np.testing.assert_allclose(cop.mv_gaussian_copula_pdf(R2, u[:, :2]),
                               BivariateCopula("gauss", (0.4,)).pdf(u[:, 0], u[:, 1]), atol=1e-10)
    R = np.full((3, 3), 0.5) + 0.5 * np.eye(3)
    x = stats.norm.ppf([0.5, 0.5, 0.5])
    ref = stats.multivariate_normal(cov=R).pdf(x) / np.prod(stats.norm.pdf(x))
    assert cop.mv_gaussian_copula_pdf(R, [0.5, 0.5, 0.5]) == pytest.approx(ref, rel=1e-10)
    with pytest.raises(CopulaDomainError):
        cop.mv_gaussian_copula_pdf(np.array([[1, 2], [2, 1]]), [0.5, 0.5])


def test_mv_t_pdf_reduces_to_bivariate():
    u = np.random.default_rng(2).random((20, 2))
    R = np.array([[1, -0.3], [-0.3, 1]])
    np.testing.assert_allclose(cop.mv_t_copula_pdf(R, 5.0, u),
                               BivariateCopula("t", (-0.3, 5.0)).pdf(u[:, 0], u[:, 1]), rtol=1e-9)
