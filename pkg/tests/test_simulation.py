import math

import numpy as np
import pytest
from scipy import stats

from rvinefusion.fusion import (DecisionPMF, asymptotic_stats, chair_varshney_batch, np_operating_point,
                                quantize, weights_from_pmf)
from rvinefusion.fusion import IndependenceEvaluators
from rvinefusion.marginals import kendall_tau
from rvinefusion.rvine import SubsetCopulaSet
from rvinefusion.simulation import (ConfigError, ScenarioConfig, compare_criteria, dependence_vine,
                                    empirical_roc, format_config, generate_trial, generate_trials,
                                    parse_config_text, run_roc, train_models)

SMALL = dict(trials=300, training_N=1500, mc_budget=20_000)


def tau_se(n):
    return math.sqrt(2 * (2 * n + 5) / (9 * n * (n - 1)))


# -- configuration --------------------------------------------------------------------------

def test_defaults_follow_the_standard_setup():
    cfg = ScenarioConfig()
    assert (cfg.L, cfg.N, cfg.beta, cfg.sigma_w, cfg.criterion) == (3, 100, (0.1,) * 3, (1.0, 0.9, 0.8), "aic")


def test_config_text_round_trip():
    cfg = parse_config_text("L = 3\ncase = NoiseDependence  # comment\nsignal = 2.4\nfamilies = gauss,clayton\n")
    assert cfg.case == "noise" and cfg.signal == (2.4,) * 3 and cfg.families == ("gauss", "clayton")
    assert parse_config_text(format_config(cfg)) == cfg


@pytest.mark.parametrize("text,fragment", [
    ("bogus = 1", "bogus"), ("trials = 0", "trials"), ("N = 0", "N"), ("beta = 1.2", "beta"),
    ("sigma_w = 1,-1,1", "sigma_w"), ("signal = 1,2", "signal"), ("case = weird", "case"),
    ("L = x", "L"), ("just words", "line 1"), ("training_N = 10", "training_N"),
    ("families = gauss,nope", "nope"),
])
def test_config_errors_name_the_problem(text, fragment):
    with pytest.raises((ConfigError, ValueError), match=fragment):
        parse_config_text(text)


# -- data generation -----------------------------------------------------------------------------

def test_h0_columns_are_independent_gaussians():
    cfg = ScenarioConfig(case="signal", dependence_family="clayton", dependence_tau=0.5)
    z = generate_trial(cfg, 0, 1, n=10_000)
    for j, s in enumerate(cfg.sigma_w):
        assert stats.kstest(z[:, j], "norm", args=(0, s)).pvalue > 0.01
    for a, b in ((0, 1), (0, 2), (1, 2)):
        assert abs(kendall_tau(z[:, a], z[:, b])) < 2.576 * tau_se(10_000)


def test_noise_dependence_injects_clayton_tau():
    cfg = ScenarioConfig(case="noise", dependence_family="clayton", dependence_tau=0.5)
    z = generate_trial(cfg, 0, 2, n=5000)
    assert kendall_tau(z[:, 0], z[:, 1]) == pytest.approx(0.5, abs=0.03)
    assert kendall_tau(z[:, 1], z[:, 2]) == pytest.approx(0.5, abs=0.03)
    for j, s in enumerate(cfg.sigma_w):
        assert stats.kstest(z[:, j], "norm", args=(0, s)).pvalue > 0.01


def test_fading_gains_are_rayleigh():
    cfg = ScenarioConfig(case="fading", signal=(1.0,), signal_model="perturbed", signal_sd=1e-9,
                         sigma_w=(1e-9,), rayleigh_xi=0.9, dependence_family="gumbel", dependence_tau=0.4)
    z = generate_trial(cfg, 1, 3, n=5000)
    assert stats.kstest(z[:, 0], "rayleigh", args=(0, 0.9)).pvalue > 0.01
    assert kendall_tau(z[:, 0], z[:, 1]) == pytest.approx(0.4, abs=0.03)


def test_generation_is_deterministic():
    cfg = ScenarioConfig()
    np.testing.assert_array_equal(generate_trial(cfg, 1, 9), generate_trial(cfg, 1, 9))
    seeds = np.random.SeedSequence(4).spawn(3)
    a = generate_trials(cfg, 1, seeds)
    np.testing.assert_array_equal(a[1], generate_trials(cfg, 1, seeds[1:2])[0])


def test_dependence_vine_is_a_path():
    v = dependence_vine(ScenarioConfig(L=4, sigma_w=(1.0,), dependence_family="clayton", dependence_tau=0.5))
    first = sorted(tuple(sorted(e.key[0])) for t, e, c in v.edges() if t == 1)
    assert first == [(1, 2), (2, 3), (3, 4)]
    assert all(c.kind == "indep" for t, _, c in v.edges() if t > 1)


# -- training ----------------------------------------------------------------------------------

def test_signal_case_training():
    cfg = ScenarioConfig(case="signal", families=("indep", "gauss", "clayton", "gumbel"), **SMALL)
    model = train_models(cfg)
    assert isinstance(model.subsets_h0, IndependenceEvaluators)
    assert isinstance(model.subsets_h1, SubsetCopulaSet)
    held = quantize(generate_trial(cfg, 0, 123, n=20_000), model.bank)
    np.testing.assert_allclose(held.mean(axis=0), cfg.beta, atol=0.02)
    assert np.all(model.rates.p > model.rates.q)
    again = train_models(cfg)
    np.testing.assert_array_equal(model.weights.A, again.weights.A)


def test_signal_case_recovers_injected_tau():
    # with negligible noise the observations inherit the copula of the signal perturbation
    cfg = ScenarioConfig(case="signal", signal_model="perturbed", signal_sd=0.3, sigma_w=(0.01,),
                         dependence_family="gumbel", dependence_tau=0.6,
                         families=("indep", "gauss", "clayton", "gumbel", "frank"), **SMALL)
    model = train_models(cfg)
    taus = {tuple(sorted(e.key[0])): c.tau() for t, e, c in model.subsets_h1.full.edges() if t == 1}
    assert set(taus) == {(1, 2), (2, 3)}
    for v in taus.values():
        assert v == pytest.approx(0.6, abs=0.1)


def test_noise_case_fits_h0_dependence():
    cfg = ScenarioConfig(case="noise", dependence_family="clayton", dependence_tau=0.5,
                         families=("indep", "gauss", "clayton", "gumbel"), **SMALL)
    model = train_models(cfg)
    full = model.subsets_h0.full
    taus = {tuple(sorted(e.key[0])): c.tau() for t, e, c in full.edges() if t == 1}
    assert set(taus) == {(1, 2), (2, 3)}
    for v in taus.values():
        assert v == pytest.approx(0.5, abs=0.1)


# -- ROC ---------------------------------------------------------------------------------------

def test_empirical_roc_construction(rng):
    c = empirical_roc("x", rng.standard_normal(500), rng.standard_normal(400) + 1)
    assert (c.pf[0], c.pd[0]) == (0.0, 0.0) and (c.pf[-1], c.pd[-1]) == (1.0, 1.0)
    assert np.all(np.diff(c.pf) >= 0) and np.all(np.diff(c.pd) >= 0)
    assert 0.7 < c.auc() < 0.82
    tie = empirical_roc("t", np.zeros(10), np.zeros(10))
    assert tie.auc() == pytest.approx(0.5)


def test_run_roc_curves_and_determinism(tmp_path):
    cfg = ScenarioConfig(families=("indep", "gauss", "clayton", "gumbel"), **SMALL)
    a = run_roc(cfg)
    for c in a.curves.values():
        assert (c.pf[0], c.pd[0]) == (0.0, 0.0) and (c.pf[-1], c.pd[-1]) == (1.0, 1.0)
        assert np.all(np.diff(c.pd) >= 0)
        assert c.auc() > 0.5
    a.to_csv(tmp_path / "a.csv")
    run_roc(cfg).to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert set(a.summary()) >= {"config", "seeds", "models", "rules"}


def test_stronger_signal_helps():
    base = ScenarioConfig(families=("indep", "gauss", "clayton", "gumbel"), **SMALL)
    weak = run_roc(base, rules=("rvine",)).pd_at("rvine")[0]
    strong = run_roc(base.replace(signal=(3.0,)), rules=("rvine",)).pd_at("rvine")[0]
    assert strong > weak


def test_milder_fading_does_not_hurt():
    base = ScenarioConfig(case="fading", dependence_family="gumbel", dependence_tau=0.5,
                          families=("indep", "gauss", "clayton", "gumbel"), **SMALL)
    harsh = run_roc(base.replace(rayleigh_xi=0.9), rules=("rvine",)).pd_at("rvine")[0]
    mild = run_roc(base.replace(rayleigh_xi=1.0), rules=("rvine",)).pd_at("rvine")[0]
    assert mild >= harsh


def test_asymptotic_threshold_false_alarm_under_independence():
    # a long training record keeps the KDE tail bias in the local thresholds negligible
    cfg = ScenarioConfig(case="signal", dependence_family="indep", dependence_tau=0.0, families=("indep",),
                         trials=2000, training_N=50_000, mc_budget=20_000, seed=11)
    res = run_roc(cfg)
    model = res.model
    se = math.sqrt(cfg.alpha * (1 - cfg.alpha) / cfg.trials)
    assert abs(res.asymptotic["pf_empirical"] - cfg.alpha) <= 3 * se
    # Chair-Varshney: same threshold formula on its own moments (product-form PMF plus offset)
    p, q = model.rates.p, model.rates.q
    prod = DecisionPMF.product(p, q)
    st = asymptotic_stats(prod, weights_from_pmf(prod), cfg.N)
    offset = cfg.N * float(np.sum(np.log((1 - p) / (1 - q))))
    gamma = np_operating_point(st, cfg.alpha).gamma + offset
    s0, _ = res.statistics["chair_varshney"]
    assert abs(np.mean(s0 > gamma) - cfg.alpha) <= 3 * se


def test_single_family_makes_criteria_identical():
    cfg = ScenarioConfig(families=("clayton",), **SMALL)
    out = compare_criteria(cfg)
    curves = [out[k].curves["rvine"] for k in ("aic", "bic", "mle")]
    for c in curves[1:]:
        np.testing.assert_array_equal(c.pf, curves[0].pf)
        np.testing.assert_array_equal(c.pd, curves[0].pd)


def test_unknown_rule_rejected():
    with pytest.raises(ConfigError):
        run_roc(ScenarioConfig(**SMALL), rules=("majority",))
