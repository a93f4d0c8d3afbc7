"""
Synthetic detection experiments.

Observation model at sensor ``l`` and instant ``n``::

    H1: z = h * s_l * g + w        H0: z = w

``h`` is the channel gain (Rayleigh in the fading case, 1 otherwise), ``g``
the signal activity and ``w`` Gaussian noise.  Exactly one component is
spatially dependent, chosen by ``case``; its dependence comes from a
D-vine whose first-tree edges all carry the configured copula.

With ``signal_model = "intermittent"`` the target is present at a sensor
only a fraction ``activity`` of the time (``g`` in {0, 1}).  With
``"perturbed"`` the signal is always present and ``g`` is a unit-mean
Gaussian perturbation with standard deviation ``signal_sd``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

from . import copulas as cop
from .copulas import INDEPENDENCE, BivariateCopula, CopulaFamily
from .fusion import (FusionModel, chair_varshney_batch, eval_statistic_batch, np_operating_point,
                     quantize, train_fusion)
from .marginals import GaussianMarginal
from .rvine import FittedRVine

CASES = {
    "fading": "fading", "fadingdependence": "fading", "case1": "fading",
    "signal": "signal", "signaldependence": "signal", "case2": "signal",
    "noise": "noise", "noisedependence": "noise", "case3": "noise",
}
RULES = ("rvine", "chair_varshney")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    L: int = 3
    N: int = 100
    trials: int = 2000
    signal: tuple = (2.4,)
    signal_model: str = "intermittent"
    activity: float = 0.03
    signal_sd: float = 0.1
    rayleigh_xi: float = 1.0
    sigma_w: tuple = (1.0, 0.9, 0.8)
    case: str = "signal"
    dependence_family: str = "gumbel"
    dependence_tau: float = 0.6
    beta: tuple = (0.1,)
    alpha: float = 0.1
    training_N: int = 5000
    families: tuple = cop.KINDS
    criterion: str = "aic"
    h0_model: str = "auto"
    mc_budget: int = 200_000
    seed: int = 20240101

    def __post_init__(self):
        def vec(name, value):
            arr = tuple(float(x) for x in np.atleast_1d(value))
            if len(arr) == 1:
                arr = arr * self.L
            if len(arr) != self.L:
                raise ConfigError(f"{name} needs 1 or L={self.L} values, got {len(arr)}")
            object.__setattr__(self, name, arr)

        if self.L < 1:
            raise ConfigError("L must be at least 1")
        for name in ("signal", "sigma_w", "beta"):
            vec(name, getattr(self, name))
        case = CASES.get(str(self.case).lower().replace("_", "").replace("-", ""))
        if case is None:
            raise ConfigError(f"unknown case {self.case!r}")
        object.__setattr__(self, "case", case)
        if self.N < 1:
            raise ConfigError("N must be at least 1")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.training_N < 200:
            raise ConfigError("training_N must be at least 200")
        if any(s <= 0 for s in self.sigma_w):
            raise ConfigError("sigma_w entries must be positive")
        if not self.rayleigh_xi > 0:
            raise ConfigError("rayleigh_xi must be positive")
        if any(not 0 < b < 1 for b in self.beta):
            raise ConfigError("beta entries must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.signal_model not in ("intermittent", "perturbed"):
            raise ConfigError("signal_model must be intermittent or perturbed")
        if not 0 < self.activity <= 1:
            raise ConfigError("activity must lie in (0, 1]")
        if self.h0_model not in ("auto", "fit", "independent"):
            raise ConfigError("h0_model must be auto, fit or independent")
        if self.criterion not in ("aic", "bic", "mle"):
            raise ConfigError("criterion must be aic, bic or mle")
        if isinstance(self.families, str):
            object.__setattr__(self, "families", tuple(f.strip() for f in self.families.split(",")))
        for f in self.families:
            CopulaFamily.parse(f)
        CopulaFamily.parse(self.dependence_family)
        if not -1 < self.dependence_tau < 1:
            raise ConfigError("dependence_tau must lie in (-1, 1)")

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v, tuple) else v)
                for f in dataclasses.fields(self) for v in [getattr(self, f.name)]}


_INT_KEYS = {"L", "N", "trials", "training_N", "mc_budget", "seed"}
_FLOAT_KEYS = {"activity", "signal_sd", "rayleigh_xi", "dependence_tau", "alpha"}
_VEC_KEYS = {"signal", "sigma_w", "beta"}
_STR_KEYS = {"signal_model", "case", "dependence_family", "criterion", "h0_model", "families"}


def parse_config_text(text: str, **overrides) -> ScenarioConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Vector keys take comma-separated numbers; ``families`` takes
    comma-separated copula codes.
    """
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        try:
            if key in _INT_KEYS:
                kw[key] = int(value)
            elif key in _FLOAT_KEYS:
                kw[key] = float(value)
            elif key in _VEC_KEYS:
                kw[key] = tuple(float(x) for x in value.split(","))
            elif key in _STR_KEYS:
                kw[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r}: {value!r}") from None
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ScenarioConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, **overrides) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), **overrides)


def format_config(cfg: ScenarioConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Data generation
# ---------------------------------------------------------------------------

def dependence_vine(cfg: ScenarioConfig) -> FittedRVine:
    """D-vine ``1-2-...-L`` with the configured copula on every first-tree edge."""
    L = cfg.L
    fam = CopulaFamily.parse(cfg.dependence_family)
    c = BivariateCopula(fam.kind, cop.tau_inversion(fam, cfg.dependence_tau), fam.rotation)
    A = np.zeros((L, L), dtype=int)
    for k in range(L):
        # column k reads L-k, 1, 2, ..., L-k-1: the bottom entry is the path neighbour
        A[k, k] = L - k
        A[k + 1:, k] = list(range(1, L - k))
    rows = [[c if i == L - 1 else INDEPENDENCE for _ in range(i)] for i in range(L)]
    return FittedRVine(A, rows)


def _draw(rng, n: int, L: int) -> np.ndarray:
    # one block of driving randomness: copula uniforms, activity uniforms,
    # fading uniforms, noise normals
    return np.concatenate([rng.random((n, 3 * L)), rng.standard_normal((n, L))], axis=1)


def _transform(cfg: ScenarioConfig, hypothesis: int, raw: np.ndarray, vine=None) -> np.ndarray:
    L = cfg.L
    W, act, fad, noise = raw[:, :L], raw[:, L:2 * L], raw[:, 2 * L:3 * L], raw[:, 3 * L:]
    sig = np.asarray(cfg.sigma_w)
    if L > 1:
        V = (vine or dependence_vine(cfg)).inverse_rosenblatt(W)
    else:
        V = W
    if cfg.case == "noise":
        w = sig * special.ndtri(np.clip(V, 1e-16, 1 - 1e-16))
    else:
        w = sig * noise
    if hypothesis == 0:
        return w
    s = np.asarray(cfg.signal)
    driver = V if cfg.case == "signal" else act
    if cfg.signal_model == "intermittent":
        g = (driver > 1.0 - cfg.activity).astype(float)
    else:
        g = 1.0 + cfg.signal_sd * special.ndtri(np.clip(driver, 1e-16, 1 - 1e-16))
    if cfg.case == "fading":
        h = stats.rayleigh.ppf(V, scale=cfg.rayleigh_xi)
    else:
        h = 1.0
    return h * s * g + w


def generate_trial(cfg: ScenarioConfig, hypothesis: int, rng, n: int | None = None) -> np.ndarray:
    """``n x L`` observations (default ``n = cfg.N``) under ``hypothesis``."""
    rng = np.random.default_rng(rng)
    n = cfg.N if n is None else n
    return _transform(cfg, hypothesis, _draw(rng, n, cfg.L))


def generate_trials(cfg: ScenarioConfig, hypothesis: int, seeds, n: int | None = None) -> np.ndarray:
    """``(len(seeds), n, L)`` observations; trial ``t`` uses ``seeds[t]`` only."""
    n = cfg.N if n is None else n
    raw = np.concatenate([_draw(np.random.default_rng(s), n, cfg.L) for s in seeds])
    return _transform(cfg, hypothesis, raw).reshape(len(seeds), n, cfg.L)


# ---------------------------------------------------------------------------
# Training and ROC evaluation
# ---------------------------------------------------------------------------

def _seeds(cfg: ScenarioConfig):
    # child 0 is reserved for training (see train_models)
    _, h1, h0 = np.random.SeedSequence(cfg.seed).spawn(3)
    return {"trials_h1": h1.spawn(cfg.trials), "trials_h0": h0.spawn(cfg.trials)}


def h0_is_independent(cfg: ScenarioConfig) -> bool:
    if cfg.h0_model == "independent":
        return True
    if cfg.h0_model == "fit":
        return False
    return cfg.case != "noise"


def train_models(cfg: ScenarioConfig, criterion: str | None = None,
                 families: Sequence | None = None) -> FusionModel:
    """Learn marginals, thresholds, vines and fusion weights from raw training data."""
    train = np.random.SeedSequence(cfg.seed).spawn(3)[0]
    s1, s0, mc = train.spawn(3)
    z1 = generate_trial(cfg, 1, np.random.default_rng(s1), cfg.training_N)
    z0 = generate_trial(cfg, 0, np.random.default_rng(s0), cfg.training_N)
    model = train_fusion(z1, z0, cfg.beta, families or cfg.families, criterion or cfg.criterion,
                         mc_budget=cfg.mc_budget, seed=mc,
                         independent_h0=h0_is_independent(cfg))
    model.meta["training"] = {"h1": z1, "h0": z0}
    return model


@dataclass(frozen=True)
class ROCCurve:
    rule: str
    pf: np.ndarray
    pd: np.ndarray
    se_pd: np.ndarray
    trials: int

    def pd_at(self, alpha: float) -> tuple[float, float]:
        """P_D at false-alarm ``alpha`` (randomised interpolation) and its SE."""
        pd = float(np.interp(alpha, self.pf, self.pd))
        return pd, float(np.sqrt(max(pd * (1 - pd), 0.0) / self.trials))

    def auc(self) -> float:
        return float(np.trapezoid(self.pd, self.pf))


def empirical_roc(rule: str, s0, s1) -> ROCCurve:
    """Empirical ROC of the test ``statistic > threshold`` over all thresholds."""
    s0 = np.asarray(s0, dtype=float)
    s1 = np.asarray(s1, dtype=float)
    th = np.unique(np.concatenate([s0, s1]))
    s0s, s1s = np.sort(s0), np.sort(s1)
    pf = 1.0 - np.searchsorted(s0s, th, side="right") / s0.size
    pd = 1.0 - np.searchsorted(s1s, th, side="right") / s1.size
    pf = np.concatenate([[1.0], pf])
    pd = np.concatenate([[1.0], pd])
    order = np.lexsort((pd, pf))
    pf, pd = pf[order], pd[order]
    if pf[0] != 0.0 or pd[0] != 0.0:
        pf = np.concatenate([[0.0], pf])
        pd = np.concatenate([[0.0], pd])
    # sorting by (pf, pd) keeps pd nondecreasing; enforce against float noise
    pd = np.maximum.accumulate(pd)
    n = s1.size
    return ROCCurve(rule, pf, pd, np.sqrt(pd * (1 - pd) / n), n)


@dataclass
class ROCResult:
    cfg: ScenarioConfig
    curves: dict
    statistics: dict
    model: FusionModel
    asymptotic: dict = field(default_factory=dict)

    def pd_at(self, rule: str, alpha: float | None = None):
        return self.curves[rule].pd_at(self.cfg.alpha if alpha is None else alpha)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("rule,pf,pd,se_pd\n")
            for rule, c in self.curves.items():
                for a, b, e in zip(c.pf, c.pd, c.se_pd):
                    fh.write(f"{rule},{a:.10g},{b:.10g},{e:.10g}\n")

    def summary(self) -> dict:
        out = {"config": self.cfg.to_dict(), "seeds": {"root": self.cfg.seed},
               "models": model_digests(self.model), "rules": {}}
        for rule, c in self.curves.items():
            pd, se = c.pd_at(self.cfg.alpha)
            out["rules"][rule] = {"pd_at_alpha": pd, "se_pd": se, "auc": c.auc()}
        out["asymptotic"] = self.asymptotic
        return out


def model_digests(model: FusionModel) -> dict:
    def digest(obj):
        return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]

    out = {"weights": digest(model.weights.to_dict()), "pmf": digest(model.pmf.to_dict()),
           "thresholds": [float(t) for t in model.bank.tau],
           "p": model.rates.p.tolist(), "q": model.rates.q.tolist()}
    for name, sset in (("vine_h1", model.subsets_h1), ("vine_h0", model.subsets_h0)):
        full = getattr(sset, "full", None)
        out[name] = digest(full.to_dict()) if full is not None else "independence"
        if full is not None:
            out[name + "_families"] = full.family_matrix()
    return out


def simulate_decisions(cfg: ScenarioConfig, model: FusionModel):
    seeds = _seeds(cfg)
    d1 = quantize(generate_trials(cfg, 1, seeds["trials_h1"]), model.bank)
    d0 = quantize(generate_trials(cfg, 0, seeds["trials_h0"]), model.bank)
    return d0, d1


def run_roc(cfg: ScenarioConfig, rules: Sequence[str] = RULES,
            model: FusionModel | None = None) -> ROCResult:
    """Monte Carlo ROC of each fusion rule on freshly simulated trials."""
    for r in rules:
        if r not in RULES:
            raise ConfigError(f"unknown rule {r!r}")
    model = model or train_models(cfg)
    d0, d1 = simulate_decisions(cfg, model)
    stats_ = {}
    curves = {}
    for r in rules:
        if r == "rvine":
            s0, s1 = eval_statistic_batch(model.weights, d0), eval_statistic_batch(model.weights, d1)
        else:
            s0, s1 = chair_varshney_batch(model.rates, d0), chair_varshney_batch(model.rates, d1)
        stats_[r] = (s0, s1)
        curves[r] = empirical_roc(r, s0, s1)
    asym = {}
    if "rvine" in rules:
        st = model.stats(cfg.N)
        try:
            op = np_operating_point(st, cfg.alpha)
            s0, s1 = stats_["rvine"]
            asym = {"mu0": st.mu0, "var0": st.var0, "mu1": st.mu1, "var1": st.var1,
                    "gamma": op.gamma, "pd_predicted": op.pd,
                    "pf_empirical": float(np.mean(s0 > op.gamma)),
                    "pd_empirical": float(np.mean(s1 > op.gamma))}
        except Exception as exc:  # degenerate statistic; report rather than fail
            asym = {"error": str(exc)}
    return ROCResult(cfg, curves, stats_, model, asym)


def compare_criteria(cfg: ScenarioConfig, criteria: Sequence[str] = ("aic", "bic", "mle")) -> dict:
    """R-vine ROC per selection criterion; data and seeds shared across arms."""
    out = {}
    for crit in criteria:
        model = train_models(cfg, criterion=crit)
        out[crit] = run_roc(cfg.replace(criterion=crit), rules=("rvine",), model=model)
    return out


def true_marginals_h0(cfg: ScenarioConfig):
    return [GaussianMarginal(0.0, s) for s in cfg.sigma_w]
