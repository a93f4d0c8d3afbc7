"""
Decision fusion for correlated binary sensors.

Pattern convention: an ``L``-bit decision pattern is an integer ``s`` in
``0 .. 2**L - 1`` whose most significant bit is sensor 1, so the bit string
``format(s, "0Lb")`` reads ``u_1 u_2 ... u_L``.  The same integers index
sensor subsets (the set of sensors whose bit is 1).
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from . import copulas as cop
from .marginals import KDEMarginal, ecdf_transform
from .rvine import CDFEstimate, SubsetCopulaSet, build_subset_copula_set, subset_copula_cdf

PMF_FLOOR = 1e-12
MAX_CLAMPED_MASS = 1e-3


class FusionError(RuntimeError):
    pass


class DetectorWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# Pattern helpers
# ---------------------------------------------------------------------------

def pattern_bits(s: int, L: int) -> np.ndarray:
    return np.array([(s >> (L - 1 - l)) & 1 for l in range(L)], dtype=np.int8)


def pattern_key(s: int, L: int) -> str:
    return format(s, f"0{L}b")


def mask_of(subset: Sequence[int], L: int) -> int:
    """Integer mask of a set of 1-based sensor indices."""
    m = 0
    for l in subset:
        m |= 1 << (L - l)
    return m


def subset_of(mask: int, L: int) -> tuple:
    return tuple(l + 1 for l in range(L) if (mask >> (L - 1 - l)) & 1)


def patterns_to_index(decisions) -> np.ndarray:
    d = np.asarray(decisions, dtype=np.int64)
    if d.ndim == 1:
        d = d[None, :]
    L = d.shape[1]
    weights = 1 << np.arange(L - 1, -1, -1, dtype=np.int64)
    return d @ weights


def _zeta_subsets(f: np.ndarray, L: int) -> np.ndarray:
    # g(S) = sum_{T subset S} f(T)
    g = f.astype(float).copy()
    for bit in range(L):
        b = 1 << bit
        for s in range(1 << L):
            if s & b:
                g[s] += g[s ^ b]
    return g


def _mobius_subsets(g: np.ndarray, L: int) -> np.ndarray:
    # inverse of _zeta_subsets
    f = g.astype(float).copy()
    for bit in range(L):
        b = 1 << bit
        for s in range(1 << L):
            if s & b:
                f[s] -= f[s ^ b]
    return f


def _mobius_supersets(g: np.ndarray, L: int) -> np.ndarray:
    # f(S) = sum_{T superset S} (-1)^{|T|-|S|} g(T)
    f = g.astype(float).copy()
    for bit in range(L):
        b = 1 << bit
        for s in range(1 << L):
            if not s & b:
                f[s] -= f[s | b]
    return f


def _zeta_supersets(f: np.ndarray, L: int) -> np.ndarray:
    g = f.astype(float).copy()
    for bit in range(L):
        b = 1 << bit
        for s in range(1 << L):
            if not s & b:
                g[s] += g[s | b]
    return g


# ---------------------------------------------------------------------------
# Local quantizers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantizerBank:
    tau: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float))

    @property
    def L(self) -> int:
        return self.tau.size


@dataclass(frozen=True)
class LocalRates:
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape:
            raise ValueError("p and q must have equal length")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        if np.any(p <= q):
            warnings.warn("some sensors have p_l <= q_l", DetectorWarning, stacklevel=3)


def quantize(z, bank) -> np.ndarray:
    """Binary decisions: 1 where ``z >= tau`` (the boundary counts as 1)."""
    tau = bank.tau if isinstance(bank, QuantizerBank) else np.asarray(bank, dtype=float)
    return (np.asarray(z, dtype=float) >= tau).astype(np.int8)


def solve_thresholds(h0_marginals, beta) -> QuantizerBank:
    """Local thresholds with false-alarm probability exactly ``beta``."""
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (len(h0_marginals),))
    if np.any((beta <= 0) | (beta >= 1)):
        raise ValueError("beta must lie in (0, 1)")
    return QuantizerBank(np.array([float(m.isf(b)) for m, b in zip(h0_marginals, beta)]))


def local_rates(h1_marginals, h0_marginals, bank) -> LocalRates:
    tau = bank.tau if isinstance(bank, QuantizerBank) else np.asarray(bank, dtype=float)
    p = np.array([float(m.sf(t)) for m, t in zip(h1_marginals, tau)])
    q = np.array([float(m.sf(t)) for m, t in zip(h0_marginals, tau)])
    return LocalRates(p, q)


# ---------------------------------------------------------------------------
# PMFs from copulas
# ---------------------------------------------------------------------------

class IndependenceEvaluators:
    """Stand-in evaluator set whose subset copulas are all products."""

    def __init__(self, L: int):
        self.L = L

    def cdf(self, subset, margins, **kw) -> CDFEstimate:
        return CDFEstimate(float(np.prod(margins)), 0.0, 0, "exact")


@dataclass(frozen=True)
class PMFTable:
    probs: np.ndarray
    raw: np.ndarray
    raw_sum: float
    clamped_mass: float
    mc_se: float

    @property
    def L(self) -> int:
        return int(round(math.log2(self.probs.size)))

    def to_dict(self) -> dict:
        return {pattern_key(s, self.L): float(self.probs[s]) for s in range(self.probs.size)}


def _cdf_value(evaluators, subset, margins, mc_budget, seed):
    if callable(evaluators) and not hasattr(evaluators, "cdf"):
        res = evaluators(subset, margins)
    elif isinstance(evaluators, dict):
        ev = evaluators[subset]
        res = ev(margins) if callable(ev) else subset_copula_cdf(ev, margins, mc_budget, seed)
    else:
        res = evaluators.cdf(subset, margins, mc_budget=mc_budget, seed=seed)
    if isinstance(res, CDFEstimate):
        return res.value, res.se
    return float(res), 0.0


def _seedseq(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def subset_cdf_table(evaluators, rates, mc_budget=200_000, seed=0):
    """``C_T(1 - rate_t : t in T)`` for every subset mask ``T``, plus SEs."""
    rates = np.asarray(rates, dtype=float)
    L = rates.size
    margins = 1.0 - rates
    table = np.zeros(1 << L)
    ses = np.zeros(1 << L)
    seeds = _seedseq(seed).generate_state(1 << L)
    for mask in range(1 << L):
        subset = subset_of(mask, L)
        if len(subset) == 0:
            table[mask] = 1.0
        elif len(subset) == 1:
            table[mask] = margins[subset[0] - 1]
        else:
            m = np.array([margins[l - 1] for l in subset])
            table[mask], ses[mask] = _cdf_value(evaluators, subset, m, mc_budget, int(seeds[mask]))
    return table, ses


def pmf_from_copulas(evaluators, rates, mc_budget: int = 200_000, seed=0) -> PMFTable:
    """Joint decision PMF by inclusion-exclusion over subset copula CDFs.

    ``evaluators`` is a :class:`SubsetCopulaSet`, an
    :class:`IndependenceEvaluators`, a dict mapping sorted 1-based subsets
    to evaluators, or a callable ``(subset, margins) -> value``.
    """
    rates = np.asarray(rates, dtype=float)
    if np.any((rates <= 0) | (rates >= 1)):
        raise ValueError("rates must lie in (0, 1)")
    L = rates.size
    full = (1 << L) - 1
    C, ses = subset_cdf_table(evaluators, rates, mc_budget, seed)
    # zero-set Z -> P(all of Z are 0, others 1)
    by_zero = _mobius_supersets(C, L)
    raw = np.array([by_zero[full ^ s] for s in range(1 << L)])
    mc_se = float(np.sum(ses))
    total = float(raw.sum())
    clamped = float(np.sum(np.maximum(PMF_FLOOR - raw, 0.0)))
    if clamped > MAX_CLAMPED_MASS * max(total, PMF_FLOOR):
        raise FusionError(f"clamped probability mass {clamped:.3g} exceeds tolerance; "
                          "increase the Monte Carlo budget")
    # floored entries stay at the floor; the rest absorb the renormalisation
    low = raw < PMF_FLOOR
    probs = raw.copy()
    probs[low] = PMF_FLOOR
    probs[~low] *= (1.0 - PMF_FLOOR * low.sum()) / probs[~low].sum()
    return PMFTable(probs, raw, total, clamped, mc_se)


@dataclass(frozen=True)
class DecisionPMF:
    """Joint decision probabilities under H1 (``P``) and H0 (``Q``)."""

    P: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P.probs if isinstance(self.P, PMFTable) else self.P, dtype=float)
        Q = np.asarray(self.Q.probs if isinstance(self.Q, PMFTable) else self.Q, dtype=float)
        if P.shape != Q.shape or P.size < 2 or P.size & (P.size - 1):
            raise ValueError("P and Q must be equal-length tables of size 2**L")
        if np.any(P <= 0) or np.any(Q <= 0):
            raise ValueError("PMF entries must be strictly positive")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", Q)

    @property
    def L(self) -> int:
        return int(round(math.log2(self.P.size)))

    @classmethod
    def product(cls, p, q) -> "DecisionPMF":
        """PMFs of conditionally independent sensors."""
        return cls(product_pmf(p), product_pmf(q))

    def to_dict(self) -> dict:
        L = self.L
        return {"L": L,
                "P": {pattern_key(s, L): float(self.P[s]) for s in range(self.P.size)},
                "Q": {pattern_key(s, L): float(self.Q[s]) for s in range(self.Q.size)}}

    @classmethod
    def from_dict(cls, doc) -> "DecisionPMF":
        L = int(doc["L"])
        keys = [pattern_key(s, L) for s in range(1 << L)]
        return cls(np.array([doc["P"][k] for k in keys]), np.array([doc["Q"][k] for k in keys]))


def product_pmf(rates) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    L = rates.size
    out = np.ones(1 << L)
    for s in range(1 << L):
        bits = pattern_bits(s, L)
        out[s] = np.prod(np.where(bits == 1, rates, 1 - rates))
    return out


# ---------------------------------------------------------------------------
# Weights and statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FusionWeights:
    """Coefficients ``A_E`` of the log statistic, indexed by subset mask."""

    A: np.ndarray

    @property
    def L(self) -> int:
        return int(round(math.log2(self.A.size)))

    def __getitem__(self, subset) -> float:
        return float(self.A[mask_of(subset, self.L)])

    def as_dict(self) -> dict:
        L = self.L
        return {subset_of(m, L): float(self.A[m]) for m in range(1, 1 << L)}

    def to_dict(self) -> dict:
        L = self.L
        return {pattern_key(m, L): float(self.A[m]) for m in range(1, 1 << L)}

    def pattern_values(self) -> np.ndarray:
        """``U_s``: the statistic contributed by one instant with pattern ``s``."""
        return _zeta_subsets(self.A, self.L)


def log_ratio_shift(pmf: DecisionPMF) -> np.ndarray:
    """``log(P_s/Q_s) - log(P_0/Q_0)`` for every pattern ``s``."""
    lr = np.log(pmf.P) - np.log(pmf.Q)
    return lr - lr[0]


def weights_from_pmf(pmf: DecisionPMF) -> FusionWeights:
    A = _mobius_subsets(log_ratio_shift(pmf), pmf.L)
    A[0] = 0.0
    return FusionWeights(A)


def eval_statistic(w: FusionWeights, decisions) -> float:
    """Sum over subsets E of ``A_E`` times the number of instants where all of E fired."""
    d = np.asarray(decisions)
    if d.ndim == 1:
        d = d[None, :]
    if d.shape[1] != w.L:
        raise ValueError(f"expected {w.L} sensors, got {d.shape[1]}")
    hist = np.bincount(patterns_to_index(d), minlength=1 << w.L).astype(float)
    counts = _zeta_supersets(hist, w.L)
    return float(np.dot(w.A[1:], counts[1:]))


def eval_statistic_batch(w: FusionWeights, decisions) -> np.ndarray:
    """Statistic per trial for a ``(trials, N, L)`` decision array."""
    d = np.asarray(decisions)
    U = w.pattern_values()
    return U[patterns_to_index(d.reshape(-1, d.shape[-1]))].reshape(d.shape[:-1]).sum(axis=-1)


def chair_varshney_weights(rates: LocalRates) -> tuple[np.ndarray, np.ndarray]:
    p, q = rates.p, rates.q
    return np.log(p / q), np.log((1 - p) / (1 - q))


def chair_varshney(rates: LocalRates, decisions) -> float:
    """Weighted decision sum of the conditionally independent optimum."""
    w1, w0 = chair_varshney_weights(rates)
    d = np.atleast_2d(np.asarray(decisions, dtype=float))
    return float(np.sum(d @ w1 + (1 - d) @ w0))


def chair_varshney_batch(rates: LocalRates, decisions) -> np.ndarray:
    w1, w0 = chair_varshney_weights(rates)
    d = np.asarray(decisions, dtype=float)
    return (d @ w1 + (1 - d) @ w0).sum(axis=-1)


@dataclass(frozen=True)
class AsymptoticStats:
    mu0: float
    var0: float
    mu1: float
    var1: float
    N: int


def asymptotic_stats(pmf: DecisionPMF, w: FusionWeights, N: int) -> AsymptoticStats:
    U = w.pattern_values()
    m0 = float(np.dot(U, pmf.Q))
    m1 = float(np.dot(U, pmf.P))
    v0 = max(float(np.dot(U * U, pmf.Q)) - m0 * m0, 0.0)
    v1 = max(float(np.dot(U * U, pmf.P)) - m1 * m1, 0.0)
    return AsymptoticStats(N * m0, N * v0, N * m1, N * v1, N)


@dataclass(frozen=True)
class OperatingPoint:
    gamma: float
    pd: float
    alpha: float


def np_operating_point(st: AsymptoticStats, alpha: float) -> OperatingPoint:
    """Gaussian-approximation threshold for false-alarm ``alpha`` and its P_D."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not st.var0 > 0:
        raise FusionError("statistic variance under H0 is zero")
    gamma = math.sqrt(st.var0) * float(special.ndtri(1 - alpha)) + st.mu0
    if st.var1 > 0:
        pd = float(special.ndtr(-(gamma - st.mu1) / math.sqrt(st.var1)))
    else:
        pd = float(st.mu1 > gamma)
    return OperatingPoint(gamma, pd, alpha)


def fuse(statistic, gamma):
    """Global decision: 1 when the statistic strictly exceeds ``gamma``."""
    out = np.asarray(statistic) > gamma
    return int(out) if out.ndim == 0 else out.astype(np.int8)


# ---------------------------------------------------------------------------
# End-to-end pipeline
# ---------------------------------------------------------------------------

@dataclass
class FusionModel:
    bank: QuantizerBank
    rates: LocalRates
    subsets_h1: object
    subsets_h0: object
    pmf: DecisionPMF
    weights: FusionWeights
    pmf_tables: tuple
    marginals_h1: list
    marginals_h0: list
    meta: dict = field(default_factory=dict)

    def stats(self, N: int) -> AsymptoticStats:
        return asymptotic_stats(self.pmf, self.weights, N)

    def operating_point(self, N: int, alpha: float) -> OperatingPoint:
        return np_operating_point(self.stats(N), alpha)

    def statistic(self, decisions) -> float:
        return eval_statistic(self.weights, decisions)


@dataclass
class PipelineResult:
    model: FusionModel
    stats: AsymptoticStats
    operating_point: OperatingPoint
    statistics: np.ndarray
    decisions: np.ndarray


def fit_marginals(z, kind: str = "kde"):
    z = np.asarray(z, dtype=float)
    if kind != "kde":
        raise ValueError(f"unknown marginal kind {kind!r}")
    return [KDEMarginal.fit(z[:, j]) for j in range(z.shape[1])]


def _subset_set(u, families, criterion, independent):
    if independent:
        return IndependenceEvaluators(u.shape[1])
    return build_subset_copula_set(u, families, criterion)


def train_fusion(train_h1, train_h0, beta, families=cop.KINDS, criterion: str = "aic",
                 marginals_h1=None, marginals_h0=None, mc_budget: int = 200_000, seed=0,
                 independent_h0: bool = False, independent_h1: bool = False) -> FusionModel:
    """Offline part of the efficient fusion rule.

    Thresholds and local rates come from the per-hypothesis marginals; a
    full vine plus residual sub-vines per hypothesis supply every subset
    copula; the decision PMFs and fusion weights follow.
    """
    z1 = np.asarray(train_h1, dtype=float)
    z0 = np.asarray(train_h0, dtype=float)
    if z1.ndim != 2 or z0.ndim != 2 or z1.shape[1] != z0.shape[1]:
        raise ValueError("training matrices must be N x L with equal L")
    L = z1.shape[1]
    m1 = marginals_h1 or fit_marginals(z1)
    m0 = marginals_h0 or fit_marginals(z0)
    bank = solve_thresholds(m0, beta)
    rates = local_rates(m1, m0, bank)
    if L == 1:
        s1 = s0 = IndependenceEvaluators(1)
    else:
        s1 = _subset_set(ecdf_transform(z1), families, criterion, independent_h1)
        s0 = _subset_set(ecdf_transform(z0), families, criterion, independent_h0)
    ss = _seedseq(seed).spawn(2)
    t1 = pmf_from_copulas(s1, rates.p, mc_budget, ss[0])
    t0 = pmf_from_copulas(s0, rates.q, mc_budget, ss[1])
    pmf = DecisionPMF(t1.probs, t0.probs)
    return FusionModel(bank, rates, s1, s0, pmf, weights_from_pmf(pmf), (t1, t0), m1, m0,
                       meta={"beta": np.broadcast_to(beta, (L,)).tolist(), "criterion": criterion,
                             "families": list(families), "mc_budget": mc_budget,
                             "seed": seed if isinstance(seed, int) else None})


def run_fusion_pipeline(train_h1, train_h0, beta, families=cop.KINDS, criterion: str = "aic",
                        test=None, decisions=None, alpha: float = 0.1, N: int | None = None,
                        mc_budget: int = 200_000, seed=0, **kw) -> PipelineResult:
    """Train, then fuse ``test`` observations (or pre-quantised ``decisions``).

    ``test``/``decisions`` may be ``(N, L)`` for one fusion window or
    ``(trials, N, L)`` for many.  The threshold comes from the Gaussian
    approximation at false-alarm ``alpha``.
    """
    model = train_fusion(train_h1, train_h0, beta, families, criterion, mc_budget=mc_budget,
                         seed=seed, **kw)
    if decisions is None and test is not None:
        decisions = quantize(test, model.bank)
    if decisions is None:
        raise ValueError("provide test observations or decisions")
    decisions = np.asarray(decisions)
    batch = decisions if decisions.ndim == 3 else decisions[None]
    N = N or batch.shape[1]
    st = model.stats(N)
    op = np_operating_point(st, alpha)
    stat = eval_statistic_batch(model.weights, batch)
    return PipelineResult(model, st, op, stat, fuse(stat, op.gamma))


def predicted_pd_grid(pmf_for_beta: Callable, betas: Sequence, N: int, alpha: float):
    """Coarse search of local false-alarm levels maximising predicted P_D.

    ``pmf_for_beta(beta_vector) -> DecisionPMF``.  Returns the best
    ``(beta_vector, OperatingPoint)``.  Experimental; not used by default.
    """
    best = None
    for combo in itertools.product(*betas):
        pmf = pmf_for_beta(np.array(combo))
        w = weights_from_pmf(pmf)
        try:
            op = np_operating_point(asymptotic_stats(pmf, w, N), alpha)
        except FusionError:
            continue
        if best is None or op.pd > best[1].pd:
            best = (np.array(combo), op)
    if best is None:
        raise FusionError("no admissible threshold combination")
    return best


def dump_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")
