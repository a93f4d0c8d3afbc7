"""Univariate marginal models, probability integral transforms and Kendall's tau."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats


class MarginalError(ValueError):
    pass


class ConstantInputWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class KDEMarginal:
    """Gaussian-kernel density estimate with Silverman's bandwidth.

    The CDF of a Gaussian mixture is itself a mixture of normal CDFs, so
    ``cdf``/``sf`` are exact rather than numerically integrated.
    """

    samples: np.ndarray
    bandwidth: float
    kind: str = field(default="kde", init=False)

    _CHUNK = 2048

    @classmethod
    def fit(cls, samples) -> "KDEMarginal":
        x = np.asarray(samples, dtype=float).ravel()
        if x.size < 10:
            raise MarginalError(f"need at least 10 samples, got {x.size}")
        if not np.all(np.isfinite(x)):
            raise MarginalError("samples must be finite")
        return cls(x.copy(), silverman_bandwidth(x))

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise MarginalError("bandwidth must be positive")

    def _mix(self, x, fn):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.empty(flat.shape)
        h = self.bandwidth
        for i in range(0, flat.size, self._CHUNK):
            z = (flat[i:i + self._CHUNK, None] - self.samples[None, :]) / h
            out[i:i + self._CHUNK] = fn(z).mean(axis=1)
        return out.reshape(x.shape)[()]

    def pdf(self, x):
        return self._mix(x, lambda z: np.exp(-0.5 * z * z)) / (self.bandwidth * np.sqrt(2 * np.pi))

    def cdf(self, x):
        return self._mix(x, special.ndtr)

    def sf(self, x):
        return self._mix(x, lambda z: special.ndtr(-z))

    def isf(self, q: float) -> float:
        if not 0 < q < 1:
            raise MarginalError("probability must lie in (0, 1)")
        h = self.bandwidth
        lo = self.samples.min() - 40 * h
        hi = self.samples.max() + 40 * h
        try:
            return float(optimize.brentq(lambda t: self.sf(t) - q, lo, hi, xtol=1e-12, rtol=1e-14,
                                         maxiter=500))
        except (ValueError, RuntimeError) as exc:
            raise MarginalError(f"inverse survival root find failed: {exc}") from None

    def ppf(self, p: float) -> float:
        return self.isf(1.0 - p)

    def to_dict(self) -> dict:
        return {"kind": "kde", "bandwidth": self.bandwidth, "samples": self.samples.tolist()}


@dataclass(frozen=True)
class GaussianMarginal:
    mu: float = 0.0
    sigma: float = 1.0
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self):
        if not self.sigma > 0:
            raise MarginalError("sigma must be positive")

    def pdf(self, x):
        return stats.norm.pdf(x, self.mu, self.sigma)

    def cdf(self, x):
        return stats.norm.cdf(x, self.mu, self.sigma)

    def sf(self, x):
        return stats.norm.sf(x, self.mu, self.sigma)

    def isf(self, q):
        return float(stats.norm.isf(q, self.mu, self.sigma))

    def ppf(self, p):
        return stats.norm.ppf(p, self.mu, self.sigma)

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class RayleighMarginal:
    xi: float = 1.0
    kind: str = field(default="rayleigh", init=False)

    def __post_init__(self):
        if not self.xi > 0:
            raise MarginalError("xi must be positive")

    def pdf(self, x):
        return stats.rayleigh.pdf(x, scale=self.xi)

    def cdf(self, x):
        return stats.rayleigh.cdf(x, scale=self.xi)

    def sf(self, x):
        return stats.rayleigh.sf(x, scale=self.xi)

    def isf(self, q):
        return float(stats.rayleigh.isf(q, scale=self.xi))

    def ppf(self, p):
        return stats.rayleigh.ppf(p, scale=self.xi)

    def to_dict(self) -> dict:
        return {"kind": "rayleigh", "xi": self.xi}


def marginal_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "kde":
        return KDEMarginal(np.asarray(d["samples"], dtype=float), float(d["bandwidth"]))
    if kind == "gaussian":
        return GaussianMarginal(float(d["mu"]), float(d["sigma"]))
    if kind == "rayleigh":
        return RayleighMarginal(float(d["xi"]))
    raise MarginalError(f"unknown marginal kind {kind!r}")


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float)
    sd = np.std(x, ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if not spread > 0:
        raise MarginalError("zero-variance samples")
    return 1.06 * spread * x.size ** (-0.2)


def kde_fit(samples) -> KDEMarginal:
    return KDEMarginal.fit(samples)


def ecdf_transform(z) -> np.ndarray:
    """Column-wise rank / (N + 1) with average ranks for ties."""
    z = np.asarray(z, dtype=float)
    one_d = z.ndim == 1
    z2 = z[:, None] if one_d else z
    u = stats.rankdata(z2, method="average", axis=0) / (z2.shape[0] + 1)
    return u[:, 0] if one_d else u


def _tau_pairwise(x, y, chunk=512):
    # O(N^2) tau-b by direct sign products
    n = len(x)
    s = 0.0
    tx = 0.0
    ty = 0.0
    for i in range(0, n, chunk):
        dx = np.sign(x[i:i + chunk, None] - x[None, :])
        dy = np.sign(y[i:i + chunk, None] - y[None, :])
        s += np.sum(dx * dy)
        tx += np.sum(dx != 0)
        ty += np.sum(dy != 0)
    # all sums count each unordered pair twice
    return s / np.sqrt(tx * ty)


def kendall_tau(x, y, method: str = "auto") -> float:
    """Kendall's tau-b.  Constant input returns 0 with a warning.

    ``method`` selects the pairwise O(N^2) count ("pairwise"), scipy's
    merge-sort count ("merge"), or "auto" (merge-sort).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if x.size < 2:
        raise ValueError("need at least 2 observations")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        warnings.warn("constant input; Kendall's tau set to 0", ConstantInputWarning, stacklevel=2)
        return 0.0
    if method == "pairwise":
        return float(_tau_pairwise(x, y))
    if method not in ("auto", "merge"):
        raise ValueError(f"unknown method {method!r}")
    return float(stats.kendalltau(x, y).statistic)


def tau_matrix(u, method: str = "auto") -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] < 2:
        raise ValueError("need an N x L matrix with L >= 2")
    L = u.shape[1]
    t = np.eye(L)
    for i in range(L):
        for j in range(i + 1, L):
            t[i, j] = t[j, i] = kendall_tau(u[:, i], u[:, j], method=method)
    return t


def read_csv(path) -> np.ndarray:
    """Read a raw-observation CSV with header ``s1,...,sL``."""
    with open(path) as fh:
        header = fh.readline().strip()
        names = [h.strip() for h in header.split(",")] if header else []
        expected = [f"s{i + 1}" for i in range(len(names))]
        if not names or names != expected:
            raise MarginalError(f"{path}: header must be s1,...,sL, got {header!r}")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise MarginalError(f"{path}: {exc}") from None
    if data.size == 0:
        raise MarginalError(f"{path}: no data rows")
    if data.shape[1] != len(names):
        raise MarginalError(f"{path}: {data.shape[1]} columns but {len(names)} header names")
    if not np.all(np.isfinite(data)):
        raise MarginalError(f"{path}: non-finite values")
    return data


def write_csv(path, z, fmt: str = "%.17g") -> None:
    z = np.atleast_2d(np.asarray(z))
    header = ",".join(f"s{i + 1}" for i in range(z.shape[1]))
    np.savetxt(path, z, delimiter=",", header=header, comments="", fmt=fmt)
