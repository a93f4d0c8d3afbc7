"""
Parametric bivariate copulas and closed-form multivariate copulas.

Every bivariate family is implemented in its unrotated form; rotations by
90, 180 and 270 degrees are derived from it.  The conditional distribution
``hfunc(u, v)`` is ``dC(u, v)/dv``, i.e. the distribution of ``U`` given
``V = v``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate, optimize, special, stats

EPS = 1e-10

KINDS = ("indep", "gauss", "t", "clayton", "gumbel", "frank", "joe")
ROTATABLE = frozenset({"clayton", "gumbel", "joe"})
ROTATIONS = (0, 90, 180, 270)
N_PARAMS = {"indep": 0, "gauss": 1, "t": 2, "clayton": 1, "gumbel": 1, "frank": 1, "joe": 1}

# Search domains for the one-parameter fits.
_BOUNDS = {
    "gauss": (-0.9999, 0.9999),
    "clayton": (1e-4, 28.0),
    "gumbel": (1.0, 17.0),
    "frank": (1e-4, 35.0),
    "joe": (1.0 + 1e-6, 30.0),
}
_NU_GRID = tuple(range(3, 31))


class CopulaDomainError(ValueError):
    """Raised when copula parameters fall outside the family domain."""


class CopulaFitError(RuntimeError):
    """Raised when no candidate copula could be fitted."""


class CopulaFamily(NamedTuple):
    kind: str
    rotation: int = 0

    @property
    def code(self) -> str:
        return self.kind if self.rotation == 0 else f"{self.kind}@{self.rotation}"

    @classmethod
    def parse(cls, code: str) -> "CopulaFamily":
        kind, _, rot = code.strip().partition("@")
        rotation = int(rot) if rot else 0
        if kind not in KINDS:
            raise CopulaDomainError(f"unknown copula family {code!r}")
        if rotation not in ROTATIONS:
            raise CopulaDomainError(f"rotation must be one of {ROTATIONS}, got {rotation}")
        if rotation and kind not in ROTATABLE:
            raise CopulaDomainError(f"family {kind!r} does not take a rotation")
        return cls(kind, rotation)

    @property
    def order_key(self) -> tuple[int, int]:
        return (KINDS.index(self.kind), self.rotation)


def _clip(x):
    return np.clip(np.asarray(x, dtype=float), EPS, 1.0 - EPS)


# ---------------------------------------------------------------------------
# Bivariate normal and Student-t lower orthant probabilities
# ---------------------------------------------------------------------------

def _bvn_lower(h, k, r):
    """P(X < h, Y < k) for a standard bivariate normal with correlation r."""
    h, k = np.broadcast_arrays(np.asarray(h, float), np.asarray(k, float))
    s = np.sqrt((1.0 - r) * (1.0 + r))
    with np.errstate(divide="ignore", invalid="ignore"):
        ah = np.where(h == 0, np.where(k >= 0, np.inf, -np.inf), (k - r * h) / (h * s))
        ak = np.where(k == 0, np.where(h >= 0, np.inf, -np.inf), (h - r * k) / (k * s))
    hk = h * k
    delta = np.where((hk < 0) | ((hk == 0) & (h + k < 0)), 0.5, 0.0)
    out = 0.5 * special.ndtr(h) + 0.5 * special.ndtr(k) - special.owens_t(h, ah) \
        - special.owens_t(k, ak) - delta
    both = (h == 0) & (k == 0)
    if np.any(both):
        out = np.where(both, 0.25 + np.arcsin(r) / (2 * np.pi), out)
    return np.clip(out, 0.0, 1.0)


def _bvt_lower(nu: int, dh, dk, r):
    """P(X < dh, Y < dk) for a standard bivariate t with integer dof.

    Dunnett & Sobel series as arranged by Genz; exact for integer ``nu``.
    """
    dh, dk = np.broadcast_arrays(np.asarray(dh, float), np.asarray(dk, float))
    ors = 1.0 - r * r
    hrk = dh - r * dk
    krh = dk - r * dh
    xnhk = hrk**2 / (hrk**2 + ors * (nu + dk**2))
    xnkh = krh**2 / (krh**2 + ors * (nu + dh**2))
    hs = np.where(hrk < 0, -1.0, 1.0)
    ks = np.where(krh < 0, -1.0, 1.0)
    tpi = 2 * np.pi
    if nu % 2 == 0:
        bvt = np.full(dh.shape, np.arctan2(np.sqrt(ors), -r) / tpi)
        gmph = dh / np.sqrt(16 * (nu + dh**2))
        gmpk = dk / np.sqrt(16 * (nu + dk**2))
        btnckh = 2 * np.arctan2(np.sqrt(xnkh), np.sqrt(1 - xnkh)) / np.pi
        btpdkh = 2 * np.sqrt(xnkh * (1 - xnkh)) / np.pi
        btnchk = 2 * np.arctan2(np.sqrt(xnhk), np.sqrt(1 - xnhk)) / np.pi
        btpdhk = 2 * np.sqrt(xnhk * (1 - xnhk)) / np.pi
        for j in range(1, nu // 2 + 1):
            bvt = bvt + gmph * (1 + ks * btnckh) + gmpk * (1 + hs * btnchk)
            btnckh = btnckh + btpdkh
            btpdkh = 2 * j * btpdkh * (1 - xnkh) / (2 * j + 1)
            btnchk = btnchk + btpdhk
            btpdhk = 2 * j * btpdhk * (1 - xnhk) / (2 * j + 1)
            gmph = gmph * (2 * j - 1) / (2 * j * (1 + dh**2 / nu))
            gmpk = gmpk * (2 * j - 1) / (2 * j * (1 + dk**2 / nu))
    else:
        snu = np.sqrt(nu)
        qhrk = np.sqrt(dh**2 + dk**2 - 2 * r * dh * dk + nu * ors)
        hkrn = dh * dk + r * nu
        hkn = dh * dk - nu
        hpk = dh + dk
        bvt = np.arctan2(-snu * (hkn * qhrk + hpk * hkrn), hkn * hkrn - nu * hpk * qhrk) / tpi
        bvt = np.where(bvt < -1e-15, bvt + 1, bvt)
        gmph = dh / (tpi * snu * (1 + dh**2 / nu))
        gmpk = dk / (tpi * snu * (1 + dk**2 / nu))
        btnckh = np.sqrt(xnkh)
        btpdkh = btnckh
        btnchk = np.sqrt(xnhk)
        btpdhk = btnchk
        for j in range(1, (nu - 1) // 2 + 1):
            bvt = bvt + gmph * (1 + ks * btnckh) + gmpk * (1 + hs * btnchk)
            btpdkh = (2 * j - 1) * btpdkh * (1 - xnkh) / (2 * j)
            btnckh = btnckh + btpdkh
            btpdhk = (2 * j - 1) * btpdhk * (1 - xnhk) / (2 * j)
            btnchk = btnchk + btpdhk
            gmph = gmph * 2 * j / ((2 * j + 1) * (1 + dh**2 / nu))
            gmpk = gmpk * 2 * j / ((2 * j + 1) * (1 + dk**2 / nu))
    return np.clip(bvt, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Unrotated families.  All take clipped u, v and a parameter tuple.
# ---------------------------------------------------------------------------

def _cdf0(kind, p, u, v):
    if kind == "indep":
        return u * v
    if kind == "gauss":
        return _bvn_lower(special.ndtri(u), special.ndtri(v), p[0])
    if kind == "t":
        nu = int(p[1])
        return _bvt_lower(nu, stats.t.ppf(u, nu), stats.t.ppf(v, nu), p[0])
    if kind == "clayton":
        th = p[0]
        return np.exp(-_clayton_logs(th, u, v) / th)
    if kind == "gumbel":
        th = p[0]
        return np.exp(-np.exp(_gumbel_logs(th, u, v) / th))
    if kind == "frank":
        th = p[0]
        return -np.log1p(np.expm1(-th * u) * np.expm1(-th * v) / np.expm1(-th)) / th
    if kind == "joe":
        th = p[0]
        a, b = (1 - u) ** th, (1 - v) ** th
        return 1 - (a + b - a * b) ** (1 / th)
    raise CopulaDomainError(kind)


def _clayton_logs(th, u, v):
    # log(u^-th + v^-th - 1) without overflow
    a = -th * np.log(u)
    b = -th * np.log(v)
    m = np.maximum(a, b)
    return m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))


def _gumbel_logs(th, u, v):
    # log((-log u)^th + (-log v)^th)
    return np.logaddexp(th * np.log(-np.log(u)), th * np.log(-np.log(v)))


def _logpdf0(kind, p, u, v):
    if kind == "indep":
        return np.zeros(np.broadcast(u, v).shape)
    if kind == "gauss":
        r = p[0]
        x, y = special.ndtri(u), special.ndtri(v)
        om = 1 - r * r
        return -0.5 * np.log(om) - (r * r * (x * x + y * y) - 2 * r * x * y) / (2 * om)
    if kind == "t":
        r, nu = p[0], float(p[1])
        x, y = stats.t.ppf(u, nu), stats.t.ppf(v, nu)
        om = 1 - r * r
        const = (special.gammaln((nu + 2) / 2) + special.gammaln(nu / 2)
                 - 2 * special.gammaln((nu + 1) / 2) - 0.5 * np.log(om))
        q = (x * x + y * y - 2 * r * x * y) / (nu * om)
        return (const - (nu + 2) / 2 * np.log1p(q)
                + (nu + 1) / 2 * (np.log1p(x * x / nu) + np.log1p(y * y / nu)))
    if kind == "clayton":
        th = p[0]
        return (np.log1p(th) - (1 + th) * (np.log(u) + np.log(v))
                - (2 + 1 / th) * _clayton_logs(th, u, v))
    if kind == "gumbel":
        th = p[0]
        x, y = -np.log(u), -np.log(v)
        ls = _gumbel_logs(th, u, v)
        a = np.exp(ls / th)
        return (-a + x + y + (th - 1) * (np.log(x) + np.log(y))
                + (1 / th - 2) * ls + np.log(a + th - 1))
    if kind == "frank":
        th = p[0]
        den = -np.expm1(-th) - (-np.expm1(-th * u)) * (-np.expm1(-th * v))
        return np.log(th * -np.expm1(-th)) - th * (u + v) - 2 * np.log(np.abs(den))
    if kind == "joe":
        th = p[0]
        ub, vb = 1 - u, 1 - v
        a, b = ub**th, vb**th
        s = a + b - a * b
        return ((1 / th - 2) * np.log(s) + (th - 1) * (np.log(ub) + np.log(vb))
                + np.log(th - 1 + s))
    raise CopulaDomainError(kind)


def _h0(kind, p, u, v):
    """dC(u, v)/dv for the unrotated family."""
    if kind == "indep":
        return np.broadcast_to(u, np.broadcast(u, v).shape).astype(float)
    if kind == "gauss":
        r = p[0]
        return special.ndtr((special.ndtri(u) - r * special.ndtri(v)) / np.sqrt(1 - r * r))
    if kind == "t":
        r, nu = p[0], float(p[1])
        x, y = stats.t.ppf(u, nu), stats.t.ppf(v, nu)
        scale = np.sqrt((nu + y * y) * (1 - r * r) / (nu + 1))
        return stats.t.cdf((x - r * y) / scale, nu + 1)
    if kind == "clayton":
        th = p[0]
        return np.exp(-(th + 1) * np.log(v) - (1 / th + 1) * _clayton_logs(th, u, v))
    if kind == "gumbel":
        th = p[0]
        y = -np.log(v)
        ls = _gumbel_logs(th, u, v)
        return np.exp(-np.exp(ls / th) + y + (th - 1) * np.log(y) + (1 / th - 1) * ls)
    if kind == "frank":
        th = p[0]
        a = np.expm1(-th * u)
        return np.exp(-th * v) * a / (np.expm1(-th) + a * np.expm1(-th * v))
    if kind == "joe":
        th = p[0]
        ub, vb = 1 - u, 1 - v
        a, b = ub**th, vb**th
        s = a + b - a * b
        return s ** (1 / th - 1) * vb ** (th - 1) * (1 - a)
    raise CopulaDomainError(kind)


def _bisect_hinv(kind, p, w, v, iters=64):
    # h is increasing in u; bisect on logit(u) over the clipped range
    w, v = np.broadcast_arrays(np.asarray(w, float), np.asarray(v, float))
    lim = np.log((1 - EPS) / EPS)
    lo = np.full(w.shape, -lim)
    hi = np.full(w.shape, lim)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = _h0(kind, p, special.expit(mid), v) < w
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return special.expit(0.5 * (lo + hi))


def _hinv0(kind, p, w, v):
    if kind == "indep":
        return np.broadcast_to(w, np.broadcast(w, v).shape).astype(float)
    if kind == "gauss":
        r = p[0]
        return special.ndtr(special.ndtri(w) * np.sqrt(1 - r * r) + r * special.ndtri(v))
    if kind == "t":
        r, nu = p[0], float(p[1])
        y = stats.t.ppf(v, nu)
        scale = np.sqrt((nu + y * y) * (1 - r * r) / (nu + 1))
        return stats.t.cdf(r * y + scale * stats.t.ppf(w, nu + 1), nu)
    if kind == "clayton":
        th = p[0]
        b = -th * np.log(v)
        e = np.expm1(-th / (th + 1) * np.log(w))
        with np.errstate(divide="ignore"):
            log_inner = np.logaddexp(b + np.log(e), 0.0)
        return np.exp(-log_inner / th)
    if kind == "frank":
        th = p[0]
        a = w * np.expm1(-th) / (np.exp(-th * v) - w * np.expm1(-th * v))
        return -np.log1p(a) / th
    return _bisect_hinv(kind, p, w, v)


def _debye1(x: float) -> float:
    if x == 0:
        return 1.0
    val, _ = integrate.quad(lambda t: t / np.expm1(t) if t > 0 else 1.0, 0.0, x)
    return val / x


def _tau0(kind, p) -> float:
    if kind == "indep":
        return 0.0
    if kind in ("gauss", "t"):
        return 2.0 / np.pi * np.arcsin(p[0])
    if kind == "clayton":
        return p[0] / (p[0] + 2.0)
    if kind == "gumbel":
        return 1.0 - 1.0 / p[0]
    if kind == "frank":
        th = abs(p[0])
        tau = 1.0 - 4.0 / th * (1.0 - _debye1(th))
        return float(np.sign(p[0]) * tau)
    if kind == "joe":
        th = p[0]
        if th == 1.0:
            return 0.0

        def ratio(t):
            s = (1.0 - t) ** th
            return np.log1p(-s) * (1.0 - s) / (th * (1.0 - t) ** (th - 1.0))

        val, _ = integrate.quad(ratio, 0.0, 1.0, limit=200)
        return float(1.0 + 4.0 * val)
    raise CopulaDomainError(kind)


def _check_params(kind: str, params: tuple) -> None:
    need = N_PARAMS[kind]
    if len(params) != need:
        raise CopulaDomainError(f"{kind} takes {need} parameter(s), got {len(params)}")
    if any(not np.isfinite(x) for x in params):
        raise CopulaDomainError(f"non-finite parameter for {kind}: {params}")
    if kind in ("gauss", "t") and not -1.0 < params[0] < 1.0:
        raise CopulaDomainError(f"correlation must lie in (-1, 1), got {params[0]}")
    if kind == "t" and (params[1] < 3 or params[1] != int(params[1])):
        raise CopulaDomainError(f"t copula needs integer nu >= 3, got {params[1]}")
    if kind == "clayton" and not params[0] > 0:
        raise CopulaDomainError(f"clayton needs phi > 0 (use a rotation), got {params[0]}")
    if kind in ("gumbel", "joe") and not params[0] >= 1:
        raise CopulaDomainError(f"{kind} needs phi >= 1, got {params[0]}")
    if kind == "frank" and params[0] == 0:
        raise CopulaDomainError("frank needs phi != 0")


@dataclass(frozen=True)
class BivariateCopula:
    """A bivariate copula: family kind, parameters and rotation.

    Parameters
    ----------
    kind : str
        One of ``indep, gauss, t, clayton, gumbel, frank, joe``.
    params : tuple of float
        ``(rho,)`` for gauss, ``(rho, nu)`` for t, ``(phi,)`` for the
        Archimedean families and ``()`` for independence.
    rotation : int
        Counter-clockwise rotation in degrees; only for clayton, gumbel, joe.
    """

    kind: str = "indep"
    params: tuple = ()
    rotation: int = 0

    def __post_init__(self):
        fam = CopulaFamily.parse(f"{self.kind}@{self.rotation}" if self.rotation else self.kind)
        params = tuple(float(x) for x in np.atleast_1d(self.params)) if len(self.params) else ()
        if fam.kind == "t" and params:
            params = (params[0], float(int(round(params[1]))) if abs(params[1] - round(params[1])) < 1e-9 else params[1])
        object.__setattr__(self, "params", params)
        _check_params(self.kind, params)

    @classmethod
    def from_code(cls, code: str, params: Sequence[float] = ()) -> "BivariateCopula":
        fam = CopulaFamily.parse(code)
        return cls(fam.kind, tuple(params), fam.rotation)

    @property
    def family(self) -> CopulaFamily:
        return CopulaFamily(self.kind, self.rotation)

    @property
    def code(self) -> str:
        return self.family.code

    @property
    def n_params(self) -> int:
        return N_PARAMS[self.kind]

    def __repr__(self):
        return f"BivariateCopula({self.code!r}, {self.params})"

    def swap(self) -> "BivariateCopula":
        """Copula of (V, U) when this is the copula of (U, V)."""
        if self.rotation in (90, 270):
            return BivariateCopula(self.kind, self.params, 360 - self.rotation)
        return self

    def cdf(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        uc, vc = _clip(u), _clip(v)
        k, p, rot = self.kind, self.params, self.rotation
        if rot == 0:
            out = _cdf0(k, p, uc, vc)
        elif rot == 90:
            out = vc - _cdf0(k, p, 1 - uc, vc)
        elif rot == 180:
            out = uc + vc - 1 + _cdf0(k, p, 1 - uc, 1 - vc)
        else:
            out = uc - _cdf0(k, p, uc, 1 - vc)
        out = np.clip(out, np.maximum(uc + vc - 1, 0.0), np.minimum(uc, vc))
        out = np.where(u >= 1, v, out)
        out = np.where(v >= 1, u, out)
        out = np.where((u <= 0) | (v <= 0), 0.0, out)
        return out[()] if out.ndim == 0 else out

    def logpdf(self, u, v):
        u, v = _clip(u), _clip(v)
        k, p, rot = self.kind, self.params, self.rotation
        if rot == 90:
            u = 1 - u
        elif rot == 180:
            u, v = 1 - u, 1 - v
        elif rot == 270:
            v = 1 - v
        out = _logpdf0(k, p, u, v)
        return out[()] if np.ndim(out) == 0 else out

    def pdf(self, u, v):
        return np.exp(self.logpdf(u, v))

    def hfunc(self, u, v):
        """Conditional distribution F(u | v) = dC(u, v)/dv."""
        u = np.asarray(u, dtype=float)
        uc, vc = _clip(u), _clip(v)
        k, p, rot = self.kind, self.params, self.rotation
        if rot == 0:
            out = _h0(k, p, uc, vc)
        elif rot == 90:
            out = 1 - _h0(k, p, 1 - uc, vc)
        elif rot == 180:
            out = 1 - _h0(k, p, 1 - uc, 1 - vc)
        else:
            out = _h0(k, p, uc, 1 - vc)
        out = np.clip(out, 0.0, 1.0)
        out = np.where(u <= 0, 0.0, np.where(u >= 1, 1.0, out))
        return out[()] if out.ndim == 0 else out

    def hfunc2(self, u, v):
        """Conditional distribution F(v | u) = dC(u, v)/du."""
        return self.swap().hfunc(v, u)

    def hinv(self, w, v):
        """Inverse of ``hfunc`` in its first argument."""
        w = np.asarray(w, dtype=float)
        wc, vc = _clip(w), _clip(v)
        k, p, rot = self.kind, self.params, self.rotation
        if rot == 0:
            out = _hinv0(k, p, wc, vc)
        elif rot == 90:
            out = 1 - _hinv0(k, p, 1 - wc, vc)
        elif rot == 180:
            out = 1 - _hinv0(k, p, 1 - wc, 1 - vc)
        else:
            out = _hinv0(k, p, wc, 1 - vc)
        out = np.clip(out, 0.0, 1.0)
        out = np.where(w <= 0, 0.0, np.where(w >= 1, 1.0, out))
        return out[()] if out.ndim == 0 else out

    def hinv2(self, w, u):
        """Inverse of ``hfunc2`` in its second argument."""
        return self.swap().hinv(w, u)

    def tau(self) -> float:
        t = _tau0(self.kind, self.params)
        return -t if self.rotation in (90, 270) else t

    def loglik(self, u, v) -> float:
        return float(np.sum(self.logpdf(u, v)))

    def sample(self, n: int, rng=None) -> np.ndarray:
        rng = np.random.default_rng(rng)
        v = rng.random(n)
        u = self.hinv(rng.random(n), v)
        return np.column_stack([u, v])

    def to_dict(self) -> dict:
        return {"family": self.code, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "BivariateCopula":
        return cls.from_code(d["family"], d.get("params", ()))


INDEPENDENCE = BivariateCopula()


def cdf(c: BivariateCopula, u, v):
    return c.cdf(u, v)


def pdf(c: BivariateCopula, u, v):
    return c.pdf(u, v)


def h_func(c: BivariateCopula, u, v):
    return c.hfunc(u, v)


def h_inverse(c: BivariateCopula, w, v):
    return c.hinv(w, v)


def tau_of(c: BivariateCopula) -> float:
    """Population Kendall's tau of ``c``."""
    return c.tau()


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    copula: BivariateCopula
    loglik: float
    aic: float
    bic: float
    n: int

    def score(self, criterion: str) -> float:
        """Smaller is better for every criterion."""
        criterion = criterion.lower()
        if criterion == "aic":
            return self.aic
        if criterion == "bic":
            return self.bic
        if criterion == "mle":
            return -self.loglik
        raise ValueError(f"unknown criterion {criterion!r}")


def _fit_result(cop: BivariateCopula, loglik: float, n: int) -> FitResult:
    q = cop.n_params
    # AIC/BIC as -loglik + penalty (no factor 2 on the likelihood term)
    return FitResult(cop, float(loglik), float(-loglik + 2 * q), float(-loglik + q * np.log(n)), n)


def _empirical_tau(u, v) -> float:
    t = stats.kendalltau(u, v).statistic
    return 0.0 if not np.isfinite(t) else float(t)


def tau_inversion(family: CopulaFamily, tau: float) -> tuple:
    """Parameters of ``family`` whose Kendall's tau is closest to ``tau``."""
    kind, rot = family
    if kind == "indep":
        return ()
    if kind in ("gauss", "t"):
        rho = float(np.clip(np.sin(np.pi * tau / 2), *_BOUNDS["gauss"]))
        return (rho,) if kind == "gauss" else (rho, 4.0)
    # rotated families see the dependence with the sign flipped
    t = -tau if rot in (90, 270) else tau
    lo, hi = _BOUNDS[kind]
    if kind == "frank":
        if abs(t) < 1e-6:
            return (lo,)
        a = abs(t)
        f = lambda th: _tau0("frank", (th,)) - a  # noqa: E731
        th = hi if f(hi) < 0 else optimize.brentq(f, lo, hi, xtol=1e-10)
        return (float(np.copysign(th, t)),)
    t = max(t, 1e-6)
    if kind == "clayton":
        th = 2 * t / (1 - t) if t < 1 else hi
    elif kind == "gumbel":
        th = 1 / (1 - t) if t < 1 else hi
    else:
        f = lambda th: _tau0("joe", (th,)) - t  # noqa: E731
        th = hi if f(hi) < 0 else (lo if f(lo) > 0 else optimize.brentq(f, lo, hi, xtol=1e-10))
    return (float(np.clip(th, lo, hi)),)


def _loglik(family, params, u, v):
    try:
        cop = BivariateCopula(family.kind, params, family.rotation)
    except CopulaDomainError:
        return -np.inf
    ll = float(np.sum(cop.logpdf(u, v)))
    return ll if np.isfinite(ll) else -np.inf


def _t_profile(nu, x, y):
    # t copula log-likelihood in rho with the quantiles held fixed
    nu = float(nu)
    marg = (nu + 1) / 2 * np.sum(np.log1p(x * x / nu) + np.log1p(y * y / nu))
    sxx = x * x + y * y
    sxy = x * y
    k = (special.gammaln((nu + 2) / 2) + special.gammaln(nu / 2)
         - 2 * special.gammaln((nu + 1) / 2))
    n = len(x)

    def ll(r):
        om = 1 - r * r
        q = (sxx - 2 * r * sxy) / (nu * om)
        return float(n * (k - 0.5 * np.log(om)) - (nu + 2) / 2 * np.sum(np.log1p(q)) + marg)

    return ll


def _maximize_1d(fun, lo, hi, x0):
    res = optimize.minimize_scalar(lambda x: -fun(x), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-6})
    best_x, best_f = x0, fun(x0)
    if np.isfinite(res.fun) and -res.fun > best_f:
        best_x, best_f = float(res.x), -float(res.fun)
    return best_x, best_f


def fit_mle(family, u, v=None, tau: float | None = None) -> FitResult:
    """Maximum likelihood fit of one copula family to pseudo-observations.

    ``u`` may be an ``(n, 2)`` array, or ``u`` and ``v`` two vectors.  The
    search starts at the Kendall's tau inversion of the sample and never
    returns a fit with lower likelihood than that starting point.
    """
    if isinstance(family, str):
        family = CopulaFamily.parse(family)
    if v is None:
        arr = np.asarray(u, dtype=float)
        u, v = arr[:, 0], arr[:, 1]
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = len(u)
    if n < 10:
        raise CopulaFitError(f"need at least 10 pairs, got {n}")
    if np.ptp(u) == 0 or np.ptp(v) == 0:
        raise CopulaFitError("degenerate input: constant margin")
    if np.any((u <= 0) | (u >= 1) | (v <= 0) | (v >= 1)):
        raise CopulaFitError("pseudo-observations must lie strictly inside (0, 1)")
    if tau is None:
        tau = _empirical_tau(u, v)
    kind = family.kind
    if kind == "indep":
        return _fit_result(INDEPENDENCE, 0.0, n)
    start = tau_inversion(family, tau)
    if kind == "t":
        best = (None, -np.inf)
        uc, vc = _clip(u), _clip(v)
        for nu in _NU_GRID:
            ll_nu = _t_profile(nu, stats.t.ppf(uc, nu), stats.t.ppf(vc, nu))
            rho, ll = _maximize_1d(ll_nu, *_BOUNDS["gauss"], start[0])
            if ll > best[1]:
                best = ((rho, float(nu)), ll)
        params, ll = best
    elif kind == "frank":
        lo, hi = _BOUNDS["frank"]
        f = lambda th: _loglik(family, (th,), u, v)  # noqa: E731
        x0 = start[0]
        pos = _maximize_1d(f, lo, hi, x0 if x0 > 0 else lo)
        neg = _maximize_1d(f, -hi, -lo, x0 if x0 < 0 else -lo)
        th, ll = pos if pos[1] >= neg[1] else neg
        if ll < f(x0):
            th, ll = x0, f(x0)
        params = (th,)
    else:
        lo, hi = _BOUNDS[kind]
        th, ll = _maximize_1d(lambda th: _loglik(family, (th,), u, v), lo, hi, start[0])
        params = (th,)
    if not np.isfinite(ll):
        raise CopulaFitError(f"likelihood is not finite for {family.code}")
    return _fit_result(BivariateCopula(kind, params, family.rotation), ll, n)


def expand_candidates(families: Sequence, tau: float) -> list[CopulaFamily]:
    """Resolve family codes to concrete (kind, rotation) candidates.

    A bare rotatable kind expands to the two rotations whose dependence
    sign matches ``tau``; an explicit ``kind@rot`` is kept as given.
    """
    out = []
    for f in families:
        if isinstance(f, CopulaFamily):
            out.append(f)
            continue
        code = f.strip()
        fam = CopulaFamily.parse(code)
        if fam.kind in ROTATABLE and "@" not in code:
            rots = (0, 180) if tau >= 0 else (90, 270)
            out.extend(CopulaFamily(fam.kind, r) for r in rots)
        else:
            out.append(fam)
    return sorted(set(out), key=lambda f: f.order_key)


def select_best(u, v=None, families: Sequence = KINDS, criterion: str = "aic",
                tau: float | None = None) -> FitResult:
    """Fit every candidate family and keep the best one under ``criterion``.

    Ties go to the earlier family in the fixed order indep, gauss, t,
    clayton, gumbel, frank, joe (rotations ascending).
    """
    if v is None:
        arr = np.asarray(u, dtype=float)
        u, v = arr[:, 0], arr[:, 1]
    if not len(families):
        raise ValueError("empty candidate set")
    if tau is None:
        tau = _empirical_tau(u, v)
    best, failures = None, {}
    for fam in expand_candidates(families, tau):
        try:
            res = fit_mle(fam, u, v, tau=tau)
        except (CopulaFitError, CopulaDomainError, FloatingPointError) as exc:
            failures[fam.code] = str(exc)
            continue
        if best is None or res.score(criterion) < best.score(criterion):
            best = res
    if best is None:
        detail = "; ".join(f"{k}: {msg}" for k, msg in failures.items())
        raise CopulaFitError(f"all candidate fits failed ({detail})")
    return best


# ---------------------------------------------------------------------------
# Multivariate closed forms
# ---------------------------------------------------------------------------

def mv_archimedean_cdf(family: str, phi: float, u) -> np.ndarray:
    """CDF of a d-dimensional exchangeable Archimedean copula.

    Evaluated through the generator as ``psi^{-1}(sum psi(u_l))``.
    ``family`` is one of ``clayton, frank, gumbel, indep``.
    """
    u = np.asarray(u, dtype=float)
    if u.shape[-1] < 2:
        raise CopulaDomainError("dimension must be at least 2")
    d = u.shape[-1]
    family = {"independent": "indep", "independence": "indep"}.get(family.lower(), family.lower())
    zero = np.any(u <= 0, axis=-1)
    uc = np.clip(u, EPS, 1.0)
    if family == "indep":
        out = np.prod(uc, axis=-1)
    elif family == "clayton":
        if phi == 0 or phi < -1 / (d - 1):
            raise CopulaDomainError(f"clayton in dimension {d} needs phi >= {-1 / (d - 1):.4g}, phi != 0")
        s = np.sum(uc ** (-phi), axis=-1) - (d - 1)
        with np.errstate(divide="ignore"):
            out = np.maximum(s, 0.0) ** (-1 / phi)
    elif family == "frank":
        if phi == 0 or (d > 2 and phi < 0):
            raise CopulaDomainError("frank needs phi != 0 (phi > 0 beyond dimension 2)")
        num = np.prod(np.expm1(-phi * uc), axis=-1)
        out = -np.log1p(num / np.expm1(-phi) ** (d - 1)) / phi
    elif family == "gumbel":
        if phi < 1:
            raise CopulaDomainError("gumbel needs phi >= 1")
        s = np.sum((-np.log(uc)) ** phi, axis=-1)
        out = np.exp(-s ** (1 / phi))
    else:
        raise CopulaDomainError(f"unsupported archimedean family {family!r}")
    out = np.where(zero, 0.0, out)
    return out[()] if np.ndim(out) == 0 else out


def _check_corr(corr) -> np.ndarray:
    corr = np.asarray(corr, dtype=float)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise CopulaDomainError("correlation matrix must be square")
    if not np.allclose(corr, corr.T) or not np.allclose(np.diag(corr), 1.0):
        raise CopulaDomainError("correlation matrix must be symmetric with unit diagonal")
    try:
        np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        raise CopulaDomainError("correlation matrix is not positive definite") from None
    return corr


def mv_gaussian_copula_pdf(corr, u) -> np.ndarray:
    """Density of the Gaussian copula with correlation matrix ``corr``."""
    corr = _check_corr(corr)
    x = special.ndtri(_clip(u))
    chol = np.linalg.cholesky(corr)
    logdet = 2 * np.sum(np.log(np.diag(chol)))
    z = np.linalg.solve(chol, np.atleast_2d(x).T)
    quad = np.sum(z * z, axis=0) - np.sum(np.atleast_2d(x) ** 2, axis=1)
    out = np.exp(-0.5 * logdet - 0.5 * quad)
    return out[0] if np.ndim(u) == 1 else out


def mv_t_copula_pdf(corr, nu: float, u) -> np.ndarray:
    """Density of the Student-t copula (its CDF is not provided)."""
    corr = _check_corr(corr)
    if nu < 3:
        raise CopulaDomainError("t copula needs nu >= 3")
    x = stats.t.ppf(_clip(u), nu)
    joint = stats.multivariate_t(shape=corr, df=nu).logpdf(x)
    out = np.exp(joint - np.sum(stats.t.logpdf(x, nu), axis=-1))
    return out
