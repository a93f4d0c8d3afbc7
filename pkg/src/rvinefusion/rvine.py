"""
Regular vine copulas in array form.

Arrays are lower-triangular ``d x d`` integer matrices with labels ``1..d``.
With 0-based indices, column ``k`` and row ``i > k`` hold the pair copula of
``(M[k, k], M[i, k])`` given ``{M[i+1, k], ..., M[d-1, k]}``, which lives in
tree ``d - i``.  The copula stored at ``(i, k)`` is oriented so that its
first argument is the diagonal variable ``M[k, k]``.
"""
from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.stats import qmc

from . import copulas as cop
from .copulas import INDEPENDENCE, BivariateCopula
from .marginals import ecdf_transform, kendall_tau, marginal_from_dict

LOG_SENTINEL = 1e10
MIN_FIT_SAMPLES = 30


class VineArrayError(ValueError):
    pass


class VineEdge(NamedTuple):
    a: int
    b: int
    cond: frozenset

    @property
    def conditioned(self) -> frozenset:
        return frozenset((self.a, self.b))

    @property
    def key(self) -> tuple:
        return (self.conditioned, self.cond)

    def label(self) -> str:
        d = "".join(str(x) for x in sorted(self.cond))
        return f"{self.a},{self.b}" + (f"|{d}" if d else "")


class ArrayReport(NamedTuple):
    ok: bool
    column: int | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


# ---------------------------------------------------------------------------
# Array / tree conversions
# ---------------------------------------------------------------------------

def _as_matrix(M) -> np.ndarray:
    if isinstance(M, np.ndarray):
        A = M.astype(int)
    else:
        rows = [list(r) for r in M]
        d = len(rows)
        A = np.zeros((d, d), dtype=int)
        for i, r in enumerate(rows):
            if len(r) == d:
                A[i] = r
            elif len(r) == i + 1:
                A[i, : i + 1] = r
            else:
                raise VineArrayError(f"row {i + 1} has {len(r)} entries; expected {i + 1} or {d}")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise VineArrayError("array must be square")
    return A


def validate_array(M) -> ArrayReport:
    """Check that ``M`` is an R-vine array.

    Columns in the report are 1-based, matching the usual array notation.
    """
    try:
        A = _as_matrix(M)
    except VineArrayError as exc:
        return ArrayReport(False, None, str(exc))
    d = A.shape[0]
    if d < 2:
        return ArrayReport(False, None, "dimension must be at least 2")
    if np.any(np.triu(A, 1) != 0):
        return ArrayReport(False, None, "entries above the diagonal must be empty")
    for k in range(d):
        col = A[k:, k]
        if np.any((col < 1) | (col > d)):
            return ArrayReport(False, k + 1, "entries must lie in 1..d")
        if len(set(col.tolist())) != d - k:
            return ArrayReport(False, k + 1, "repeated label within column")
    for k in range(d - 1):
        here = set(A[k:, k].tolist())
        nxt = set(A[k + 1:, k + 1].tolist())
        if not nxt <= here:
            return ArrayReport(False, k + 1, "column nesting violated")
        if A[k, k] in nxt:
            return ArrayReport(False, k + 1, "diagonal entry reappears in later columns")
    # every conditioned/conditioning pair must be produced by a later column
    for k in range(d - 2):
        for i in range(k + 1, d - 1):
            target = (int(A[i, k]), frozenset(A[i + 1:, k].tolist()))
            if not _pair_available(A, k, target):
                return ArrayReport(False, k + 1,
                                   f"pair ({target[0]} | {sorted(target[1])}) is not provided "
                                   "by any later column")
    return ArrayReport(True)


def _pair_available(A, k, target) -> bool:
    d = A.shape[0]
    for j in range(k + 1, d - 1):
        for r in range(j + 1, d):
            if (A[j, j], frozenset(A[r:, j].tolist())) == target:
                return True
            tilde = frozenset([A[j, j]] + A[r + 1:, j].tolist())
            if (A[r, j], tilde) == target:
                return True
    return False


def trees_from_array(M) -> list[list[VineEdge]]:
    """Edge lists ``[T_1, ..., T_{d-1}]`` encoded by an array."""
    A = _as_matrix(M)
    rep = validate_array(A)
    if not rep:
        raise VineArrayError(f"invalid R-vine array (column {rep.column}): {rep.reason}")
    d = A.shape[0]
    trees = [[] for _ in range(d - 1)]
    for k in range(d - 1):
        for i in range(d - 1, k, -1):
            trees[d - i - 1].append(VineEdge(int(A[k, k]), int(A[i, k]),
                                             frozenset(A[i + 1:, k].tolist())))
    return trees


def check_proximity(trees: Sequence[Sequence[VineEdge]]) -> bool:
    """True when the edge lists form a regular vine tree sequence."""
    d = len(trees) + 1
    prev_nodes = {frozenset([v]) for v in range(1, d + 1)}
    lower = None
    for t, edges in enumerate(trees, start=1):
        if len(edges) != d - t:
            return False
        parent = {n: n for n in prev_nodes}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        new_nodes = set()
        for e in edges:
            if len(e.cond) != t - 1 or e.a == e.b or e.a in e.cond or e.b in e.cond:
                return False
            n1, n2 = frozenset([e.a]) | e.cond, frozenset([e.b]) | e.cond
            if n1 not in prev_nodes or n2 not in prev_nodes:
                return False
            if lower is not None and e.cond not in lower:
                return False  # the two joined edges do not share a node
            r1, r2 = find(n1), find(n2)
            if r1 == r2:
                return False
            parent[r1] = r2
            new_nodes.add(n1 | n2)
        lower, prev_nodes = prev_nodes, new_nodes
    return True


def array_from_trees(trees: Sequence[Sequence[VineEdge]]) -> np.ndarray:
    """Encode a regular vine tree sequence as an R-vine array."""
    d = len(trees) + 1
    remaining = [list(level) for level in trees]
    if not check_proximity(trees):
        raise VineArrayError("edge lists do not form a regular vine")
    A = np.zeros((d, d), dtype=int)
    for k in range(d - 1):
        top = d - 2 - k
        if len(remaining[top]) != 1:
            raise VineArrayError("inconsistent tree sizes")
        head = remaining[top][0]
        for x in sorted((head.a, head.b)):
            chosen = _column_for(remaining, top, head, x)
            if chosen is not None:
                break
        else:
            raise VineArrayError("no admissible diagonal variable")
        A[k, k] = x
        for level, edge in enumerate(chosen):
            remaining[level].remove(edge)
            A[d - 1 - level, k] = edge.b if edge.a == x else edge.a
    if any(remaining):
        raise VineArrayError("edges left over")
    A[d - 1, d - 1] = A[d - 1, d - 2]
    rep = validate_array(A)
    if not rep:
        raise VineArrayError(f"constructed array is invalid: {rep.reason}")
    return A


def _column_for(remaining, top, head, x):
    # edges (x, . | D) for each level, or None if x cannot be a diagonal entry
    chosen = [None] * (top + 1)
    chosen[top] = head
    for level in range(top + 1):
        hits = [e for e in remaining[level] if x in (e.a, e.b)]
        if len(hits) != 1 or any(x in e.cond for e in remaining[level]):
            return None
        chosen[level] = hits[0]
    # conditioning sets must nest down the column
    for level in range(1, top + 1):
        e, below = chosen[level], chosen[level - 1]
        other = below.b if below.a == x else below.a
        if e.cond != below.cond | {other}:
            return None
    return chosen


# ---------------------------------------------------------------------------
# Fitted model
# ---------------------------------------------------------------------------

def _orient(c: BivariateCopula, first: int, a: int) -> BivariateCopula:
    # c was fitted with variable `a` as first argument
    return c if first == a else c.swap()


@dataclass(frozen=True, eq=False)
class FittedRVine:
    """An R-vine copula: array, one pair copula per sub-diagonal entry.

    ``copulas[i][k]`` (``i > k``) is the copula of the pair at row ``i`` of
    column ``k``.  ``marginals`` is an optional list of marginal models in
    label order.
    """

    matrix: np.ndarray
    copulas: tuple
    marginals: tuple | None = None
    loglik: float = float("nan")
    library: tuple = cop.KINDS
    criterion: str = "aic"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        A = _as_matrix(self.matrix)
        rep = validate_array(A)
        if not rep:
            raise VineArrayError(f"invalid R-vine array (column {rep.column}): {rep.reason}")
        object.__setattr__(self, "matrix", A)
        d = A.shape[0]
        rows = tuple(tuple(self.copulas[i][k] for k in range(i)) for i in range(d))
        for i in range(d):
            for c in rows[i]:
                if not isinstance(c, BivariateCopula):
                    raise TypeError("pair copulas must be BivariateCopula instances")
        object.__setattr__(self, "copulas", rows)
        if self.marginals is not None:
            if len(self.marginals) != d:
                raise ValueError("need one marginal per variable")
            object.__setattr__(self, "marginals", tuple(self.marginals))
        object.__setattr__(self, "_plan", _build_plan(A))

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def independence(cls, d: int) -> "FittedRVine":
        """All-independence D-vine on labels 1..d."""
        return cls(_dvine_array(d), [[INDEPENDENCE] * i for i in range(d)], loglik=0.0)

    @classmethod
    def from_codes(cls, matrix, families, params, **kw) -> "FittedRVine":
        """Build from ragged lower-triangular family-code and parameter rows."""
        A = _as_matrix(matrix)
        d = A.shape[0]
        rows = []
        for i in range(d):
            fam_row = list(families[i])[:i] if i < len(families) else []
            par_row = list(params[i])[:i] if i < len(params) else []
            if len(fam_row) != i or len(par_row) != i:
                raise ValueError(f"row {i + 1} needs {i} family/parameter entries")
            rows.append([BivariateCopula.from_code(f, p) for f, p in zip(fam_row, par_row)])
        return cls(A, rows, **kw)

    def edges(self) -> list[tuple[int, VineEdge, BivariateCopula]]:
        """(tree, edge, copula) triples in column order."""
        out = []
        A, d = self.matrix, self.d
        for k in range(d - 1):
            for i in range(d - 1, k, -1):
                e = VineEdge(int(A[k, k]), int(A[i, k]), frozenset(A[i + 1:, k].tolist()))
                out.append((d - i, e, self.copulas[i][k]))
        return out

    def trees(self) -> list[list[VineEdge]]:
        return trees_from_array(self.matrix)

    def family_matrix(self) -> list[list[str]]:
        return [[c.code for c in row] for row in self.copulas]

    def param_matrix(self) -> list[list[list[float]]]:
        return [[list(c.params) for c in row] for row in self.copulas]

    @property
    def is_independence(self) -> bool:
        return all(c.kind == "indep" for row in self.copulas for c in row)

    # -- evaluation ---------------------------------------------------------

    def _sweep(self, u, want_logpdf=True):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if u.shape[1] != self.d:
            raise ValueError(f"expected {self.d} columns, got {u.shape[1]}")
        u = np.clip(u, cop.EPS, 1 - cop.EPS)
        cond = {(v, frozenset()): u[:, v - 1] for v in range(1, self.d + 1)}
        total = np.zeros(u.shape[0])
        for (i, k, a, b, D), (need_a, need_b) in self._plan.steps:
            c = self.copulas[i][k]
            x, y = cond[(a, D)], cond[(b, D)]
            if want_logpdf and c.kind != "indep":
                total = total + c.logpdf(x, y)
            if need_a:
                cond[(a, D | {b})] = c.hfunc(x, y)
            if need_b:
                cond[(b, D | {a})] = c.hfunc2(x, y)
        return total, cond

    def log_density(self, u, return_flag: bool = False):
        """Log copula density at each row of ``u`` (marginals excluded).

        Non-finite values are replaced by ``+-LOG_SENTINEL``; with
        ``return_flag`` a boolean mask of replaced rows is returned too.
        """
        scalar = np.ndim(u) == 1
        total, _ = self._sweep(u)
        bad = ~np.isfinite(total)
        if bad.any():
            total = np.where(np.isnan(total) | (total < 0), -LOG_SENTINEL, total)
            total = np.where(np.isinf(total), LOG_SENTINEL, total)
        out = total[0] if scalar else total
        if return_flag:
            return out, (bad[0] if scalar else bad)
        return out

    def density(self, u):
        return np.exp(self.log_density(u))

    def log_density_raw(self, z):
        """Joint log density of raw observations, using the stored marginals."""
        if self.marginals is None:
            raise ValueError("model has no marginals")
        z = np.atleast_2d(np.asarray(z, dtype=float))
        u = np.column_stack([m.cdf(z[:, j]) for j, m in enumerate(self.marginals)])
        logf = sum(np.log(np.maximum(m.pdf(z[:, j]), 1e-300))
                   for j, m in enumerate(self.marginals))
        return self.log_density(u) + logf

    def rosenblatt(self, u):
        """Map rows of ``u`` to independent uniforms under the model."""
        scalar = np.ndim(u) == 1
        _, cond = self._sweep(u, want_logpdf=False)
        A, d = self.matrix, self.d
        n = np.atleast_2d(u).shape[0]
        out = np.empty((n, d))
        for k in range(d):
            a = int(A[k, k])
            out[:, a - 1] = cond[(a, frozenset(A[k + 1:, k].tolist()))]
        return out[0] if scalar else out

    def inverse_rosenblatt(self, w):
        """Inverse of :meth:`rosenblatt`; column ``j`` of ``w`` drives label ``j+1``."""
        scalar = np.ndim(w) == 1
        w = np.clip(np.atleast_2d(np.asarray(w, dtype=float)), 0.0, 1.0)
        cond = self._sample_columns(w, 0)
        out = np.column_stack([cond[(v, frozenset())] for v in range(1, self.d + 1)])
        return out[0] if scalar else out

    def _sample_columns(self, w, first_col):
        # fill conditional values for columns first_col..d-1 driven by w
        A, d = self.matrix, self.d
        cond = {}
        for k in range(d - 1, first_col - 1, -1):
            a = int(A[k, k])
            x = w[:, a - 1]
            cond[(a, frozenset(A[k + 1:, k].tolist()))] = x
            for i in range(k + 1, d):
                b = int(A[i, k])
                D = frozenset(A[i + 1:, k].tolist())
                x = self.copulas[i][k].hinv(x, cond[(b, D)])
                cond[(a, D)] = x
            for i in range(d - 1, k, -1):
                b = int(A[i, k])
                D = frozenset(A[i + 1:, k].tolist())
                key = (b, D | {a})
                if key not in cond:
                    cond[key] = self.copulas[i][k].hfunc2(cond[(a, D)], cond[(b, D)])
        return cond

    def sample(self, n: int, seed=None) -> np.ndarray:
        """``n`` draws from the copula by inverse Rosenblatt sampling."""
        if n < 1:
            raise ValueError("n must be positive")
        rng = np.random.default_rng(seed)
        return self.inverse_rosenblatt(rng.random((n, self.d)))

    def sample_raw(self, n: int, seed=None) -> np.ndarray:
        if self.marginals is None:
            raise ValueError("model has no marginals")
        u = self.sample(n, seed)
        return np.column_stack([np.asarray(m.ppf(u[:, j]) if not hasattr(m, "samples")
                                           else [m.ppf(x) for x in u[:, j]])
                                for j, m in enumerate(self.marginals)])

    def conditional_first(self, m_a, cond):
        """F(a | all other variables) at ``u_a = m_a`` for ``a = M[0, 0]``."""
        A, d = self.matrix, self.d
        a = int(A[0, 0])
        x = np.broadcast_to(np.asarray(m_a, dtype=float), cond[(int(A[d - 1, 0]), frozenset())].shape)
        for i in range(d - 1, 0, -1):
            b = int(A[i, 0])
            D = frozenset(A[i + 1:, 0].tolist())
            x = self.copulas[i][0].hfunc(x, cond[(b, D)])
        return x

    # -- serialisation --------------------------------------------------------

    def to_dict(self, seed_provenance: dict | None = None) -> dict:
        d = self.d
        return {
            "d": d,
            "matrix": [self.matrix[i, : i + 1].tolist() for i in range(d)],
            "families": self.family_matrix(),
            "params": self.param_matrix(),
            "marginals": [m.to_dict() for m in self.marginals] if self.marginals else [],
            "loglik": float(self.loglik),
            "seed_provenance": dict(seed_provenance or self.meta.get("seed_provenance", {})),
            "library": list(self.library),
            "criterion": self.criterion,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedRVine":
        for key in ("d", "matrix", "families", "params"):
            if key not in doc:
                raise ValueError(f"model document lacks {key!r}")
        margs = doc.get("marginals") or None
        if margs:
            margs = [marginal_from_dict(m) for m in margs]
        v = cls.from_codes(doc["matrix"], doc["families"], doc["params"],
                           marginals=margs, loglik=float(doc.get("loglik", float("nan"))),
                           library=tuple(doc.get("library", cop.KINDS)),
                           criterion=doc.get("criterion", "aic"),
                           meta={"seed_provenance": doc.get("seed_provenance", {})})
        if v.d != int(doc["d"]):
            raise ValueError("matrix size does not match d")
        return v

    def to_json(self, path=None, **kw) -> str:
        text = json.dumps(self.to_dict(**kw), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, path) -> "FittedRVine":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def __repr__(self):
        fams = ", ".join(f"{e.label()}:{c.code}" for _, e, c in self.edges())
        return f"FittedRVine(d={self.d}, [{fams}])"


class _Plan(NamedTuple):
    steps: list


def _build_plan(A) -> _Plan:
    # tree-by-tree order; each step records which h-outputs are consumed later
    d = A.shape[0]
    raw = []
    for t in range(1, d):
        i = d - t
        for k in range(i):
            raw.append((i, k, int(A[k, k]), int(A[i, k]), frozenset(A[i + 1:, k].tolist())))
    needed = set()
    for (_, _, a, b, D) in raw:
        needed.add((a, D))
        needed.add((b, D))
    for k in range(d):
        needed.add((int(A[k, k]), frozenset(A[k + 1:, k].tolist())))
    steps = [((i, k, a, b, D), ((a, D | {b}) in needed, (b, D | {a}) in needed))
             for (i, k, a, b, D) in raw]
    return _Plan(steps)


def _dvine_array(d):
    A = np.zeros((d, d), dtype=int)
    for k in range(d):
        A[k:, k] = list(range(d - k, 0, -1))
    return A


# ---------------------------------------------------------------------------
# Structure selection
# ---------------------------------------------------------------------------

def independence_test_rejects(tau: float, n: int, level_z: float = 1.959963984540054) -> bool:
    z = 3.0 * tau * math.sqrt(n * (n - 1)) / math.sqrt(2.0 * (2 * n + 5))
    return abs(z) > level_z


def fit_pair(x, y, families=cop.KINDS, criterion="aic", indep_shortcut=True, tau=None):
    """Family selection for one edge, including the independence shortcut."""
    if tau is None:
        tau = kendall_tau(x, y)
    if indep_shortcut and abs(tau) < 0.02 and not independence_test_rejects(tau, len(x)):
        return INDEPENDENCE, tau
    return cop.select_best(x, y, families=families, criterion=criterion, tau=tau).copula, tau


class _Node(NamedTuple):
    A: frozenset
    ends: tuple  # endpoints in the previous tree (A-sets); empty for variables


def _prim(nodes, candidates):
    """Maximum spanning tree by Prim's algorithm.

    ``candidates`` maps node-index pairs to (weight, label).  Among equal
    weights the lexicographically smallest label wins.
    """
    n = len(nodes)
    if n == 1:
        return []
    start = min(range(n), key=lambda j: tuple(sorted(nodes[j].A)))
    in_tree = {start}
    chosen = []
    while len(in_tree) < n:
        best = None
        for (p, q), (w, label) in candidates.items():
            if (p in in_tree) == (q in in_tree):
                continue
            key = (-w, label)
            if best is None or key < best[0]:
                best = (key, (p, q))
        if best is None:
            raise VineArrayError("proximity graph is disconnected")
        p, q = best[1]
        chosen.append((p, q))
        in_tree.add(q if p in in_tree else p)
    return chosen


def select_structure(u, families=cop.KINDS, criterion: str = "aic",
                     indep_shortcut: bool = True, marginals=None) -> FittedRVine:
    """Sequential maximum-spanning-tree selection of an R-vine.

    Tree ``t`` maximises the sum of absolute empirical Kendall's taus among
    the admissible edges; every chosen edge receives the best pair copula
    from ``families`` under ``criterion``.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] < 2:
        raise ValueError("need an N x L matrix with L >= 2")
    n, d = u.shape
    if n < MIN_FIT_SAMPLES:
        raise ValueError(f"need at least {MIN_FIT_SAMPLES} observations, got {n}")
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("pseudo-observations must lie strictly inside (0, 1)")
    families = tuple(families)
    cond = {(v, frozenset()): u[:, v - 1] for v in range(1, d + 1)}
    nodes = [_Node(frozenset([v]), ()) for v in range(1, d + 1)]
    trees, fitted = [], {}
    loglik = 0.0
    for t in range(1, d):
        cands, info = {}, {}
        for p, q in itertools.combinations(range(len(nodes)), 2):
            n1, n2 = nodes[p], nodes[q]
            if t > 1 and not set(n1.ends) & set(n2.ends):
                continue
            D = n1.A & n2.A
            if len(D) != t - 1:
                continue
            a, b = sorted((n1.A | n2.A) - D)
            x, y = cond[(a, D)], cond[(b, D)]
            tau = kendall_tau(x, y)
            cands[(p, q)] = (abs(tau), (a, b) + tuple(sorted(D)))
            info[(p, q)] = (a, b, D, tau)
        level = []
        new_nodes = []
        for p, q in _prim(nodes, cands):
            a, b, D, tau = info[(p, q)]
            x, y = cond[(a, D)], cond[(b, D)]
            c, _ = fit_pair(x, y, families, criterion, indep_shortcut, tau)
            if c.kind != "indep":
                loglik += c.loglik(x, y)
                cond[(a, D | {b})] = c.hfunc(x, y)
                cond[(b, D | {a})] = c.hfunc2(x, y)
            else:
                cond[(a, D | {b})] = x
                cond[(b, D | {a})] = y
            e = VineEdge(a, b, D)
            level.append(e)
            fitted[e.key] = (a, c)
            new_nodes.append(_Node(nodes[p].A | nodes[q].A, (nodes[p].A, nodes[q].A)))
        trees.append(level)
        nodes = new_nodes
    A = array_from_trees(trees)
    rows = [[None] * i for i in range(d)]
    for k in range(d - 1):
        for i in range(k + 1, d):
            a, b = int(A[k, k]), int(A[i, k])
            first, c = fitted[(frozenset((a, b)), frozenset(A[i + 1:, k].tolist()))]
            rows[i][k] = _orient(c, first, a)
    return FittedRVine(A, rows, marginals=marginals, loglik=float(loglik), library=families,
                       criterion=criterion)


def first_tree_weight(v: FittedRVine, taus) -> float:
    """Sum of |tau| over the first tree of ``v`` from a tau matrix (0-based)."""
    taus = np.asarray(taus)
    return float(sum(abs(taus[e.a - 1, e.b - 1]) for t, e, _ in v.edges() if t == 1))


def spanning_tree_from_taus(taus) -> list[tuple[int, int]]:
    """First-tree edges chosen by the selection rule for a given tau matrix."""
    taus = np.asarray(taus, dtype=float)
    d = taus.shape[0]
    nodes = [_Node(frozenset([v]), ()) for v in range(1, d + 1)]
    cands = {(p, q): (abs(taus[p, q]), (p + 1, q + 1))
             for p, q in itertools.combinations(range(d), 2)}
    return [(p + 1, q + 1) for p, q in _prim(nodes, cands)]


# ---------------------------------------------------------------------------
# Subset copulas
# ---------------------------------------------------------------------------

def relabel(v: FittedRVine, k0: int) -> tuple[tuple, FittedRVine]:
    """Sub-vine of ``v`` formed by columns ``k0..d-1``, relabelled ``1..d-k0``."""
    A = v.matrix[k0:, k0:]
    labels = tuple(sorted(A[:, 0].tolist()))
    mapping = {lab: j + 1 for j, lab in enumerate(labels)}
    B = np.vectorize(lambda x: mapping.get(int(x), 0))(A) * (np.tril(np.ones_like(A)))
    d = A.shape[0]
    rows = [[v.copulas[k0 + i][k0 + k] for k in range(i)] for i in range(d)]
    margs = None
    if v.marginals is not None:
        margs = [v.marginals[lab - 1] for lab in labels]
    return labels, FittedRVine(B, rows, marginals=margs, library=v.library, criterion=v.criterion)


def _edge_vine(v: FittedRVine, k: int) -> tuple[tuple, FittedRVine]:
    # two-variable vine holding the first-tree edge of column k
    a, b = int(v.matrix[k, k]), int(v.matrix[-1, k])
    c = v.copulas[-1][k]
    if a > b:
        a, b, c = b, a, c.swap()
    return (a, b), FittedRVine(np.array([[1, 0], [2, 2]]), [[], [c]],
                               library=v.library, criterion=v.criterion)


@dataclass(frozen=True)
class SubsetEvaluator:
    """CDF evaluator for the copula of the variables in ``subset``.

    ``vine`` is labelled ``1..|subset|`` in the sorted order of ``subset``.
    """

    subset: tuple
    vine: FittedRVine
    provenance: str


@dataclass(frozen=True)
class CDFEstimate:
    value: float
    se: float
    n: int
    method: str
    warning: bool = False

    def __float__(self):
        return float(self.value)


DEFAULT_MC_BUDGET = 200_000
TARGET_SE = 5e-4


def subset_copula_cdf(ev, margins, mc_budget: int = DEFAULT_MC_BUDGET, seed=0,
                      target_se: float = TARGET_SE, replicates: int = 8) -> CDFEstimate:
    """P(U_t <= margins_t for all t) under the evaluator's vine.

    Two-variable subsets use the closed-form pair copula.  Larger subsets
    are integrated by randomised Sobol points over all but the first
    diagonal variable, whose conditional CDF is evaluated exactly.
    """
    vine = ev.vine if isinstance(ev, SubsetEvaluator) else ev
    m = np.asarray(margins, dtype=float)
    if m.shape != (vine.d,):
        raise ValueError(f"expected {vine.d} margins, got shape {m.shape}")
    if np.any(m < 0) or np.any(m > 1):
        raise ValueError("margins must lie in [0, 1]")
    if np.any(m <= 0):
        return CDFEstimate(0.0, 0.0, 0, "exact")
    if vine.d == 2:
        c = vine.copulas[1][0]
        a, b = int(vine.matrix[0, 0]), int(vine.matrix[1, 0])
        return CDFEstimate(float(c.cdf(m[a - 1], m[b - 1])), 0.0, 0, "closed-form")
    if vine.is_independence:
        return CDFEstimate(float(np.prod(m)), 0.0, 0, "exact")
    if np.all(m >= 1):
        return CDFEstimate(1.0, 0.0, 0, "exact")
    per = 2 ** max(4, int(math.floor(math.log2(max(mc_budget // replicates, 16)))))
    a = int(vine.matrix[0, 0])
    others = [j for j in range(vine.d) if j != a - 1]
    means = []
    ss = np.random.SeedSequence(seed)
    for child in ss.spawn(replicates):
        sob = qmc.Sobol(vine.d - 1, scramble=True, seed=np.random.default_rng(child))
        pts = sob.random_base2(int(math.log2(per)))
        w = np.empty((per, vine.d))
        w[:, others] = pts
        w[:, a - 1] = 0.5
        cond = vine._sample_columns(w, 1)
        inside = np.ones(per, dtype=bool)
        for j in others:
            inside &= cond[(j + 1, frozenset())] <= m[j]
        fa = vine.conditional_first(m[a - 1], cond)
        means.append(float(np.mean(np.where(inside, fa, 0.0))))
    means = np.asarray(means)
    value = float(means.mean())
    se = float(means.std(ddof=1) / math.sqrt(replicates))
    return CDFEstimate(value, se, per * replicates, "qmc", warning=se > target_se)


@dataclass
class SubsetCopulaSet:
    """Evaluators for every subset of ``1..L`` with at least two members."""

    L: int
    evaluators: dict
    full: FittedRVine

    def __getitem__(self, subset) -> SubsetEvaluator:
        return self.evaluators[tuple(sorted(subset))]

    def __len__(self):
        return len(self.evaluators)

    def __iter__(self):
        return iter(sorted(self.evaluators, key=lambda s: (len(s), s)))

    def provenance(self) -> dict:
        return {s: ev.provenance for s, ev in self.evaluators.items()}

    def cdf(self, subset, margins, **kw) -> CDFEstimate:
        return subset_copula_cdf(self[subset], margins, **kw)

    @staticmethod
    def expected_size(L: int) -> int:
        return 2 ** L - L - 1


def nested_margins(v: FittedRVine, labels: Sequence[int] | None = None) -> dict:
    """Subsets whose copula can be read directly off the array columns.

    For each column the first-tree pair and the whole column set qualify.
    ``labels`` maps the vine's labels ``1..d`` to outer labels.
    """
    labels = tuple(labels) if labels is not None else tuple(range(1, v.d + 1))
    out = {}
    for k in range(v.d - 1):
        pair, ev = _edge_vine(v, k)
        key = tuple(sorted(labels[x - 1] for x in pair))
        if key not in out:
            out[key] = _relabelled(ev, [labels[x - 1] for x in pair])
        sub_labels, sub = relabel(v, k)
        key = tuple(sorted(labels[x - 1] for x in sub_labels))
        if key not in out:
            out[key] = sub
    return out


def _relabelled(ev, outer):
    # a bivariate vine labelled 1,2 in the order of `outer`; keep it if already sorted
    if outer[0] < outer[1]:
        return ev
    c = ev.copulas[1][0].swap()
    return FittedRVine(np.array([[1, 0], [2, 2]]), [[], [c]], library=ev.library,
                       criterion=ev.criterion)


def build_subset_copula_set(u, families=cop.KINDS, criterion: str = "aic",
                            full: FittedRVine | None = None,
                            indep_shortcut: bool = True) -> SubsetCopulaSet:
    """Fit the full vine once, read off nested margins, then fit the rest."""
    u = np.asarray(u, dtype=float)
    L = u.shape[1]
    if L < 2:
        raise ValueError("need at least two variables")
    if full is None:
        full = select_structure(u, families, criterion, indep_shortcut)
    evaluators = {}
    for key, sub in nested_margins(full).items():
        evaluators[key] = SubsetEvaluator(key, sub, "nested-margin")
    for size in range(L - 1, 1, -1):
        for subset in itertools.combinations(range(1, L + 1), size):
            if subset in evaluators:
                continue
            cols = [s - 1 for s in subset]
            sub = select_structure(u[:, cols], families, criterion, indep_shortcut)
            evaluators[subset] = SubsetEvaluator(subset, sub, "sub-vine")
            for key, inner in nested_margins(sub, subset).items():
                if key not in evaluators:
                    evaluators[key] = SubsetEvaluator(key, inner, "sub-vine")
    return SubsetCopulaSet(L, evaluators, full)


# ---------------------------------------------------------------------------
# Goodness of fit
# ---------------------------------------------------------------------------

def cvm_statistic(e) -> float:
    """Cramer-von Mises distance of the rows of ``e`` from the uniform cube."""
    e = np.asarray(e, dtype=float)
    n, d = e.shape
    term1 = n / 3.0 ** d
    term2 = np.sum(np.prod(1.0 - e * e, axis=1)) / 2.0 ** (d - 1)
    g = 1.0 - e
    term3 = 0.0
    chunk = max(1, 4_000_000 // n)
    for i in range(0, n, chunk):
        acc = np.minimum.outer(g[i:i + chunk, 0], g[:, 0])
        for k in range(1, d):
            acc *= np.minimum.outer(g[i:i + chunk, k], g[:, k])
        term3 += acc.sum()
    return float(term1 - term2 + term3 / n)


@dataclass(frozen=True)
class GOFResult:
    statistic: float
    p_value: float
    B: int
    skipped: int
    boot: np.ndarray


def _boot_one(args):
    vine, n, child, families, criterion = args
    rng = np.random.default_rng(child)
    sim = ecdf_transform(vine.sample(n, rng))
    try:
        refit = select_structure(sim, families, criterion)
    except (ValueError, RuntimeError):
        return None
    return cvm_statistic(refit.rosenblatt(sim))


def gof_bootstrap(v: FittedRVine, u, B: int = 200, seed=0, n_jobs: int = 1,
                  families=None, criterion=None) -> GOFResult:
    """Parametric bootstrap p-value for the CvM statistic of ``v`` on ``u``.

    Each replicate samples ``len(u)`` rows from ``v``, converts them to
    pseudo-observations, refits with the same library and criterion, and
    recomputes the statistic.  Replicates whose refit fails are skipped.
    """
    if B < 1:
        raise ValueError("B must be positive")
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] != v.d:
        raise ValueError(f"data must have {v.d} columns")
    families = tuple(families or v.library)
    criterion = criterion or v.criterion
    observed = cvm_statistic(v.rosenblatt(u))
    children = np.random.SeedSequence(seed).spawn(B)
    jobs = [(v, u.shape[0], c, families, criterion) for c in children]
    if n_jobs and n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            stats = list(pool.map(_boot_one, jobs))
    else:
        stats = [_boot_one(j) for j in jobs]
    boot = np.array([s for s in stats if s is not None], dtype=float)
    skipped = B - boot.size
    p = float(np.mean(boot >= observed)) if boot.size else float("nan")
    return GOFResult(observed, p, B, skipped, boot)
