"""Command-line interface: ``rvinefusion <subcommand> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from . import copulas as cop
from .copulas import CopulaDomainError, CopulaFamily, CopulaFitError
from .fusion import (DecisionPMF, FusionError, FusionWeights, asymptotic_stats, dump_json,
                     eval_statistic, fuse, np_operating_point, train_fusion, weights_from_pmf)
from .marginals import MarginalError, ecdf_transform, kde_fit, read_csv, write_csv
from .rvine import FittedRVine, gof_bootstrap, select_structure
from .simulation import (ConfigError, ScenarioConfig, compare_criteria, load_config,
                         model_digests, run_roc, train_models)

log = logging.getLogger("rvinefusion")

CRITERION_HELP = ("per-edge family selection criterion; AIC = -loglik + 2q and "
                  "BIC = -loglik + q log N (likelihood term not doubled)")


class UsageError(Exception):
    pass


def _families(text):
    if text is None:
        return None
    fams = tuple(f.strip() for f in text.split(",") if f.strip())
    if not fams:
        raise UsageError("--families needs at least one family code")
    for f in fams:
        try:
            CopulaFamily.parse(f)
        except CopulaDomainError as exc:
            raise UsageError(str(exc)) from None
    return fams


def _outdir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_config(args) -> ScenarioConfig:
    over = {"seed": args.seed, "criterion": args.criterion}
    if args.families:
        over["families"] = _families(args.families)
    if args.config:
        return load_config(args.config, **over)
    return ScenarioConfig(**{k: v for k, v in over.items() if v is not None})


def _write_json(path, doc):
    dump_json(doc, path)
    log.info("wrote %s", path)


# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    z = read_csv(args.data)
    if z.shape[1] < 2:
        raise UsageError("need >= 2 variables")
    if z.shape[0] < 30:
        raise UsageError(f"need at least 30 rows, got {z.shape[0]}")
    families = _families(args.families) or cop.KINDS
    criterion = args.criterion or "aic"
    u = ecdf_transform(z)
    margs = [kde_fit(z[:, j]) for j in range(z.shape[1])]
    v = select_structure(u, families, criterion, marginals=margs)
    prov = {"seed": args.seed, "data": os.path.basename(args.data), "n": int(z.shape[0]),
            "criterion": criterion, "families": list(families), "version": __version__}
    path = os.path.join(_outdir(args), "model.json")
    v.to_json(path, seed_provenance=prov)
    print(f"loglik {v.loglik:.6f}")
    print(f"{'tree':>4}  {'edge':<12} {'family':<12} {'params':<28} tau")
    for t, e, c in sorted(v.edges(), key=lambda x: x[0]):
        params = ",".join(f"{p:.4g}" for p in c.params)
        print(f"{t:>4}  {e.label():<12} {c.code:<12} {params:<28} {c.tau():+.4f}")
    return 0


def cmd_sample(args) -> int:
    v = FittedRVine.from_json(args.model)
    if args.n < 1:
        raise UsageError("-n must be positive")
    seed = 0 if args.seed is None else args.seed
    u = v.sample(args.n, seed)
    out = _outdir(args)
    write_csv(os.path.join(out, "sample.csv"), u)
    if args.raw:
        if v.marginals is None:
            raise UsageError("model has no marginals; cannot produce raw samples")
        write_csv(os.path.join(out, "sample_raw.csv"), v.sample_raw(args.n, seed))
    _write_json(os.path.join(out, "sample.json"),
                {"model": os.path.basename(args.model), "n": args.n, "seed": seed})
    print(f"wrote {args.n} rows to {os.path.join(out, 'sample.csv')}")
    return 0


def cmd_gof(args) -> int:
    if args.B < 1:
        raise UsageError("-B must be positive")
    v = FittedRVine.from_json(args.model)
    z = read_csv(args.data)
    if z.shape[1] != v.d:
        raise UsageError(f"data has {z.shape[1]} columns but the model has {v.d}")
    seed = 0 if args.seed is None else args.seed
    families = _families(args.families)
    res = gof_bootstrap(v, ecdf_transform(z), B=args.B, seed=seed, n_jobs=args.threads or 1,
                        families=families, criterion=args.criterion)
    print(f"statistic {res.statistic:.6g}")
    print(f"p-value   {res.p_value:.4f}")
    print(f"B         {res.B}")
    print(f"skipped   {res.skipped}")
    if args.out:
        _write_json(os.path.join(_outdir(args), "gof.json"),
                    {"statistic": res.statistic, "p_value": res.p_value, "B": res.B,
                     "skipped": res.skipped, "seed": seed, "model": os.path.basename(args.model),
                     "data": os.path.basename(args.data), "criterion": args.criterion,
                     "families": list(families) if families else None})
    return 0


def _train_from_args(args):
    if args.h1 or args.h0:
        if not (args.h1 and args.h0):
            raise UsageError("--h1 and --h0 must be given together")
        z1, z0 = read_csv(args.h1), read_csv(args.h0)
        if z1.shape[1] != z0.shape[1]:
            raise UsageError("H1 and H0 training files differ in column count")
        seed = 0 if args.seed is None else args.seed
        families = _families(args.families) or cop.KINDS
        criterion = args.criterion or "aic"
        model = train_fusion(z1, z0, args.beta, families, criterion, seed=seed,
                             mc_budget=args.mc_budget)
        resolved = {"h1": os.path.basename(args.h1), "h0": os.path.basename(args.h0),
                    "beta": args.beta, "criterion": criterion, "families": list(families),
                    "mc_budget": args.mc_budget, "seed": seed}
        return model, resolved
    cfg = _load_config(args)
    return train_models(cfg), cfg.to_dict()


def cmd_pmf(args) -> int:
    model, resolved = _train_from_args(args)
    out = _outdir(args)
    doc = model.pmf.to_dict()
    doc.update({"config": resolved, "weights": model.weights.to_dict(),
                "thresholds": model.bank.tau.tolist(), "p": model.rates.p.tolist(),
                "q": model.rates.q.tolist(),
                "clamped_mass": [t.clamped_mass for t in model.pmf_tables],
                "mc_se": [t.mc_se for t in model.pmf_tables]})
    _write_json(os.path.join(out, "pmf.json"), doc)
    L = model.pmf.L
    print(f"{'pattern':<{max(L, 7)}}  {'P (H1)':>12} {'Q (H0)':>12}")
    for key in doc["P"]:
        print(f"{key:<{max(L, 7)}}  {doc['P'][key]:>12.6g} {doc['Q'][key]:>12.6g}")
    return 0


def _read_bits(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise UsageError(f"{path}: empty decision file")
    if not lines[0].replace(",", "").replace(" ", "").isdigit():
        lines = lines[1:]
    try:
        d = np.array([[int(x) for x in ln.split(",")] for ln in lines], dtype=np.int64)
    except ValueError:
        raise UsageError(f"{path}: decisions must be comma-separated 0/1 values") from None
    if d.ndim != 2 or np.any((d != 0) & (d != 1)):
        raise UsageError(f"{path}: decisions must be a rectangular table of 0/1 values")
    return d


def cmd_fuse(args) -> int:
    with open(args.pmf) as fh:
        doc = json.load(fh)
    pmf = DecisionPMF.from_dict(doc)
    w = weights_from_pmf(pmf)
    d = _read_bits(args.decisions)
    if d.shape[1] != pmf.L:
        raise UsageError(f"decisions have {d.shape[1]} columns but the PMF covers {pmf.L} sensors")
    stat = eval_statistic(w, d)
    if args.gamma is not None:
        gamma = args.gamma
    else:
        gamma = np_operating_point(asymptotic_stats(pmf, w, d.shape[0]), args.alpha).gamma
    decision = fuse(stat, gamma)
    print(f"statistic {stat:.10g}")
    print(f"gamma     {gamma:.10g}")
    print(f"decision  {decision}")
    if args.out:
        _write_json(os.path.join(_outdir(args), "fuse.json"),
                    {"statistic": stat, "gamma": gamma, "decision": decision,
                     "N": int(d.shape[0]), "alpha": args.alpha, "pmf": os.path.basename(args.pmf)})
    return 0


def cmd_roc(args) -> int:
    cfg = _load_config(args)
    res = run_roc(cfg)
    out = _outdir(args)
    res.to_csv(os.path.join(out, "roc.csv"))
    _write_json(os.path.join(out, "summary.json"), res.summary())
    for rule, c in res.curves.items():
        pd, se = c.pd_at(cfg.alpha)
        print(f"{rule:<15} P_D at P_F={cfg.alpha:g}: {pd:.4f} +- {se:.4f}   AUC {c.auc():.4f}")
    return 0


def cmd_criteria(args) -> int:
    cfg = _load_config(args)
    res = compare_criteria(cfg)
    out = _outdir(args)
    with open(os.path.join(out, "criteria.csv"), "w") as fh:
        fh.write("criterion,pf,pd,se_pd\n")
        for crit, r in res.items():
            c = r.curves["rvine"]
            for a, b, e in zip(c.pf, c.pd, c.se_pd):
                fh.write(f"{crit},{a:.10g},{b:.10g},{e:.10g}\n")
    summary = {"config": cfg.to_dict(), "seeds": {"root": cfg.seed}, "criteria": {}}
    for crit, r in res.items():
        c = r.curves["rvine"]
        pd, se = c.pd_at(cfg.alpha)
        summary["criteria"][crit] = {"auc": c.auc(), "pd_at_alpha": pd, "se_pd": se,
                                     "models": model_digests(r.model)}
        print(f"{crit:<4} AUC {c.auc():.4f}   P_D at P_F={cfg.alpha:g}: {pd:.4f} +- {se:.4f}")
    _write_json(os.path.join(out, "summary.json"), summary)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (key = value lines)")
    common.add_argument("--out", help="output directory (created if missing)")
    common.add_argument("--seed", type=int, help="root random seed")
    common.add_argument("--threads", type=int, default=1, help="worker process cap")
    common.add_argument("--criterion", choices=("aic", "bic", "mle"), help=CRITERION_HELP)
    common.add_argument("--families", help="comma list of family codes, e.g. gauss,clayton@90")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="rvinefusion", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", parents=[common], help="fit an R-vine to a CSV of observations")
    s.add_argument("data")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("sample", parents=[common], help="draw samples from a model file")
    s.add_argument("model")
    s.add_argument("-n", type=int, default=1000)
    s.add_argument("--raw", action="store_true", help="also write samples on the data scale")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("gof", parents=[common], help="parametric bootstrap goodness of fit")
    s.add_argument("model")
    s.add_argument("data")
    s.add_argument("-B", type=int, default=200)
    s.set_defaults(func=cmd_gof)

    s = sub.add_parser("pmf", parents=[common], help="decision PMFs and fusion weights")
    s.add_argument("--h1", help="H1 training CSV")
    s.add_argument("--h0", help="H0 training CSV")
    s.add_argument("--beta", type=float, default=0.1)
    s.add_argument("--mc-budget", type=int, default=200_000)
    s.set_defaults(func=cmd_pmf)

    s = sub.add_parser("fuse", parents=[common], help="fuse a CSV of sensor decisions")
    s.add_argument("decisions")
    s.add_argument("--pmf", required=True, help="pmf.json written by the pmf command")
    s.add_argument("--gamma", type=float, help="explicit threshold")
    s.add_argument("--alpha", type=float, default=0.1, help="false-alarm level for the threshold")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("roc", parents=[common], help="Monte Carlo ROC: R-vine vs Chair-Varshney")
    s.set_defaults(func=cmd_roc)

    s = sub.add_parser("criteria", parents=[common], help="ROC per selection criterion")
    s.set_defaults(func=cmd_criteria)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, MarginalError, CopulaDomainError, FileNotFoundError,
            json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CopulaFitError, FusionError, FloatingPointError, ArithmeticError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
