"""Command-line entry point: ``pibic <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from pibic import __version__
from pibic.bootstrap import BootstrapSpec, glm_null_generator, run_bootstrap, tail_of
from pibic.exceptions import ConfigError, PibicError, UsageError
from pibic.glm import Dataset, get_family
from pibic.harness import (
    ExperimentConfig,
    run_lindley_study,
    run_power_study,
    run_type1_study,
)
from pibic.null_dist import DEFAULT_SEED, TEST_LAWS, LawKind, LimitLaw, critical_value, simulate_law
from pibic.procedure import ALL_STATISTICS, compute_statistics
from pibic.star import select_trend, star_bootstrap
from pibic.statistics import TestResult, decide


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(s) for s in text.split(",") if s.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, default=float)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------- test

def cmd_test(args) -> int:
    data = Dataset.from_csv(args.input)
    family = get_family(args.family)
    tests = args.tests
    bad = [t for t in tests if t not in ALL_STATISTICS]
    if bad:
        raise UsageError(f"unknown tests {bad}; choose from {ALL_STATISTICS}")
    res = compute_statistics(data, K=args.K, family=family, basis=args.basis, an_variance=args.an_variance)
    values = [res.values[t] for t in tests]
    results: list[TestResult] = []
    if args.bootstrap:
        gen = glm_null_generator(family, res.null_fit, data)

        def stat(d):
            r = compute_statistics(d, K=args.K, family=family, basis=args.basis, an_variance=args.an_variance)
            return [r.values[t] for t in tests]

        spec = BootstrapSpec(gen, stat, args.bootstrap, args.seed, tuple(tail_of(t) for t in tests))
        boot = run_bootstrap(spec, values, workers=args.workers)
        for t, v, p in zip(tests, values, boot.p_values):
            results.append(TestResult(t, float(v), "bootstrap", float(p), args.alpha, bool(p <= args.alpha),
                                      False, boot.provenance))
    else:
        s_method = "stable" if args.reference == "asymptotic" else "simulated"
        for t, v in zip(tests, values):
            ref = critical_value(t, args.K, data.n, args.alpha, reps=args.reps, seed=args.seed,
                                 s_method=s_method)
            results.append(decide(t, v, ref, args.alpha, lindley_safe=args.lindley_safe, K=args.K, n=data.n))
    _emit({"n": data.n, "K": args.K, "family": family.name,
           "orders": res.orders, "results": [r.to_dict() for r in results]}, args.out)
    return 0


# ---------------------------------------------------- simulate-critical

def cmd_simulate_critical(args) -> int:
    rows = []
    for a in args.alpha:
        if args.law in TEST_LAWS:
            cv = critical_value(args.law, args.K, args.n, a, reps=args.reps, seed=args.seed,
                                variant=args.variant)
            rows.append({"law": cv.law, "K": args.K, "n": args.n, "alpha": a, "quantile": cv.quantile,
                         "threshold": cv.threshold, "mc_stderr": cv.mc_stderr, "reps": cv.reps, "seed": cv.seed})
        else:
            try:
                kind = LawKind(args.law.upper())
            except ValueError:
                raise UsageError(f"unknown law {args.law!r}; use a test name {sorted(TEST_LAWS)} "
                                 f"or a law kind {[k.value for k in LawKind]}") from None
            law = LimitLaw(kind, K=args.K, n=args.n, m_tilde=args.K, variant=args.variant)
            s = simulate_law(law, args.reps, args.seed, workers=args.workers)
            rows.append({"law": law.label, "K": args.K, "n": args.n, "alpha": a, "quantile": s.quantile(a),
                         "threshold": s.quantile(a), "mc_stderr": s.stderr(a), "reps": args.reps,
                         "seed": args.seed})
    fields = list(rows[0])
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fields)
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


# ---------------------------------------------------------- studies

_STUDY_KEYS = ("n", "K", "reps", "seed", "family", "alt", "out", "eta", "effect_size", "basis",
               "null_reps", "crit_reps", "max_m", "calibration", "workers")


def _config(args) -> ExperimentConfig:
    over = {k: getattr(args, k) for k in _STUDY_KEYS if getattr(args, k, None) is not None}
    if getattr(args, "alpha", None):
        over["alphas"] = args.alpha
    if getattr(args, "tests", None):
        over["tests"] = args.tests
    if args.config:
        return ExperimentConfig.from_file(args.config, **over)
    return ExperimentConfig.from_mapping(over)


def cmd_type1(args) -> int:
    cfg = _config(args)
    res = run_type1_study(cfg)
    print("test  " + "  ".join(f"{a:>7}" for a in cfg.alphas))
    for t, by in res.rates.items():
        print(f"{t:<5} " + "  ".join(f"{by[a]:7.4f}" for a in cfg.alphas))
    return 0


def cmd_power(args) -> int:
    cfg = _config(args)
    rows = run_power_study(cfg)
    if not cfg.out:
        print("alternative,test,power")
        for r in rows:
            print(f"{r.alternative},{r.test},{r.power:.4f}")
    return 0


def cmd_lindley(args) -> int:
    grid = tuple(range(2, args.sqrt_n_max + 1))
    kw = {"reps": args.reps} if args.reps else {}
    rows = run_lindley_study(args.K, grid, args.alpha, seed=args.seed, out=args.out, **kw)
    if not args.out:
        print("sqrt_n,K,percentile")
        for r in rows:
            print(f"{r.sqrt_n:g},{r.K},{r.percentile:.6f}")
    return 0


# -------------------------------------------------------- star-trend

def _read_series(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    try:
        col = header.index("y") if "y" in header else len(header) - 1
        return np.array([float(r[col]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise UsageError(f"{path}: cannot read series column: {exc}") from None


def cmd_star(args) -> int:
    y = _read_series(args.input)
    sel = select_trend(y, args.max_degree)
    out = sel.to_dict()
    if args.bootstrap:
        boot = star_bootstrap(sel, B=args.bootstrap, seed=args.seed, workers=args.workers)
        out["bootstrap"] = {"B": boot.B, "seed": boot.seed, "failures": len(boot.failures),
                            "p_pi_bic": float(boot.p_values[0]), "p_pi_singleton": float(boot.p_values[1])}
    out = json.loads(json.dumps(out, default=float).replace("NaN", "null"))
    _emit(out, args.out)
    return 0


# ------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pibic", description="BIC-based lack-of-fit tests.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="test one dataset (CSV with columns x1, y)")
    t.add_argument("--input", required=True)
    t.add_argument("--K", type=int, default=10)
    t.add_argument("--family", default="gaussian")
    t.add_argument("--tests", type=_names, default=ALL_STATISTICS)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--reference", choices=("asymptotic", "simulated"), default="asymptotic",
                   help="S_n from the stable limit or from the simulated finite-K law")
    t.add_argument("--bootstrap", type=int, metavar="B", default=0, help="parametric bootstrap replicates")
    t.add_argument("--reps", type=int, default=30000)
    t.add_argument("--seed", type=int, default=DEFAULT_SEED)
    t.add_argument("--basis", choices=("legendre", "cosine"), default="legendre")
    t.add_argument("--an-variance", default="rice")
    t.add_argument("--lindley-safe", action="store_true")
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--out")
    t.set_defaults(func=cmd_test)

    c = sub.add_parser("simulate-critical", help="simulate limit-law critical values")
    c.add_argument("--law", required=True, help="test name (B_S, L_a, ...) or law kind")
    c.add_argument("--K", type=int)
    c.add_argument("--n", type=int)
    c.add_argument("--alpha", type=_floats, default=(0.10, 0.05, 0.01))
    c.add_argument("--reps", type=int, default=30000)
    c.add_argument("--seed", type=int, default=DEFAULT_SEED)
    c.add_argument("--variant")
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--out")
    c.set_defaults(func=cmd_simulate_critical)

    for name, func, hlp in (("type1-study", cmd_type1, "null rejection rates"),
                            ("power-study", cmd_power, "power under single/nested alternatives")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--config")
        s.add_argument("--n", type=int)
        s.add_argument("--K", type=int)
        s.add_argument("--reps", type=int)
        s.add_argument("--alpha", type=_floats)
        s.add_argument("--tests", type=_names)
        s.add_argument("--seed", type=int)
        s.add_argument("--family")
        s.add_argument("--alt")
        s.add_argument("--eta", type=float)
        s.add_argument("--effect-size", dest="effect_size", type=float)
        s.add_argument("--basis")
        s.add_argument("--null-reps", dest="null_reps", type=int)
        s.add_argument("--crit-reps", dest="crit_reps", type=int)
        s.add_argument("--max-m", dest="max_m", type=int)
        s.add_argument("--calibration")
        s.add_argument("--workers", type=int)
        s.add_argument("--out")
        s.set_defaults(func=func)

    li = sub.add_parser("lindley", help="rejection-threshold curves p_{n,K,alpha}")
    li.add_argument("--K", type=_ints, default=(1, 5, 10, 20))
    li.add_argument("--alpha", type=float, default=0.05)
    li.add_argument("--sqrt-n-max", type=int, default=100)
    li.add_argument("--reps", type=int)
    li.add_argument("--seed", type=int, default=DEFAULT_SEED)
    li.add_argument("--out")
    li.set_defaults(func=cmd_lindley)

    st = sub.add_parser("star-trend", help="trend degree selection for a pseudo-period series")
    st.add_argument("--input", required=True, help="CSV with columns j, y")
    st.add_argument("--max-degree", type=int, default=15)
    st.add_argument("--bootstrap", type=int, metavar="B", default=0)
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--workers", type=int, default=1)
    st.add_argument("--out")
    st.set_defaults(func=cmd_star)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PibicError, ConfigError) as exc:
        print(f"pibic: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"pibic: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
