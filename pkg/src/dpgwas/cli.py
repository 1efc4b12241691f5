"""Command-line entry point: ``dpgwas <subcommand> ...``.

Every run writes its output (JSON report or CSV) and a run manifest that
records the subcommand, the full flag set, the seed, SHA-256 digests of the
input and output files, the tool version and a timestamp. ``dpgwas replay``
re-runs a manifest and reproduces the output byte for byte.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as rngmod
from .core_stats import (FormatError, format_genotypes, read_genotypes, read_table,
                         table_from_snp)
from .dp_distributions import PerturbedChiSqDist
from .dp_mechanisms import (PrivacyBudget, dataset_statistics, release_chi2_single,
                            release_counts, release_maf, release_pvalue_single,
                            release_top_m_dataset, select_top_m)
from .epistasis import EpistasisConfig, FeatureEncoding, stepwise_select
from .evaluation import (RecoveryConfig, kl_grid, ks_closed_form, ks_fiber,
                         recovery_frequency, roc_study, rows_to_csv)
from .fiber_mcmc import FiberWalkConfig, empirical_perturbed_distribution
from .simgen import builtin_frequency_tables, synth_gwas, synth_planted_logistic

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
MANIFEST_SUFFIX = ".manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _fmt(x: float) -> str:
    return repr(float(x))


def _grid(spec: str) -> np.ndarray:
    try:
        a, b, step = (float(v) for v in spec.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be a:b:step, got {spec!r}") from None
    if step <= 0 or b < a:
        raise argparse.ArgumentTypeError("grid needs step > 0 and b >= a")
    n = int(np.floor((b - a) / step + 1e-9)) + 1
    return a + step * np.arange(n)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _seed(text):
    try:
        return rngmod.check_seed(int(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _common(p):
    p.add_argument("--seed", type=_seed, default=0, help="run seed (all randomness derives from it)")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--manifest", help=f"manifest path (default: OUT{MANIFEST_SUFFIX})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpgwas", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    # release
    rel = sub.add_parser("release", help="private release of summary statistics")
    rel_sub = rel.add_subparsers(dest="what", required=True, parser_class=_Parser)
    for name in ("maf", "counts", "chi2", "pvalue", "top-m"):
        p = rel_sub.add_parser(name)
        p.add_argument("--data", required=True, help="genotype file")
        p.add_argument("--epsilon", type=float, required=True)
        if name != "top-m":
            p.add_argument("--snp", action="append", default=None,
                           help="SNP id (repeatable; default all for maf/counts)")
        if name in ("maf", "counts"):
            p.add_argument("--clamp", action="store_true", help="clamp to the valid range")
        if name == "pvalue":
            p.add_argument("--projection-c", type=float, default=None,
                           help="project p-values onto exp(-N/c) before release")
        if name == "top-m":
            p.add_argument("--top-m", type=_positive_int, required=True)
            p.add_argument("--statistic", choices=("chi2", "pvalue"), default="chi2")
        _common(p)

    # dist
    dist = sub.add_parser("dist", help="null law of the perturbed chi-square statistic")
    dist_sub = dist.add_subparsers(dest="what", required=True, parser_class=_Parser)
    for name in ("pdf", "cdf", "quantile", "pvalue", "table"):
        p = dist_sub.add_parser(name)
        if name == "table":
            p.add_argument("--epsilon", type=float, nargs="+", required=True)
            p.add_argument("--grid", type=_grid, required=True, metavar="A:B:STEP",
                           help="grid start:stop:step; write --grid=-2:2:0.5 when A is negative")
        else:
            p.add_argument("--epsilon", type=float, required=True)
            p.add_argument("--at", type=float, required=True,
                           help="point x (probability for quantile)")
        p.add_argument("--mode", choices=("asymptotic", "exact"), default="asymptotic")
        p.add_argument("--n", type=int, default=None, help="sample size for --mode exact")
        _common(p)

    # mcmc
    p = sub.add_parser("mcmc", help="walk the fiber of a 3x2 table")
    p.add_argument("--table", required=True, help="file with the starting 3x2 table")
    p.add_argument("--steps", type=_positive_int, required=True)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--thin", type=_positive_int, default=1)
    p.add_argument("--target", choices=("uniform", "hyper"), default="hyper")
    p.add_argument("--perturb", choices=("stat", "cells", "none"), default="none")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--proposal", choices=("unit", "line"), default="unit")
    _common(p)

    # epistasis
    p = sub.add_parser("epistasis", help="private filter plus private stepwise logistic model")
    p.add_argument("--data", required=True)
    p.add_argument("--epsilon", type=float, required=True, help="budget of the regression stage")
    p.add_argument("--filter-epsilon", type=float, required=True,
                   help="budget of the top-M filter stage")
    p.add_argument("--top-m", type=_positive_int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--c", type=float, default=0.25)
    p.add_argument("--criterion", choices=("aic", "bic"), default="bic")
    p.add_argument("--delta-norm", choices=("squared", "literal"), default="squared")
    p.add_argument("--noise-epsilon", choices=("eps_prime", "literal"), default="eps_prime")
    _common(p)

    # simulate
    sim = sub.add_parser("simulate", help="synthetic genotype data")
    sim_sub = sim.add_subparsers(dest="what", required=True, parser_class=_Parser)
    p = sim_sub.add_parser("gwas")
    p.add_argument("--snps", type=int, required=True, help="number of null SNPs")
    p.add_argument("--causal-model", choices=("a", "b", "c", "d"), action="append",
                   default=None, help="frequency table of one causal SNP (repeatable)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--maf-min", type=float, default=0.05)
    p.add_argument("--maf-max", type=float, default=0.5)
    p.add_argument("--format", choices=("tsv", "csv"), default="tsv")
    _common(p)
    p = sim_sub.add_parser("planted")
    p.add_argument("--snps", type=int, required=True, help="total number of SNPs")
    p.add_argument("--model", choices=("additive", "interaction", "null"), required=True)
    p.add_argument("--strength", type=float, default=1.0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--format", choices=("tsv", "csv"), default="tsv")
    _common(p)

    # eval
    ev = sub.add_parser("eval", help="utility studies (CSV output)")
    ev_sub = ev.add_subparsers(dest="what", required=True, parser_class=_Parser)
    p = ev_sub.add_parser("kl")
    p.add_argument("--tables", nargs="+", choices=("a", "b", "c", "d"), default=list("abcd"))
    p.add_argument("--epsilon", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.4])
    p.add_argument("--n", type=int, nargs="+", default=[200, 500, 1000, 1500, 2000])
    p.add_argument("--statistic", choices=("chi2", "pvalue"), default="chi2")
    p.add_argument("--n-tables", type=_positive_int, default=10_000)
    p.add_argument("--bins", type=_positive_int, default=200)
    p.add_argument("--jobs", type=_positive_int, default=1)
    _common(p)
    p = ev_sub.add_parser("roc")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--n-pos", type=_positive_int, default=500)
    p.add_argument("--n-neg", type=_positive_int, default=500)
    p.add_argument("--runs", type=_positive_int, default=1,
                   help="with more than one run, emit one AUC per run instead of the curve")
    _common(p)
    p = ev_sub.add_parser("ks")
    p.add_argument("--epsilon", type=float, nargs="+", required=True)
    p.add_argument("--source", choices=("closed-form", "mcmc"), default="closed-form")
    p.add_argument("--draws", type=_positive_int, default=1_000_000)
    p.add_argument("--table", help="starting table for --source mcmc")
    p.add_argument("--perturb", choices=("stat", "cells", "none"), default="cells")
    p.add_argument("--steps", type=_positive_int, default=100_000)
    p.add_argument("--burn-in", type=int, default=10_000)
    p.add_argument("--chains", type=_positive_int, default=1)
    p.add_argument("--proposal", choices=("unit", "line"), default="line")
    p.add_argument("--jobs", type=_positive_int, default=1)
    _common(p)
    p = ev_sub.add_parser("recovery")
    p.add_argument("--causal-model", choices=("a", "b", "c", "d"), nargs="+", default=["c", "c"])
    p.add_argument("--snps", type=_positive_int, default=2000, help="number of null SNPs")
    p.add_argument("--top-m", type=_positive_int, default=3)
    p.add_argument("--epsilon", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.4])
    p.add_argument("--n", type=int, nargs="+", default=[1000, 2000, 4000, 8000])
    p.add_argument("--runs", type=_positive_int, default=200)
    p.add_argument("--statistic", choices=("chi2", "pvalue"), default="chi2")
    p.add_argument("--resample-data", action="store_true")
    p.add_argument("--jobs", type=_positive_int, default=1)
    _common(p)

    # replay
    p = sub.add_parser("replay", help="re-run a manifest")
    p.add_argument("manifest_file")
    p.add_argument("--out", help="output file (default: stdout)")
    return parser


# Subcommand implementations ------------------------------------------------
# Each returns the output text; file-producing subcommands write it themselves.

def _snps(dataset, names):
    return list(names) if names else list(dataset.snp_ids)


def _one_snp(args):
    if not args.snp or len(args.snp) != 1:
        raise ValueError(f"release {args.what} needs exactly one --snp")
    return args.snp[0]


def cmd_release(args, inputs):
    dataset = read_genotypes(args.data)
    inputs.append(args.data)
    budget = PrivacyBudget(args.epsilon)
    if args.what == "maf":
        report = release_maf(dataset, _snps(dataset, args.snp), budget, args.seed, args.clamp)
    elif args.what == "counts":
        names = _snps(dataset, args.snp)
        tables = [table_from_snp(dataset, s) for s in names]
        report = release_counts(tables, budget, args.seed, ids=names, clamp=args.clamp)
    elif args.what == "chi2":
        sid = _one_snp(args)
        report = release_chi2_single(table_from_snp(dataset, sid), budget, args.seed, sid)
    elif args.what == "pvalue":
        sid = _one_snp(args)
        report = release_pvalue_single(table_from_snp(dataset, sid), budget, args.seed,
                                       args.projection_c, sid)
    else:
        report = release_top_m_dataset(dataset, args.top_m, args.statistic, budget, args.seed)
    return report.to_json() + "\n"


def cmd_dist(args, inputs):
    if args.mode == "exact" and args.n is None:
        raise ValueError("--mode exact needs --n")
    if args.what == "table":
        buf = io.StringIO()
        buf.write("epsilon,x,pdf,cdf,sf\n")
        for eps in args.epsilon:
            d = PerturbedChiSqDist(eps, args.mode, args.n)
            x = args.grid
            for xi, f, F, S in zip(x, d.pdf(x), d.cdf(x), d.sf(x)):
                buf.write(",".join(_fmt(v) for v in (eps, xi, f, F, S)) + "\n")
        return buf.getvalue()
    d = PerturbedChiSqDist(args.epsilon, args.mode, args.n)
    fn = {"pdf": d.pdf, "cdf": d.cdf, "pvalue": d.pvalue, "quantile": d.quantile}[args.what]
    if args.what == "quantile" and not 0.0 < args.at < 1.0:
        raise ValueError("quantile needs a probability strictly between 0 and 1")
    return _fmt(fn(args.at)) + "\n"


_TARGETS = {"uniform": "uniform", "hyper": "hypergeometric"}
_PERTURB = {"stat": "statistic", "cells": "cells", "none": "none"}


def cmd_mcmc(args, inputs):
    table = read_table(args.table)
    inputs.append(args.table)
    config = FiberWalkConfig(args.steps, args.burn_in, args.thin, _TARGETS[args.target],
                             _PERTURB[args.perturb], args.epsilon, args.proposal)
    stats = empirical_perturbed_distribution(table, config, args.seed)
    return "statistic\n" + "".join(_fmt(v) + "\n" for v in stats)


def cmd_epistasis(args, inputs):
    dataset = read_genotypes(args.data)
    inputs.append(args.data)
    filter_budget = PrivacyBudget(args.filter_epsilon)
    fit_budget = PrivacyBudget(args.epsilon)
    stats = dataset_statistics(dataset, "chi2")
    if args.top_m > dataset.n_snps:
        raise ValueError(f"--top-m {args.top_m} exceeds the {dataset.n_snps} SNPs in the data")
    chosen = select_top_m(stats, args.top_m, "chi2", dataset.n_individuals, filter_budget,
                          rngmod.child_seed(args.seed, 0))
    config = EpistasisConfig(fit_budget.epsilon, args.lam, args.c, args.criterion,
                             delta_norm=args.delta_norm, noise_epsilon=args.noise_epsilon)
    result = stepwise_select(dataset, [int(i) for i in chosen], config,
                             rngmod.child_seed(args.seed, 1))
    enc = FeatureEncoding(result.terms)
    names = enc.describe(dataset.snp_ids)
    beta = result.fit.beta
    coef = {"intercept": float(beta[0])}
    for name, sl in zip(names, enc.block_slices().values()):
        coef[name] = beta[sl].tolist()
    out = {
        "candidate_snps": [dataset.snp_ids[i] for i in chosen],
        "selected_terms": names,
        "criterion": args.criterion,
        "score": result.score,
        "coefficients": coef,
        "epsilon": {"filter": filter_budget.epsilon, "fit": fit_budget.epsilon,
                    "total": filter_budget.epsilon + fit_budget.epsilon},
        "fit": {k: v for k, v in result.fit.to_dict().items() if k != "beta"},
        "n_fits": result.n_fits,
    }
    return json.dumps(out, indent=2) + "\n"


def cmd_simulate(args, inputs):
    if args.what == "gwas":
        freqs = builtin_frequency_tables()
        causal = [freqs[k] for k in (args.causal_model or [])]
        ds = synth_gwas(args.snps, causal, args.n, args.seed, (args.maf_min, args.maf_max))
    else:
        ds = synth_planted_logistic(args.n, args.snps, args.model, args.strength, args.seed)
    return format_genotypes(ds, "," if args.format == "csv" else "\t")


def cmd_eval(args, inputs):
    if args.what == "kl":
        rows = kl_grid(args.tables, args.epsilon, args.n, args.statistic, args.n_tables,
                       args.bins, args.seed, args.jobs)
        return rows_to_csv(rows)
    if args.what == "roc":
        if args.runs == 1:
            return roc_study(args.epsilon, args.n_pos, args.n_neg, args.seed).to_csv()
        rows = []
        for r in range(args.runs):
            s = rngmod.child_seed(args.seed, r)
            rows.append({"run": r, "seed": s,
                         "auc": roc_study(args.epsilon, args.n_pos, args.n_neg, s).auc})
        return rows_to_csv(rows)
    if args.what == "ks":
        if args.source == "closed-form":
            return rows_to_csv(ks_closed_form(args.epsilon, args.draws, args.seed, args.jobs))
        if not args.table:
            raise ValueError("--source mcmc needs --table")
        table = read_table(args.table)
        inputs.append(args.table)
        config = FiberWalkConfig(args.steps, args.burn_in, 1, "hypergeometric",
                                 _PERTURB[args.perturb], args.epsilon[0], args.proposal)
        return rows_to_csv(ks_fiber(table, args.epsilon, config, args.chains, args.seed,
                                    args.jobs))
    config = RecoveryConfig(tuple(args.causal_model), args.snps, args.statistic,
                            args.resample_data)
    rows = recovery_frequency(config, args.top_m, args.epsilon, args.n, args.runs,
                              args.seed, args.jobs)
    return rows_to_csv(rows)


COMMANDS = {"release": cmd_release, "dist": cmd_dist, "mcmc": cmd_mcmc,
            "epistasis": cmd_epistasis, "simulate": cmd_simulate, "eval": cmd_eval}


# Manifest -------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _flags(args) -> dict:
    skip = {"command", "what", "out", "manifest"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        if isinstance(v, np.ndarray):
            v = v.tolist()
        out[k] = v
    return out


def _manifest(args, argv, inputs, output_text) -> dict:
    sub = args.command + (f" {args.what}" if getattr(args, "what", None) else "")
    return {
        "subcommand": sub,
        "argv": _strip_output_flags(argv),
        "flags": _flags(args),
        "seed": args.seed,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "output_sha256": hashlib.sha256(output_text.encode("utf-8")).hexdigest(),
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }


def _strip_output_flags(argv):
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a in ("--out", "--manifest"):
            skip = True
            continue
        if a.startswith("--out=") or a.startswith("--manifest="):
            continue
        out.append(a)
    return out


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _execute(argv, parser):
    args = parser.parse_args(argv)
    if args.command == "replay":
        return _replay(args, parser)
    inputs: list = []
    text = COMMANDS[args.command](args, inputs)
    _emit(text, args.out)
    manifest = _manifest(args, argv, inputs, text)
    path = args.manifest or (args.out + MANIFEST_SUFFIX if args.out else None)
    blob = json.dumps(manifest, indent=2) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(blob)
    else:
        sys.stderr.write(blob)
    return EXIT_OK


def _replay(args, parser):
    try:
        manifest = json.loads(Path(args.manifest_file).read_text(encoding="utf-8"))
        argv = list(manifest["argv"])
        digests = manifest.get("inputs", {})
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValueError(f"unreadable manifest {args.manifest_file}: {exc}") from None
    for path, digest in digests.items():
        if not os.path.exists(path):
            raise ValueError(f"manifest input {path} is missing")
        if sha256_file(path) != digest:
            raise ValueError(f"manifest input {path} changed since the recorded run")
    inner = parser.parse_args(argv)
    if inner.command == "replay":
        raise ValueError("a manifest cannot replay another manifest")
    inner.out = args.out
    text = COMMANDS[inner.command](inner, [])
    _emit(text, args.out)
    expected = manifest.get("output_sha256")
    got = hashlib.sha256(text.encode("utf-8")).hexdigest()
    if expected and got != expected:
        sys.stderr.write(f"replay output differs from the recorded run ({got} != {expected})\n")
        return EXIT_RUNTIME
    return EXIT_OK


def run(argv=None) -> int:
    """Run the CLI and return the exit code."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _execute(argv, parser)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_VALIDATION
    except FormatError as exc:
        sys.stderr.write(f"dpgwas: malformed input: {exc}\n")
        return EXIT_VALIDATION
    except (ValueError, KeyError, IndexError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        sys.stderr.write(f"dpgwas: error: {msg}\n")
        return EXIT_VALIDATION
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(f"dpgwas: runtime failure: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
