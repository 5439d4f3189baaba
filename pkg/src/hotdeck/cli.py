"""Command-line entry point: ``hotdeck impute|pool|simulate|describe``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace

from .donors import NoDonors
from .engine import DataError, InsufficientReplicates, UnknownAnalysis, analyze, pool_estimates, run_imputations
from .files import (
    ConfigError,
    ParseError,
    ValidationError,
    load_completed,
    load_panel,
    load_run_config,
    load_scenario,
    save_completed,
)
from .panel import missingness_profile

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NO_DONORS = 0, 1, 2, 3


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hotdeck", description="Random hot deck multiple imputation for weekly panels.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    imp = sub.add_parser("impute", help="create M completed datasets")
    imp.add_argument("input")
    imp.add_argument("-c", "--config")
    imp.add_argument("-o", "--outdir", required=True)
    imp.add_argument("--seed", type=int)
    imp.add_argument("-M", type=int, dest="M")
    imp.add_argument("--workers", type=int)

    pool = sub.add_parser("pool", help="combine replicate analyses")
    pool.add_argument("input", help="imputed.csv, or a table with estimate,variance columns")
    pool.add_argument("-a", "--analysis", action="append",
                      help="analysis name (repeatable; default mean_frequency)")

    sim = sub.add_parser("simulate", help="run a simulation scenario")
    sim.add_argument("scenario")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--n-sim", type=int)
    sim.add_argument("--delimited", action="store_true", help="emit CSV instead of an aligned table")

    desc = sub.add_parser("describe", help="missingness profile of a panel file")
    desc.add_argument("input")
    return p


def _cmd_impute(args, out) -> int:
    cfg, workers = load_run_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.M is not None:
        changes["M"] = args.M
    try:
        cfg = replace(cfg, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.workers is not None:
        workers = args.workers
    ds = load_panel(args.input)
    results = run_imputations(ds, cfg, workers=workers)
    data_path, prov_path = save_completed(results, args.outdir)
    n_prov = sum(len(r.provenance) for r in results)
    print(f"wrote {cfg.M} replicates to {data_path} ({n_prov} provenance rows in {prov_path.name})", file=out)
    return EXIT_OK


def _pooled_row(name: str, est) -> list[str]:
    return [name, f"{est.Q_bar:.10g}", f"{est.W_bar:.10g}", f"{est.B:.10g}", f"{est.T:.10g}",
            f"{est.se:.10g}", f"{est.df:.6g}", f"{est.ci_95[0]:.10g}", f"{est.ci_95[1]:.10g}", str(est.M)]


def _cmd_pool(args, out) -> int:
    analyses = args.analysis or ["mean_frequency"]
    with open(args.input, encoding="utf-8") as f:
        first = f.readline()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["analysis", "Q_bar", "W_bar", "B", "T", "se", "df", "ci_low", "ci_high", "M"])
    if first.startswith("#"):
        reps = load_completed(args.input)
        for a in analyses:
            w.writerow(_pooled_row(a, pool_estimates([analyze(ds, a) for ds in reps.values()])))
        return EXIT_OK
    with open(args.input, encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if not rows or not {"estimate", "variance"} <= set(rows[0]):
        raise ParseError(1, "*", "expected estimate and variance columns")
    groups: dict[str, list[tuple[float, float]]] = {}
    for i, r in enumerate(rows, start=2):
        try:
            pair = (float(r["estimate"]), float(r["variance"]))
        except ValueError:
            raise ParseError(i, "estimate", "not a number") from None
        groups.setdefault(r.get("analysis") or analyses[0], []).append(pair)
    for name, pairs in groups.items():
        w.writerow(_pooled_row(name, pool_estimates(pairs)))
    return EXIT_OK


def _cmd_simulate(args, out) -> int:
    from .simulation import evaluate

    sc = load_scenario(args.scenario)
    seed = sc["seed"] if args.seed is None else args.seed
    n_sim = sc["n_sim"] if args.n_sim is None else args.n_sim
    report = evaluate(sc["generator"], sc["amputation"], sc["methods"], n_sim,
                      sc["estimand"], sc["run_config"], seed)
    out.write(report.to_delimited() if args.delimited else report.to_text())
    return EXIT_OK


def _cmd_describe(args, out) -> int:
    ds = load_panel(args.input)
    prof = missingness_profile(ds)
    print(f"records={prof.n_records} subjects={len(ds.roster)} overall_missing={prof.overall_rate:.4f}", file=out)
    print("variable,missing,rate", file=out)
    for var, n, rate in prof.table():
        print(f"{var},{n},{rate:.4f}", file=out)
    return EXIT_OK


COMMANDS = {"impute": _cmd_impute, "pool": _cmd_pool, "simulate": _cmd_simulate, "describe": _cmd_describe}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = _parser().parse_args(argv)
    except _Usage as exc:
        print(exc, file=err)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args, out)
    except NoDonors as exc:
        print(f"error: {exc}", file=err)
        return EXIT_NO_DONORS
    except (ConfigError, UnknownAnalysis) as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_USAGE
    except (ParseError, ValidationError, DataError, InsufficientReplicates) as exc:
        print(f"data error: {exc}", file=err)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_DATA
    except ValueError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
