"""Command-line entry point: ``barcode <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical abort.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .data_model import InadmissibleStateError
from .gibbs import fit
from .io import (
    DataError,
    RunConfig,
    ingest,
    load_archive,
    serialize_archive,
    write_counts,
    write_table,
)
from .latent_regression import FactorizationError
from . import posthoc, simulation

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
COMMANDS = ("fit", "simulate", "diagnose", "cluster", "predict-cv", "summarize")

log = logging.getLogger("barcode_jsdm")


class UsageError(Exception):
    pass


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--chains", type=int)
    common.add_argument("--burnin", type=int)
    common.add_argument("--samples", type=int)
    common.add_argument("--thin", type=int)
    common.add_argument("--factors", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--no-spatial", action="store_true", help="drop the site-level GP effects")
    common.add_argument("--folds", type=int)
    common.add_argument("--counts")
    common.add_argument("--covariates")
    common.add_argument("--sites")
    common.add_argument("--archive", help="directory written by 'fit'")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="barcode", description="Sparse Bayesian Poisson factorization.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    sub.add_parser("fit", parents=[common], help="run chains and write the archive")
    sp = sub.add_parser("simulate", parents=[common], help="recovery experiments on synthetic data")
    sp.add_argument("--grid", choices=("S", "C", "B"))
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--n", type=int, help="single scenario instead of a grid")
    sp.add_argument("--p", type=int)
    sub.add_parser("diagnose", parents=[common], help="PSRF table")
    sub.add_parser("cluster", parents=[common], help="barcode clusters and regions of common profile")
    sub.add_parser("predict-cv", parents=[common], help="cross-validated RMSE")
    sub.add_parser("summarize", parents=[common], help="factor presence and covariate signs")
    return parser


def _run_config(args):
    base = RunConfig.from_file(args.config) if args.config else RunConfig()
    d = base.to_dict()
    d["hypers"] = dict(base.hypers)
    d["sweep"] = dict(base.sweep)
    for key in ("seed", "folds", "counts", "covariates", "sites", "out", "archive"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    for key in ("grid", "replicates"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    sweep_flags = {"chains": "n_chains", "burnin": "n_burnin", "samples": "n_samples", "thin": "thin"}
    for flag, name in sweep_flags.items():
        v = getattr(args, flag)
        if v is not None:
            d["sweep"][name] = v
    if args.no_spatial:
        d["sweep"]["spatial"] = False
    if args.factors is not None:
        d["hypers"]["L"] = args.factors
    return RunConfig.from_dict(d)


def _need(value, flag):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _write_manifest_echo(out, cfg, extra=None):
    os.makedirs(out, exist_ok=True)
    payload = {"run_config": cfg.to_dict()}
    if extra:
        payload.update(extra)
    text = json.dumps(payload, indent=2, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o))
    with open(os.path.join(out, "run_config.json"), "w") as fh:
        fh.write(text)


def _load_data(cfg):
    ds = ingest(_need(cfg.counts, "--counts"), cfg.covariates, cfg.sites)
    log.info("ingested n=%d p=%d m=%d (%.1f%% zeros)", ds.Y.n, ds.Y.p, ds.Y.m, 100 * ds.Y.zero_fraction)
    return ds


def cmd_fit(cfg):
    ds = _load_data(cfg)
    hypers, sweep = cfg.hyper_params(), cfg.sweep_config()
    arch = fit(ds.Y, ds.X, ds.geometry, hypers, sweep, seed=cfg.seed)
    arch.meta["covariate_names"] = list(ds.X.names)
    if ds.years is not None:
        arch.meta["years"] = ds.years.tolist()
    arch.meta["run_config"] = cfg.to_dict()
    serialize_archive(arch, cfg.out, binary=cfg.binary_export)
    print(f"wrote {arch.n_chains} chains x {arch.chains[0].n_draws if arch.chains else 0} draws to {cfg.out}")


def _archive(cfg):
    return load_archive(_need(cfg.archive, "--archive"))


def cmd_diagnose(cfg):
    arch = _archive(cfg)
    rows = posthoc.psrf_table(arch)
    header = ["group", "n", "undefined", "median", "q025", "q975"]
    table = [[r[h] if not isinstance(r[h], float) else f"{r[h]:.6g}" for h in header] for r in rows]
    os.makedirs(cfg.out, exist_ok=True)
    write_table(os.path.join(cfg.out, "psrf.csv"), header, table)
    for r in table:
        print(",".join(str(v) for v in r))


def cmd_cluster(cfg):
    arch = _archive(cfg)
    rep = posthoc.barcode_clusters(arch)
    os.makedirs(cfg.out, exist_ok=True)
    rows = [[r["cluster"], r["barcode"], r["occupancy"], int(r["specialist"]), int(r["generalist"]),
             ";".join(r["members"])] for r in rep.rows()]
    write_table(os.path.join(cfg.out, "clusters.csv"),
                ["cluster", "barcode", "occupancy", "specialist", "generalist", "members"], rows)
    names = arch.species or tuple(str(j) for j in range(rep.labels.size))
    write_table(os.path.join(cfg.out, "species_barcodes.csv"), ["species", "barcode", "cluster"],
                [[names[j], "".join(str(int(b)) for b in rep.species_barcodes[j]), int(rep.labels[j])]
                 for j in range(rep.labels.size)])
    write_table(os.path.join(cfg.out, "regions.csv"), ["site", "dominant_factor"],
                [[k, int(v)] for k, v in enumerate(rep.site_labels)])
    print(f"{rep.n_clusters} occupied clusters; {int(rep.specialist.sum())} specialist barcodes")


def cmd_summarize(cfg):
    arch = _archive(cfg)
    years = arch.meta.get("years")
    pres = posthoc.factor_presence(arch, groups=years)
    L = pres["presence"].size
    os.makedirs(cfg.out, exist_ok=True)
    write_table(os.path.join(cfg.out, "presence.csv"), ["factor", "presence_pct", "strength_share"],
                [[l, f"{100 * pres['presence'][l]:.6g}", f"{pres['strength'][l]:.6g}"] for l in range(L)])
    if years is not None:
        rows = []
        for g, v in sorted(pres["by_group"].items()):
            rows += [[g, l, f"{100 * v['presence'][l]:.6g}", f"{v['strength'][l]:.6g}"] for l in range(L)]
        write_table(os.path.join(cfg.out, "presence_by_year.csv"),
                    ["year", "factor", "presence_pct", "strength_share"], rows)
    prob, sign = posthoc.covariate_sign_table(arch)
    names = arch.meta.get("covariate_names") or [f"x{k}" for k in range(prob.shape[0])]
    rows = [[names[k], l + 1, f"{prob[k, l]:.6g}", int(sign[k, l])]
            for k in range(prob.shape[0]) for l in range(prob.shape[1])]
    write_table(os.path.join(cfg.out, "covariate_signs.csv"), ["covariate", "factor", "prob_positive", "sign"], rows)
    print(f"summaries written to {cfg.out}")


def cmd_predict_cv(cfg):
    ds = _load_data(cfg)
    res = posthoc.cv_predict(ds.Y, ds.X, ds.geometry if cfg.sweep_config().spatial else None,
                             cfg.hyper_params(), cfg.sweep_config(), folds=cfg.folds, seed=cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    rows = [[k, f"{r:.6g}", f"{np.max(P):.6g}", f"{b:.6g}", int(np.all(np.isfinite(P)))]
            for k, (r, P, b) in enumerate(zip(res.rmse, res.predictions, res.bounds))]
    write_table(os.path.join(cfg.out, "cv_rmse.csv"), ["fold", "rmse", "max_prediction", "bound", "finite"], rows)
    print(f"mean RMSE {res.mean_rmse:.4f} over {cfg.folds} folds")


def cmd_simulate(cfg, args):
    sweep = cfg.sweep_config()
    L = cfg.hyper_params().L if "L" in cfg.hypers else 4
    hypers = cfg.hyper_params().replace(L=L)
    covariates = cfg.grid == "B"
    if args.n is not None or args.p is not None:
        cells = ((_need(args.n, "--n"), _need(args.p, "--p")),)
    else:
        cells = {"S": simulation.S_GRID, "C": simulation.C_GRID, "B": simulation.B_GRID}[cfg.grid]
    os.makedirs(cfg.out, exist_ok=True)
    rows = []
    for n, p in cells:
        sc = simulation.SimScenario(n, p, L, seed=cfg.seed, with_covariates=covariates,
                                    n_replicates=cfg.replicates)
        Y, truth = simulation.generate(sc, replicate=0)
        ddir = os.path.join(cfg.out, "data", f"n{n}_p{p}")
        os.makedirs(ddir, exist_ok=True)
        write_counts(os.path.join(ddir, "counts.csv"), Y)
        for name in ("C", "S", "Phi", "G"):
            a = getattr(truth, name)
            write_table(os.path.join(ddir, f"truth_{name}.csv"), [f"f{l}" for l in range(L)],
                        [[repr(float(v)) if a.dtype.kind == "f" else int(v) for v in r] for r in a])
        for r in range(cfg.replicates):
            row = simulation.run_replicate(sc, r, sweep, hypers)
            rows.append(row)
            log.info("n=%d p=%d rep=%d S=%.4f C=%.4f", n, p, r, row["S_error"], row["C_error"])
    header = ["n", "p", "L", "replicate", "S_error", "C_error", "nnz", "seconds"]
    if covariates:
        header += ["B_coverage", "B_width"]
    write_table(os.path.join(cfg.out, "metrics.csv"), header,
                [[repr(r[h]) if isinstance(r[h], float) else r[h] for h in header] for r in rows])
    print(f"{len(rows)} replicate rows written to {os.path.join(cfg.out, 'metrics.csv')}")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _run_config(args)
        _write_manifest_echo(cfg.out, cfg, {"command": args.command})
        if args.command == "fit":
            cmd_fit(cfg)
        elif args.command == "simulate":
            cmd_simulate(cfg, args)
        elif args.command == "diagnose":
            cmd_diagnose(cfg)
        elif args.command == "cluster":
            cmd_cluster(cfg)
        elif args.command == "predict-cv":
            cmd_predict_cv(cfg)
        elif args.command == "summarize":
            cmd_summarize(cfg)
    except UsageError as exc:
        print(f"barcode {args.command}: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # configuration problems (unknown keys, invalid settings)
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InadmissibleStateError, FactorizationError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
