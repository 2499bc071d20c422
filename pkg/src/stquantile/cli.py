"""Command-line front end.

Every command writes its artifacts atomically into ``--out``; CSV files start
with a ``# stquantile <version> config=<hash>`` line and JSON files carry the
same string under ``"header"``. Exit status is 0 on success, 1 on a usage or
input error and 2 on a numerical failure, which also leaves ``error.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .asymptotics import default_grid, location_bands, write_band_csv
from .clustering import (average_daily_profile, cluster_households, default_max_size,
                         distance_matrix)
from .inference import test_covariate_homogeneity, test_temporal_homogeneity
from .io import config_hash, write_csv, write_json
from .kernel import KernelSpec, scaled_bandwidth
from .model import (DatasetError, SolverOptions, direction_from_tau, load_dataset,
                    save_dataset)
from .simgen import generate_scenario, mae_mape, oracle_true_quantile, scenario_config
from .solver import estimate_quantile

__all__ = ["main", "build_parser"]

SETUPS = ("1", "2", "ht-cov", "ht-time")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _tau_list(text: str):
    try:
        taus = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid tau list {text!r}") from None
    if not taus or any(not 0 < t < 1 for t in taus):
        raise argparse.ArgumentTypeError("every tau must lie in (0, 1)")
    return taus


def _bandwidth(text: str):
    if text == "auto":
        return text
    try:
        b = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("bandwidth must be a number or 'auto'") from None
    if not b > 0:
        raise argparse.ArgumentTypeError("bandwidth must be positive")
    return b


def _cap(text: str):
    if text == "auto":
        return text
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("max cluster size must be an integer or 'auto'") from None
    if v < 1:
        raise argparse.ArgumentTypeError("max cluster size must be at least 1")
    return v


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stquantile", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"stquantile {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True, out=True):
        if data:
            p.add_argument("--data", help="dataset directory or responses.csv")
            p.add_argument("--setup", choices=SETUPS,
                           help="simulate the input instead of reading --data")
            p.add_argument("--sigma", type=float, default=0.1, help="noise level of ht setups")
            p.add_argument("--comonotone", type=_bool, default=True)
            p.add_argument("--seed", type=int, default=0)
        if out:
            p.add_argument("--out", required=True, help="output directory")

    def kernel(p):
        p.add_argument("--bandwidth", type=_bandwidth, default="auto")
        p.add_argument("--kernel", choices=("gaussian", "epanechnikov"), default="gaussian")

    p = sub.add_parser("simulate", help="generate a simulated dataset")
    p.add_argument("--setup", choices=SETUPS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--comonotone", type=_bool, default=True)
    p.add_argument("--replicate", type=int, default=0)
    common(p, data=False)

    for name, helptext in (("estimate", "fit quantiles at covariate rows"),
                           ("predict", "fit quantiles at future covariate rows")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        kernel(p)
        p.add_argument("--tau", type=_tau_list, default=[0.5])
        p.add_argument("--x-file", required=name == "predict",
                       help="CSV of covariate rows (header line, then one row per point)")

    p = sub.add_parser("band", help="simultaneous confidence bands per location")
    common(p)
    kernel(p)
    p.add_argument("--tau", type=_tau_list, default=[0.5])
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--x-file", help="grid CSV; default thins the observed covariates")

    p = sub.add_parser("test", help="homogeneity test")
    common(p)
    kernel(p)
    p.add_argument("--kind", choices=("covariate", "temporal"), required=True)
    p.add_argument("--tau", type=_tau_list, default=[0.5])
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--x-file", help="grid CSV; default thins the observed covariates")
    p.add_argument("--covariance", choices=("residual", "identity"), default="residual")

    p = sub.add_parser("cluster", help="DTW clustering of average daily profiles")
    common(p)
    p.add_argument("--period", type=_positive_int, default=48, help="observations per day")
    p.add_argument("--max-cluster-size", type=_cap, default="auto")
    p.add_argument("--radius", type=_positive_int, default=2)
    p.add_argument("--n-clusters", type=_positive_int, help="stop merging at this many clusters")

    p = sub.add_parser("evaluate", help="MAE and MAPE against simulation truths")
    p.add_argument("--setup", choices=SETUPS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--comonotone", type=_bool, default=True)
    p.add_argument("--replicates", type=_positive_int, default=20)
    p.add_argument("--tau", type=_tau_list, default=[0.5])
    p.add_argument("--x-file", help="covariate rows; default depends on the setup")
    kernel(p)
    common(p, data=False)
    return parser


# ------------------------------------------------------------------ helpers

def _digest(path) -> str:
    if os.path.isdir(path):
        files = sorted(f for f in os.listdir(path) if f.endswith(".csv"))
        return config_hash({f: _digest(os.path.join(path, f)) for f in files})
    with open(path, "rb") as fh:
        return config_hash({"bytes": fh.read().hex()})


def _config(args) -> dict:
    """Run configuration with input files identified by content, not path."""
    config = {k: v for k, v in vars(args).items() if k != "out"}
    for key in ("data", "x_file"):
        path = config.get(key)
        if path:
            config[key + "_digest"] = _digest(path)
            config[key] = os.path.basename(os.path.normpath(path))
    return config


def _header(config: dict) -> str:
    return f"stquantile {__version__} config={config_hash(config)}"


def _dataset(args):
    if args.data and args.setup:
        raise UsageError("give either --data or --setup, not both")
    if args.data:
        return load_dataset(args.data)
    if args.setup:
        cfg = scenario_config(args.setup, seed=args.seed, sigma=args.sigma,
                              comonotone=args.comonotone)
        return generate_scenario(cfg)[0]
    raise UsageError("an input is required: --data or --setup")


def _read_x(path, d: int) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    rows = list(csv.reader(lines))[1:]
    try:
        X = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError:
        raise DatasetError(f"{path}: covariate rows must be numeric") from None
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] != d:
        raise DatasetError(f"{path}: expected rows with {d} covariate values")
    return X


def _spec(args, dataset, scaled: bool = False) -> KernelSpec:
    """``auto`` is ``n^{-1/5}`` for fits and the covariate-scaled rule for
    grid-based commands, which need room for at least three grid points."""
    b = args.bandwidth
    if b == "auto" and scaled:
        b = scaled_bandwidth(dataset.covariates)
    return KernelSpec.for_sample_size(dataset.n, family=args.kernel, bandwidth=b)


# ----------------------------------------------------------------- commands

def _simulate(args, header):
    cfg = scenario_config(args.setup, seed=args.seed, sigma=args.sigma, comonotone=args.comonotone)
    ds, truth = generate_scenario(cfg, args.replicate)
    save_dataset(ds, args.out, header)
    write_json(os.path.join(args.out, "truth.json"),
               {"header": header, "scenario": cfg, "replicate": args.replicate,
                "truth": truth.to_dict()})


def _estimate(args, header, name):
    ds = _dataset(args)
    spec = _spec(args, ds)
    X = _read_x(args.x_file, ds.d) if args.x_file else ds.covariates[-1:]
    rows = []
    opts = SolverOptions()
    for k, x in enumerate(X):
        for tau in args.tau:
            fit = estimate_quantile(ds, x, direction_from_tau(tau, ds.p), spec, opts)
            for j, loc in enumerate(ds.locations):
                rows.append((k, tau, loc, fit.q_hat[j], int(fit.converged)))
    fname = "quantiles.csv" if name == "estimate" else "predictions.csv"
    write_csv(os.path.join(args.out, fname), ["x_index", "tau", "location", "value", "converged"],
              rows, header)


def _grid(args, ds, spec):
    if args.x_file:
        return _read_x(args.x_file, ds.d)
    return default_grid(ds.covariates, spec.bandwidth)


def _band(args, header):
    ds = _dataset(args)
    spec = _spec(args, ds, scaled=True)
    grid = _grid(args, ds, spec)
    for tau in args.tau:
        bands = location_bands(ds, grid, tau, args.alpha, spec)
        write_band_csv(os.path.join(args.out, f"band_tau{tau:g}.csv"), bands, ds.locations, header)


def _test(args, header):
    ds = _dataset(args)
    spec = _spec(args, ds, scaled=True)
    reports = []
    for tau in args.tau:
        if args.kind == "temporal":
            if args.x_file:
                grid = _read_x(args.x_file, 1)
            else:
                grid = default_grid(ds.covariates, spec.bandwidth, anchor=ds.covariates.max())
            rep = test_temporal_homogeneity(ds, tau, grid, args.alpha, spec,
                                            covariance=args.covariance)
        else:
            rep = test_covariate_homogeneity(ds, tau, _grid(args, ds, spec), args.alpha, spec,
                                             covariance=args.covariance)
        reports.append(rep.to_dict())
    payload = dict(reports[0]) if len(reports) == 1 else {"reports": reports}
    payload["header"] = header
    write_json(os.path.join(args.out, "test_report.json"), payload)


def _cluster(args, header):
    ds = _dataset(args)
    profiles = np.array([average_daily_profile(ds.responses[:, j], args.period)
                         for j in range(ds.p)])
    cap = default_max_size(ds.n) if args.max_cluster_size == "auto" else args.max_cluster_size
    D = distance_matrix(profiles, args.radius)
    labels = cluster_households(profiles, cap, args.radius, distances=D,
                                n_clusters=args.n_clusters)
    write_csv(os.path.join(args.out, "clusters.csv"), ["location", "cluster"],
              [(loc, int(c)) for loc, c in zip(ds.locations, labels)], header)
    # log scale only for heatmap display
    write_csv(os.path.join(args.out, "distances.csv"), ["location", *ds.locations],
              [(loc, *np.log1p(D[j])) for j, loc in enumerate(ds.locations)], header)


def _evaluate(args, header):
    cfg = scenario_config(args.setup, seed=args.seed, sigma=args.sigma, comonotone=args.comonotone)
    rows = []
    per_key = {}
    for r in range(args.replicates):
        ds, truth = generate_scenario(cfg, r)
        spec = _spec(args, ds)
        if args.x_file:
            X = _read_x(args.x_file, ds.d)
        elif args.setup == "2":
            X = np.array([[0.25], [0.5], [1.0]])
        else:
            X = ds.covariates[-1:]
        for k, x in enumerate(X):
            for tau in args.tau:
                direction = direction_from_tau(tau, ds.p)
                q = estimate_quantile(ds, x, direction, spec).q_hat
                if args.setup == "2":
                    target = truth.quantile(tau, float(x[0]))
                else:
                    target = oracle_true_quantile(direction, x, truth, seed=r)
                per_key.setdefault((tau, k), []).append((q, target))
    for (tau, k), pairs in sorted(per_key.items()):
        est = np.array([a for a, _ in pairs])
        tru = np.array([b for _, b in pairs])
        mae, mape, skipped = mae_mape(est, tru, return_skipped=True)
        rows.append((tau, k, mae, mape, skipped))
    write_csv(os.path.join(args.out, "metrics.csv"), ["tau", "x_index", "mae", "mape", "skipped"],
              rows, header)


COMMANDS = {
    "simulate": _simulate,
    "estimate": lambda a, h: _estimate(a, h, "estimate"),
    "predict": lambda a, h: _estimate(a, h, "predict"),
    "band": _band,
    "test": _test,
    "cluster": _cluster,
    "evaluate": _evaluate,
}


def _report_error(args, kind, exc) -> None:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)
    out = getattr(args, "out", None)
    if out:
        try:
            write_json(os.path.join(out, "error.json"), payload)
        except OSError:
            pass


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        header = _header(_config(args))
        COMMANDS[args.command](args, header)
    except UsageError as exc:
        print(f"stquantile: error: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, OSError) as exc:
        _report_error(args, "input", exc)
        return 1
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError, ArithmeticError) as exc:
        _report_error(args, "numerical", exc)
        return 2
    except ValueError as exc:
        _report_error(args, "input", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
