"""Batch command line: impute, simulate, experiment, diagnose.

Every failure ends with one ``error: <CODE>: <message>`` line on stderr and
a nonzero exit status.
"""

from __future__ import annotations

import argparse
import csv
import io
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__, diagnostics, experiments, imputation, simulate, stats, tempering
from .config import ConfigError, RunConfig, format_config, load_config, parse_config
from .data import DataError, Dataset, format_schema, load_dataset, parse_schema
from .kernel import ConfigurationError, Hyperparams, Model
from .random_effects import init_random_effects
from .sampler import SamplerError

ERROR_CODES = (
    (ConfigError, "E_CONFIG"),
    (ConfigurationError, "E_CONFIG"),
    (DataError, "E_DATA"),
    (imputation.ImputationError, "E_IMPUTE"),
    (diagnostics.DiagnosticsError, "E_DIAGNOSTICS"),
    (SamplerError, "E_SAMPLER"),
    (stats.LinAlgError, "E_NUMERIC"),
    (OSError, "E_IO"),
)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)


def manifest_text(cfg: RunConfig) -> str:
    head = (
        f"# dpmcopula {__version__}\n"
        f"# python {platform.python_version()}\n"
        f"# numpy {np.__version__}\n"
        f"# scipy {scipy.__version__}\n"
    )
    return head + format_config(cfg)


def build_model(cfg: RunConfig) -> tuple[Model, Dataset]:
    schema = parse_schema(Path(cfg.schema).read_text())
    if cfg.group:
        schema = replace(schema, group=cfg.group)
    data = load_dataset(Path(cfg.data).read_text(), schema)
    p = sum(c.ordered for c in schema.columns)
    q = sum(c.n_latent for c in schema.columns if not c.ordered)
    hyper = Hyperparams.default(p, q, nu_sigma=cfg.nu_sigma or None)
    model = Model(data, kernel=cfg.kernel, hyper=hyper, mixture=cfg.mixture, latent_scan=cfg.latent_scan)
    return model, data


def draws_csv(result: tempering.RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if not result.draws:
        return ""
    d = result.draws[0].means.shape[1]
    w.writerow(["iteration", "component", "weight", "nu"] + [f"mean_{a}" for a in range(d)]
               + [f"sigma_{a}_{b}" for a in range(d) for b in range(d)])
    for dr in result.draws:
        for h in range(dr.weights.size):
            nu = "" if dr.nus is None else repr(float(dr.nus[h]))
            w.writerow([dr.iteration, h, repr(float(dr.weights[h])), nu]
                       + [repr(float(x)) for x in dr.means[h]] + [repr(float(x)) for x in dr.sigmas[h].ravel()])
    return buf.getvalue()


def read_draws(text: str) -> list[tempering.Draw]:
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise DataError("draw file is empty")
    header = rows[0]
    d = sum(h.startswith("mean_") for h in header)
    by_iter: dict[int, list[list[str]]] = {}
    for r in rows[1:]:
        by_iter.setdefault(int(r[0]), []).append(r)
    out = []
    for it, comps in by_iter.items():
        w = np.array([float(r[2]) for r in comps])
        nus = None if comps[0][3] == "" else np.array([float(r[3]) for r in comps])
        means = np.array([[float(x) for x in r[4:4 + d]] for r in comps])
        sig = np.array([[float(x) for x in r[4 + d:]] for r in comps]).reshape(-1, d, d)
        out.append(tempering.Draw(it, w, means, sig, nus, np.zeros(0)))
    return out


def loglik_csv(result: tempering.RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for dr in result.draws:
        w.writerow([dr.iteration] + [repr(float(x)) for x in dr.row_loglik])
    return buf.getvalue()


def run_impute(cfg: RunConfig) -> Path:
    """Fit, impute and write every artifact into ``cfg.out``."""
    model, data = build_model(cfg)
    out = Path(cfg.out)
    re_factory = None
    if data.groups is not None:
        re_factory = lambda: init_random_effects(data.groups, model.d)  # noqa: E731
    ladder = cfg.ladder if cfg.mixture else (cfg.ladder[0],)
    result = tempering.run(model, ladder, cfg.n_iter, cfg.burn_in, cfg.seed, thin=cfg.thin,
                           n_init_clusters=cfg.n_init_clusters, re_factory=re_factory)
    draws = imputation.multiple_impute(model, result, cfg.m)
    _write(out / "manifest.txt", manifest_text(cfg))
    for k, d in enumerate(draws, 1):
        _write(out / f"imputed_{k}.csv", d.data.to_csv())
    _write(out / "trace.csv", result.trace_csv())
    _write(out / "swaps.csv", result.swap_stats.to_csv(result.m_values))
    _write(out / "draws.csv", draws_csv(result))
    _write(out / "row_loglik.csv", loglik_csv(result))
    report = diagnostics.diagnose_run(model, result, cfg.n_replicates, rng=stats.make_rng(cfg.seed, 10_000))
    names = [data.names[j] for j in model.ordered_cols]
    _write(out / "diagnostics.csv", report.to_csv(names))
    return out


def run_diagnose(run_dir: Path, n_replicates: int | None = None) -> Path:
    """Recompute the diagnostics report from a finished run directory."""
    cfg = load_config(run_dir / "manifest.txt")
    model, data = build_model(cfg)
    draws = read_draws((run_dir / "draws.csv").read_text())
    ll = np.array([[float(x) for x in r[1:]] for r in csv.reader(io.StringIO((run_dir / "row_loglik.csv").read_text()))])
    observed = data.cells[:, list(model.ordered_cols)]
    rng = stats.make_rng(cfg.seed, 10_000)
    discrete = {k: model.ecdfs[k] for k, j in enumerate(model.ordered_cols)
                if data.schema.columns[j].kind == "ordinal"}
    tail = diagnostics.ppc_report(observed, draws, n_replicates=n_replicates or cfg.n_replicates, rng=rng,
                                  discrete_ecdfs=discrete) if model.p >= 2 else []
    report = diagnostics.DiagnosticsReport(diagnostics.lpml(ll), tail)
    names = [data.names[j] for j in model.ordered_cols]
    _write(run_dir / "diagnostics_recomputed.csv", report.to_csv(names))
    return run_dir / "diagnostics_recomputed.csv"


def run_simulate(design: str, seed: int, n_rows: int, gamma: float, out: Path, n_datasets: int = 1) -> Path:
    spec = simulate.SimSpec(design, n_rows, n_datasets, seed, gamma)
    sets = simulate.generate(spec, stats.make_rng(seed, 0))
    for k, entry in enumerate(sets, 1):
        suffix = "" if n_datasets == 1 else f"_{k}"
        truth = entry["truth"]
        _write(out / f"truth{suffix}.csv", truth.to_csv())
        _write(out / "schema.txt", format_schema(truth.schema))
        if "masked" in entry:
            _write(out / f"masked{suffix}.csv", entry["masked"].to_csv())
    return out


def run_experiment(design: str, out: Path, n_datasets: int, n_iter: int, burn_in: int, seed: int,
                   m: int = 10, gamma: float = simulate.MAR_GAMMAS[0.1]) -> Path:
    log = lambda s: print(s, file=sys.stderr)  # noqa: E731
    if design == "sim1":
        res = experiments.run_sim1(n_datasets=n_datasets, n_iter=n_iter, burn_in=burn_in, seed=seed, progress=log)
        _write(out / "sim1_upper.csv", res.table("upper").to_csv())
        _write(out / "sim1_lower.csv", res.table("lower").to_csv())
    elif design == "sim2":
        res = experiments.run_sim2(n_datasets=n_datasets, n_iter=n_iter, burn_in=burn_in, seed=seed, m=m,
                                   gamma=gamma, progress=log)
        _write(out / "sim2_accuracy.csv", res.accuracy_table().to_csv())
        _write(out / "sim2_regression.csv", res.regression_table().to_csv())
    elif design == "toy":
        seeds = range(seed, seed + n_datasets)
        _write(out / "toy_switches.csv", experiments.run_toy(seeds, n_iter=n_iter, burn_in=burn_in).to_csv())
    else:
        raise ConfigError(f"unknown experiment design {design!r}")
    return out


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpmcopula", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    imp = sub.add_parser("impute", help="fit the model and write imputed datasets and diagnostics")
    imp.add_argument("--config", help="key = value file; flags override its entries")
    imp.add_argument("--data")
    imp.add_argument("--schema")
    imp.add_argument("--out")
    imp.add_argument("--kernel", choices=("gaussian", "t"))
    imp.add_argument("--single", action="store_true", help="single copula instead of the DP mixture")
    imp.add_argument("--ladder", help="comma-separated increasing total-mass values")
    imp.add_argument("--n-iter", type=int)
    imp.add_argument("--burn-in", type=int)
    imp.add_argument("--m", type=int)
    imp.add_argument("--thin", type=int)
    imp.add_argument("--seed", type=int)
    imp.add_argument("--group")
    imp.add_argument("--nu-sigma", type=float)

    sim = sub.add_parser("simulate", help="write a seeded benchmark dataset")
    sim.add_argument("--design", required=True, choices=simulate.DESIGNS)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--n-rows", type=int, default=200)
    sim.add_argument("--n-datasets", type=int, default=1)
    sim.add_argument("--gamma", type=float, default=simulate.MAR_GAMMAS[0.1])
    sim.add_argument("--out", required=True)

    exp = sub.add_parser("experiment", help="run a benchmark experiment and write summary tables")
    exp.add_argument("--design", required=True, choices=("sim1", "sim2", "toy"))
    exp.add_argument("--n-datasets", type=int, default=20)
    exp.add_argument("--n-iter", type=int, default=10_000)
    exp.add_argument("--burn-in", type=int, default=5_000)
    exp.add_argument("--m", type=int, default=10)
    exp.add_argument("--gamma", type=float, default=simulate.MAR_GAMMAS[0.1])
    exp.add_argument("--seed", type=int, default=1)
    exp.add_argument("--out", required=True)

    diag = sub.add_parser("diagnose", help="recompute diagnostics from a finished impute run")
    diag.add_argument("--run", required=True, help="output directory of an impute run")
    diag.add_argument("--n-replicates", type=int)
    return ap


def _impute_config(args) -> RunConfig:
    overrides = dict(
        data=args.data, schema=args.schema, out=args.out, kernel=args.kernel,
        n_iter=args.n_iter, burn_in=args.burn_in, m=args.m, thin=args.thin, seed=args.seed,
        group=args.group, nu_sigma=args.nu_sigma,
        mixture=False if args.single else None,
        ladder=tuple(float(x) for x in args.ladder.split(",")) if args.ladder else None,
    )
    if args.config:
        return load_config(args.config, **overrides)
    return parse_config("", **overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "impute":
            cfg = _impute_config(args)
            if not cfg.data or not cfg.schema:
                raise ConfigError("data and schema paths are required")
            print(run_impute(cfg))
        elif args.command == "simulate":
            print(run_simulate(args.design, args.seed, args.n_rows, args.gamma, Path(args.out), args.n_datasets))
        elif args.command == "experiment":
            print(run_experiment(args.design, Path(args.out), args.n_datasets, args.n_iter, args.burn_in,
                                 args.seed, args.m, args.gamma))
        else:
            print(run_diagnose(Path(args.run), args.n_replicates))
    except Exception as exc:  # every failure becomes one parseable line
        code = next((c for cls, c in ERROR_CODES if isinstance(exc, cls)), "E_INTERNAL")
        msg = str(exc).replace("\n", " ")
        print(f"error: {code}: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
