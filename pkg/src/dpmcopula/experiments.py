"""Benchmark experiments: repeated generate -> fit -> assess loops and their summary tables."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diagnostics, imputation, simulate, stats, tempering
from .kernel import Model

SIM1_LADDER = (0.005, 0.01, 0.05, 0.1, 0.5, 0.8, 1.1, 1.4, 1.7, 2.0)
SIM2_LADDER = tuple(1.0 + 0.5 * k for k in range(10))
TOY_LADDER = (0.005, 0.01, 0.05, 0.1)
U_LEVELS = (0.95, 0.9, 0.85)

# name -> (kernel, mixture)
COMPETITORS = {
    "single_gaussian": ("gaussian", False),
    "single_t": ("t", False),
    "dpm_gaussian": ("gaussian", True),
    "dpm_t": ("t", True),
}


def dataset_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def fit(data, name: str, ladder: Sequence[float], n_iter: int, burn_in: int, seed: int, thin: int = 1):
    kern, mixture = COMPETITORS[name]
    model = Model(data, kernel=kern, mixture=mixture)
    result = tempering.run(model, ladder if mixture else (1.0,), n_iter, burn_in, seed, thin=thin)
    return model, result


@dataclass
class Table:
    header: list[str]
    rows: list[list] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])
        return buf.getvalue()


# --- tail dependence and LPML ----------------------------------------------

@dataclass
class Sim1Outcome:
    lpml: dict[str, list[float]]
    checks: dict[str, list[list[diagnostics.TailCheck]]]
    seconds: float

    def coverage(self, name: str, u: float, side: str = "upper") -> float:
        hits = [c.covered for ds in self.checks[name] for c in ds if c.u == u and c.side == side]
        return float(np.mean(hits))

    def p_value(self, name: str, u: float, side: str = "upper") -> float:
        ps = [c.bayesian_p for ds in self.checks[name] for c in ds if c.u == u and c.side == side]
        return float(np.mean(ps))

    def table(self, side: str = "upper") -> Table:
        names = list(self.lpml)
        t = Table(["statistic", "quantity"] + names)
        for u in U_LEVELS:
            t.rows.append([f"u={u}", "coverage"] + [100.0 * self.coverage(n, u, side) for n in names])
            t.rows.append([f"u={u}", "p-value"] + [self.p_value(n, u, side) for n in names])
        t.rows.append(["LPML", "mean"] + [float(np.mean(self.lpml[n])) for n in names])
        t.rows.append(["LPML", "sd"] + [float(np.std(self.lpml[n], ddof=1)) if len(self.lpml[n]) > 1 else 0.0
                                        for n in names])
        return t


def run_sim1(n_datasets: int = 20, n_rows: int = 200, n_iter: int = 10_000, burn_in: int = 5_000,
             seed: int = 1, kind: str = "gaussian", ladder: Sequence[float] = SIM1_LADDER,
             models: Sequence[str] = ("single_gaussian", "single_t", "dpm_gaussian"),
             thin: int = 5, n_replicates: int = 200, progress=None) -> Sim1Outcome:
    """Tail-dependence coverage, Bayesian p-values and LPML per competitor."""
    start = time.perf_counter()
    lp = {n: [] for n in models}
    checks = {n: [] for n in models}
    for ds in range(n_datasets):
        s = dataset_seed(seed, ds)
        u = simulate.gen_sim1(kind, n_rows, stats.make_rng(s, 10_000))
        data = simulate.sim1_dataset(u)
        for name in models:
            model, result = fit(data, name, ladder, n_iter, burn_in, s, thin)
            lp[name].append(diagnostics.lpml(result.row_loglik))
            checks[name].append(diagnostics.ppc_report(u, result.draws, U_LEVELS, n_replicates,
                                                       stats.make_rng(s, 20_000)))
            if progress:
                progress(f"sim1 dataset {ds} {name}: lpml={lp[name][-1]:.2f}")
    return Sim1Outcome(lp, checks, time.perf_counter() - start)


# --- imputation accuracy and Poisson regression -----------------------------

POISSON_RESPONSE = "Y1"
POISSON_PREDICTORS = ("Y2", "Y3", "Y4")


@dataclass
class Sim2Outcome:
    accuracy: dict[str, list[dict[str, float]]]
    truth_coef: list[dict[str, float]]
    pooled: dict[str, list[dict[str, imputation.PooledEstimate]]]
    seconds: float

    def mean_accuracy(self, name: str, column: str) -> float:
        return float(np.mean([a[column] for a in self.accuracy[name]]))

    def coverage(self, name: str, coef: str) -> float:
        hits = []
        for truth, pooled in zip(self.truth_coef, self.pooled[name]):
            lo, hi = pooled[coef].ci95
            hits.append(lo <= truth[coef] <= hi)
        return float(np.mean(hits))

    def squared_bias(self, name: str, coef: str) -> float:
        return float(np.mean([(p[coef].point - t[coef]) ** 2 for t, p in zip(self.truth_coef, self.pooled[name])]))

    @property
    def coefficients(self) -> list[str]:
        return list(self.truth_coef[0]) if self.truth_coef else []

    def accuracy_table(self) -> Table:
        cols = list(next(iter(self.accuracy.values()))[0])
        t = Table(["method"] + [f"{c}_{s}" for c in cols for s in ("mean", "sd")])
        for name, rows in self.accuracy.items():
            vals = []
            for c in cols:
                x = [r[c] for r in rows]
                vals += [float(np.mean(x)), float(np.std(x, ddof=1)) if len(x) > 1 else 0.0]
            t.rows.append([name] + vals)
        return t

    def regression_table(self) -> Table:
        names = list(self.pooled)
        t = Table(["coefficient"] + [f"{n}_{q}" for n in names for q in ("sq_bias", "coverage")])
        for coef in self.coefficients:
            row = [coef]
            for n in names:
                row += [self.squared_bias(n, coef), 100.0 * self.coverage(n, coef)]
            t.rows.append(row)
        return t


def run_sim2(n_datasets: int = 10, n_rows: int = 200, gamma: float = simulate.MAR_GAMMAS[0.1], m: int = 10,
             n_iter: int = 10_000, burn_in: int = 5_000, seed: int = 2, ladder: Sequence[float] = SIM2_LADDER,
             models: Sequence[str] = ("single_gaussian", "dpm_gaussian"), progress=None) -> Sim2Outcome:
    """Imputation accuracy and Rubin-pooled Poisson coverage per competitor."""
    start = time.perf_counter()
    acc = {n: [] for n in models}
    pooled = {n: [] for n in models}
    truth_coef = []
    for ds in range(n_datasets):
        s = dataset_seed(seed, ds)
        rng = stats.make_rng(s, 10_000)
        truth = simulate.gen_sim2(n_rows, rng)
        masked, deleted = simulate.apply_mar(truth, gamma, rng)
        y, X, labels = imputation.poisson_design(truth, POISSON_RESPONSE, POISSON_PREDICTORS)
        coef, _ = imputation.fit_poisson_glm(y, X)
        truth_coef.append(dict(zip(labels, coef)))
        for name in models:
            model, result = fit(masked, name, ladder, n_iter, burn_in, s, thin=n_iter)
            draws = imputation.multiple_impute(model, result, m)
            acc[name].append(imputation.imputation_accuracy(truth, deleted, draws))
            pooled[name].append(imputation.pool_poisson(draws, POISSON_RESPONSE, POISSON_PREDICTORS))
            if progress:
                progress(f"sim2 dataset {ds} {name}: {acc[name][-1]}")
    return Sim2Outcome(acc, truth_coef, pooled, time.perf_counter() - start)


# --- mixing toy -------------------------------------------------------------

class BasinTracker:
    """Counts label switches of the target chain between the two toy modes.

    After burn-in, each sweep classifies the lowest-index component holding
    at least ``min_share`` of the rows to the nearest true mode (within
    ``radius``); a switch is a change of that basin between classified sweeps.
    """

    def __init__(self, modes, burn_in: int, min_share: float = 0.1, radius: float = 1.0):
        self.modes = np.asarray(modes, dtype=float)
        self.burn_in = burn_in
        self.min_share = min_share
        self.radius = radius
        self.basins: list[int] = []

    def __call__(self, iteration: int, states) -> None:
        if iteration <= self.burn_in:
            return
        s = states[0]
        counts = s.counts
        big = np.nonzero(counts >= self.min_share * counts.sum())[0]
        dist = np.linalg.norm(self.modes - s.clusters[big[0]].mean, axis=1)
        if dist.min() < self.radius:
            self.basins.append(int(np.argmin(dist)))

    @property
    def switches(self) -> int:
        b = np.asarray(self.basins)
        return int(np.sum(b[1:] != b[:-1])) if b.size > 1 else 0


def toy_switches(seed: int, ladder: Sequence[float], n_rows: int = 200, n_iter: int = 10_000,
                 burn_in: int = 1_000) -> int:
    x, _ = simulate.gen_toy_two_modes(n_rows, stats.make_rng(seed, 10_000))
    model = Model(simulate.toy_dataset(x), kernel="location")
    tracker = BasinTracker(simulate.TOY_MEANS, burn_in)
    tempering.run(model, ladder, n_iter, burn_in, seed, keep_draws=False, callback=tracker)
    return tracker.switches


def run_toy(seeds: Sequence[int] = (1, 2, 3, 4, 5), ladder: Sequence[float] = TOY_LADDER, n_rows: int = 200,
            n_iter: int = 10_000, burn_in: int = 1_000) -> Table:
    t = Table(["seed", "switches_single", "switches_tempered"])
    for s in seeds:
        t.rows.append([s, toy_switches(s, ladder[:1], n_rows, n_iter, burn_in),
                       toy_switches(s, ladder, n_rows, n_iter, burn_in)])
    return t
