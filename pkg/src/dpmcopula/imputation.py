"""Imputation write-back, multiple-imputation extraction, Rubin pooling and the Poisson GLM."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .data import Dataset
from .kernel import Model, map_nominal, margin_cdf


class ImputationError(ValueError):
    pass


def impute_writeback(model: Model, state) -> np.ndarray:
    """Map the current latents of missing cells back to the data scale.

    Ordered cells use the column ECDF inverse of the kernel CDF of the
    latent (t CDF with the row's component degrees of freedom under the t
    kernel); nominal cells use the probit category mapping. The result is a
    flat vector aligned with ``model.missing_cells`` and is stored on
    ``state.imputed``.
    """
    rows, cols = model.missing_cells
    out = np.empty(rows.size)
    if rows.size == 0:
        state.imputed = out
        return out
    pos_of = {j: k for k, j in enumerate(model.ordered_cols)}
    nus = None
    if model.kernel == "t":
        nus = np.array([c.nu for c in state.clusters])[state.r]
    for j in np.unique(cols):
        sel = cols == j
        rr = rows[sel]
        if j == model.nominal_col:
            out[sel] = map_nominal(state.z[rr, model.p:])
        else:
            k = pos_of[j]
            u = margin_cdf(model, state.z[rr, k], None if nus is None else nus[rr])
            out[sel] = model.ecdfs[k].inverse(u)
    state.imputed = out
    return out


def completed_cells(model: Model, imputed: np.ndarray) -> np.ndarray:
    cells = np.array(model.data.cells, dtype=float)
    rows, cols = model.missing_cells
    cells[rows, cols] = imputed
    return cells


@dataclass(frozen=True, eq=False)
class ImputedDraw:
    """A completed dataset and the sweep it came from."""

    data: Dataset
    iteration: int


def imputation_iterations(n_iter: int, burn_in: int, m: int) -> list[int]:
    """Evenly spaced 1-based sweep indices burn + k * floor((S - burn) / m), k = 1..m."""
    if m < 1:
        raise ImputationError("m must be at least 1")
    span = n_iter - burn_in
    if m > span:
        raise ImputationError(f"m={m} exceeds the {span} post-burn-in draws")
    spacing = span // m
    return [burn_in + k * spacing for k in range(1, m + 1)]


def multiple_impute(model: Model, result, m: int) -> list[ImputedDraw]:
    """Pick ``m`` completed datasets from the target chain of a tempering run."""
    wanted = imputation_iterations(result.n_iter, result.burn_in, m)
    by_iter = {it: k for k, it in enumerate(result.imputation_iters)}
    draws = []
    for it in wanted:
        if it not in by_iter:
            raise ImputationError(f"iteration {it} was not retained by the run (check thinning)")
        cells = completed_cells(model, result.imputations[by_iter[it]])
        draws.append(ImputedDraw(model.data.with_cells(cells, np.zeros_like(model.data.mask)), it))
    return draws


# --- Rubin's rules ----------------------------------------------------------

@dataclass(frozen=True)
class PooledEstimate:
    point: float
    within_var: float
    between_var: float
    total_var: float
    m: int

    @property
    def total_sd(self) -> float:
        return math.sqrt(self.total_var)

    @property
    def ci95(self) -> tuple[float, float]:
        half = 1.96 * self.total_sd
        return self.point - half, self.point + half


def rubin_pool(estimates: Sequence[float], variances: Sequence[float]) -> PooledEstimate:
    est = np.asarray(estimates, dtype=float)
    var = np.asarray(variances, dtype=float)
    if est.shape != var.shape or est.ndim != 1:
        raise ImputationError("estimates and variances must be matching vectors")
    m = est.size
    if m < 2:
        raise ImputationError("Rubin pooling needs at least two imputations")
    point = float(est.mean())
    w = float(var.mean())
    b = float(est.var(ddof=1))
    return PooledEstimate(point, w, b, w + (1.0 + 1.0 / m) * b, m)


# --- Poisson regression -----------------------------------------------------

def poisson_design(data: Dataset, response: str, predictors: Sequence[str]):
    """Response vector, design matrix and column labels.

    Nominal predictors expand to one dummy per non-baseline category
    (baseline 0); an intercept comes first.
    """
    if data.mask.any():
        raise ImputationError("design needs a completed dataset")
    y = data.cells[:, data.column(response)]
    cols = [np.ones(data.n_rows)]
    labels = ["intercept"]
    for name in predictors:
        j = data.column(name)
        spec = data.schema.columns[j]
        x = data.cells[:, j]
        if spec.ordered:
            cols.append(x)
            labels.append(name)
        else:
            for c in range(1, spec.n_categories):
                cols.append((x == c).astype(float))
                labels.append(f"{name}={c}")
    return y, np.column_stack(cols), labels


def fit_poisson_glm(y, X, max_iter: int = 100, tol: float = 1e-10):
    """Log-link Poisson maximum likelihood by iteratively reweighted least squares.

    Returns (coefficients, variances) with variances from the inverse Fisher
    information at the optimum.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ImputationError("Poisson response must be nonnegative integers")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ImputationError("design matrix is rank deficient")
    mu = y + 0.5 * (y.mean() + 0.1)
    eta = np.log(mu)
    coef = np.zeros(X.shape[1])
    dev_old = math.inf
    for _ in range(max_iter):
        work = eta + (y - mu) / mu
        xw = X * mu[:, None]
        coef = np.linalg.solve(X.T @ xw, xw.T @ work)
        eta = X @ coef
        mu = np.exp(eta)
        dev = 2.0 * np.sum(special.xlogy(y, y / mu) - (y - mu))
        if abs(dev - dev_old) <= tol * (abs(dev) + 0.1):
            info = X.T @ (X * mu[:, None])
            return coef, np.diag(np.linalg.inv(info))
        dev_old = dev
    raise ImputationError(f"Poisson IRLS did not converge in {max_iter} iterations")


def pool_poisson(draws: Sequence[ImputedDraw], response: str, predictors: Sequence[str]):
    """Fit the Poisson model to each completed dataset and pool by Rubin's rules."""
    fits = []
    labels = None
    for d in draws:
        y, X, labels = poisson_design(d.data, response, predictors)
        fits.append(fit_poisson_glm(y, X))
    coefs = np.array([f[0] for f in fits])
    vars_ = np.array([f[1] for f in fits])
    return {lab: rubin_pool(coefs[:, k], vars_[:, k]) for k, lab in enumerate(labels)}


# --- accuracy ---------------------------------------------------------------

def imputation_accuracy(truth: Dataset, deleted: np.ndarray, imputed: Sequence[ImputedDraw]) -> dict[str, float]:
    """Per-column accuracy on the artificially deleted cells.

    Continuous and ordinal columns: mean over draws of the Euclidean distance
    between imputed and true vectors. Nominal columns: mean misclassification
    rate. Columns with no deleted cells are omitted.
    """
    deleted = np.asarray(deleted, dtype=bool)
    if deleted.shape != truth.cells.shape:
        raise ImputationError("deletion mask does not match the true dataset")
    if truth.mask.any():
        raise ImputationError("true dataset must be complete")
    out = {}
    for j, col in enumerate(truth.schema.columns):
        rows = np.nonzero(deleted[:, j])[0]
        if rows.size == 0:
            continue
        true = truth.cells[rows, j]
        scores = []
        for d in imputed:
            if d.data.cells.shape != truth.cells.shape:
                raise ImputationError("imputed dataset shape mismatch")
            got = d.data.cells[rows, j]
            if col.ordered:
                scores.append(float(np.linalg.norm(got - true)))
            else:
                scores.append(float(np.mean(got != true)))
        out[col.name] = float(np.mean(scores))
    return out


def pooled_to_csv(pooled: dict[str, PooledEstimate]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["parameter", "point", "total_sd", "ci_lo", "ci_hi"])
    for name, est in pooled.items():
        lo, hi = est.ci95
        w.writerow([name, repr(est.point), repr(est.total_sd), repr(lo), repr(hi)])
    return buf.getvalue()
