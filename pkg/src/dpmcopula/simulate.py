"""Seeded generators for the benchmark designs and the MAR missingness injector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats as sps

from .data import ColumnSchema, Dataset, Schema
from .kernel import map_nominal

DESIGNS = ("sim1_gaussian", "sim1_t", "sim2_mixed", "toy_two_modes")

SIM1_WEIGHTS = (0.75, 0.25)
SIM1_RHOS = (-0.6, 0.8)
SIM1_DFS = (2.0, 4.0)

SIM2_BETAS = (
    np.array([0.5, 1.0, -0.5]),
    np.array([-1.0, -0.5, 1.0]),
)
SIM2_SIGMAS = (
    np.array([
        [1, -0.286, -0.409, -0.038, -0.410, -0.305],
        [-0.286, 1, 0.085, 0.193, 0.665, -0.588],
        [-0.409, 0.085, 1, -0.378, -0.006, 0.034],
        [-0.038, 0.193, -0.378, 1, 0.675, 0.311],
        [-0.410, 0.665, -0.006, 0.675, 1, 0.151],
        [-0.305, -0.588, 0.034, 0.311, 0.151, 1],
    ]),
    np.array([
        [1, -0.404, 0.285, 0.074, -0.058, 0.075],
        [-0.404, 1, 0.085, -0.147, 0.306, 0.832],
        [0.285, 0.085, 1, -0.501, 0.733, -0.029],
        [0.074, -0.147, -0.501, 1, -0.037, -0.072],
        [-0.058, 0.306, 0.733, -0.037, 1, 0.061],
        [0.075, 0.832, -0.029, -0.072, 0.061, 1],
    ]),
)
SIM2_SCHEMA = Schema((
    ColumnSchema("Y1", "ordinal"),
    ColumnSchema("Y2", "continuous"),
    ColumnSchema("Y3", "continuous"),
    ColumnSchema("Y4", "nominal", 4),
))
SIM2_MARGINS = (
    sps.poisson(1.0),
    sps.gamma(1.0, scale=3.0),
    sps.t(2.0, loc=2.0),
)
MAR_GAMMAS = {0.1: -1.35, 0.2: -0.65, 0.3: -0.31}
TOY_MEANS = (np.array([-1.0, 3.0]), np.array([2.0, 1.0]))

for _s in SIM2_SIGMAS:
    if np.linalg.eigvalsh(_s).min() <= 0:
        raise RuntimeError("embedded correlation matrix is not positive definite")


@dataclass(frozen=True)
class SimSpec:
    design: str
    n_rows: int = 200
    n_datasets: int = 1
    seed: int = 0
    gamma: float = MAR_GAMMAS[0.1]

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"unknown design {self.design!r}")
        if self.n_rows < 1 or self.n_datasets < 1:
            raise ValueError("row and dataset counts must be positive")


def _mixture_normals(rng, n, weights, means, corrs):
    labels = rng.choice(len(weights), size=n, p=np.asarray(weights) / np.sum(weights))
    d = corrs[0].shape[0]
    z = np.empty((n, d))
    for h, (mu, c) in enumerate(zip(means, corrs)):
        sel = labels == h
        z[sel] = mu + rng.standard_normal((int(sel.sum()), d)) @ np.linalg.cholesky(c).T
    return z, labels


def _corr2(rho):
    return np.array([[1.0, rho], [rho, 1.0]])


def gen_sim1(kind: str, n: int, rng) -> np.ndarray:
    """Bivariate uniforms from the two-component Gaussian or t copula mixture."""
    if n < 1:
        raise ValueError("n must be positive")
    corrs = [_corr2(r) for r in SIM1_RHOS]
    z, labels = _mixture_normals(rng, n, SIM1_WEIGHTS, [np.zeros(2)] * 2, corrs)
    if kind == "gaussian":
        return special.ndtr(z)
    if kind != "t":
        raise ValueError(f"unknown kind {kind!r}")
    nu = np.asarray(SIM1_DFS)[labels]
    z = z / np.sqrt(rng.chisquare(nu) / nu)[:, None]
    return sps.t.cdf(z, nu[:, None])


def sim1_dataset(u: np.ndarray) -> Dataset:
    schema = Schema((ColumnSchema("U1", "continuous"), ColumnSchema("U2", "continuous")))
    return Dataset(schema, u, np.zeros(u.shape, dtype=bool))


def gen_sim2(n: int, rng) -> Dataset:
    """Mixed-type data: Poisson(1), Gamma(1, scale 3), t(2) + 2 and a 4-category nominal."""
    if n < 1:
        raise ValueError("n must be positive")
    means = [np.concatenate([np.zeros(3), b]) for b in SIM2_BETAS]
    z, _ = _mixture_normals(rng, n, (0.5, 0.5), means, SIM2_SIGMAS)
    u = special.ndtr(z[:, :3])
    cells = np.column_stack([m.ppf(u[:, k]) for k, m in enumerate(SIM2_MARGINS)] + [map_nominal(z[:, 3:])])
    return Dataset(SIM2_SCHEMA, cells, np.zeros(cells.shape, dtype=bool))


def apply_mar(data: Dataset, gamma: float, rng, driver: str = "Y3",
              targets: tuple[str, ...] = ("Y1", "Y2", "Y4")) -> tuple[Dataset, np.ndarray]:
    """Mask each target cell with probability expit(gamma * driver value).

    Returns the masked dataset and the boolean matrix of deleted cells.
    """
    j_drv = data.column(driver)
    if data.mask[:, j_drv].any():
        raise ValueError("driver column must be fully observed")
    p_mis = special.expit(gamma * data.cells[:, j_drv])
    deleted = np.zeros(data.cells.shape, dtype=bool)
    for name in targets:
        j = data.column(name)
        deleted[:, j] = (rng.random(data.n_rows) < p_mis) & ~data.mask[:, j]
    # a fully deleted column cannot be modelled; keep one cell observed
    for j in range(deleted.shape[1]):
        if (deleted[:, j] | data.mask[:, j]).all():
            deleted[np.nonzero(~data.mask[:, j])[0][0], j] = False
    return data.with_cells(data.cells, data.mask | deleted), deleted


def gen_toy_two_modes(n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Equal-weight mixture of N((-1, 3), I) and N((2, 1), I); returns (rows, labels)."""
    if n < 2:
        raise ValueError("n must be at least 2")
    labels = rng.integers(2, size=n)
    x = np.asarray(TOY_MEANS)[labels] + rng.standard_normal((n, 2))
    return x, labels


def toy_dataset(x: np.ndarray) -> Dataset:
    schema = Schema((ColumnSchema("X1", "continuous"), ColumnSchema("X2", "continuous")))
    return Dataset(schema, x, np.zeros(x.shape, dtype=bool))


def generate(spec: SimSpec, rng) -> list[dict]:
    """Datasets for a design: each entry has ``truth`` and, for sim2, ``masked`` and ``deleted``."""
    out = []
    for _ in range(spec.n_datasets):
        if spec.design == "sim1_gaussian":
            out.append({"truth": sim1_dataset(gen_sim1("gaussian", spec.n_rows, rng))})
        elif spec.design == "sim1_t":
            out.append({"truth": sim1_dataset(gen_sim1("t", spec.n_rows, rng))})
        elif spec.design == "toy_two_modes":
            out.append({"truth": toy_dataset(gen_toy_two_modes(spec.n_rows, rng)[0])})
        else:
            truth = gen_sim2(spec.n_rows, rng)
            masked, deleted = apply_mar(truth, spec.gamma, rng)
            out.append({"truth": truth, "masked": masked, "deleted": deleted})
    return out
