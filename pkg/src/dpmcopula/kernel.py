"""Copula kernel: latent layout, rank bounds, probit mapping and conjugate updates.

The latent matrix has the ordered columns first (one latent per continuous or
ordinal variable) followed by Q = n_categories - 1 latents for the nominal
variable. Each mixture component has mean (0, beta) and a correlation matrix.

Two further kernels share the machinery: ``"t"`` represents a t copula as a
normal scale mixture with per-row weights ``phi`` and per-component degrees
of freedom; ``"location"`` is a plain Gaussian mixture on fully observed
real data with free component means and covariances (the two-mode toy).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg, special, stats as sps

from . import stats
from .data import Dataset, EmpiricalCDF, build_ecdf

KERNELS = ("gaussian", "t", "location")
NU_GRID = tuple(range(2, 31))


class ConfigurationError(ValueError):
    """Unsupported combination of model options."""


@dataclass(eq=False)
class Hyperparams:
    """Prior hyperparameters.

    Defaults give the weakest-information choice: beta ~ N(0, I_Q) and the
    raw covariance ~ InvWishart(nu_sigma, I_{p+Q}). ``nu_sigma`` defaults to
    max(Q + 2, p + Q) so the inverse-Wishart stays proper in any dimension.
    ``mean_loc``/``mean_cov`` are the component-mean prior of the location
    kernel and are ignored by the copula kernels.
    """

    mu_beta: np.ndarray
    lambda_beta: np.ndarray
    nu_sigma: float
    lambda_sigma: np.ndarray
    nu_psi: float | None = None
    lambda_psi: np.ndarray | None = None
    mean_loc: np.ndarray | None = None
    mean_cov: np.ndarray | None = None

    @classmethod
    def default(cls, p: int, q: int, **overrides) -> "Hyperparams":
        d = p + q
        hp = dict(
            mu_beta=np.zeros(q),
            lambda_beta=np.eye(q),
            nu_sigma=float(max(q + 2, d)),
            lambda_sigma=np.eye(d),
            nu_psi=float(d + 2),
            lambda_psi=np.eye(d),
            mean_loc=np.zeros(d),
            mean_cov=10.0 * np.eye(d),
        )
        hp.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**hp)

    @cached_property
    def lambda_beta_inv(self) -> np.ndarray:
        return np.linalg.inv(self.lambda_beta) if self.lambda_beta.size else self.lambda_beta

    @cached_property
    def mean_cov_inv(self) -> np.ndarray:
        return np.linalg.inv(self.mean_cov)


@dataclass(eq=False)
class ClusterParams:
    """One mixture component.

    ``mean`` is the full latent mean: (0, beta) for the copula kernels and a
    free vector for the location kernel. ``sigma`` is the correlation matrix
    (covariance for the location kernel) and ``sigma_tilde`` the raw draw it
    was rescaled from. ``nu`` is set only for the t kernel.
    """

    mean: np.ndarray
    sigma: np.ndarray
    sigma_tilde: np.ndarray
    p: int
    nu: float | None = None

    @property
    def beta(self) -> np.ndarray:
        return self.mean[self.p:]

    @cached_property
    def chol(self) -> np.ndarray:
        return stats.cholesky(self.sigma)

    @cached_property
    def prec(self) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), np.eye(self.sigma.shape[0]), check_finite=False)

    @cached_property
    def nominal_blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(A, V, chol V) with A = S21 S1^-1 and V = S2 - S21 S1^-1 S12."""
        p = self.p
        s = self.sigma
        s1, s21, s2 = s[:p, :p], s[p:, :p], s[p:, p:]
        if p:
            a = linalg.solve(s1, s21.T, assume_a="pos", check_finite=False).T
            v = s2 - a @ s21.T
        else:
            a = np.zeros((s2.shape[0], 0))
            v = s2.copy()
        v = 0.5 * (v + v.T)
        return a, v, stats.cholesky(v)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        if self.nu is None:
            return stats.mvn_logpdf_chol(x, self.mean, self.chol)
        return stats.mvt_logpdf_chol(x, self.mean, self.chol, self.nu)


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable description of what is sampled: data layout, kernel, priors.

    Shared read-only by all tempering chains.
    """

    data: Dataset
    kernel: str = "gaussian"
    hyper: Hyperparams | None = None
    mixture: bool = True
    latent_scan: str = "blocked"
    stick_cap: int = 10_000
    max_rejections: int = 100
    nu_grid: tuple[int, ...] = NU_GRID
    # derived
    ordered_cols: tuple[int, ...] = field(init=False)
    nominal_col: int | None = field(init=False)
    p: int = field(init=False)
    q: int = field(init=False)
    ecdfs: tuple[EmpiricalCDF, ...] = field(init=False)

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ConfigurationError(f"unknown kernel {self.kernel!r}")
        if self.latent_scan not in ("blocked", "sequential"):
            raise ConfigurationError(f"unknown latent scan {self.latent_scan!r}")
        cols = self.data.schema.columns
        ordered = tuple(j for j, c in enumerate(cols) if c.ordered)
        nominal = [j for j, c in enumerate(cols) if not c.ordered]
        nom = nominal[0] if nominal else None
        q = cols[nom].n_latent if nom is not None else 0
        if self.kernel == "t" and nom is not None:
            raise ConfigurationError("the t kernel supports ordered variables only (no probit link)")
        if self.kernel == "location":
            if nom is not None or self.data.mask.any():
                raise ConfigurationError("the location kernel needs fully observed real-valued data")
        object.__setattr__(self, "ordered_cols", ordered)
        object.__setattr__(self, "nominal_col", nom)
        object.__setattr__(self, "p", len(ordered))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "ecdfs", tuple(build_ecdf(self.data.observed(j)) for j in ordered))
        if self.hyper is None:
            extra = {}
            if self.kernel == "location":
                # IW(p + 4, 3 I): prior mean covariance I, thin enough tails to avoid outlier components
                p = len(ordered)
                extra = {"nu_sigma": float(p + 4), "lambda_sigma": 3.0 * np.eye(p)}
            object.__setattr__(self, "hyper", Hyperparams.default(len(ordered), q, **extra))
        if self.hyper.nu_sigma <= self.d - 1:
            raise ConfigurationError(f"nu_sigma must exceed {self.d - 1}")

    @property
    def d(self) -> int:
        return self.p + self.q

    @property
    def n(self) -> int:
        return self.data.n_rows

    @cached_property
    def nominal_obs(self) -> np.ndarray:
        """Observed nominal category per row, -1 where missing or absent."""
        if self.nominal_col is None:
            return np.full(self.n, -1, dtype=int)
        col = self.data.cells[:, self.nominal_col]
        out = np.where(self.data.mask[:, self.nominal_col], -1, np.nan_to_num(col, nan=-1))
        return out.astype(int)

    @cached_property
    def rank_levels(self) -> tuple["RankLevels", ...]:
        return tuple(RankLevels.from_column(self.data.cells[:, j], self.data.mask[:, j]) for j in self.ordered_cols)

    @cached_property
    def missing_cells(self) -> tuple[np.ndarray, np.ndarray]:
        """(rows, dataset columns) of every missing cell, row-major."""
        rows, cols = np.nonzero(self.data.mask)
        return rows, cols


@dataclass(frozen=True, eq=False)
class RankLevels:
    """Observed rows of one ordered column grouped by distinct value."""

    level: np.ndarray      # level index per row, -1 for missing
    order: np.ndarray      # observed rows sorted by level
    starts: np.ndarray     # first position of each level in ``order``
    missing: np.ndarray    # rows with a missing cell

    @classmethod
    def from_column(cls, values: np.ndarray, mask: np.ndarray) -> "RankLevels":
        obs = np.nonzero(~mask)[0]
        uniq, inv = np.unique(values[obs], return_inverse=True)
        level = np.full(values.shape[0], -1, dtype=int)
        level[obs] = inv
        order = obs[np.argsort(inv, kind="stable")]
        starts = np.searchsorted(level[order], np.arange(uniq.size))
        return cls(level, order, starts, np.nonzero(mask)[0])

    @property
    def n_levels(self) -> int:
        return self.starts.size

    def level_extremes(self, zcol: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        zs = zcol[self.order]
        return np.maximum.reduceat(zs, self.starts), np.minimum.reduceat(zs, self.starts)


# --- priors ---------------------------------------------------------------

def prior_cluster(model: Model, rng: np.random.Generator) -> ClusterParams:
    """Draw one component from the base measure G0."""
    hp = model.hyper
    sig_t = stats.sample_inverse_wishart(rng, hp.nu_sigma, hp.lambda_sigma)
    if model.kernel == "location":
        mean = stats.sample_mvn(rng, hp.mean_loc, hp.mean_cov)
        return ClusterParams(mean, sig_t, sig_t, model.p)
    beta = stats.sample_mvn(rng, hp.mu_beta, hp.lambda_beta) if model.q else np.zeros(0)
    nu = float(rng.choice(model.nu_grid)) if model.kernel == "t" else None
    return ClusterParams(np.concatenate([np.zeros(model.p), beta]), stats.cov_to_corr(sig_t), sig_t, model.p, nu)


def prior_clusters(model: Model, rng: np.random.Generator, count: int) -> list[ClusterParams]:
    """``count`` independent base-measure draws, sampled as one batch."""
    if count <= 0:
        return []
    hp = model.hyper
    sig_t = stats.sample_inverse_wishart_many(rng, hp.nu_sigma, hp.lambda_sigma, count)
    if model.kernel == "location":
        means = stats.sample_mvn(rng, hp.mean_loc, hp.mean_cov, size=count)
        return [ClusterParams(means[k], sig_t[k], sig_t[k], model.p) for k in range(count)]
    if model.q:
        betas = stats.sample_mvn(rng, hp.mu_beta, hp.lambda_beta, size=count)
    else:
        betas = np.zeros((count, 0))
    corr = stats.corr_from_cov_many(sig_t)
    nus = rng.choice(model.nu_grid, size=count) if model.kernel == "t" else [None] * count
    zeros = np.zeros(model.p)
    return [
        ClusterParams(np.concatenate([zeros, betas[k]]), corr[k], sig_t[k], model.p,
                      None if nus[k] is None else float(nus[k]))
        for k in range(count)
    ]


# --- latent initialisation and bounds -------------------------------------

def init_latent(model: Model) -> np.ndarray:
    """Starting latent matrix inside the rank/probit constraint set."""
    z = np.zeros((model.n, model.d))
    if model.kernel == "location":
        return model.data.cells[:, list(model.ordered_cols)].astype(float).copy()
    for k, j in enumerate(model.ordered_cols):
        obs = ~model.data.mask[:, j]
        z[obs, k] = special.ndtri(model.ecdfs[k].eval(model.data.cells[obs, j]))
    if model.q:
        cat = model.nominal_obs
        blk = np.where(cat[:, None] >= 0, -0.5, 0.0) * np.ones((1, model.q))
        hit = cat > 0
        blk[np.nonzero(hit)[0], cat[hit] - 1] = 0.5
        z[:, model.p:] = blk
    return z


def latent_bounds(z_col, y_col, mask_col, i: int) -> tuple[float, float]:
    """Rank bounds for latent cell i of one ordered column.

    lb is the largest latent among observed cells with a strictly smaller
    value, ub the smallest among strictly larger ones; missing cells are
    unconstrained.
    """
    z_col = np.asarray(z_col, dtype=float)
    y_col = np.asarray(y_col, dtype=float)
    obs = ~np.asarray(mask_col, dtype=bool)
    if not obs[i]:
        return -np.inf, np.inf
    yi = y_col[i]
    lower = obs & (y_col < yi)
    upper = obs & (y_col > yi)
    lb = z_col[lower].max() if lower.any() else -np.inf
    ub = z_col[upper].min() if upper.any() else np.inf
    return float(lb), float(ub)


def map_nominal(z2) -> int | np.ndarray:
    """Probit mapping: q (1-based) if the q-th latent is the positive maximum, else 0.

    Accepts a single vector or a (n, Q) array.
    """
    z2 = np.asarray(z2, dtype=float)
    idx = np.argmax(z2, axis=-1)
    cat = np.where(z2.max(axis=-1) > 0, idx + 1, 0)
    return int(cat) if np.ndim(cat) == 0 else cat


def nominal_consistent(z2: np.ndarray, cat: np.ndarray) -> np.ndarray:
    """True where the latent block maps to the observed category (or it is missing)."""
    return (cat < 0) | (map_nominal(z2) == cat)


# --- latent updates -------------------------------------------------------

def _stacks(state):
    means = np.stack([c.mean for c in state.clusters])
    precs = np.stack([c.prec for c in state.clusters])
    return means, precs


def _offsets(state):
    re = state.re
    if re is None:
        return 0.0
    return re.b[re.group_of]


def _ordered_conditional(model, state, k, rows, means, precs, off):
    """Conditional mean/sd of latent column k for ``rows`` given their other columns."""
    r = state.r[rows]
    x = state.z[rows] - (off[rows] if np.ndim(off) else off)
    prow = precs[r, k, :]
    res = x - means[r]
    pkk = prow[:, k]
    s = np.einsum("ij,ij->i", prow, res) - pkk * res[:, k]
    base = means[r, k] + (off[rows, k] if np.ndim(off) else 0.0)
    cmean = base - s / pkk
    csd = 1.0 / np.sqrt(pkk * state.phi[rows])
    return cmean, csd


def gibbs_update_latent_ordered(model: Model, state, rng, i: int, k: int) -> float:
    """Redraw latent cell (i, k) for ordered column k from its full conditional.

    Truncated to the rank bounds when the cell is observed, untruncated when
    it is missing. Updates ``state.z`` in place and returns the new value.
    """
    j = model.ordered_cols[k]
    means, precs = _stacks(state)
    off = _offsets(state)
    rows = np.array([i])
    cmean, csd = _ordered_conditional(model, state, k, rows, means, precs, off)
    lb, ub = latent_bounds(state.z[:, k], model.data.cells[:, j], model.data.mask[:, j], i)
    val = stats.sample_truncated_normal(rng, cmean[0], csd[0], lb, ub)
    state.z[i, k] = val
    return val


def update_ordered_column(model: Model, state, rng, k: int, means=None, precs=None, off=None) -> None:
    """Blocked (red-black) Gibbs update of every latent cell in ordered column k.

    Given the latents at odd rank levels, the cells at even levels (and all
    missing cells) are conditionally independent, because the constraint
    between two even levels is implied through the odd level between them.
    Two vectorised passes therefore draw each cell from its full conditional.
    """
    if means is None:
        means, precs = _stacks(state)
        off = _offsets(state)
    lv = model.rank_levels[k]
    n = model.n
    cmean, csd = _ordered_conditional(model, state, k, np.arange(n), means, precs, off)
    zcol = state.z[:, k]
    if lv.missing.size:
        m = lv.missing
        zcol[m] = cmean[m] + csd[m] * rng.standard_normal(m.size)
    obs = lv.order
    lev = lv.level[obs]
    nlev = lv.n_levels
    for parity in (0, 1):
        rows = obs[lev % 2 == parity]
        if rows.size == 0:
            continue
        lmax, lmin = lv.level_extremes(zcol)
        lr = lv.level[rows]
        lb = np.where(lr > 0, lmax[np.maximum(lr - 1, 0)], -np.inf)
        ub = np.where(lr < nlev - 1, lmin[np.minimum(lr + 1, nlev - 1)], np.inf)
        zcol[rows] = stats.sample_truncated_normal_many(rng, cmean[rows], csd[rows], lb, ub)


def update_ordered_latents(model: Model, state, rng) -> None:
    if model.latent_scan == "sequential":
        for i in range(model.n):
            for k in range(model.p):
                gibbs_update_latent_ordered(model, state, rng, i, k)
        return
    means, precs = _stacks(state)
    off = _offsets(state)
    for k in range(model.p):
        update_ordered_column(model, state, rng, k, means, precs, off)


def _nominal_conditional(model, state, rows):
    """Per-row conditional means of the nominal block and per-row chol V factors."""
    p = model.p
    off = _offsets(state)
    x1 = state.z[rows, :p] - (off[rows, :p] if np.ndim(off) else 0.0)
    r = state.r[rows]
    used, pos = np.unique(r, return_inverse=True)
    blocks = [state.clusters[h].nominal_blocks for h in used]
    a = np.stack([b[0] for b in blocks])
    chol_v = np.stack([b[2] for b in blocks])
    betas = np.stack([state.clusters[h].beta for h in used])
    cm = betas[pos] + np.einsum("nij,nj->ni", a[pos], x1)
    if np.ndim(off):
        cm += off[rows, p:]
    return cm, chol_v[pos], r


def _nominal_gibbs_fallback(model, state, rng, rows, cm, r):
    """One coordinate-wise truncated Gibbs scan keeping the observed category."""
    p, q = model.p, model.q
    cats = model.nominal_obs[rows]
    for n_i, i in enumerate(rows):
        cat = cats[n_i]
        vprec = linalg.inv(state.clusters[r[n_i]].nominal_blocks[1])
        z2 = state.z[i, p:]
        for t in range(q):
            s = vprec[t] @ (z2 - cm[n_i]) - vprec[t, t] * (z2[t] - cm[n_i, t])
            mean = cm[n_i, t] - s / vprec[t, t]
            sd = 1.0 / np.sqrt(vprec[t, t])
            others = np.delete(z2, t)
            if cat == 0:
                lb, ub = -np.inf, 0.0
            elif t == cat - 1:
                lb, ub = max(0.0, others.max() if others.size else -np.inf), np.inf
            else:
                lb, ub = -np.inf, z2[cat - 1]
            z2[t] = stats.sample_truncated_normal(rng, mean, sd, lb, ub)


def gibbs_update_latent_nominal(model: Model, state, rng, rows=None, batch: int = 10) -> None:
    """Redraw the nominal latent block for ``rows`` (default: all rows).

    Observed categories are enforced by rejection with at most
    ``model.max_rejections`` proposals per row, drawn ``batch`` at a time
    (the first consistent proposal is kept, as in one-at-a-time rejection).
    Rows still unresolved get one coordinate-wise truncated Gibbs scan.
    """
    if not model.q:
        return
    rows = np.arange(model.n) if rows is None else np.atleast_1d(rows)
    cm, chol_v, r = _nominal_conditional(model, state, rows)
    cats = model.nominal_obs[rows]
    out = np.empty_like(cm)
    pending = np.arange(rows.size)
    used = 0
    while pending.size and used < model.max_rejections:
        b = min(batch, model.max_rejections - used) if used else 1
        eps = rng.standard_normal((pending.size, b, model.q))
        cand = cm[pending, None, :] + np.einsum("nij,nbj->nbi", chol_v[pending], eps)
        ok = nominal_consistent(cand.reshape(-1, model.q), np.repeat(cats[pending], b)).reshape(-1, b)
        hit = ok.any(axis=1)
        first = np.argmax(ok, axis=1)
        good = pending[hit]
        out[good] = cand[hit, first[hit]]
        pending = pending[~hit]
        used += b
    done = np.setdiff1d(np.arange(rows.size), pending)
    state.z[rows[done], model.p:] = out[done]
    if pending.size:
        _nominal_gibbs_fallback(model, state, rng, rows[pending], cm[pending], r[pending])


# --- component parameter updates ------------------------------------------

def update_beta(x: np.ndarray, cluster: ClusterParams, hyper: Hyperparams, rng) -> np.ndarray:
    """Conjugate draw of the nominal mean offset beta for one component.

    ``x`` holds the member latent rows (random effects already removed).
    With no members this is a prior draw.
    """
    q = hyper.mu_beta.size
    if q == 0:
        return np.zeros(0)
    n_h = x.shape[0]
    if n_h == 0:
        return stats.sample_mvn(rng, hyper.mu_beta, hyper.lambda_beta)
    p = cluster.p
    a, v, _ = cluster.nominal_blocks
    mbar = (x[:, p:] - x[:, :p] @ a.T).mean(axis=0)
    v_inv = np.linalg.inv(v)
    post_prec = hyper.lambda_beta_inv + n_h * v_inv
    post_cov = np.linalg.inv(post_prec)
    post_cov = 0.5 * (post_cov + post_cov.T)
    post_mean = post_cov @ (hyper.lambda_beta_inv @ hyper.mu_beta + n_h * v_inv @ mbar)
    return stats.sample_mvn(rng, post_mean, post_cov)


def update_sigma(x: np.ndarray, mean: np.ndarray, hyper: Hyperparams, rng, weights=None):
    """Inverse-Wishart draw of the raw covariance and its correlation rescaling.

    ``weights`` are the t-kernel row scales (None for the Gaussian kernel).
    """
    eps = x - mean
    if weights is not None:
        scatter = (eps * weights[:, None]).T @ eps
    else:
        scatter = eps.T @ eps
    sig_t = stats.sample_inverse_wishart(rng, hyper.nu_sigma + x.shape[0], hyper.lambda_sigma + scatter)
    return sig_t, stats.cov_to_corr(sig_t)


def update_location(x: np.ndarray, cluster: ClusterParams, hyper: Hyperparams, rng) -> ClusterParams:
    """Location kernel: mean given covariance, then covariance given mean."""
    n_h = x.shape[0]
    if n_h == 0:
        mean = stats.sample_mvn(rng, hyper.mean_loc, hyper.mean_cov)
    else:
        s_inv = cluster.prec
        post_cov = np.linalg.inv(hyper.mean_cov_inv + n_h * s_inv)
        post_cov = 0.5 * (post_cov + post_cov.T)
        post_mean = post_cov @ (hyper.mean_cov_inv @ hyper.mean_loc + s_inv @ x.sum(axis=0))
        mean = stats.sample_mvn(rng, post_mean, post_cov)
    eps = x - mean
    cov = stats.sample_inverse_wishart(rng, hyper.nu_sigma + n_h, hyper.lambda_sigma + eps.T @ eps)
    return ClusterParams(mean, cov, cov, cluster.p)


def update_cluster(model: Model, cluster: ClusterParams, x: np.ndarray, phi: np.ndarray, rng) -> ClusterParams:
    """Full conditional update of one occupied component from its member rows."""
    if model.kernel == "location":
        return update_location(x, cluster, model.hyper, rng)
    beta = update_beta(x, cluster, model.hyper, rng)
    mean = np.concatenate([np.zeros(model.p), beta])
    weights = phi if model.kernel == "t" else None
    sig_t, sig = update_sigma(x, mean, model.hyper, rng, weights)
    new = ClusterParams(mean, sig, sig_t, model.p, cluster.nu)
    if model.kernel == "t":
        new.nu = update_nu(cluster.nu, phi, model.nu_grid, rng)
    return new


def update_clusters(model: Model, clusters: list[ClusterParams], x: np.ndarray, phi: np.ndarray, rng,
                    order: np.ndarray, bounds: np.ndarray) -> list[ClusterParams]:
    """Batched conjugate update of several occupied components.

    ``order[bounds[k]:bounds[k+1]]`` lists the (nonempty) member rows of
    ``clusters[k]``. Each component's draw matches ``update_cluster`` in
    distribution; only the order of random numbers differs.
    """
    n_c = len(clusters)
    if n_c == 0:
        return []
    if model.kernel == "location":
        return [update_location(x[order[bounds[k]:bounds[k + 1]]], c, model.hyper, rng)
                for k, c in enumerate(clusters)]
    hp = model.hyper
    p, q = model.p, model.q
    counts = np.diff(bounds)
    start = bounds[:-1]
    xs = x[order]
    label = np.repeat(np.arange(n_c), counts)
    if q:
        a = np.stack([c.nominal_blocks[0] for c in clusters])
        v_inv = np.linalg.inv(np.stack([c.nominal_blocks[1] for c in clusters]))
        resid = xs[:, p:] - np.einsum("nij,nj->ni", a[label], xs[:, :p])
        mbar = np.add.reduceat(resid, start, axis=0) / counts[:, None]
        post_cov = np.linalg.inv(hp.lambda_beta_inv[None] + counts[:, None, None] * v_inv)
        post_cov = 0.5 * (post_cov + np.swapaxes(post_cov, 1, 2))
        rhs = (hp.lambda_beta_inv @ hp.mu_beta)[None] + counts[:, None] * np.einsum("nij,nj->ni", v_inv, mbar)
        post_mean = np.einsum("nij,nj->ni", post_cov, rhs)
        chol = np.linalg.cholesky(post_cov)
        betas = post_mean + np.einsum("nij,nj->ni", chol, rng.standard_normal((n_c, q)))
    else:
        betas = np.zeros((n_c, 0))
    means = np.concatenate([np.zeros((n_c, p)), betas], axis=1)
    eps = xs - means[label]
    outer = eps[:, :, None] * eps[:, None, :]
    if model.kernel == "t":
        outer *= phi[order][:, None, None]
    scatter = np.add.reduceat(outer, start, axis=0)
    sig_t = stats.sample_inverse_wishart_many(rng, hp.nu_sigma + counts, hp.lambda_sigma[None] + scatter)
    corr = stats.corr_from_cov_many(sig_t)
    out = []
    for k, c in enumerate(clusters):
        new = ClusterParams(means[k], corr[k], sig_t[k], p, c.nu)
        if model.kernel == "t":
            new.nu = update_nu(c.nu, phi[order[bounds[k]:bounds[k + 1]]], model.nu_grid, rng)
        out.append(new)
    return out


# --- t kernel -------------------------------------------------------------

def phi_conditional(nu: float, d: int, q):
    """Shape and rate of the Gamma full conditional of a row scale."""
    return 0.5 * (nu + d), 0.5 * (nu + np.asarray(q))


def nu_log_target(nu: float, phi: np.ndarray) -> float:
    """log prod Gamma(phi_i; nu/2, rate nu/2); flat prior on the grid."""
    a = 0.5 * nu
    return float(np.sum(a * np.log(a) - special.gammaln(a) + (a - 1) * np.log(phi) - a * phi))


def update_nu(nu: float, phi: np.ndarray, grid, rng) -> float:
    """One Metropolis step of +-1 grid point; off-grid proposals are rejected."""
    if phi.size == 0:
        return float(rng.choice(grid))
    prop = nu + (1 if rng.random() < 0.5 else -1)
    if prop < grid[0] or prop > grid[-1]:
        return nu
    if np.log(rng.random()) < nu_log_target(prop, phi) - nu_log_target(nu, phi):
        return float(prop)
    return nu


def update_phi(model: Model, state, rng) -> None:
    """Redraw every row scale from its conjugate Gamma conditional."""
    if model.kernel != "t":
        return
    off = _offsets(state)
    x = state.z - off
    shape = np.empty(model.n)
    rate = np.empty(model.n)
    for h in np.unique(state.r):
        sel = state.r == h
        c = state.clusters[h]
        sol = linalg.solve_triangular(c.chol, (x[sel] - c.mean).T, lower=True, check_finite=False)
        qf = np.einsum("ij,ij->j", sol, sol)
        shape[sel], rate[sel] = phi_conditional(c.nu, model.d, qf)
    state.phi = rng.gamma(shape, 1.0 / rate)


def t_kernel_updates(model: Model, state, rng) -> None:
    """Refresh row scales, then each occupied component's degrees of freedom."""
    if model.kernel != "t":
        raise ConfigurationError("t kernel updates need kernel='t'")
    update_phi(model, state, rng)
    for h in np.unique(state.r):
        c = state.clusters[h]
        c.nu = update_nu(c.nu, state.phi[state.r == h], model.nu_grid, rng)


def margin_cdf(model: Model, z: np.ndarray, nu=None) -> np.ndarray:
    """Kernel CDF of one ordered latent margin (t_nu under the t kernel)."""
    if nu is None:
        return special.ndtr(z)
    return sps.t.cdf(z, nu)
