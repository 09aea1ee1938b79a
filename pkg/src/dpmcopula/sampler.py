"""Slice sampler for the stick-breaking Dirichlet process mixture.

Sticks are stored in log space, ``log_v`` and ``log_1mv`` = log(1 - v), and
slice variables as ``log_u``: with total mass around 0.005 the stick
fractions of occupied components sit within 1e-200 of one and would round to
exactly one in linear space. The extension rule sum_{h<=k} w_h > 1 - u* is
evaluated in its equivalent form prod_{h<=k} (1 - v_h) < u*.

Indices are 0-based: component h of the docs is ``clusters[h]``.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import kernel, stats
from .kernel import ClusterParams, Model
from .random_effects import RandomEffectsState, update_psi, update_random_effects


class SamplerError(RuntimeError):
    """Internal sampler failure (broken invariant or runaway stick count)."""


@dataclass(eq=False)
class ChainState:
    """Everything one tempering chain carries except its total mass M."""

    log_v: np.ndarray
    log_1mv: np.ndarray
    clusters: list[ClusterParams]
    log_u: np.ndarray
    r: np.ndarray
    z: np.ndarray
    phi: np.ndarray
    re: RandomEffectsState | None = None
    imputed: np.ndarray = field(default_factory=lambda: np.zeros(0))
    loglik: float = math.nan
    k_star: int = 0

    @property
    def n_components(self) -> int:
        return len(self.clusters)

    @property
    def v(self) -> np.ndarray:
        return np.exp(self.log_v)

    @property
    def log_w(self) -> np.ndarray:
        return self.log_v + np.concatenate([[0.0], np.cumsum(self.log_1mv)[:-1]])

    @property
    def w(self) -> np.ndarray:
        return np.exp(self.log_w)

    @property
    def u(self) -> np.ndarray:
        return np.exp(self.log_u)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.r, minlength=self.n_components)

    @property
    def n_occupied(self) -> int:
        return int(np.count_nonzero(self.counts))

    def copy(self) -> "ChainState":
        return copy.deepcopy(self)


def _offsets(state: ChainState):
    return kernel._offsets(state)


def init_chain(model: Model, M: float, rng: np.random.Generator, n_init_clusters: int = 5,
               re: RandomEffectsState | None = None) -> ChainState:
    """Starting state: latents inside the constraint set, random allocations.

    Each chain draws its own random allocation over ``n_init_clusters``
    components, so chains generally start from different labellings.
    """
    from .imputation import impute_writeback

    n = model.n
    h0 = max(1, min(n_init_clusters, n)) if model.mixture else 1
    clusters = [kernel.prior_cluster(model, rng) for _ in range(h0)]
    r = rng.integers(h0, size=n) if h0 > 1 else np.zeros(n, dtype=int)
    state = ChainState(
        log_v=np.zeros(h0),
        log_1mv=np.full(h0, -np.inf),
        clusters=clusters,
        log_u=np.full(n, -np.inf),
        r=r.astype(int),
        z=kernel.init_latent(model),
        phi=np.ones(n),
        re=re,
        k_star=h0,
    )
    if model.mixture:
        update_sticks(model, state, M, rng)
        update_slice(state, rng)
        state.k_star = extend_sticks(model, state, M, rng)
    impute_writeback(model, state)
    return state


def update_cluster_params(model: Model, state: ChainState, rng) -> None:
    """Conjugate update of occupied components; unoccupied ones get fresh prior draws."""
    x = state.z - _offsets(state)
    counts = state.counts
    order = np.argsort(state.r, kind="stable")
    occ = np.nonzero(counts)[0]
    empty = np.nonzero(counts == 0)[0]
    occ_bounds = np.concatenate([[0], np.cumsum(counts[occ])])
    updated = kernel.update_clusters(model, [state.clusters[h] for h in occ], x, state.phi, rng,
                                     order, occ_bounds)
    fresh = kernel.prior_clusters(model, rng, empty.size)
    new = list(state.clusters)
    for h, c in zip(occ, updated):
        new[h] = c
    for h, c in zip(empty, fresh):
        new[h] = c
    state.clusters = new


def update_sticks(model: Model, state: ChainState, M: float, rng) -> None:
    """v_h ~ Beta(1 + A_h, M + B_h) with A_h = #{r_i = h}, B_h = #{r_i > h}."""
    counts = state.counts
    above = model.n - np.cumsum(counts)
    state.log_v, state.log_1mv = stats.sample_log_beta(rng, 1.0 + counts, M + above)


def update_slice(state: ChainState, rng) -> None:
    """u_i ~ Uniform(0, w_{r_i}), stored as log u_i."""
    unif = rng.random(state.r.size)
    unif[unif == 0.0] = np.finfo(float).tiny
    state.log_u = state.log_w[state.r] + np.log(unif)


def minimal_sticks(log_1mv: np.ndarray, log_u_star: float) -> int | None:
    """Smallest k with prod_{h<=k}(1 - v_h) < u*, or None if the sticks run out."""
    remaining = np.cumsum(log_1mv)
    hit = np.nonzero(remaining < log_u_star)[0]
    return int(hit[0]) + 1 if hit.size else None


def extend_sticks(model: Model, state: ChainState, M: float, rng) -> int:
    """Append prior sticks and components until the slice covers every row.

    Returns k*, the minimal number of sticks whose weights exceed 1 - min(u).
    """
    log_u_star = float(state.log_u.min())
    k = minimal_sticks(state.log_1mv, log_u_star)
    if k is not None:
        return k
    remaining = float(np.sum(state.log_1mv))
    new_v, new_1mv = [], []
    while remaining >= log_u_star:
        if state.n_components + len(new_v) >= model.stick_cap:
            raise SamplerError(f"stick count exceeded cap of {model.stick_cap}")
        lv, l1mv = stats.sample_log_beta(rng, 1.0, M)
        new_v.append(float(lv))
        new_1mv.append(float(l1mv))
        remaining += float(l1mv)
    state.log_v = np.concatenate([state.log_v, new_v])
    state.log_1mv = np.concatenate([state.log_1mv, new_1mv])
    state.clusters.extend(kernel.prior_clusters(model, rng, len(new_v)))
    return state.n_components


def _stacked_chol(clusters) -> np.ndarray:
    sig = np.stack([c.sigma for c in clusters])
    try:
        chols = np.linalg.cholesky(sig)
    except np.linalg.LinAlgError:
        return np.stack([c.chol for c in clusters])
    for c, l in zip(clusters, chols):
        c.__dict__.setdefault("chol", l)
    return chols


def log_likelihood_matrix(model: Model, state: ChainState, comps=None) -> np.ndarray:
    """log kernel density of every latent row under components ``comps``."""
    x = state.z - _offsets(state)
    comps = range(state.n_components) if comps is None else comps
    cl = [state.clusters[h] for h in comps]
    chols = _stacked_chol(cl)
    means = np.stack([c.mean for c in cl])
    d = chols.shape[1]
    # batched triangular solve: (H, d, d) against (H, d, N)
    sol = np.linalg.solve(chols, np.swapaxes(x[None] - means[:, None, :], 1, 2))
    maha = np.einsum("hdn,hdn->nh", sol, sol)
    logdet = 2.0 * np.log(np.einsum("hii->hi", chols)).sum(axis=1)
    if model.kernel != "t":
        return -0.5 * (d * np.log(2 * np.pi) + logdet[None] + maha)
    nu = np.array([c.nu for c in cl])[None]
    return (special.gammaln(0.5 * (nu + d)) - special.gammaln(0.5 * nu) - 0.5 * d * np.log(nu * np.pi)
            - 0.5 * logdet[None] - 0.5 * (nu + d) * np.log1p(maha / nu))


def update_allocations(model: Model, state: ChainState, rng, k_star: int | None = None) -> float:
    """Draw r_i with probability proportional to L(z_i | theta_h) 1{w_h > u_i}.

    Returns the summed log-likelihood of the chosen allocations.
    """
    k_star = state.n_components if k_star is None else k_star
    log_w = state.log_w[:k_star]
    eligible = log_w[None, :] > state.log_u[:, None]
    if not eligible.any(axis=1).all():
        raise SamplerError("a row has no eligible component")
    ll = log_likelihood_matrix(model, state, range(k_star))
    logits = np.where(eligible, ll, -np.inf)
    state.r = stats.gumbel_argmax(rng, logits)
    return float(ll[np.arange(model.n), state.r].sum())


def _single_loglik(model: Model, state: ChainState) -> float:
    x = state.z - _offsets(state)
    return float(state.clusters[0].logpdf(x).sum())


def gibbs_sweep(model: Model, state: ChainState, M: float, rng) -> ChainState:
    """One full scan: parameters, sticks, slice, allocations, latents, imputations."""
    from .imputation import impute_writeback

    update_cluster_params(model, state, rng)
    if model.mixture:
        update_sticks(model, state, M, rng)
        update_slice(state, rng)
        state.k_star = extend_sticks(model, state, M, rng)
        state.loglik = update_allocations(model, state, rng, state.k_star)
    else:
        state.loglik = _single_loglik(model, state)
    if model.kernel == "t":
        kernel.update_phi(model, state, rng)
    if state.re is not None and not state.re.fixed:
        update_random_effects(state, rng)
        update_psi(state, rng)
    if model.kernel != "location":
        kernel.update_ordered_latents(model, state, rng)
        kernel.gibbs_update_latent_nominal(model, state, rng)
        impute_writeback(model, state)
    if model.mixture:
        keep = max(int(state.r.max()) + 1, state.k_star)
        del state.clusters[keep:]
        state.log_v = state.log_v[:keep]
        state.log_1mv = state.log_1mv[:keep]
    return state


def check_invariants(model: Model, state: ChainState) -> list[str]:
    """Return descriptions of every violated state invariant (empty when valid)."""
    problems = []
    if model.mixture:
        log_w = state.log_w
        if not np.all(np.isfinite(log_w)):
            problems.append("non-positive stick weight")
        if not np.all(state.log_u < log_w[state.r]):
            problems.append("slice variable not below its component weight")
        if np.sum(state.log_1mv) >= 0:
            problems.append("sticks allocate the full unit mass")
    if state.r.max() >= state.n_components or state.r.min() < 0:
        problems.append("allocation points at a missing component")
    for c in state.clusters:
        if model.kernel != "location" and not np.allclose(np.diag(c.sigma), 1.0):
            problems.append("component correlation lacks unit diagonal")
            break
    if model.kernel != "location":
        data = model.data
        for k, j in enumerate(model.ordered_cols):
            obs = ~data.mask[:, j]
            y = data.cells[obs, j]
            zc = state.z[obs, k]
            order = np.argsort(y, kind="stable")
            ys, zs = y[order], zc[order]
            # strict ordering between distinct values: max z at a level < min z at the next
            uniq, start = np.unique(ys, return_index=True)
            if uniq.size > 1:
                zmax = np.maximum.reduceat(zs, start)
                zmin = np.minimum.reduceat(zs, start)
                if not np.all(zmax[:-1] < zmin[1:]):
                    problems.append(f"latent ordering broken in column {data.names[j]!r}")
        if model.q:
            ok = kernel.nominal_consistent(state.z[:, model.p:], model.nominal_obs)
            if not ok.all():
                problems.append("nominal latent block disagrees with observed category")
    return problems
