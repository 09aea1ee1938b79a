"""Model-fit diagnostics: LPML, posterior predictive replicates and tail dependence."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats as sps

from . import stats


class DiagnosticsError(ValueError):
    pass


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    # plain numpy; scipy's array-API wrapper dominates the cost at these sizes
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return np.log(np.sum(np.exp(a - top), axis=axis)) + np.squeeze(top, axis=axis)


# --- LPML -------------------------------------------------------------------

def lpml(log_lik: np.ndarray) -> float:
    """Log pseudo marginal likelihood from an (L draws, N rows) log-likelihood matrix.

    log CPO_i = log L - logsumexp_l(-log_lik[l, i]); harmonic mean in log space.
    """
    ll = np.atleast_2d(np.asarray(log_lik, dtype=float))
    if ll.size == 0:
        raise DiagnosticsError("no draws")
    if not np.all(np.isfinite(ll)):
        raise DiagnosticsError("log-likelihood matrix has nonfinite entries")
    n_draws = ll.shape[0]
    log_cpo = np.log(n_draws) - _logsumexp(-ll, axis=0)
    return float(log_cpo.sum())


def _component_margins(means, sigmas, nus, x):
    """(N, H, d) log density and CDF of each latent margin under each component."""
    sd = np.sqrt(np.einsum("hii->hi", sigmas))
    t = (x[:, None, :] - means[None]) / sd[None]
    if nus is None:
        return -0.5 * t * t - 0.5 * np.log(2 * np.pi) - np.log(sd)[None], special.ndtr(t)
    nu = np.asarray(nus, dtype=float)[None, :, None]
    logpdf = (special.gammaln(0.5 * (nu + 1)) - special.gammaln(0.5 * nu) - 0.5 * np.log(nu * np.pi)
              - 0.5 * (nu + 1) * np.log1p(t * t / nu))
    return logpdf - np.log(sd)[None], special.stdtr(nu, t)


def row_log_likelihood(model, state) -> np.ndarray:
    """Copula-scale log density of each latent row under the current mixture.

    Mixture density of the full latent row (weights renormalised over the
    instantiated components) divided by the product of the mixture marginal
    densities of the ordered coordinates.
    """
    from .kernel import _offsets

    x = state.z - _offsets(state)
    log_w = state.log_w
    log_w = log_w - _logsumexp(log_w, axis=0)
    comp = np.column_stack([c.logpdf(x) for c in state.clusters])
    joint = _logsumexp(comp + log_w[None], axis=1)
    p = model.p
    means = np.stack([c.mean[:p] for c in state.clusters])
    sigmas = np.stack([c.sigma[:p, :p] for c in state.clusters])
    nus = [c.nu for c in state.clusters] if model.kernel == "t" else None
    logpdf, _ = _component_margins(means, sigmas, nus, x[:, :p])
    marg = _logsumexp(logpdf + log_w[None, :, None], axis=1)
    return joint - marg.sum(axis=1)


# --- replication ------------------------------------------------------------

def sample_latent_rows(draw, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Latent rows from one posterior draw; returns (rows, component labels)."""
    w = np.asarray(draw.weights, dtype=float)
    w = w / w.sum()
    labels = rng.choice(w.size, size=n, p=w)
    d = draw.means.shape[1]
    out = np.empty((n, d))
    for h in np.unique(labels):
        sel = labels == h
        k = int(sel.sum())
        chol = stats.cholesky(draw.sigmas[h])
        z = rng.standard_normal((k, d)) @ chol.T
        if draw.nus is not None:
            nu = draw.nus[h]
            z /= np.sqrt(rng.gamma(0.5 * nu, 2.0 / nu, size=k))[:, None]
        out[sel] = draw.means[h] + z
    return out, labels


def replicate_dataset(draw, n: int, rng, p: int | None = None, ecdfs=None) -> np.ndarray:
    """Replicated rows on the copula scale for the first ``p`` latent coordinates.

    Each margin is mapped through its mixture marginal CDF. If ``ecdfs`` is
    given the uniforms are pushed through the column ECDF inverses as well.
    """
    z, _ = sample_latent_rows(draw, n, rng)
    p = z.shape[1] if p is None else p
    w = np.asarray(draw.weights, dtype=float)
    w = w / w.sum()
    _, cdf = _component_margins(draw.means[:, :p], draw.sigmas[:, :p, :p], draw.nus, z[:, :p])
    u = np.einsum("nhj,h->nj", cdf, w)
    if ecdfs is not None:
        u = np.column_stack([e.inverse(u[:, k]) for k, e in enumerate(ecdfs)])
    return u


# --- tail dependence --------------------------------------------------------

def pseudo_observations(x: np.ndarray) -> np.ndarray:
    """Column ranks scaled to (0, 1) by n + 1; ties share the maximum rank."""
    x = np.asarray(x, dtype=float)
    return sps.rankdata(x, method="max", axis=0) / (x.shape[0] + 1)


def penultimate_tail_dep(uv: np.ndarray, u: float, side: str = "upper") -> float:
    """Empirical conditional exceedance #(x > u, y > u) / #(y > u).

    ``side='lower'`` uses #(x < 1-u, y < 1-u) / #(y < 1-u). Returns 0 when
    nothing exceeds the conditioning threshold.
    """
    if not 0.0 < u < 1.0:
        raise DiagnosticsError("quantile level must lie in (0, 1)")
    uv = np.asarray(uv, dtype=float)
    x, y = uv[:, 0], uv[:, 1]
    if side == "upper":
        cond = y > u
        both = cond & (x > u)
    elif side == "lower":
        cond = y < 1.0 - u
        both = cond & (x < 1.0 - u)
    else:
        raise DiagnosticsError(f"unknown side {side!r}")
    n_cond = int(cond.sum())
    return float(both.sum() / n_cond) if n_cond else 0.0


def t_tail_dependence(rho: float, nu: float) -> float:
    """Tail-dependence coefficient of a bivariate t copula (equal in both tails)."""
    if not abs(rho) < 1:
        raise DiagnosticsError("correlation must lie strictly inside (-1, 1)")
    if not nu > 0:
        raise DiagnosticsError("degrees of freedom must be positive")
    arg = -np.sqrt(nu + 1.0) * np.sqrt((1.0 - rho) / (1.0 + rho))
    return float(2.0 * sps.t.cdf(arg, nu + 1.0))


# --- posterior predictive check --------------------------------------------

@dataclass(frozen=True)
class TailCheck:
    pair: tuple[int, int]
    u: float
    side: str
    observed: float
    rep_mean: float
    rep_lo: float
    rep_hi: float
    bayesian_p: float
    covered: bool


def tail_check(observed: float, replicates: np.ndarray, pair, u, side) -> TailCheck:
    reps = np.asarray(replicates, dtype=float)
    lo, hi = np.quantile(reps, [0.025, 0.975])
    return TailCheck(tuple(pair), float(u), side, float(observed), float(reps.mean()), float(lo), float(hi),
                     float(np.mean(reps < observed)), bool(lo <= observed <= hi))


def ppc_report(observed: np.ndarray, draws: Sequence, u_levels=(0.95, 0.9, 0.85), n_replicates: int = 200,
               rng=None, sides=("upper", "lower"), discrete_ecdfs: dict | None = None) -> list[TailCheck]:
    """Tail-dependence posterior predictive checks over every pair of columns.

    ``observed`` is the (N, p) matrix of ordered columns (NaN for missing);
    pairs use rows observed in both columns. Replicates come from
    ``n_replicates`` draws spread evenly over ``draws``; statistics on both
    sides are computed from pseudo-observations. Columns listed in
    ``discrete_ecdfs`` (column index -> ECDF) have their replicate values
    mapped through the ECDF inverse first, so replicates carry the same ties
    as the observed discrete column.
    """
    observed = np.asarray(observed, dtype=float)
    n, p = observed.shape
    if p < 2:
        raise DiagnosticsError("tail checks need at least two columns")
    if not draws:
        raise DiagnosticsError("no posterior draws")
    rng = np.random.default_rng() if rng is None else rng
    pick = np.linspace(0, len(draws) - 1, min(n_replicates, len(draws))).round().astype(int)
    if n_replicates > len(draws):
        pick = rng.integers(len(draws), size=n_replicates)
    pairs = list(itertools.combinations(range(p), 2))
    reps = {(pr, u, s): [] for pr in pairs for u in u_levels for s in sides}
    discrete_ecdfs = discrete_ecdfs or {}
    for idx in pick:
        if discrete_ecdfs:
            z = replicate_dataset(draws[idx], n, rng, p)
            for k, e in discrete_ecdfs.items():
                z[:, k] = e.inverse(z[:, k])
        else:
            z, _ = sample_latent_rows(draws[idx], n, rng)
        for pr in pairs:
            ok = ~np.isnan(observed[:, list(pr)]).any(axis=1)
            pu = pseudo_observations(z[ok][:, list(pr)])
            for u in u_levels:
                for s in sides:
                    reps[(pr, u, s)].append(penultimate_tail_dep(pu, u, s))
    out = []
    for pr in pairs:
        ok = ~np.isnan(observed[:, list(pr)]).any(axis=1)
        po = pseudo_observations(observed[ok][:, list(pr)])
        for u in u_levels:
            for s in sides:
                out.append(tail_check(penultimate_tail_dep(po, u, s), np.array(reps[(pr, u, s)]), pr, u, s))
    return out


@dataclass
class DiagnosticsReport:
    lpml: float
    tail: list[TailCheck]
    mean_occupied: list[float] = field(default_factory=list)
    swap_rates: list[float] = field(default_factory=list)

    def to_csv(self, names: Sequence[str] | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["statistic", "pair", "u", "side", "observed", "rep_mean", "rep_lo", "rep_hi",
                    "bayesian_p", "covered"])
        w.writerow(["lpml", "", "", "", repr(self.lpml), "", "", "", "", ""])
        for t in self.tail:
            pair = "-".join(names[k] for k in t.pair) if names else f"{t.pair[0]}-{t.pair[1]}"
            w.writerow(["tail_dependence", pair, t.u, t.side, repr(t.observed), repr(t.rep_mean),
                        repr(t.rep_lo), repr(t.rep_hi), repr(t.bayesian_p), int(t.covered)])
        for k, m in enumerate(self.mean_occupied):
            w.writerow(["mean_occupied", f"chain{k}", "", "", repr(m), "", "", "", "", ""])
        for k, r in enumerate(self.swap_rates):
            w.writerow(["swap_rate", f"{k}-{k + 1}", "", "", repr(r), "", "", "", "", ""])
        return buf.getvalue()


def diagnose_run(model, result, n_replicates: int = 200, u_levels=(0.95, 0.9, 0.85), rng=None) -> DiagnosticsReport:
    """LPML, tail checks on the ordered columns and trace summaries for one run."""
    observed = model.data.cells[:, list(model.ordered_cols)]
    ll = result.row_loglik
    discrete = {k: model.ecdfs[k] for k, j in enumerate(model.ordered_cols)
                if model.data.schema.columns[j].kind == "ordinal"}
    tail = ppc_report(observed, result.draws, u_levels, n_replicates, rng, discrete_ecdfs=discrete) \
        if model.p >= 2 else []
    post = result.occupied[result.burn_in:]
    return DiagnosticsReport(
        lpml=lpml(ll),
        tail=tail,
        mean_occupied=[float(x) for x in post.mean(axis=0)],
        swap_rates=[float(x) for x in result.swap_stats.rates],
    )
