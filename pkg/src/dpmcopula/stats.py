"""Random variate generators and small dense linear-algebra helpers.

All samplers take an explicit ``numpy.random.Generator`` so every chain owns
its stream. Vectorised variants (``*_many``) are used by the Gibbs sweep.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg, special


class LinAlgError(np.linalg.LinAlgError):
    """A matrix that must be positive definite is not."""


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent stream ``stream`` derived from a master seed.

    Stream 0 belongs to the orchestrator and stream k + 1 to tempering chain k.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with one jittered retry for borderline matrices."""
    a = np.asarray(a, dtype=float)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    d = a.shape[0]
    jitter = 1e-10 * np.trace(a) / d
    if not np.isfinite(jitter) or jitter <= 0:
        raise LinAlgError("matrix is not positive definite")
    try:
        return np.linalg.cholesky(a + jitter * np.eye(d))
    except np.linalg.LinAlgError:
        raise LinAlgError("matrix is not positive definite") from None


def _check_sym(a: np.ndarray, name: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square")
    if np.abs(a - a.T).max(initial=0.0) > 1e-12:
        raise ValueError(f"{name} must be symmetric")
    return a


# --- univariate -----------------------------------------------------------

def _std_truncnorm(a, b, unif):
    """Inverse-CDF draw from N(0,1) restricted to (a, b), vectorised.

    Intervals lying entirely in one tail are inverted in log space so the
    sampler stays accurate far from the mode.
    """
    a, b, unif = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(unif, float))
    out = np.empty(a.shape)
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    tail = hi <= 0
    if tail.any():
        la = special.log_ndtr(lo[tail])
        lb = special.log_ndtr(hi[tail])
        uu = unif[tail]
        with np.errstate(divide="ignore"):
            # log((1-U) Phi(lo) + U Phi(hi)) = lb + log(U + (1-U) e^{la-lb})
            lp = lb + np.log(uu + (1.0 - uu) * np.exp(la - lb))
        out[tail] = special.ndtri_exp(np.minimum(lp, 0.0))
    mid = ~tail
    if mid.any():
        pa = special.ndtr(lo[mid])
        pb = special.ndtr(hi[mid])
        out[mid] = special.ndtri(pa + unif[mid] * (pb - pa))
    out = np.where(flip, -out, out)
    # guarantee the open interval even after rounding
    out = np.where(out <= a, np.nextafter(a, np.inf), out)
    out = np.where(out >= b, np.nextafter(b, -np.inf), out)
    return out


def sample_truncated_normal_many(rng, mean, sd, lb, ub):
    """Vectorised truncated normal; arguments broadcast together."""
    mean, sd, lb, ub = np.broadcast_arrays(*(np.asarray(x, float) for x in (mean, sd, lb, ub)))
    if np.any(sd <= 0):
        raise ValueError("sd must be positive")
    if np.any(lb >= ub):
        raise ValueError("lower bound must be below upper bound")
    a = (lb - mean) / sd
    b = (ub - mean) / sd
    z = _std_truncnorm(a, b, rng.random(mean.shape))
    x = mean + sd * z
    # rounding in the affine map can land on a bound; pull back inside
    x = np.where(x <= lb, np.nextafter(lb, np.inf), x)
    x = np.where(x >= ub, np.nextafter(ub, -np.inf), x)
    return x


def sample_truncated_normal(rng, mean: float, sd: float, lb: float = -np.inf, ub: float = np.inf) -> float:
    """One draw from N(mean, sd^2) conditioned on the open interval (lb, ub)."""
    if not sd > 0:
        raise ValueError("sd must be positive")
    if not lb < ub:
        raise ValueError("lower bound must be below upper bound")
    return float(sample_truncated_normal_many(rng, mean, sd, lb, ub))


def sample_gamma(rng, shape, rate=1.0):
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise ValueError("gamma shape and rate must be positive")
    return rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float))


def _log_gamma_variate(rng, shape):
    """log of a Gamma(shape, 1) draw, safe for shapes far below 1."""
    shape = np.asarray(shape, dtype=float)
    small = shape < 1.0
    boosted = np.where(small, shape + 1.0, shape)
    with np.errstate(divide="ignore"):
        out = np.log(rng.gamma(boosted))
        if small.any():
            u = rng.random(shape.shape)
            out = np.where(small, out + np.log(u) / np.where(small, shape, 1.0), out)
    return out


def sample_log_beta(rng, a, b):
    """Return (log v, log(1 - v)) for v ~ Beta(a, b).

    Working in log space keeps sticks usable when b is tiny and 1 - v
    underflows (total-mass parameters around 0.005 produce this routinely).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("beta parameters must be positive")
    a, b = np.broadcast_arrays(a, b)
    lx = _log_gamma_variate(rng, a)
    ly = _log_gamma_variate(rng, b)
    norm = np.logaddexp(lx, ly)
    return lx - norm, ly - norm


def sample_beta(rng, a, b):
    log_v, _ = sample_log_beta(rng, a, b)
    return np.exp(log_v)


def sample_categorical(rng, weights) -> int:
    """Index drawn with probability proportional to nonnegative ``weights``."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.isfinite(w).all():
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("at least one weight must be positive")
    return int(np.searchsorted(np.cumsum(w), rng.random() * total, side="right").clip(max=w.size - 1))


def gumbel_argmax(rng, logits: np.ndarray) -> np.ndarray:
    """Row-wise categorical draws from unnormalised log-probabilities (-inf allowed)."""
    g = rng.gumbel(size=logits.shape)
    return np.argmax(logits + g, axis=-1)


# --- multivariate ---------------------------------------------------------

def sample_mvn(rng, mean, cov, size=None):
    mean = np.asarray(mean, dtype=float)
    cov = _check_sym(cov, "cov")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise LinAlgError("covariance is not positive definite") from None
    shape = (mean.size,) if size is None else (size, mean.size)
    eps = rng.standard_normal(shape)
    return mean + eps @ chol.T


def sample_inverse_wishart(rng, df: float, scale) -> np.ndarray:
    """Inverse-Wishart draw via the Bartlett factor of the Wishart of the inverse.

    With scale = C C^T and Bartlett factor A, X^{-1} = C^{-T} A A^T C^{-1},
    so X = (A^{-1} C^T)^T (A^{-1} C^T).
    """
    scale = _check_sym(scale, "scale")
    d = scale.shape[0]
    if not df > d - 1:
        raise ValueError(f"degrees of freedom {df} must exceed dimension - 1 = {d - 1}")
    c = cholesky(scale)
    a = np.zeros((d, d))
    a[np.diag_indices(d)] = np.sqrt(rng.chisquare(df - np.arange(d)))
    lower = np.tril_indices(d, -1)
    a[lower] = rng.standard_normal(len(lower[0]))
    t = linalg.solve_triangular(a, c.T, lower=True, check_finite=False)
    x = t.T @ t
    return 0.5 * (x + x.T)


def sample_inverse_wishart_many(rng, df, scale, size: int | None = None) -> np.ndarray:
    """Independent inverse-Wishart draws, shape (n, d, d).

    ``scale`` is one (d, d) matrix shared by ``size`` draws, or a stack
    (n, d, d) with ``df`` a scalar or length-n vector.
    """
    scale = np.asarray(scale, dtype=float)
    if scale.ndim == 2:
        scale = _check_sym(scale, "scale")
        if size is None:
            raise ValueError("size is required with a single scale matrix")
        c = np.broadcast_to(cholesky(scale), (size,) + scale.shape)
    else:
        size = scale.shape[0]
        try:
            c = np.linalg.cholesky(scale)
        except np.linalg.LinAlgError:
            c = np.stack([cholesky(s) for s in scale])
    d = scale.shape[-1]
    df = np.broadcast_to(np.asarray(df, dtype=float), (size,))
    if np.any(df <= d - 1):
        raise ValueError(f"degrees of freedom must exceed dimension - 1 = {d - 1}")
    a = np.zeros((size, d, d))
    idx = np.arange(d)
    a[:, idx, idx] = np.sqrt(rng.chisquare(df[:, None] - idx[None, :]))
    lower = np.tril_indices(d, -1)
    a[:, lower[0], lower[1]] = rng.standard_normal((size, len(lower[0])))
    t = np.linalg.solve(a, np.swapaxes(c, 1, 2))
    x = np.einsum("nki,nkj->nij", t, t)
    return 0.5 * (x + np.swapaxes(x, 1, 2))


def corr_from_cov_many(cov: np.ndarray) -> np.ndarray:
    """Rescale a stack of covariance matrices (n, d, d) to correlations."""
    sd = np.sqrt(np.einsum("nii->ni", cov))
    out = cov / (sd[:, :, None] * sd[:, None, :])
    idx = np.arange(cov.shape[-1])
    out[:, idx, idx] = 1.0
    return out


def conditional_mvn(mean, cov, target_idx, given_idx, given_values):
    """Mean and covariance of x[target] given x[given] = given_values."""
    mean = np.asarray(mean, dtype=float)
    cov = _check_sym(cov, "cov")
    t = np.asarray(target_idx, dtype=int)
    g = np.asarray(given_idx, dtype=int)
    if np.intersect1d(t, g).size:
        raise ValueError("target and given index sets must be disjoint")
    if g.size == 0:
        return mean[t].copy(), cov[np.ix_(t, t)].copy()
    s_gg = cov[np.ix_(g, g)]
    s_tg = cov[np.ix_(t, g)]
    try:
        cf = linalg.cho_factor(s_gg, lower=True)
    except linalg.LinAlgError:
        raise LinAlgError("conditioning block is singular") from None
    if np.min(np.diag(cf[0])) <= 1e-12 * np.sqrt(np.max(np.diag(s_gg))):
        raise LinAlgError("conditioning block is singular")
    resid = np.asarray(given_values, dtype=float) - mean[g]
    cond_mean = mean[t] + s_tg @ linalg.cho_solve(cf, resid)
    cond_cov = cov[np.ix_(t, t)] - s_tg @ linalg.cho_solve(cf, s_tg.T)
    return cond_mean, 0.5 * (cond_cov + cond_cov.T)


def cov_to_corr(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    sd = np.sqrt(np.diag(cov)) if np.all(np.diag(cov) > 0) else None
    if sd is None:
        raise ValueError("covariance diagonal must be positive")
    out = cov / np.outer(sd, sd)
    np.fill_diagonal(out, 1.0)
    return out


def mvn_logpdf_chol(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Row-wise log N(x; mean, L L^T) for x of shape (n, d)."""
    d = chol.shape[0]
    sol = linalg.solve_triangular(chol, (x - mean).T, lower=True, check_finite=False)
    maha = np.einsum("ij,ij->j", sol, sol)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (d * np.log(2 * np.pi) + logdet + maha)


def mvt_logpdf_chol(x: np.ndarray, mean: np.ndarray, chol: np.ndarray, nu: float) -> np.ndarray:
    """Row-wise multivariate t log density with scale matrix L L^T."""
    d = chol.shape[0]
    sol = linalg.solve_triangular(chol, (x - mean).T, lower=True, check_finite=False)
    maha = np.einsum("ij,ij->j", sol, sol)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return (
        special.gammaln(0.5 * (nu + d))
        - special.gammaln(0.5 * nu)
        - 0.5 * d * np.log(nu * np.pi)
        - 0.5 * logdet
        - 0.5 * (nu + d) * np.log1p(maha / nu)
    )
