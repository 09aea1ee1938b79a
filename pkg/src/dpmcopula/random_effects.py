"""Group-level random effects added to the latent rows: z_i = b_{c(i)} + mixture draw."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular

from . import stats


@dataclass(eq=False)
class RandomEffectsState:
    group_of: np.ndarray   # row -> group index 0..C-1
    b: np.ndarray          # (C, d)
    psi: np.ndarray        # (d, d)
    nu_psi: float
    lambda_psi: np.ndarray
    fixed: bool = False    # pin b and psi (reduces to the base model)

    @property
    def n_groups(self) -> int:
        return self.b.shape[0]

    def copy(self) -> "RandomEffectsState":
        return replace(self, b=self.b.copy(), psi=self.psi.copy())


def init_random_effects(labels, d: int, nu_psi: float | None = None, lambda_psi=None,
                        fixed: bool = False) -> RandomEffectsState:
    """Zero effects and identity Psi for the groups found in ``labels``."""
    _, group_of = np.unique(np.asarray(labels), return_inverse=True)
    n_groups = int(group_of.max()) + 1 if group_of.size else 0
    return RandomEffectsState(
        group_of=group_of.astype(int),
        b=np.zeros((n_groups, d)),
        psi=np.eye(d),
        nu_psi=float(d + 2) if nu_psi is None else float(nu_psi),
        lambda_psi=np.eye(d) if lambda_psi is None else np.asarray(lambda_psi, float),
        fixed=fixed,
    )


def update_random_effects(state, rng) -> np.ndarray:
    """Draw each b_c from its normal full conditional.

    Precision Psi^-1 + sum_i phi_i Sigma_{r_i}^-1 and mean P^-1 sum_i phi_i
    Sigma_{r_i}^-1 (z_i - mean_{r_i}) over the members of group c; empty
    groups get a prior draw.
    """
    re = state.re
    if re is None or re.fixed:
        return None if re is None else re.b
    d = re.b.shape[1]
    precs = np.stack([c.prec for c in state.clusters])
    means = np.stack([c.mean for c in state.clusters])
    prow = precs[state.r] * state.phi[:, None, None]
    resid = state.z - means[state.r]
    rhs_rows = np.einsum("nij,nj->ni", prow, resid)
    prec_sum = np.zeros((re.n_groups, d, d))
    rhs = np.zeros((re.n_groups, d))
    np.add.at(prec_sum, re.group_of, prow)
    np.add.at(rhs, re.group_of, rhs_rows)
    psi_inv = np.linalg.inv(re.psi)
    b = np.empty_like(re.b)
    for c in range(re.n_groups):
        post_prec = psi_inv + prec_sum[c]
        chol = stats.cholesky(post_prec)
        mean = np.linalg.solve(post_prec, rhs[c])
        # N(mean, P^-1): solve L^T x = eps
        eps = rng.standard_normal(d)
        b[c] = mean + solve_triangular(chol.T, eps, lower=False, check_finite=False)
    re.b = b
    return b


def update_psi(state, rng) -> np.ndarray:
    """Psi ~ InvWishart(nu_psi + C, Lambda_psi + sum_c b_c b_c^T)."""
    re = state.re
    if re is None or re.fixed:
        return None if re is None else re.psi
    re.psi = stats.sample_inverse_wishart(rng, re.nu_psi + re.n_groups, re.lambda_psi + re.b.T @ re.b)
    return re.psi
