import numpy as np
from scipy import integrate, stats as sps

from dpmcopula import stats, tempering
from dpmcopula.kernel import Model
from dpmcopula.random_effects import init_random_effects, update_psi, update_random_effects

from conftest import cluster, dataset, state_for


def _one_d_state(z, groups, sigma=1.0, psi=1.0):
    z = np.asarray(z, dtype=float).reshape(-1, 1)
    model = Model(dataset(z, ("continuous",)))
    state = state_for(model, [cluster(model, [[sigma]])], z=z)
    state.re = init_random_effects(groups, 1, lambda_psi=np.eye(1))
    state.re.psi = np.array([[psi]])
    return state


def _draw_b(state, n, seed=0):
    g = stats.make_rng(seed)
    return np.array([update_random_effects(state, g).copy() for _ in range(n)])


def test_single_member_normal_normal():
    state = _one_d_state([1.4], [0])
    b = _draw_b(state, 40_000)[:, 0, 0]
    assert abs(b.mean() - 0.7) < 0.02
    assert abs(b.var() - 0.5) < 0.02
    assert sps.kstest(b, sps.norm(0.7, np.sqrt(0.5)).cdf).pvalue > 0.01


def test_conditional_matches_grid_oracle():
    # three members, unequal variances: compare against a numerically normalised density
    z = [0.3, -1.1, 2.0]
    sigma, psi = 0.7, 2.5
    state = _one_d_state(z, [0, 0, 0], sigma, psi)
    grid = np.linspace(-8, 8, 20_001)
    logp = sps.norm(0, np.sqrt(psi)).logpdf(grid)
    for zi in z:
        logp += sps.norm(zi, np.sqrt(sigma)).logpdf(grid)
    dens = np.exp(logp - logp.max())
    dens /= integrate.trapezoid(dens, grid)
    mean = integrate.trapezoid(grid * dens, grid)
    var = integrate.trapezoid((grid - mean) ** 2 * dens, grid)
    cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    b = _draw_b(state, 40_000, 1)[:, 0, 0]
    assert abs(b.mean() - mean) < 4 * np.sqrt(var / b.size)
    assert abs(b.var() / var - 1) < 0.03
    assert sps.kstest(b, lambda x: np.interp(x, grid, cdf)).pvalue > 0.01


def test_empty_group_is_prior_draw():
    state = _one_d_state([0.5, 0.9], [0, 0])
    state.re = init_random_effects([0, 0], 1)
    state.re.b = np.zeros((2, 1))
    state.re.psi = np.array([[3.0]])
    # group 1 has no rows
    b = _draw_b(state, 20_000, 2)[:, 1, 0]
    assert sps.kstest(b, sps.norm(0, np.sqrt(3.0)).cdf).pvalue > 0.01


def test_tiny_psi_shrinks_effects():
    state = _one_d_state([3.0, 2.5, 4.0], [0, 0, 1], psi=1e-8)
    b = _draw_b(state, 200, 3)
    assert np.abs(b).max() < 1e-3


def test_fixed_effects_are_not_updated():
    state = _one_d_state([3.0], [0])
    state.re.fixed = True
    assert np.all(update_random_effects(state, stats.make_rng(0)) == 0)
    assert np.all(update_psi(state, stats.make_rng(0)) == np.eye(1))


def test_psi_zero_scatter_is_inverse_wishart():
    state = _one_d_state([0.0, 0.0, 0.0], [0, 1, 2])
    state.re.lambda_psi = np.array([[2.0]])
    state.re.nu_psi = 3.0
    g = stats.make_rng(4)
    draws = np.array([update_psi(state, g)[0, 0] for _ in range(20_000)])
    # IW(nu, lambda) in 1-d is InvGamma(nu / 2, lambda / 2)
    ref = sps.invgamma(a=(3.0 + 3) / 2, scale=1.0)
    assert sps.kstest(draws, ref.cdf).pvalue > 0.01


def test_psi_posterior_consistency():
    psi0 = np.array([[2.0, 0.6], [0.6, 1.0]])
    g = stats.make_rng(5)
    c = 500
    model = Model(dataset(np.zeros((c, 2)), ("continuous", "continuous")))
    state = state_for(model, [cluster(model, np.eye(2))], z=np.zeros((c, 2)))
    state.re = init_random_effects(np.arange(c), 2)
    state.re.b = g.multivariate_normal(np.zeros(2), psi0, c)
    mean = np.mean([update_psi(state, g) for _ in range(2000)], axis=0)
    exact = (np.eye(2) + state.re.b.T @ state.re.b) / (state.re.nu_psi + c - 3)
    np.testing.assert_allclose(mean, exact, rtol=0.02)
    # elementwise 10% is tighter than the sampling noise of 500 effects; use the matrix norm
    assert np.linalg.norm(mean - psi0) <= 0.1 * np.linalg.norm(psi0)


def _grouped_data(seed, offset):
    gen = np.random.default_rng(seed)
    groups = np.repeat([0, 1], 50)
    x = gen.normal(size=(100, 2)) + np.where(groups == 0, offset, -offset)[:, None]
    return dataset(x, ("continuous", "continuous"), groups=groups)


def test_fixed_mode_reproduces_base_model():
    data = _grouped_data(0, 1.0)
    model = Model(data)
    base = tempering.run(model, (0.5, 1.0), 60, 20, 11, thin=4)
    pinned = tempering.run(model, (0.5, 1.0), 60, 20, 11, thin=4,
                           re_factory=lambda: init_random_effects(data.groups, model.d, fixed=True))
    assert base.trace_csv() == pinned.trace_csv()
    np.testing.assert_array_equal(base.row_loglik, pinned.row_loglik)
    for a, b in zip(base.draws, pinned.draws):
        np.testing.assert_array_equal(a.sigmas, b.sigmas)


def test_group_offsets_recovered_with_correct_signs():
    data = _grouped_data(1, 1.5)
    model = Model(data)
    effects = []

    def track(it, states):
        if it > 300:
            effects.append(states[0].re.b.copy())

    tempering.run(model, (1.0,), 1500, 300, 12, keep_draws=False, callback=track,
                  re_factory=lambda: init_random_effects(data.groups, model.d))
    b = np.array(effects)
    separated = np.all(b[:, 0] > 0, axis=1) & np.all(b[:, 1] < 0, axis=1)
    assert separated.mean() >= 0.95
