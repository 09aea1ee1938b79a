import numpy as np
import pytest
from scipy import stats as sps

from dpmcopula import kernel, sampler, simulate, stats, tempering
from dpmcopula.kernel import Model
from dpmcopula.sampler import (
    SamplerError,
    check_invariants,
    extend_sticks,
    gibbs_sweep,
    init_chain,
    minimal_sticks,
    update_allocations,
    update_slice,
    update_sticks,
)

from conftest import dataset, state_for


def test_stick_breaking_arithmetic(mixed_model):
    c = [kernel.prior_cluster(mixed_model, stats.make_rng(k)) for k in range(3)]
    state = state_for(mixed_model, c, log_v=np.log([0.5, 0.5, 0.5]))
    np.testing.assert_allclose(state.w, [0.5, 0.25, 0.125])


def test_minimal_sticks_examples():
    # w = (0.6, 0.3, 0.08) means v = (0.6, 0.75, 0.8)
    log_1mv = np.log([0.4, 0.25, 0.2])
    assert minimal_sticks(log_1mv, np.log(0.05)) == 3
    assert minimal_sticks(log_1mv, np.log(0.5)) == 1
    assert minimal_sticks(log_1mv, np.log(0.001)) is None


def test_stick_update_counts(mixed_model):
    n = mixed_model.n
    comps = [kernel.prior_cluster(mixed_model, stats.make_rng(k)) for k in range(2)]
    state = state_for(mixed_model, comps)
    g = stats.make_rng(0)
    first, second = [], []
    for _ in range(20_000):
        update_sticks(mixed_model, state, 2.0, g)
        first.append(state.v[0])
        second.append(state.v[1])
    # everyone in component 0: v_0 ~ Beta(1 + N, M); the empty one is a prior draw
    assert sps.kstest(first, sps.beta(1 + n, 2.0).cdf).pvalue > 0.01
    assert sps.kstest(second, sps.beta(1, 2.0).cdf).pvalue > 0.01


def test_slice_support(mixed_model):
    comps = [kernel.prior_cluster(mixed_model, stats.make_rng(k)) for k in range(3)]
    state = state_for(mixed_model, comps, r=np.arange(mixed_model.n) % 3)
    g = stats.make_rng(1)
    for _ in range(100):
        update_slice(state, g)
        assert np.all(state.log_u < state.log_w[state.r])
        assert np.all(np.isfinite(state.log_u))


def test_extension_is_minimal(mixed_model):
    g = stats.make_rng(2)
    state = init_chain(mixed_model, 3.0, g)
    for _ in range(20):
        gibbs_sweep(mixed_model, state, 3.0, g)
        update_sticks(mixed_model, state, 3.0, g)
        update_slice(state, g)
        k = extend_sticks(mixed_model, state, 3.0, g)
        remaining = np.cumsum(state.log_1mv)
        u_star = state.log_u.min()
        assert remaining[k - 1] < u_star
        assert k == 1 or remaining[k - 2] >= u_star


def test_stick_cap(mixed_model):
    model = Model(mixed_model.data, stick_cap=10_000)
    state = state_for(model, [kernel.prior_cluster(model, stats.make_rng(0))], log_v=[np.log(0.5)])
    state.log_u[:] = -200.0
    with pytest.raises(SamplerError):
        extend_sticks(model, state, 100.0, stats.make_rng(1))


def test_single_eligible_component_is_deterministic(mixed_model):
    comps = [kernel.prior_cluster(mixed_model, stats.make_rng(k)) for k in range(3)]
    state = state_for(mixed_model, comps, log_v=np.log([0.6, 0.5, 0.5]))
    # only the first component's weight exceeds every slice variable
    state.log_u[:] = np.log(0.3)
    update_allocations(mixed_model, state, stats.make_rng(3))
    assert np.all(state.r == 0)


def test_equal_likelihoods_split_evenly(mixed_model):
    c = kernel.prior_cluster(mixed_model, stats.make_rng(0))
    state = state_for(mixed_model, [c, c], log_v=np.log([0.5, 0.999]))
    g = stats.make_rng(4)
    share = []
    for _ in range(500):
        update_allocations(mixed_model, state, g)
        share.append(np.mean(state.r == 0))
    assert abs(np.mean(share) - 0.5) < 0.01


def test_allocation_invariant_to_likelihood_offset(mixed_model, monkeypatch):
    g = stats.make_rng(5)
    state = init_chain(mixed_model, 2.0, g)
    for _ in range(5):
        gibbs_sweep(mixed_model, state, 2.0, g)
    a = state.copy()
    update_allocations(mixed_model, a, stats.make_rng(6))
    real = sampler.log_likelihood_matrix
    monkeypatch.setattr(sampler, "log_likelihood_matrix", lambda *args, **kw: real(*args, **kw) - 321.5)
    b = state.copy()
    update_allocations(mixed_model, b, stats.make_rng(6))
    np.testing.assert_array_equal(a.r, b.r)


def test_invariants_hold_through_sweeps(mixed_model):
    g = stats.make_rng(7)
    state = init_chain(mixed_model, 1.5, g)
    before = mixed_model.data.cells.copy()
    for _ in range(60):
        gibbs_sweep(mixed_model, state, 1.5, g)
        assert check_invariants(mixed_model, state) == []
        assert state.w.sum() < 1.0
        assert state.n_components >= state.r.max() + 1
    np.testing.assert_array_equal(np.isnan(before), np.isnan(mixed_model.data.cells))
    obs = ~mixed_model.data.mask
    np.testing.assert_array_equal(before[obs], mixed_model.data.cells[obs])


def test_check_invariants_flags_broken_ordering(mixed_model):
    state = init_chain(mixed_model, 1.0, stats.make_rng(8))
    rows = np.argsort(np.nan_to_num(mixed_model.data.cells[:, 1]))
    state.z[rows[-1], 1] = -10.0
    assert any("ordering" in p for p in check_invariants(mixed_model, state))


def test_single_copula_mode_matches_collapsed_mixture():
    # with M tiny the mixture keeps one component, so both paths share a posterior
    gen = np.random.default_rng(9)
    x = gen.multivariate_normal([0, 0], [[1, 0.6], [0.6, 1]], 80)
    data = dataset(x, ("continuous", "continuous"))
    out = {}
    for mixture in (True, False):
        model = Model(data, mixture=mixture)
        res = tempering.run(model, (0.005,), 3000, 500, 10, n_init_clusters=1)
        rho = [d.sigmas[np.argmax(d.weights)][0, 1] for d in res.draws]
        out[mixture] = (np.mean(rho), np.mean(res.occupied[500:, 0]))
    assert out[True][1] < 1.05
    assert abs(out[True][0] - out[False][0]) < 0.05


TOY_M = 0.005


@pytest.fixture(scope="module")
def toy_run():
    x, labels = simulate.gen_toy_two_modes(1000, stats.make_rng(3, 10_000))
    model = Model(simulate.toy_dataset(x), kernel="location")
    truth = np.asarray(simulate.TOY_MEANS)
    means, basins = [], []

    def track(it, states):
        if it <= 1000:
            return
        s = states[0]
        basin = np.array([np.argmin(np.linalg.norm(truth - c.mean, axis=1)) for c in s.clusters])
        basins.append(basin[s.r])
        if it > 4000:
            big = np.argsort(s.counts)[::-1][:2]
            means.append(np.stack([s.clusters[h].mean for h in big]))

    res = tempering.run(model, (TOY_M,), 5000, 1000, 3, keep_draws=False, callback=track)
    return labels, res, np.array(means), np.array(basins)


def test_toy_component_means_recovered(toy_run):
    _, _, means, _ = toy_run
    truth = np.asarray(simulate.TOY_MEANS)
    last = means[-1]
    d = np.linalg.norm(last[:, None, :] - truth[None], axis=2)
    assert d.min(axis=1).max() < 0.3
    avg = np.mean([m[np.argsort(np.linalg.norm(m - truth[0], axis=1))] for m in means], axis=0)
    np.testing.assert_allclose(avg, truth, atol=0.3)


def test_toy_misallocation_below_five_percent(toy_run):
    labels, _, _, basins = toy_run
    modal = (basins.mean(axis=0) > 0.5).astype(int)
    assert np.mean(modal != labels) < 0.05


def test_toy_occupied_mode_is_two(toy_run):
    _, res, _, _ = toy_run
    counts = np.bincount(res.occupied[1000:, 0])
    assert np.argmax(counts) == 2
