import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, strategies as st

from dpmcopula import imputation, tempering
from dpmcopula.imputation import (
    ImputationError,
    ImputedDraw,
    fit_poisson_glm,
    imputation_accuracy,
    imputation_iterations,
    impute_writeback,
    rubin_pool,
)
from dpmcopula.kernel import Model

from conftest import cluster, dataset, state_for


def _writeback_model():
    cells = np.array([[1.0, 0.0], [2.0, 1.0], [3.0, 2.0], [np.nan, np.nan]])
    model = Model(dataset(cells, ("ordinal", "nominal"), 4))
    return model, state_for(model, [cluster(model, np.eye(4), [0, 0, 0])])


def test_writeback_examples():
    model, state = _writeback_model()
    state.z[3] = [0.0, -1.0, -2.0, -0.5]
    np.testing.assert_array_equal(impute_writeback(model, state), [2.0, 0.0])
    state.z[3] = [6.0, 0.1, 0.7, -0.5]
    np.testing.assert_array_equal(impute_writeback(model, state), [3.0, 2.0])
    assert state.imputed is not None


def test_writeback_t_kernel_uses_component_df():
    cells = np.array([[1.0], [2.0], [3.0], [4.0], [np.nan]])
    model = Model(dataset(cells, ("continuous",)), kernel="t")
    state = state_for(model, [cluster(model, [[1.0]], nu=2.0)])
    # at 0.27 the t_2 CDF is 0.594 and the t_30 CDF 0.605, either side of the 0.6 ECDF step
    state.z[4, 0] = 0.27
    assert impute_writeback(model, state)[0] == 3.0
    state.clusters[0].nu = 30.0
    assert impute_writeback(model, state)[0] == 4.0


def test_iteration_spacing():
    assert imputation_iterations(10_000, 5_000, 10) == list(range(5500, 10_001, 500))
    assert imputation_iterations(10_000, 5_000, 1) == [10_000]
    assert imputation_iterations(10, 3, 7) == list(range(4, 11))
    with pytest.raises(ImputationError):
        imputation_iterations(10_000, 5_000, 5_001)


def test_multiple_impute_keeps_observed_cells(mixed_model):
    res = tempering.run(mixed_model, (1.0, 2.0), 40, 20, 0, thin=5)
    draws = imputation.multiple_impute(mixed_model, res, 4)
    assert [d.iteration for d in draws] == [25, 30, 35, 40]
    obs = ~mixed_model.data.mask
    for d in draws:
        assert not d.data.mask.any()
        np.testing.assert_array_equal(d.data.cells[obs], mixed_model.data.cells[obs])
        for k, j in enumerate(mixed_model.ordered_cols):
            vals = set(mixed_model.data.observed(j))
            assert set(d.data.cells[mixed_model.data.mask[:, j], j]) <= vals
        nom = d.data.cells[:, mixed_model.nominal_col]
        assert set(nom) <= {0.0, 1.0, 2.0}


def test_rubin_examples():
    p = rubin_pool([1.0, 3.0], [0.5, 0.5])
    assert (p.point, p.within_var, p.between_var, p.total_var) == (2.0, 0.5, 2.0, 3.5)
    lo, hi = p.ci95
    assert lo == pytest.approx(2 - 1.96 * np.sqrt(3.5), abs=1e-15)
    assert hi == pytest.approx(2 + 1.96 * np.sqrt(3.5), abs=1e-15)
    same = rubin_pool([0.7] * 4, [0.1, 0.2, 0.3, 0.4])
    assert same.between_var == 0 and same.total_var == same.within_var
    ten = rubin_pool(np.arange(10.0), np.ones(10))
    assert ten.total_var == pytest.approx(1.0 + 1.1 * np.var(np.arange(10.0), ddof=1), abs=1e-12)
    with pytest.raises(ImputationError):
        rubin_pool([1.0], [1.0])


finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(st.lists(st.tuples(finite, st.floats(0, 1e3)), min_size=2, max_size=20))
def test_rubin_matches_direct_formula(pairs):
    est = [a for a, _ in pairs]
    var = [b for _, b in pairs]
    m = len(pairs)
    point = sum(est) / m
    w = sum(var) / m
    b = sum((e - point) ** 2 for e in est) / (m - 1)
    p = rubin_pool(est, var)
    assert p.point == pytest.approx(point, rel=1e-9, abs=1e-9)
    assert p.within_var == pytest.approx(w, rel=1e-9, abs=1e-9)
    assert p.between_var == pytest.approx(b, rel=1e-9, abs=1e-6)
    assert p.total_var == pytest.approx(w + (1 + 1 / m) * b, rel=1e-9, abs=1e-6)


def test_glm_closed_forms():
    ones = np.ones((5, 1))
    coef, _ = fit_poisson_glm(np.ones(5), ones)
    assert abs(coef[0]) < 1e-10
    coef, var = fit_poisson_glm([1, 3, 2, 2, 0, 4], np.ones((6, 1)))
    assert abs(coef[0] - np.log(2)) < 1e-10
    assert abs(var[0] - 1 / 12) < 1e-10


def test_glm_matches_statsmodels():
    gen = np.random.default_rng(1)
    X = np.column_stack([np.ones(300), gen.normal(size=300), gen.integers(0, 2, 300)])
    y = gen.poisson(np.exp(X @ [0.2, 0.5, -0.4]))
    coef, var = fit_poisson_glm(y, X)
    ref = sm.GLM(y, X, family=sm.families.Poisson()).fit()
    np.testing.assert_allclose(coef, ref.params, atol=1e-8)
    np.testing.assert_allclose(np.sqrt(var), ref.bse, rtol=1e-6)


def test_glm_recovers_known_coefficients():
    gen = np.random.default_rng(2)
    truth = np.array([0.3, -0.2, 0.6])
    X = np.column_stack([np.ones(5000), gen.normal(size=5000), gen.normal(size=5000)])
    coef, var = fit_poisson_glm(gen.poisson(np.exp(X @ truth)), X)
    assert np.all(np.abs(coef - truth) < 3 * np.sqrt(var))


def test_glm_errors():
    with pytest.raises(ImputationError):
        fit_poisson_glm([1, 2, 3], np.ones((3, 2)))
    with pytest.raises(ImputationError):
        fit_poisson_glm([1, -2, 3], np.ones((3, 1)))


def test_poisson_design_expands_nominal():
    data = dataset([[1, 0.5, 0], [2, 1.5, 2], [0, -1.0, 1]], ("ordinal", "continuous", "nominal"), 3)
    y, X, labels = imputation.poisson_design(data, "c0", ["c1", "c2"])
    assert labels == ["intercept", "c1", "c2=1", "c2=2"]
    np.testing.assert_array_equal(X[:, 2:], [[0, 0], [0, 1], [1, 0]])


def _draw(cells, kinds):
    return ImputedDraw(dataset(cells, kinds, 3), 0)


def test_accuracy_examples():
    kinds = ("continuous", "nominal")
    truth = dataset([[2.0, 1], [4.0, 0], [1.0, 2]], kinds, 3)
    deleted = np.array([[True, True], [False, True], [False, False]])
    perfect = _draw(truth.cells, kinds)
    assert imputation_accuracy(truth, deleted, [perfect]) == {"c0": 0.0, "c1": 0.0}
    wrong = _draw([[5.0, 1], [4.0, 2], [1.0, 2]], kinds)
    assert imputation_accuracy(truth, deleted, [wrong]) == {"c0": 3.0, "c1": 0.5}
    with pytest.raises(ImputationError):
        imputation_accuracy(truth, deleted[:2], [wrong])


def test_pooled_csv_columns():
    text = imputation.pooled_to_csv({"b0": rubin_pool([1.0, 3.0], [0.5, 0.5])})
    assert text.splitlines()[0] == "parameter,point,total_sd,ci_lo,ci_hi"
    assert text.splitlines()[1].startswith("b0,2.0,")
