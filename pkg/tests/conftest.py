import numpy as np
import pytest

from dpmcopula.data import ColumnSchema, Dataset, Schema
from dpmcopula.kernel import ClusterParams, Model, init_latent
from dpmcopula.sampler import ChainState


def dataset(cells, kinds, n_categories=None, groups=None):
    """Dataset from a float array with NaN for missing cells."""
    cells = np.asarray(cells, dtype=float)
    cols = []
    for j, kind in enumerate(kinds):
        cols.append(ColumnSchema(f"c{j}", kind, n_categories if kind == "nominal" else None))
    mask = np.isnan(cells)
    return Dataset(Schema(tuple(cols)), cells, mask, groups)


def cluster(model, sigma, beta=(), nu=None):
    sigma = np.asarray(sigma, dtype=float)
    mean = np.concatenate([np.zeros(model.p), np.asarray(beta, dtype=float)])
    return ClusterParams(mean, sigma, sigma.copy(), model.p, nu)


def state_for(model, clusters, r=None, z=None, log_v=None):
    """Chain state with given components; sticks default to equal weights."""
    h = len(clusters)
    n = model.n
    if log_v is None:
        v = np.array([1.0 / (h - k + 1) for k in range(h)])
        log_v = np.log(v)
    log_1mv = np.log1p(-np.exp(log_v))
    return ChainState(
        log_v=np.asarray(log_v, dtype=float),
        log_1mv=log_1mv,
        clusters=list(clusters),
        log_u=np.full(n, -50.0),
        r=np.zeros(n, dtype=int) if r is None else np.asarray(r, dtype=int),
        z=init_latent(model) if z is None else np.asarray(z, dtype=float),
        phi=np.ones(n),
        k_star=h,
    )


@pytest.fixture
def mixed_model():
    gen = np.random.default_rng(0)
    n = 40
    y1 = gen.poisson(2.0, n).astype(float)
    y2 = gen.normal(size=n)
    y3 = gen.integers(0, 3, n).astype(float)
    cells = np.column_stack([y1, y2, y3])
    cells[[1, 5], 0] = np.nan
    cells[[2, 7], 1] = np.nan
    cells[[3, 9], 2] = np.nan
    return Model(dataset(cells, ("ordinal", "continuous", "nominal"), 3))
