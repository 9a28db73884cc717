"""Shared datasets. The default dataset is generated once per session."""

import time
import warnings

import numpy as np
import pytest

from cshalo import HaloGeometry, SourceParams, generate_dataset, generate_uniform_dataset
from cshalo.corr import BinGrid, correlate, fit_correlation
from cshalo.cstest import sweep_M

# coarse grid for the null test: every bin collects >1e5 same-shot pairs
NULL_GRID = BinGrid((0.5, 0.5, 0.25), (0.75, 0.75, 0.375))


@pytest.fixture(scope="session")
def timings():
    """Wall-clock seconds of the shared session computations."""
    return {}


@pytest.fixture(scope="session")
def default_dataset(timings):
    t0 = time.perf_counter()
    ds = generate_dataset(HaloGeometry(), SourceParams())
    timings["generate"] = time.perf_counter() - t0
    return ds


@pytest.fixture(scope="session")
def default_estimates(default_dataset, timings):
    out = {}
    t0 = time.perf_counter()
    for kind in ("CL", "BB"):
        est = correlate(default_dataset, kind)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out[kind] = (est, fit_correlation(est))
    timings["correlate"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def default_sweep(default_dataset):
    return sweep_M(default_dataset)


@pytest.fixture(scope="session")
def uniform_dataset():
    return generate_uniform_dataset(HaloGeometry(), 200.0, 3600, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
