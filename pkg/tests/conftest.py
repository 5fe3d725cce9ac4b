import numpy as np
import pytest

from selectlab.harness import ExperimentConfig
from selectlab.model import Dgp, IndexMap, LinkFunction
from selectlab.posterior import normal_prior_on_grid
from selectlab.strategies import StrategySpec


def make_dgp_2d(theta=(1.0, 1.0), law="uniform"):
    return Dgp(LinkFunction(), IndexMap("linear", 2), np.array(theta), np.zeros(2), np.ones(2), law)


def make_dgp_1d(theta=-1.0):
    return Dgp(
        LinkFunction(), IndexMap("transformed-1d", 1), np.array([theta]), np.zeros(1), np.ones(1), "equally-spaced"
    )


def make_config(kind="randomized_most_likely", n_steps=20, reps=2, seed=7, **kw):
    return ExperimentConfig(
        dgp=kw.pop("dgp", make_dgp_2d()),
        prior_mean=kw.pop("prior_mean", (2.0, 1.0)),
        prior_cov=kw.pop("prior_cov", (0.75, 0.75)),
        strategy=kw.pop("strategy", StrategySpec(kind, anchor=kw.pop("anchor", None))),
        n_steps=n_steps,
        replications=reps,
        master_seed=seed,
        **kw,
    )


def make_compare_configs(n_steps=10, reps=2, seed=3, snapshots=(0, 5, 10)):
    common = dict(
        dgp=make_dgp_1d(), prior_mean=(2.0,), prior_cov=(0.75,), n_steps=n_steps, replications=reps,
        master_seed=seed, snapshot_steps=snapshots,
    )
    rml = ExperimentConfig(strategy=StrategySpec("randomized_most_likely", mode="batch"), **common)
    th = ExperimentConfig(strategy=StrategySpec("thompson", mode="batch", arms=50), **common)
    return rml, th


@pytest.fixture
def dgp2():
    return make_dgp_2d()


@pytest.fixture
def dgp1():
    return make_dgp_1d()


@pytest.fixture
def square_prior():
    return normal_prior_on_grid((2.0, 1.0), (0.75, 0.75))
