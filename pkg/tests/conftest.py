import json

import numpy as np
import pytest

from dpsynth import Hyper, TableSchema, parse_schema
from dpsynth.codec import encode_table
from dpsynth.gan import Trainer, fit

TOY_SCHEMA_JSON = json.dumps([
    {"name": "x", "kind": "continuous"},
    {"name": "k", "kind": "categorical", "is_target": True},
])


def toy_table(n: int, seed: int) -> list[list[str]]:
    """2000-row style toy: x ~ 0.5 N(0,1) + 0.5 N(5,1), P(k=b | x>2.5) = 0.9."""
    rng = np.random.default_rng(seed)
    comp = rng.integers(0, 2, n)
    x = np.where(comp == 0, rng.normal(0, 1, n), rng.normal(5, 1, n))
    p_b = np.where(x > 2.5, 0.9, 0.1)
    k = np.where(rng.random(n) < p_b, "b", "a")
    return [[repr(float(xi)), str(ki)] for xi, ki in zip(x, k)]


def small_hyper(**overrides) -> Hyper:
    """Desk-test hyperparameters: tiny widths, no attention, aux on."""
    base = dict(
        seed=7,
        z_dim=16,
        g_hidden=(32, 32),
        d_hidden=(32, 32),
        a_hidden=(16, 16, 16, 16),
        batch=16,
        steps=50,
        sigma=0.0,
        attention=False,
    )
    base.update(overrides)
    return Hyper(**base)


@pytest.fixture(scope="session")
def toy_schema() -> TableSchema:
    return parse_schema(TOY_SCHEMA_JSON)


@pytest.fixture(scope="session")
def toy_rows() -> list[list[str]]:
    return toy_table(600, 42)


@pytest.fixture(scope="session")
def toy_encoded(toy_rows, toy_schema):
    return encode_table(toy_rows, toy_schema, 10, 7)


@pytest.fixture()
def toy_trainer(toy_encoded, toy_schema):
    table, state = toy_encoded
    return Trainer(table, state, small_hyper())


@pytest.fixture(scope="session")
def toy_checkpoint(toy_rows, toy_schema):
    """A short non-private training run shared by read-only tests."""
    return fit(toy_rows, toy_schema, small_hyper(steps=120))
