from __future__ import annotations

import pytest

import corpus_builder as cb
from hfwit import hf
from hfwit import verify as vf
from hfwit.classes import Registry, powerset_entry


def fresh_registry() -> Registry:
    reg = Registry()
    reg.register_def(cb.succ_def(), level=1, graph=cb.succ_graph())
    reg.register_oracle(powerset_entry())
    return reg


@pytest.fixture
def registry() -> Registry:
    return fresh_registry()


@pytest.fixture(scope="session")
def corpus() -> dict:
    return cb.corpus()


@pytest.fixture(scope="session")
def small_grid() -> vf.GridSpec:
    return vf.default_grid(rank=2, wit_rank=2, universe_rank=2)


@pytest.fixture(scope="session")
def v2():
    return hf.enumerate_rank(2)


@pytest.fixture(scope="session")
def v3():
    return hf.enumerate_rank(3)
