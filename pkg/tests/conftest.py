"""Shared fixtures; the sweep results are expensive and reused across files."""

from __future__ import annotations

import pytest

from sda_twin.channel import ChannelModel, load_scenario
from sda_twin.sweep import run_sweep


@pytest.fixture(scope="session")
def los_model() -> ChannelModel:
    return ChannelModel(load_scenario("tabletop-4p5m"), seed=0)


@pytest.fixture(scope="session")
def cabinet_model() -> ChannelModel:
    return ChannelModel(load_scenario("tabletop-4p5m-cabinet"), seed=0)


@pytest.fixture(scope="session")
def los_sweep(los_model):
    return run_sweep(los_model, frames_per_position=3)


@pytest.fixture(scope="session")
def cabinet_sweep(cabinet_model):
    return run_sweep(cabinet_model, frames_per_position=3)
