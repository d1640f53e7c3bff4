import pytest

from stepscope.baseline import baseline_record
from stepscope.scenarios import scenario
from stepscope.simulate import simulate


@pytest.fixture(scope="session")
def healthy_out():
    cfg, anomalies = scenario("healthy")
    assert anomalies == ()
    return simulate(cfg, ())


@pytest.fixture(scope="session")
def healthy_profile(healthy_out):
    return baseline_record(healthy_out.timelines,
                           healthy_out.config.baseline_key())


@pytest.fixture(scope="session")
def small_out():
    # 4-rank dp-only job, cheap enough for tests that only need shape.
    cfg, _ = scenario("healthy", world_size=4, steps=6)
    return simulate(cfg, ())
