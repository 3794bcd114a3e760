import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from nlforce.media import builtin_law  # noqa: E402

LAW_SPECS = [
    ("linear", {}),
    ("power", {"beta": 1.0}),
    ("power", {"beta": -0.5}),
    ("area-min", {}),
    ("born-infeld", {}),
    ("mond-simple", {}),
    ("ideal-gas-flow", {"gamma": 1.4}),
    ("negative-compressibility-flow", {}),
]


def law_id(law_spec):
    kind, params = law_spec
    return kind + "".join(f"-{k}{v}" for k, v in params.items())


@pytest.fixture(params=LAW_SPECS, ids=[law_id(s) for s in LAW_SPECS])
def any_law(request):
    kind, params = request.param
    return builtin_law(kind, params, D=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
