import numpy as np
import pytest

from reconnn.thermal import GeometrySpec, MaterialSpec, TemperatureField


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def block_field(shape, spacing=(0.01, 0.01, 0.01), t_f=25.0, temps=None, source=None):
    """All-solid box, optionally with given temperatures and heat-source mask."""
    solid = np.ones(shape, dtype=bool)
    if temps is None:
        temps = np.full(shape, float(t_f))
    return TemperatureField(np.array(temps, dtype=np.float64), solid, tuple(spacing), 0.0,
                            source, float(t_f), {})


@pytest.fixture
def small_geometry():
    # 3 fins on a compact sink, resolvable on coarse grids
    return GeometrySpec(L=0.08, W=0.07, H=0.04, L_h=0.04, W_h=0.04, t_0=0.01, t_1=0.01, S=0.02)


@pytest.fixture
def material():
    return MaterialSpec()
