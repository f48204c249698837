import numpy as np
import pytest

from dwe_lab import _kernels
from dwe_lab.dynamics import find_closed_geodesic
from dwe_lab.geometry import build_damping, build_metric

# The pure-numpy fallback path is correctness-equivalent but much slower on
# long single trajectories; heavy horizons shrink when it is active.
FAST_PATH = _kernels.USE_NUMBA


def horizon(full: float, cheap: float) -> float:
    return full if FAST_PATH else cheap


@pytest.fixture(scope="session")
def flat_metric():
    return build_metric("flat", N=32)


@pytest.fixture(scope="session")
def ychannel():
    return build_metric("y-channel", eps=0.1, N=32)


@pytest.fixture(scope="session")
def well_damping():
    # vanishes exactly on |y| <= 0.1, depth 0.5 beyond |y| >= 0.25
    return build_damping("smooth-well", half_width=0.1, outer_radius=0.25, depth=0.5)


@pytest.fixture(scope="session")
def ychannel_orbit(ychannel):
    return find_closed_geodesic(ychannel, seed=(0.0, 0.0))


# closed-form reference values for the y-channel preset (L = 1, eps = 0.1):
# curvature along the orbit K = -4 pi^2 eps e^{2 eps}, Lyapunov exponent
# lam = 2 pi sqrt(eps) e^{eps}, period T = e^{-eps}
YCHAN_EPS = 0.1
YCHAN_LAMBDA = 2.0 * np.pi * np.sqrt(YCHAN_EPS) * np.exp(YCHAN_EPS)
YCHAN_PERIOD = np.exp(-YCHAN_EPS)
