import numpy as np
import pytest

from pseudoplateau.qcore import BilinearForm
from pseudoplateau import einstein as ein
from pseudoplateau import plateau as pl


FORM1 = BilinearForm(1)


def make_wobble(n=1, k=128, amp=0.25, freq=3):
    th = np.linspace(0, 2 * np.pi, k, endpoint=False)
    if n == 1:
        phi = amp * np.sin(freq * th)
        fib = np.column_stack([np.cos(phi), np.sin(phi)])
    else:
        a = amp * np.cos(freq * th)
        b = amp * np.sin(freq * th)
        fib = np.zeros((k, n + 1))
        fib[:, 0] = np.sqrt(1 - a**2 - b**2)
        fib[:, 1] = a
        fib[:, 2] = b
    return ein.LipschitzLoop(th, fib, c1=True)


def make_circle(n=1, k=96):
    th = np.linspace(0, 2 * np.pi, k, endpoint=False)
    f = np.zeros(n + 1)
    f[0] = 1.0
    return ein.LipschitzLoop(th, np.tile(f, (k, 1)), c1=True)


def make_rigid_arc(k=96, slope=1.0 / 3.0):
    thetas = np.linspace(0.0, 2.0 * np.pi, k, endpoint=False)
    fibers = np.zeros((k, 2))
    for i, t in enumerate(thetas):
        phi = t if t <= np.pi / 2.0 else np.pi / 2.0 - (t - np.pi / 2.0) * slope
        fibers[i] = (np.cos(phi), np.sin(phi))
    return ein.LipschitzLoop(thetas, fibers, c1=False)


@pytest.fixture(scope="session")
def solved_circle():
    return pl.plateau_solve(pl.build_state(make_circle(), 24, 72, 3.0),
                            tol=1e-9, max_iter=500)


@pytest.fixture(scope="session")
def solved_wobble_state():
    return pl.plateau_solve(pl.build_state(make_wobble(), 24, 72, 3.0),
                            tol=1e-9, max_iter=2000)


@pytest.fixture(scope="session")
def solved_crown_state():
    crown = ein.barbot_crown_standard(1)
    loop = ein.crown_loop(crown, samples_per_edge=24)
    return pl.plateau_solve(pl.build_state(loop, 16, 48, 1.2),
                            tol=1e-8, max_iter=2000)


@pytest.fixture(scope="session")
def barbot_grid_state():
    crown = ein.barbot_crown_standard(1)
    st = pl.barbot_state(FORM1, crown, 32, 96, 1.2)
    st.loop = ein.crown_loop(crown, samples_per_edge=24)
    return st
