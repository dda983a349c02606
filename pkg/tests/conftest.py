import numpy as np
import pytest

import mpmlaw.backend as backend


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(params=["numba", "numpy"])
def kernel_backend(request):
    """Run a test under both kernel backends, restoring the default afterwards."""
    old = backend.active_backend()
    backend.use_backend(request.param)
    yield request.param
    backend.use_backend(old)


def random_rotation(rng):
    """Uniform random rotation matrix from a normalized quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def fd_matrix_grad(fun, F, h=1e-6):
    """Central finite differences of a scalar function of a 3x3 matrix."""
    g = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            fp = F.copy()
            fp[i, j] += h
            fm = F.copy()
            fm[i, j] -= h
            g[i, j] = (fun(fp) - fun(fm)) / (2 * h)
    return g
