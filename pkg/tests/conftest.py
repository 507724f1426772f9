import numpy as np
import pytest

from bodyflock import equilibria as eq
from bodyflock import so3


@pytest.fixture(scope="session")
def quad():
    """Default-resolution quadrature, shared across tests."""
    return so3.So3Quadrature(256, 302)


@pytest.fixture(scope="session")
def quad_dense():
    """Sphere-boosted quadrature for checks near 1e-10 and below."""
    return so3.So3Quadrature(256, 2048)


@pytest.fixture(scope="session")
def params_half():
    return eq.EquilibriumParams(eq.NuSpec.constant(1.0), d=0.5)


def haar_angles_independent(rng: np.random.Generator, n: int) -> np.ndarray:
    """Rotation angles under the invariant measure via uniform quaternions.

    Independent of the package's sampling path: four normals, normalized;
    the rotation angle is ``2 arccos |w|``.
    """
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return 2.0 * np.arccos(np.clip(np.abs(q[:, 0]), -1.0, 1.0))
