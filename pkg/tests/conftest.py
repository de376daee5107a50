import numpy as np
import pytest

import yieldkit as yk
from yieldkit import mesh as ymesh, fem, datagen


E_REF = 210.0
NU_REF = 0.3


@pytest.fixture(scope="session")
def elastic():
    return yk.ElasticLaw(E_REF, NU_REF)


def vm_params(n_features=7):
    theta = np.zeros(n_features)
    theta[0] = 0.24
    return yk.MaterialParams(theta, np.array([40.0, 2.0, 900.0, 150.0, 600.0]))


def mixed_params():
    """A generic multi-mode admissible model for derivative tests."""
    theta = np.array([0.24, 0.01, -0.005, 0.003, 0.002, -0.001, 0.0005])
    return yk.MaterialParams(theta, np.array([40.0, 2.0, 900.0, 150.0, 600.0]))


def random_symmetric(rng, scale=0.15):
    a = rng.normal(size=(3, 3))
    return scale * 0.5 * (a + a.T)


@pytest.fixture(scope="session")
def tiny_vm_dataset(elastic):
    """Small plate-with-hole round trip used by the discovery unit tests."""
    m = ymesh.plate_with_hole(n_side=4, n_radial=3)
    prog = ymesh.tension_compression_program(m, "top_y", 20, 40, 0.5, -0.5)
    traj = fem.forward_solve(m, elastic, vm_params(), prog, tol=1e-11)
    assert traj.bisections == 0
    return datagen.from_trajectory(
        m, traj, metadata={"benchmark": "VM", "tol": 1e-11})
