"""Catalogue of the eight reference material models used for benchmarking.

Four models live natively in the Fourier library (VM, F1, F2, NC); the other
four are smooth Fourier approximations (TR*, SI*, IV*, MA*) of classical
non-smooth criteria, each truncated to eleven active modes.  The approximated
coefficient vectors are stored verbatim from the published tables; the
original max-form criteria are also provided as closed-form radius functions
so the approximations can be re-derived and checked.

Note: the published SI* theta_0 and MA* theta_0/theta_1 entries are
inconsistent with exact projections of the printed max-form definitions (the
SI radius is the TR radius rotated by pi/3 and the MA radius is the IV radius
rotated by pi, so their coefficient magnitudes must coincide); see the tests
for the worked identity.
"""

import numpy as np
from dataclasses import dataclass

from .material import MaterialParams, check_convex

_YIELD = 0.24   # kN/mm^2, common calibration stress of all eight models


def _interleave(coeffs, step):
    """Place coeffs at Fourier indices 0, step, 2*step, ..."""
    theta = np.zeros((len(coeffs) - 1) * step + 1)
    theta[::step] = coeffs
    return theta


_CATALOG = {
    # name: (theta entries, hardening, nonsmooth key)
    "VM": (np.array([0.2400]),
           np.array([40.0, 2.0, 900.0, 150.0, 600.0]), None),
    "F2": (_interleave([0.2350, 0.0050], 2),
           np.array([120.0, 0.0, 0.0, 300.0, 1000.0]), None),
    "TR": (_interleave([0.2181, 0.0127, 0.0035, 0.0016, 0.0009, 0.0006,
                        0.0004, 0.0003, 0.0002, 0.0002, 0.0001], 2),
           np.array([0.0, 1.0, 500.0, 50.0, 500.0]), "TR"),
    "SI": (_interleave([0.2193, -0.0128, 0.0035, -0.0016, 0.0009, -0.0006,
                        0.0004, -0.0003, 0.0002, -0.0002, 0.0001], 2),
           np.array([30.0, 0.5, 650.0, 150.0, 900.0]), "SI"),
    "F1": (np.array([0.2200, 0.0200]),
           np.array([50.0, 0.5, 750.0, 200.0, 900.0]), None),
    "IV": (np.array([0.1509, 0.0415, 0.0157, 0.0081, 0.0049, 0.0032,
                     0.0023, 0.0017, 0.0013, 0.0011, 0.0009]),
           np.array([75.0, 1.5, 1300.0, 250.0, 800.0]), "IV"),
    "MA": (np.array([0.1563, -0.0430, 0.0163, -0.0084, 0.0051, -0.0034,
                     0.0024, -0.0018, 0.0014, -0.0011, 0.0009]),
           np.array([40.0, 1.5, 800.0, 200.0, 850.0]), "MA"),
    "NC": (np.array([0.1700, 0.0700]),
           np.array([60.0, 2.0, 500.0, 175.0, 700.0]), None),
}

BENCHMARK_NAMES = tuple(_CATALOG.keys())


@dataclass
class BenchmarkModel:
    name: str
    params: MaterialParams
    convex: bool
    nonsmooth: str = None     # key for the original max-form criterion

    @property
    def theta(self):
        return self.params.theta

    @property
    def hardening(self):
        return self.params.hardening


def get_benchmark(name, n_features=None):
    """Reference model by name; raises with the valid names otherwise.

    n_features pads (or checks) the coefficient vector length, e.g. to embed
    VM's single coefficient in a 7-feature library.
    """
    key = name.upper().rstrip("*")
    if key not in _CATALOG:
        raise KeyError("unknown benchmark %r; valid names: %s"
                       % (name, ", ".join(BENCHMARK_NAMES)))
    theta, hard, ns = _CATALOG[key]
    theta = theta.copy()
    if n_features is not None:
        if n_features < theta.size:
            raise ValueError("benchmark %s needs at least %d features"
                             % (key, theta.size))
        theta = np.concatenate([theta, np.zeros(n_features - theta.size)])
    params = MaterialParams(theta, hard.copy())
    return BenchmarkModel(name=key, params=params,
                          convex=check_convex(theta), nonsmooth=ns)


def principal_directions(alpha):
    """Unit-radius deviatoric principal triple at pi-plane angle alpha."""
    alpha = np.asarray(alpha, dtype=float)
    c, s = np.cos(alpha), np.sin(alpha)
    s1 = np.sqrt(2.0 / 3.0) * c
    s2 = -c / np.sqrt(6.0) + s / np.sqrt(2.0)
    s3 = -c / np.sqrt(6.0) - s / np.sqrt(2.0)
    return s1, s2, s3


def nonsmooth_radius(name, alpha):
    """Pi-plane yield radius of an original non-smooth criterion.

    The four criteria are positively homogeneous max-forms, so the radius at
    angle alpha is yield_constant / criterion(unit deviatoric triple).
    """
    key = name.upper().rstrip("*")
    s1, s2, s3 = principal_directions(alpha)
    if key == "TR":
        m = np.maximum(np.maximum(np.abs(s1 - s2), np.abs(s2 - s3)),
                       np.abs(s3 - s1))
        c = _YIELD
    elif key == "SI":
        m = np.maximum(np.maximum(np.abs(s1 - 0.5 * (s2 + s3)),
                                  np.abs(s2 - 0.5 * (s3 + s1))),
                       np.abs(s3 - 0.5 * (s1 + s2)))
        c = np.cos(np.pi / 6.0) * _YIELD
    elif key == "IV":
        m = np.maximum(np.maximum((s2 + s3) - 2.0 * s1, (s3 + s1) - 2.0 * s2),
                       (s1 + s2) - 2.0 * s3)
        c = _YIELD
    elif key == "MA":
        m = np.maximum(np.maximum(s1 - 0.5 * (s2 + s3), s2 - 0.5 * (s3 + s1)),
                       s3 - 0.5 * (s1 + s2))
        c = np.cos(np.pi / 3.0) * _YIELD
    else:
        raise KeyError("no non-smooth criterion named %r (use TR, SI, IV, MA)"
                       % name)
    return c / m
