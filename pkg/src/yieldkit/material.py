"""Constitutive engine: Fourier-parameterized yield surfaces with mixed hardening.

The yield function is built from the polar (Lode) coordinates of the relative
stress deviator,

    f(r, alpha, gamma) = sqrt(3/2)*r - H_iso(gamma) * sum_i theta_i*cos(3*i*alpha),

with Voce isotropic hardening H_iso and Armstrong-Frederick back-stress
evolution.  Restricting the cosine expansion to multiples of 3*alpha (and no
sine terms) makes the surface invariant under permutations of the principal
stresses, i.e. isotropic; even-numbered modes additionally give
tension-compression symmetry.

All stress-like quantities are in kN/mm^2, strains are dimensionless.
In-plane symmetric tensors are stored as triplets (t11, t22, t12) with the
*tensor* shear component (not the engineering one).

The public functions here are the plain-NumPy reference implementation.  The
forward solver and the inverse-cost evaluation run the numerically identical
but compiled update in :mod:`yieldkit._kernels`; `return_map` and
`consistent_tangent` delegate to it so every caller shares one stress-update
code path.
"""

import numpy as np
from dataclasses import dataclass, field

from . import _kernels

SQ32 = np.sqrt(1.5)
SQ23 = np.sqrt(2.0 / 3.0)


class NonConvergenceError(RuntimeError):
    """Raised when a Newton loop (stress update or tangent) fails to converge."""


@dataclass
class ElasticLaw:
    """Isotropic plane-stress elasticity.

    Attributes
    ----------
    youngs_modulus : float
        E in kN/mm^2, must be positive.
    poisson_ratio : float
        nu, in (-1, 0.5).
    """

    youngs_modulus: float
    poisson_ratio: float

    def __post_init__(self):
        if self.youngs_modulus <= 0.0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")

    @property
    def stiffness(self):
        """Plane-stress stiffness (3x3) acting on (e11, e22, e12) tensor strain."""
        E, nu = self.youngs_modulus, self.poisson_ratio
        return E / (1.0 - nu**2) * np.array(
            [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 1.0 - nu]])

    @property
    def compliance(self):
        E, nu = self.youngs_modulus, self.poisson_ratio
        return np.array(
            [[1.0, -nu, 0.0], [-nu, 1.0, 0.0], [0.0, 0.0, 1.0 + nu]]) / E


@dataclass
class MaterialParams:
    """Yield-surface coefficients plus hardening parameters.

    theta[0] scales the mean yield radius; theta[i] weighs the cos(3*i*alpha)
    mode.  hardening = (H_iso1, H_iso2, H_iso3, H_kin1, H_kin2), all >= 0.
    """

    theta: np.ndarray
    hardening: np.ndarray

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        self.hardening = np.asarray(self.hardening, dtype=float)
        if self.hardening.shape != (5,):
            raise ValueError("hardening must have 5 entries")
        if np.any(self.hardening < 0.0):
            raise ValueError("hardening entries must be non-negative")


@dataclass
class HistoryState:
    """Per-material-point internal variables.

    plastic_strain and back_stress are in-plane triplets; their out-of-plane
    components follow from plastic incompressibility (the flow direction is
    trace free, so the back stress stays trace free as well).
    """

    plastic_strain: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gamma: float = 0.0
    back_stress: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def plastic_strain_33(self):
        return -(self.plastic_strain[0] + self.plastic_strain[1])

    @property
    def back_stress_33(self):
        return -(self.back_stress[0] + self.back_stress[1])

    def as_vector(self):
        """Pack into the 7-slot layout used by the compiled kernels."""
        return np.concatenate(
            [self.plastic_strain, [self.gamma], self.back_stress])

    @classmethod
    def from_vector(cls, h):
        return cls(plastic_strain=np.array(h[:3]), gamma=float(h[3]),
                   back_stress=np.array(h[4:7]))


@dataclass
class StressState:
    """In-plane Cauchy stress triplet (s11, s22, s12); s33 = 0 (plane stress)."""

    stress: np.ndarray

    def full(self):
        s = self.stress
        return np.array([[s[0], s[2], 0.0], [s[2], s[1], 0.0], [0.0, 0.0, 0.0]])


@dataclass
class LodeCoords:
    """Polar coordinates of the relative stress deviator in the pi-plane."""

    r: float
    alpha: float
    principal: np.ndarray
    pi1: float
    pi2: float


def relative_stress(stress, history):
    """Full 3x3 relative stress for an in-plane state with back stress.

    The in-plane block is stress - back_stress; the 33 entry is
    -back_stress_33 = b11 + b22 because sigma_33 vanishes under plane stress
    while the back stress keeps a deviatoric 33 component.
    """
    s = np.asarray(stress, dtype=float)
    b = history.back_stress
    return np.array([
        [s[0] - b[0], s[2] - b[2], 0.0],
        [s[2] - b[2], s[1] - b[1], 0.0],
        [0.0, 0.0, b[0] + b[1]],
    ])


def lode_invariants(rel):
    """Lode coordinates and principal directions of a symmetric 3x3 tensor.

    Parameters
    ----------
    rel : (3, 3) array
        Relative stress tensor (symmetric).

    Returns
    -------
    lode : LodeCoords
        With eigenvalues sorted ascending.  For a hydrostatic input r = 0 and
        alpha = 0 by convention.
    vecs : (3, 3) array
        Eigenvectors as columns, matching the sorted eigenvalues.  Signs are
        fixed so the largest-magnitude component of each vector is positive,
        which makes the eigenvector derivatives reproducible.
    """
    rel = np.asarray(rel, dtype=float)
    w, V = np.linalg.eigh(rel)
    for k in range(3):
        j = int(np.argmax(np.abs(V[:, k])))
        if V[j, k] < 0.0:
            V[:, k] = -V[:, k]
    pi1 = SQ23 * w[0] - w[1] / np.sqrt(6.0) - w[2] / np.sqrt(6.0)
    pi2 = (w[1] - w[2]) / np.sqrt(2.0)
    r = float(np.hypot(pi1, pi2))
    alpha = float(np.arctan2(pi2, pi1)) if r > 0.0 else 0.0
    return LodeCoords(r=r, alpha=alpha, principal=w, pi1=float(pi1),
                      pi2=float(pi2)), V


def iso_hardening(hardening, gamma):
    """Voce isotropic hardening multiplier and its derivative.

    H_iso(gamma) = 1 + H1*gamma + H2*(1 - exp(-H3*gamma)); H_iso(0) = 1.
    """
    H1, H2, H3 = hardening[0], hardening[1], hardening[2]
    value = 1.0 + H1 * gamma + H2 * (1.0 - np.exp(-H3 * gamma))
    deriv = H1 + H2 * H3 * np.exp(-H3 * gamma)
    return float(value), float(deriv)


def directional_term(theta, alpha, order=0):
    """sum_i theta_i cos(3 i alpha) or its first/second alpha-derivative."""
    theta = np.asarray(theta, dtype=float)
    i = np.arange(theta.size)
    a = np.asarray(alpha, dtype=float)
    phase = 3.0 * np.multiply.outer(a, i)
    if order == 0:
        out = np.cos(phase) @ theta
    elif order == 1:
        out = -np.sin(phase) @ (3.0 * i * theta)
    elif order == 2:
        out = -np.cos(phase) @ (9.0 * i * i * theta)
    else:
        raise ValueError("order must be 0, 1 or 2")
    return float(out) if np.isscalar(alpha) else out


def yield_value(params, lode, gamma):
    """Yield function f = sqrt(3/2)*r - H_iso(gamma)*f_dir(alpha); f<0 elastic."""
    h, _ = iso_hardening(params.hardening, gamma)
    return SQ32 * lode.r - h * directional_term(params.theta, lode.alpha)


def yield_radius(theta, alpha, gamma=0.0, hardening=None):
    """Distance of the f=0 level set from the pi-plane origin at angle alpha."""
    h = 1.0
    if hardening is not None:
        h, _ = iso_hardening(hardening, gamma)
    return SQ23 * h * directional_term(theta, alpha)


# symmetrized fourth-order deviatoric projector, I_sym - 1/3 I x I
_IDEV = np.zeros((3, 3, 3, 3))
for _i in range(3):
    for _j in range(3):
        for _k in range(3):
            for _l in range(3):
                _IDEV[_i, _j, _k, _l] = (
                    0.5 * ((_i == _k) * (_j == _l) + (_i == _l) * (_j == _k))
                    - (_i == _j) * (_k == _l) / 3.0)


@dataclass
class YieldDerivatives:
    """Bundle of yield-function derivatives at one state.

    All tensors refer to the full 3x3 representation of the relative stress.
    d_back = -d_stress and d2_stress_back = -d2_stress because f depends on
    stress and back stress only through their difference.
    """

    f: float
    d_stress: np.ndarray
    d2_stress: np.ndarray
    d_gamma: float
    d2_stress_gamma: np.ndarray

    @property
    def d_back(self):
        return -self.d_stress

    @property
    def d2_stress_back(self):
        return -self.d2_stress


def yield_derivatives(params, rel, gamma, r_tol=1e-12, eig_tol=1e-10):
    """First and second derivatives of the yield function.

    Parameters
    ----------
    params : MaterialParams
    rel : (3, 3) array
        Relative stress (stress minus back stress, full tensor).
    gamma : float
        Accumulated plastic multiplier.
    r_tol : float
        Below this Lode radius the alpha-dependent terms are suppressed, since
        the angle (and its gradients) degenerate on the hydrostatic axis.
    eig_tol : float
        Eigenvalue pairs closer than this are treated as repeated and their
        eigenvector-derivative summands are dropped.

    Returns
    -------
    YieldDerivatives
    """
    rel = np.asarray(rel, dtype=float)
    lode, V = lode_invariants(rel)
    r, alpha, w = lode.r, lode.alpha, lode.principal
    hval, hder = iso_hardening(params.hardening, gamma)
    fd0 = directional_term(params.theta, alpha, 0)
    fd1 = directional_term(params.theta, alpha, 1)
    fd2 = directional_term(params.theta, alpha, 2)
    f = SQ32 * r - hval * fd0

    if r <= r_tol:
        zero2 = np.zeros((3, 3))
        return YieldDerivatives(f=f, d_stress=zero2,
                                d2_stress=np.zeros((3, 3, 3, 3)),
                                d_gamma=-hder * fd0, d2_stress_gamma=zero2)

    dev = rel - np.trace(rel) / 3.0 * np.eye(3)
    d_fr = SQ32 * dev / r
    d2_fr = SQ32 * (_IDEV / r - np.einsum('ij,kl->ijkl', dev, dev) / r**3)

    # alpha-derivatives with respect to the sorted principal values
    s = 1.0 / ((w[0] - w[1])**2 + (w[1] - w[2])**2 + (w[2] - w[0])**2)
    da = np.sqrt(3.0) * s * np.array([w[2] - w[1], w[0] - w[2], w[1] - w[0]])
    d2a = np.zeros((3, 3))
    d2a[0, 0] = 2.0 * (-2.0 * w[0] + w[1] + w[2]) * s * da[0]
    d2a[1, 2] = d2a[2, 1] = d2a[0, 0]
    d2a[1, 1] = 2.0 * (w[0] - 2.0 * w[1] + w[2]) * s * da[1]
    d2a[0, 2] = d2a[2, 0] = d2a[1, 1]
    d2a[2, 2] = 2.0 * (w[0] + w[1] - 2.0 * w[2]) * s * da[2]
    d2a[0, 1] = d2a[1, 0] = d2a[2, 2]

    # dyads v_h x v_h give the principal-value gradients
    P = np.einsum('ih,jh->hij', V, V)

    # eigenvector derivatives; summands with repeated eigenvalues dropped
    d2sig = np.zeros((3, 3, 3, 3, 3))
    for h in range(3):
        dv = np.zeros((3, 3, 3))  # dv^(h)_j / drel_lm
        for xi in range(3):
            if xi == h or abs(w[h] - w[xi]) <= eig_tol:
                continue
            vh, vx = V[:, h], V[:, xi]
            pair = np.outer(vx, vh) + np.outer(vh, vx)
            dv += np.einsum('lm,j->jlm', pair, vx) / (2.0 * (w[h] - w[xi]))
        d2sig[h] = (np.einsum('j,klm->jklm', V[:, h], dv)
                    + np.einsum('jlm,k->jklm', dv, V[:, h]))

    dadrel = np.einsum('h,hij->ij', da, P)
    d_stress = d_fr - hval * fd1 * dadrel
    d2_stress = d2_fr - hval * (
        fd2 * np.einsum('ij,kl->ijkl', dadrel, dadrel)
        + fd1 * np.einsum('hg,hij,gkl->ijkl', d2a, P, P)
        + fd1 * np.einsum('h,hijkl->ijkl', da, d2sig))
    return YieldDerivatives(f=f, d_stress=d_stress, d2_stress=d2_stress,
                            d_gamma=-hder * fd0,
                            d2_stress_gamma=-hder * fd1 * dadrel)


def return_map(elastic, strain, history, params, tol_f=1e-10, tol_r=1e-10,
               max_iter=50):
    """Elastic-predictor / plastic-corrector stress update for one point.

    Parameters
    ----------
    elastic : ElasticLaw
    strain : (3,) array
        Total in-plane strain (e11, e22, e12), tensor shear.
    history : HistoryState
        State at the previous time step.
    params : MaterialParams

    Returns
    -------
    (StressState, HistoryState)
        The updated state satisfies the discrete Kuhn-Tucker conditions:
        f <= tol_f, dgamma >= 0, and f*dgamma = 0 up to tolerance.

    Raises
    ------
    NonConvergenceError
        If the plastic corrector does not converge within max_iter Newton
        iterations.
    """
    strain = np.asarray(strain, dtype=float)
    sig, h_new, _, ok = _kernels.return_map_py(
        strain, history.as_vector(), params.theta, params.hardening,
        elastic.youngs_modulus, elastic.poisson_ratio, tol_f, tol_r, max_iter)
    if not ok:
        raise NonConvergenceError(
            "return mapping failed to converge within %d iterations" % max_iter)
    return StressState(stress=sig), HistoryState.from_vector(h_new)


def consistent_tangent(elastic, strain, history, params, tol_f=1e-10,
                       tol_r=1e-10, max_iter=50):
    """Algorithmically consistent tangent d sigma / d strain (3x3).

    Runs the same stress update as `return_map` and differentiates the
    converged discrete system implicitly.  For an elastic step the tangent is
    exactly the plane-stress stiffness.  The result maps tensor-strain
    increments (de11, de22, de12) to stress increments.
    """
    strain = np.asarray(strain, dtype=float)
    sig, h_new, tang, ok = _kernels.return_map_tangent_py(
        strain, history.as_vector(), params.theta, params.hardening,
        elastic.youngs_modulus, elastic.poisson_ratio, tol_f, tol_r, max_iter)
    if not ok:
        raise NonConvergenceError("return mapping (for tangent) did not converge")
    return tang


def check_admissible(theta):
    """Admissibility theta_0 > sum_{i>=1} |theta_i| (strict).

    Guarantees f < 0 at zero stress with virgin history, i.e. an elastic
    origin.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return bool(theta[0] > np.sum(np.abs(theta[1:])))


def check_convex(theta, n_samples=3600):
    """Convexity of the initial yield surface, tested on a dense angle grid.

    A polar curve rbar(alpha) is convex iff rbar^2 + 2 rbar'^2 - rbar rbar''
    is non-negative everywhere; rbar' and rbar'' are evaluated analytically.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    alpha = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
    rb = SQ23 * directional_term(theta, alpha, 0)
    rb1 = SQ23 * directional_term(theta, alpha, 1)
    rb2 = SQ23 * directional_term(theta, alpha, 2)
    return bool(np.all(rb * rb + 2.0 * rb1 * rb1 - rb * rb2 >= -1e-14))


def fourier_project(radius_fn, n_terms, n_samples=100001):
    """Cosine-Fourier coefficients of a yield-radius function.

    Parameters
    ----------
    radius_fn : callable
        alpha -> rbar(alpha), 2*pi/3-periodic (isotropy); may be vectorized.
    n_terms : int
        Number of coefficients returned (constant term plus n_terms-1 modes).
    n_samples : int
        Trapezoid-rule resolution over one full revolution.

    Returns
    -------
    (n_terms,) array
        theta such that sqrt(3/2)*rbar(alpha) ~= sum theta_i cos(3 i alpha).
    """
    alpha = np.linspace(0.0, 2.0 * np.pi, n_samples)
    try:
        g = np.asarray(radius_fn(alpha), dtype=float)
        if g.shape != alpha.shape:
            raise TypeError
    except Exception:
        g = np.array([radius_fn(a) for a in alpha], dtype=float)
    g = SQ32 * g
    theta = np.empty(n_terms)
    for i in range(n_terms):
        proj = np.trapezoid(g * np.cos(3.0 * i * alpha), alpha) / np.pi
        theta[i] = 0.5 * proj if i == 0 else proj
    return theta
