"""Plane-stress FEM on bilinear quadrilaterals with 2x2 Gauss quadrature.

Provides strain interpolation and internal-force assembly (shared by the
forward solver and the inverse cost function) and a displacement-controlled
nonlinear forward solver used to generate synthetic test data.

Strain triplets use the tensor shear component; the factor two needed in the
virtual-work contraction is folded into the weighted force maps (`Bw`).
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from dataclasses import dataclass

from . import _kernels
from .material import NonConvergenceError

_GP = np.array([-1.0, 1.0]) / np.sqrt(3.0)


class MeshQualityError(ValueError):
    """Raised when an element has a non-positive Jacobian."""


def shape_eval(corners, xi, eta):
    """Bilinear shape values and spatial gradients at one local point.

    Parameters
    ----------
    corners : (4, 2) array
        Element node coordinates, counter-clockwise.
    xi, eta : float
        Local coordinates in [-1, 1]^2.

    Returns
    -------
    N : (4,) array
    dN : (4, 2) array
        Gradients with respect to the spatial coordinates.
    """
    corners = np.asarray(corners, dtype=float)
    N = 0.25 * np.array([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                         (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])
    dN_loc = 0.25 * np.array([
        [-(1 - eta), -(1 - xi)],
        [(1 - eta), -(1 + xi)],
        [(1 + eta), (1 + xi)],
        [-(1 + eta), (1 - xi)],
    ])
    J = corners.T @ dN_loc                     # dX/dxi, (2, 2)
    detJ = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if detJ <= 0.0:
        raise MeshQualityError("non-positive Jacobian (detJ=%g)" % detJ)
    dN = dN_loc @ np.linalg.inv(J)
    return N, dN


@dataclass
class QpData:
    """Precomputed per-quadrature-point arrays for one mesh.

    B maps the element displacement vector to the tensor-strain triplet;
    Bw = weight * diag(1,1,2) @ B maps stresses to element nodal forces.
    """

    B: np.ndarray          # (nqp, 3, 8)
    Bw: np.ndarray         # (nqp, 3, 8)
    weights: np.ndarray    # (nqp,)
    edofs: np.ndarray      # (nqp, 8)
    n_dofs: int

    @property
    def n_qp(self):
        return self.B.shape[0]


def precompute_qp(mesh):
    """Quadrature tables for all elements (4 Gauss points each)."""
    n_e = mesh.elements.shape[0]
    B = np.zeros((4 * n_e, 3, 8))
    Bw = np.zeros_like(B)
    wts = np.zeros(4 * n_e)
    edofs = np.zeros((4 * n_e, 8), dtype=np.int64)
    q = 0
    for e in range(n_e):
        conn = mesh.elements[e]
        corners = mesh.nodes[conn]
        dofs = np.column_stack([2 * conn, 2 * conn + 1]).ravel()
        for eta in _GP:
            for xi in _GP:
                N, dN = shape_eval(corners, xi, eta)
                Jc = corners.T @ (0.25 * np.array([
                    [-(1 - eta), -(1 - xi)],
                    [(1 - eta), -(1 + xi)],
                    [(1 + eta), (1 + xi)],
                    [-(1 + eta), (1 - xi)]]))
                detJ = Jc[0, 0] * Jc[1, 1] - Jc[0, 1] * Jc[1, 0]
                for a in range(4):
                    B[q, 0, 2 * a] = dN[a, 0]
                    B[q, 1, 2 * a + 1] = dN[a, 1]
                    B[q, 2, 2 * a] = 0.5 * dN[a, 1]
                    B[q, 2, 2 * a + 1] = 0.5 * dN[a, 0]
                Bw[q] = detJ * np.diag([1.0, 1.0, 2.0]) @ B[q]
                wts[q] = detJ
                edofs[q] = dofs
                q += 1
    return QpData(B=B, Bw=Bw, weights=wts, edofs=edofs, n_dofs=mesh.n_dofs)


def strain_field(qp, u):
    """Quadrature-point strains (nqp, 3) from a flat displacement vector."""
    u = np.asarray(u, dtype=float).ravel()
    return np.einsum('qca,qa->qc', qp.B, u[qp.edofs])


def internal_forces(qp, stresses):
    """Assemble nodal internal forces from quadrature-point stresses."""
    F = np.zeros(qp.n_dofs)
    contrib = np.einsum('qca,qc->qa', qp.Bw, stresses)
    np.add.at(F, qp.edofs.ravel(), contrib.ravel())
    return F


@dataclass
class Trajectory:
    """Forward-solve output: nodal displacements and net reactions per step."""

    displacements: np.ndarray      # (n_t, n_n, 2), mm
    reactions: np.ndarray          # (n_t, n_beta), kN
    gamma_max: np.ndarray          # (n_t,), diagnostic
    newton_iters: np.ndarray = None   # (n_t,), diagnostic
    bisections: int = 0


def _tangent_matrix(qp, tangents, free_idx, red):
    """Free-free block of the global tangent, assembled sparse."""
    Kq = np.einsum('qad,qab,qbe->qde', qp.Bw, tangents, qp.B)
    rows = np.broadcast_to(qp.edofs[:, :, None], Kq.shape).ravel()
    cols = np.broadcast_to(qp.edofs[:, None, :], Kq.shape).ravel()
    rr = red[rows]
    cc = red[cols]
    keep = (rr >= 0) & (cc >= 0)
    n = free_idx.size
    return sp.coo_matrix((Kq.ravel()[keep], (rr[keep], cc[keep])),
                         shape=(n, n)).tocsc()


def forward_solve(mesh, elastic, params, program, tol=1e-9, max_iter=30,
                  max_bisect=8, tol_f=1e-10, tol_r=1e-10, rm_max_iter=50):
    """Displacement-controlled quasi-static solve over a load program.

    Per step, global equilibrium of the internal forces on the free DOFs is
    found by Newton iteration with the algorithmically consistent tangent;
    per-point history is committed only after the step converges.  If a step
    does not converge it is bisected (recursively, up to max_bisect levels).

    Returns a Trajectory.  Raises NonConvergenceError (annotated with the
    failing step) if bisection is exhausted.
    """
    qp = precompute_qp(mesh)
    ndof = mesh.n_dofs
    free = mesh.free_dofs
    red = -np.ones(ndof, dtype=np.int64)
    red[free] = np.arange(free.size)
    group_dofs = [mesh.constrained_groups[g] for g in program.group_names]
    beta_dofs = [mesh.constrained_groups[g] for g in mesh.reaction_groups]

    E = elastic.youngs_modulus
    nu = elastic.poisson_ratio
    theta = np.asarray(params.theta, dtype=float)
    hard = np.asarray(params.hardening, dtype=float)

    n_t = program.n_steps
    u = np.zeros(ndof)
    h = np.zeros((qp.n_qp, 7))
    dg_warm = np.full(qp.n_qp, -1.0)
    sig = np.empty((qp.n_qp, 3))
    h_new = np.empty((qp.n_qp, 7))
    tang = np.empty((qp.n_qp, 3, 3))

    out_u = np.zeros((n_t, mesh.n_nodes, 2))
    out_R = np.zeros((n_t, len(beta_dofs)))
    out_g = np.zeros(n_t)

    iters = [0]
    bisects = [0]

    def residual_at(uc):
        """(max |r_free|, F, ok) at fixed history; fills sig/h_new."""
        strains = strain_field(qp, uc)
        nfail = _kernels.update_step(strains, h, theta, hard, E, nu,
                                     tol_f, tol_r, rm_max_iter, False,
                                     dg_warm, sig, h_new, tang)
        if nfail:
            return np.inf, None
        F = internal_forces(qp, sig)
        return np.max(np.abs(F[free])), F

    def attempt(values, u_predict):
        """Newton solve (with backtracking) at fixed prescribed values.

        Returns (u, F) at equilibrium or None; on success h_new and sig hold
        the matching per-point update, ready to commit.
        """
        uc = u_predict.copy()
        for dofs, val in zip(group_dofs, values):
            uc[dofs] = val
        rnorm, F = residual_at(uc)
        if F is None:
            return None
        stalls = 0
        for _ in range(max_iter):
            iters[0] += 1
            f_char = max(np.max(np.abs(F)), 1e-12)
            if rnorm <= tol * f_char:
                return uc, F
            # tangents for the state behind rnorm (h_new/sig are in sync)
            strains = strain_field(qp, uc)
            nfail = _kernels.update_step(strains, h, theta, hard, E, nu,
                                         tol_f, tol_r, rm_max_iter, True,
                                         dg_warm, sig, h_new, tang)
            if nfail:
                return None
            K = _tangent_matrix(qp, tang, free, red)
            try:
                du = splu(K).solve(-F[free])
            except RuntimeError:
                return None
            # backtracking keeps the iterate out of wild plastic overshoots
            scale = 1.0
            for _bt in range(8):
                u_try = uc.copy()
                u_try[free] += scale * du
                rn_try, F_try = residual_at(u_try)
                if F_try is not None and rn_try < rnorm:
                    break
                scale *= 0.5
            else:
                stalls += 1
                if stalls >= 3 or F_try is None:
                    return None
                uc, rnorm, F = u_try, rn_try, F_try
                continue
            stalls = 0
            uc, rnorm, F = u_try, rn_try, F_try
        return None

    committed_vals = np.zeros(len(group_dofs))
    last_F = np.zeros(ndof)
    prev_inc = np.zeros(ndof)
    prev_vals_inc = np.zeros(len(group_dofs))

    def advance(target, depth, step):
        """Reach the target values from the committed state, bisecting on
        failure."""
        nonlocal u, committed_vals, last_F, prev_inc, prev_vals_inc
        # secant predictor: scale the previous converged displacement
        # increment by the ratio of prescribed-value increments, which keeps
        # the first Newton iterate near the solution instead of jamming the
        # whole boundary jump into the grip row
        d_new = target - committed_vals
        denom = float(prev_vals_inc @ prev_vals_inc)
        predict = u
        if denom > 0.0:
            ratio = float(d_new @ prev_vals_inc) / denom
            if np.isfinite(ratio) and abs(ratio) <= 4.0:
                predict = u + ratio * prev_inc
        result = attempt(target, predict)
        if result is None and predict is not u:
            result = attempt(target, u)
        if result is not None:
            u_new, F_new = result
            prev_inc = u_new - u
            prev_vals_inc = d_new
            u = u_new
            last_F = F_new
            inc = h_new[:, 3] - h[:, 3]
            dg_warm[:] = np.where(inc > 0.0, inc, -1.0)
            h[:] = h_new
            committed_vals = target.copy()
            return
        if depth >= max_bisect:
            raise NonConvergenceError("forward solve failed at step %d" % step)
        bisects[0] += 1
        mid = 0.5 * (committed_vals + target)
        advance(mid, depth + 1, step)
        advance(target, depth + 1, step)

    out_it = np.zeros(n_t, dtype=np.int64)
    for t in range(n_t):
        it0 = iters[0]
        advance(program.values[t].copy(), 0, t)
        out_it[t] = iters[0] - it0
        out_u[t] = u.reshape(-1, 2)
        out_R[t] = [np.sum(last_F[d]) for d in beta_dofs]
        out_g[t] = np.max(h[:, 3])
    return Trajectory(displacements=out_u, reactions=out_R, gamma_max=out_g,
                      newton_iters=out_it, bisections=bisects[0])
