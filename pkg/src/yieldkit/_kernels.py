"""Compiled (numba) stress-update kernels shared by the FEM solver and the
inverse cost function.

The per-point state uses a flat layout

    h = [ep11, ep22, ep12, gamma, b11, b22, b12]

with tensor (not engineering) shear components.  Under plane stress the
relative stress is block diagonal,

    [[s11-b11, s12-b12, 0      ]
     [s12-b12, s22-b22, 0      ]
     [0,       0,       b11+b22]]

because sigma_33 = 0 while the (deviatoric) back stress keeps a 33 component.
All eigen-algebra therefore reduces to a closed-form 2x2 problem plus the
decoupled out-of-plane value, which is what makes this path fast.

Symmetric work tensors are carried as 4-vectors over the slots
(11, 22, 12, 33); contracting two of them uses the weights (1, 1, 2, 1).
The plastic corrector solves a 7x7 Newton system in the unknowns
(s11, s22, s12, b11, b22, b12, dgamma); the consistent tangent is obtained by
implicit differentiation of the same converged system, so it is exact for the
discrete update (and is verified against finite differences in the tests).

Scratch buffers are allocated once per batch call and threaded through, so
the per-point hot path is allocation free.
"""

import numpy as np
from numba import njit

# contraction weights for the (11, 22, 12, 33) slot layout
_C4 = np.array([1.0, 1.0, 2.0, 1.0])

# symmetrized deviatoric projector restricted to the slot layout
_IDEV4 = np.array([
    [2.0 / 3.0, -1.0 / 3.0, 0.0, -1.0 / 3.0],
    [-1.0 / 3.0, 2.0 / 3.0, 0.0, -1.0 / 3.0],
    [0.0, 0.0, 0.5, 0.0],
    [-1.0 / 3.0, -1.0 / 3.0, 0.0, 2.0 / 3.0],
])

# d(rho slots)/d(unknown k) for k in (s11, s22, s12, b11, b22, b12)
_WMAP = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [-1.0, 0.0, 0.0, 1.0],
    [0.0, -1.0, 0.0, 1.0],
    [0.0, 0.0, -1.0, 0.0],
])

SQ32 = np.sqrt(1.5)
SQ23 = np.sqrt(2.0 / 3.0)
SQ16 = np.sqrt(1.0 / 6.0)
SQ12 = np.sqrt(0.5)


@njit(cache=True)
def _new_ws():
    """Workspace tuple reused across points of one batch call."""
    return (np.empty(4),                 # 0: D4  df/drho
            np.empty((4, 4)),            # 1: K4  d2f/drho2
            np.empty(4),                 # 2: M4  d2f/drho dgamma
            np.empty(4),                 # 3: rho
            np.empty(7),                 # 4: x   Newton unknowns
            np.empty(7),                 # 5: R   residual
            np.empty((7, 7)),            # 6: J   Jacobian
            np.empty(48),                # 7: scr flat scratch for _bundle
            np.empty(3, dtype=np.int64),  # 8: vid eigen slot ids
            np.empty(7, dtype=np.int64))  # 9: perm LU pivots


@njit(cache=True)
def _voce(hard, g):
    """Isotropic hardening multiplier and derivative."""
    e = np.exp(-hard[2] * g)
    return 1.0 + hard[0] * g + hard[1] * (1.0 - e), hard[0] + hard[1] * hard[2] * e


@njit(cache=True)
def _dir_margin(theta):
    """Lower bound of the directional term over all angles (admissibility
    margin); positive for admissible coefficient vectors."""
    acc = theta[0]
    for i in range(1, theta.shape[0]):
        acc -= abs(theta[i])
    return acc


@njit(cache=True, fastmath=True)
def _bundle(rho, theta, hard, g, r_tol, eig_tol, order, D4, K4, M4, scr, vid):
    """Yield value and derivatives at a block-diagonal relative stress.

    order 0: only f and df/dgamma; order 1: adds D4, M4; order 2: adds K4.
    Returns (f, dfdg).
    """
    hval, hder = _voce(hard, g)

    # principal values: closed-form 2x2 block plus the decoupled 33 entry
    m = 0.5 * (rho[0] + rho[1])
    dd = 0.5 * (rho[0] - rho[1])
    R = np.sqrt(dd * dd + rho[2] * rho[2])
    la = m - R
    lb = m + R
    lc = rho[3]
    if R > 1e-300:
        if dd >= 0.0:
            vx, vy = R + dd, rho[2]
        else:
            vx, vy = rho[2], R - dd
        nv = np.sqrt(vx * vx + vy * vy)
        cb, sb = vx / nv, vy / nv      # eigenvector of lb
    else:
        cb, sb = 1.0, 0.0

    # sort ascending; vector ids: 0 -> (-sb, cb), 1 -> (cb, sb), 2 -> e3
    w = scr[0:3]
    w[0], w[1], w[2] = la, lb, lc
    vid[0], vid[1], vid[2] = 0, 1, 2
    for i in range(2):
        for j in range(2 - i):
            if w[j] > w[j + 1]:
                w[j], w[j + 1] = w[j + 1], w[j]
                vid[j], vid[j + 1] = vid[j + 1], vid[j]

    p1 = SQ23 * w[0] - SQ16 * w[1] - SQ16 * w[2]
    p2 = SQ12 * (w[1] - w[2])
    r = np.sqrt(p1 * p1 + p2 * p2)
    alpha = np.arctan2(p2, p1) if r > 0.0 else 0.0

    nf = theta.shape[0]
    fa0 = 0.0
    fa1 = 0.0
    fa2 = 0.0
    c1 = np.cos(3.0 * alpha)
    s1 = np.sin(3.0 * alpha)
    ck, sk = 1.0, 0.0              # cos/sin of 3*i*alpha via recurrence
    for i in range(nf):
        fa0 += theta[i] * ck
        fa1 -= 3.0 * i * theta[i] * sk
        fa2 -= 9.0 * i * i * theta[i] * ck
        ck, sk = ck * c1 - sk * s1, sk * c1 + ck * s1

    f = SQ32 * r - hval * fa0
    dfdg = -hder * fa0
    if order == 0:
        return f, dfdg

    for a in range(4):
        D4[a] = 0.0
        M4[a] = 0.0
    if order >= 2:
        for a in range(4):
            for b in range(4):
                K4[a, b] = 0.0
    if r <= r_tol:
        return f, dfdg

    # deviator and the isotropic part sqrt(3/2)*r
    p = (rho[0] + rho[1] + rho[3]) / 3.0
    dev = scr[3:7]
    dev[0] = rho[0] - p
    dev[1] = rho[1] - p
    dev[2] = rho[2]
    dev[3] = rho[3] - p

    # alpha-gradients with respect to the sorted principal values
    s = 1.0 / ((w[0] - w[1]) ** 2 + (w[1] - w[2]) ** 2 + (w[2] - w[0]) ** 2)
    da = scr[7:10]
    da[0] = np.sqrt(3.0) * (w[2] - w[1]) * s
    da[1] = np.sqrt(3.0) * (w[0] - w[2]) * s
    da[2] = np.sqrt(3.0) * (w[1] - w[0]) * s

    # dyads v_h x v_h in slot form
    P = scr[10:22].reshape(3, 4)
    for h in range(3):
        k = vid[h]
        if k == 2:
            P[h, 0] = 0.0
            P[h, 1] = 0.0
            P[h, 2] = 0.0
            P[h, 3] = 1.0
        else:
            if k == 0:
                c, sv = -sb, cb
            else:
                c, sv = cb, sb
            P[h, 0] = c * c
            P[h, 1] = sv * sv
            P[h, 2] = c * sv
            P[h, 3] = 0.0

    dal = scr[22:26]
    for a in range(4):
        dal[a] = da[0] * P[0, a] + da[1] * P[1, a] + da[2] * P[2, a]

    for a in range(4):
        D4[a] = SQ32 * dev[a] / r - hval * fa1 * dal[a]
        M4[a] = -hder * fa1 * dal[a]
    if order < 2:
        return f, dfdg

    d2a = scr[26:35].reshape(3, 3)
    d2a[0, 0] = 2.0 * (-2.0 * w[0] + w[1] + w[2]) * s * da[0]
    d2a[1, 2] = d2a[0, 0]
    d2a[2, 1] = d2a[0, 0]
    d2a[1, 1] = 2.0 * (w[0] - 2.0 * w[1] + w[2]) * s * da[1]
    d2a[0, 2] = d2a[1, 1]
    d2a[2, 0] = d2a[1, 1]
    d2a[2, 2] = 2.0 * (w[0] + w[1] - 2.0 * w[2]) * s * da[2]
    d2a[0, 1] = d2a[2, 2]
    d2a[1, 0] = d2a[2, 2]

    # eigenvector-derivative contribution: only the in-plane pair couples
    # within the slot space; repeated pairs are dropped
    ipa = 0
    ipb = 0
    for h in range(3):
        if vid[h] == 0:
            ipa = h
        elif vid[h] == 1:
            ipb = h
    mix = scr[35:39]
    if abs(lb - la) > eig_tol:
        ca, sa = -sb, cb
        mix[0] = ca * cb
        mix[1] = sa * sb
        mix[2] = 0.5 * (ca * sb + sa * cb)
        mix[3] = 0.0
        coef = 2.0 * (da[ipa] - da[ipb]) / (w[ipa] - w[ipb])
    else:
        mix[0] = mix[1] = mix[2] = mix[3] = 0.0
        coef = 0.0

    r3 = r * r * r
    for a in range(4):
        for b in range(4):
            t = SQ32 * (_IDEV4[a, b] / r - dev[a] * dev[b] / r3)
            t -= hval * fa2 * dal[a] * dal[b]
            acc = 0.0
            for h in range(3):
                for gdx in range(3):
                    acc += d2a[h, gdx] * P[h, a] * P[gdx, b]
            t -= hval * fa1 * acc
            t -= hval * fa1 * coef * mix[a] * mix[b]
            K4[a, b] = t
    return f, dfdg


@njit(cache=True)
def _factor(A, perm, n):
    """In-place LU with partial pivoting (full row swaps, PA = LU)."""
    for k in range(n):
        piv = k
        amax = abs(A[k, k])
        for i in range(k + 1, n):
            if abs(A[i, k]) > amax:
                amax = abs(A[i, k])
                piv = i
        if amax < 1e-300:
            return False
        perm[k] = piv
        if piv != k:
            for j in range(n):
                A[k, j], A[piv, j] = A[piv, j], A[k, j]
        for i in range(k + 1, n):
            A[i, k] /= A[k, k]
            for j in range(k + 1, n):
                A[i, j] -= A[i, k] * A[k, j]
    return True


@njit(cache=True)
def _factored_solve(A, perm, b, n):
    # rows were swapped in full during factorization, so permute b first
    for k in range(n):
        if perm[k] != k:
            b[k], b[perm[k]] = b[perm[k]], b[k]
    for k in range(n):
        for i in range(k + 1, n):
            b[i] -= A[i, k] * b[k]
    for i in range(n - 1, -1, -1):
        acc = b[i]
        for j in range(i + 1, n):
            acc -= A[i, j] * b[j]
        b[i] = acc / A[i, i]


@njit(cache=True)
def _assemble_system(x, eps, ep_prev, b_prev, g_prev, theta, hard, E, nu,
                     r_tol, eig_tol, ws):
    """Residual and Jacobian of the discrete corrector equations at x."""
    D4, K4, M4, rho, _, R, J, scr, vid, _ = ws
    Hk1, Hk2 = hard[3], hard[4]
    dg = x[6]
    gn = g_prev + dg
    rho[0] = x[0] - x[3]
    rho[1] = x[1] - x[4]
    rho[2] = x[2] - x[5]
    rho[3] = x[3] + x[4]
    f, dfdg = _bundle(rho, theta, hard, gn, r_tol, eig_tol, 2,
                      D4, K4, M4, scr, vid)

    n0, n1, n2 = D4[0], D4[1], D4[2]
    # compliance residual: S sigma + ep_prev + dg*n - eps
    R[0] = (x[0] - nu * x[1]) / E + ep_prev[0] + dg * n0 - eps[0]
    R[1] = (-nu * x[0] + x[1]) / E + ep_prev[1] + dg * n1 - eps[1]
    R[2] = (1.0 + nu) / E * x[2] + ep_prev[2] + dg * n2 - eps[2]
    fac = 1.0 + Hk2 * dg
    R[3] = fac * x[3] - b_prev[0] - Hk1 * dg * n0
    R[4] = fac * x[4] - b_prev[1] - Hk1 * dg * n1
    R[5] = fac * x[5] - b_prev[2] - Hk1 * dg * n2
    R[6] = f

    # dn_m/du_k and df/du_k via the slot map
    for k in range(6):
        dfk = 0.0
        for a in range(4):
            dfk += _C4[a] * D4[a] * _WMAP[k, a]
        J[6, k] = dfk
        for mrow in range(3):
            dnk = 0.0
            for b in range(4):
                dnk += _C4[b] * K4[mrow, b] * _WMAP[k, b]
            J[mrow, k] = dg * dnk
            J[3 + mrow, k] = -Hk1 * dg * dnk
    J[6, 6] = dfdg
    # compliance block
    J[0, 0] += 1.0 / E
    J[0, 1] += -nu / E
    J[1, 0] += -nu / E
    J[1, 1] += 1.0 / E
    J[2, 2] += (1.0 + nu) / E
    # back-stress own block
    J[3, 3] += fac
    J[4, 4] += fac
    J[5, 5] += fac
    # dgamma column
    J[0, 6] = n0 + dg * M4[0]
    J[1, 6] = n1 + dg * M4[1]
    J[2, 6] = n2 + dg * M4[2]
    J[3, 6] = Hk2 * x[3] - Hk1 * n0 - Hk1 * dg * M4[0]
    J[4, 6] = Hk2 * x[4] - Hk1 * n1 - Hk1 * dg * M4[1]
    J[5, 6] = Hk2 * x[5] - Hk1 * n2 - Hk1 * dg * M4[2]
    return f


@njit(cache=True)
def _return_map_core(eps, h, theta, hard, E, nu, tol_f, tol_r, max_iter,
                     r_tol, eig_tol, margin, dg_warm, ws, sig_out, h_out):
    """One-point stress update.  Returns (dgamma, ok).

    margin is the directional-term lower bound (_dir_margin); dg_warm > 0
    seeds the Newton loop (e.g. with the previous committed increment).
    """
    D4, K4, M4, rho, x, R, J, scr, vid, perm = ws
    g_prev = h[3]
    b_prev = h[4:7]

    c = E / (1.0 - nu * nu)
    s_tr0 = c * ((eps[0] - h[0]) + nu * (eps[1] - h[1]))
    s_tr1 = c * (nu * (eps[0] - h[0]) + (eps[1] - h[1]))
    s_tr2 = c * (1.0 - nu) * (eps[2] - h[2])

    rho[0] = s_tr0 - b_prev[0]
    rho[1] = s_tr1 - b_prev[1]
    rho[2] = s_tr2 - b_prev[2]
    rho[3] = b_prev[0] + b_prev[1]

    # quick reject: if sqrt(3/2)*r stays below the directional minimum the
    # point is elastic for any Lode angle, no eigen/trig work needed
    if margin > 0.0:
        p = (rho[0] + rho[1] + rho[3]) / 3.0
        r2 = ((rho[0] - p) ** 2 + (rho[1] - p) ** 2 + 2.0 * rho[2] ** 2
              + (rho[3] - p) ** 2)
        hval0, _ = _voce(hard, g_prev)
        lim = hval0 * margin
        if 1.5 * r2 <= lim * lim:
            sig_out[0], sig_out[1], sig_out[2] = s_tr0, s_tr1, s_tr2
            for i in range(7):
                h_out[i] = h[i]
            return 0.0, True

    f_tr, _ = _bundle(rho, theta, hard, g_prev, r_tol, eig_tol, 0,
                      D4, K4, M4, scr, vid)
    if f_tr <= 0.0:
        sig_out[0], sig_out[1], sig_out[2] = s_tr0, s_tr1, s_tr2
        for i in range(7):
            h_out[i] = h[i]
        return 0.0, True

    x[0], x[1], x[2] = s_tr0, s_tr1, s_tr2
    x[3], x[4], x[5] = b_prev[0], b_prev[1], b_prev[2]
    if dg_warm > 0.0:
        x[6] = dg_warm
    else:
        # radial-return-style scalar estimate shortens the Newton loop
        mu3 = 3.0 * E / (2.0 * (1.0 + nu))
        _, hder0 = _voce(hard, g_prev)
        x[6] = f_tr / (mu3 + hard[3] + abs(hder0) * max(theta[0], 1e-12))
    ep_prev = h[0:3]
    tol_b = tol_r * E
    for _ in range(max_iter):
        f = _assemble_system(x, eps, ep_prev, b_prev, g_prev, theta, hard,
                             E, nu, r_tol, eig_tol, ws)
        r_eps = max(abs(R[0]), abs(R[1]), abs(R[2]))
        r_b = max(abs(R[3]), abs(R[4]), abs(R[5]))
        if abs(f) <= tol_f and r_eps <= tol_r and r_b <= tol_b:
            dg = x[6]
            if dg < -1e-14:
                return dg, False
            if dg < 0.0:
                dg = 0.0
            sig_out[0], sig_out[1], sig_out[2] = x[0], x[1], x[2]
            h_out[0] = eps[0] - (x[0] - nu * x[1]) / E
            h_out[1] = eps[1] - (-nu * x[0] + x[1]) / E
            h_out[2] = eps[2] - (1.0 + nu) / E * x[2]
            h_out[3] = g_prev + dg
            h_out[4], h_out[5], h_out[6] = x[3], x[4], x[5]
            return dg, True
        if not _factor(J, perm, 7):
            return x[6], False
        _factored_solve(J, perm, R, 7)
        for i in range(7):
            x[i] -= R[i]
        if not np.isfinite(x[6]):
            return x[6], False
    return x[6], False


@njit(cache=True)
def _elastic_tangent(E, nu, out):
    c = E / (1.0 - nu * nu)
    out[0, 0] = c
    out[0, 1] = c * nu
    out[0, 2] = 0.0
    out[1, 0] = c * nu
    out[1, 1] = c
    out[1, 2] = 0.0
    out[2, 0] = 0.0
    out[2, 1] = 0.0
    out[2, 2] = c * (1.0 - nu)


@njit(cache=True)
def _consistent_tangent_core(eps, h_prev, sig, b_new, dg, theta, hard, E, nu,
                             r_tol, eig_tol, ws, tang_out):
    """Implicit differentiation of the converged corrector system.

    d sigma/d eps is the top-left 3x3 block of J^{-1} restricted to the
    strain-residual rows (dR/deps = -I there).
    """
    D4, K4, M4, rho, x, R, J, scr, vid, perm = ws
    x[0], x[1], x[2] = sig[0], sig[1], sig[2]
    x[3], x[4], x[5] = b_new[0], b_new[1], b_new[2]
    x[6] = dg
    _assemble_system(x, eps, h_prev[0:3], h_prev[4:7], h_prev[3], theta,
                     hard, E, nu, r_tol, eig_tol, ws)
    if not _factor(J, perm, 7):
        return False
    for k in range(3):
        for i in range(7):
            R[i] = 0.0
        R[k] = 1.0
        _factored_solve(J, perm, R, 7)
        for i in range(3):
            tang_out[i, k] = R[i]
    return True


@njit(cache=True)
def return_map_py(eps, h, theta, hard, E, nu, tol_f, tol_r, max_iter):
    """Scalar stress update; returns (sigma, h_new, dgamma, ok)."""
    ws = _new_ws()
    sig = np.zeros(3)
    h_new = np.zeros(7)
    dg, ok = _return_map_core(eps, h, theta, hard, E, nu, tol_f, tol_r,
                              max_iter, 1e-12 * E, 1e-10, _dir_margin(theta),
                              -1.0, ws, sig, h_new)
    return sig, h_new, dg, ok


@njit(cache=True)
def return_map_tangent_py(eps, h, theta, hard, E, nu, tol_f, tol_r, max_iter):
    """Stress update plus consistent tangent; returns (sigma, h_new, tang, ok)."""
    ws = _new_ws()
    sig = np.zeros(3)
    h_new = np.zeros(7)
    tang = np.zeros((3, 3))
    dg, ok = _return_map_core(eps, h, theta, hard, E, nu, tol_f, tol_r,
                              max_iter, 1e-12 * E, 1e-10, _dir_margin(theta),
                              -1.0, ws, sig, h_new)
    if not ok:
        return sig, h_new, tang, False
    if dg == 0.0:
        _elastic_tangent(E, nu, tang)
        return sig, h_new, tang, True
    ok2 = _consistent_tangent_core(eps, h, sig, h_new[4:7], dg, theta, hard,
                                   E, nu, 1e-12 * E, 1e-10, ws, tang)
    return sig, h_new, tang, ok2


@njit(cache=True)
def update_step(strains, h, theta, hard, E, nu, tol_f, tol_r, max_iter,
                want_tangent, dg_warm, sig_out, h_out, tang_out):
    """Stress update (optionally with tangents) for all points of one step.

    dg_warm seeds each point's Newton loop (pass the increments committed at
    the previous step; entries <= 0 fall back to a scalar estimate).
    Returns the number of points that failed to converge.
    """
    nqp = strains.shape[0]
    nfail = 0
    r_tol = 1e-12 * E
    margin = _dir_margin(theta)
    ws = _new_ws()
    for q in range(nqp):
        dg, ok = _return_map_core(strains[q], h[q], theta, hard, E, nu,
                                  tol_f, tol_r, max_iter, r_tol, 1e-10,
                                  margin, dg_warm[q], ws, sig_out[q],
                                  h_out[q])
        if not ok:
            nfail += 1
            continue
        if want_tangent:
            if dg == 0.0:
                _elastic_tangent(E, nu, tang_out[q])
            else:
                if not _consistent_tangent_core(strains[q], h[q], sig_out[q],
                                                h_out[q, 4:7], dg, theta,
                                                hard, E, nu, r_tol, 1e-10,
                                                ws, tang_out[q]):
                    nfail += 1
    return nfail


@njit(cache=True)
def trajectory_residuals(strains, theta, hard, E, nu, Bw, edofs, ndof,
                         free_idx, beta_dofs, beta_ptr, reactions,
                         tol_f, tol_r, max_iter, res_out):
    """History propagation and force-imbalance residuals for a whole dataset.

    strains: (nt, nqp, 3) quadrature-point strains from the measured
    displacements.  res_out: (nt, nfree + nbeta); the free-DOF block receives
    the internal nodal forces, the reaction block receives
    (measured reaction - summed internal force), unweighted.

    Returns -1 on success or the index of the first failing time step.
    """
    nt = strains.shape[0]
    nqp = strains.shape[1]
    nfree = free_idx.shape[0]
    nbeta = beta_ptr.shape[0] - 1
    r_tol = 1e-12 * E
    margin = _dir_margin(theta)
    ws = _new_ws()
    h = np.zeros((nqp, 7))
    dg_warm = np.full(nqp, -1.0)
    h_new = np.empty(7)
    sig = np.empty(3)
    F = np.empty(ndof)
    for t in range(nt):
        for d in range(ndof):
            F[d] = 0.0
        for q in range(nqp):
            dg, ok = _return_map_core(strains[t, q], h[q], theta, hard, E,
                                      nu, tol_f, tol_r, max_iter, r_tol,
                                      1e-10, margin, dg_warm[q], ws, sig,
                                      h_new)
            if not ok:
                return t
            dg_warm[q] = dg if dg > 0.0 else -1.0
            for i in range(7):
                h[q, i] = h_new[i]
            for a in range(8):
                d = edofs[q, a]
                F[d] += (Bw[q, 0, a] * sig[0] + Bw[q, 1, a] * sig[1]
                         + Bw[q, 2, a] * sig[2])
        for i in range(nfree):
            res_out[t, i] = F[free_idx[i]]
        for b in range(nbeta):
            acc = 0.0
            for k in range(beta_ptr[b], beta_ptr[b + 1]):
                acc += F[beta_dofs[k]]
            res_out[t, nfree + b] = reactions[t, b] - acc
    return -1
