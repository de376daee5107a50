"""Inverse solver: weak-form force-imbalance cost, sparse regression over a
regularization grid with preconditioning and multi-start, and automatic
parsimonious model selection.

The measured displacements define quadrature-point strain histories once and
for all; evaluating the cost for a parameter vector means propagating the
constitutive update through all time steps and summing squared force
imbalances over the free DOFs plus weighted reaction imbalances.
Minimization uses scipy's trust-region reflective least-squares solver with
forward-difference gradients (there is no closed form for the gradient
because of the history dependence).  A stress update that fails to converge
marks the whole evaluation as failed; such evaluations enter the optimizer as
a huge finite residual so the trust region contracts away from the bad
region, and a run that terminates on one is flagged non-convergent.
"""

import multiprocessing
import numpy as np
from dataclasses import dataclass, replace
from scipy.optimize import least_squares

from . import _kernels
from .fem import precompute_qp
from .material import MaterialParams, check_admissible, check_convex

# perturbation scales / characteristic sizes of the hardening parameters
HARD_SCALES = np.array([100.0, 1.0, 1000.0, 100.0, 1000.0])
THETA_SCALE = 0.1          # scale of theta_i is THETA_SCALE / 2**i
_FAIL_RESIDUAL = 1e10      # finite sentinel fed to the optimizer on failure


class DiscoveryError(RuntimeError):
    pass


@dataclass
class CostBreakdown:
    """Force-imbalance cost split into its two weak-form contributions."""

    c_free: float
    c_disp: float
    lambda_r: float

    @property
    def total(self):
        return self.c_free + self.lambda_r * self.c_disp


@dataclass
class SolutionCandidate:
    """One point of the regularization sweep (or one multi-start result)."""

    theta: np.ndarray
    hardening: np.ndarray
    cost: float                 # unregularized total C at the optimum
    lambda_p: float
    converged: bool
    norm_p: float = np.nan      # sum_i>=1 |theta_i|^p
    n_fev: int = 0

    def params(self):
        return MaterialParams(self.theta.copy(), self.hardening.copy())


@dataclass
class DiscoveryConfig:
    """All hyperparameters of the discovery pipeline.

    Defaults follow the reference setup: reaction weight 100, exponent 1/4,
    grid 2^-5..2^15, 100 random restarts, cost threshold 1.01*C_min and
    coefficient threshold 0.005*theta_0.  `desk_config` scales the expensive
    knobs down for laptop-sized runs.
    """

    n_features: int = 7
    lambda_r: float = 100.0
    p: float = 0.25
    lambda_p_grid: tuple = tuple(2.0 ** i for i in range(-5, 16))
    n_starts: int = 100
    cost_keep_factor: float = 1.01
    theta_zero_factor: float = 0.005
    fd_step: float = 1e-7
    seed: int = 0
    perturb_factor: float = 1.0         # 0 disables restart perturbations
    penalty_eps_scale: float = 1e-8
    rm_tol_f: float = 1e-10
    rm_tol_r: float = 1e-10
    rm_max_iter: int = 50
    ftol_start: float = 1e-7
    ftol_reg: float = 1e-9
    max_nfev_precondition: int = 120
    max_nfev_start: int = 200
    max_nfev_reg: int = 250
    max_nfev_refit: int = 300
    n_workers: int = 1


def desk_config(**overrides):
    """Reduced-budget profile: 8 restarts, 11-point grid, 2 workers."""
    cfg = DiscoveryConfig(
        n_starts=8,
        lambda_p_grid=tuple(2.0 ** i for i in range(-5, 16, 2)),
        n_workers=min(2, multiprocessing.cpu_count()),
    )
    return replace(cfg, **overrides)


def paper_config(**overrides):
    """Full-scale profile (100 restarts, 21-point grid)."""
    return replace(DiscoveryConfig(), **overrides)


class CostEvaluator:
    """Precomputed strain histories plus fast residual evaluation.

    The quadrature-point strains depend only on the measured displacements,
    so they are assembled once; each evaluation just propagates the material
    update and assembles force residuals.
    """

    def __init__(self, dataset, elastic, lambda_r=100.0, rm_tol_f=1e-10,
                 rm_tol_r=1e-10, rm_max_iter=50):
        mesh = dataset.mesh
        self._E = float(elastic.youngs_modulus)
        self._nu = float(elastic.poisson_ratio)
        qp = precompute_qp(mesh)
        n_t = dataset.n_steps
        u = dataset.displacements.reshape(n_t, -1)
        self.strains = np.einsum('qca,tqa->tqc', qp.B, u[:, qp.edofs])
        self.Bw = qp.Bw
        self.edofs = qp.edofs
        self.n_dofs = mesh.n_dofs
        self.free = mesh.free_dofs
        groups = [np.asarray(mesh.constrained_groups[g], dtype=np.int64)
                  for g in mesh.reaction_groups]
        self.beta_dofs = (np.concatenate(groups) if groups
                          else np.empty(0, dtype=np.int64))
        self.beta_ptr = np.concatenate(
            [[0], np.cumsum([g.size for g in groups])]).astype(np.int64)
        self.reactions = dataset.reactions
        self.lambda_r = float(lambda_r)
        self.rm_tol_f = rm_tol_f
        self.rm_tol_r = rm_tol_r
        self.rm_max_iter = rm_max_iter
        self.n_t = n_t
        self.n_free = self.free.size
        self.n_beta = len(groups)
        self._res = np.zeros((n_t, self.n_free + self.n_beta))

    def residual_blocks(self, theta, hardening):
        """(free-DOF forces, reaction imbalances) or None if the stress
        update failed anywhere along the propagation."""
        status = _kernels.trajectory_residuals(
            self.strains, np.asarray(theta, dtype=float),
            np.asarray(hardening, dtype=float),
            self._E, self._nu, self.Bw, self.edofs, self.n_dofs, self.free,
            self.beta_dofs, self.beta_ptr, self.reactions,
            self.rm_tol_f, self.rm_tol_r, self.rm_max_iter, self._res)
        if status != -1:
            return None
        return self._res[:, :self.n_free], self._res[:, self.n_free:]

    def cost_parts(self, theta, hardening):
        blocks = self.residual_blocks(theta, hardening)
        if blocks is None:
            return CostBreakdown(np.inf, np.inf, self.lambda_r)
        free_f, reac = blocks
        return CostBreakdown(float(np.sum(free_f ** 2)),
                             float(np.sum(reac ** 2)), self.lambda_r)


def make_evaluator(dataset, elastic, config=None):
    cfg = config or DiscoveryConfig()
    return CostEvaluator(dataset, elastic, lambda_r=cfg.lambda_r,
                         rm_tol_f=cfg.rm_tol_f, rm_tol_r=cfg.rm_tol_r,
                         rm_max_iter=cfg.rm_max_iter)


def cost_free(dataset, elastic, theta, hardening, config=None):
    """Squared internal forces on the free DOFs summed over all steps."""
    return make_evaluator(dataset, elastic, config).cost_parts(
        theta, hardening).c_free


def cost_disp(dataset, elastic, theta, hardening, config=None):
    """Squared net reaction imbalances summed over steps and measurements."""
    return make_evaluator(dataset, elastic, config).cost_parts(
        theta, hardening).c_disp


def cost_total(dataset, elastic, theta, hardening, lambda_r=100.0):
    """Combined cost c_free + lambda_r * c_disp with one propagation."""
    ev = CostEvaluator(dataset, elastic, lambda_r=lambda_r)
    return ev.cost_parts(theta, hardening)


# ---------------------------------------------------------------------------
# parameter packing: z = [theta_0..theta_{nf-1}, H1, H2, H3, Hk1, Hk2]

def _unpack(z, n_features):
    return z[:n_features], z[n_features:]

def _scales(n_features):
    th = THETA_SCALE / 2.0 ** np.arange(n_features)
    return np.concatenate([th, HARD_SCALES])

def _bounds(n_features):
    lb = np.concatenate([[1e-6], np.full(n_features - 1, -np.inf),
                         np.zeros(5)])
    ub = np.full(n_features + 5, np.inf)
    return lb, ub


def _optimize(evaluator, z0, active, lam_p, eps_p, p, config, max_nfev,
              ftol):
    """Bound-constrained least-squares over the active subset of z.

    Returns a dict with the optimized full vector, the unregularized cost at
    it, a convergence flag, and the evaluation count.
    """
    n_f = config.n_features
    z_template = z0.copy()
    active = np.asarray(active, dtype=bool)
    idx = np.nonzero(active)[0]
    lb, ub = _bounds(n_f)
    sqrt_lr = np.sqrt(evaluator.lambda_r)
    pen_idx = idx[(idx >= 1) & (idx < n_f)]          # theta_0 never penalized
    sq_lp = np.sqrt(lam_p)

    def fun(za):
        z = z_template.copy()
        z[idx] = za
        theta, hard = _unpack(z, n_f)
        blocks = evaluator.residual_blocks(theta, hard)
        n_pen = pen_idx.size if lam_p > 0.0 else 0
        if blocks is None:
            return np.full(evaluator.n_t * (evaluator.n_free
                                            + evaluator.n_beta) + n_pen,
                           _FAIL_RESIDUAL)
        free_f, reac = blocks
        parts = [free_f.ravel(), sqrt_lr * reac.ravel()]
        if n_pen:
            th = z[pen_idx]
            parts.append(sq_lp * (th * th + eps_p * eps_p) ** (p / 4.0))
        return np.concatenate(parts)

    z0a = np.clip(z0[idx], lb[idx], ub[idx])
    res = least_squares(fun, z0a, method='trf', bounds=(lb[idx], ub[idx]),
                        diff_step=config.fd_step, x_scale=_scales(n_f)[idx],
                        max_nfev=max_nfev, ftol=ftol, xtol=ftol, gtol=None)
    z_opt = z_template.copy()
    z_opt[idx] = res.x
    theta, hard = _unpack(z_opt, n_f)
    parts = evaluator.cost_parts(theta, hard)
    converged = bool(np.isfinite(parts.total)
                     and parts.total < 0.5 * _FAIL_RESIDUAL ** 2)
    return {"z": z_opt, "cost": parts.total, "parts": parts,
            "converged": converged, "n_fev": int(res.nfev)}


# ---------------------------------------------------------------------------
# pool plumbing: tasks are stored in a module global before forking so the
# big strain arrays are inherited instead of pickled

_POOL_STATE = {}


def _pool_run(i):
    ev = _POOL_STATE["evaluator"]
    kw = _POOL_STATE["tasks"][i]
    return _optimize(ev, **kw)


def _run_tasks(evaluator, tasks, n_workers):
    if n_workers <= 1 or len(tasks) <= 1:
        return [_optimize(evaluator, **kw) for kw in tasks]
    _POOL_STATE["evaluator"] = evaluator
    _POOL_STATE["tasks"] = tasks
    try:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(min(n_workers, len(tasks))) as pool:
            return pool.map(_pool_run, range(len(tasks)))
    finally:
        _POOL_STATE.clear()


# ---------------------------------------------------------------------------

@dataclass
class PreconditionResult:
    theta0: float
    h_iso1: float
    h_kin1: float
    cost: float
    converged: bool


def _theta0_heuristic(dataset):
    """Crude initial yield scale from the peak reaction per boundary length."""
    span = np.ptp(dataset.mesh.nodes[:, 0])
    if span <= 0.0 or dataset.reactions.size == 0:
        return 0.1
    sig_nom = np.max(np.abs(dataset.reactions)) / span
    return float(np.clip(sig_nom, 0.01, 10.0))


def precondition(dataset, elastic, config, evaluator=None):
    """Fit the circular-surface / linear-hardening reduced model.

    Minimizes the cost over (theta_0, H_iso1, H_kin1) with all other
    parameters held at zero, giving a robust scale estimate that seeds the
    multi-start search.
    """
    ev = evaluator or make_evaluator(dataset, elastic, config)
    n_f = config.n_features
    z0 = np.zeros(n_f + 5)
    th0 = _theta0_heuristic(dataset)
    z0[0] = th0
    z0[n_f] = 50.0       # H_iso1
    z0[n_f + 3] = 50.0   # H_kin1
    active = np.zeros(n_f + 5, dtype=bool)
    active[[0, n_f, n_f + 3]] = True
    out = _optimize(ev, z0, active, 0.0, 0.0, config.p, config,
                    config.max_nfev_precondition, config.ftol_start)
    if not out["converged"]:
        return PreconditionResult(th0, 0.0, 0.0, np.inf, False)
    z = out["z"]
    return PreconditionResult(float(z[0]), float(z[n_f]), float(z[n_f + 3]),
                              out["cost"], True)


def _perturbed_starts(precond, config):
    """Random initial guesses around the preconditioned circular model.

    theta_0 comes from the preconditioning step, every other parameter is
    zero, and all entries are Gaussian-perturbed with per-parameter scales;
    the hardening entries take the absolute value to stay feasible.
    """
    n_f = config.n_features
    starts = []
    for g in range(config.n_starts):
        rng = np.random.default_rng(config.seed + 1000 * g)
        z = np.zeros(n_f + 5)
        z[0] = precond.theta0
        fac = config.perturb_factor
        if fac > 0.0:
            z[:n_f] += fac * rng.normal(0.0, THETA_SCALE / 2.0 ** np.arange(n_f))
            z[n_f:] = np.abs(fac * rng.normal(0.0, HARD_SCALES))
        starts.append(z)
    return starts


def multistart_unregularized(dataset, elastic, config, precond=None,
                             evaluator=None):
    """Unregularized fits from n_starts perturbed initial guesses.

    Returns (best candidate, all candidates); restarts whose final point
    still fails the stress update are recorded with infinite cost.
    """
    ev = evaluator or make_evaluator(dataset, elastic, config)
    pre = precond or precondition(dataset, elastic, config, evaluator=ev)
    active = np.ones(config.n_features + 5, dtype=bool)
    tasks = [dict(z0=z, active=active, lam_p=0.0, eps_p=0.0, p=config.p,
                  config=config, max_nfev=config.max_nfev_start,
                  ftol=config.ftol_start)
             for z in _perturbed_starts(pre, config)]
    outs = _run_tasks(ev, tasks, config.n_workers)
    cands = []
    for out in outs:
        theta, hard = _unpack(out["z"], config.n_features)
        cands.append(SolutionCandidate(
            theta=theta.copy(), hardening=hard.copy(),
            cost=out["cost"] if out["converged"] else np.inf,
            lambda_p=0.0, converged=out["converged"], n_fev=out["n_fev"]))
    ok = [c for c in cands if c.converged]
    if not ok:
        raise DiscoveryError("all multi-start restarts failed")
    best = min(ok, key=lambda c: c.cost)
    return best, cands


def _norm_p(theta, p):
    return float(np.sum(np.abs(theta[1:]) ** p))


def solve_regularized(dataset, elastic, lambda_p, init, config,
                      evaluator=None):
    """One point of the sparsity sweep: minimize C + lambda_p * sum|theta|^p.

    init: full parameter vector (theta then hardening), typically the best
    unregularized fit.  The non-smooth |.|^p is smoothed near zero so the
    finite-difference gradients stay meaningful.
    """
    ev = evaluator or make_evaluator(dataset, elastic, config)
    init = np.asarray(init, dtype=float)
    eps_p = config.penalty_eps_scale * max(abs(init[0]), 1e-3)
    active = np.ones(config.n_features + 5, dtype=bool)
    out = _optimize(ev, init, active, float(lambda_p), eps_p, config.p,
                    config, config.max_nfev_reg, config.ftol_reg)
    theta, hard = _unpack(out["z"], config.n_features)
    return SolutionCandidate(
        theta=theta.copy(), hardening=hard.copy(),
        cost=out["cost"] if out["converged"] else np.inf,
        lambda_p=float(lambda_p), converged=out["converged"],
        norm_p=_norm_p(theta, config.p), n_fev=out["n_fev"])


def select_candidate(candidates, config):
    """Parsimonious selection from the sweep's candidate set.

    Drops candidates whose cost exceeds cost_keep_factor * C_min, then picks
    the smallest sum_i>=1 |theta_i|^p; exact ties go to the smaller
    lambda_p.  Returns (selected, kept list).
    """
    ok = [c for c in candidates if c.converged and np.isfinite(c.cost)]
    if not ok:
        raise DiscoveryError("no convergent candidates to select from")
    c_min = min(c.cost for c in ok)
    keep = [c for c in ok if c.cost < config.cost_keep_factor * c_min
            or c.cost == c_min]
    sel = min(keep, key=lambda c: (_norm_p(c.theta, config.p), c.lambda_p))
    return sel, keep


def threshold_theta(theta, factor):
    """Zero every coefficient smaller than factor * theta_0 in magnitude."""
    theta = np.asarray(theta, dtype=float).copy()
    cut = factor * abs(theta[0])
    small = np.abs(theta) < cut
    small[0] = False
    theta[small] = 0.0
    return theta


@dataclass
class DiscoveryResult:
    selected: MaterialParams            # thresholded + refit model
    selected_raw: SolutionCandidate     # sweep winner before thresholding
    refit: SolutionCandidate
    theta_threshold: float
    candidates: list
    start_candidates: list
    precondition: PreconditionResult
    config: DiscoveryConfig
    admissible: bool = True
    convex: bool = True

    def active_pattern(self):
        return np.nonzero(self.selected.theta)[0]


def discover(dataset, elastic, config=None):
    """Full pipeline: precondition, multi-start, sweep, select, refit.

    The refit re-minimizes the unregularized cost over the surviving
    coefficients (fixed sparsity pattern) and all hardening parameters,
    polishing away the shrinkage bias of the regularization.
    """
    cfg = config or desk_config()
    ev = make_evaluator(dataset, elastic, cfg)
    pre = precondition(dataset, elastic, cfg, evaluator=ev)
    best, start_cands = multistart_unregularized(dataset, elastic, cfg,
                                                 precond=pre, evaluator=ev)
    init = np.concatenate([best.theta, best.hardening])
    eps_p = cfg.penalty_eps_scale * max(abs(init[0]), 1e-3)
    active = np.ones(cfg.n_features + 5, dtype=bool)
    tasks = [dict(z0=init, active=active, lam_p=float(lp), eps_p=eps_p,
                  p=cfg.p, config=cfg, max_nfev=cfg.max_nfev_reg,
                  ftol=cfg.ftol_reg)
             for lp in cfg.lambda_p_grid]
    outs = _run_tasks(ev, tasks, cfg.n_workers)
    candidates = []
    for lp, out in zip(cfg.lambda_p_grid, outs):
        theta, hard = _unpack(out["z"], cfg.n_features)
        candidates.append(SolutionCandidate(
            theta=theta.copy(), hardening=hard.copy(),
            cost=out["cost"] if out["converged"] else np.inf,
            lambda_p=float(lp), converged=out["converged"],
            norm_p=_norm_p(theta, cfg.p), n_fev=out["n_fev"]))

    sel, _kept = select_candidate(candidates, cfg)
    th_cut = cfg.theta_zero_factor * abs(sel.theta[0])
    theta_thr = threshold_theta(sel.theta, cfg.theta_zero_factor)

    # fixed-pattern refit without regularization
    z_ref = np.concatenate([theta_thr, sel.hardening])
    active = np.concatenate([theta_thr != 0.0, np.ones(5, dtype=bool)])
    active[0] = True
    out = _optimize(ev, z_ref, active, 0.0, 0.0, cfg.p, cfg,
                    cfg.max_nfev_refit, cfg.ftol_reg)
    theta_fit, hard_fit = _unpack(out["z"], cfg.n_features)
    refit = SolutionCandidate(
        theta=theta_fit.copy(), hardening=hard_fit.copy(),
        cost=out["cost"] if out["converged"] else np.inf, lambda_p=0.0,
        converged=out["converged"], norm_p=_norm_p(theta_fit, cfg.p),
        n_fev=out["n_fev"])
    final = refit if refit.converged else SolutionCandidate(
        theta=theta_thr, hardening=sel.hardening.copy(), cost=sel.cost,
        lambda_p=sel.lambda_p, converged=sel.converged)

    params = MaterialParams(final.theta.copy(), final.hardening.copy())
    return DiscoveryResult(
        selected=params, selected_raw=sel, refit=refit,
        theta_threshold=th_cut, candidates=candidates,
        start_candidates=start_cands, precondition=pre, config=cfg,
        admissible=check_admissible(params.theta),
        convex=check_convex(params.theta))


def cost_scan(dataset, elastic, theta0_values, theta1_values, hardening=None,
              config=None):
    """Total-cost landscape over a (theta_0, theta_1) grid, rest zero.

    Failed stress updates give np.inf entries.  Used to visualize the
    non-convex landscape and the failure band along the admissibility
    boundary.
    """
    cfg = config or DiscoveryConfig()
    ev = make_evaluator(dataset, elastic, cfg)
    hard = np.zeros(5) if hardening is None else np.asarray(hardening)
    out = np.empty((len(theta0_values), len(theta1_values)))
    for i, t0 in enumerate(theta0_values):
        for j, t1 in enumerate(theta1_values):
            theta = np.zeros(cfg.n_features)
            theta[0] = t0
            if cfg.n_features > 1:
                theta[1] = t1
            out[i, j] = ev.cost_parts(theta, hard).total
    return out


def candidate_table(result):
    """Rows (lambda_p, cost, norm_p, converged, selected) for reporting."""
    rows = []
    for c in result.candidates:
        rows.append({
            "lambda_p": c.lambda_p,
            "cost": c.cost,
            "norm_p": c.norm_p,
            "converged": c.converged,
            "selected": c is result.selected_raw,
        })
    return rows


def report_text(result):
    """Human-readable discovery report."""
    lines = []
    pre = result.precondition
    lines.append("preconditioning: theta0=%.4f  H_iso1=%.2f  H_kin1=%.2f  "
                 "(cost %.3e, %s)"
                 % (pre.theta0, pre.h_iso1, pre.h_kin1, pre.cost,
                    "ok" if pre.converged else "fallback"))
    n_ok = sum(c.converged for c in result.start_candidates)
    lines.append("multi-start: %d/%d restarts converged"
                 % (n_ok, len(result.start_candidates)))
    lines.append("sweep candidates (lambda_p, C, |theta|_p^p, flag):")
    for row in candidate_table(result):
        mark = " <-- selected" if row["selected"] else ""
        lines.append("  %10.4g  %12.6e  %8.4f  %s%s"
                     % (row["lambda_p"], row["cost"], row["norm_p"],
                        "ok" if row["converged"] else "FAILED", mark))
    lines.append("theta threshold: %.3e" % result.theta_threshold)
    th = result.selected.theta
    terms = ["%+.4f" % th[0]] + [
        "%+.4f cos(%d a)" % (t, 3 * i)
        for i, t in enumerate(th) if i >= 1 and t != 0.0]
    lines.append("selected yield direction term: " + " ".join(terms))
    lines.append("selected hardening: " + "  ".join(
        "%.3f" % v for v in result.selected.hardening))
    lines.append("admissible: %s   convex: %s"
                 % (result.admissible, result.convex))
    return "\n".join(lines)
