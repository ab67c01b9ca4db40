"""Augmented Lagrangian solver for the transcribed problems.

The solver minimizes J(z) subject to stacked equality constraints
c(z) = 0 (dynamics + terminal), path inequalities phi(z) <= 0 and box
bounds on z.  Both constraint families enter one augmented Lagrangian:
equalities through the classic lambda^T c + (rho/2)||c||^2 term, and
inequalities through the slack-free hinge

    (1/(2 rho)) sum_i ( max(0, mu_i + rho phi_i)^2 - mu_i^2 ),

so the subproblem keeps the original variables and only the box
bounds.  The outer loop applies first-order multiplier updates,
lambda <- lambda + rho c and mu <- max(0, mu + rho phi), with the
usual two-track tolerance schedule: the inner projected-gradient
tolerance omega and the feasibility target eta both tighten after a
successful multiplier update and reset after a penalty increase.  The
feasibility measure for inequalities is the shifted one,
max(phi, -mu/rho), so an inactive constraint with a vanishing
multiplier counts as settled.  The bound-constrained subproblem goes
to scipy's L-BFGS-B.

Badly scaled instances are handled by a joint row/column
equilibration frozen at the starting point: a few Ruiz sweeps on the
stacked absolute Jacobian balance constraint rows against decision
columns, with every factor rounded to a power of two so the scaling
is exactly invertible.  When dense Jacobians are unavailable the
scaling falls back to max(1, |z0_i|) columns and max(1, |c_i(z0)|)
equality rows.  All of it is internal; reported quantities
(multipliers, violations, the KKT residual) are in the original
units.

Everything is deterministic: no randomization, no multithreading, and
the same options and starting point reproduce the same iterates.

The solver only relies on the evaluator protocol of
:class:`focp.transcribe.TranscribedNlp` (objective, gradients,
residuals and transpose products), so tests can feed it hand-written
toy problems.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.optimize import Bounds, least_squares, lsq_linear, minimize

from .errors import EvaluationError

__all__ = ["SolveStatus", "SolverOptions", "NlpSolution", "solve", "kkt_residual"]

# Tolerance-schedule constants; exponents follow the usual first-order
# augmented Lagrangian safeguards.
_OMEGA0 = 1.0
_ETA0 = 1.0
_ALPHA_ETA = 0.1
_BETA_ETA = 0.9
_BAD_VALUE = 1e30


@dataclass
class _InnerResult:
    """Subproblem outcome in the vocabulary the outer loop reads."""

    x: np.ndarray
    nit: int
    status: int
    message: str


class SolveStatus(Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    LINE_SEARCH_FAILURE = "line_search_failure"
    INFEASIBLE = "infeasible"


@dataclass
class SolverOptions:
    """Tuning knobs of the augmented Lagrangian loop.

    kkt_tol is the single convergence tolerance: stationarity,
    feasibility and complementarity must all fall below it for the
    CONVERGED status.
    """

    kkt_tol: float = 1e-10
    max_outer: int = 60
    max_inner: int = 500
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e12
    multiplier_max: float = 1e10
    use_analytic_derivatives: bool = True
    # When the quasi-Newton inner solver exhausts its iteration budget
    # on a subproblem, hand the subproblem (and all later ones) to a
    # trust-region solver whose curvature comes from differenced
    # subproblem gradients.  Requires analytic derivatives, and only
    # engages on hinge-free subproblems (no path constraints).
    inner_newton_fallback: bool = True
    iteration_log_path: Optional[str] = None


@dataclass
class NlpSolution:
    """Result bundle; multipliers are reported for the original NLP.

    eq_multipliers stacks the dynamics rows first, then the terminal
    rows, matching eq_residual.  ineq_multipliers are the path-row
    multipliers, clipped to be nonnegative.
    """

    status: SolveStatus
    z: np.ndarray
    objective: float
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    kkt: float
    eq_violation: float
    ineq_violation: float
    outer_iters: int
    inner_iters: int
    eval_counts: dict = field(default_factory=dict)
    merit_violations: int = 0
    message: str = ""


def kkt_residual(nlp, z, eq_multipliers, ineq_multipliers=None) -> float:
    """Infinity norm of the first-order optimality residual at z.

    Folds together projected stationarity (gradient of the Lagrangian
    projected onto the box bounds), equality and inequality violation,
    complementarity |mu * phi| and multiplier sign violations.
    """
    z = np.asarray(z, dtype=np.float64)
    eq_multipliers = np.asarray(eq_multipliers, dtype=np.float64)
    grad = nlp.objective_gradient(z).copy()
    if eq_multipliers.size:
        grad += nlp.eq_jac_t_vec(z, eq_multipliers)
    phi = nlp.path_residual(z)
    if ineq_multipliers is None:
        ineq_multipliers = np.zeros(phi.size)
    else:
        ineq_multipliers = np.asarray(ineq_multipliers, dtype=np.float64)
    if ineq_multipliers.size:
        grad += nlp.path_jac_t_vec(z, ineq_multipliers)

    lb, ub = nlp.bounds()
    stationarity = np.max(np.abs(z - np.clip(z - grad, lb, ub))) if z.size else 0.0

    c = nlp.eq_residual(z)
    eq_viol = float(np.max(np.abs(c))) if c.size else 0.0
    if phi.size:
        ineq_viol = float(max(np.max(phi), 0.0))
        comp = float(np.max(np.abs(ineq_multipliers * phi)))
        neg = float(max(np.max(-ineq_multipliers), 0.0))
    else:
        ineq_viol = comp = neg = 0.0
    return max(float(stationarity), eq_viol, ineq_viol, comp, neg)


def _violations(nlp, z):
    c = nlp.eq_residual(z)
    phi = nlp.path_residual(z)
    eq = float(np.max(np.abs(c))) if c.size else 0.0
    ineq = float(max(np.max(phi), 0.0)) if phi.size else 0.0
    return eq, ineq


def _refit_multipliers(nlp, z, lam, mu):
    """Re-estimate the multipliers at a fixed primal point.

    Stationarity is linear in (lam, mu), so the best dual certificate
    for the current z comes from a bounded linear least-squares fit of
    the free-variable stationarity rows.  Only near-active path rows
    receive a column; every other mu stays exactly zero, keeping
    complementarity clean.  First-order outer updates magnify
    feasibility noise by the penalty parameter, so this refit is what
    turns a feasible-and-optimal primal point into a certifiably
    stationary one.  The refit is kept only when it lowers the KKT
    residual.
    """
    lb, ub = nlp.bounds()
    g = nlp.objective_gradient(z)
    near = 1e-8 * (1.0 + np.abs(z))
    free = ((z - lb) > near) & ((ub - z) > near)
    phi = nlp.path_residual(z)
    cand = (
        phi >= -1e-6 * (1.0 + np.abs(phi))
        if phi.size
        else np.zeros(0, dtype=bool)
    )
    m_cand = int(cand.sum())
    J_eq = np.vstack([nlp.dynamics_jacobian(z), nlp.terminal_jacobian(z)])
    m_eq = J_eq.shape[0]
    if m_eq + m_cand == 0 or not free.any():
        return lam, mu
    blocks = [J_eq[:, free].T]
    if m_cand:
        blocks.append(nlp.path_jacobian(z)[cand][:, free].T)
    A = np.hstack(blocks)
    lo = np.concatenate([np.full(m_eq, -np.inf), np.zeros(m_cand)])
    hi = np.full(m_eq + m_cand, np.inf)
    try:
        res = lsq_linear(A, -g[free], bounds=(lo, hi), tol=1e-14)
    except (ValueError, np.linalg.LinAlgError):
        return lam, mu
    lam_new = res.x[:m_eq]
    mu_new = np.zeros(phi.size)
    if m_cand:
        mu_new[cand] = np.maximum(res.x[m_eq:], 0.0)
    if kkt_residual(nlp, z, lam_new, mu_new) < kkt_residual(nlp, z, lam, mu):
        return lam_new, mu_new
    return lam, mu


def _polish_kkt(nlp, z, lam, mu, kkt_tol):
    """Newton-type cleanup of a near-optimal iterate.

    The quasi-Newton subproblem solver stalls once objective-value
    differences sink into rounding noise, typically leaving a
    projected gradient around the square root of machine precision.
    This refinement first refits the multipliers at the incoming
    point, then fixes the variables sitting at their bounds and the
    strongly active path rows, and drives the remaining KKT equations
    (free-variable stationarity, equality residuals, active path
    residuals) to zero with a damped bounded least-squares iteration.
    Weakly active rows, where the constraint is touched but its
    multiplier vanishes, are deliberately left unpinned: forcing them
    would insist on a touching point the optimum merely grazes.  The
    incoming multipliers only estimate the true working set, so the
    root of each pinned system corrects it: rows the root violates are
    added, pins whose multiplier collapses to zero are released, and
    the system is solved again.  Multiplier estimates for the active
    rows stay nonnegative via their bound; inactive rows keep
    multiplier zero, so complementarity is exact by construction.

    Returns the refined (z, lam, mu) triple, or the inputs unchanged
    when the refinement does not reduce the KKT residual.
    """
    lb, ub = nlp.bounds()
    lam, mu = _refit_multipliers(nlp, z, lam, mu)
    kkt_in = kkt_residual(nlp, z, lam, mu)
    eq_in, ineq_in = _violations(nlp, z)
    best = (z, lam, mu, kkt_in)
    if kkt_in <= kkt_tol:
        return best[:3]

    z = best[0].copy()
    near = 1e-6 * (1.0 + np.abs(z))
    at_lb = (z - lb) <= near
    at_ub = (ub - z) <= near
    z = np.where(at_lb, lb, np.where(at_ub, ub, z))
    free = ~(at_lb | at_ub)
    nf = int(free.sum())
    m_eq = lam.size
    phi0 = nlp.path_residual(z)
    m_in = phi0.size
    if m_in:
        active = (phi0 >= -1e-6 * (1.0 + np.abs(phi0))) & (mu > 1e-8)
    else:
        active = np.zeros(0, dtype=bool)

    zr, lamr, mur = z, lam.copy(), mu.copy()
    for _ in range(8):
        m_act = int(active.sum())
        if nf + m_eq + m_act == 0:
            break

        def residuals(w, active=active, m_act=m_act):
            zz = z.copy()
            zz[free] = w[:nf]
            lm = w[nf : nf + m_eq]
            mw = np.zeros(m_in)
            mw[active] = w[nf + m_eq :]
            g = nlp.objective_gradient(zz).copy()
            if m_eq:
                g += nlp.eq_jac_t_vec(zz, lm)
            if m_act:
                g += nlp.path_jac_t_vec(zz, mw)
            parts = [g[free]]
            if m_eq:
                parts.append(nlp.eq_residual(zz))
            if m_act:
                parts.append(nlp.path_residual(zz)[active])
            return np.concatenate(parts)

        w0 = np.concatenate([zr[free], lamr, mur[active]])
        w_lb = np.concatenate([lb[free], np.full(m_eq, -np.inf), np.zeros(m_act)])
        w_ub = np.concatenate([ub[free], np.full(m_eq, np.inf), np.full(m_act, np.inf)])
        try:
            res = least_squares(
                residuals,
                np.clip(w0, w_lb, w_ub),
                bounds=(w_lb, w_ub),
                method="trf",
                xtol=1e-15,
                ftol=1e-15,
                gtol=1e-15,
                max_nfev=60 * max(w0.size, 1),
            )
        except (ValueError, np.linalg.LinAlgError, EvaluationError):
            break

        z_new = z.copy()
        z_new[free] = res.x[:nf]
        z_new = np.clip(z_new, lb, ub)
        lam_new = res.x[nf : nf + m_eq]
        mu_new = np.zeros(m_in)
        if m_act:
            mu_new[active] = np.maximum(res.x[nf + m_eq :], 0.0)

        # the root diagnoses its own working set: pins whose multiplier
        # collapsed should not have been forced, unpinned rows the root
        # violates must join
        if m_in:
            phi_new = nlp.path_residual(z_new)
            add = (~active) & (phi_new > max(kkt_tol, 1e-12))
            drop = active & (mu_new <= 1e-12)
        else:
            phi_new = phi0
            add = drop = active
        changed = bool(add.any() or drop.any())

        lam_fit, mu_fit = _refit_multipliers(nlp, z_new, lam_new, mu_new)
        eq_new, ineq_new = _violations(nlp, z_new)
        kkt_new = kkt_residual(nlp, z_new, lam_fit, mu_fit)
        feas_ok = eq_new <= max(eq_in, kkt_tol) and ineq_new <= max(ineq_in, kkt_tol)
        if feas_ok and kkt_new < best[3]:
            best = (z_new, lam_fit, mu_fit, kkt_new)
            if kkt_new <= kkt_tol:
                break
        if not changed:
            break
        active = (active | add) & ~drop
        zr, lamr, mur = z_new, lam_new, mu_new

    return best[:3]


class _LogWriter:
    """Optional per-outer-iteration CSV trace."""

    COLUMNS = [
        "iter",
        "objective",
        "eq_violation",
        "ineq_violation",
        "kkt",
        "step_norm",
        "rho",
        "inner_iters",
    ]

    def __init__(self, path):
        self._fh = open(path, "w", newline="") if path else None
        if self._fh:
            self._csv = csv.writer(self._fh)
            self._csv.writerow(self.COLUMNS)

    @property
    def enabled(self):
        return self._fh is not None

    def row(self, *values):
        if self._fh:
            self._csv.writerow(["%.17g" % v if isinstance(v, float) else v for v in values])
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


def _equilibrate(nlp, z, c0, m_eq, m_in):
    """Joint row/column scaling of the constraint system at a point.

    Alternating infinity-norm balancing (Ruiz style) of the stacked
    Jacobian [J_eq; J_phi; grad f] yields row divisors and variable
    scales that bring the scaled entries near one, which is what the
    limited-memory inner solver needs to make progress on models whose
    sensitivities span several orders of magnitude.  Scales are rounded
    to powers of two so applying them is exact, and row divisors never
    drop below one: a row is only ever relaxed relative to physical
    units, never tightened.  Falls back to magnitude-based scales when
    the problem does not expose dense Jacobians.
    """
    N = z.size

    def fallback():
        d = np.maximum(1.0, np.abs(z))
        s_eq = np.maximum(1.0, np.abs(c0)) if m_eq else np.ones(0)
        return s_eq, np.ones(m_in), d

    try:
        blocks = []
        if m_eq:
            blocks.append(np.vstack([nlp.dynamics_jacobian(z), nlp.terminal_jacobian(z)]))
        if m_in:
            blocks.append(nlp.path_jacobian(z))
        blocks.append(nlp.objective_gradient(z)[None, :])
        M = np.abs(np.vstack(blocks))
    except (AttributeError, EvaluationError):
        return fallback()
    if not np.all(np.isfinite(M)):
        return fallback()

    r = np.ones(M.shape[0])
    col = np.ones(N)
    for _ in range(6):
        rn = (M * col).max(axis=1) * r
        rn[rn == 0.0] = 1.0
        r /= np.sqrt(rn)
        cn = (M * r[:, None]).max(axis=0) * col
        cn[cn == 0.0] = 1.0
        col /= np.sqrt(cn)

    def pow2(a, lo, hi):
        return np.exp2(np.round(np.log2(np.clip(a, lo, hi))))

    d = pow2(col, 1e-8, 1e8)
    s = pow2(np.maximum(1.0, 1.0 / r), 1.0, 1e12)
    return s[:m_eq], s[m_eq:m_eq + m_in], d


def solve(nlp, z0=None, options: Optional[SolverOptions] = None) -> NlpSolution:
    """Run the augmented Lagrangian loop on a transcribed problem."""
    opt = options or SolverOptions()
    lb, ub = nlp.bounds()
    if z0 is None:
        z0 = nlp.default_initial_guess()
    z = np.clip(np.asarray(z0, dtype=np.float64), lb, ub)
    N = z.size

    def counts():
        return dict(getattr(nlp, "eval_counts", {}))

    # Entry evaluation; a non-finite model at the starting point is fatal.
    try:
        c0 = nlp.eq_residual(z)
        phi0 = nlp.path_residual(z)
        f0 = nlp.objective(z)
    except EvaluationError as exc:
        return NlpSolution(
            SolveStatus.INFEASIBLE,
            z,
            np.nan,
            np.zeros(0),
            np.zeros(0),
            np.inf,
            np.inf,
            np.inf,
            0,
            0,
            counts(),
            message=f"starting point not evaluable: {exc}",
        )
    if not (np.isfinite(f0) and np.all(np.isfinite(c0)) and np.all(np.isfinite(phi0))):
        return NlpSolution(
            SolveStatus.INFEASIBLE,
            z,
            float(f0),
            np.zeros(c0.size),
            np.zeros(phi0.size),
            np.inf,
            np.inf,
            np.inf,
            0,
            0,
            counts(),
            message="starting point evaluates non-finite",
        )

    m_eq = c0.size
    m_in = phi0.size
    # Scaling, frozen at the starting point.  Constraint rows are
    # divided by s_eq / s_in and the inner solver works on v = z / d,
    # so badly scaled models (a 1e3-magnitude state next to a 1e-2
    # one, dynamics rows with 1e2-size sensitivities) become balanced
    # subproblems.  Multipliers carried by the loop live in the scaled
    # space and are converted back whenever something physical (the
    # KKT residual, the refinement, the returned solution) needs them.
    s_eq, s_in, d = _equilibrate(nlp, z, c0, m_eq, m_in)
    lam = np.zeros(m_eq)
    mu = np.zeros(m_in)
    # A starting point that already satisfies the constraints (a
    # simulated state table, a presolved control) carries no dual
    # information, and with zero multipliers the first subproblems
    # would trade that feasibility for objective and spend many
    # rounds buying it back.  Estimate the duals there instead.
    feas0 = float(np.max(np.abs(c0 / s_eq))) if m_eq else 0.0
    if m_in:
        feas0 = max(feas0, float(np.max(phi0 / s_in)))
    if m_eq and feas0 <= 1e-8:
        try:
            lam_p, mu_p = _refit_multipliers(nlp, z, np.zeros(m_eq), np.zeros(m_in))
            # A feasible start whose refit duals already certify
            # near-optimality is an endgame, not a reason to run the
            # outer loop: the subproblem floor sits near the square
            # root of machine precision, so the loop would grind its
            # budget chasing digits only the refinement can reach.
            if kkt_residual(nlp, z, lam_p, mu_p) <= 1e-6:
                z_r, lam_r, mu_r = _polish_kkt(nlp, z, lam_p, mu_p, opt.kkt_tol)
                kkt_r = kkt_residual(nlp, z_r, lam_r, mu_r)
                eq_r, ineq_r = _violations(nlp, z_r)
                if kkt_r <= opt.kkt_tol and eq_r <= opt.kkt_tol and ineq_r <= opt.kkt_tol:
                    log = _LogWriter(opt.iteration_log_path)
                    if log.enabled:
                        log.row(0, float(nlp.objective(z_r)), eq_r, ineq_r, kkt_r, 0.0, opt.rho0, 0)
                    log.close()
                    return NlpSolution(
                        status=SolveStatus.CONVERGED,
                        z=z_r.copy(),
                        objective=float(nlp.objective(z_r)),
                        eq_multipliers=lam_r,
                        ineq_multipliers=mu_r,
                        kkt=float(kkt_r),
                        eq_violation=eq_r,
                        ineq_violation=ineq_r,
                        outer_iters=0,
                        inner_iters=0,
                        eval_counts=counts(),
                        message="starting point certified optimal",
                    )
            lam = np.clip(lam_p * s_eq, -opt.multiplier_max, opt.multiplier_max)
            mu = np.clip(mu_p * s_in, 0.0, opt.multiplier_max)
        except (AttributeError, EvaluationError):
            pass
    rho = float(opt.rho0)

    omega_floor = max(0.25 * opt.kkt_tol, 1e-13)
    eta_floor = max(0.25 * opt.kkt_tol, 1e-13)
    omega = max(_OMEGA0 / rho, omega_floor)
    eta = max(_ETA0 / rho**_ALPHA_ETA, eta_floor)

    v = z / d
    v_bounds = Bounds(lb / d, ub / d)

    merit_violations = 0
    inner_total = 0
    log = _LogWriter(opt.iteration_log_path)

    # Inside the line search, a trial point where the model overflows
    # or fails to evaluate is mapped to a large value so the inner
    # solver backs off.  Evaluations at settled iterates (after the
    # inner solve returns) are not shielded this way: a model that
    # cannot be evaluated where the solver stands raises, carrying the
    # failing node to the caller.
    def al_value_grad(vv):
        zz = vv * d
        try:
            val = nlp.objective(zz)
            g = nlp.objective_gradient(zz).copy()
            if m_eq:
                ch = nlp.eq_residual(zz) / s_eq
                val += lam @ ch + 0.5 * rho * (ch @ ch)
                g += nlp.eq_jac_t_vec(zz, (lam + rho * ch) / s_eq)
            if m_in:
                hinge = np.maximum(0.0, mu + rho * (nlp.path_residual(zz) / s_in))
                val += (hinge @ hinge - mu @ mu) / (2.0 * rho)
                g += nlp.path_jac_t_vec(zz, hinge / s_in)
        except EvaluationError:
            return _BAD_VALUE, np.zeros(vv.size)
        if not np.isfinite(val):
            return _BAD_VALUE, np.zeros(vv.size)
        return val, g * d

    def al_value(vv):
        zz = vv * d
        try:
            val = nlp.objective(zz)
            if m_eq:
                ch = nlp.eq_residual(zz) / s_eq
                val += lam @ ch + 0.5 * rho * (ch @ ch)
            if m_in:
                hinge = np.maximum(0.0, mu + rho * (nlp.path_residual(zz) / s_in))
                val += (hinge @ hinge - mu @ mu) / (2.0 * rho)
        except EvaluationError:
            return _BAD_VALUE
        return val if np.isfinite(val) else _BAD_VALUE

    # Fallback inner solver for subproblems the limited-memory method
    # cannot finish: a trust-region Newton iteration whose Hessian
    # products are forward differences of the (scaled) augmented
    # Lagrangian gradient, so penalty and objective curvature are both
    # present and the radius can expand.  One extra gradient per
    # conjugate-gradient step.  Restricted to hinge-free subproblems:
    # the inequality hinge jumps in curvature, and a difference of
    # gradients straddling that kink feeds the trust-region model
    # contradictory products, which derails it.
    can_newton = opt.use_analytic_derivatives and opt.inner_newton_fallback and m_in == 0
    newton_mode = False
    _fd_h = float(np.sqrt(np.finfo(np.float64).eps))
    hess_memo = {"key": None, "g": None}

    def al_hessp(vv, p):
        p_norm = float(np.max(np.abs(p)))
        if p_norm == 0.0:
            return np.zeros(p.size)
        key = vv.tobytes()
        if key != hess_memo["key"]:
            hess_memo["key"] = key
            hess_memo["g"] = al_value_grad(vv)[1]
        step = _fd_h * (1.0 + float(np.max(np.abs(vv)))) / p_norm
        g1 = al_value_grad(vv + step * p)[1]
        return (g1 - hess_memo["g"]) / step

    def run_newton(v_start, gtol, cb):
        memo = {"key": None, "vg": None}

        def fg(vv):
            key = vv.tobytes()
            if key != memo["key"]:
                memo["key"] = key
                memo["vg"] = al_value_grad(vv)
            return memo["vg"]

        res = minimize(
            lambda vv: fg(vv)[0],
            v_start,
            jac=lambda vv: fg(vv)[1],
            hessp=al_hessp,
            method="trust-constr",
            bounds=v_bounds,
            callback=cb,
            # a trust-region iteration is far cheaper than a subproblem
            # restart, so the budget here is deliberately generous
            options=dict(maxiter=max(4 * opt.max_inner, 2000), gtol=gtol, xtol=1e-16, verbose=0),
        )
        # normalize onto the L-BFGS-B status vocabulary the outer loop
        # reads: 1 = iteration budget, 2 = stalled without optimality
        status = {0: 1, 1: 0, 2: 2, 3: 0}.get(res.status, 0)
        return _InnerResult(res.x, int(res.niter), status, str(res.message))

    status = SolveStatus.MAX_ITERS
    message = "outer iteration budget exhausted"
    kkt = np.inf
    best_kkt = np.inf
    kkt_no_improve = 0
    rho_stalls = 0
    ls_stalls = 0
    outer_done = 0

    for outer in range(1, opt.max_outer + 1):
        outer_done = outer
        merit_prev = [al_value(v)]

        def track_merit(vk, _state=None, _prev=merit_prev):
            val = al_value(vk)
            nonlocal merit_violations
            if val > _prev[0] + 1e-8 * (1.0 + abs(_prev[0])):
                merit_violations += 1
            _prev[0] = val

        gtol_eff = max(omega, omega_floor)
        if newton_mode:
            res = run_newton(v, gtol_eff, track_merit)
            inner_total += res.nit
        else:
            common = dict(
                method="L-BFGS-B",
                bounds=v_bounds,
                callback=track_merit,
                options=dict(
                    maxiter=opt.max_inner,
                    maxfun=max(10 * opt.max_inner, 1000),
                    gtol=gtol_eff,
                    ftol=1e-18,
                    maxls=60,
                ),
            )
            if opt.use_analytic_derivatives:
                res = minimize(al_value_grad, v, jac=True, **common)
            else:
                res = minimize(al_value, v, jac=None, **common)
            inner_total += int(res.nit)
            if res.status == 1 and can_newton:
                # the budget ran out mid-subproblem: finish it with the
                # trust-region inner and keep using that from here on
                newton_mode = True
                res = run_newton(res.x, gtol_eff, track_merit)
                inner_total += res.nit

        step_norm = float(np.max(np.abs((res.x - v) * d))) if N else 0.0
        v = res.x
        z = v * d

        ch = nlp.eq_residual(z) / s_eq if m_eq else np.zeros(0)
        phi = nlp.path_residual(z) / s_in if m_in else np.zeros(0)
        # shifted feasibility: an inactive inequality whose multiplier
        # has already collapsed to zero does not count as a violation
        viol = float(np.max(np.abs(ch))) if m_eq else 0.0
        if m_in:
            shifted = np.maximum(phi, -mu / rho)
            viol = max(viol, float(np.max(np.abs(shifted))))
        eq_viol, ineq_viol = _violations(nlp, z)

        lam_trial = np.clip(lam + rho * ch, -opt.multiplier_max, opt.multiplier_max)
        mu_trial = np.clip(np.maximum(0.0, mu + rho * phi), 0.0, opt.multiplier_max)
        kkt = kkt_residual(nlp, z, lam_trial / s_eq, mu_trial / s_in)
        if log.enabled:
            log.row(outer, float(nlp.objective(z)), eq_viol, ineq_viol, kkt, step_norm, rho, int(res.nit))

        # stagnation only counts once the subproblem tolerance has hit
        # its floor; while omega still tightens, flat stretches of the
        # optimality residual are part of the normal schedule
        if kkt < 0.9 * best_kkt:
            best_kkt = kkt
            kkt_no_improve = 0
        elif omega <= omega_floor * (1.0 + 1e-9):
            kkt_no_improve += 1

        if viol <= eta:
            lam = lam_trial
            mu = mu_trial
            if kkt <= opt.kkt_tol and eq_viol <= opt.kkt_tol and ineq_viol <= opt.kkt_tol:
                status = SolveStatus.CONVERGED
                message = "first-order optimality reached"
                break
            omega = max(omega / rho, omega_floor)
            eta = max(eta / rho**_BETA_ETA, eta_floor)
            rho_stalls = 0
        else:
            # a violation already at rounding level is a precision
            # stall, not infeasibility; leave it to the refinement
            if viol <= max(1e-8, 10.0 * eta_floor) and rho >= 1e4 * opt.rho0:
                message = "feasibility at rounding level"
                break
            if rho >= opt.rho_max:
                rho_stalls += 1
                if rho_stalls >= 3:
                    status = SolveStatus.INFEASIBLE
                    message = "constraint violation stagnates at maximal penalty"
                    break
            rho = min(rho * opt.rho_growth, opt.rho_max)
            omega = max(_OMEGA0 / rho, omega_floor)
            eta = max(_ETA0 / rho**_ALPHA_ETA, eta_floor)

        # an abnormal inner exit with no movement cannot make progress
        moved = step_norm > 1e-14 * (1.0 + float(np.max(np.abs(z))))
        if res.status == 2 and not moved:
            ls_stalls += 1
            if ls_stalls >= 3:
                status = SolveStatus.LINE_SEARCH_FAILURE
                message = f"inner solver stalled: {res.message}"
                break
        else:
            ls_stalls = 0

        if kkt_no_improve >= 8:
            message = "optimality residual stagnated"
            break

    log.close()

    eq_mult = lam / s_eq if m_eq else lam.copy()
    ineq_mult = np.maximum(mu, 0.0) / s_in if m_in else np.maximum(mu, 0.0)
    eq_viol, ineq_viol = _violations(nlp, z)
    kkt = kkt_residual(nlp, z, eq_mult, ineq_mult)

    if kkt > opt.kkt_tol and status is not SolveStatus.INFEASIBLE and eq_viol <= 1e-3:
        z, eq_mult, ineq_mult = _polish_kkt(nlp, z, eq_mult, ineq_mult, opt.kkt_tol)
        eq_viol, ineq_viol = _violations(nlp, z)
        kkt = kkt_residual(nlp, z, eq_mult, ineq_mult)

    if kkt <= opt.kkt_tol and eq_viol <= opt.kkt_tol and ineq_viol <= opt.kkt_tol:
        if status is not SolveStatus.CONVERGED:
            message = "first-order optimality reached after refinement"
        status = SolveStatus.CONVERGED
    elif status is SolveStatus.CONVERGED:
        # the multiplier safeguard clip can only have tightened things;
        # re-verify honestly rather than trust the loop's verdict
        status = SolveStatus.MAX_ITERS
        message = "post-check exceeded tolerance"

    return NlpSolution(
        status=status,
        z=z.copy(),
        objective=float(nlp.objective(z)),
        eq_multipliers=eq_mult,
        ineq_multipliers=ineq_mult,
        kkt=float(kkt),
        eq_violation=eq_viol,
        ineq_violation=ineq_viol,
        outer_iters=outer_done,
        inner_iters=inner_total,
        eval_counts=counts(),
        merit_violations=merit_violations,
        message=message,
    )
