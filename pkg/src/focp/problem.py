"""Problem container, validation and rescaling to the unit interval.

A fractional optimal control problem is stated on [0, t_f] as

    minimize    h(t_f, x(t_f)) + int_0^{t_f} g(x, u, t) dt
    subject to  D^alpha x = f(x, u, t)          (Caputo, order alpha)
                x(0) = x0
                psi(x(t_f), t_f) = 0            (terminal, optional)
                phi(x, u, t) <= 0               (path, optional)
                u_lb <= u <= u_ub               (box bounds, optional)

with t_f either fixed or a decision variable.  Transcription always
works on the unit grid, so :func:`rescale` substitutes t = t_f * tau
and produces a :class:`ScaledFocp` whose dynamics carry the factor
t_f^alpha and whose running cost carries the factor t_f.

Callback convention
-------------------
All running callbacks are vectorized over nodes: for m nodes they
receive ``x`` of shape (m, p), ``u`` of shape (m, q) and ``t`` of shape
(m,) and return

    g   -> (m,)        g_x -> (m, p)       g_u -> (m, q)     g_t -> (m,)
    f   -> (m, p)      f_x -> (m, p, p)    f_u -> (m, p, q)  f_t -> (m, p)
    phi -> (m, r2)     phi_x -> (m, r2, p) phi_u -> (m, r2, q)
                       phi_t -> (m, r2)

where ``f_x[i, a, b]`` is the partial of component a with respect to
state b at node i.  Endpoint callbacks are scalar in the node sense:
``h(t_f, x_f)`` returns a float, ``h_x`` a (p,) vector, ``h_t`` a
float; ``psi(x_f, t_f)`` returns (r1,) with ``psi_x`` (r1, p) and
``psi_t`` (r1,).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import EvaluationError, ParameterDomainError, ProblemValidationError

__all__ = ["FocpProblem", "ScaledFocp", "validate", "rescale"]

#: Lower bound applied to a free final time, keeping t_f^alpha smooth.
DEFAULT_TF_LOWER = 1e-3

#: Starting value for a free final time when the caller gives none.
DEFAULT_TF_GUESS = 1.0


@dataclass
class FocpProblem:
    """Definition of one fractional optimal control problem.

    Only ``alpha``, ``x0``, ``num_controls``, the running cost trio
    (g, g_x, g_u) and the dynamics trio (f, f_x, f_u) are mandatory.
    Time partials g_t / f_t become mandatory when t_f is free, since
    the final-time gradient needs them.
    """

    alpha: float
    x0: np.ndarray
    num_controls: int

    g: Callable = None
    g_x: Callable = None
    g_u: Callable = None
    g_t: Callable = None

    f: Callable = None
    f_x: Callable = None
    f_u: Callable = None
    f_t: Callable = None

    h: Optional[Callable] = None
    h_x: Optional[Callable] = None
    h_t: Optional[Callable] = None

    psi: Optional[Callable] = None
    psi_x: Optional[Callable] = None
    psi_t: Optional[Callable] = None

    phi: Optional[Callable] = None
    phi_x: Optional[Callable] = None
    phi_u: Optional[Callable] = None
    phi_t: Optional[Callable] = None

    t_f: Optional[float] = None
    tf_lower: float = DEFAULT_TF_LOWER
    tf_upper: Optional[float] = None
    tf_guess: float = DEFAULT_TF_GUESS

    control_lower: Optional[np.ndarray] = None
    control_upper: Optional[np.ndarray] = None

    name: str = ""

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=np.float64))
        if self.control_lower is not None:
            self.control_lower = np.asarray(self.control_lower, dtype=np.float64)
        if self.control_upper is not None:
            self.control_upper = np.asarray(self.control_upper, dtype=np.float64)

    @property
    def num_states(self) -> int:
        return self.x0.shape[0]

    @property
    def free_tf(self) -> bool:
        return self.t_f is None


def _probe_shape(findings, what, fn, args, expected):
    """Call fn(*args), record a finding on wrong shape / non-finite output."""
    try:
        out = np.asarray(fn(*args), dtype=np.float64)
    except Exception as exc:  # noqa: BLE001 - surface the callback failure
        findings.append(f"{what} raised {type(exc).__name__}: {exc}")
        return None
    if out.shape != expected:
        findings.append(f"{what} returned shape {out.shape}, expected {expected}")
        return None
    if not np.all(np.isfinite(out)):
        findings.append(f"{what} returned non-finite values at the probe point")
        return None
    return out


def validate(problem: FocpProblem) -> list[str]:
    """Check a problem definition and return a list of findings.

    An empty list means the problem is well formed.  Checks cover the
    fractional order, the horizon setup, presence of the required
    callbacks and partials, and shape/finiteness of every supplied
    callback at the probe point x = x0, u = 0, t = 0 (tiled over three
    nodes so the batching convention is exercised too).
    """
    findings: list[str] = []
    p = problem.num_states
    q = int(problem.num_controls)

    alpha = problem.alpha
    if not np.isfinite(alpha) or not 0.0 < float(alpha) <= 1.0:
        findings.append(f"alpha must lie in (0, 1], got {alpha!r}")
    if p < 1 or not np.all(np.isfinite(problem.x0)):
        findings.append("x0 must be a non-empty finite vector")
    if q < 1:
        findings.append(f"num_controls must be >= 1, got {q}")

    if problem.free_tf:
        if not problem.tf_lower > 0.0:
            findings.append(f"free t_f needs a positive lower bound, got {problem.tf_lower!r}")
        if problem.tf_upper is not None and problem.tf_upper <= problem.tf_lower:
            findings.append("tf_upper must exceed tf_lower")
        if not problem.tf_guess >= problem.tf_lower:
            findings.append("tf_guess must be >= tf_lower")
    elif not (np.isfinite(problem.t_f) and problem.t_f > 0.0):
        findings.append(f"fixed t_f must be positive, got {problem.t_f!r}")

    required = ["g", "g_x", "g_u", "f", "f_x", "f_u"]
    if problem.free_tf:
        required += ["g_t", "f_t"]
    for name in required:
        if getattr(problem, name) is None:
            findings.append(f"missing required callback {name}")

    groups = [("h", ("h_x", "h_t")), ("psi", ("psi_x", "psi_t")), ("phi", ("phi_x", "phi_u"))]
    for head, tail in groups:
        if getattr(problem, head) is not None:
            for name in tail:
                if getattr(problem, name) is None:
                    findings.append(f"{head} is supplied but its partial {name} is missing")
    if problem.phi is not None and problem.free_tf and problem.phi_t is None:
        findings.append("phi with free t_f needs phi_t")
    if problem.psi is not None and problem.free_tf and problem.psi_t is None:
        findings.append("psi with free t_f needs psi_t")

    for bound, name in ((problem.control_lower, "control_lower"), (problem.control_upper, "control_upper")):
        if bound is not None and bound.shape != (q,):
            findings.append(f"{name} must have shape ({q},), got {bound.shape}")
    if (
        problem.control_lower is not None
        and problem.control_upper is not None
        and problem.control_lower.shape == (q,)
        and problem.control_upper.shape == (q,)
        and not np.all(problem.control_lower < problem.control_upper)
    ):
        findings.append("control_lower must be strictly below control_upper")

    if findings:
        return findings  # shape probes need a structurally sound problem

    m = 3
    x = np.tile(problem.x0, (m, 1))
    u = np.zeros((m, q))
    t = np.zeros(m)
    run = [
        ("g", problem.g, (m,)),
        ("g_x", problem.g_x, (m, p)),
        ("g_u", problem.g_u, (m, q)),
        ("g_t", problem.g_t, (m,)),
        ("f", problem.f, (m, p)),
        ("f_x", problem.f_x, (m, p, p)),
        ("f_u", problem.f_u, (m, p, q)),
        ("f_t", problem.f_t, (m, p)),
    ]
    for name, fn, expected in run:
        if fn is not None:
            _probe_shape(findings, name, fn, (x, u, t), expected)

    tf_probe = problem.tf_guess if problem.free_tf else problem.t_f
    if problem.h is not None:
        _probe_shape(
            findings,
            "h",
            lambda tf, xf: np.asarray(problem.h(tf, xf), dtype=np.float64).reshape(()),
            (tf_probe, problem.x0),
            (),
        )
        _probe_shape(findings, "h_x", problem.h_x, (tf_probe, problem.x0), (p,))
        if problem.h_t is not None:
            _probe_shape(
                findings,
                "h_t",
                lambda tf, xf: np.asarray(problem.h_t(tf, xf), dtype=np.float64).reshape(()),
                (tf_probe, problem.x0),
                (),
            )
    if problem.psi is not None:
        try:
            psi0 = np.atleast_1d(np.asarray(problem.psi(problem.x0, tf_probe), dtype=np.float64))
            r1 = psi0.shape[0]
            if not np.all(np.isfinite(psi0)):
                findings.append("psi returned non-finite values at the probe point")
            _probe_shape(findings, "psi_x", problem.psi_x, (problem.x0, tf_probe), (r1, p))
            if problem.psi_t is not None:
                _probe_shape(findings, "psi_t", problem.psi_t, (problem.x0, tf_probe), (r1,))
        except Exception as exc:  # noqa: BLE001
            findings.append(f"psi raised {type(exc).__name__}: {exc}")
    if problem.phi is not None:
        try:
            phi0 = np.asarray(problem.phi(x, u, t), dtype=np.float64)
            if phi0.ndim != 2 or phi0.shape[0] != m:
                findings.append(f"phi must return (m, r2), got {phi0.shape}")
            else:
                r2 = phi0.shape[1]
                _probe_shape(findings, "phi_x", problem.phi_x, (x, u, t), (m, r2, p))
                _probe_shape(findings, "phi_u", problem.phi_u, (x, u, t), (m, r2, q))
                if problem.phi_t is not None:
                    _probe_shape(findings, "phi_t", problem.phi_t, (x, u, t), (m, r2))
        except Exception as exc:  # noqa: BLE001
            findings.append(f"phi raised {type(exc).__name__}: {exc}")

    return findings


def _require_finite(name: str, out: np.ndarray) -> np.ndarray:
    """Raise EvaluationError carrying the first offending node index."""
    if not np.all(np.isfinite(out)):
        bad = np.where(~np.isfinite(out.reshape(out.shape[0], -1)).all(axis=1))[0]
        node = int(bad[0]) if bad.size else None
        raise EvaluationError(name, node=node)
    return out


class ScaledFocp:
    """A problem rescaled to tau in [0, 1] by the substitution t = t_f tau.

    The running cost integrand is multiplied by t_f and the dynamics by
    t_f^alpha, so on the unit grid

        minimize   h(t_f, x(1)) + int_0^1  t_f g(x, u, t_f tau) dtau
        s.t.       x(tau) = x0 + I^alpha [ t_f^alpha f(x, u, t_f tau) ]

    All evaluators below return the rescaled quantities together with
    their partials, including the total derivative with respect to a
    free t_f (chain rule through both the explicit factor and the time
    argument).
    """

    def __init__(self, problem: FocpProblem):
        findings = validate(problem)
        if findings:
            raise ProblemValidationError(findings)
        self.problem = problem
        self.alpha = float(problem.alpha)
        self.x0 = problem.x0.copy()
        self.p = problem.num_states
        self.q = int(problem.num_controls)
        self.free_tf = problem.free_tf
        self.t_f = None if problem.free_tf else float(problem.t_f)
        self.tf_lower = float(problem.tf_lower)
        self.tf_upper = None if problem.tf_upper is None else float(problem.tf_upper)
        self.tf_guess = float(problem.tf_guess if problem.free_tf else problem.t_f)
        self.control_lower = problem.control_lower
        self.control_upper = problem.control_upper
        self.name = problem.name

        tf0 = self.tf_guess
        if problem.psi is not None:
            self.r1 = np.atleast_1d(np.asarray(problem.psi(self.x0, tf0), dtype=np.float64)).shape[0]
        else:
            self.r1 = 0
        if problem.phi is not None:
            probe = np.asarray(
                problem.phi(self.x0[None, :], np.zeros((1, self.q)), np.zeros(1)),
                dtype=np.float64,
            )
            self.r2 = probe.shape[1]
        else:
            self.r2 = 0

    # -- running cost -------------------------------------------------

    def lagrangian(self, x, u, tau, tf) -> np.ndarray:
        """t_f-scaled running cost values at the nodes, shape (m,)."""
        g = np.asarray(self.problem.g(x, u, tf * tau), dtype=np.float64)
        return _require_finite("cost", tf * g)

    def lagrangian_grad(self, x, u, tau, tf):
        """(values, d/dx, d/du, d/dt_f) of the scaled running cost."""
        pr = self.problem
        t = tf * tau
        g = np.asarray(pr.g(x, u, t), dtype=np.float64)
        gx = np.asarray(pr.g_x(x, u, t), dtype=np.float64)
        gu = np.asarray(pr.g_u(x, u, t), dtype=np.float64)
        if self.free_tf:
            gt = np.asarray(pr.g_t(x, u, t), dtype=np.float64)
            dtf = g + tf * tau * gt
        else:
            dtf = None
        _require_finite("cost", g)
        return tf * g, tf * gx, tf * gu, dtf

    # -- dynamics ------------------------------------------------------

    def dynamics(self, x, u, tau, tf) -> np.ndarray:
        """t_f^alpha-scaled dynamics values at the nodes, shape (m, p)."""
        fv = np.asarray(self.problem.f(x, u, tf * tau), dtype=np.float64)
        return _require_finite("dynamics", tf**self.alpha * fv)

    def dynamics_grad(self, x, u, tau, tf):
        """(values, d/dx, d/du, d/dt_f) of the scaled dynamics.

        The t_f derivative combines the power factor and the time
        argument: t_f^(alpha-1) * (alpha f + t_f tau f_t).
        """
        pr = self.problem
        a = self.alpha
        t = tf * tau
        fv = np.asarray(pr.f(x, u, t), dtype=np.float64)
        fx = np.asarray(pr.f_x(x, u, t), dtype=np.float64)
        fu = np.asarray(pr.f_u(x, u, t), dtype=np.float64)
        if self.free_tf:
            ft = np.asarray(pr.f_t(x, u, t), dtype=np.float64)
            dtf = tf ** (a - 1.0) * (a * fv + tf * tau[:, None] * ft)
        else:
            dtf = None
        _require_finite("dynamics", fv)
        s = tf**a
        return s * fv, s * fx, s * fu, dtf

    # -- endpoint terms ------------------------------------------------

    def mayer(self, tf, xf):
        """(value, d/dx_f, d/dt_f) of the endpoint cost; zeros if absent."""
        pr = self.problem
        if pr.h is None:
            return 0.0, np.zeros(self.p), 0.0
        val = float(pr.h(tf, xf))
        hx = np.asarray(pr.h_x(tf, xf), dtype=np.float64)
        ht = float(pr.h_t(tf, xf)) if pr.h_t is not None else 0.0
        if not (np.isfinite(val) and np.isfinite(ht) and np.all(np.isfinite(hx))):
            raise EvaluationError("endpoint cost")
        return val, hx, ht

    def terminal(self, xf, tf):
        """(psi, d/dx_f, d/dt_f) at the final node; empty arrays if absent."""
        pr = self.problem
        if pr.psi is None:
            return np.zeros(0), np.zeros((0, self.p)), np.zeros(0)
        val = np.atleast_1d(np.asarray(pr.psi(xf, tf), dtype=np.float64))
        jx = np.asarray(pr.psi_x(xf, tf), dtype=np.float64)
        jt = (
            np.asarray(pr.psi_t(xf, tf), dtype=np.float64)
            if pr.psi_t is not None
            else np.zeros(self.r1)
        )
        _require_finite("terminal constraint", val)
        return val, jx, jt

    # -- path constraints ----------------------------------------------

    def path(self, x, u, tau, tf) -> np.ndarray:
        """Path constraint values phi <= 0 at the nodes, shape (m, r2)."""
        if self.problem.phi is None:
            return np.zeros((x.shape[0], 0))
        val = np.asarray(self.problem.phi(x, u, tf * tau), dtype=np.float64)
        return _require_finite("path constraint", val)

    def path_grad(self, x, u, tau, tf):
        """(values, d/dx, d/du, d/dt_f) of the path constraints."""
        pr = self.problem
        if pr.phi is None:
            m = x.shape[0]
            return (
                np.zeros((m, 0)),
                np.zeros((m, 0, self.p)),
                np.zeros((m, 0, self.q)),
                np.zeros((m, 0)) if self.free_tf else None,
            )
        t = tf * tau
        val = np.asarray(pr.phi(x, u, t), dtype=np.float64)
        jx = np.asarray(pr.phi_x(x, u, t), dtype=np.float64)
        ju = np.asarray(pr.phi_u(x, u, t), dtype=np.float64)
        if self.free_tf:
            jt = np.asarray(pr.phi_t(x, u, t), dtype=np.float64)
            dtf = tau[:, None] * jt
        else:
            dtf = None
        _require_finite("path constraint", val)
        return val, jx, ju, dtf


def rescale(problem: FocpProblem) -> ScaledFocp:
    """Validate a problem and wrap it in its unit-interval form.

    Raises :class:`ProblemValidationError` listing every finding when
    the definition is not usable.
    """
    return ScaledFocp(problem)
