"""Direct transcription of a scaled problem into a dense-structured NLP.

The decision vector interleaves states and controls node by node,

    z = [x_0, u_0, x_1, u_1, ..., x_n, u_n (, t_f)],

so node blocks stay contiguous.  With X(z) the (n+1, p) state table,
F(z) the table of scaled dynamics values and W the fractional
integration matrix, the discretized Caputo dynamics become the
equality residual

    c(z) = vec(X - x0 - W F) = 0,

one p-block per node.  Row 0 of W is zero, so the first block pins the
initial state exactly.  The objective is the quadrature sum

    J(z) = h(t_f, x_n) + sum_i w_i * [t_f g(x_i, u_i, t_f tau_i)],

and terminal/path constraints are sampled at the final node and at
every node respectively.  All derivative evaluators are exact
derivatives of these expressions; :func:`fd_check` verifies them
against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError
from .fracint import FracIntegrationMatrix, QuadratureWeights, Scheme, build_matrix, quad_weights
from .problem import FocpProblem, ScaledFocp, rescale

__all__ = ["DecisionLayout", "TranscribedNlp", "build", "fd_check"]


@dataclass(frozen=True)
class DecisionLayout:
    """Index arithmetic for the interleaved decision vector."""

    n: int
    p: int
    q: int
    free_tf: bool

    @property
    def node_width(self) -> int:
        return self.p + self.q

    @property
    def size(self) -> int:
        """Total number of decision variables."""
        return (self.n + 1) * self.node_width + (1 if self.free_tf else 0)

    @property
    def tf_index(self):
        return self.size - 1 if self.free_tf else None

    def state_slice(self, i: int) -> slice:
        off = i * self.node_width
        return slice(off, off + self.p)

    def control_slice(self, i: int) -> slice:
        off = i * self.node_width + self.p
        return slice(off, off + self.q)

    def state_indices(self) -> np.ndarray:
        """Flat indices of all state entries, node-major."""
        base = np.arange(self.n + 1)[:, None] * self.node_width
        return (base + np.arange(self.p)[None, :]).ravel()

    def control_indices(self) -> np.ndarray:
        base = np.arange(self.n + 1)[:, None] * self.node_width + self.p
        return (base + np.arange(self.q)[None, :]).ravel()

    def pack(self, X: np.ndarray, U: np.ndarray, tf: float | None = None) -> np.ndarray:
        """Assemble a decision vector from node tables (and t_f if free)."""
        z = np.empty(self.size)
        body = np.hstack([X, U]).ravel()
        z[: body.size] = body
        if self.free_tf:
            if tf is None:
                raise ValueError("free final time requires a tf value to pack")
            z[-1] = tf
        return z

    def unpack(self, z: np.ndarray):
        """Split a decision vector into (X, U, tf_or_None)."""
        body = z[: (self.n + 1) * self.node_width].reshape(self.n + 1, self.node_width)
        X = body[:, : self.p]
        U = body[:, self.p :]
        tf = float(z[-1]) if self.free_tf else None
        return X, U, tf


class TranscribedNlp:
    """Dense-structured NLP produced by direct transcription.

    Public evaluators return values or exact derivatives of the
    objective, dynamics, terminal and path residuals.  Structured
    transpose products (``eq_jac_t_vec``, ``path_jac_t_vec``) let the
    solver avoid materializing Jacobians; the dense evaluators remain
    available for checking and export.

    Every public evaluation bumps a counter in ``eval_counts`` so
    derivative strategies can be compared by work, not wall time.
    """

    def __init__(self, scaled: ScaledFocp, matrix: FracIntegrationMatrix, weights: QuadratureWeights):
        self.scaled = scaled
        self.matrix = matrix
        self.weights = weights
        self.n = matrix.n
        self.tau = matrix.grid
        self.layout = DecisionLayout(matrix.n, scaled.p, scaled.q, scaled.free_tf)
        self.eval_counts = {
            "objective": 0,
            "objective_gradient": 0,
            "dynamics_residual": 0,
            "dynamics_jacobian": 0,
            "terminal_residual": 0,
            "terminal_jacobian": 0,
            "path_residual": 0,
            "path_jacobian": 0,
        }
        self._cache_key = None
        self._cache = None

    # -- bookkeeping ----------------------------------------------------

    @property
    def num_eq(self) -> int:
        """Rows of the stacked equality residual (dynamics + terminal)."""
        return (self.n + 1) * self.scaled.p + self.scaled.r1

    @property
    def num_path(self) -> int:
        return (self.n + 1) * self.scaled.r2

    def total_evaluations(self) -> int:
        """Objective plus constraint value evaluations so far."""
        c = self.eval_counts
        return (
            c["objective"]
            + c["dynamics_residual"]
            + c["terminal_residual"]
            + c["path_residual"]
        )

    def bounds(self):
        """(lower, upper) arrays for the decision vector.

        States are free; control boxes and the free-final-time bracket
        come from the problem definition.
        """
        N = self.layout.size
        lb = np.full(N, -np.inf)
        ub = np.full(N, np.inf)
        sc = self.scaled
        if sc.control_lower is not None or sc.control_upper is not None:
            ci = self.layout.control_indices()
            if sc.control_lower is not None:
                lb[ci] = np.tile(sc.control_lower, self.n + 1)
            if sc.control_upper is not None:
                ub[ci] = np.tile(sc.control_upper, self.n + 1)
        if self.layout.free_tf:
            lb[-1] = sc.tf_lower
            ub[-1] = np.inf if sc.tf_upper is None else sc.tf_upper
        return lb, ub

    def default_initial_guess(self) -> np.ndarray:
        """x0 replicated at every node, controls at 0 (clipped into their box)."""
        sc = self.scaled
        X = np.tile(sc.x0, (self.n + 1, 1))
        U = np.zeros((self.n + 1, sc.q))
        if sc.control_lower is not None:
            U = np.maximum(U, sc.control_lower)
        if sc.control_upper is not None:
            U = np.minimum(U, sc.control_upper)
        return self.layout.pack(X, U, sc.tf_guess if sc.free_tf else None)

    def split(self, z):
        """(X, U, tf) with the fixed final time substituted when needed."""
        X, U, tf = self.layout.unpack(np.asarray(z, dtype=np.float64))
        if tf is None:
            tf = self.scaled.t_f
        return X, U, tf

    def simulate(self, U, tf: float | None = None) -> np.ndarray:
        """State table satisfying the discrete dynamics for a given control table.

        Solves X = x0 + W F(X, U) by forward substitution: every scheme
        matrix is lower triangular, so node i depends only on nodes
        0..i.  Rows with a zero diagonal entry are explicit; the others
        need one small Newton solve per node, warm-started from the
        previous node.  The result makes ``dynamics_residual`` vanish,
        which is useful for dynamics-consistent starting points and for
        evaluating the cost of a fixed control.
        """
        sc = self.scaled
        U = np.asarray(U, dtype=np.float64).reshape(self.n + 1, sc.q)
        if tf is None:
            tf = sc.t_f if sc.t_f is not None else sc.tf_guess
        tf = float(tf)
        W = self.matrix.values
        X = np.empty((self.n + 1, sc.p))
        F = np.empty((self.n + 1, sc.p))
        X[0] = sc.x0
        F[0] = sc.dynamics(X[:1], U[:1], self.tau[:1], tf)[0]
        eye = np.eye(sc.p)
        for i in range(1, self.n + 1):
            b = sc.x0 + W[i, :i] @ F[:i]
            c = W[i, i]
            if c == 0.0:
                X[i] = b
            else:
                xi = X[i - 1].copy()
                ui, ti = U[i : i + 1], self.tau[i : i + 1]
                for _ in range(30):
                    fv, fx, _, _ = sc.dynamics_grad(xi[None, :], ui, ti, tf)
                    res = xi - b - c * fv[0]
                    if np.max(np.abs(res)) <= 1e-13 * (1.0 + np.max(np.abs(xi))):
                        break
                    xi = xi - np.linalg.solve(eye - c * fx[0], res)
                else:
                    raise EvaluationError(
                        f"implicit node solve did not converge at node {i}"
                    )
                X[i] = xi
            if not np.all(np.isfinite(X[i])):
                raise EvaluationError(
                    f"forward simulation diverged at node {i}; "
                    "the discrete dynamics are unstable at this grid"
                )
            F[i] = sc.dynamics(X[i : i + 1], U[i : i + 1], self.tau[i : i + 1], tf)[0]
        return X

    def control_cost(self, U, tf: float | None = None):
        """Objective and its control gradient with states eliminated.

        Treats the discrete dynamics as an implicit definition of
        X(U) (via :meth:`simulate`) and returns ``(J, dJ/dU)`` for the
        composite map U -> J(X(U), U).  The gradient comes from one
        backward substitution with the transposed dynamics Jacobian
        (the adjoint recursion), so the cost of a gradient matches a
        simulation, independent of the number of controls.  Path
        constraints are not part of the reduced objective; only
        problems whose inequalities are control boxes should be
        optimized this way.
        """
        sc = self.scaled
        U = np.asarray(U, dtype=np.float64).reshape(self.n + 1, sc.q)
        if tf is None:
            tf = sc.t_f if sc.t_f is not None else sc.tf_guess
        tf = float(tf)
        X = self.simulate(U, tf)
        z = self.layout.pack(X, U, tf if self.layout.free_tf else None)
        J = self.objective(z)
        g = self.objective_gradient(z)
        lay = self.layout
        gX = g[lay.state_indices()].reshape(self.n + 1, sc.p)
        gU = g[lay.control_indices()].reshape(self.n + 1, sc.q)
        _, Fx, Fu, _ = sc.dynamics_grad(X, U, self.tau, tf)
        W = self.matrix.values
        lam = np.zeros((self.n + 1, sc.p))
        grad = np.empty((self.n + 1, sc.q))
        eye = np.eye(sc.p)
        for j in range(self.n, -1, -1):
            s = W[j + 1 :, j] @ lam[j + 1 :]
            rhs = gX[j] + Fx[j].T @ s
            c = W[j, j]
            if c == 0.0:
                lam[j] = rhs
            else:
                lam[j] = np.linalg.solve(eye - c * Fx[j].T, rhs)
            grad[j] = gU[j] + Fu[j].T @ (c * lam[j] + s)
        return J, grad.ravel()

    # -- cached node evaluation ------------------------------------------

    def _nodes(self, z: np.ndarray, need_grad: bool) -> dict:
        key = z.tobytes()
        if key != self._cache_key:
            self._cache_key = key
            self._cache = {"grad": False}
            X, U, tf = self.split(z)
            e = self._cache
            e["X"], e["U"], e["tf"] = X, U, tf
            e["G"] = self.scaled.lagrangian(X, U, self.tau, tf)
            e["F"] = self.scaled.dynamics(X, U, self.tau, tf)
            e["Phi"] = self.scaled.path(X, U, self.tau, tf) if self.scaled.r2 else None
        e = self._cache
        if need_grad and not e["grad"]:
            X, U, tf = e["X"], e["U"], e["tf"]
            e["G"], e["Gx"], e["Gu"], e["Gtf"] = self.scaled.lagrangian_grad(X, U, self.tau, tf)
            e["F"], e["Fx"], e["Fu"], e["Ftf"] = self.scaled.dynamics_grad(X, U, self.tau, tf)
            if self.scaled.r2:
                e["Phi"], e["Phix"], e["Phiu"], e["Phitf"] = self.scaled.path_grad(
                    X, U, self.tau, tf
                )
            e["grad"] = True
        return e

    # -- objective --------------------------------------------------------

    def objective(self, z) -> float:
        self.eval_counts["objective"] += 1
        z = np.asarray(z, dtype=np.float64)
        e = self._nodes(z, need_grad=False)
        hval, _, _ = self.scaled.mayer(e["tf"], e["X"][-1])
        return float(hval + self.weights.values @ e["G"])

    def objective_gradient(self, z) -> np.ndarray:
        self.eval_counts["objective_gradient"] += 1
        z = np.asarray(z, dtype=np.float64)
        e = self._nodes(z, need_grad=True)
        w = self.weights.values
        lay = self.layout
        out = np.zeros(lay.size)
        out[lay.state_indices()] = (w[:, None] * e["Gx"]).ravel()
        out[lay.control_indices()] = (w[:, None] * e["Gu"]).ravel()
        hval, hx, ht = self.scaled.mayer(e["tf"], e["X"][-1])
        out[lay.state_slice(self.n)] += hx
        if lay.free_tf:
            out[-1] = ht + w @ e["Gtf"]
        return out

    # -- dynamics -----------------------------------------------------------

    def dynamics_residual(self, z) -> np.ndarray:
        """vec(X - x0 - W F), one p-block per node; block 0 pins x(0)."""
        self.eval_counts["dynamics_residual"] += 1
        z = np.asarray(z, dtype=np.float64)
        e = self._nodes(z, need_grad=False)
        C = e["X"] - self.scaled.x0[None, :] - self.matrix.values @ e["F"]
        return C.ravel()

    def dynamics_jacobian(self, z) -> np.ndarray:
        """Dense exact Jacobian of the dynamics residual."""
        self.eval_counts["dynamics_jacobian"] += 1
        z = np.asarray(z, dtype=np.float64)
        e = self._nodes(z, need_grad=True)
        n, p, q = self.n, self.scaled.p, self.scaled.q
        lay = self.layout
        W = self.matrix.values
        J = np.zeros(((n + 1) * p, lay.size))
        rows = np.arange((n + 1) * p)
        # selector: d x_i / d z
        J[rows, lay.state_indices()] = 1.0
        for j in range(n + 1):
            # -W[i, j] * d f_j / d (x_j, u_j), all rows i at once
            bx = -W[:, j, None, None] * e["Fx"][j][None, :, :]
            J[:, lay.state_slice(j)] += bx.reshape(-1, p)
            bu = -W[:, j, None, None] * e["Fu"][j][None, :, :]
            J[:, lay.control_slice(j)] += bu.reshape(-1, q)
        if lay.free_tf:
            J[:, -1] = -(W @ e["Ftf"]).ravel()
        return J

    # -- terminal ----------------------------------------------------------

    def terminal_residual(self, z) -> np.ndarray:
        self.eval_counts["terminal_residual"] += 1
        X, _, tf = self.split(np.asarray(z, dtype=np.float64))
        val, _, _ = self.scaled.terminal(X[-1], tf)
        return val

    def terminal_jacobian(self, z) -> np.ndarray:
        self.eval_counts["terminal_jacobian"] += 1
        X, _, tf = self.split(np.asarray(z, dtype=np.float64))
        _, jx, jt = self.scaled.terminal(X[-1], tf)
        lay = self.layout
        J = np.zeros((self.scaled.r1, lay.size))
        J[:, lay.state_slice(self.n)] = jx
        if lay.free_tf:
            J[:, -1] = jt
        return J

    # -- path ---------------------------------------------------------------

    def path_residual(self, z) -> np.ndarray:
        """phi <= 0 sampled node-major: r2 rows per node."""
        self.eval_counts["path_residual"] += 1
        z = np.asarray(z, dtype=np.float64)
        if not self.scaled.r2:
            return np.zeros(0)
        e = self._nodes(z, need_grad=False)
        return e["Phi"].ravel()

    def path_jacobian(self, z) -> np.ndarray:
        self.eval_counts["path_jacobian"] += 1
        z = np.asarray(z, dtype=np.float64)
        lay = self.layout
        if not self.scaled.r2:
            return np.zeros((0, lay.size))
        e = self._nodes(z, need_grad=True)
        n, r2 = self.n, self.scaled.r2
        J = np.zeros(((n + 1) * r2, lay.size))
        for i in range(n + 1):
            rows = slice(i * r2, (i + 1) * r2)
            J[rows, lay.state_slice(i)] = e["Phix"][i]
            J[rows, lay.control_slice(i)] = e["Phiu"][i]
        if lay.free_tf:
            J[:, -1] = e["Phitf"].ravel()
        return J

    # -- stacked equality view (dynamics + terminal) -------------------------

    def eq_residual(self, z) -> np.ndarray:
        c = self.dynamics_residual(z)
        if self.scaled.r1:
            return np.concatenate([c, self.terminal_residual(z)])
        return c

    def eq_jac_t_vec(self, z, v: np.ndarray) -> np.ndarray:
        """Exact J_eq(z)^T v without forming the Jacobian.

        Splits v into the dynamics part (reshaped to one p-row per
        node) and the terminal part; the W-coupled term reduces to a
        single W^T matmul followed by per-node contractions.
        """
        z = np.asarray(z, dtype=np.float64)
        e = self._nodes(z, need_grad=True)
        n, p = self.n, self.scaled.p
        lay = self.layout
        V = v[: (n + 1) * p].reshape(n + 1, p)
        out = np.zeros(lay.size)
        M = self.matrix.values.T @ V
        out[lay.state_indices()] = (V - np.einsum("jab,ja->jb", e["Fx"], M)).ravel()
        out[lay.control_indices()] = -np.einsum("jab,ja->jb", e["Fu"], M).ravel()
        if lay.free_tf:
            out[-1] = -np.sum((self.matrix.values @ e["Ftf"]) * V)
        if self.scaled.r1:
            v2 = v[(n + 1) * p :]
            _, jx, jt = self.scaled.terminal(e["X"][-1], e["tf"])
            out[lay.state_slice(n)] += jx.T @ v2
            if lay.free_tf:
                out[-1] += jt @ v2
        return out

    def path_jac_t_vec(self, z, v: np.ndarray) -> np.ndarray:
        """Exact J_phi(z)^T v via per-node contractions."""
        z = np.asarray(z, dtype=np.float64)
        lay = self.layout
        out = np.zeros(lay.size)
        if not self.scaled.r2:
            return out
        e = self._nodes(z, need_grad=True)
        Vp = v.reshape(self.n + 1, self.scaled.r2)
        out[lay.state_indices()] = np.einsum("ika,ik->ia", e["Phix"], Vp).ravel()
        out[lay.control_indices()] = np.einsum("ika,ik->ia", e["Phiu"], Vp).ravel()
        if lay.free_tf:
            out[-1] = np.sum(e["Phitf"] * Vp)
        return out

    # -- export ----------------------------------------------------------------

    def dump_debug_csv(self, z, directory) -> None:
        """Write residuals and dense Jacobians at z for external diffing.

        Not a stable interchange format; values use 17 significant
        digits like the CLI exports.
        """
        import os

        os.makedirs(directory, exist_ok=True)
        z = np.asarray(z, dtype=np.float64)
        np.savetxt(os.path.join(directory, "dynamics_residual.csv"), self.dynamics_residual(z), fmt="%.17g", delimiter=",")
        np.savetxt(os.path.join(directory, "dynamics_jacobian.csv"), self.dynamics_jacobian(z), fmt="%.17g", delimiter=",")
        np.savetxt(os.path.join(directory, "objective_gradient.csv"), self.objective_gradient(z), fmt="%.17g", delimiter=",")
        if self.scaled.r1:
            np.savetxt(os.path.join(directory, "terminal_residual.csv"), self.terminal_residual(z), fmt="%.17g", delimiter=",")
            np.savetxt(os.path.join(directory, "terminal_jacobian.csv"), self.terminal_jacobian(z), fmt="%.17g", delimiter=",")
        if self.scaled.r2:
            np.savetxt(os.path.join(directory, "path_residual.csv"), self.path_residual(z), fmt="%.17g", delimiter=",")
            np.savetxt(os.path.join(directory, "path_jacobian.csv"), self.path_jacobian(z), fmt="%.17g", delimiter=",")


def build(problem, scheme, n: int) -> TranscribedNlp:
    """Validate, rescale and transcribe a problem on n intervals."""
    scaled = problem if isinstance(problem, ScaledFocp) else rescale(problem)
    matrix = build_matrix(scheme, scaled.alpha, n)
    weights = quad_weights(n, Scheme.coerce(scheme))
    return TranscribedNlp(scaled, matrix, weights)


def fd_check(nlp: TranscribedNlp, z, step: float = 1e-6) -> dict:
    """Compare every derivative evaluator against central differences.

    Returns a dict of per-block maximal relative deviations (keys
    ``objective_gradient``, ``dynamics_jacobian`` and, when present,
    ``terminal_jacobian`` / ``path_jacobian``) plus their overall
    ``max``.  Each entry's deviation is normalized by
    ``max(1, |analytic|, |numeric|)`` so large residual scales do not
    mask defects and zero rows do not blow up.
    """
    z = np.asarray(z, dtype=np.float64)
    N = z.size

    analytic = {"objective_gradient": nlp.objective_gradient(z)[None, :].T}
    funcs = {"objective_gradient": lambda zz: np.atleast_1d(nlp.objective(zz))}
    analytic["dynamics_jacobian"] = nlp.dynamics_jacobian(z).T
    funcs["dynamics_jacobian"] = nlp.dynamics_residual
    if nlp.scaled.r1:
        analytic["terminal_jacobian"] = nlp.terminal_jacobian(z).T
        funcs["terminal_jacobian"] = nlp.terminal_residual
    if nlp.scaled.r2:
        analytic["path_jacobian"] = nlp.path_jacobian(z).T
        funcs["path_jacobian"] = nlp.path_residual

    numeric = {k: np.empty_like(v) for k, v in analytic.items()}
    for k in range(N):
        dz = np.zeros(N)
        dz[k] = step
        for name, fn in funcs.items():
            numeric[name][k] = (fn(z + dz) - fn(z - dz)) / (2.0 * step)

    report = {}
    for name, A in analytic.items():
        Fd = numeric[name]
        denom = np.maximum(1.0, np.maximum(np.abs(A), np.abs(Fd)))
        report[name] = float(np.max(np.abs(A - Fd) / denom)) if A.size else 0.0
    report["max"] = max(report.values()) if report else 0.0
    return report
