"""
Centralized reference solutions.

``tikhonov_point`` minimizes ``g + lam f`` for one ``lam``, ``bilevel_solution``
returns the limit ``x*`` of that trajectory as ``lam -> 0`` (the ``f``-least
minimizer of ``g``), and ``centralized_ir_descent`` is the single-machine
iteratively regularized gradient method.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .engine import DIVERGENCE_THRESHOLD, DivergenceError, Schedule
from .problems import LeastSquaresInstance, ProblemInstance

CONTINUATION_LADDER = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12, 1e-14)
RANK_RCOND = 1e-10


class OracleError(RuntimeError):
    pass


@dataclass
class OracleSolution:
    x: np.ndarray
    lam: float
    residual: float
    method: str
    diagnostics: dict = field(default_factory=dict)


def regularized_residual(p: ProblemInstance, x, lam: float) -> float:
    return float(np.linalg.norm(p.grad_g(x) + lam * p.grad_f(x)))


def _tikhonov_linear(p: LeastSquaresInstance, lam):
    # min w/2 ||Ax - b||^2 + lam (1/2 x'Px + q'x) as one stacked least-squares problem
    P = p.fobj.total_matrix()
    q = p.fobj.q.sum(axis=0)
    L = np.linalg.cholesky(P)
    sw, sl = np.sqrt(p.weight), np.sqrt(lam)
    M = np.vstack([sw * p.A, sl * L.T])
    rhs = np.concatenate([sw * p.b, -sl * np.linalg.solve(L, q)])
    x, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return x


def _newton_direction(p, lam, x, L, Linv_q):
    # Newton step of 1/2||r||^2 + lam/2 ||L'x + L^-1 q||^2 as a stacked least-squares
    # problem; conditioning is the square root of the Hessian's
    r, J = p.penalty_residuals(x)
    sl = np.sqrt(lam)
    M = np.vstack([J, sl * L.T])
    rhs = -np.concatenate([r, sl * (L.T @ x + Linv_q)])
    d, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return d


def _tikhonov_newton(p, lam, x0, tol, max_iter=200, polish=3):
    """Semismooth Newton with Armijo backtracking for piecewise-quadratic ``g``."""
    x = np.array(x0, dtype=float)
    P = p.hess_f(x)
    L = np.linalg.cholesky(P)
    Linv_q = np.linalg.solve(L, p.grad_f(np.zeros(p.n)))

    def phi(z):
        return p.g(z) + lam * p.f(z)

    for it in range(max_iter):
        grad = p.grad_g(x) + lam * p.grad_f(x)
        res = np.linalg.norm(grad)
        if res <= tol:
            # a small residual bounds the error only by residual / (lam mu);
            # keep taking full steps while they still reduce it
            for _ in range(polish):
                x_new = x + _newton_direction(p, lam, x, L, Linv_q)
                res_new = regularized_residual(p, x_new, lam)
                if not res_new < res:
                    break
                x, res = x_new, res_new
            return x, it
        d = _newton_direction(p, lam, x, L, Linv_q)
        t, f0, slope = 1.0, phi(x), grad @ d
        while phi(x + t * d) > f0 + 1e-4 * t * slope and t > 1e-12:
            t *= 0.5
        x = x + t * d
    if regularized_residual(p, x, lam) <= tol:
        return x, max_iter
    raise OracleError(f"Newton did not reach tolerance {tol} at lam={lam}")


def _tikhonov_agd(p, lam, x0, tol, max_iter):
    """Nesterov's method for strongly convex objectives with gradient restart."""
    L = p.m * (p.L_g + lam * p.L_f)
    mu = lam * p.m * p.mu_f
    q = np.sqrt(mu / L)
    beta = (1 - q) / (1 + q)
    x = np.array(x0, dtype=float)
    y = x.copy()
    for it in range(max_iter):
        grad_y = p.grad_g(y) + lam * p.grad_f(y)
        x_new = y - grad_y / L
        if np.linalg.norm(grad_y) <= tol:
            return y, it
        if grad_y @ (x_new - x) > 0:
            y = x_new.copy()  # restart momentum
        else:
            y = x_new + beta * (x_new - x)
        x = x_new
    if regularized_residual(p, x, lam) <= tol:
        return x, max_iter
    raise OracleError(f"accelerated gradient hit the iteration cap ({max_iter}) at lam={lam}")


def tikhonov_point(p: ProblemInstance, lam: float, tol: float = 1e-8, method: str = "auto",
                   x0=None, max_iter: int = 1_000_000) -> OracleSolution:
    """
    Minimizer of ``g + lam f`` with ``||grad g + lam grad f|| <= tol``.

    Parameters
    ----------
    method : {"auto", "linear", "newton", "agd"}
        ``auto`` picks a single linear solve for quadratic instances, Newton
        when a generalized Hessian is available and accelerated gradient
        otherwise.
    """
    if lam <= 0:
        raise ValueError("regularization parameter must be positive")
    if method == "auto":
        method = "linear" if p.closed_form else ("newton" if p.has_hessian else "agd")
    x0 = np.zeros(p.n) if x0 is None else np.asarray(x0, dtype=float)
    iters = 0
    if method == "linear":
        if not p.closed_form:
            raise ValueError(f"instance {p.name!r} is not solvable in closed form")
        x = _tikhonov_linear(p, lam)
    elif method == "newton":
        x, iters = _tikhonov_newton(p, lam, x0, tol)
    elif method == "agd":
        x, iters = _tikhonov_agd(p, lam, x0, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = regularized_residual(p, x, lam)
    if res > tol:
        raise OracleError(f"{method} residual {res:.3e} exceeds tolerance {tol:.1e} at lam={lam}")
    return OracleSolution(x=x, lam=lam, residual=res, method=method, diagnostics={"iterations": iters})


def _solve_qp(form, tol):
    import cvxpy as cp

    n = form.P.shape[0]
    x = cp.Variable(n)
    P = 0.5 * (form.P + form.P.T)
    cons = []
    if form.A_eq is not None:
        cons.append(form.A_eq @ x == form.b_eq)
    if form.G is not None:
        cons.append(form.G @ x <= form.h)
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(P)) + form.q @ x), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    if prob.status not in ("optimal", "optimal_inaccurate") or x.value is None:
        raise OracleError(f"QP solve failed with status {prob.status}")
    xv = np.asarray(x.value, dtype=float)
    viol = 0.0
    if form.A_eq is not None:
        viol = max(viol, float(np.abs(form.A_eq @ xv - form.b_eq).max()))
    if form.G is not None:
        viol = max(viol, float(np.maximum(form.G @ xv - form.h, 0).max()))
    return xv, viol


def _nullspace_solution(p: LeastSquaresInstance):
    # argmin g is x_p + null(A); minimize the quadratic f over that affine set
    U, sig, Vt = np.linalg.svd(p.A, full_matrices=True)
    r = int(np.sum(sig > RANK_RCOND * sig[0])) if sig.size and sig[0] > 0 else 0
    x_p = Vt[:r].T @ ((U[:, :r].T @ p.b) / sig[:r])
    N = Vt[r:].T
    if N.shape[1]:
        P = p.fobj.total_matrix()
        q = p.fobj.q.sum(axis=0)
        z = np.linalg.solve(N.T @ P @ N, -N.T @ (P @ x_p + q))
        x_p = x_p + N @ z
    return x_p, r


def bilevel_solution(p: ProblemInstance, tol: float = 1e-6, method: str = "auto") -> OracleSolution:
    """
    ``x* = argmin { f(x) : x in argmin g }``.

    Parameters
    ----------
    method : {"auto", "nullspace", "qp", "continuation"}
        ``continuation`` walks ``lam`` down the decade ladder, warm-starting
        each Tikhonov point, and stops once consecutive points are within
        ``tol``. ``nullspace`` minimizes ``f`` over the solution set of the
        normal equations (quadratic instances only). ``qp`` solves the
        instance's explicit constrained form. ``auto`` takes the first
        applicable of ``nullspace``, ``qp``, ``continuation``.
    """
    form = p.constrained_form()
    if method == "auto":
        method = "nullspace" if p.closed_form else ("qp" if form is not None else "continuation")
    if method == "nullspace":
        if not p.closed_form:
            raise ValueError(f"instance {p.name!r} is not a quadratic least-squares instance")
        x, rank = _nullspace_solution(p)
        res = float(np.linalg.norm(p.grad_g(x)))
        return OracleSolution(x=x, lam=0.0, residual=res, method="nullspace", diagnostics={"rank": rank})
    if method == "qp":
        if form is None:
            raise ValueError(f"instance {p.name!r} has no explicit constrained form")
        x, viol = _solve_qp(form, tol)
        if viol > tol:
            raise OracleError(f"QP constraint violation {viol:.3e} exceeds {tol:.1e}")
        return OracleSolution(x=x, lam=0.0, residual=viol, method="qp")
    if method != "continuation":
        raise ValueError(f"unknown method {method!r}")

    prev = None
    x0 = np.zeros(p.n)
    history = []
    for lam in CONTINUATION_LADDER:
        sol = tikhonov_point(p, lam, tol=min(1e-8, tol), x0=x0)
        history.append(lam)
        if prev is not None:
            gap = float(np.linalg.norm(sol.x - prev))
            if gap <= tol:
                out = OracleSolution(x=sol.x, lam=0.0, residual=gap, method="continuation",
                                     diagnostics={"ladder": history})
                if isinstance(p, LeastSquaresInstance) and p.closed_form and p.metadata.get("outer") == "||x||^2":
                    out.diagnostics.update(_least_norm_check(p, sol.x))
                return out
        prev = x0 = sol.x
    raise OracleError(f"continuation not Cauchy to {tol} down to lam={CONTINUATION_LADDER[-1]}")


def _least_norm_check(p, x):
    """Normal-equation residual and distance to the SVD minimum-norm solution."""
    x_svd, *_ = np.linalg.lstsq(p.A, p.b, rcond=None)
    return {
        "normal_residual": float(np.linalg.norm(p.A.T @ (p.A @ x - p.b))),
        "svd_distance": float(np.linalg.norm(x - x_svd)),
    }


def centralized_ir_descent(p: ProblemInstance, s: Schedule, K: int, x0=None) -> np.ndarray:
    """
    ``x_{k+1} = x_k - gamma_hat_k (grad g(x_k) + lambda_k grad f(x_k))``.

    Returns the ``(K+1) x n`` array of iterates.
    """
    if K < 1:
        raise ValueError("need at least one iteration")
    xs = np.empty((K + 1, p.n))
    xs[0] = np.zeros(p.n) if x0 is None else x0
    for k in range(K):
        x = xs[k]
        xs[k + 1] = x - float(s.gamma_hat(k)) * (p.grad_g(x) + float(s.lam(k)) * p.grad_f(x))
        if not np.all(np.isfinite(xs[k + 1])) or np.abs(xs[k + 1]).max() > DIVERGENCE_THRESHOLD:
            raise DivergenceError(k + 1)
    return xs


class OracleCache:
    """
    JSON sidecar of oracle results keyed by ``(instance fingerprint, lam, tol)``.

    ``lam = 0`` stores the bilevel solution.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._data: dict[str, dict] = {}
        if self.path and self.path.exists():
            self._data = json.loads(self.path.read_text())

    @staticmethod
    def _key(p, lam, tol):
        return f"{p.fingerprint()}|{lam!r}|{tol!r}"

    def _lookup(self, p, lam, tol, compute):
        key = self._key(p, lam, tol)
        if key in self._data:
            d = self._data[key]
            return OracleSolution(x=np.array(d["x"]), lam=d["lam"], residual=d["residual"], method=d["method"])
        sol = compute()
        d = asdict(sol)
        d["x"] = sol.x.tolist()
        d.pop("diagnostics")
        self._data[key] = d
        return sol

    def tikhonov(self, p, lam, tol=1e-8, x0=None):
        return self._lookup(p, float(lam), tol, lambda: tikhonov_point(p, float(lam), tol=tol, x0=x0))

    def bilevel(self, p, tol=1e-6):
        return self._lookup(p, 0.0, tol, lambda: bilevel_solution(p, tol=tol))

    def save(self):
        if self.path:
            self.path.write_text(json.dumps(self._data, indent=1, sort_keys=True))
