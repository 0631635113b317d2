"""
Bilevel problem instances: minimize sum_i f_i over argmin sum_i g_i.

Every instance exposes per-agent evaluators (``f_local``, ``grad_g_local``
...), stacked evaluators acting on an ``m x n`` matrix whose row ``i`` is
agent ``i``'s copy, and aggregate evaluators ``f(x) = sum_i f_i(x)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ConstrainedForm:
    """``min 1/2 x'Px + q'x  s.t.  A_eq x = b_eq,  G x <= h``."""

    P: np.ndarray
    q: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    G: np.ndarray | None = None
    h: np.ndarray | None = None


class QuadraticObjective:
    """
    Per-agent quadratics ``f_i(x) = 1/2 x'Q_i x + q_i'x``.

    ``Q`` has shape ``(m,)`` (``Q_i = Q[i] I``), ``(m, n)`` (diagonal) or
    ``(m, n, n)`` (dense, symmetric positive definite).
    """

    def __init__(self, Q, q, n: int):
        Q = np.asarray(Q, dtype=float)
        self.m = Q.shape[0]
        self.n = n
        self.q = np.zeros((self.m, n)) if q is None else np.asarray(q, dtype=float).reshape(self.m, n)
        if Q.ndim == 1:
            self.kind = "iso"
            eigs = [np.array([Q[i]]) for i in range(self.m)]
        elif Q.ndim == 2:
            self.kind = "diag"
            eigs = list(Q)
        elif Q.ndim == 3:
            if not np.allclose(Q, np.transpose(Q, (0, 2, 1)), rtol=0, atol=1e-12):
                raise ValueError("Q_i must be symmetric")
            self.kind = "dense"
            eigs = [np.linalg.eigvalsh(Qi) for Qi in Q]
        else:
            raise ValueError(f"bad quadratic shape {Q.shape}")
        self.Q = Q
        lo = min(e.min() for e in eigs)
        if lo <= 0:
            raise ValueError("every Q_i must be positive definite")
        self.mu = float(lo)
        self.L = float(max(e.max() for e in eigs))

    def matrix(self, i: int) -> np.ndarray:
        if self.kind == "iso":
            return self.Q[i] * np.eye(self.n)
        if self.kind == "diag":
            return np.diag(self.Q[i])
        return self.Q[i]

    def total_matrix(self) -> np.ndarray:
        return sum(self.matrix(i) for i in range(self.m))

    def value(self, i, x):
        return 0.5 * x @ (self.matrix_apply(i, x)) + self.q[i] @ x

    def matrix_apply(self, i, x):
        if self.kind == "iso":
            return self.Q[i] * x
        if self.kind == "diag":
            return self.Q[i] * x
        return self.Q[i] @ x

    def grad(self, i, x):
        return self.matrix_apply(i, x) + self.q[i]

    def grad_stack(self, X):
        if self.kind == "iso":
            QX = self.Q[:, None] * X
        elif self.kind == "diag":
            QX = self.Q * X
        else:
            QX = np.matmul(self.Q, X[:, :, None])[:, :, 0]
        return QX + self.q


class ProblemInstance:
    """
    Base class for bilevel instances.

    Subclasses implement the per-agent evaluators and set ``n``, ``m``,
    ``mu_f``, ``L_f``, ``L_g``. Stacked and aggregate evaluators default to
    loops over agents and may be overridden with vectorized versions.
    """

    name = "instance"
    closed_form = False  # tikhonov points solvable by one linear solve
    has_hessian = False
    n: int
    m: int
    mu_f: float
    L_f: float
    L_g: float
    x_star: np.ndarray | None = None

    def __init__(self):
        self.metadata: dict[str, object] = {}

    # per-agent
    def f_local(self, i, x):
        raise NotImplementedError

    def g_local(self, i, x):
        raise NotImplementedError

    def grad_f_local(self, i, x):
        raise NotImplementedError

    def grad_g_local(self, i, x):
        raise NotImplementedError

    # stacked
    def grad_f_stack(self, X):
        return np.stack([self.grad_f_local(i, X[i]) for i in range(self.m)])

    def grad_g_stack(self, X):
        return np.stack([self.grad_g_local(i, X[i]) for i in range(self.m)])

    # aggregates
    def f(self, x):
        return float(sum(self.f_local(i, x) for i in range(self.m)))

    def g(self, x):
        return float(sum(self.g_local(i, x) for i in range(self.m)))

    def grad_f(self, x):
        return sum(self.grad_f_local(i, x) for i in range(self.m))

    def grad_g(self, x):
        return sum(self.grad_g_local(i, x) for i in range(self.m))

    def hess_f(self, x):
        raise NotImplementedError

    def hess_g(self, x):
        raise NotImplementedError

    def penalty_residuals(self, x):
        """``(r, J)`` with ``g(x) = 1/2 ||r||^2`` and ``grad g(x) = J'r`` (piecewise-quadratic ``g``)."""
        raise NotImplementedError

    def infeasibility(self, x) -> float | None:
        """Constraint-violation metric; ``None`` when the instance has no constraints."""
        return None

    def constrained_form(self) -> ConstrainedForm | None:
        """Explicit form of the bilevel problem when ``argmin g`` is a polyhedron."""
        return None

    def _fingerprint_arrays(self):
        return []

    def fingerprint(self) -> str:
        h = hashlib.sha256(type(self).__name__.encode())
        for a in self._fingerprint_arrays():
            a = np.ascontiguousarray(a, dtype=float)
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()[:16]


def eval_regularized_gradient(p: ProblemInstance, X, lam: float) -> np.ndarray:
    """Stacked regularized gradient, row ``i`` = ``grad g_i(x_i) + lam * grad f_i(x_i)``."""
    X = np.asarray(X, dtype=float)
    if X.shape != (p.m, p.n):
        raise ValueError(f"expected a {(p.m, p.n)} matrix, got {X.shape}")
    if lam < 0:
        raise ValueError("regularization parameter must be nonnegative")
    return p.grad_g_stack(X) + lam * p.grad_f_stack(X)


class LeastSquaresInstance(ProblemInstance):
    """
    ``g_i(x) = w/2 ||A_i x - b_i||^2 + 1/(2m) sum_{j in J} max(0, -x_j)^2``
    with quadratic ``f_i``.
    """

    def __init__(self, A_blocks, b_blocks, fobj: QuadraticObjective, weight=1.0, nonneg=(),
                 report_infeasibility=False, name="least-squares"):
        super().__init__()
        if len(A_blocks) == 0:
            raise ValueError("need at least one block")
        A_blocks = [np.atleast_2d(np.asarray(A, dtype=float)) for A in A_blocks]
        widths = {A.shape[1] for A in A_blocks}
        if len(widths) != 1:
            raise ValueError(f"inconsistent block widths {sorted(widths)}")
        self.n = widths.pop()
        self.m = len(A_blocks)
        b_blocks = [np.atleast_1d(np.asarray(b, dtype=float)) for b in b_blocks]
        if len(b_blocks) != self.m or any(len(b) != A.shape[0] for A, b in zip(A_blocks, b_blocks)):
            raise ValueError("b blocks do not match A blocks")
        if fobj.m != self.m or fobj.n != self.n:
            raise ValueError("quadratic objective does not match block layout")
        self.A_blocks = A_blocks
        self.b_blocks = b_blocks
        self.A = np.vstack(A_blocks)
        self.b = np.concatenate(b_blocks)
        self.weight = float(weight)
        self.fobj = fobj
        self.nonneg = np.array(sorted(set(int(j) for j in nonneg)), dtype=int)
        self.report_infeasibility = report_infeasibility
        self.name = name
        self.closed_form = self.nonneg.size == 0
        self.has_hessian = True
        # A_i'A_i and A_i'b_i, stacked for vectorized gradients
        self._AtA = np.stack([A.T @ A for A in A_blocks])
        self._Atb = np.stack([A.T @ b for A, b in zip(A_blocks, b_blocks)])
        self._AtA_sum = self._AtA.sum(axis=0)
        self._Atb_sum = self._Atb.sum(axis=0)
        self.mu_f = fobj.mu
        self.L_f = fobj.L
        rho = max(float(np.linalg.eigvalsh(M).max()) for M in self._AtA)
        self.L_g = self.weight * rho + (1.0 / np.sqrt(self.m) if self.nonneg.size else 0.0)

    def _hinge(self, x):
        return np.maximum(0.0, -x[..., self.nonneg])

    def f_local(self, i, x):
        return float(self.fobj.value(i, x))

    def grad_f_local(self, i, x):
        return self.fobj.grad(i, x)

    def g_local(self, i, x):
        r = self.A_blocks[i] @ x - self.b_blocks[i]
        return float(0.5 * self.weight * r @ r + np.sum(self._hinge(x) ** 2) / (2 * self.m))

    def grad_g_local(self, i, x):
        out = self.weight * (self._AtA[i] @ x - self._Atb[i])
        out[self.nonneg] -= self._hinge(x) / self.m
        return out

    def grad_f_stack(self, X):
        return self.fobj.grad_stack(X)

    def grad_g_stack(self, X):
        out = self.weight * (np.matmul(self._AtA, X[:, :, None])[:, :, 0] - self._Atb)
        if self.nonneg.size:
            out[:, self.nonneg] -= self._hinge(X) / self.m
        return out

    def g(self, x):
        r = self.A @ x - self.b
        return float(0.5 * self.weight * r @ r + np.sum(self._hinge(x) ** 2) / 2)

    def grad_g(self, x):
        out = self.weight * (self._AtA_sum @ x - self._Atb_sum)
        out[self.nonneg] -= self._hinge(x)
        return out

    def hess_f(self, x=None):
        return self.fobj.total_matrix()

    def hess_g(self, x):
        H = self.weight * self._AtA_sum.copy()
        active = self.nonneg[x[self.nonneg] < 0]
        H[active, active] += 1.0
        return H

    def penalty_residuals(self, x):
        sw = np.sqrt(self.weight)
        r = [sw * (self.A @ x - self.b)]
        J = [sw * self.A]
        if self.nonneg.size:
            active = self.nonneg[x[self.nonneg] < 0]
            r.append(-x[active])
            J.append(-np.eye(self.n)[active])
        return np.concatenate(r), np.vstack(J)

    def infeasibility(self, x):
        if not self.report_infeasibility:
            return None
        r = self.A @ x - self.b
        return float(r @ r)

    def constrained_form(self):
        if not self.report_infeasibility:
            return None
        n = self.n
        G = h = None
        if self.nonneg.size:
            G = -np.eye(n)[self.nonneg]
            h = np.zeros(self.nonneg.size)
        return ConstrainedForm(P=self.fobj.total_matrix(), q=self.fobj.q.sum(axis=0),
                               A_eq=self.A, b_eq=self.b, G=G, h=h)

    def _fingerprint_arrays(self):
        return [self.A, self.b, self.fobj.Q, self.fobj.q, np.array([self.weight]), self.nonneg,
                np.array([len(b) for b in self.b_blocks])]


def make_least_norm_ls(A_blocks, b_blocks) -> LeastSquaresInstance:
    """
    Least-norm least squares: ``g_i = 1/2 ||A_i x - b_i||^2``, ``f_i = ||x||^2 / m``.

    Strong convexity and smoothness of ``f_i`` are both ``2/m``.
    """
    m = len(A_blocks)
    if m == 0:
        raise ValueError("need at least one block")
    n = np.atleast_2d(A_blocks[0]).shape[1]
    fobj = QuadraticObjective(np.full(m, 2.0 / m), None, n)
    p = LeastSquaresInstance(A_blocks, b_blocks, fobj, name="least-norm")
    p.metadata["outer"] = "||x||^2"
    return p


def make_linear_constrained(Q, q, A_blocks, b_blocks, nonneg=()) -> LeastSquaresInstance:
    """
    Linearly constrained model ``min sum_i f_i  s.t. A_i x = b_i, x_J >= 0``
    recast with the quadratic-penalty inner function.

    ``Q`` is a sequence of ``m`` symmetric positive definite matrices (or any
    shape accepted by :class:`QuadraticObjective`), ``q`` the linear terms.
    The constraint system is assumed feasible.
    """
    A_blocks = [np.atleast_2d(np.asarray(A, dtype=float)) for A in A_blocks]
    if not A_blocks:
        raise ValueError("need at least one block")
    n = A_blocks[0].shape[1]
    fobj = QuadraticObjective(np.asarray(Q, dtype=float), q, n)
    p = LeastSquaresInstance(A_blocks, b_blocks, fobj, nonneg=nonneg, report_infeasibility=True,
                             name="linear-constrained")
    return p


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    t = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _reflect(j, w):
    # half-sample symmetric extension: (d c b a | a b c d | d c b a)
    if j < 0:
        return -j - 1
    if j >= w:
        return 2 * w - j - 1
    return j


def blur_matrix_1d(w: int, kernel) -> np.ndarray:
    """Correlation with ``kernel`` on ``w`` samples, reflective boundary, origin ``len(kernel)//2``."""
    kernel = np.asarray(kernel, dtype=float)
    L = len(kernel)
    if L > w:
        raise ValueError(f"kernel of width {L} is wider than the image ({w})")
    c = L // 2
    T = np.zeros((w, w))
    for i in range(w):
        for t, k in enumerate(kernel):
            T[i, _reflect(i + t - c, w)] += k
    return T


def make_blur_instance(image, kernel, m: int, noise: float = 0.0, seed=None) -> LeastSquaresInstance:
    """
    Distributed deblurring: ``g_i = ||A_i x - b_i||^2`` and ``f_i = ||x||^2 / (2m)``.

    ``A = T kron T`` blurs a ``w x w`` image separably along rows and columns,
    ``b = A image (+ noise)``, and rows of ``A`` are split into ``m``
    contiguous, near-equal blocks.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim == 1:
        w = int(round(np.sqrt(image.size)))
        if w * w != image.size:
            raise ValueError("flattened image must be square")
    else:
        w = image.shape[0]
        if image.shape != (w, w):
            raise ValueError("image must be square")
    x_true = image.reshape(-1)
    T = blur_matrix_1d(w, kernel)
    A = np.kron(T, T)
    b = A @ x_true
    if noise > 0:
        b = b + noise * np.random.default_rng(seed).standard_normal(b.size)
    if not 1 <= m <= A.shape[0]:
        raise ValueError(f"cannot split {A.shape[0]} rows over {m} agents")
    rows = np.array_split(np.arange(A.shape[0]), m)
    fobj = QuadraticObjective(np.full(m, 1.0 / m), None, A.shape[1])
    p = LeastSquaresInstance([A[r] for r in rows], [b[r] for r in rows], fobj, weight=2.0, name="deblur")
    p.image = x_true
    p.blurred = b
    p.metadata["noise"] = noise
    return p


class SVMInstance(ProblemInstance):
    """
    Primal linear SVM with decision vector ``w = (x, b, z)``.

    Both constraint families enter ``g_i`` as squared hinges, the outer
    objective is the margin/slack objective plus an ``eps_sc`` quadratic
    on ``(b, z)`` so that every ``f_i`` is strongly convex.
    """

    name = "svm"
    has_hessian = True

    def __init__(self, U, labels, partition, eta=0.05, eps_sc=1e-3):
        super().__init__()
        U = np.atleast_2d(np.asarray(U, dtype=float))
        labels = np.asarray(labels, dtype=float)
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if eta <= 0 or eps_sc <= 0:
            raise ValueError("eta and eps_sc must be positive")
        N, nf = U.shape
        cells = [np.asarray(c, dtype=int) for c in partition]
        flat = np.concatenate(cells) if cells else np.array([], dtype=int)
        if sorted(flat.tolist()) != list(range(N)):
            raise ValueError("partition must cover every training sample exactly once")
        self.U, self.labels, self.cells = U, labels, cells
        self.nf, self.N = nf, N
        self.m = len(cells)
        self.n = nf + 1 + N
        self.eta, self.eps_sc = float(eta), float(eps_sc)
        self.owner = np.empty(N, dtype=int)
        for i, c in enumerate(cells):
            self.owner[c] = i
        self._incidence = np.zeros((self.m, N))
        self._incidence[self.owner, np.arange(N)] = 1.0
        # rows a_l so that the margin hinge is max(0, 1 - a_l'w)
        self._Arows = np.zeros((N, self.n))
        self._Arows[:, :nf] = labels[:, None] * U
        self._Arows[:, nf] = labels
        self._Arows[np.arange(N), nf + 1 + np.arange(N)] = 1.0
        # f_i = 1/2 w'diag(d)w + q_i'w
        diag = np.empty(self.n)
        diag[:nf] = eta + (eps_sc if eta == 0 else 0.0)
        diag[nf:] = eps_sc
        q = np.zeros((self.m, self.n))
        for i, c in enumerate(cells):
            q[i, nf + 1 + c] = 1.0
        self.fobj = QuadraticObjective(np.tile(diag / self.m, (self.m, 1)), q, self.n)
        self.mu_f, self.L_f = self.fobj.mu, self.fobj.L
        # squared hinges are 1-smooth; one-sided Hessian bound rho(sum a a') + 1
        rho = 0.0
        for c in cells:
            if c.size:
                rho = max(rho, float(np.linalg.norm(self._Arows[c], 2) ** 2))
        self.L_g = rho + 1.0
        self.metadata["strong_convexity_augmentation"] = eps_sc

    def _zslice(self):
        return slice(self.nf + 1, self.n)

    def _margin_hinge(self, w, rows):
        return np.maximum(0.0, 1.0 - self._Arows[rows] @ w)

    def f_local(self, i, w):
        return float(self.fobj.value(i, w))

    def grad_f_local(self, i, w):
        return self.fobj.grad(i, w)

    def grad_f_stack(self, W):
        return self.fobj.grad_stack(W)

    def g_local(self, i, w):
        c = self.cells[i]
        h = self._margin_hinge(w, c)
        s = np.maximum(0.0, -w[self.nf + 1 + c])
        return float(0.5 * (h @ h + s @ s))

    def grad_g_local(self, i, w):
        c = self.cells[i]
        h = self._margin_hinge(w, c)
        out = -(h @ self._Arows[c])
        out[self.nf + 1 + c] -= np.maximum(0.0, -w[self.nf + 1 + c])
        return out

    def grad_g_stack(self, W):
        N = self.N
        own = W[self.owner]  # (N, n): each sample's owner copy
        h = np.maximum(0.0, 1.0 - np.einsum("ln,ln->l", self._Arows, own))
        out = np.zeros_like(W)
        out[:, : self.nf + 1] = -self._incidence @ (h[:, None] * self._Arows[:, : self.nf + 1])
        zcols = self.nf + 1 + np.arange(N)
        zown = W[self.owner, zcols]
        out[self.owner, zcols] = -h - np.maximum(0.0, -zown)
        return out

    def g(self, w):
        h = np.maximum(0.0, 1.0 - self._Arows @ w)
        s = np.maximum(0.0, -w[self._zslice()])
        return float(0.5 * (h @ h + s @ s))

    def grad_g(self, w):
        h = np.maximum(0.0, 1.0 - self._Arows @ w)
        out = -(h @ self._Arows)
        out[self._zslice()] -= np.maximum(0.0, -w[self._zslice()])
        return out

    def hess_f(self, w=None):
        return self.fobj.total_matrix()

    def hess_g(self, w):
        active = (1.0 - self._Arows @ w) > 0
        Aa = self._Arows[active]
        H = Aa.T @ Aa
        z = w[self._zslice()]
        idx = self.nf + 1 + np.flatnonzero(z < 0)
        H[idx, idx] += 1.0
        return H

    def penalty_residuals(self, w):
        h = 1.0 - self._Arows @ w
        active = h > 0
        z = w[self._zslice()]
        neg = np.flatnonzero(z < 0)
        J = np.vstack([-self._Arows[active], -np.eye(self.n)[self.nf + 1 + neg]])
        return np.concatenate([h[active], -z[neg]]), J

    def infeasibility(self, w):
        return 2.0 * self.g(w)

    def constrained_form(self):
        N, n = self.N, self.n
        G = np.vstack([-self._Arows, np.hstack([np.zeros((N, self.nf + 1)), -np.eye(N)])])
        h = np.concatenate([-np.ones(N), np.zeros(N)])
        return ConstrainedForm(P=self.fobj.total_matrix(), q=self.fobj.q.sum(axis=0), G=G, h=h)

    def split(self, w):
        """``(x, b, z)`` parts of a decision vector."""
        return w[: self.nf], w[self.nf], w[self._zslice()]

    def accuracy(self, w, U, labels) -> float:
        x, b, _ = self.split(w)
        pred = np.where(np.asarray(U) @ x + b >= 0, 1.0, -1.0)
        return float(np.mean(pred == np.asarray(labels)))

    def _fingerprint_arrays(self):
        return [self.U, self.labels, self.owner, np.array([self.eta, self.eps_sc])]


def make_svm_instance(U, labels, partition, eta=0.05, eps_sc=1e-3) -> SVMInstance:
    return SVMInstance(U, labels, partition, eta=eta, eps_sc=eps_sc)


def load_csv_table(path) -> tuple[list[str], np.ndarray]:
    """Read a CSV file with a header row and decimal values."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data
