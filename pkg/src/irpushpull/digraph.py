"""
Directed communication graphs and push-pull mixing matrices.

Vertices are numbered ``0 .. m-1``. An edge ``(j, i)`` means agent ``j`` is a
parent of agent ``i``: information flows from ``j`` to ``i``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

TOPOLOGIES = ("ring", "line", "star", "random")

STOCHASTIC_TOL = 1e-12
EIGEN_TOL = 1e-10
POWER_ITER_CAP = 10**6


class AssumptionError(ValueError):
    """Mixing matrices violate the push-pull weight assumptions."""


@dataclass(frozen=True)
class Digraph:
    """Directed graph on ``m`` vertices without self-loops."""

    m: int
    edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"agent count must be positive, got {self.m}")
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in edges:
            if not (0 <= j < self.m and 0 <= i < self.m):
                raise ValueError(f"edge {(j, i)} out of range for m={self.m}")
            if j == i:
                raise ValueError(f"self-loop on vertex {i}")
        object.__setattr__(self, "edges", edges)

    @cached_property
    def in_neighbors(self) -> tuple[frozenset[int], ...]:
        nbrs = [set() for _ in range(self.m)]
        for j, i in self.edges:
            nbrs[i].add(j)
        return tuple(frozenset(s) for s in nbrs)

    @cached_property
    def out_neighbors(self) -> tuple[frozenset[int], ...]:
        nbrs = [set() for _ in range(self.m)]
        for j, i in self.edges:
            nbrs[j].add(i)
        return tuple(frozenset(s) for s in nbrs)

    def reversed(self) -> Digraph:
        return Digraph(self.m, frozenset((i, j) for j, i in self.edges))

    def reachable_from(self, source: int) -> set[int]:
        seen = {source}
        queue = deque([source])
        while queue:
            j = queue.popleft()
            for i in sorted(self.out_neighbors[j]):
                if i not in seen:
                    seen.add(i)
                    queue.append(i)
        return seen

    def is_strongly_connected(self) -> bool:
        return len(roots(self)) == self.m

    @classmethod
    def from_matrix(cls, B, tol: float = 0.0) -> Digraph:
        """Induced digraph of a nonnegative matrix: ``j -> i`` iff ``B[i, j] > tol``."""
        B = np.asarray(B)
        m = B.shape[0]
        idx = np.argwhere(B > tol)
        return cls(m, frozenset((int(j), int(i)) for i, j in idx if i != j))


def make_topology(kind: str, m: int, seed: int | None = None, p: float | None = None) -> Digraph:
    """
    Build one of the named test topologies.

    Parameters
    ----------
    kind : {"ring", "line", "star", "random"}
        ``ring``: ``i -> i+1 (mod m)``; ``line``: ``i -> i+1``; ``star``:
        vertex 0 points to every leaf; ``random``: Erdos-Renyi digraph with
        edges added until it is strongly connected.
    m : int
        Number of agents.
    seed : int, optional
        Seed for the ``random`` kind. Ignored otherwise.
    p : float, optional
        Edge probability for ``random`` (default ``min(1, 2 log(m) / m)``).
    """
    if m < 1:
        raise ValueError(f"agent count must be positive, got {m}")
    if kind == "ring":
        edges = {(i, (i + 1) % m) for i in range(m)} if m > 1 else set()
    elif kind == "line":
        edges = {(i, i + 1) for i in range(m - 1)}
    elif kind == "star":
        edges = {(0, i) for i in range(1, m)}
    elif kind == "random":
        edges = _random_strongly_connected(m, seed, p)
    else:
        raise ValueError(f"unknown topology {kind!r}; expected one of {TOPOLOGIES}")
    return Digraph(m, frozenset(edges))


def _random_strongly_connected(m, seed, p):
    rng = np.random.default_rng(seed)
    if p is None:
        p = min(1.0, 2.0 * np.log(max(m, 2)) / m)
    mask = rng.random((m, m)) < p
    np.fill_diagonal(mask, False)
    edges = {(int(j), int(i)) for j, i in np.argwhere(mask)}
    g = Digraph(m, frozenset(edges))
    # add random edges until strongly connected
    while not g.is_strongly_connected():
        candidates = [(j, i) for j in range(m) for i in range(m) if j != i and (j, i) not in edges]
        j, i = candidates[rng.integers(len(candidates))]
        edges.add((j, i))
        g = Digraph(m, frozenset(edges))
    return edges


def roots(g: Digraph) -> set[int]:
    """Vertices from which every vertex is reachable (roots of spanning trees)."""
    return {r for r in range(g.m) if len(g.reachable_from(r)) == g.m}


def _positive_weights(w, m, name):
    w = np.ones(m) if w is None else np.broadcast_to(np.asarray(w, dtype=float), (m,))
    if np.any(w <= 0):
        raise ValueError(f"{name} self-weights must be positive")
    return w


def build_row_stochastic(g: Digraph, r=None) -> np.ndarray:
    """
    Pull matrix from in-neighbor counts.

    ``R[i, j] = 1 / (|in(i)| + r_i)`` for ``j`` in ``in(i)`` and
    ``R[i, i] = r_i / (|in(i)| + r_i)``.
    """
    r = _positive_weights(r, g.m, "row")
    R = np.zeros((g.m, g.m))
    for i in range(g.m):
        denom = len(g.in_neighbors[i]) + r[i]
        for j in g.in_neighbors[i]:
            R[i, j] = 1.0 / denom
        R[i, i] = r[i] / denom
    return R


def build_column_stochastic(g: Digraph, c=None) -> np.ndarray:
    """
    Push matrix from out-neighbor counts.

    ``C[l, i] = 1 / (|out(i)| + c_i)`` for ``l`` in ``out(i)`` and
    ``C[i, i] = c_i / (|out(i)| + c_i)``.
    """
    c = _positive_weights(c, g.m, "column")
    C = np.zeros((g.m, g.m))
    for i in range(g.m):
        denom = len(g.out_neighbors[i]) + c[i]
        for l in g.out_neighbors[i]:
            C[l, i] = 1.0 / denom
        C[i, i] = c[i] / denom
    return C


def build_laplacian_mixing(g: Digraph, column: bool = False) -> np.ndarray:
    """
    ``I - L / (2 d_max)`` from the in-degree Laplacian (row-stochastic).

    With ``column=True`` the out-degree Laplacian and maximum out-degree are
    used instead, giving a column-stochastic matrix.
    """
    if not g.edges:
        raise ValueError("Laplacian mixing needs at least one edge")
    A = np.zeros((g.m, g.m))
    for j, i in g.edges:
        A[i, j] = 1.0
    if column:
        deg = A.sum(axis=0)
        L = np.diag(deg) - A
    else:
        deg = A.sum(axis=1)
        L = np.diag(deg) - A
    return np.eye(g.m) - L / (2.0 * deg.max())


@dataclass(frozen=True)
class MixingPair:
    """Pull matrix ``R``, push matrix ``C`` and their Perron vectors.

    ``u`` satisfies ``u^T R = u^T, sum(u) = m`` and ``v`` satisfies
    ``C v = v, sum(v) = m``.
    """

    R: np.ndarray
    C: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def m(self) -> int:
        return self.R.shape[0]

    @property
    def uv(self) -> float:
        return float(self.u @ self.v)


@dataclass
class ValidationReport:
    checks: dict[str, bool]
    details: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list[str]:
        return [name for name, passed in self.checks.items() if not passed]

    def lines(self) -> list[str]:
        out = []
        for name, passed in self.checks.items():
            extra = self.details.get(name)
            out.append(f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  ({extra})" if extra else ""))
        return out


def validate_assumptions(R, C) -> ValidationReport:
    """Check the push-pull weight assumptions on ``(R, C)``; never raises."""
    R = np.asarray(R, dtype=float)
    C = np.asarray(C, dtype=float)
    checks = {
        "R square": R.ndim == 2 and R.shape[0] == R.shape[1],
        "C square": C.ndim == 2 and C.shape[0] == C.shape[1],
    }
    if not (checks["R square"] and checks["C square"]) or R.shape != C.shape:
        checks["R, C same size"] = False
        return ValidationReport(checks)
    checks["R nonnegative"] = bool(np.all(R >= 0))
    checks["R positive diagonal"] = bool(np.all(np.diag(R) > 0))
    checks["R row-stochastic"] = bool(np.all(np.abs(R.sum(axis=1) - 1) <= STOCHASTIC_TOL))
    checks["C nonnegative"] = bool(np.all(C >= 0))
    checks["C positive diagonal"] = bool(np.all(np.diag(C) > 0))
    checks["C column-stochastic"] = bool(np.all(np.abs(C.sum(axis=0) - 1) <= STOCHASTIC_TOL))
    roots_R = roots(Digraph.from_matrix(R))
    roots_CT = roots(Digraph.from_matrix(C.T))
    common = roots_R & roots_CT
    checks["root sets intersect"] = bool(common)
    details = {"root sets intersect": f"roots(G_R)={sorted(roots_R)}, roots(G_C^T)={sorted(roots_CT)}"}
    return ValidationReport(checks, details)


def _power_iteration(M, starts, tol, max_iter):
    """Iterate ``x <- M x`` on each column of ``starts``, normalized to sum m."""
    m = M.shape[0]
    X = starts / starts.sum(axis=0) * m
    for _ in range(max_iter):
        X = M @ X
        X *= m / X.sum(axis=0)
        if np.all(np.linalg.norm(M @ X - X, axis=0) <= tol):
            return X
    raise AssumptionError(f"power iteration did not converge in {max_iter} iterations (no spectral gap?)")


def _perron_vector(M, tol, max_iter, rng):
    m = M.shape[0]
    starts = rng.random((m, 2)) + 0.5
    X = _power_iteration(M, starts, tol, max_iter)
    x1, x2 = X[:, 0], X[:, 1]
    if np.linalg.norm(x1 - x2) > 1e3 * tol * np.sqrt(m):
        raise AssumptionError("Perron eigenvector is not unique (two starts disagree)")
    x = 0.5 * (x1 + x2)
    # entries on non-root vertices decay geometrically; snap the tail to zero
    cleaned = np.where(x <= 1e-9, 0.0, x)
    cleaned *= m / cleaned.sum()
    if np.linalg.norm(M @ cleaned - cleaned) <= tol:
        x = cleaned
    return x


def perron_pair(R, C, tol: float = EIGEN_TOL, max_iter: int = POWER_ITER_CAP, seed: int = 0) -> MixingPair:
    """
    Compute the left Perron vector of ``R`` and right Perron vector of ``C``.

    Raises
    ------
    AssumptionError
        If ``(R, C)`` fail :func:`validate_assumptions`, power iteration
        stalls, or the eigenvector is not unique.
    """
    R = np.asarray(R, dtype=float)
    C = np.asarray(C, dtype=float)
    report = validate_assumptions(R, C)
    if not report.ok:
        raise AssumptionError("mixing matrices fail: " + ", ".join(report.failures()))
    rng = np.random.default_rng(seed)
    u = _perron_vector(R.T, tol, max_iter, rng)
    v = _perron_vector(C, tol, max_iter, rng)
    return MixingPair(R=R, C=C, u=u, v=v)


def mixing_matrices(g: Digraph, rule: str = "weights", self_weights=None, push_graph: str = "same"):
    """
    ``(R, C)`` built from a digraph.

    ``rule="weights"`` uses the in/out-degree weight rule with self-weights,
    ``rule="laplacian"`` uses ``I - L/(2 d_max)``. ``push_graph="reversed"``
    builds ``C`` on the reversed digraph so that trees such as lines and
    stars share a root between ``G_R`` and ``G_{C^T}``.
    """
    if push_graph not in ("same", "reversed"):
        raise ValueError(f"push_graph must be 'same' or 'reversed', got {push_graph!r}")
    gc = g if push_graph == "same" else g.reversed()
    if rule == "weights":
        return build_row_stochastic(g, self_weights), build_column_stochastic(gc, self_weights)
    if rule == "laplacian":
        return build_laplacian_mixing(g), build_laplacian_mixing(gc, column=True)
    raise ValueError(f"unknown mixing rule {rule!r}")


def mixing_from_graph(g: Digraph, rule: str = "weights", self_weights=None, push_graph: str = "same") -> MixingPair:
    """:func:`mixing_matrices` followed by :func:`perron_pair`."""
    return perron_pair(*mixing_matrices(g, rule, self_weights, push_graph))


def save_matrix_csv(path, M) -> None:
    """Write a dense matrix row-major with round-trip decimal precision."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with Path(path).open("w") as fh:
        for row in M:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
