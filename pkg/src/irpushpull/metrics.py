"""
Error metrics for push-pull runs.

All matrix norms are Frobenius (2-norm of the stacked entries); the
contraction-adapted norms of the convergence analysis are not constructed.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .digraph import MixingPair
from .engine import NetworkState, StepParams
from .problems import ProblemInstance, eval_regularized_gradient

CSV_COLUMNS = (
    "k", "gamma_hat", "lambda", "consensus_x", "consensus_y", "subopt_f", "subopt_g",
    "infeas", "tracking_residual", "dist_tikhonov", "dist_xstar",
)


_ROW_FIELDS = (
    "k", "gamma_hat", "lam", "consensus_x", "consensus_y", "subopt_f", "subopt_g",
    "infeas", "tracking_residual", "dist_tikhonov", "dist_xstar",
)


@dataclass(frozen=True)
class MetricRow:
    k: int
    gamma_hat: float
    lam: float
    consensus_x: float
    consensus_y: float
    subopt_f: float | None
    subopt_g: float | None
    infeas: float | None
    tracking_residual: float
    dist_tikhonov: float | None
    dist_xstar: float | None
    # not part of the CSV; kept for reports
    xbar: np.ndarray | None = None

    def values(self) -> tuple:
        return tuple(getattr(self, name) for name in _ROW_FIELDS)


def weighted_average(X, u) -> np.ndarray:
    """``u'X / m``."""
    X = np.asarray(X, dtype=float)
    u = np.asarray(u, dtype=float)
    if X.ndim != 2 or u.shape != (X.shape[0],):
        raise ValueError(f"weights of shape {u.shape} do not match {X.shape}")
    return u @ X / X.shape[0]


def consensus_violation(X) -> float:
    """``||X - 11'X/m||``."""
    X = np.asarray(X, dtype=float)
    return float(np.linalg.norm(X - X.mean(axis=0)))


def tracking_residual(Y, X, p: ProblemInstance, lam: float) -> float:
    """``||mean of rows of Y - mean of rows of G(X)||_2``."""
    G = eval_regularized_gradient(p, X, lam)
    return float(np.linalg.norm(np.asarray(Y).mean(axis=0) - G.mean(axis=0)))


def delta_components(X, Y, mix: MixingPair, x_tik) -> np.ndarray:
    """
    ``[||xbar - x*_lam||, ||X - 1 xbar||, ||Y - v ybar||]`` in 2-norms, with
    ``xbar`` the ``u``-weighted average and ``ybar`` the uniform one.
    """
    xbar = weighted_average(X, mix.u)
    ybar = np.asarray(Y).mean(axis=0)
    return np.array([
        np.linalg.norm(xbar - x_tik),
        np.linalg.norm(X - xbar),
        np.linalg.norm(Y - np.outer(mix.v, ybar)),
    ])


def rate_slope(ks, errs, window=None) -> float:
    """
    Least-squares slope of ``log err`` against ``log k``.

    Parameters
    ----------
    window : (lo, hi), optional
        Inclusive range of ``k`` to fit over.
    """
    ks = np.asarray(ks, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if window is not None:
        lo, hi = window
        keep = (ks >= lo) & (ks <= hi)
        ks, errs = ks[keep], errs[keep]
    if ks.size < 10:
        raise ValueError(f"need at least 10 samples in the window, got {ks.size}")
    if np.any(errs <= 0) or np.any(ks <= 0):
        raise ValueError("errors and iteration indices must be positive in the window")
    slope, _ = np.polyfit(np.log(ks), np.log(errs), 1)
    return float(slope)


class MetricsObserver:
    """
    Engine observer producing one :class:`MetricRow` per call.

    ``x_star`` is the bilevel solution (or ``None``); ``tikhonov`` maps a
    regularization value to the Tikhonov point, or is ``None`` to leave
    ``dist_tikhonov`` empty.
    """

    def __init__(self, p: ProblemInstance, mix: MixingPair, x_star=None,
                 tikhonov: Callable[[float], np.ndarray] | None = None):
        self.p = p
        self.mix = mix
        self.x_star = None if x_star is None else np.asarray(x_star, dtype=float)
        self.tikhonov = tikhonov
        if self.x_star is not None:
            self._f_star = p.f(self.x_star)
            self._g_star = p.g(self.x_star)

    def __call__(self, state: NetworkState, params: StepParams) -> MetricRow:
        p, mix = self.p, self.mix
        X, Y = state.X, state.Y
        xbar = weighted_average(X, mix.u)
        ybar = Y.mean(axis=0)
        subopt_f = subopt_g = dist_xstar = dist_tik = None
        if self.x_star is not None:
            subopt_f = p.f(xbar) - self._f_star
            subopt_g = p.g(xbar) - self._g_star
            dist_xstar = float(np.linalg.norm(xbar - self.x_star))
        if self.tikhonov is not None and params.lam > 0:
            dist_tik = float(np.linalg.norm(xbar - self.tikhonov(params.lam)))
        return MetricRow(
            k=state.k,
            gamma_hat=params.gamma_hat,
            lam=params.lam,
            consensus_x=consensus_violation(X),
            consensus_y=float(np.linalg.norm(Y - np.outer(mix.v, ybar))),
            subopt_f=subopt_f,
            subopt_g=subopt_g,
            infeas=p.infeasibility(xbar),
            tracking_residual=float(np.linalg.norm(ybar - state.G.mean(axis=0))),
            dist_tikhonov=dist_tik,
            dist_xstar=dist_xstar,
            xbar=xbar,
        )


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def format_csv(rows, header_lines=()) -> str:
    """Metric rows as CSV text with ``#``-prefixed header comments."""
    out = [f"# {line}" for line in header_lines]
    out.append(",".join(CSV_COLUMNS))
    for row in rows:
        out.append(",".join(_cell(v) for v in row.values()))
    return "\n".join(out) + "\n"


def read_csv(path) -> dict[str, np.ndarray]:
    """Parse a metrics CSV back into columns (empty cells become NaN)."""
    cols = {c: [] for c in CSV_COLUMNS}
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    header = lines[0].split(",")
    for ln in lines[1:]:
        for name, cell in zip(header, ln.split(",")):
            cols[name].append(float(cell) if cell else math.nan)
    return {k: np.array(v) for k, v in cols.items()}

