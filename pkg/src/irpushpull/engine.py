"""
Iteratively regularized push-pull iteration.

Each round, agents pull ``x_j - gamma_j y_j`` through the row-stochastic
``R`` and push ``y`` through the column-stochastic ``C``::

    X_{k+1} = R (X_k - Gamma_k Y_k)
    Y_{k+1} = C Y_k + G_{k+1}(X_{k+1}) - G_k(X_k)

where ``G_k(X)`` stacks ``grad g_i(x_i) + lambda_k grad f_i(x_i)``.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .digraph import MixingPair
from .problems import ProblemInstance, eval_regularized_gradient

DIVERGENCE_THRESHOLD = 1e100
TRACKING_TOL = 1e-10


class DivergenceError(RuntimeError):
    def __init__(self, k, detail=""):
        self.k = k
        super().__init__(f"iterates diverged at iteration {k}" + (f": {detail}" if detail else ""))


class ScheduleError(ValueError):
    pass


class InvariantError(RuntimeError):
    pass


@dataclass(frozen=True)
class Schedule:
    """
    Diminishing step-size and regularization rule.

    ``gamma_hat_k = gamma0 / (k+1)^a`` and ``lambda_k = lambda0 / (k+1)^b``
    with ``0 < b < a < 1`` and ``a + b < 1``. Agent ``i`` steps with
    ``scales[i] * gamma_hat_k``. With ``baseline=True`` both sequences are
    held constant (classical push-pull on a fixed regularization).
    """

    gamma0: float
    lambda0: float
    a: float = 0.0
    b: float = 0.0
    theta: float = 1e-3
    scales: tuple[float, ...] | None = None
    baseline: bool = False

    def __post_init__(self):
        if self.gamma0 <= 0:
            raise ScheduleError("gamma0 must be positive")
        if self.theta <= 0:
            raise ScheduleError("theta must be positive")
        if self.baseline:
            if self.lambda0 < 0:
                raise ScheduleError("fixed regularization must be nonnegative")
        else:
            if self.lambda0 <= 0:
                raise ScheduleError("lambda0 must be positive")
            if not (0 < self.b < self.a < 1 and self.a + self.b < 1):
                raise ScheduleError(f"need 0 < b < a < 1 and a + b < 1, got a={self.a}, b={self.b}")
        if self.scales is not None:
            s = np.asarray(self.scales, dtype=float)
            if np.any(s <= 0) or np.any(s > 1) or s.max() != 1.0:
                raise ScheduleError("agent step scales must lie in (0, 1] with maximum 1")
            object.__setattr__(self, "scales", tuple(float(x) for x in s))

    @classmethod
    def fixed(cls, gamma: float, lam: float, theta: float = 1e-3, scales=None) -> Schedule:
        return cls(gamma0=gamma, lambda0=lam, theta=theta, scales=scales, baseline=True)

    def gamma_hat(self, k):
        if self.baseline:
            return self.gamma0 * np.ones_like(k, dtype=float) if np.ndim(k) else self.gamma0
        return self.gamma0 / (np.asarray(k, dtype=float) + 1) ** self.a

    def lam(self, k):
        if self.baseline:
            return self.lambda0 * np.ones_like(k, dtype=float) if np.ndim(k) else self.lambda0
        return self.lambda0 / (np.asarray(k, dtype=float) + 1) ** self.b

    def Lambda(self, k):
        """``|1 - lambda_{k+1} / lambda_k|``."""
        k = np.asarray(k, dtype=float)
        if self.baseline:
            return np.zeros_like(k)
        return 1.0 - ((k + 1) / (k + 2)) ** self.b

    def agent_scales(self, m: int) -> np.ndarray:
        if self.scales is None:
            return np.ones(m)
        if len(self.scales) != m:
            raise ScheduleError(f"{len(self.scales)} step scales given for {m} agents")
        return np.asarray(self.scales)


@dataclass(frozen=True)
class StepParams:
    k: int
    gamma_hat: float
    lam: float
    gammas: np.ndarray
    alpha: float


def schedule_at(s: Schedule, k: int, mix: MixingPair) -> StepParams:
    """
    Step sizes, regularization and effective step ``alpha_k = u' Gamma_k v / m``.

    Raises ``ScheduleError`` when ``alpha_k < theta * gamma_hat_k``.
    """
    if k < 0:
        raise ValueError("iteration index must be nonnegative")
    gh = float(s.gamma_hat(k))
    gammas = s.agent_scales(mix.m) * gh
    alpha = float(np.sum(mix.u * mix.v * gammas) / mix.m)
    if alpha < s.theta * gh * (1 - 1e-12):
        raise ScheduleError(
            f"alpha_{k}={alpha:.6g} below theta*gamma_hat={s.theta * gh:.6g}; lower theta or raise root-agent scales"
        )
    return StepParams(k=k, gamma_hat=gh, lam=float(s.lam(k)), gammas=gammas, alpha=alpha)


def check_scales(s: Schedule, mix: MixingPair) -> None:
    """Agents in the common root set must take the full step ``gamma_hat``."""
    scales = s.agent_scales(mix.m)
    common = (mix.u > 0) & (mix.v > 0)
    if np.any(scales[common] != 1.0):
        raise ScheduleError("agents in the common root set must use scale 1")


@dataclass(frozen=True)
class NetworkState:
    """Stacked iterates after ``k`` rounds; ``G`` caches ``G_k(X)``."""

    k: int
    X: np.ndarray
    Y: np.ndarray
    G: np.ndarray = field(repr=False)

    def __post_init__(self):
        for arr in (self.X, self.Y, self.G):
            arr.flags.writeable = False


def _check_finite(k, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError(k, "non-finite entries")
        big = np.abs(a).max()
        if big > DIVERGENCE_THRESHOLD:
            raise DivergenceError(k, f"max |entry| = {big:.3g}")


def init_state(p: ProblemInstance, X0, s: Schedule) -> NetworkState:
    """State at ``k = 0`` with ``Y_0 = G_0(X_0)``."""
    X0 = np.array(X0, dtype=float)
    if X0.ndim == 1:
        X0 = np.tile(X0, (p.m, 1))
    if X0.shape != (p.m, p.n):
        raise ValueError(f"initial point must be {(p.m, p.n)}, got {X0.shape}")
    G = eval_regularized_gradient(p, X0, float(s.lam(0)))
    _check_finite(0, X0, G)
    return NetworkState(k=0, X=X0, Y=G.copy(), G=G)


def tracking_gap(state: NetworkState) -> float:
    """``||mean(Y) - mean(G_k(X))||_2``."""
    return float(np.linalg.norm(state.Y.mean(axis=0) - state.G.mean(axis=0)))


def step(state: NetworkState, mix: MixingPair, p: ProblemInstance, s: Schedule,
         params: StepParams | None = None, check: bool = True) -> NetworkState:
    """One synchronous push-pull round."""
    k = state.k
    if params is None:
        params = schedule_at(s, k, mix)
    X = mix.R @ (state.X - params.gammas[:, None] * state.Y)
    G = eval_regularized_gradient(p, X, float(s.lam(k + 1)))
    Y = mix.C @ state.Y + (G - state.G)
    _check_finite(k + 1, X, Y)
    new = NetworkState(k=k + 1, X=X, Y=Y, G=G)
    if check:
        gap = tracking_gap(new)
        if gap > TRACKING_TOL * (1 + np.linalg.norm(Y)):
            raise InvariantError(f"gradient tracking broken at k={k + 1}: gap {gap:.3e}")
    return new


Observer = Callable[[NetworkState, StepParams], object]


@dataclass
class Trajectory:
    """Observations at the recorded iterations plus the final state."""

    ks: list[int]
    records: list[list]
    final: NetworkState

    @property
    def rows(self) -> list:
        return self.records[0] if self.records else []


def run(p: ProblemInstance, mix: MixingPair, s: Schedule, K: int, X0=None,
        observers: Sequence[Observer] = (), stride: int = 1, check: bool = True) -> Trajectory:
    """
    Apply ``K`` rounds, calling each observer at ``k = 0, stride, 2*stride, ...``
    and at ``k = K``.
    """
    if K < 1:
        raise ValueError("need at least one iteration")
    if stride < 1:
        raise ValueError("stride must be positive")
    check_scales(s, mix)
    state = init_state(p, np.zeros((p.m, p.n)) if X0 is None else X0, s)
    ks: list[int] = []
    records: list[list] = [[] for _ in observers]

    def observe(st, params):
        ks.append(st.k)
        for rec, obs in zip(records, observers):
            rec.append(obs(st, params))

    params = schedule_at(s, 0, mix)
    observe(state, params)
    for k in range(K):
        state = step(state, mix, p, s, params=params, check=check)
        params = schedule_at(s, k + 1, mix)
        if state.k % stride == 0 or state.k == K:
            observe(state, params)
    return Trajectory(ks=ks, records=records, final=state)


def run_fixed_pushpull(p: ProblemInstance, mix: MixingPair, lam: float, gamma: float, K: int, X0=None,
                       observers: Sequence[Observer] = (), stride: int = 1, theta: float = 1e-3) -> Trajectory:
    """Push-pull on ``g + lam * f`` with constant step ``gamma``."""
    if lam < 0:
        raise ValueError("fixed regularization must be nonnegative")
    if gamma <= 0:
        raise ValueError("step size must be positive")
    s = Schedule.fixed(gamma, lam, theta=theta)
    return run(p, mix, s, K, X0=X0, observers=observers, stride=stride)
