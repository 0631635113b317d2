"""Run an experiment config into metric CSVs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..digraph import MixingPair, ValidationReport, make_topology, mixing_matrices, validate_assumptions
from ..engine import Trajectory, run
from ..metrics import MetricRow, MetricsObserver, format_csv
from ..oracle import OracleCache, bilevel_solution, tikhonov_point
from ..problems import ProblemInstance
from .config import ConfigError, ExperimentConfig, GraphSpec, build_problem

NORM_NOTE = "all matrix norms are 2-norms of the stacked entries"


class ValidationFailure(RuntimeError):
    pass


@dataclass
class RunResult:
    tag: str
    mode: str  # "ir" or "pushpull"
    trajectory: Trajectory
    csv: str

    @property
    def rows(self) -> list[MetricRow]:
        return self.trajectory.rows

    @property
    def final(self) -> MetricRow:
        return self.rows[-1]


@dataclass
class Experiment:
    problem: ProblemInstance
    x_star: np.ndarray
    runs: list[RunResult]


def problem_spec(cfg: ExperimentConfig) -> dict:
    spec = dict(cfg.problem)
    spec.setdefault("seed", cfg.seed)
    return spec


def validate_config(cfg: ExperimentConfig) -> list[tuple[GraphSpec, ValidationReport]]:
    """Assumption checks on the mixing matrices of every graph in ``cfg``."""
    out = []
    for gs in cfg.graphs:
        g = make_topology(gs.kind, gs.m, seed=gs.seed)
        R, C = mixing_matrices(g, rule=gs.rule, self_weights=gs.self_weights, push_graph=gs.push_graph)
        out.append((gs, validate_assumptions(R, C)))
    return out


class TikhonovTrack:
    """
    ``lam -> x*_lam`` memoized and warm-started from the previous query, so a
    decreasing schedule costs a few Newton steps per observation.
    """

    def __init__(self, p: ProblemInstance, tol: float = 1e-8, cache: OracleCache | None = None):
        self.p = p
        self.tol = tol
        self.cache = cache
        self._memo: dict[float, np.ndarray] = {}
        self._last = None

    def __call__(self, lam: float) -> np.ndarray:
        lam = float(lam)
        if lam not in self._memo:
            if self.cache is not None:
                x = self.cache.tikhonov(self.p, lam, tol=self.tol, x0=self._last).x
            else:
                x = tikhonov_point(self.p, lam, tol=self.tol, x0=self._last).x
            self._memo[lam] = x
            self._last = x
        return self._memo[lam]


def header_lines(cfg: ExperimentConfig, gs: GraphSpec, mode: str, mix: MixingPair) -> list[str]:
    lines = [
        f"irpushpull {__version__}",
        f"config: {cfg.to_json()}",
        f"graph: {gs.tag}",
        f"mode: {mode}",
        f"uv_over_m: {mix.uv / mix.m!r}",
        f"norms: {NORM_NOTE}",
    ]
    if "epsilon" in cfg.notes:
        lines.append(f"epsilon: {cfg.notes['epsilon']!r}")
    return lines


def run_experiment(cfg: ExperimentConfig, base_dir=None, cache: OracleCache | None = None,
                   modes=("ir",), K: int | None = None) -> Experiment:
    """
    Run every graph of ``cfg`` in each requested mode.

    ``pushpull`` mode is fixed-regularization push-pull with the config's
    baseline step and regularization. Nothing is written to disk.
    """
    base_dir = Path(base_dir) if base_dir else Path(".")
    for gs, report in validate_config(cfg):
        if not report.ok:
            raise ValidationFailure(f"graph {gs.tag}: failed {', '.join(report.failures())}")
    p = build_problem(problem_spec(cfg), base_dir)
    x_star = (cache.bilevel(p) if cache is not None else bilevel_solution(p)).x
    track = TikhonovTrack(p, cache=cache)
    K = cfg.K if K is None else K
    stride = min(cfg.stride, K)
    schedules = {}
    for mode in modes:
        if mode == "ir":
            schedules[mode] = cfg.make_schedule()
        elif mode == "pushpull":
            schedules[mode] = cfg.make_baseline_schedule()
        else:
            raise ConfigError(f"unknown mode {mode!r}")
    results = []
    for gs in cfg.graphs:
        mix = gs.build()
        for mode, s in schedules.items():
            obs = MetricsObserver(p, mix, x_star=x_star, tikhonov=track)
            traj = run(p, mix, s, K, observers=[obs], stride=stride)
            csv = format_csv(traj.rows, header_lines(cfg, gs, mode, mix))
            results.append(RunResult(tag=gs.tag, mode=mode, trajectory=traj, csv=csv))
    return Experiment(problem=p, x_star=x_star, runs=results)


def output_paths(cfg: ExperimentConfig, results: list[RunResult], out_dir, suffix_modes: bool) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for r in results:
        stem = f"{cfg.name}_{r.tag}" + (f"_{r.mode}" if suffix_modes else "")
        paths.append(out_dir / f"{stem}.csv")
    return paths


def write_results(cfg: ExperimentConfig, results: list[RunResult], out_dir, suffix_modes: bool = False) -> list[Path]:
    paths = output_paths(cfg, results, out_dir, suffix_modes)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    for path, r in zip(paths, results):
        path.write_text(r.csv)
    return paths


def instance_report(p: ProblemInstance, xbar) -> dict:
    """Instance-specific quantities of a final average iterate."""
    out = {}
    image = getattr(p, "image", None)
    if image is not None:
        ref = image.reshape(-1)
        out["relative_error"] = float(np.linalg.norm(xbar - ref) / np.linalg.norm(ref))
        out["blurred_relative_error"] = float(np.linalg.norm(p.blurred.reshape(-1) - ref) / np.linalg.norm(ref))
    test = getattr(p, "test_data", None)
    if test is not None and test[0] is not None:
        out["test_accuracy"] = p.accuracy(xbar, *test)
    return out


def summarize(results: list[RunResult], p: ProblemInstance | None = None) -> str:
    lines = []
    for r in results:
        f = r.final
        parts = [f"{r.tag} [{r.mode}] k={f.k}", f"consensus_x={f.consensus_x:.3e}"]
        for name in ("dist_xstar", "subopt_f", "subopt_g", "infeas"):
            v = getattr(f, name)
            if v is not None:
                parts.append(f"{name}={v:.3e}")
        if p is not None:
            parts += [f"{k}={v:.4f}" for k, v in instance_report(p, f.xbar).items()]
        lines.append("  ".join(parts))
    return "\n".join(lines)
