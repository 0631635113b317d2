"""Experiment configuration: JSON files, problem and graph builders."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..digraph import MixingPair, make_topology, mixing_from_graph
from ..engine import Schedule
from ..problems import (
    ProblemInstance,
    gaussian_kernel,
    load_csv_table,
    make_blur_instance,
    make_least_norm_ls,
    make_linear_constrained,
    make_svm_instance,
)


class ConfigError(ValueError):
    pass


@dataclass
class GraphSpec:
    kind: str
    m: int
    seed: int | None = None
    rule: str = "weights"  # "weights" or "laplacian"
    self_weights: float | list[float] | None = None
    push_graph: str = "same"  # "same" or "reversed"
    label: str | None = None

    @property
    def tag(self) -> str:
        return self.label or f"{self.kind}-{self.rule}"

    def build(self) -> MixingPair:
        g = make_topology(self.kind, self.m, seed=self.seed)
        return mixing_from_graph(g, rule=self.rule, self_weights=self.self_weights, push_graph=self.push_graph)


@dataclass
class ExperimentConfig:
    name: str
    problem: dict
    graphs: list[GraphSpec]
    schedule: dict
    K: int = 1000
    stride: int = 10
    seed: int = 0
    output: str | None = None
    baseline: dict | None = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.graphs = [g if isinstance(g, GraphSpec) else GraphSpec(**g) for g in self.graphs]
        if not self.graphs:
            raise ConfigError("at least one graph is required")
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.stride < 1:
            raise ConfigError("stride must be positive")
        self.make_schedule()  # validates exponents

    def make_schedule(self) -> Schedule:
        s = dict(self.schedule)
        scales = s.pop("scales", None)
        try:
            return Schedule(scales=tuple(scales) if scales is not None else None, **s)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad schedule: {exc}") from exc

    def make_baseline_schedule(self) -> Schedule:
        if not self.baseline:
            raise ConfigError(f"config {self.name!r} has no baseline section")
        return Schedule.fixed(self.baseline["gamma"], self.baseline["lambda"], theta=self.schedule.get("theta", 1e-3))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["graphs"] = [asdict(g) for g in self.graphs]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def load_config(path) -> ExperimentConfig:
    """
    Read a JSON config. ``{"preset": name, ...}`` starts from a preset and
    overrides its top-level keys; otherwise the file must be a full config.
    """
    from .presets import preset

    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if "preset" in raw:
        base = preset(raw.pop("preset")).to_dict()
        for key, value in raw.items():
            if isinstance(value, dict) and isinstance(base.get(key), dict):
                base[key] = {**base[key], **value}
            else:
                base[key] = value
        raw = base
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# problem generators -------------------------------------------------------------------

def sensor_data(m, n, d, seed):
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((m, d, n))
    z = rng.standard_normal((m, d))
    return H, z


def constrained_qp_data(m, n, rows, n_nonneg, seed):
    """
    Strongly convex quadratic outer objective over ``{Ax = b, x_J >= 0}``.

    Constraint rows are orthonormal (``m * rows <= n``) so that ``L_g`` stays
    near one, and the outer objective is centered on a known feasible point
    plus a random tilt, which keeps ``|f(x*_lam) - f(x*)|`` of order ``lam``.
    """
    if m * rows > n:
        raise ConfigError(f"need m * rows <= n for orthonormal constraints, got {m * rows} > {n}")
    rng = np.random.default_rng(seed)
    A = np.linalg.qr(rng.standard_normal((n, m * rows)))[0].T.reshape(m, rows, n)
    x_feas = np.abs(rng.standard_normal(n))
    x_feas[rng.permutation(n)[: n // 4]] = 0.0
    b = A @ x_feas
    Q = []
    for _ in range(m):
        B = rng.standard_normal((n, n)) / np.sqrt(n)
        Q.append((B @ B.T + np.eye(n)) / m)
    Q = np.array(Q)
    q = (rng.standard_normal((m, n)) - Q.sum(axis=0) @ x_feas) / m
    return Q, q, A, b, np.arange(n_nonneg)


def synthetic_image(size):
    """Piecewise-constant test image with values in [0, 1]."""
    img = np.zeros((size, size))
    s = size
    img[s // 8: s // 2, s // 8: s // 2] = 1.0
    img[s // 2: 7 * s // 8, s // 3: 3 * s // 4] = 0.6
    yy, xx = np.mgrid[:s, :s]
    img[(yy - 0.7 * s) ** 2 + (xx - 0.25 * s) ** 2 <= (s / 6) ** 2] = 0.8
    return img


def svm_data(n_train, n_test, n_features, seed, separation=1.0):
    rng = np.random.default_rng(seed)
    total = n_train + n_test
    labels = np.where(rng.random(total) < 0.5, -1.0, 1.0)
    mean = separation * np.ones(n_features) / np.sqrt(n_features)
    U = rng.standard_normal((total, n_features)) + labels[:, None] * mean
    return U[:n_train], labels[:n_train], U[n_train:], labels[n_train:]


def _svm_partition(n_train, m, seed):
    perm = np.random.default_rng(seed).permutation(n_train)
    return [np.sort(c) for c in np.array_split(perm, m)]


def build_problem(spec: dict, base_dir: Path | None = None) -> ProblemInstance:
    """Instantiate a problem from its config section."""
    spec = copy.deepcopy(spec)
    kind = spec.pop("type", None)
    base_dir = base_dir or Path(".")
    try:
        if kind == "sensor":
            H, z = sensor_data(spec["m"], spec["n"], spec["d"], spec["seed"])
            p = make_least_norm_ls(list(H), list(z))
            p.name = "sensor"
            return p
        if kind == "least_norm":
            if "A_csv" in spec:
                _, A = load_csv_table(base_dir / spec["A_csv"])
                _, b = load_csv_table(base_dir / spec["b_csv"])
                rows = np.array_split(np.arange(A.shape[0]), spec["agents"])
                return make_least_norm_ls([A[r] for r in rows], [b.reshape(-1)[r] for r in rows])
            return make_least_norm_ls(spec["A_blocks"], spec["b_blocks"])
        if kind == "constrained_qp":
            Q, q, A, b, J = constrained_qp_data(spec["m"], spec["n"], spec["rows"], spec["nonneg"], spec["seed"])
            p = make_linear_constrained(Q, q, list(A), list(b), nonneg=J)
            p.name = "constrained-qp"
            return p
        if kind == "deblur":
            img = synthetic_image(spec["size"])
            kernel = gaussian_kernel(spec["sigma"], spec["radius"])
            return make_blur_instance(img, kernel, spec["m"], noise=spec.get("noise", 0.0), seed=spec.get("seed"))
        if kind == "svm":
            if "train_csv" in spec:
                _, tr = load_csv_table(base_dir / spec["train_csv"])
                U, lab = tr[:, :-1], tr[:, -1]
                Ut, labt = None, None
                if "test_csv" in spec:
                    _, te = load_csv_table(base_dir / spec["test_csv"])
                    Ut, labt = te[:, :-1], te[:, -1]
            else:
                U, lab, Ut, labt = svm_data(spec["n_train"], spec["n_test"], spec["n_features"], spec["seed"],
                                            spec.get("separation", 1.0))
            part = _svm_partition(len(lab), spec["m"], spec["seed"])
            p = make_svm_instance(U, lab, part, eta=spec["eta"], eps_sc=spec.get("eps_sc", 1e-3))
            p.test_data = (Ut, labt)
            return p
    except KeyError as exc:
        raise ConfigError(f"problem spec {kind!r} is missing key {exc}") from exc
    raise ConfigError(f"unknown problem type {kind!r}")
