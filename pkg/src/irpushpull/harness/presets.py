"""
Built-in experiment configurations.

Step sizes and ``lambda0`` outside the sensor preset are tuned per instance;
they are stability choices, not values taken from any reference run.
"""

from __future__ import annotations

from .config import ConfigError, ExperimentConfig, GraphSpec

EPSILON = 0.05


def _least_norm_exponents(eps=EPSILON):
    return {"a": 0.4, "b": 0.4 - eps}


def _constrained_exponents(eps=EPSILON):
    return {"a": 0.2, "b": 0.2 - eps / 3}


def _sensor():
    return ExperimentConfig(
        name="sensor",
        problem={"type": "sensor", "m": 10, "n": 20, "d": 1, "seed": 1},
        graphs=[
            GraphSpec("random", 10, seed=3, rule="weights", label="random-weights"),
            GraphSpec("random", 10, seed=3, rule="laplacian", label="random-laplacian"),
        ],
        schedule={"gamma0": 0.05, "lambda0": 0.1, "theta": 0.1, **_least_norm_exponents()},
        K=100_000,
        stride=100,
        baseline={"gamma": 0.05, "lambda": 0.1},
        notes={"epsilon": EPSILON},
    )


def _deblur():
    return ExperimentConfig(
        name="deblur",
        problem={"type": "deblur", "size": 16, "sigma": 1.0, "radius": 2, "m": 9},
        graphs=[GraphSpec("ring", 9, label="ring")],
        schedule={"gamma0": 0.4, "lambda0": 1e-3, "theta": 0.5, **_least_norm_exponents()},
        K=10_000,
        stride=10,
        notes={"epsilon": EPSILON},
    )


def _svm():
    return ExperimentConfig(
        name="svm",
        problem={"type": "svm", "m": 10, "n_train": 300, "n_test": 500, "n_features": 2,
                 "seed": 5, "eta": 0.05, "eps_sc": 1e-3},
        graphs=[
            GraphSpec("line", 10, push_graph="reversed", label="line"),
            GraphSpec("star", 10, push_graph="reversed", label="star"),
        ],
        schedule={"gamma0": 0.02, "lambda0": 0.1, "theta": 1.0, **_least_norm_exponents()},
        K=10_000,
        stride=50,
        notes={"epsilon": EPSILON},
    )


def _constrained_qp():
    return ExperimentConfig(
        name="constrained-qp",
        problem={"type": "constrained_qp", "m": 10, "n": 20, "rows": 1, "nonneg": 10, "seed": 2},
        graphs=[GraphSpec("random", 10, seed=3, label="random-weights")],
        schedule={"gamma0": 1.0, "lambda0": 0.05, "theta": 0.5, **_constrained_exponents()},
        K=100_000,
        stride=100,
        notes={"epsilon": EPSILON},
    )


def _least_norm():
    # agent 0 holds the single equation x1 + x2 = 2, agent 1 holds nothing
    return ExperimentConfig(
        name="least-norm",
        problem={"type": "least_norm", "A_blocks": [[[1.0, 1.0]], [[0.0, 0.0]]], "b_blocks": [[2.0], [0.0]]},
        graphs=[GraphSpec("ring", 2, label="ring")],
        schedule={"gamma0": 0.3, "lambda0": 0.1, "theta": 0.5, **_least_norm_exponents()},
        K=10_000,
        stride=10,
        notes={"epsilon": EPSILON},
    )


_PRESETS = {
    "sensor": _sensor,
    "deblur": _deblur,
    "svm": _svm,
    "constrained-qp": _constrained_qp,
    "least-norm": _least_norm,
}

PRESET_NAMES = tuple(_PRESETS)


def preset(name: str) -> ExperimentConfig:
    """Fresh copy of the named preset."""
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}") from None
