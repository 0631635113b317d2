import numpy as np
import pytest

from irpushpull.digraph import MixingPair
from irpushpull.harness.config import (
    _svm_partition,
    constrained_qp_data,
    sensor_data,
    svm_data,
    synthetic_image,
)
from irpushpull.problems import (
    QuadraticObjective,
    LeastSquaresInstance,
    gaussian_kernel,
    make_blur_instance,
    make_least_norm_ls,
    make_linear_constrained,
    make_svm_instance,
)


def single_agent_mix():
    one = np.ones((1, 1))
    return MixingPair(R=one, C=one, u=np.ones(1), v=np.ones(1))


def scalar_quadratic(c=1.0):
    """``g = 1/2 (x - c)^2`` and ``f = x^2`` for one agent in one dimension."""
    return make_least_norm_ls([[[1.0]]], [[c]])


def small_sensor(seed=0):
    H, z = sensor_data(4, 6, 1, seed)
    return make_least_norm_ls(list(H), list(z))


def small_constrained(seed=0, nonneg=4):
    Q, q, A, b, J = constrained_qp_data(3, 8, 2, nonneg, seed)
    return make_linear_constrained(Q, q, list(A), list(b), nonneg=J)


def small_deblur():
    return make_blur_instance(synthetic_image(6), gaussian_kernel(1.0, 1), 3)


def small_svm(seed=0, m=4):
    U, lab, Ut, labt = svm_data(20, 10, 2, seed)
    p = make_svm_instance(U, lab, _svm_partition(20, m, seed), eta=0.05)
    p.test_data = (Ut, labt)
    return p


def dense_quadratic_ls(seed=0):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((3, 5, 5))
    Q = np.einsum("kij,klj->kil", B, B) + np.eye(5)
    fobj = QuadraticObjective(Q, rng.standard_normal((3, 5)), 5)
    return LeastSquaresInstance([rng.standard_normal((2, 5)) for _ in range(3)],
                                [rng.standard_normal(2) for _ in range(3)], fobj)


INSTANCES = {
    "sensor": small_sensor,
    "constrained": small_constrained,
    "deblur": small_deblur,
    "svm": small_svm,
    "dense-ls": dense_quadratic_ls,
}


@pytest.fixture(params=sorted(INSTANCES))
def instance(request):
    return INSTANCES[request.param]()
