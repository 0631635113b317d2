import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from conftest import INSTANCES, small_constrained, small_svm
from irpushpull.problems import (
    blur_matrix_1d,
    eval_regularized_gradient,
    gaussian_kernel,
    load_csv_table,
    make_blur_instance,
    make_least_norm_ls,
    make_linear_constrained,
    make_svm_instance,
)


def central_diff(fun, x, h=1e-6):
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def random_points(p, k, seed=0, scale=1.0):
    return scale * np.random.default_rng(seed).standard_normal((k, p.n))


# regularized gradient -----------------------------------------------------------------

def test_regularized_gradient_examples():
    p = make_least_norm_ls([[[1.0, 1.0]]], [[2.0]])
    np.testing.assert_allclose(eval_regularized_gradient(p, [[0.0, 0.0]], 0.0), [[-2, -2]])
    np.testing.assert_allclose(eval_regularized_gradient(p, [[0.0, 0.0]], 1.0), [[-2, -2]])
    np.testing.assert_allclose(eval_regularized_gradient(p, [[1.0, 1.0]], 1.0), [[2, 2]])


def test_regularized_gradient_errors():
    p = make_least_norm_ls([[[1.0, 1.0]]], [[2.0]])
    with pytest.raises(ValueError):
        eval_regularized_gradient(p, np.zeros((2, 2)), 0.0)
    with pytest.raises(ValueError):
        eval_regularized_gradient(p, np.zeros((1, 2)), -1.0)


def test_regularized_gradient_rows(instance):
    X = random_points(instance, instance.m, seed=4)
    G = eval_regularized_gradient(instance, X, 0.3)
    for i in range(instance.m):
        expect = instance.grad_g_local(i, X[i]) + 0.3 * instance.grad_f_local(i, X[i])
        np.testing.assert_allclose(G[i], expect, rtol=1e-12, atol=1e-12)


# least norm ---------------------------------------------------------------------------

def test_least_norm_constants():
    A = [np.array([[1.0, 2.0]]), np.array([[3.0, 0.0]]), np.zeros((1, 2))]
    p = make_least_norm_ls(A, [[1.0], [2.0], [0.0]])
    assert p.mu_f == pytest.approx(2 / 3) and p.L_f == pytest.approx(2 / 3)
    assert p.L_g == pytest.approx(9.0)
    x = np.array([0.3, -1.2])
    assert p.f(x) == pytest.approx(x @ x)
    assert p.g(x) == pytest.approx(0.5 * ((x[0] + 2 * x[1] - 1) ** 2 + (3 * x[0] - 2) ** 2))


def test_least_norm_errors():
    with pytest.raises(ValueError):
        make_least_norm_ls([], [])
    with pytest.raises(ValueError):
        make_least_norm_ls([np.ones((1, 2)), np.ones((1, 3))], [[1.0], [1.0]])


# linear constraints -------------------------------------------------------------------

def test_hinge_gradient_example():
    # n = 1, J = {0}, no equality rows, x = -2
    m = 2
    p = make_linear_constrained(np.ones(m), None, [np.zeros((0, 1))] * m, [np.zeros(0)] * m, nonneg=[0])
    x = np.array([-2.0])
    assert p.g_local(0, x) == pytest.approx(4 / (2 * m))
    np.testing.assert_allclose(p.grad_g_local(0, x), [-2 / m])


def test_linear_constrained_lipschitz_constant():
    p = small_constrained()
    rho = max(np.linalg.eigvalsh(A.T @ A).max() for A in p.A_blocks)
    assert p.L_g == pytest.approx(rho + 1 / np.sqrt(p.m))


def test_non_pd_quadratic_rejected():
    with pytest.raises(ValueError):
        make_linear_constrained([np.diag([1.0, 0.0])], None, [np.eye(2)], [np.ones(2)])
    with pytest.raises(ValueError):
        make_linear_constrained([np.array([[1.0, 2.0], [0.0, 1.0]])], None, [np.eye(2)], [np.ones(2)])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["feasible", "negative", "equality"]))
def test_feasibility_equivalence(seed, kind):
    rng = np.random.default_rng(seed)
    n, J = 6, np.array([0, 2, 3])
    A = [rng.standard_normal((1, n)), rng.standard_normal((2, n))]
    x = rng.standard_normal(n)
    x[J] = np.abs(x[J])
    b = [Ai @ x for Ai in A]
    p = make_linear_constrained(np.ones(2), None, A, b, nonneg=J)
    if kind == "negative":
        x[J[rng.integers(3)]] = -0.5 - rng.random()
    elif kind == "equality":
        x = x + A[0][0]
    feasible = np.allclose(p.A @ x, p.b, atol=1e-12) and np.all(x[J] >= 0)
    assert feasible == (kind == "feasible")
    if feasible:
        assert p.g(x) <= 1e-20 and np.linalg.norm(p.grad_g(x)) <= 1e-10
    else:
        assert p.g(x) > 1e-6


def test_infeasibility_is_twice_g_without_hinges():
    p = small_constrained(nonneg=0)
    for x in random_points(p, 20):
        assert abs(p.infeasibility(x) - 2 * p.g(x)) <= 1e-12 * max(1.0, p.g(x))


# blur ---------------------------------------------------------------------------------

def test_blur_identity_kernel():
    img = np.arange(9.0).reshape(3, 3)
    p = make_blur_instance(img, [1.0], 3)
    np.testing.assert_array_equal(p.A, np.eye(9))
    np.testing.assert_array_equal(p.b, img.reshape(-1))


def test_blur_two_by_two_matches_correlation():
    img = np.array([[1.0, 2.0], [3.0, 4.0]])
    T = blur_matrix_1d(2, [0.5, 0.5])
    np.testing.assert_allclose(img @ T.T, ndimage.correlate1d(img, [0.5, 0.5], axis=1, mode="reflect"))


@pytest.mark.parametrize("sigma,radius,w", [(1.0, 2, 16), (0.7, 1, 5), (2.0, 3, 8)])
def test_blur_matches_ndimage(sigma, radius, w):
    k = gaussian_kernel(sigma, radius)
    img = np.random.default_rng(0).random((w, w))
    p = make_blur_instance(img, k, 4)
    ref = ndimage.correlate(img, np.outer(k, k), mode="reflect")
    np.testing.assert_allclose(p.b.reshape(w, w), ref, atol=1e-14)


def test_blur_split_invariance():
    img = np.random.default_rng(1).random((6, 6))
    k = gaussian_kernel(1.0, 1)
    p1, p4 = make_blur_instance(img, k, 1), make_blur_instance(img, k, 4)
    for x in random_points(p1, 10):
        assert p1.g(x) == pytest.approx(p4.g(x), rel=1e-12)
        assert p1.f(x) == pytest.approx(0.5 * x @ x) and p4.f(x) == pytest.approx(0.5 * x @ x)


def test_blur_kernel_too_wide():
    with pytest.raises(ValueError):
        make_blur_instance(np.ones((2, 2)), gaussian_kernel(1.0, 2), 1)


def test_blur_noise_seeded():
    img = np.ones((4, 4))
    a = make_blur_instance(img, [1.0], 2, noise=0.1, seed=3)
    b = make_blur_instance(img, [1.0], 2, noise=0.1, seed=3)
    np.testing.assert_array_equal(a.b, b.b)
    assert not np.array_equal(a.b, img.reshape(-1))


# SVM ----------------------------------------------------------------------------------

def test_svm_feasible_point_has_zero_g():
    U = np.array([[-1.0], [1.0]])
    lab = np.array([-1.0, 1.0])
    p = make_svm_instance(U, lab, [[0], [1]])
    w = np.array([1.0, 0.0, 0.0, 0.0])  # x = 1, b = 0, z = 0: margins exactly 1
    assert p.g(w) == 0.0
    np.testing.assert_array_equal(p.grad_g(w), 0.0)
    assert p.g(np.array([3.0, 0.0, 0.0, 0.0])) == 0.0


def test_svm_negative_slack_gradient():
    U = np.array([[-1.0], [1.0]])
    p = make_svm_instance(U, np.array([-1.0, 1.0]), [[0], [1]])
    w = np.array([3.0, 0.0, -1.0, 0.5])  # z_0 = -1 with the margin hinge inactive
    g = p.grad_g(w)
    assert g[2] == pytest.approx(-1.0)  # d/dz of 1/2 max(0, -z)^2 is -max(0, -z)
    np.testing.assert_allclose(g, central_diff(p.g, w), atol=1e-8)


def test_svm_objective_layout():
    p = small_svm()
    w = np.random.default_rng(2).standard_normal(p.n)
    x, b, z = p.split(w)
    expect = 0.05 / 2 * x @ x + z.sum() + p.eps_sc / 2 * (b * b + z @ z)
    assert p.f(w) == pytest.approx(expect)


def test_svm_validation():
    U = np.zeros((2, 1))
    with pytest.raises(ValueError):
        make_svm_instance(U, [0.0, 1.0], [[0], [1]])
    with pytest.raises(ValueError):
        make_svm_instance(U, [1.0, 1.0], [[0], [0]])
    with pytest.raises(ValueError):
        make_svm_instance(U, [1.0, 1.0], [[0], [1]], eta=0.0)
    # an empty cell is allowed
    assert make_svm_instance(U, [1.0, -1.0], [[0, 1], []]).m == 2


# properties shared by every instance --------------------------------------------------

def test_gradients_match_finite_differences(instance):
    p = instance
    for x in random_points(p, 100, seed=7):
        for i in range(p.m):
            for fun, grad in ((p.f_local, p.grad_f_local), (p.g_local, p.grad_g_local)):
                fd = central_diff(lambda z: fun(i, z), x)
                an = grad(i, x)
                assert np.linalg.norm(an - fd) <= 1e-5 * max(1.0, np.linalg.norm(an))
        if p.n > 40:
            break  # the deblur/SVM instances are large; one point per agent suffices


def test_lipschitz_and_strong_convexity(instance):
    p = instance
    rng = np.random.default_rng(11)
    for _ in range(100):
        x, y = rng.standard_normal((2, p.n)) * 2
        d = x - y
        for i in range(p.m):
            dg = p.grad_g_local(i, x) - p.grad_g_local(i, y)
            assert np.linalg.norm(dg) <= p.L_g * np.linalg.norm(d) * (1 + 1e-10)
            assert dg @ d >= -1e-10  # monotone
            df = p.grad_f_local(i, x) - p.grad_f_local(i, y)
            assert df @ d >= p.mu_f * (d @ d) * (1 - 1e-10)
            assert np.linalg.norm(df) <= p.L_f * np.linalg.norm(d) * (1 + 1e-10)


def test_penalty_residuals_consistent(instance):
    p = instance
    for x in random_points(p, 10, seed=5):
        r, J = p.penalty_residuals(x)
        assert 0.5 * r @ r == pytest.approx(p.g(x), rel=1e-10, abs=1e-14)
        np.testing.assert_allclose(J.T @ r, p.grad_g(x), rtol=1e-9, atol=1e-12)


def test_aggregate_matches_local_sum(instance):
    p = instance
    x = random_points(p, 1, seed=9)[0]
    assert p.g(x) == pytest.approx(sum(p.g_local(i, x) for i in range(p.m)), rel=1e-12)
    assert p.f(x) == pytest.approx(sum(p.f_local(i, x) for i in range(p.m)), rel=1e-12)
    np.testing.assert_allclose(p.grad_g(x), sum(p.grad_g_local(i, x) for i in range(p.m)), atol=1e-10)


def test_fingerprint_stable():
    a, b = INSTANCES["constrained"](), INSTANCES["constrained"]()
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != small_constrained(seed=1).fingerprint()


def test_load_csv_table(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b\n1,2.5\n-3,4e-2\n")
    header, data = load_csv_table(path)
    assert header == ["a", "b"]
    np.testing.assert_array_equal(data, [[1, 2.5], [-3, 0.04]])
