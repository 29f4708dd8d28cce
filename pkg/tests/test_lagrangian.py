"""Regularized Lagrangian values, subgradients, and constraint sampling."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from pdnet import lagrangian as lg
from pdnet.problems import ProblemError

from conftest import make_custom_problem, toy_problem


REG = lg.RegularizationConfig(eta=1.0)


def rand_ball(rng, d):
    x = rng.normal(size=d)
    return x * rng.random() / np.linalg.norm(x)


def rand_dual(rng, m, scale=2.0):
    return rng.random(m) * scale


# -- value and gradients -------------------------------------------------------

def test_value_with_zero_multipliers(paper_logistic):
    x = np.full(5, 0.05)
    lam = np.zeros(10)
    f, _ = paper_logistic.objective(3, x)
    assert lg.lagrangian_value(paper_logistic, 3, x, lam, REG) == pytest.approx(f)


def test_value_hand_arithmetic_toy():
    p = toy_problem()
    val = lg.lagrangian_value(p, 0, np.zeros(1), np.array([2.0]), REG)
    # f(0) + 2 * g(0) - 0.5 * 1 * 4 = 0 - 1 - 2
    assert val == pytest.approx(-3.0)


def test_value_with_zero_constraints():
    f = lambda x: (float(x[0] ** 2), 2 * x)
    g = lambda x: (0.0, np.zeros(1))
    p = make_custom_problem([f], [g], lipschitz=2.0, radius=1.0, dim=1)
    lam = np.array([3.0])
    reg = lg.RegularizationConfig(eta=0.5)
    val = lg.lagrangian_value(p, 0, np.array([0.2]), lam, reg)
    assert val == pytest.approx(0.04 - 0.25 * 9.0)


def test_grad_x_zero_multipliers(paper_logistic):
    x = np.full(5, -0.03)
    _, gf = paper_logistic.objective(7, x)
    assert_allclose(lg.grad_x(paper_logistic, 7, x, np.zeros(10)), gf)


def test_grad_x_unit_multiplier_on_lower_box(paper_logistic):
    x = np.zeros(5)
    lam = np.zeros(10)
    lam[2] = 1.0  # lower-box constraint on coordinate 2, gradient -e_2
    _, gf = paper_logistic.objective(0, x)
    expected = gf.copy()
    expected[2] -= 1.0
    assert_allclose(lg.grad_x(paper_logistic, 0, x, lam), expected)


def test_grad_x_norm_bound(paper_logistic):
    rng = np.random.default_rng(0)
    L = paper_logistic.lipschitz
    for _ in range(100):
        x = rand_ball(rng, 5)
        lam = rand_dual(rng, 10)
        norm = np.linalg.norm(lg.grad_x(paper_logistic, 1, x, lam))
        assert norm <= L * (1.0 + lam.sum()) + 1e-12


def test_grad_lambda_cases(paper_logistic):
    x = np.full(5, 0.02)
    g = paper_logistic.constraint_values(x)
    assert_allclose(lg.grad_lambda(paper_logistic, x, np.zeros(10), REG), g)
    lam = np.maximum(g, 0.0) + 0.5
    reg = lg.RegularizationConfig(eta=2.0)
    assert_allclose(lg.grad_lambda(paper_logistic, x, lam, reg), g - 2.0 * lam)


def test_grad_lambda_toy_hand_value():
    p = toy_problem()
    out = lg.grad_lambda(p, np.zeros(1), np.zeros(1), REG)
    assert_allclose(out, [-0.5])


def test_negative_multiplier_rejected(paper_logistic):
    with pytest.raises(ProblemError):
        lg.grad_x(paper_logistic, 0, np.zeros(5), -np.ones(10))


def test_regularization_config_validation():
    with pytest.raises(ProblemError):
        lg.RegularizationConfig(eta=0.0)
    REG.validate_schedule([0.5, 0.25])
    with pytest.raises(ProblemError):
        REG.validate_schedule([0.6])


# -- sampling distribution ------------------------------------------------------

def test_sampling_distribution_uniform_at_zero():
    assert_allclose(lg.sampling_distribution(np.zeros(4)), np.full(4, 0.25))


def test_sampling_distribution_degenerate():
    assert_allclose(lg.sampling_distribution(np.array([2.0, 0, 0])), [1, 0, 0])


def test_sampling_distribution_normalizes():
    assert_allclose(lg.sampling_distribution(np.array([1.0, 3.0])), [0.25, 0.75])


# -- stochastic subgradient -----------------------------------------------------

def test_stochastic_grad_zero_multipliers(paper_logistic):
    x = np.full(5, 0.01)
    _, gf = paper_logistic.objective(4, x)
    for k in (0, 9):
        assert_allclose(lg.stochastic_grad_x(paper_logistic, 4, x,
                                             np.zeros(10), k), gf)


def test_stochastic_grad_single_constraint_matches_deterministic():
    f = lambda x: (float(x[0]), np.ones(1))
    g = lambda x: (float(x[0] - 0.3), np.array([1.0]))
    p = make_custom_problem([f], [g], lipschitz=1.0, radius=1.0, dim=1)
    x, lam = np.array([0.1]), np.array([0.7])
    assert_allclose(lg.stochastic_grad_x(p, 0, x, lam, 0),
                    lg.grad_x(p, 0, x, lam))


def test_stochastic_grad_index_out_of_range(paper_logistic):
    with pytest.raises(ProblemError):
        lg.stochastic_grad_x(paper_logistic, 0, np.zeros(5), np.zeros(10), 10)


@pytest.mark.parametrize("family", ["logistic", "hinge"])
def test_unbiasedness_exact_enumeration(family, paper_logistic, paper_hinge):
    p = paper_logistic if family == "logistic" else paper_hinge
    rng = np.random.default_rng(11)
    for _ in range(100):
        x = rand_ball(rng, p.dim)
        lam = rand_dual(rng, p.n_constraints)
        if rng.random() < 0.1:
            lam = np.zeros(p.n_constraints)
        probs = lg.sampling_distribution(lam)
        agent = int(rng.integers(p.n_agents))
        mixed = sum(probs[k] * lg.stochastic_grad_x(p, agent, x, lam, k)
                    for k in range(p.n_constraints))
        assert_allclose(mixed, lg.grad_x(p, agent, x, lam), atol=1e-12)


# -- convexity structure --------------------------------------------------------

def test_concave_in_lambda(paper_logistic):
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = rand_ball(rng, 5)
        lam1, lam2 = rand_dual(rng, 10), rand_dual(rng, 10)
        th = rng.random()
        mid = lg.lagrangian_value(paper_logistic, 2, x,
                                  th * lam1 + (1 - th) * lam2, REG)
        ends = (th * lg.lagrangian_value(paper_logistic, 2, x, lam1, REG)
                + (1 - th) * lg.lagrangian_value(paper_logistic, 2, x, lam2, REG))
        assert mid >= ends - 1e-10


def test_convex_in_x(paper_logistic):
    rng = np.random.default_rng(4)
    for _ in range(50):
        x1, x2 = rand_ball(rng, 5), rand_ball(rng, 5)
        lam = rand_dual(rng, 10)
        th = rng.random()
        mid = lg.lagrangian_value(paper_logistic, 5, th * x1 + (1 - th) * x2,
                                  lam, REG)
        ends = (th * lg.lagrangian_value(paper_logistic, 5, x1, lam, REG)
                + (1 - th) * lg.lagrangian_value(paper_logistic, 5, x2, lam, REG))
        assert mid <= ends + 1e-10


def test_grad_lambda_matches_finite_differences(paper_logistic):
    rng = np.random.default_rng(6)
    h = 1e-7
    for _ in range(20):
        x = rand_ball(rng, 5)
        lam = rand_dual(rng, 10) + 0.1
        grad = lg.grad_lambda(paper_logistic, x, lam, REG)
        for k in range(10):
            e = np.zeros(10)
            e[k] = h
            num = (lg.lagrangian_value(paper_logistic, 0, x, lam + e, REG)
                   - lg.lagrangian_value(paper_logistic, 0, x, lam - e, REG)) / (2 * h)
            assert num == pytest.approx(grad[k], abs=1e-6)


# -- counter-based streams -------------------------------------------------------

def test_iteration_uniforms_deterministic():
    a = lg.iteration_uniforms(9, 100, 16)
    b = lg.iteration_uniforms(9, 100, 16)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, lg.iteration_uniforms(9, 101, 16))
    assert not np.array_equal(a, lg.iteration_uniforms(10, 100, 16))


def test_sample_constraint_indices_rows():
    lam = np.array([[0.0, 0.0, 0.0],
                    [2.0, 0.0, 0.0],
                    [1.0, 1.0, 2.0]])
    u = np.array([0.5, 0.99, 0.6])
    ks = lg.sample_constraint_indices(lam, u)
    assert ks[0] == 1      # uniform thirds, 0.5 lands in the middle
    assert ks[1] == 0      # degenerate distribution
    assert ks[2] == 2      # cumulative (0.25, 0.5, 1.0), 0.6 -> last
    assert ks.max() < 3


def test_sample_constraint_indices_match_scalar_distribution():
    rng = np.random.default_rng(12)
    lam = rng.random((500, 6)) * (rng.random((500, 1)) > 0.2)
    u = rng.random(500)
    ks = lg.sample_constraint_indices(lam, u)
    for i in (0, 17, 333):
        probs = lg.sampling_distribution(lam[i])
        cdf = np.cumsum(probs)
        expected = int(np.searchsorted(cdf, u[i], side="right"))
        assert ks[i] == min(expected, 5)
