import math

import numpy as np
import pytest

from riemnet.autograd import Graph, Parameter
from riemnet.errors import LineSearchFailed, MissingGradient, NotPositiveDefinite
from riemnet.manifolds import Euclidean, PositiveDefinite, Stiefel
from riemnet.nn import Linear, Sequential
from riemnet.optim import (
    SGD,
    Adagrad,
    AdagradConfig,
    ConjugateGradient,
    SgdConfig,
    adagrad_step,
    compute_rgrad,
    sgd_step,
    step_all,
)
from riemnet.problems import RayleighProblem, random_symmetric


def scalar(value, egrad):
    p = Parameter([value], Euclidean(1))
    p.egrad = np.array([egrad])
    return p


class TestComputeRgrad:
    def test_euclidean_passthrough(self):
        p = Parameter([[1.0, 2.0]])
        p.egrad = np.array([[3.0, -4.0]])
        np.testing.assert_array_equal(compute_rgrad(p), [[3.0, -4.0]])
        np.testing.assert_array_equal(p.rgrad, [[3.0, -4.0]])

    def test_stiefel_symmetric_egrad_vanishes(self):
        p = Parameter(np.eye(3), Stiefel(3, 3))
        a = np.random.default_rng(0).standard_normal((3, 3))
        p.egrad = a + a.T
        np.testing.assert_allclose(compute_rgrad(p), np.zeros((3, 3)), atol=1e-15)

    def test_spd_at_identity_symmetrizes(self):
        p = Parameter(np.eye(2), PositiveDefinite(2))
        p.egrad = np.array([[1.0, 2.0], [0.0, 1.0]])
        np.testing.assert_allclose(compute_rgrad(p), [[1.0, 1.0], [1.0, 1.0]])

    def test_missing(self):
        with pytest.raises(MissingGradient):
            compute_rgrad(Parameter([1.0]))


class TestSgd:
    def test_scalar(self):
        p = scalar(1.0, 2.0)
        SGD([p], lr=0.1).step()
        assert p.value[0] == pytest.approx(0.8, abs=1e-15)

    @pytest.mark.parametrize("t", [0.1, 0.5, 2.0])
    def test_stiefel_column(self, t):
        p = Parameter([[1.0], [0.0]], Stiefel(2, 1))
        p.egrad = np.array([[0.0], [1.0]])
        SGD([p], lr=t).step()
        np.testing.assert_allclose(p.value, np.array([[1.0], [-t]]) / math.sqrt(1 + t * t), atol=1e-15)

    @pytest.mark.parametrize("m", [Euclidean(3, 2), Stiefel(3, 2), PositiveDefinite(3)], ids=str)
    def test_zero_gradient_leaves_value_bitwise(self, m):
        x = m.rand(1)
        p = Parameter(x.copy(), m)
        p.egrad = np.zeros(m.shape)
        SGD([p], lr=0.5, momentum=0.9).step()
        assert p.value.tobytes() == x.tobytes()

    def test_euclidean_momentum_is_heavy_ball(self):
        p = scalar(0.0, 1.0)
        opt = SGD([p], lr=0.1, momentum=0.5)
        opt.step()
        p.egrad = np.array([1.0])
        opt.step()
        # buffers 1 then 0.5*1 + 1 = 1.5; value -0.1 - 0.15
        assert p.value[0] == pytest.approx(-0.25, abs=1e-15)

    def test_momentum_buffer_stays_tangent(self):
        rng = np.random.default_rng(2)
        for m in (Stiefel(6, 3), PositiveDefinite(3)):
            p = Parameter(m.rand(rng), m)
            opt = SGD([p], lr=1e-2, momentum=0.9)
            for _ in range(20):
                p.egrad = rng.standard_normal(m.shape)
                opt.step()
                state = opt.state[p.id]
                assert m.is_tangent(p.value, state["momentum_buffer"], 1e-8)
                np.testing.assert_array_equal(state["prev_point"], p.value)


class TestAdagrad:
    def test_first_step(self):
        p = scalar(0.0, 3.0)
        opt = Adagrad([p], lr=0.01, eps=1e-10)
        opt.step()
        assert opt.state[p.id]["accumulator"][0] == 9.0
        assert p.value[0] == pytest.approx(-0.01, abs=1e-12)

    def test_second_step_smaller(self):
        p = scalar(0.0, 3.0)
        opt = Adagrad([p], lr=0.01)
        opt.step()
        first = -p.value[0]
        p.egrad = np.array([3.0])
        opt.step()
        assert 0 < -p.value[0] - first < first

    def test_ten_steps_match_textbook_formula(self):
        # f(x) = (x - 3)^2, gradient 2(x - 3)
        lr, eps = 0.3, 1e-10
        p = Parameter([0.0])
        opt = Adagrad([p], lr=lr, eps=eps)
        x, acc = 0.0, 0.0
        for _ in range(10):
            g = 2 * (x - 3)
            acc += g * g
            x -= lr * g / (math.sqrt(acc) + eps)
            p.egrad = np.array([2 * (p.value[0] - 3)])
            opt.step()
            assert p.value[0] == x

    def test_stiefel_feasible_and_direction_tangent(self):
        rng = np.random.default_rng(3)
        m = Stiefel(5, 2)
        p = Parameter(m.rand(rng), m)
        state = {}
        for _ in range(10):
            x = p.value
            p.egrad = rng.standard_normal(m.shape)
            compute_rgrad(p)
            adagrad_step(p, AdagradConfig(0.1), state)
            assert m.is_tangent(x, state["direction"], 1e-8)
            assert m.is_point(p.value, 1e-8)


def quadratic(p, diag):
    def objective():
        return 0.5 * float(np.sum(diag * p.value**2))
    return objective


class TestConjugateGradient:
    def test_first_step_is_steepest_descent_with_armijo_step(self):
        diag = np.array([1.0, 4.0, 9.0])
        x0 = np.array([1.0, 1.0, 1.0])
        p = Parameter(x0.copy())
        f = quadratic(p, diag)
        p.egrad = diag * x0
        opt = ConjugateGradient([p])
        opt.step(f)
        # brute-force Armijo: first t = 0.5^k with sufficient decrease along -g
        g = diag * x0
        f0 = 0.5 * np.sum(diag * x0**2)
        t = 1.0
        while 0.5 * np.sum(diag * (x0 - t * g) ** 2) > f0 - 1e-4 * t * np.sum(g * g):
            t *= 0.5
        np.testing.assert_allclose(p.value, x0 - t * g, rtol=0, atol=1e-15)
        assert opt.state[p.id]["last_step"] == t

    @pytest.mark.parametrize("rule", ["fletcher_reeves", "polak_ribiere_plus"])
    def test_quadratic_converges(self, rule):
        rng = np.random.default_rng(4)
        x0 = rng.standard_normal(5)
        x0 /= np.linalg.norm(x0)
        p = Parameter(x0)
        f = quadratic(p, np.ones(5))
        opt = ConjugateGradient([p], beta_rule=rule)
        for _ in range(25):
            p.egrad = p.value.copy()
            opt.step(f)
        assert np.linalg.norm(p.value) <= 1e-8

    def test_zero_gradient_is_a_no_op(self):
        p = Parameter([1.0, 2.0])
        p.egrad = np.zeros(2)

        def objective():
            raise AssertionError("objective evaluated")

        ConjugateGradient([p]).step(objective)
        np.testing.assert_array_equal(p.value, [1.0, 2.0])

    def test_needs_objective(self):
        p = scalar(1.0, 1.0)
        with pytest.raises(ValueError):
            ConjugateGradient([p]).step()

    def test_line_search_failure_restores_point(self):
        p = scalar(1.0, 1.0)
        # an ascent-only objective: nothing ever satisfies Armijo
        opt = ConjugateGradient([p], max_backtracks=3)
        with pytest.raises(LineSearchFailed, match="parameter"):
            opt.step(lambda: -float(p.value[0] ** 2) if p.value[0] != 1.0 else -10.0)
        assert p.value[0] == 1.0
        assert opt.state[p.id] == {}

    @pytest.mark.parametrize("rule", ["fletcher_reeves", "polak_ribiere_plus"])
    @pytest.mark.parametrize("seed", range(3))
    def test_rayleigh_strict_decrease_and_tangent_directions(self, rule, seed):
        prob = RayleighProblem(random_symmetric(12, seed), 3, seed=seed + 10)
        m = prob.manifold
        opt = ConjugateGradient(prob.parameters, beta_rule=rule)
        values = [prob.loss()]
        for _ in range(500):
            opt.zero_grad()
            prob.backward()
            if m.norm(prob.param.value, compute_rgrad(prob.param)) <= 1e-8:
                break
            try:
                opt.step(prob.loss)
            except LineSearchFailed:
                # only acceptable once the cost is flat to its last few ulps
                assert values[-1] - prob.optimum() <= 64 * np.spacing(abs(values[-1]))
                break
            state = opt.state[prob.param.id]
            assert m.is_tangent(state["prev_point"], state["prev_direction"], 1e-8)
            assert state["last_value"] == prob.loss()
            values.append(prob.loss())
            assert values[-1] < values[-2]
        assert values[-1] - prob.optimum() <= 1e-10


class TestInvariants:
    @staticmethod
    def least_squares_run(m, momentum, seed, steps=500):
        """SGD on ||X B - C||^2 / (2k) with C planted at a random point of ``m``
        plus noise, so the minimizer lies inside the feasible set."""
        rng = np.random.default_rng(seed)
        p = Parameter(m.rand(rng), m)
        k = 20
        b = rng.standard_normal((p.shape[1], k)) / math.sqrt(p.shape[1])
        c = m.rand(rng) @ b + 0.1 * rng.standard_normal((p.shape[0], k))
        opt = SGD([p], lr=1e-2, momentum=momentum)
        for _ in range(steps):
            opt.zero_grad()
            p.egrad = (p.value @ b - c) @ b.T / k
            opt.step()
        return p

    @pytest.mark.parametrize("m", [Stiefel(6, 3), Stiefel(8, 3, transposed=True), Stiefel(5, 5)], ids=str)
    @pytest.mark.parametrize("seed", range(5))
    def test_stiefel_survives_long_momentum_run(self, m, seed):
        p = self.least_squares_run(m, 0.9, seed)
        assert p.manifold.residual(p.value) <= 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_spd_stays_positive_without_momentum(self, seed):
        p = self.least_squares_run(PositiveDefinite(4), 0.0, seed)
        assert np.linalg.eigvalsh(p.value).min() > 0

    @pytest.mark.xfail(strict=True, raises=NotPositiveDefinite,
                       reason="identity transport is not an isometry of the affine-invariant metric: "
                              "a stale momentum buffer keeps its size relative to a shrinking "
                              "eigenvalue and walks the iterate into the cone boundary")
    def test_spd_stays_positive_with_momentum(self):
        p = self.least_squares_run(PositiveDefinite(4), 0.9, 0)
        assert np.linalg.eigvalsh(p.value).min() > 0

    def test_small_step_sgd_descends_on_rayleigh(self):
        prob = RayleighProblem(random_symmetric(50, 8), 5, seed=8)
        opt = SGD(prob.parameters, lr=1e-3)
        losses = [prob.loss()]
        for _ in range(100):
            opt.zero_grad()
            prob.backward()
            opt.step()
            losses.append(prob.loss())
        assert all(b <= a for a, b in zip(losses, losses[1:]))


class TestStepAll:
    def test_frozen_parameter_untouched(self):
        model = Sequential(Linear(3, 3, weight_manifold="stiefel", rng=0), Linear(3, 2, rng=1))
        model[1].weight.requires_grad = False
        frozen = model[1].weight.value.copy()
        g = Graph()
        g.sum(model.build(g, g.input("x", (4, 3))))
        g.forward({"x": np.random.default_rng(9).standard_normal((4, 3))})
        g.backward()
        assert model[1].weight.egrad is None
        before = model[0].weight.value.copy()
        step_all(SGD(model.parameters(), lr=0.1), model)
        assert model[1].weight.value.tobytes() == frozen.tobytes()
        assert not np.array_equal(model[0].weight.value, before)

    def test_mixed_model(self):
        rng = np.random.default_rng(10)
        model = Sequential(Linear(4, 4, weight_manifold="spd", rng=rng), Linear(4, 6, weight_manifold="stiefel", rng=rng),
                           Linear(6, 2, rng=rng))
        opt = Adagrad(model.parameters(), lr=0.05)
        x = rng.standard_normal((5, 4))
        for _ in range(3):
            opt.zero_grad()
            g = Graph()
            g.sum(model.build(g, g.input("x", x.shape)))
            g.forward({"x": x})
            g.backward()
            before = [p.value.copy() for p in model.parameters()]
            step_all(opt, model)
            for p, b in zip(model.parameters(), before):
                assert not np.array_equal(p.value, b)
                assert p.manifold.is_point(p.value, 1e-8)

    def test_two_steps_equal_two_single_steps(self):
        m = Stiefel(4, 2)
        x0 = m.rand(11)
        grads = np.random.default_rng(12).standard_normal((2, 4, 2))

        p = Parameter(x0.copy(), m)
        opt = SGD([p], lr=0.1, momentum=0.5)
        for g in grads:
            opt.zero_grad()
            p.egrad = g
            step_all(opt)

        q = Parameter(x0.copy(), m)
        state = {}
        for g in grads:
            q.egrad = g
            compute_rgrad(q)
            sgd_step(q, SgdConfig(0.1, 0.5), state)
        np.testing.assert_array_equal(p.value, q.value)

    def test_duplicate_parameters_rejected(self):
        p = Parameter([1.0])
        with pytest.raises(ValueError):
            SGD([p, p], lr=0.1)
