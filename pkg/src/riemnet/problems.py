"""Small optimization problems with known minimizers.

``RayleighProblem`` (dominant eigenspace on Stiefel) and ``KarcherProblem``
(Riemannian mean on the SPD cone) are used as end-to-end checks of the
manifold + optimizer stack; each exposes its closed-form optimum.
"""
from __future__ import annotations

import numpy as np

from .autograd import Graph, Parameter
from .linalg import as_tensor, spd_sqrt_log, sym, sym_eig
from .manifolds import PositiveDefinite, Stiefel


def random_symmetric(n: int, seed=None) -> np.ndarray:
    m = np.random.default_rng(seed).standard_normal((n, n))
    return m + m.T


class RayleighProblem:
    """Minimize ``-trace(X^T A X)`` over ``Stiefel(n, p)``."""

    def __init__(self, a, p: int, seed=None):
        self.a = as_tensor(a, copy=True)
        n = self.a.shape[0]
        self.manifold = Stiefel(n, p)
        self.param = Parameter(self.manifold.rand(seed), self.manifold, name="X")

    @property
    def parameters(self) -> list[Parameter]:
        return [self.param]

    def graph(self) -> Graph:
        g = Graph()
        x = g.param(self.param)
        g.scale(g.sum(g.mul(x, g.matmul(g.const(self.a), x))), -1.0)
        g.forward()
        return g

    def loss(self) -> float:
        x = self.param.value
        return -float(np.sum(x * (self.a @ x)))

    def backward(self) -> float:
        g = self.graph()
        g.backward()
        return float(g.output.value[0])

    def optimum(self) -> float:
        """Minus the sum of the p largest eigenvalues of A."""
        w = sym_eig(self.a).eigenvalues
        return -float(np.sum(w[-self.manifold.p:]))

    def residual(self) -> float:
        return self.manifold.residual(self.param.value)


class KarcherProblem:
    """Minimize ``sum_i dist(X, A_i)^2`` over ``PositiveDefinite(n)``.

    There is no log primitive on the tape, so the Euclidean gradient is
    supplied in closed form: ``-2 sum_i X^{-1/2} log(X^{-1/2} A_i X^{-1/2}) X^{-1/2}``.
    """

    def __init__(self, mats, seed=None, start=None):
        self.mats = [as_tensor(m, copy=True) for m in mats]
        n = self.mats[0].shape[0]
        self.manifold = PositiveDefinite(n)
        x0 = self.manifold.rand(seed) if start is None else start
        self.param = Parameter(x0, self.manifold, name="X")

    @classmethod
    def random(cls, n: int, k: int, seed=None) -> "KarcherProblem":
        rng = np.random.default_rng(seed)
        m = PositiveDefinite(n)
        mats = [m.rand(rng) for _ in range(k)]
        return cls(mats, seed=rng)

    @property
    def parameters(self) -> list[Parameter]:
        return [self.param]

    def loss(self) -> float:
        x = self.param.value
        return float(sum(self.manifold.dist(x, a) ** 2 for a in self.mats))

    def backward(self) -> float:
        x = self.param.value
        si = spd_sqrt_log(x, "inv_sqrt")
        egrad = np.zeros_like(x)
        for a in self.mats:
            egrad -= 2.0 * si @ spd_sqrt_log(sym(si @ a @ si), "log") @ si
        egrad = sym(egrad)
        p = self.param
        p.egrad = egrad if p.egrad is None else p.egrad + egrad
        return self.loss()

    def rgrad_norm(self) -> float:
        x = self.param.value
        r = sum(self.manifold.log(x, a) for a in self.mats)
        return 2.0 * self.manifold.norm(x, r)

    def optimum(self) -> np.ndarray:
        """Geodesic midpoint; only defined for two matrices."""
        if len(self.mats) != 2:
            raise ValueError("closed-form mean is only available for k = 2")
        return geodesic_midpoint(*self.mats)

    def residual(self) -> float:
        return self.manifold.residual(self.param.value)


def geodesic_midpoint(a, b) -> np.ndarray:
    """``A^{1/2} (A^{-1/2} B A^{-1/2})^{1/2} A^{1/2}``."""
    s = spd_sqrt_log(a, "sqrt")
    si = spd_sqrt_log(a, "inv_sqrt")
    return sym(s @ spd_sqrt_log(sym(si @ b @ si), "sqrt") @ s)


def karcher_egrad_check(problem: KarcherProblem, h: float = 1e-6, seed=None) -> float:
    """Relative mismatch between the closed-form gradient and a central
    difference of the loss along a random symmetric direction."""
    x = problem.param.value
    u = sym(np.random.default_rng(seed).standard_normal(x.shape))
    saved = problem.param.egrad
    problem.param.egrad = None
    problem.backward()
    analytic = float(np.sum(problem.param.egrad * u))
    problem.param.egrad = saved
    try:
        problem.param.value = x + h * u
        fp = problem.loss()
        problem.param.value = x - h * u
        fm = problem.loss()
    finally:
        problem.param.value = x
    numeric = (fp - fm) / (2 * h)
    return abs(analytic - numeric) / max(1.0, abs(numeric))

