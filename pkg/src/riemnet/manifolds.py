"""Matrix manifolds: Euclidean space, Stiefel, and symmetric positive definite.

Each manifold is an immutable descriptor whose methods are pure functions of
numpy arrays. Points and tangent vectors are represented by their ambient
arrays in *storage* orientation, which for a transposed Stiefel manifold is
the transpose of the mathematical point.
"""
from __future__ import annotations

import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateShape, IncompatibleShape, NotPositiveDefinite, ShapeMismatch
from .linalg import as_tensor, qr_thin, spd_solve, spd_sqrt_log, sym, sym_eig


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


class Manifold(ABC):
    """Operations every manifold provides.

    ``retr(x, u, step)`` moves from ``x`` along ``step * u``;
    ``egrad2rgrad`` turns a back-propagated gradient into the Riemannian
    gradient for this manifold's metric.
    """

    @property
    @abstractmethod
    def shape(self) -> tuple: ...

    @abstractmethod
    def rand(self, seed=None) -> np.ndarray: ...

    @abstractmethod
    def proj(self, x, g) -> np.ndarray: ...

    def egrad2rgrad(self, x, egrad) -> np.ndarray:
        return self.proj(x, egrad)

    @abstractmethod
    def retr(self, x, u, step: float = 1.0) -> np.ndarray: ...

    @abstractmethod
    def inner(self, x, u, v) -> float: ...

    @abstractmethod
    def transp(self, x, y, u) -> np.ndarray: ...

    @abstractmethod
    def residual(self, x) -> float:
        """Distance-like measure of how far ``x`` is from the manifold."""

    @abstractmethod
    def is_tangent(self, x, t, tol: float = 1e-8) -> bool: ...

    def is_point(self, t, tol: float = 1e-8) -> bool:
        t = np.asarray(t, dtype=np.float64)
        if t.shape != self.shape:
            return False
        return bool(self.residual(t) <= tol)

    def norm(self, x, u) -> float:
        return math.sqrt(max(self.inner(x, u, u), 0.0))

    def _check(self, *arrays) -> list[np.ndarray]:
        out = []
        for a in arrays:
            a = as_tensor(a)
            if a.shape != self.shape:
                raise ShapeMismatch(f"{self}: expected shape {self.shape}, got {a.shape}")
            out.append(a)
        return out

    @staticmethod
    def _unchanged(u, step) -> bool:
        return step == 0.0 or not np.any(u)


@dataclass(frozen=True)
class Euclidean(Manifold):
    dims: tuple

    def __init__(self, *dims):
        if len(dims) == 1 and not isinstance(dims[0], (int, np.integer)):
            dims = tuple(dims[0])
        dims = tuple(int(d) for d in dims)
        if not dims or min(dims) < 1:
            raise DegenerateShape(f"Euclidean shape {dims} has an empty dimension")
        object.__setattr__(self, "dims", dims)

    def __str__(self):
        return "euclidean(" + ",".join(map(str, self.dims)) + ")"

    @property
    def shape(self):
        return self.dims

    def rand(self, seed=None):
        return _rng(seed).standard_normal(self.dims)

    def proj(self, x, g):
        x, g = self._check(x, g)
        return g.copy()

    def retr(self, x, u, step=1.0):
        x, u = self._check(x, u)
        if self._unchanged(u, step):
            return x.copy()
        return x + step * u

    def inner(self, x, u, v):
        _, u, v = self._check(x, u, v)
        return float(np.sum(u * v))

    def transp(self, x, y, u):
        _, _, u = self._check(x, y, u)
        return u.copy()

    def residual(self, x):
        return 0.0 if np.all(np.isfinite(x)) else math.inf

    def is_tangent(self, x, t, tol=1e-8):
        return np.shape(t) == self.shape


@dataclass(frozen=True)
class Stiefel(Manifold):
    """n x p matrices with orthonormal columns, under the embedded metric.

    With ``transposed=True`` arrays are stored as p x n and every operation
    acts on their transpose.
    """

    n: int
    p: int
    transposed: bool = False

    def __post_init__(self):
        if self.p < 1:
            raise DegenerateShape(f"Stiefel({self.n}, {self.p}) needs p >= 1")
        if self.n < self.p:
            raise IncompatibleShape(f"Stiefel({self.n}, {self.p}) needs n >= p")

    def __str__(self):
        return f"stiefel({self.n},{self.p}{',transposed' if self.transposed else ''})"

    @property
    def shape(self):
        return (self.p, self.n) if self.transposed else (self.n, self.p)

    def _m(self, a):
        return a.T if self.transposed else a

    def rand(self, seed=None):
        g = _rng(seed).standard_normal((self.n, self.p))
        return np.ascontiguousarray(self._m(qr_thin(g).q))

    def proj(self, x, g):
        x, g = self._check(x, g)
        X, G = self._m(x), self._m(g)
        U = G - X @ sym(X.T @ G)
        return np.ascontiguousarray(self._m(U))

    def retr(self, x, u, step=1.0):
        x, u = self._check(x, u)
        if self._unchanged(u, step):
            return x.copy()
        q = qr_thin(self._m(x) + step * self._m(u)).q
        return np.ascontiguousarray(self._m(q))

    def inner(self, x, u, v):
        _, u, v = self._check(x, u, v)
        return float(np.sum(u * v))

    def transp(self, x, y, u):
        self._check(x)
        return self.proj(y, u)

    def residual(self, x):
        X = self._m(np.asarray(x, dtype=np.float64))
        return float(np.linalg.norm(X.T @ X - np.eye(self.p)))

    def is_tangent(self, x, t, tol=1e-8):
        if np.shape(t) != self.shape or np.shape(x) != self.shape:
            return False
        X, U = self._m(np.asarray(x)), self._m(np.asarray(t))
        m = X.T @ U
        return bool(np.linalg.norm(m + m.T) <= tol)


@dataclass(frozen=True)
class PositiveDefinite(Manifold):
    """Symmetric positive definite n x n matrices, affine-invariant metric."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise DegenerateShape(f"PositiveDefinite({self.n}) needs n >= 1")

    def __str__(self):
        return f"spd({self.n})"

    @property
    def shape(self):
        return (self.n, self.n)

    def rand(self, seed=None):
        a = _rng(seed).standard_normal((self.n, self.n))
        return sym(a @ a.T + np.eye(self.n))

    def proj(self, x, g):
        x, g = self._check(x, g)
        return sym(g)

    def egrad2rgrad(self, x, egrad):
        x, g = self._check(x, egrad)
        return sym(x @ sym(g) @ x)

    def retr(self, x, u, step=1.0):
        x, u = self._check(x, u)
        if self._unchanged(u, step):
            return x.copy()
        tu = step * u
        y = sym(x + tu + 0.5 * tu @ spd_solve(x, tu))
        try:
            np.linalg.cholesky(y)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("SPD retraction left the cone") from None
        return y

    def inner(self, x, u, v):
        x, u, v = self._check(x, u, v)
        a = spd_solve(x, u)
        b = a if v is u else spd_solve(x, v)
        return float(np.sum(a * b.T))

    def transp(self, x, y, u):
        _, _, u = self._check(x, y, u)
        return u.copy()

    def residual(self, x):
        x = np.asarray(x, dtype=np.float64)
        asym = float(np.linalg.norm(x - x.T))
        if asym > 1e-6 * max(1.0, float(np.linalg.norm(x))):
            return asym
        w = sym_eig(sym(x)).eigenvalues
        return asym if w[0] > 0.0 else math.inf

    def is_tangent(self, x, t, tol=1e-8):
        if np.shape(t) != self.shape:
            return False
        t = np.asarray(t)
        return bool(np.linalg.norm(t - t.T) <= tol)

    def log(self, x, y):
        """Riemannian logarithm: the tangent vector at ``x`` pointing to ``y``."""
        x, y = self._check(x, y)
        s = spd_sqrt_log(x, "sqrt")
        si = spd_sqrt_log(x, "inv_sqrt")
        return sym(s @ spd_sqrt_log(sym(si @ y @ si), "log") @ s)

    def dist(self, x, y) -> float:
        x, y = self._check(x, y)
        si = spd_sqrt_log(x, "inv_sqrt")
        return float(np.linalg.norm(spd_sqrt_log(sym(si @ y @ si), "log")))


_DESCRIPTOR = re.compile(r"^\s*(\w+)\s*\(([^)]*)\)\s*$")


def parse_manifold(text: str) -> Manifold:
    """Inverse of ``str(manifold)``."""
    m = _DESCRIPTOR.match(text)
    if not m:
        raise ValueError(f"cannot parse manifold descriptor {text!r}")
    kind = m.group(1).lower()
    args = [a.strip() for a in m.group(2).split(",") if a.strip()]
    if kind == "euclidean":
        return Euclidean(tuple(int(a) for a in args))
    if kind == "stiefel":
        transposed = "transposed" in args
        dims = [int(a) for a in args if a != "transposed"]
        return Stiefel(dims[0], dims[1], transposed)
    if kind in ("spd", "positivedefinite"):
        return PositiveDefinite(int(args[0]))
    raise ValueError(f"unknown manifold kind {kind!r}")
