"""Dense float64 tensors and the small matrix factorizations the rest of the
package is built on.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 and rank >= 1;
:func:`as_tensor` is the single entry point that enforces this.
"""
from __future__ import annotations

import math
from typing import Iterator, NamedTuple

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateShape,
    NotPositiveDefinite,
    NotSymmetric,
    RankDeficient,
    ShapeMismatch,
)

RANK_TOL = 1e-12
SYMMETRY_TOL = 1e-10
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
EIG_FLOOR = 1e-12


def as_tensor(data, copy: bool = False) -> np.ndarray:
    """Coerce ``data`` to a float64 array of rank >= 1 with no empty axes.

    Python scalars and 0-d arrays become shape ``(1,)``.
    """
    arr = np.array(data, dtype=np.float64, copy=copy) if copy else np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if any(d < 1 for d in arr.shape):
        raise DegenerateShape(f"tensor shape {arr.shape} has an empty dimension")
    return arr


def sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _require_square(a: np.ndarray, what: str) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"{what} needs a square matrix, got shape {a.shape}")


class QrResult(NamedTuple):
    q: np.ndarray
    r: np.ndarray


class SymEigResult(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def qr_thin(a) -> QrResult:
    """Thin Householder QR of an n x p matrix (n >= p) with ``diag(r) > 0``.

    The sign convention makes the factorization unique, so ``qr_thin(q).q``
    reproduces ``q`` for any matrix with orthonormal columns.
    """
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"qr_thin needs a matrix, got shape {a.shape}")
    n, p = a.shape
    if n < p:
        raise ShapeMismatch(f"qr_thin needs n >= p, got {n}x{p}")

    scale = float(np.max(np.linalg.norm(a, axis=0)))
    if scale == 0.0:
        raise RankDeficient("qr_thin: zero matrix")
    r = a.copy()
    reflectors = []
    for k in range(p):
        x = r[k:, k]
        normx = float(np.linalg.norm(x))
        if normx <= RANK_TOL * scale:
            raise RankDeficient(f"qr_thin: column {k} is numerically zero after orthogonalization")
        v = x.copy()
        v[0] += math.copysign(normx, x[0])
        v /= np.linalg.norm(v)
        r[k:, k:] -= 2.0 * np.outer(v, v @ r[k:, k:])
        reflectors.append(v)

    q = np.eye(n, p)
    for k in range(p - 1, -1, -1):
        v = reflectors[k]
        q[k:, :] -= 2.0 * np.outer(v, v @ q[k:, :])

    r = np.triu(r[:p, :])
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return QrResult(q * signs, r * signs[:, None])


def sym_eig(a) -> SymEigResult:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Eigenvalues are returned in ascending order with matching eigenvector
    columns.
    """
    a = as_tensor(a)
    _require_square(a, "sym_eig")
    norm = float(np.linalg.norm(a))
    if np.linalg.norm(a - a.T) > SYMMETRY_TOL * norm:
        raise NotSymmetric("sym_eig: input is not symmetric")
    n = a.shape[0]
    m = sym(a)
    v = np.eye(n)

    threshold = JACOBI_TOL * norm
    for _ in range(JACOBI_MAX_SWEEPS):
        off = float(np.linalg.norm(m - np.diag(np.diag(m))))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                if apq == 0.0:
                    continue
                diff = m[q, q] - m[p, p]
                if abs(apq) <= 1e-18 * abs(diff):
                    t = apq / diff
                else:
                    tau = diff / (2.0 * apq)
                    t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c

                colp = m[:, p].copy()
                colq = m[:, q]
                m[:, p] = c * colp - s * colq
                m[:, q] = s * colp + c * colq
                rowp = m[p, :].copy()
                rowq = m[q, :]
                m[p, :] = c * rowp - s * rowq
                m[q, :] = s * rowp + c * rowq
                m[p, q] = m[q, p] = 0.0

                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    w = np.diag(m).copy()
    order = np.argsort(w, kind="stable")
    return SymEigResult(w[order], v[:, order])


def spd_solve(a, b) -> np.ndarray:
    """Solve ``a x = b`` for symmetric positive definite ``a`` via Cholesky."""
    a = as_tensor(a)
    b = as_tensor(b)
    _require_square(a, "spd_solve")
    if b.shape[0] != a.shape[0]:
        raise ShapeMismatch(f"spd_solve: a is {a.shape}, b is {b.shape}")
    try:
        factor = scipy.linalg.cho_factor(sym(a), lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"spd_solve: {exc}") from None
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


_SCALAR_FUNCS = {
    "sqrt": np.sqrt,
    "inv_sqrt": lambda w: 1.0 / np.sqrt(w),
    "log": np.log,
}


def spd_sqrt_log(a, mode: str) -> np.ndarray:
    """Apply ``sqrt``, ``inv_sqrt`` or ``log`` to an SPD matrix through its
    eigenvalues."""
    try:
        func = _SCALAR_FUNCS[mode]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}; expected one of {sorted(_SCALAR_FUNCS)}") from None
    w, v = sym_eig(a)
    if w[-1] <= 0.0 or w[0] <= EIG_FLOOR * w[-1]:
        raise NotPositiveDefinite(f"spd_sqrt_log: smallest eigenvalue {w[0]:.3e} is not positive")
    return sym((v * func(w)) @ v.T)


# -- text serialization -------------------------------------------------------

def dumps_tensor(t) -> str:
    """Serialize as a ``shape:`` line followed by one line per innermost row."""
    t = as_tensor(t)
    lines = ["shape: " + " ".join(str(d) for d in t.shape)]
    for row in t.reshape(-1, t.shape[-1]):
        lines.append(" ".join(format(float(x), ".17g") for x in row))
    return "\n".join(lines) + "\n"


def read_tensor(lines: Iterator[str]) -> np.ndarray:
    """Consume one serialized tensor from an iterator of lines."""
    header = next(lines).strip()
    while not header:
        header = next(lines).strip()
    if not header.startswith("shape:"):
        raise ValueError(f"expected 'shape:' header, got {header!r}")
    shape = tuple(int(d) for d in header[len("shape:"):].split())
    if not shape or any(d < 1 for d in shape):
        raise ValueError(f"invalid tensor shape {shape}")
    count = math.prod(shape)
    values: list[float] = []
    while len(values) < count:
        try:
            line = next(lines)
        except StopIteration:
            raise ValueError(f"tensor truncated: expected {count} values, got {len(values)}") from None
        values.extend(float(tok) for tok in line.split())
    if len(values) != count:
        raise ValueError(f"tensor has {len(values)} values, expected {count}")
    return np.array(values, dtype=np.float64).reshape(shape)


def loads_tensor(text: str) -> np.ndarray:
    return read_tensor(iter(text.splitlines()))

