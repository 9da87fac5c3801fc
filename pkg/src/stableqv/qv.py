"""Realised and true quadratic variation and the rescaled error process.

The realised quadratic variation at grid step delta is the running sum of
outer products of grid increments; for a pure-jump path it converges to
the jump-sum QV.  The rescaled estimation error uses the rate
delta_n = (Delta * log(1/Delta))^(-1/beta) and is centred at the QV
evaluated at the last grid time below t, which is the centring needed for
functional convergence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InsufficientDataError, InvalidGridError
from .simulate import JumpPath, n_grid_steps, path_values


@lru_cache(maxsize=32)
def _packing(d: int):
    """Upper-triangle index pair, and inner-product weights (1 diag, 2 off)."""
    iu, ju = np.triu_indices(d)
    w = np.where(iu == ju, 1.0, 2.0)
    w.setflags(write=False)
    return iu, ju, w


class SymMatrix:
    """Symmetric d x d matrix stored as its packed upper triangle.

    Both (i, j) and (j, i) read from the same storage, so symmetry holds
    exactly by construction.  Values are treated as immutable.
    """

    __slots__ = ("d", "upper")

    def __init__(self, d: int, upper: np.ndarray):
        self.d = d
        self.upper = np.asarray(upper, dtype=float)
        self.upper.setflags(write=False)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "SymMatrix":
        """Pack a matrix, averaging A and A^T to kill rounding asymmetry."""
        a = np.asarray(arr, dtype=float)
        d = a.shape[0]
        iu, ju, _ = _packing(d)
        return cls(d, 0.5 * (a[iu, ju] + a[ju, iu]))

    @classmethod
    def zeros(cls, d: int) -> "SymMatrix":
        return cls(d, np.zeros(d * (d + 1) // 2))

    @classmethod
    def from_outer(cls, v: np.ndarray) -> "SymMatrix":
        """v v^T, packed (exact: products commute)."""
        iu, ju, _ = _packing(len(v))
        return cls(len(v), v[iu] * v[ju])

    @property
    def full(self) -> np.ndarray:
        iu, ju, _ = _packing(self.d)
        a = np.empty((self.d, self.d))
        a[iu, ju] = self.upper
        a[ju, iu] = self.upper
        return a

    def entry(self, i: int, j: int) -> float:
        return float(self.full[i, j])

    def trace(self) -> float:
        iu, ju, _ = _packing(self.d)
        return float(np.sum(self.upper[iu == ju]))

    def frobenius(self) -> float:
        _, _, w = _packing(self.d)
        return math.sqrt(float(np.sum(w * self.upper**2)))

    def inner(self, other: "SymMatrix") -> float:
        """Trace inner product tr(A^T B)."""
        _, _, w = _packing(self.d)
        return float(np.sum(w * self.upper * other.upper))

    def __add__(self, other):
        return SymMatrix(self.d, self.upper + other.upper)

    def __sub__(self, other):
        return SymMatrix(self.d, self.upper - other.upper)

    def __mul__(self, c):
        return SymMatrix(self.d, c * self.upper)

    __rmul__ = __mul__

    def __neg__(self):
        return SymMatrix(self.d, -self.upper)

    def __eq__(self, other):
        return (
            isinstance(other, SymMatrix)
            and self.d == other.d
            and np.array_equal(self.upper, other.upper)
        )

    def __repr__(self):
        return f"SymMatrix(d={self.d}, upper={self.upper!r})"


def packed_outer_sums(increments: np.ndarray) -> np.ndarray:
    """Row-wise packed outer products of increments; (n, d(d+1)/2)."""
    iu, ju, _ = _packing(increments.shape[1])
    return increments[:, iu] * increments[:, ju]


@dataclass
class QVEstimate:
    """A grid-indexed sequence of symmetric matrices.

    For a realised QV the values are PSD and non-decreasing in Loewner
    order along the grid; the error process reuses the container without
    those guarantees.
    """

    grid_step: float
    values: list  # list[SymMatrix], index i is grid time i * grid_step
    beta_used: float | None = None

    def at(self, i: int) -> SymMatrix:
        return self.values[i]

    @property
    def terminal(self) -> SymMatrix:
        return self.values[-1]


def realised_qv(values: np.ndarray, delta: float) -> QVEstimate:
    """Running sum of increment outer products at grid step delta.

    ``values`` holds the observed path at 0, delta, 2*delta, ...; the
    estimate at grid index i sums the first i outer products (index 0 is
    the zero matrix).
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] < 2:
        raise InsufficientDataError("need at least 2 grid values for a realised QV")
    if delta <= 0:
        raise InvalidGridError(f"grid step must be positive, got {delta}")
    d = values.shape[1]
    prods = packed_outer_sums(np.diff(values, axis=0))
    cum = np.vstack([np.zeros(d * (d + 1) // 2), np.cumsum(prods, axis=0)])
    return QVEstimate(
        grid_step=delta, values=[SymMatrix(d, row) for row in cum]
    )


def realised_qv_terminal(values: np.ndarray, delta: float) -> SymMatrix:
    """Just the endpoint of realised_qv, without building the whole list."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] < 2:
        raise InsufficientDataError("need at least 2 grid values for a realised QV")
    inc = np.diff(values, axis=0)
    return SymMatrix(values.shape[1], packed_outer_sums(inc).sum(axis=0))


def true_qv(path: JumpPath, t: float) -> SymMatrix:
    """Exact jump-sum QV at t: sum of (dL_s)(dL_s)^T over s <= t."""
    if t < 0 or t > path.T:
        raise InvalidGridError(f"t={t} outside the path horizon [0, {path.T}]")
    keep = path.times <= t
    jumps = path.jumps[keep]
    if jumps.shape[0] == 0:
        return SymMatrix.zeros(path.spec.d)
    return SymMatrix(path.spec.d, packed_outer_sums(jumps).sum(axis=0))


def rate_delta(delta: float, beta: float) -> float:
    """Convergence rate (delta * log(1/delta))^(-1/beta); needs delta < 1.

    beta may touch 2 here: the closed form is well defined there even
    though process specifications keep beta strictly below 2.
    """
    if not (0.0 < delta < 1.0):
        raise InvalidGridError(
            f"rate is defined for grid steps in (0, 1), got {delta}"
        )
    if not (0.0 < beta <= 2.0):
        raise ValueError(f"beta must lie in (0, 2], got {beta}")
    return (delta * math.log(1.0 / delta)) ** (-1.0 / beta)


def error_process(path: JumpPath, delta: float, beta: float) -> QVEstimate:
    """Rescaled QV error at every grid time.

    Value at grid index i is delta_n * (realised QV at i*delta minus the
    jump-sum QV at the same grid time); symmetric but generally not PSD.
    """
    if delta >= 1.0:
        raise InvalidGridError(f"error process needs delta < 1, got {delta}")
    dn = rate_delta(delta, beta)
    vals = path_values(path, delta)
    est = realised_qv(vals, delta)
    n = len(est.values) - 1
    out = []
    for i in range(n + 1):
        out.append(dn * (est.values[i] - true_qv(path, i * delta)))
    return QVEstimate(grid_step=delta, values=out, beta_used=beta)


def upper_labels(d: int) -> list[str]:
    """Column labels m11, m12, ... for the packed upper triangle."""
    iu, ju, _ = _packing(d)
    return [f"m{i + 1}{j + 1}" for i, j in zip(iu, ju)]


def write_qv_table(est: QVEstimate, dest) -> None:
    """QVEstimate as delimited text: grid time plus upper-triangle entries."""
    close = False
    if isinstance(dest, (str, bytes)):
        dest = open(dest, "w")
        close = True
    try:
        d = est.values[0].d
        dest.write("t\t" + "\t".join(upper_labels(d)) + "\n")
        for i, m in enumerate(est.values):
            row = "\t".join(f"{x:.17g}" for x in m.upper)
            dest.write(f"{i * est.grid_step:.17g}\t{row}\n")
    finally:
        if close:
            dest.close()
