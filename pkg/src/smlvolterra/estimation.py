"""Exact second-order statistics and the steepest-descent solver.

The input is an i.i.d. N(0, 1) signal through a delay line, so a single
regressor ``u_i`` is a standard normal vector and every moment of the
Kronecker power ``u_i^{(x)K}`` follows from Isserlis' theorem.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .tensor import DenseKernel, KernelSizeError, RankOneKernel, materialize

__all__ = [
    "CORRELATION_CAP",
    "DIVERGENCE_LIMIT",
    "DivergedError",
    "CorrelationSet",
    "SteepestDescentTrace",
    "gaussian_moment",
    "gaussian_correlations",
    "perfect_matchings",
    "gaussian_product_moment",
    "rank_one_quadratic",
    "output_power",
    "mse",
    "block_gradient",
    "stacked_gradient",
    "identity_substituted",
    "normal_residual",
    "gradient_curvature",
    "default_initialization",
    "steepest_descent",
]

# largest M**K for which the M**K x M**K correlation matrix is formed
CORRELATION_CAP = 4096
DIVERGENCE_LIMIT = 1e10


class DivergedError(RuntimeError):
    """An iteration left the finite region; ``trace`` holds the finite prefix."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


def gaussian_moment(m: int) -> int:
    """``E[x**m]`` for ``x ~ N(0, 1)``: zero for odd ``m``, ``(m-1)!!`` otherwise."""
    if m < 0:
        raise ValueError("moment order must be non-negative")
    if m % 2:
        return 0
    out = 1
    for k in range(m - 1, 0, -2):
        out *= k
    return out


@dataclass(frozen=True)
class CorrelationSet:
    """``R_{u^K}``, ``R_{u^K d}`` and ``R_d`` for one identification scenario."""

    r_uK: np.ndarray
    r_uKd: np.ndarray
    r_d: float
    order: int
    memory: int
    noise_var: float = 0.0

    def __post_init__(self):
        n = self.memory**self.order
        if self.r_uK.shape != (n, n) or self.r_uKd.shape != (n,):
            raise ValueError("correlation shapes do not match M**K")

    @property
    def r_duK(self) -> np.ndarray:
        # real data: the conjugate transpose of a row vector is the same numbers
        return self.r_uKd


def _tap_counts(order: int, memory: int) -> np.ndarray:
    """Row ``a``: how often each tap appears in multi-index ``a``."""
    n = memory**order
    idx = np.indices((memory,) * order).reshape(order, n).T
    counts = np.zeros((n, memory), dtype=np.int16)
    for k in range(order):
        np.add.at(counts, (np.arange(n), idx[:, k]), 1)
    return counts


def _moment_matrix(order: int, memory: int) -> np.ndarray:
    n = memory**order
    if n > CORRELATION_CAP:
        raise KernelSizeError(
            f"R_u^K would be {n} x {n} for M={memory}, K={order} (cap {CORRELATION_CAP})"
        )
    counts = _tap_counts(order, memory)
    table = np.array([gaussian_moment(m) for m in range(2 * order + 1)], dtype=np.float64)
    out = np.empty((n, n))
    chunk = max(1, 2_000_000 // (n * memory))
    for start in range(0, n, chunk):
        tot = counts[start : start + chunk, None, :] + counts[None, :, :]
        out[start : start + chunk] = np.prod(table[tot], axis=-1)
    return out


def _plant_vector(plant, order: int, memory: int) -> np.ndarray:
    if (plant.order, plant.memory) != (order, memory):
        raise ValueError(
            f"plant has K={plant.order}, M={plant.memory}; scenario has K={order}, M={memory}"
        )
    dense = materialize(plant) if isinstance(plant, RankOneKernel) else plant
    return dense.coefficients


def gaussian_correlations(
    memory: int, order: int, plant: Union[DenseKernel, RankOneKernel], noise_var: float
) -> CorrelationSet:
    """Exact statistics for ``d(i) = u_i^{(x)K} W_o + v(i)`` with white Gaussian input."""
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")
    r = _moment_matrix(order, memory)
    wo = _plant_vector(plant, order, memory)
    p = r @ wo
    r_d = float(wo @ p) + noise_var
    r.setflags(write=False)
    p.setflags(write=False)
    return CorrelationSet(r, p, r_d, order, memory, float(noise_var))


@lru_cache(maxsize=None)
def perfect_matchings(n: int) -> np.ndarray:
    """All pairings of ``range(n)`` as an array of shape ``(count, n // 2, 2)``."""
    if n % 2:
        return np.zeros((0, 0, 2), dtype=np.int64)

    def rec(items):
        if not items:
            yield []
            return
        first, rest = items[0], items[1:]
        for j, other in enumerate(rest):
            for tail in rec(rest[:j] + rest[j + 1 :]):
                yield [(first, other)] + tail

    out = np.array(list(rec(list(range(n)))), dtype=np.int64).reshape(-1, n // 2, 2)
    out.setflags(write=False)
    return out


def gaussian_product_moment(vectors: np.ndarray) -> float:
    """``E[prod_j (u . a_j)]`` for ``u ~ N(0, I)`` (Isserlis over the Gram matrix)."""
    a = np.asarray(vectors, dtype=np.float64)
    n = a.shape[0]
    if n % 2:
        return 0.0
    if n == 0:
        return 1.0
    gram = a @ a.T
    pairs = perfect_matchings(n)
    return float(np.sum(np.prod(gram[pairs[:, :, 0], pairs[:, :, 1]], axis=1)))


def rank_one_quadratic(a: RankOneKernel, b: RankOneKernel) -> float:
    """``E[(u^{(x)K} A)(u^{(x)K} B)]`` for two rank-one kernels, with no ``M**K`` work."""
    return gaussian_product_moment(np.vstack([a.factors, b.factors]))


def output_power(plant: Union[DenseKernel, RankOneKernel]) -> float:
    """``E|u^{(x)K} W|^2`` under white unit-variance Gaussian input."""
    if isinstance(plant, RankOneKernel):
        return rank_one_quadratic(plant, plant)
    if plant.order == 2:
        # E(u'Hu)^2 = (tr H)^2 + |H|^2 + <H, H'>, no M^2 x M^2 matrix needed
        h = plant.as_tensor()
        return float(np.trace(h) ** 2 + np.sum(h * h) + np.sum(h * h.T))
    wo = plant.coefficients
    return float(wo @ _moment_matrix(plant.order, plant.memory) @ wo)


def _check(w: RankOneKernel, c: CorrelationSet) -> None:
    if (w.order, w.memory) != (c.order, c.memory):
        raise ValueError(
            f"kernel (K={w.order}, M={w.memory}) does not match statistics "
            f"(K={c.order}, M={c.memory})"
        )


def mse(w: RankOneKernel, c: CorrelationSet) -> float:
    """``R_d - 2 R_{u^K d} vec(W) + vec(W)^T R_{u^K} vec(W)``."""
    _check(w, c)
    v = materialize(w).coefficients
    return float(c.r_d - 2.0 * (c.r_uKd @ v) + v @ (c.r_uK @ v))


def _contract_except(t: np.ndarray, factors: np.ndarray, s: int) -> np.ndarray:
    """Contract every axis of ``t`` except ``s`` against the matching factor."""
    k, m = factors.shape
    t = t.reshape((m,) * k)
    for axis in range(k - 1, -1, -1):
        if axis != s:
            t = np.tensordot(t, factors[axis], axes=([axis], [0]))
    return t


def _residual_tensor(w: RankOneKernel, c: CorrelationSet) -> np.ndarray:
    v = materialize(w).coefficients
    return c.r_uK @ v - c.r_uKd


def block_gradient(w: RankOneKernel, c: CorrelationSet, s: int) -> np.ndarray:
    """Gradient block ``[-R_{u^K d} + vec(W)^T R_{u^K}] W^{(s)}`` for 0-based ``s``.

    This is the Wirtinger-form expression; the ordinary real derivative of
    ``mse`` with respect to ``w_s`` is twice this vector.
    """
    _check(w, c)
    if not 0 <= s < w.order:
        raise ValueError(f"factor index {s} out of range for K={w.order}")
    return _contract_except(_residual_tensor(w, c), w.factors, s)


def stacked_gradient(w: RankOneKernel, c: CorrelationSet) -> np.ndarray:
    """All ``K`` gradient blocks, shape ``(K, M)``."""
    _check(w, c)
    r = _residual_tensor(w, c)
    return np.stack([_contract_except(r, w.factors, s) for s in range(w.order)])


def identity_substituted(w: RankOneKernel, s: int) -> np.ndarray:
    """The ``M**K x M`` matrix ``w_1 (x) .. (x) I_M (x) .. (x) w_K``."""
    out = np.ones((1, 1))
    for t in range(w.order):
        block = np.eye(w.memory) if t == s else w.factors[t][:, None]
        out = np.kron(out, block)
    return out


def normal_residual(w: RankOneKernel, c: CorrelationSet) -> float:
    """l2 norm of the stacked gradient blocks; zero exactly at critical points."""
    return float(np.linalg.norm(stacked_gradient(w, c)))


def gradient_curvature(w: RankOneKernel, c: CorrelationSet) -> np.ndarray:
    """``E[(y_i (x) u_i)^T (y_i (x) u_i)]`` evaluated at the factors ``w``.

    A ``KM x KM`` matrix whose largest eigenvalue ``lam`` sets the steepest
    descent step limit ``2 / lam`` near a minimizer.
    """
    _check(w, c)
    blocks = [identity_substituted(w, s) for s in range(w.order)]
    big = np.hstack(blocks)
    return big.T @ c.r_uK @ big


def default_initialization(order: int, memory: int) -> RankOneKernel:
    """Factors ``w_s = [2**-(s-1), 0, ..., 0]`` for ``s < K`` and ``w_K = 0``."""
    f = np.zeros((order, memory))
    f[: order - 1, 0] = 2.0 ** -np.arange(order - 1)
    return RankOneKernel(f)


@dataclass
class SteepestDescentTrace:
    """Iterates, MSE and normal residual per iteration (index 0 is the start)."""

    iterates: np.ndarray
    mse: np.ndarray
    residual: np.ndarray
    order: int
    memory: int
    converged: bool = False
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.mse)

    @property
    def final(self) -> RankOneKernel:
        return RankOneKernel(self.iterates[-1].reshape(self.order, self.memory))

    @property
    def final_residual(self) -> float:
        return float(self.residual[-1])

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "mse", "residual"])
            for i, (m, r) in enumerate(zip(self.mse, self.residual)):
                writer.writerow([i, repr(float(m)), repr(float(r))])


def steepest_descent(
    c: CorrelationSet,
    mu: float,
    iters: int,
    init: Optional[RankOneKernel] = None,
    tol: Optional[float] = None,
) -> SteepestDescentTrace:
    """Run ``w_s <- w_s + mu W^{(s)T} [R_{du^K} - R_{u^K} vec(W)]`` for all ``s``.

    All blocks are updated from the same previous iterate.  With ``tol``
    set, iteration stops once the normal residual drops below it (the trace
    is then shorter than ``iters + 1``).

    Raises
    ------
    DivergedError
        If an iterate becomes non-finite or exceeds ``DIVERGENCE_LIMIT``.
    """
    if mu <= 0:
        raise ValueError("step size must be positive")
    if iters < 1:
        raise ValueError("need at least one iteration")
    w = (init if init is not None else default_initialization(c.order, c.memory)).factors.copy()
    if w.shape != (c.order, c.memory):
        raise ValueError("initial factors do not match the statistics")
    k = c.order

    iterates = [w.reshape(-1).copy()]
    mses, residuals = [], []

    def evaluate(factors):
        v = materialize(RankOneKernel(factors)).coefficients
        rv = c.r_uK @ v
        r = rv - c.r_uKd
        grad = np.stack([_contract_except(r, factors, s) for s in range(k)])
        value = c.r_d - 2.0 * (c.r_uKd @ v) + v @ rv
        return grad, value

    def trace(converged=False):
        n = len(mses)
        return SteepestDescentTrace(
            np.array(iterates[:n]), np.array(mses), np.array(residuals), c.order, c.memory,
            converged, {"mu": mu},
        )

    grad, value = evaluate(w)
    mses.append(value)
    residuals.append(float(np.linalg.norm(grad)))
    for _ in range(iters):
        w = w - mu * grad
        if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > DIVERGENCE_LIMIT:
            raise DivergedError(f"steepest descent diverged after {len(mses)} iterations", trace())
        grad, value = evaluate(w)
        iterates.append(w.reshape(-1).copy())
        mses.append(value)
        residuals.append(float(np.linalg.norm(grad)))
        if tol is not None and residuals[-1] < tol:
            return trace(converged=True)
    return trace(converged=residuals[-1] < 1e-8)
