"""Forward evaluation of the Volterra-family models over a delay line."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DenseKernel, RankOneKernel, _check_dense_size, tensor_power

__all__ = [
    "DelayLine",
    "DiagonalKernel",
    "sml_output",
    "partial_products",
    "fir_outputs",
    "volterra_output",
    "diagonal_output",
    "diagonal_regressor",
]


class DelayLine:
    """The regressor ``[u(i), u(i-1), ..., u(i-M+1)]``, newest sample first.

    Starts filled with zeros.
    """

    def __init__(self, memory: int):
        if memory < 1:
            raise ValueError(f"memory must be >= 1, got {memory}")
        self.memory = memory
        self._buf = np.zeros(memory)

    def push(self, sample: float) -> np.ndarray:
        self._buf[1:] = self._buf[:-1]
        self._buf[0] = sample
        return self._buf

    @property
    def buffer(self) -> np.ndarray:
        """Read-only snapshot of the current regressor."""
        out = self._buf.copy()
        out.setflags(write=False)
        return out

    def reset(self) -> None:
        self._buf[:] = 0.0

    def __len__(self) -> int:
        return self.memory

    def __repr__(self) -> str:
        return f"DelayLine({self._buf.tolist()})"


def _regressor(u, memory: int) -> np.ndarray:
    x = u.buffer if isinstance(u, DelayLine) else np.asarray(u, dtype=np.float64).reshape(-1)
    if x.size != memory:
        raise ValueError(f"memory mismatch: regressor has {x.size} taps, kernel expects {memory}")
    return x


@dataclass(frozen=True)
class DiagonalKernel:
    """Second-order kernel restricted to its first ``D`` diagonals.

    ``entries[d, i]`` holds ``H_2(i, i + d)``; slots with ``i + d >= M`` are
    forced to zero.
    """

    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
            raise ValueError("entries must be a D x M array with D, M >= 1")
        if e.shape[0] > e.shape[1]:
            raise ValueError(f"D={e.shape[0]} exceeds memory M={e.shape[1]}")
        e = e * _diagonal_mask(*e.shape)
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def diagonals(self) -> int:
        return self.entries.shape[0]

    @property
    def memory(self) -> int:
        return self.entries.shape[1]

    @classmethod
    def from_dense(cls, h: DenseKernel, diagonals: int) -> "DiagonalKernel":
        """Fold the upper triangle of a second-order kernel onto its diagonals.

        Off-diagonal pairs ``H(i, j) + H(j, i)`` are merged into the upper slot,
        which leaves the quadratic form unchanged when ``diagonals == M``.
        """
        if h.order != 2:
            raise ValueError("diagonal kernels are defined for order 2 only")
        mat = h.as_tensor()
        m = h.memory
        out = np.zeros((diagonals, m))
        for d in range(diagonals):
            idx = np.arange(m - d)
            out[d, : m - d] = mat[idx, idx + d] + (mat[idx + d, idx] if d else 0.0)
        return cls(out)

    def to_dense(self) -> DenseKernel:
        m = self.memory
        mat = np.zeros((m, m))
        for d in range(self.diagonals):
            idx = np.arange(m - d)
            mat[idx, idx + d] = self.entries[d, : m - d]
        return DenseKernel(2, m, mat.reshape(-1))


def _diagonal_mask(diagonals: int, memory: int) -> np.ndarray:
    d = np.arange(diagonals)[:, None]
    i = np.arange(memory)[None, :]
    return (i + d < memory).astype(np.float64)


def fir_outputs(u, kernel: RankOneKernel) -> np.ndarray:
    """The ``K`` linear filter outputs ``u_i w_s``."""
    x = _regressor(u, kernel.memory)
    return kernel.factors @ x


def sml_output(u, kernel: RankOneKernel) -> float:
    """Output of the decomposable model: product of the ``K`` FIR outputs."""
    return float(np.prod(fir_outputs(u, kernel)))


def partial_products(u, kernel: RankOneKernel) -> np.ndarray:
    """Products of all FIR outputs except the ``s``-th, for every ``s``.

    Computed with prefix and suffix products so that zero outputs are handled
    without division.
    """
    z = fir_outputs(u, kernel)
    k = z.size
    prefix = np.ones(k)
    suffix = np.ones(k)
    for s in range(1, k):
        prefix[s] = prefix[s - 1] * z[s - 1]
        suffix[k - 1 - s] = suffix[k - s] * z[k - s]
    return prefix * suffix


def volterra_output(u, kernel: DenseKernel) -> float:
    """Homogeneous order-``K`` Volterra output ``u_i^{(x)K} H_K``."""
    x = _regressor(u, kernel.memory)
    _check_dense_size(kernel.order, kernel.memory)
    return float(np.dot(tensor_power(x, kernel.order), kernel.coefficients))


def diagonal_regressor(x: np.ndarray, diagonals: int) -> np.ndarray:
    """Products ``u(i-j) u(i-j-d)`` laid out like ``DiagonalKernel.entries``."""
    m = x.size
    out = np.zeros((diagonals, m))
    for d in range(diagonals):
        out[d, : m - d] = x[: m - d] * x[d:]
    return out


def diagonal_output(u, kernel: DiagonalKernel) -> float:
    """Truncated-diagonal second-order output; ``D = 1`` is the Power Filter."""
    x = _regressor(u, kernel.memory)
    return float(np.sum(kernel.entries * diagonal_regressor(x, kernel.diagonals)))
