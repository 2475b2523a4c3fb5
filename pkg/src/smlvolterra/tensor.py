"""Tensor-product primitives and Volterra kernel representations.

Kernels of order ``K`` and memory ``M`` are stored flat in row-major
multi-index order: index ``(i_1, ..., i_K)`` maps to
``sum(i_k * M**(K - k))``.  This is the layout produced by repeated
Kronecker products, so ``tensor_power(u, K) @ kernel.coefficients`` is the
order-``K`` contraction.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

__all__ = [
    "DENSE_CAP",
    "KernelSizeError",
    "RankOneKernel",
    "DenseKernel",
    "kron",
    "tensor_power",
    "materialize",
    "tensor_inner",
    "tensor_norm",
    "flatten_index",
    "unflatten_index",
    "load_kernel_csv",
    "save_kernel_csv",
]

# largest M**K for which a dense kernel may be built
DENSE_CAP = 10**7


class KernelSizeError(ValueError):
    """Raised when a dense object would exceed the configured size cap."""


def _check_dense_size(order: int, memory: int, cap: int = DENSE_CAP) -> int:
    size = memory**order
    if size > cap:
        raise KernelSizeError(
            f"dense kernel with M={memory}, K={order} has {size} coefficients (cap {cap})"
        )
    return size


@dataclass(frozen=True)
class RankOneKernel:
    """Decomposable kernel ``w_1 (x) ... (x) w_K`` kept as its ``K`` factors.

    Parameters
    ----------
    factors:
        Array of shape ``(K, M)``; row ``s`` is the factor ``w_{s+1}``.
    """

    factors: np.ndarray

    def __post_init__(self):
        f = np.array(self.factors, dtype=np.float64)
        if f.ndim != 2:
            raise ValueError("factors must be a K x M array (all factors of equal length)")
        if f.shape[0] < 1 or f.shape[1] < 1:
            raise ValueError(f"need K >= 1 and M >= 1, got shape {f.shape}")
        f.setflags(write=False)
        object.__setattr__(self, "factors", f)

    @classmethod
    def from_vectors(cls, vectors: Sequence[Sequence[float]]) -> "RankOneKernel":
        lengths = {len(v) for v in vectors}
        if len(lengths) != 1:
            raise ValueError(f"factor vectors have differing lengths {sorted(lengths)}")
        return cls(np.array(vectors, dtype=np.float64))

    @property
    def order(self) -> int:
        return self.factors.shape[0]

    @property
    def memory(self) -> int:
        return self.factors.shape[1]

    @property
    def stacked(self) -> np.ndarray:
        """The ``KM`` vector of vertically stacked factors."""
        return self.factors.reshape(-1)

    def factor_norms(self) -> np.ndarray:
        return np.linalg.norm(self.factors, axis=1)


@dataclass(frozen=True)
class DenseKernel:
    """Full order-``K`` Volterra kernel with ``M**K`` flat coefficients."""

    order: int
    memory: int
    coefficients: np.ndarray

    def __post_init__(self):
        if self.order < 1 or self.memory < 1:
            raise ValueError(f"need K >= 1 and M >= 1, got K={self.order}, M={self.memory}")
        c = np.array(self.coefficients, dtype=np.float64).reshape(-1)
        if c.size != self.memory**self.order:
            raise ValueError(
                f"expected {self.memory**self.order} coefficients for M={self.memory}, "
                f"K={self.order}, got {c.size}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def zeros(cls, order: int, memory: int) -> "DenseKernel":
        _check_dense_size(order, memory)
        return cls(order, memory, np.zeros(memory**order))

    def as_tensor(self) -> np.ndarray:
        """View the coefficients as an ``(M,)*K`` array."""
        return self.coefficients.reshape((self.memory,) * self.order)

    def __getitem__(self, index: Sequence[int]) -> float:
        return float(self.coefficients[flatten_index(index, self.memory)])


Kernel = Union[RankOneKernel, DenseKernel]


def kron(a, b) -> np.ndarray:
    """Kronecker product of two vectors: ``out[p*len(b) + q] = a[p]*b[q]``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ValueError("kron of an empty vector")
    return (a[:, None] * b[None, :]).reshape(-1)


def tensor_power(u, k: int) -> np.ndarray:
    """``u (x) u (x) ... (x) u`` (``k`` times), left-associated."""
    if k < 1:
        raise ValueError(f"tensor power order must be >= 1, got {k}")
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if u.size == 0:
        raise ValueError("tensor power of an empty vector")
    out = u
    for _ in range(k - 1):
        out = kron(out, u)
    return out


def materialize(kernel: RankOneKernel, cap: int = DENSE_CAP) -> DenseKernel:
    """Expand a rank-one kernel into its dense coefficient array."""
    _check_dense_size(kernel.order, kernel.memory, cap)
    out = kernel.factors[0]
    for w in kernel.factors[1:]:
        out = kron(out, w)
    return DenseKernel(kernel.order, kernel.memory, out)


def _as_dense(k: Kernel) -> DenseKernel:
    return materialize(k) if isinstance(k, RankOneKernel) else k


def tensor_inner(a: Kernel, b: Kernel) -> float:
    """l2 inner product of two kernels of equal order and memory.

    Two rank-one arguments are handled without materialization, using the
    product of factor inner products.
    """
    if (a.order, a.memory) != (b.order, b.memory):
        raise ValueError(
            f"shape mismatch: (K={a.order}, M={a.memory}) vs (K={b.order}, M={b.memory})"
        )
    if isinstance(a, RankOneKernel) and isinstance(b, RankOneKernel):
        return float(np.prod(np.einsum("sm,sm->s", a.factors, b.factors)))
    return float(np.dot(_as_dense(a).coefficients, _as_dense(b).coefficients))


def tensor_norm(a: Kernel) -> float:
    # sqrt of a tiny negative round-off cannot occur: the inner product is a sum of squares
    return float(np.sqrt(tensor_inner(a, a)))


def flatten_index(index: Sequence[int], memory: int) -> int:
    flat = 0
    for i in index:
        if not 0 <= i < memory:
            raise IndexError(f"index {i} out of range for memory {memory}")
        flat = flat * memory + int(i)
    return flat


def unflatten_index(flat: int, order: int, memory: int) -> tuple[int, ...]:
    if not 0 <= flat < memory**order:
        raise IndexError(f"flat index {flat} out of range for M={memory}, K={order}")
    out = []
    for _ in range(order):
        flat, r = divmod(flat, memory)
        out.append(r)
    return tuple(reversed(out))


def load_kernel_csv(path: Union[str, Path]) -> DenseKernel:
    """Read a kernel file: header ``order,memory``, then one coefficient per line."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: empty kernel file")
    header = [h.strip().lower() for h in lines[0].split(",")]
    if header == ["order", "memory"]:
        lines = lines[1:]
        header = [h.strip() for h in lines[0].split(",")]
    try:
        order, memory = int(header[0]), int(header[1])
    except (IndexError, ValueError):
        raise ValueError(f"{path}: expected 'order,memory' values after the header") from None
    coeffs = np.array([float(x) for x in lines[1:]])
    return DenseKernel(order, memory, coeffs)


def save_kernel_csv(kernel: Kernel, path: Union[str, Path]) -> None:
    dense = _as_dense(kernel)
    rows = ["order,memory", f"{dense.order},{dense.memory}"]
    rows += [repr(float(c)) for c in dense.coefficients]
    Path(path).write_text("\n".join(rows) + "\n")
