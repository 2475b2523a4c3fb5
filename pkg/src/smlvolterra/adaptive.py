"""Online SML-LMS / SML-TRUE-LMS filters and linear-in-parameters baselines."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import _kernels
from .estimation import DIVERGENCE_LIMIT, default_initialization
from .models import DelayLine, diagonal_regressor
from .tensor import RankOneKernel, tensor_power

__all__ = [
    "SmlFilter",
    "LinearInParamsFilter",
    "UndefinedBoundError",
    "sml_lms_step",
    "sml_true_lms_step",
    "baseline_lms_step",
    "step_bound",
    "linear_step_bound",
    "max_threshold",
    "operation_counts",
    "MultiplyCounter",
    "counted_sml_lms_step",
    "counted_sml_true_lms_step",
]


class UndefinedBoundError(ValueError):
    """The step bound needs a non-zero plant."""


class SmlFilter:
    """State of a stabilized SML adaptive filter.

    Parameters
    ----------
    order, memory:
        ``K`` and ``M``.
    mu:
        Step size.
    max_threshold:
        ``MAX``; a factor whose partial product exceeds it in magnitude is
        updated with the plain LMS direction.  ``inf`` disables stabilization.
    window:
        ``L``; 1 gives SML-LMS, larger values SML-TRUE-LMS.
    init:
        Initial factors, default ``w_s = [2**-(s-1), 0, ...]``, ``w_K = 0``.
    """

    def __init__(
        self,
        order: int,
        memory: int,
        mu: float,
        max_threshold: float = math.inf,
        window: int = 1,
        init: Optional[RankOneKernel] = None,
    ):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        if init is None:
            init = default_initialization(order, memory)
        if init.factors.shape != (order, memory):
            raise ValueError("initial factors do not match (K, M)")
        self.order = order
        self.memory = memory
        self.mu = float(mu)
        self.max_threshold = float(max_threshold)
        self.window = window
        self.factors = np.array(init.factors)
        self.delay_line = DelayLine(memory)
        self.diverged = False
        self._U = np.zeros((window, memory))
        self._d = np.zeros(window)
        self._e = np.zeros(window)
        self._y = np.zeros(window)
        self._partials = np.zeros(order)
        self._z = np.zeros(order)
        self._delta = np.zeros((order, memory))
        self._normal = np.zeros(order, dtype=bool)
        self._head = -1
        self._elapsed = 0

    @property
    def kernel(self) -> RankOneKernel:
        return RankOneKernel(self.factors)

    @property
    def history_length(self) -> int:
        return min(self._elapsed, self.window)

    @property
    def partials(self) -> np.ndarray:
        """Partial products ``y_s(i)`` of the latest step (pre-update factors)."""
        return self._partials.copy()

    def step(self, u_new: float, d_new: float):
        """Push one input/desired pair and adapt.

        Returns ``(y, e)`` for the newest sample and, with ``window > 1``,
        ``(y, e_window)`` where ``e_window`` lists the window errors newest
        first.
        """
        x = self.delay_line.push(float(u_new))
        self._head = (self._head + 1) % self.window
        self._U[self._head] = x
        self._d[self._head] = float(d_new)
        self._elapsed += 1
        n = self.history_length
        if self.diverged:
            # frozen: report the output of the last finite factors only
            y = float(np.prod(self.factors @ x))
            return (y, float(d_new) - y) if self.window == 1 else (y, np.full(n, np.nan))
        if _kernels.sml_step(
            self.factors, self._U, self._d, n, self._head, self.mu, self.max_threshold,
            self._e, self._y, self._partials, self._z, self._delta, self._normal,
        ):
            self.diverged = True
        y = float(self._y[0])
        if self.window == 1:
            return y, float(self._e[0])
        return y, self._e[:n].copy()


def sml_lms_step(state: SmlFilter, u_new: float, d_new: float):
    """Stabilized SML-LMS update; the filter must have ``window == 1``."""
    if state.window != 1:
        raise ValueError("sml_lms_step needs window == 1; use sml_true_lms_step")
    return state.step(u_new, d_new)


def sml_true_lms_step(state: SmlFilter, u_new: float, d_new: float):
    """Stabilized SML-TRUE-LMS update over the last ``L`` samples."""
    y, e = state.step(u_new, d_new)
    return y, np.atleast_1d(e)


class LinearInParamsFilter:
    """LMS on a fixed regressor map: full Volterra, Power Filter or Simplified Volterra.

    ``variant`` is ``"volterra"`` (coefficients of length ``M**K``),
    ``"pf"`` (``M``, the main diagonal of a second-order kernel) or ``"sv"``
    (``D*M``, diagonals laid out as in ``DiagonalKernel``).
    """

    VARIANTS = ("volterra", "pf", "sv")

    def __init__(self, variant: str, memory: int, mu: float, order: int = 2,
                 diagonals: int = 1, coefficients=None):
        if variant not in self.VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if variant == "pf":
            diagonals = 1
        if variant in ("pf", "sv") and order != 2:
            raise ValueError("diagonal filters are second order only")
        if variant == "sv" and not 1 <= diagonals <= memory:
            raise ValueError(f"need 1 <= D <= M, got D={diagonals}")
        self.variant = variant
        self.memory = memory
        self.order = order
        self.diagonals = diagonals
        self.mu = float(mu)
        size = memory**order if variant == "volterra" else diagonals * memory
        if coefficients is None:
            coefficients = np.zeros(size)
        coefficients = np.array(coefficients, dtype=np.float64).reshape(-1)
        if coefficients.size != size:
            raise ValueError(f"{variant} filter needs {size} coefficients, got {coefficients.size}")
        self.coefficients = coefficients
        self.delay_line = DelayLine(memory)
        self.diverged = False

    def regressor(self, x: np.ndarray) -> np.ndarray:
        if self.variant == "volterra":
            return tensor_power(x, self.order)
        return diagonal_regressor(x, self.diagonals).reshape(-1)

    def step(self, u_new: float, d_new: float):
        x = self.delay_line.push(float(u_new))
        r = self.regressor(x)
        y = float(self.coefficients @ r)
        e = float(d_new) - y
        if not self.diverged:
            new = self.coefficients + self.mu * e * r
            if np.all(np.isfinite(new)) and np.max(np.abs(new)) <= DIVERGENCE_LIMIT:
                self.coefficients = new
            else:
                self.diverged = True
        return y, e


def baseline_lms_step(f: LinearInParamsFilter, u_new: float, d_new: float):
    return f.step(u_new, d_new)


def step_bound(order: int, memory: int, plant: RankOneKernel, samples: int = 10**6,
               rng_seed: int = 0) -> float:
    """Heuristic step limit ``2 / (3**K * E[|y_i|^2 |u_i|^2])``.

    The expectation is a Monte Carlo average over white N(0, 1) regressors
    with ``y_i`` the partial products evaluated at the plant factors.
    """
    if samples < 10**4:
        raise ValueError("step_bound needs at least 1e4 samples")
    if plant.factors.shape != (order, memory):
        raise ValueError("plant factors do not match (K, M)")
    if not np.any(plant.factors):
        raise UndefinedBoundError("step bound is undefined for a zero plant")
    rng = np.random.default_rng(rng_seed)
    total = 0.0
    done = 0
    chunk = 100_000
    while done < samples:
        n = min(chunk, samples - done)
        # a delay line fed white noise gives i.i.d. N(0, I) regressors at each time
        x = rng.standard_normal((n, memory))
        z = x @ plant.factors.T
        y2 = np.zeros(n)
        for s in range(order):
            y2 += np.prod(np.delete(z, s, axis=1), axis=1) ** 2
        total += float(np.sum(y2 * np.sum(x * x, axis=1)))
        done += n
    t_hat = total / samples
    if t_hat == 0.0:
        raise UndefinedBoundError("partial products vanish at the plant")
    return 2.0 / (3.0**order * t_hat)


def linear_step_bound(variant: str, memory: int, order: int = 2, diagonals: int = 1) -> float:
    """Classical ``2 / (3 tr R_x)`` for the baselines' regressors under white Gaussian input."""
    if variant == "volterra":
        # E|u^{(x)K}|^2 = E|u|^{2K}, chi-square moment
        trace = math.prod(memory + 2 * j for j in range(order))
    else:
        d = 1 if variant == "pf" else diagonals
        # E[u_i^4] = 3 on the main diagonal, E[u_i^2 u_j^2] = 1 off it
        trace = 3 * memory + sum(memory - k for k in range(1, d))
    return 2.0 / (3.0 * trace)


def max_threshold(order: int, plant_output_power: float, window: int = 1) -> float:
    """``MAX = (K + 1) sqrt(output power)``, halved for TRUE-LMS windows ``L >= 4``."""
    if plant_output_power < 0:
        raise ValueError("output power must be non-negative")
    out = (order + 1) * math.sqrt(plant_output_power)
    return out / 2 if window >= 4 else out


def operation_counts(order: int, memory: int, window: int = 1, variant: str = "lms"):
    """Additions and multiplications per iteration, ``(adds, mults)``."""
    K, M, L = order, memory, window
    if K < 1 or M < 1 or L < 1:
        raise ValueError("K, M and L must be >= 1")
    if variant == "lms":
        return 2 * K * M - K + 1, K * M + K * K + M - K + 2
    if variant == "true-lms":
        return 2 * L * K * M - L * K + L, 3 * L * K * M + L * K * K + K * M - 2 * L * K + L
    raise ValueError(f"unknown variant {variant!r}")


class MultiplyCounter:
    """Tally of floating-point multiplies and additions."""

    def __init__(self):
        self.mults = 0
        self.adds = 0

    def mul(self, a: float, b: float) -> float:
        self.mults += 1
        return a * b

    def add(self, a: float, b: float) -> float:
        self.adds += 1
        return a + b

    def sub(self, a: float, b: float) -> float:
        self.adds += 1
        return a - b


def _counted_dot(c: MultiplyCounter, a, b) -> float:
    acc = c.mul(a[0], b[0])
    for m in range(1, len(a)):
        acc = c.add(acc, c.mul(a[m], b[m]))
    return acc


def _counted_partials(c: MultiplyCounter, z):
    """Products of all entries but one; ``None`` stands for the empty product."""
    k = len(z)
    out = []
    for s in range(k):
        others = [z[t] for t in range(k) if t != s]
        acc = others[0] if others else None
        for v in others[1:]:
            acc = c.mul(acc, v)
        out.append(acc)
    return out


def _times(c: MultiplyCounter, factor, value):
    return value if factor is None else c.mul(factor, value)


def counted_sml_lms_step(factors, x, d, mu, max_thr=math.inf):
    """Scalar SML-LMS step with every arithmetic operation tallied.

    ``factors`` is a list of lists updated in place.  Returns the counter.
    """
    c = MultiplyCounter()
    K = len(factors)
    z = [_counted_dot(c, w, x) for w in factors]
    partials = _counted_partials(c, z)
    y = _times(c, partials[K - 1], z[K - 1])
    e = c.sub(d, y)
    mu_e = c.mul(mu, e)
    M = len(x)
    # scale u first (M + K M multiplies) when that beats scaling y_s first (K + K M)
    step_u = [c.mul(mu_e, xm) for xm in x] if M < K else None
    for s in range(K):
        p = partials[s]
        if p is not None and abs(p) <= max_thr and step_u is not None:
            upd = [c.mul(p, v) for v in step_u]
        elif p is not None and abs(p) <= max_thr:
            coef = c.mul(mu_e, p)
            upd = [c.mul(coef, xm) for xm in x]
        else:
            if step_u is None:
                step_u = [c.mul(mu_e, xm) for xm in x]
            upd = step_u
        factors[s] = [c.add(w, v) for w, v in zip(factors[s], upd)]
    return c


def counted_sml_true_lms_step(factors, X, d, mu, max_thr=math.inf):
    """Scalar SML-TRUE-LMS step over window rows ``X`` (newest first), tallied."""
    c = MultiplyCounter()
    K = len(factors)
    L = len(X)
    M = len(X[0])
    rows = []
    for j in range(L):
        z = [_counted_dot(c, w, X[j]) for w in factors]
        partials = _counted_partials(c, z)
        y = _times(c, partials[K - 1], z[K - 1])
        rows.append((partials, c.sub(d[j], y)))
    normal = [p is None or abs(p) <= max_thr for p in rows[0][0]]
    scale = mu / L
    for s in range(K):
        acc = [0.0] * M
        for j, (partials, e) in enumerate(rows):
            p = partials[s] if normal[s] else None
            t = [_times(c, p, xm) for xm in X[j]]
            for m in range(M):
                v = c.mul(t[m], e)
                acc[m] = v if j == 0 else c.add(acc[m], v)
        factors[s] = [c.add(w, c.mul(scale, a)) for w, a in zip(factors[s], acc)]
    return c
