"""Ensemble simulation harness for identification, stability, SD comparison,
rho-family and chaos experiments.

Realization ``r`` draws its input and noise from
``SeedSequence(master_seed, spawn_key=(r,))``, so any realization can be
replayed on its own.  Realizations are processed in fixed-size chunks and the
per-chunk sums are folded in chunk order, which makes every output independent
of the worker-thread count.
"""
from __future__ import annotations

import csv
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import _kernels
from .adaptive import linear_step_bound, max_threshold, step_bound
from .estimation import (
    CORRELATION_CAP,
    _moment_matrix,
    default_initialization,
    gaussian_correlations,
    output_power,
    perfect_matchings,
    rank_one_quadratic,
    steepest_descent,
)
from .tensor import DenseKernel, RankOneKernel, load_kernel_csv, materialize

log = logging.getLogger(__name__)

__all__ = [
    "CHUNK",
    "ScenarioConfig",
    "FilterSpec",
    "EnsembleCurve",
    "PlantContext",
    "load_config",
    "parse_filters",
    "realization_rng",
    "random_decomposable_plant",
    "gaussian_rho_plant",
    "smooth_plant",
    "rank_one_approximation",
    "build_plant",
    "probe_emse",
    "run_identification",
    "run_stability_table",
    "run_sd_comparison",
    "run_rho_sweep",
    "run_chaos_sweep",
    "chaos_trajectory",
    "classify_trajectory",
    "steady_state",
    "to_db",
    "write_curves_csv",
    "write_stability_csv",
    "write_bifurcation_csv",
    "write_trace_csv",
]

# realizations per work unit; fixed so results never depend on the thread count
CHUNK = 32
PROBE_COUNT = 2000

Plant = Union[RankOneKernel, DenseKernel]


def to_db(x):
    """``10 log10(x)``; zero maps to ``-inf``."""
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def _fmt(x: float) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------
# configuration


@dataclass
class ScenarioConfig:
    """Declarative description of one experiment (see README for the file format)."""

    experiment: str = "identification"
    order: int = 2
    memory: int = 10
    window: int = 4
    mu: float = 0.5
    mu_mode: str = "relative"
    mu_grid: List[float] = field(default_factory=lambda: [0.5, 0.9, 1.0, 1.5, 2.0])
    noise_var: float = 1e-3
    realizations: int = 100
    iterations: int = 5000
    seed: int = 0
    plant: str = "random-decomposable"
    plant_seed: int = 1
    plant_file: Optional[str] = None
    rho: float = 0.0
    rho_grid: List[float] = field(default_factory=lambda: [round(0.1 * k, 1) for k in range(10)])
    width: float = 3.0
    centered: bool = True
    filters: List[str] = field(default_factory=lambda: ["sml-lms"])
    max_scale: float = 1.0
    halve_max_for_window: bool = True
    bound_samples: int = 10**6
    sd_mu: Optional[float] = None
    trace_realizations: List[int] = field(default_factory=list)
    mu_start: float = 0.0
    mu_stop: float = 0.03
    mu_step: float = 1e-4
    transient: int = 10_000
    samples: int = 1000
    threads: int = 1
    out: str = "results"

    EXPERIMENTS = ("identification", "stability-table", "sd-comparison", "rho-sweep", "chaos-sweep")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.experiment not in self.EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.order < 1 or self.memory < 1 or self.window < 1:
            raise ValueError("order, memory and window must be >= 1")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.mu_grid:
            raise ValueError("mu grid must be non-empty")
        if self.mu_mode not in ("relative", "absolute"):
            raise ValueError("mu_mode is 'relative' or 'absolute'")
        if self.noise_var < 0:
            raise ValueError("noise variance must be non-negative")
        if self.plant not in ("random-decomposable", "gaussian-rho", "smooth", "file", "zero"):
            raise ValueError(f"unknown plant {self.plant!r}")
        if self.plant == "file" and not self.plant_file:
            raise ValueError("plant = file needs plant_file")
        for r in [self.rho] + list(self.rho_grid):
            if not 0.0 <= r < 1.0:
                raise ValueError(f"rho must lie in [0, 1), got {r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        parse_filters(self.filters, self.window)


def _coerce(kind, raw: str):
    raw = raw.strip()
    if kind is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    if kind is int:
        return int(float(raw))
    if kind is float:
        return float(raw)
    return raw


_LIST_FIELDS = {"mu_grid": float, "rho_grid": float, "trace_realizations": int}
_SCALAR_TYPES = {
    "order": int, "memory": int, "window": int, "mu": float, "noise_var": float,
    "realizations": int, "iterations": int, "seed": int, "plant_seed": int, "rho": float,
    "width": float, "centered": bool, "max_scale": float, "halve_max_for_window": bool,
    "bound_samples": int, "sd_mu": float, "mu_start": float, "mu_stop": float,
    "mu_step": float, "transient": int, "samples": int, "threads": int,
}


def load_config(path: Union[str, Path], **overrides) -> ScenarioConfig:
    """Read a flat ``key = value`` file (``#`` starts a comment)."""
    values = {}
    known = {f.name for f in fields(ScenarioConfig)}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        if key == "filters":
            values[key] = [f.strip() for f in re.split(r",(?![^(]*\))", raw) if f.strip()]
        elif key in _LIST_FIELDS:
            values[key] = [_LIST_FIELDS[key](v) for v in raw.split(",") if v.strip()]
        elif key in _SCALAR_TYPES:
            values[key] = _coerce(_SCALAR_TYPES[key], raw)
        else:
            values[key] = raw
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ScenarioConfig(**values)


@dataclass(frozen=True)
class FilterSpec:
    """One entry of the filter roster."""

    kind: str
    window: int = 1
    diagonals: int = 1

    @property
    def name(self) -> str:
        if self.kind == "sml-true-lms":
            return f"sml-true-lms({self.window})"
        if self.kind == "sv-lms":
            return f"sv-lms({self.diagonals})"
        return self.kind

    @property
    def is_sml(self) -> bool:
        return self.kind in ("sml-lms", "sml-true-lms")


_FILTER_RE = re.compile(r"^([a-z-]+)(?:\((\d+)\))?$")


def parse_filters(names: Sequence[str], default_window: int = 4) -> List[FilterSpec]:
    out = []
    for raw in names:
        m = _FILTER_RE.match(raw.strip().lower())
        if not m:
            raise ValueError(f"cannot parse filter {raw!r}")
        kind, arg = m.group(1), m.group(2)
        if kind == "sml-lms":
            out.append(FilterSpec("sml-lms"))
        elif kind == "sml-true-lms":
            out.append(FilterSpec(kind, window=int(arg) if arg else default_window))
        elif kind in ("volterra-lms", "pf-lms"):
            out.append(FilterSpec(kind))
        elif kind == "sv-lms":
            out.append(FilterSpec(kind, diagonals=int(arg) if arg else 3))
        else:
            raise ValueError(f"unknown filter {raw!r}")
    if not out:
        raise ValueError("filter roster is empty")
    return out


# --------------------------------------------------------------------------
# plants


def realization_rng(master_seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(r,)))


def random_decomposable_plant(order: int, memory: int, seed: int) -> RankOneKernel:
    """I.i.d. N(0, 1) factors, all scaled by one constant to unit output power."""
    f = np.random.default_rng(seed).standard_normal((order, memory))
    power = rank_one_quadratic(RankOneKernel(f), RankOneKernel(f))
    return RankOneKernel(f * power ** (-1.0 / (2 * order)))


def _normalize_dense(order: int, memory: int, coeffs: np.ndarray) -> DenseKernel:
    k = DenseKernel(order, memory, coeffs)
    power = output_power(k)
    if power == 0:
        return k
    return DenseKernel(order, memory, coeffs / math.sqrt(power))


def gaussian_rho_plant(memory: int, rho: float, width: float = 3.0,
                       centered: bool = True) -> DenseKernel:
    """Second-order kernel shaped like a bivariate normal density.

    ``exp(-[a^2 + b^2 + 2 rho a b] / (2 width^2 (1 - rho^2)))`` with ``a, b``
    the tap offsets from the grid centre (or from tap 0 when ``centered`` is
    false), scaled to unit output power.  ``width = 3`` gives the
    denominator ``18 (1 - rho^2)``.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    origin = (memory - 1) / 2.0 if centered else 0.0
    a = np.arange(memory) - origin
    ii, jj = np.meshgrid(a, a, indexing="ij")
    h = np.exp(-(ii**2 + jj**2 + 2.0 * rho * ii * jj) / (2.0 * width**2 * (1.0 - rho**2)))
    return _normalize_dense(2, memory, h.reshape(-1))


def smooth_plant(memory: int = 21) -> DenseKernel:
    """Smooth non-decomposable stand-in: a main bump plus a weaker tilted ridge."""
    a = np.arange(memory)
    c = (memory - 1) / 3.0
    ii, jj = np.meshgrid(a, a, indexing="ij")
    main = np.exp(-((ii - c) ** 2 + (jj - c) ** 2) / (2 * (memory / 7.0) ** 2))
    ridge = 0.4 * np.exp(-((ii - jj) ** 2) / 8.0 - (ii + jj - memory) ** 2 / (2 * memory**2 / 4.0))
    return _normalize_dense(2, memory, (main + ridge).reshape(-1))


def rank_one_approximation(kernel: DenseKernel, iters: int = 500, tol: float = 1e-13) -> RankOneKernel:
    """Best rank-one approximation in the Frobenius sense (higher-order power method).

    Factors come back with equal norms.
    """
    t = kernel.as_tensor()
    k, m = kernel.order, kernel.memory
    if k == 1:
        return RankOneKernel(kernel.coefficients[None, :])
    if k == 2:
        u, s, vt = np.linalg.svd(t)
        scale = math.sqrt(s[0])
        return RankOneKernel(np.stack([u[:, 0] * scale, vt[0] * scale]))
    from .estimation import _contract_except

    f = np.ones((k, m)) / math.sqrt(m)
    lam = 0.0
    for _ in range(iters):
        for s in range(k):
            v = _contract_except(t, f, s)
            n = np.linalg.norm(v)
            if n == 0:
                return RankOneKernel(np.zeros((k, m)))
            f[s] = v / n
        new = float(_contract_except(t, f, 0) @ f[0])
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            lam = new
            break
        lam = new
    sign = np.sign(lam) or 1.0
    f[0] *= sign
    return RankOneKernel(f * abs(lam) ** (1.0 / k))


def build_plant(cfg: ScenarioConfig, rho: Optional[float] = None) -> Plant:
    if cfg.plant == "random-decomposable":
        return random_decomposable_plant(cfg.order, cfg.memory, cfg.plant_seed)
    if cfg.plant == "gaussian-rho":
        if cfg.order != 2:
            raise ValueError("gaussian-rho plants are second order")
        return gaussian_rho_plant(cfg.memory, cfg.rho if rho is None else rho, cfg.width, cfg.centered)
    if cfg.plant == "smooth":
        if cfg.order != 2:
            raise ValueError("the smooth stand-in plant is second order")
        return smooth_plant(cfg.memory)
    if cfg.plant == "zero":
        return RankOneKernel(np.zeros((cfg.order, cfg.memory)))
    kernel = load_kernel_csv(cfg.plant_file)
    if (kernel.order, kernel.memory) != (cfg.order, cfg.memory):
        raise ValueError(
            f"plant file has K={kernel.order}, M={kernel.memory}; config says "
            f"K={cfg.order}, M={cfg.memory}"
        )
    return kernel


@dataclass
class PlantContext:
    """Everything the kernels need to generate data and score a plant."""

    plant: Plant
    order: int
    memory: int
    power: float
    dense: Optional[np.ndarray]
    mode: int
    wo: np.ndarray
    p: np.ndarray
    c0: float
    r_matrix: np.ndarray
    probes: np.ndarray
    probe_out: np.ndarray
    warnings: List[str] = field(default_factory=list)

    @classmethod
    def build(cls, plant: Plant, need_dense: bool = False, probe_seed: int = 0) -> "PlantContext":
        k, m = plant.order, plant.memory
        warnings: List[str] = []
        empty = np.zeros(1)
        dense = None
        r_matrix = np.zeros((1, 1))
        probes = np.zeros((1, m))
        probe_out = np.zeros(1)
        if isinstance(plant, RankOneKernel):
            mode = _kernels.PLANT_RANK_ONE
            wo = np.array(plant.factors)
            p = empty
            c0 = rank_one_quadratic(plant, plant)
            if need_dense:
                dense = materialize(plant).coefficients
        else:
            wo = np.zeros((k, m))
            dense = np.array(plant.coefficients)
            if m**k <= CORRELATION_CAP:
                mode = _kernels.PLANT_DENSE
                r = _moment_matrix(k, m)
                p = r @ dense
                c0 = float(dense @ p)
                if k != 2:
                    r_matrix = r
            else:
                mode = _kernels.PLANT_PROBE
                rng = np.random.default_rng(probe_seed)
                probes = rng.standard_normal((PROBE_COUNT, m))
                probe_out = _dense_outputs(dense, k, m, probes)
                p = empty
                c0 = float(np.mean(probe_out**2))
                msg = (f"M**K = {m**k} exceeds the correlation cap {CORRELATION_CAP}; "
                       f"EMSE is estimated from {PROBE_COUNT} probe regressors")
                log.warning(msg)
                warnings.append(msg)
        return cls(plant, k, m, c0, dense, mode, wo, p, c0, r_matrix, probes, probe_out, warnings)

    def desired(self, u: np.ndarray) -> np.ndarray:
        """Noise-free plant output for an input record fed through a zeroed delay line."""
        if isinstance(self.plant, RankOneKernel):
            y = np.ones(u.size)
            for w in self.plant.factors:
                y *= np.convolve(u, w)[: u.size]
            return y
        padded = np.concatenate([np.zeros(self.memory - 1), u])
        x = np.lib.stride_tricks.sliding_window_view(padded, self.memory)[:, ::-1]
        return _dense_outputs(self.dense, self.order, self.memory, x)


def _dense_outputs(coeffs: np.ndarray, order: int, memory: int, x: np.ndarray) -> np.ndarray:
    """``x_n^{(x)K} . coeffs`` for every row ``x_n`` of ``x``."""
    t = coeffs.reshape(memory ** (order - 1), memory) @ x.T  # contracts the last index
    for level in range(order - 1, 0, -1):
        t = t.reshape(memory ** (level - 1), memory, -1)
        t = np.einsum("amn,nm->an", t, x)
    return t.reshape(-1)


def probe_emse(factors: np.ndarray, plant: Plant, n_probes: int = 10**5, seed: int = 0) -> float:
    """Monte Carlo ``E|u^{(x)K}(W_o - W)|^2`` over white Gaussian probe regressors."""
    k, m = np.shape(factors)
    x = np.random.default_rng(seed).standard_normal((n_probes, m))
    y = np.prod(x @ np.asarray(factors).T, axis=1)
    if isinstance(plant, RankOneKernel):
        yo = np.prod(x @ plant.factors.T, axis=1)
    else:
        yo = _dense_outputs(plant.coefficients, k, m, x)
    return float(np.mean((yo - y) ** 2))


# --------------------------------------------------------------------------
# ensembles


@dataclass
class EnsembleCurve:
    """Ensemble-mean learning curve of one filter.

    ``mean_emse[i]`` is the a-priori excess MSE at time ``i`` averaged over
    realizations that never diverged; ``mean_mse`` adds the noise floor.
    """

    name: str
    mean_emse: np.ndarray
    mean_mse: np.ndarray
    used: int
    diverged: int
    mu: float = float("nan")

    @property
    def realizations(self) -> int:
        return self.used + self.diverged


@dataclass
class _Resolved:
    spec: FilterSpec
    mu: float
    max_thr: float


def _resolve_filters(cfg: ScenarioConfig, ctx: PlantContext, mu_value: float,
                     mu_mode: str) -> tuple[List[_Resolved], Dict[str, float]]:
    specs = parse_filters(cfg.filters, cfg.window)
    bounds: Dict[str, float] = {}
    if any(s.is_sml for s in specs) and mu_mode == "relative":
        bounds["mu0"] = _sml_bound(cfg, ctx)
    out = []
    for spec in specs:
        if spec.is_sml:
            mu = mu_value * bounds["mu0"] if mu_mode == "relative" else mu_value
            thr = max_threshold(cfg.order, ctx.power,
                                spec.window if cfg.halve_max_for_window else 1) * cfg.max_scale
        else:
            variant = {"volterra-lms": "volterra", "pf-lms": "pf", "sv-lms": "sv"}[spec.kind]
            if variant != "volterra" and cfg.order != 2:
                raise ValueError(f"{spec.kind} needs order 2")
            base = linear_step_bound(variant, cfg.memory, cfg.order, spec.diagonals)
            bounds[spec.name] = base
            mu = mu_value * base if mu_mode == "relative" else mu_value
            thr = math.inf
        out.append(_Resolved(spec, mu, thr))
    return out, bounds


def _sml_bound(cfg: ScenarioConfig, ctx: PlantContext) -> float:
    plant = ctx.plant
    if not isinstance(plant, RankOneKernel):
        plant = rank_one_approximation(plant)
    return step_bound(cfg.order, cfg.memory, plant, cfg.bound_samples, rng_seed=cfg.plant_seed)


def _realization_data(ctx: PlantContext, seed: int, r: int, n: int, noise_var: float):
    rng = realization_rng(seed, r)
    u = rng.standard_normal(n)
    v = rng.standard_normal(n) * math.sqrt(noise_var)
    return u, ctx.desired(u) + v


def _run_filter(res: _Resolved, ctx: PlantContext, cfg: ScenarioConfig, u, d,
                track_emse: bool = True):
    n = u.size
    y = np.empty(n)
    e = np.empty(n)
    emse = np.empty(n)
    spec = res.spec
    if spec.is_sml:
        factors = np.array(default_initialization(cfg.order, cfg.memory).factors)
        pairs = np.asarray(perfect_matchings(2 * cfg.order))
        at = _kernels.run_sml(
            u, d, factors, res.mu, res.max_thr, spec.window, ctx.mode, ctx.wo, ctx.p, ctx.c0,
            pairs, ctx.probes, ctx.probe_out, track_emse, y, e, emse,
        )
    else:
        variant = _kernels.VARIANT_VOLTERRA if spec.kind == "volterra-lms" else _kernels.VARIANT_DIAGONAL
        diagonals = 1 if spec.kind == "pf-lms" else spec.diagonals
        size = cfg.memory**cfg.order if variant == _kernels.VARIANT_VOLTERRA else diagonals * cfg.memory
        if ctx.dense is None:
            ctx.dense = materialize(ctx.plant).coefficients
        if cfg.order != 2 and ctx.r_matrix.shape[0] != ctx.dense.size:
            ctx.r_matrix = _moment_matrix(cfg.order, cfg.memory)
        at = _kernels.run_linear(
            u, d, np.zeros(size), res.mu, variant, cfg.order, cfg.memory, diagonals,
            ctx.dense, ctx.r_matrix, track_emse, y, e, emse,
        )
    return y, e, emse, int(at)


def _ensemble(cfg: ScenarioConfig, ctx: PlantContext, resolved: List[_Resolved],
              track_emse: bool = True, trace_dir: Optional[Path] = None) -> Dict[str, EnsembleCurve]:
    n = cfg.iterations
    nf = len(resolved)
    chunks = [range(s, min(s + CHUNK, cfg.realizations)) for s in range(0, cfg.realizations, CHUNK)]
    traced = set(cfg.trace_realizations)

    def work(chunk):
        sums = np.zeros((nf, n))
        used = np.zeros(nf, dtype=np.int64)
        div = np.zeros(nf, dtype=np.int64)
        for r in chunk:
            u, d = _realization_data(ctx, cfg.seed, r, n, cfg.noise_var)
            for k, res in enumerate(resolved):
                y, e, emse, at = _run_filter(res, ctx, cfg, u, d, track_emse)
                if trace_dir is not None and r in traced:
                    write_trace_csv(trace_dir / f"trace_{res.spec.name}_r{r}.csv", y, e, emse, at)
                if at >= 0:
                    div[k] += 1
                else:
                    used[k] += 1
                    sums[k] += emse
        return sums, used, div

    total = np.zeros((nf, n))
    used = np.zeros(nf, dtype=np.int64)
    div = np.zeros(nf, dtype=np.int64)
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        for s, u_, d_ in pool.map(work, chunks):
            total += s
            used += u_
            div += d_
    out = {}
    for k, res in enumerate(resolved):
        mean = total[k] / used[k] if used[k] else np.full(n, np.nan)
        out[res.spec.name] = EnsembleCurve(res.spec.name, mean, mean + cfg.noise_var,
                                           int(used[k]), int(div[k]), res.mu)
    return out


def run_identification(cfg: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None):
    """Identify one plant with every filter of the roster.

    Returns ``(curves, info)``; ``info`` holds the step bounds used and any
    warning records.
    """
    plant = build_plant(cfg)
    ctx = PlantContext.build(plant)
    resolved, bounds = _resolve_filters(cfg, ctx, cfg.mu, cfg.mu_mode)
    trace_dir = Path(out_dir) if out_dir is not None and cfg.trace_realizations else None
    if trace_dir is not None:
        trace_dir.mkdir(parents=True, exist_ok=True)
    curves = _ensemble(cfg, ctx, resolved, trace_dir=trace_dir)
    info = {"bounds": bounds, "warnings": list(ctx.warnings), "plant": plant}
    if out_dir is not None:
        write_curves_csv(Path(out_dir) / "curves.csv", curves.values())
    return curves, info


def run_stability_table(cfg: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None):
    """Divergence counts per (filter, step multiplier).

    Returns ``(table, mu0)`` where ``table[(name, multiplier)] = (divergences, realizations)``.
    """
    plant = build_plant(cfg)
    ctx = PlantContext.build(plant)
    table = {}
    bounds = {}
    for mult in cfg.mu_grid:
        resolved, bounds = _resolve_filters(cfg, ctx, mult, "relative")
        curves = _ensemble(cfg, ctx, resolved, track_emse=False)
        for name, curve in curves.items():
            table[(name, mult)] = (curve.diverged, curve.realizations)
    if out_dir is not None:
        write_stability_csv(Path(out_dir) / "stability.csv", table)
    return table, bounds.get("mu0")


def run_sd_comparison(cfg: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None):
    """Steepest descent on exact statistics next to the ensemble SML-LMS curve.

    Both use the same step size.  Returns ``(sd_mse, lms_curve, mu)``.
    """
    plant = build_plant(cfg)
    if not isinstance(plant, RankOneKernel):
        raise ValueError("sd-comparison needs a decomposable plant")
    ctx = PlantContext.build(plant)
    lms_cfg = replace(cfg, filters=["sml-lms"])
    resolved, bounds = _resolve_filters(lms_cfg, ctx, cfg.mu, cfg.mu_mode)
    mu = resolved[0].mu
    corr = gaussian_correlations(cfg.memory, cfg.order, plant, cfg.noise_var)
    sd = steepest_descent(corr, mu, cfg.iterations - 1, default_initialization(cfg.order, cfg.memory))
    curve = _ensemble(lms_cfg, ctx, resolved)["sml-lms"]
    sd_curve = EnsembleCurve("steepest-descent", sd.mse - cfg.noise_var, sd.mse, 1, 0, mu)
    if out_dir is not None:
        write_curves_csv(Path(out_dir) / "curves.csv", [sd_curve, curve])
    return sd.mse, curve, mu


def steady_state(curve: np.ndarray) -> float:
    """Mean of the final 10% of a curve."""
    n = max(1, len(curve) // 10)
    return float(np.mean(curve[-n:]))


def run_rho_sweep(cfg: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None):
    """SML-LMS identification of the Gaussian rho family.

    Returns a list of dicts with keys ``rho``, ``curve``, ``steady_mse``,
    ``svd_residual`` (energy outside the leading singular value of the
    kernel matrix) and ``mu``.
    """
    if cfg.order != 2:
        raise ValueError("the rho sweep is second order")
    rows = []
    for rho in cfg.rho_grid:
        plant = gaussian_rho_plant(cfg.memory, rho, cfg.width, cfg.centered)
        ctx = PlantContext.build(plant)
        sub = replace(cfg, filters=["sml-lms"], plant="gaussian-rho", rho=rho)
        resolved, _ = _resolve_filters(sub, ctx, cfg.mu, cfg.mu_mode)
        curve = _ensemble(sub, ctx, resolved)["sml-lms"]
        curve.name = f"sml-lms[rho={rho:g}]"
        sv = np.linalg.svd(plant.as_tensor(), compute_uv=False)
        rows.append({
            "rho": rho,
            "curve": curve,
            "steady_mse": steady_state(curve.mean_mse),
            "svd_residual": float(np.sum(sv[1:] ** 2)),
            "mu": curve.mu,
        })
    if out_dir is not None:
        out = Path(out_dir)
        write_curves_csv(out / "curves.csv", [r["curve"] for r in rows])
        with open(out / "rho_summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rho", "steady_mse", "steady_mse_db", "svd_residual", "mu"])
            for r in rows:
                w.writerow([_fmt(r["rho"]), _fmt(r["steady_mse"]), _fmt(to_db(r["steady_mse"])),
                            _fmt(r["svd_residual"]), _fmt(r["mu"])])
    return rows


# --------------------------------------------------------------------------
# chaos


def chaos_trajectory(mu: float, transient: int = 10_000, samples: int = 1000,
                     gain: float = 100.0):
    """Unstabilized SML-LMS on ``d = gain * u^2`` with ``u = 1``, ``K = 2``, ``M = 1``.

    Starts from the default initialization ``(1, 0)``.  Returns the recorded
    ``w_1`` values, the matching errors and the divergence index (``-1`` if
    none); entries after divergence are NaN.
    """
    w1 = np.empty(samples)
    err = np.empty(samples)
    at = _kernels.chaos_run(mu, transient, samples, gain, w1, err)
    return w1, err, int(at)


def classify_trajectory(w1: np.ndarray, err: np.ndarray, diverged_at: int,
                        tol: float = 1e-6, max_period: int = 64) -> str:
    """``converged``, ``stalled``, ``periodic-<p>``, ``chaotic`` or ``diverged``."""
    if diverged_at >= 0:
        return "diverged"
    if np.ptp(w1) <= tol:
        return "converged" if abs(err[-1]) < tol else "stalled"
    for p in range(2, max_period + 1):
        if np.all(np.abs(w1[p:] - w1[:-p]) <= tol):
            return f"periodic-{p}"
    return "chaotic"


def run_chaos_sweep(cfg: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None):
    """Bifurcation data over the step grid.  Returns ``(mus, samples, regimes)``."""
    count = int(round((cfg.mu_stop - cfg.mu_start) / cfg.mu_step)) + 1
    mus = np.round(cfg.mu_start + cfg.mu_step * np.arange(count), 12)
    data = np.empty((count, cfg.samples))
    regimes = []
    finals = []
    for k, mu in enumerate(mus):
        w1, err, at = chaos_trajectory(float(mu), cfg.transient, cfg.samples)
        data[k] = w1
        regimes.append(classify_trajectory(w1, err, at))
        finals.append(err[-1])
    if out_dir is not None:
        out = Path(out_dir)
        write_bifurcation_csv(out / "bifurcation.csv", mus, data)
        with open(out / "regimes.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mu", "regime", "final_error"])
            for mu, reg, fe in zip(mus, regimes, finals):
                w.writerow([_fmt(mu), reg, _fmt(fe)])
    return mus, data, regimes


# --------------------------------------------------------------------------
# CSV output


def write_curves_csv(path: Union[str, Path], curves) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "filter", "mean_emse_db", "mean_mse_db"])
        for c in curves:
            with np.errstate(divide="ignore", invalid="ignore"):
                emse_db = to_db(c.mean_emse)
                mse_db = to_db(c.mean_mse)
            for i in range(len(c.mean_emse)):
                w.writerow([i, c.name, _fmt(emse_db[i]), _fmt(mse_db[i])])


def write_stability_csv(path: Union[str, Path], table) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filter", "mu_multiplier", "divergences", "realizations"])
        for (name, mult), (div, total) in table.items():
            w.writerow([name, _fmt(mult), div, total])


def write_bifurcation_csv(path: Union[str, Path], mus, data) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mu", "sample_index", "w1"])
        for mu, row in zip(mus, data):
            for j, v in enumerate(row):
                w.writerow([_fmt(mu), j, _fmt(v)])


def write_trace_csv(path: Union[str, Path], y, e, emse, diverged_at: int) -> None:
    """Per-realization trace: iteration, y, e, mse_proxy (e^2), emse, diverged_flag."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "y", "e", "mse_proxy", "emse", "diverged_flag"])
        for i in range(len(y)):
            flag = int(0 <= diverged_at <= i)
            w.writerow([i, _fmt(y[i]), _fmt(e[i]), _fmt(e[i] * e[i]), _fmt(emse[i]), flag])
