"""Magnetization observables, Binder cumulants, crossings, and power-law fits."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .exceptions import NoCrossingError, UndefinedCumulantError
from .sampler import SamplerConfig, UniqueBatch
from .symmetry import draw_batch


@dataclass(frozen=True)
class ObservableEstimate:
    """Median of repeated seeded estimates with percentile spread."""

    value: float
    std_error: float  # standard error of the repeat mean
    p10: float
    p90: float
    n_batch: int
    n_unique: int
    J: object
    n: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("std_error must be nonnegative")


@dataclass(frozen=True)
class FssFit:
    """Log-log least squares of an observable against the system size."""

    slope: float  # equals -beta/nu when fitting sqrt(<m_z^2>) at the critical point
    intercept: float
    slope_std_error: float
    sizes: tuple[int, ...]


def magnetization_values(configs: np.ndarray) -> np.ndarray:
    """m_z per configuration: (n0 - n1) / n with index 0 carrying eigenvalue +1."""
    configs = np.asarray(configs)
    n = configs.shape[1]
    ones = configs.sum(axis=1)
    return (n - 2.0 * ones) / n


def magnetization_moments(batch: UniqueBatch) -> tuple[float, float, float]:
    """(<|m_z|>, <m_z^2>, <m_z^4>) under the batch weights."""
    m = magnetization_values(batch.configs)
    w = batch.weights
    return (
        float(np.sum(w * np.abs(m))),
        float(np.sum(w * m**2)),
        float(np.sum(w * m**4)),
    )


def binder_cumulant(m2: float, m4: float) -> float:
    """U = 1 - <m^4> / (3 <m^2>^2)."""
    if m2 <= 0.0:
        raise UndefinedCumulantError("Binder cumulant undefined for vanishing second moment")
    return 1.0 - m4 / (3.0 * m2 * m2)


@dataclass(frozen=True)
class CrossingResult:
    h_c: float
    spread: float  # max - min over the pairwise crossings
    pair_crossings: tuple[tuple[int, int, float], ...]
    excluded_pairs: tuple[tuple[int, int], ...]


def find_crossing(curves: dict[int, np.ndarray]) -> CrossingResult:
    """Crossing point of per-size curves sampled on a shared grid.

    ``curves`` maps size -> array of (h, U) rows.  For every size pair the
    first sign change of the U difference is located by piecewise-linear
    interpolation; the critical point is the median of the pairwise
    crossings.  Pairs without a sign change are excluded and reported.
    """
    sizes = sorted(curves)
    if len(sizes) < 2:
        raise ValueError("need curves for at least two sizes")
    grids = [np.asarray(curves[s], dtype=np.float64) for s in sizes]
    h = grids[0][:, 0]
    for g in grids[1:]:
        if len(g) != len(h) or not np.allclose(g[:, 0], h):
            raise ValueError("curves must share one h grid")
    if len(h) < 2:
        raise ValueError("each curve needs at least two grid points")

    crossings: list[tuple[int, int, float]] = []
    excluded: list[tuple[int, int]] = []
    for a in range(len(sizes)):
        for b in range(a + 1, len(sizes)):
            diff = grids[a][:, 1] - grids[b][:, 1]
            found = None
            for i in range(len(h) - 1):
                d0, d1 = diff[i], diff[i + 1]
                if d0 == 0.0:
                    found = float(h[i])
                    break
                if d0 * d1 < 0.0:
                    found = float(h[i] + (h[i + 1] - h[i]) * d0 / (d0 - d1))
                    break
            else:
                if diff[-1] == 0.0:
                    found = float(h[-1])
            if found is None:
                excluded.append((sizes[a], sizes[b]))
            else:
                crossings.append((sizes[a], sizes[b], found))
    if not crossings:
        raise NoCrossingError("no pair of curves changes sign on the grid")
    values = np.array([c[2] for c in crossings])
    return CrossingResult(
        h_c=float(np.median(values)),
        spread=float(values.max() - values.min()),
        pair_crossings=tuple(crossings),
        excluded_pairs=tuple(excluded),
    )


def fss_fit(sizes, values) -> FssFit:
    """Ordinary least squares of log(value) against log(size).

    For the root-mean-square magnetization at the critical point the fitted
    slope equals -beta/nu; the slope standard error comes from the residual
    variance.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if sizes.size < 3:
        raise ValueError(f"need at least 3 sizes for a fit, got {sizes.size}")
    if np.any(values <= 0.0) or np.any(sizes <= 0.0):
        raise ValueError("power-law fit needs positive sizes and values")
    x = np.log(sizes)
    y = np.log(values)
    xc = x - x.mean()
    slope = float(np.sum(xc * y) / np.sum(xc**2))
    intercept = float(y.mean() - slope * x.mean())
    residuals = y - (intercept + slope * x)
    dof = sizes.size - 2
    if dof > 0:
        var = float(np.sum(residuals**2) / dof / np.sum(xc**2))
        err = float(np.sqrt(var))
    else:
        err = 0.0
    return FssFit(
        slope=slope,
        intercept=intercept,
        slope_std_error=err,
        sizes=tuple(int(s) for s in sizes),
    )


def repeat_estimates(
    model,
    J,
    H,
    sampler_cfg: SamplerConfig,
    n_repeats: int = 10,
) -> dict[str, np.ndarray]:
    """Per-seed estimates of energy and magnetization moments.

    Repeat r uses the sampler seed derived from (cfg.seed, r); the returned
    arrays have one entry per repeat.  Pass H=None to skip the energy.
    """
    from .trainer import variational_energy

    energies = np.zeros(n_repeats)
    abs_mz = np.zeros(n_repeats)
    m2 = np.zeros(n_repeats)
    m4 = np.zeros(n_repeats)
    for r in range(n_repeats):
        seed = int(np.random.SeedSequence((sampler_cfg.seed, r)).generate_state(1, np.uint64)[0])
        batch = draw_batch(model, J, dataclasses.replace(sampler_cfg, seed=seed))
        if H is not None:
            energies[r] = variational_energy(model, H, batch).real
        abs_mz[r], m2[r], m4[r] = magnetization_moments(batch)
    out = {"abs_mz": abs_mz, "m2": m2, "m4": m4}
    if H is not None:
        out["energy"] = energies
    return out


def summarize(samples: np.ndarray, sampler_cfg: SamplerConfig, J, n: int) -> ObservableEstimate:
    """Median with 10th-90th percentile band over repeated estimates."""
    samples = np.asarray(samples, dtype=np.float64)
    spread = float(samples.std(ddof=1)) if samples.size > 1 else 0.0
    return ObservableEstimate(
        value=float(np.median(samples)),
        std_error=spread / np.sqrt(samples.size),
        p10=float(np.percentile(samples, 10)),
        p90=float(np.percentile(samples, 90)),
        n_batch=sampler_cfg.n_batch,
        n_unique=sampler_cfg.n_unique,
        J=J,
        n=n,
    )
