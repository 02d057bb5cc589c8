"""Maximum-likelihood coupling estimation from computational-basis measurements.

Given records {s_k} and a family wave function, the couplings are predicted
by maximizing  L(J) = sum_k log P(s_k | J)  with a derivative-free simplex
search.  Only amplitudes enter; no phase information is used.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import MeasurementFormatError
from .hamiltonian import CouplingVector, HamiltonianFamily, config_to_index, pack_rows


@dataclass(frozen=True)
class MeasurementSet:
    """Projective measurement records, one length-n configuration per shot."""

    n: int
    records: np.ndarray  # (N, n) int8
    provenance: str = ""

    def __post_init__(self):
        records = np.asarray(self.records)
        if records.ndim != 2 or records.shape[1] != self.n:
            raise ValueError(f"records must have shape (N, {self.n}), got {records.shape}")
        if len(records) < 1:
            raise ValueError("measurement set is empty")

    def __len__(self) -> int:
        return len(self.records)

    def unique(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct records and their multiplicities."""
        keys = pack_rows(self.records.astype(np.int8))
        _, first, counts = np.unique(keys, return_index=True, return_counts=True)
        return self.records[first], counts

    def subset(self, size: int, seed: int) -> "MeasurementSet":
        """Seeded subsample without replacement (with replacement if too few records)."""
        rng = np.random.Generator(np.random.Philox(key=seed))
        replace = size > len(self)
        picks = rng.choice(len(self), size=size, replace=replace)
        return MeasurementSet(
            n=self.n,
            records=self.records[picks],
            provenance=f"{self.provenance} subset={size} seed={seed}",
        )


@dataclass(frozen=True)
class PredictionResult:
    J_hat: CouplingVector
    log_likelihood: float
    n_measure: int
    iterations: int
    converged: bool


def write_measurements(path, meas: MeasurementSet, model: str = "tfi", params: str = "h") -> None:
    """Measurement file: header line, then one bitstring per line."""
    path = Path(path)
    lines = [f"n={meas.n} model={model} params={params}"]
    lines.extend("".join(str(int(v)) for v in rec) for rec in meas.records)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_measurements(path) -> tuple[MeasurementSet, dict]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise MeasurementFormatError("empty measurement file", line=1)
    meta: dict[str, str] = {}
    for chunk in lines[0].split():
        if "=" not in chunk:
            raise MeasurementFormatError(f"malformed header field {chunk!r}", line=1)
        key, value = chunk.split("=", 1)
        meta[key] = value
    if "n" not in meta:
        raise MeasurementFormatError("header is missing n=<int>", line=1)
    try:
        n = int(meta["n"])
    except ValueError:
        raise MeasurementFormatError(f"bad system size {meta['n']!r}", line=1) from None
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        if len(line) != n or any(ch not in "01" for ch in line):
            raise MeasurementFormatError(f"expected {n} characters of 0/1, got {line!r}", line=lineno)
        records.append([int(ch) for ch in line])
    if not records:
        raise MeasurementFormatError("no measurement records after the header", line=2)
    return MeasurementSet(n=n, records=np.array(records, dtype=np.int8)), meta


def log_likelihood(model, meas: MeasurementSet, J: CouplingVector) -> float:
    """sum_k log P(s_k | J); duplicate records cost a single evaluation.

    Returns -inf when any record has zero probability (possible only under
    U(1) masking); that is reported, not raised.
    """
    if len(meas) == 0:
        raise ValueError("cannot evaluate the likelihood of an empty measurement set")
    unique_records, counts = meas.unique()
    log_p = np.asarray(model.log_prob_batch(unique_records, J), dtype=np.float64)
    return float(np.sum(counts * log_p))


def nelder_mead(f, x0, spread, lo, hi, f_tol=1e-9, x_tol=1e-9, max_iter=10_000):
    """Simplex minimization with reflection 1, expansion 2, contraction 0.5,
    shrink 0.5; candidate vertices are clamped into [lo, hi].

    Converges when both the function-value spread and the vertex spread fall
    below their tolerances.  Returns (x_best, f_best, iterations, converged).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    k = x0.size

    def clamp(x):
        return np.clip(x, lo, hi)

    simplex = [clamp(x0)]
    for i in range(k):
        vertex = x0.copy()
        vertex[i] += spread[i]
        simplex.append(clamp(vertex))
    values = [f(x) for x in simplex]

    iterations = 0
    converged = False
    while iterations < max_iter:
        order = np.argsort(values, kind="stable")
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        if (
            max(abs(v - values[0]) for v in values[1:]) < f_tol
            and max(np.max(np.abs(x - simplex[0])) for x in simplex[1:]) < x_tol
        ):
            converged = True
            break
        iterations += 1
        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        reflected = clamp(centroid + (centroid - worst))
        f_reflected = f(reflected)
        if values[0] <= f_reflected < values[-2]:
            simplex[-1], values[-1] = reflected, f_reflected
            continue
        if f_reflected < values[0]:
            expanded = clamp(centroid + 2.0 * (centroid - worst))
            f_expanded = f(expanded)
            if f_expanded < f_reflected:
                simplex[-1], values[-1] = expanded, f_expanded
            else:
                simplex[-1], values[-1] = reflected, f_reflected
            continue
        contracted = clamp(centroid + 0.5 * (worst - centroid))
        f_contracted = f(contracted)
        if f_contracted < values[-1]:
            simplex[-1], values[-1] = contracted, f_contracted
            continue
        best = simplex[0]
        for i in range(1, k + 1):
            simplex[i] = clamp(best + 0.5 * (simplex[i] - best))
            values[i] = f(simplex[i])

    order = np.argsort(values, kind="stable")
    return simplex[order[0]], values[order[0]], iterations, converged


def predict(
    model,
    meas: MeasurementSet,
    search_box: dict[str, tuple[float, float]],
    prior: dict[str, tuple[float, float]] | None = None,
    tol: float = 1e-9,
    max_iter: int = 10_000,
) -> PredictionResult:
    """Maximize the measurement log-likelihood over the search box.

    The box is clamped into the family prior when one is given; the search
    starts at the box center with an initial spread of 10% of the box width
    per dimension.
    """
    names = list(search_box)
    lo = np.array([search_box[p][0] for p in names], dtype=np.float64)
    hi = np.array([search_box[p][1] for p in names], dtype=np.float64)
    if prior is not None:
        plo = np.array([prior[p][0] for p in names])
        phi = np.array([prior[p][1] for p in names])
        lo, hi = np.clip(lo, plo, phi), np.clip(hi, plo, phi)
    if np.any(hi < lo):
        raise ValueError("search box is empty after clamping to the prior")

    def coupling(x) -> CouplingVector:
        return CouplingVector(n=meas.n, params=tuple(zip(names, (float(v) for v in x))))

    def objective(x) -> float:
        return -log_likelihood(model, meas, coupling(x))

    center = 0.5 * (lo + hi)
    width = hi - lo
    if np.all(width == 0.0):
        value = objective(center)
        return PredictionResult(
            J_hat=coupling(center),
            log_likelihood=-value,
            n_measure=len(meas),
            iterations=0,
            converged=True,
        )
    x_best, f_best, iterations, converged = nelder_mead(
        objective, center, 0.1 * width, lo, hi, f_tol=tol, x_tol=tol, max_iter=max_iter
    )
    return PredictionResult(
        J_hat=coupling(x_best),
        log_likelihood=-f_best,
        n_measure=len(meas),
        iterations=iterations,
        converged=converged,
    )


class ExactProbabilityModel:
    """Plug-in likelihood backed by exact ground states of a family.

    Implements the same ``log_prob_batch`` surface as the wave-function
    models, so prediction quality can be checked independently of training.
    """

    def __init__(self, family: HamiltonianFamily):
        self.family = family
        self._cache: dict[tuple, np.ndarray] = {}

    def _log_probs(self, J: CouplingVector) -> np.ndarray:
        from .oracle import ed_ground_state

        key = (J.n, J.params)
        if key not in self._cache:
            state = ed_ground_state(self.family.build(J))
            self._cache[key] = state.log_probabilities()
        return self._cache[key]

    def log_prob_batch(self, configs, J: CouplingVector) -> np.ndarray:
        table = self._log_probs(J)
        idx = np.array([config_to_index(c) for c in np.asarray(configs)], dtype=np.int64)
        return table[idx]

    def probabilities(self, J: CouplingVector) -> np.ndarray:
        return np.exp(self._log_probs(J))
