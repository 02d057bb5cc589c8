"""Autoregressive sampling over unique configuration strings.

Instead of materializing N_batch individual samples, the sampler carries a
set of distinct partial strings with occupation counts.  At each step every
partial string's count is split multinomially between its d children.  Once
splitting would push the number of distinct strings past ``n_unique``,
branching stops for good: each surviving string commits its whole count to a
single child drawn from the conditional.  Cost therefore scales with
``n_unique``, not ``n_batch``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .hamiltonian import CouplingVector, pack_rows


@dataclass(frozen=True)
class SamplerConfig:
    n_batch: int
    n_unique: int
    seed: int

    def __post_init__(self):
        if self.n_unique < 1:
            raise ConfigError(f"n_unique must be >= 1, got {self.n_unique}")
        if self.n_batch < self.n_unique:
            raise ConfigError(
                f"n_batch ({self.n_batch}) must be >= n_unique ({self.n_unique})"
            )


@dataclass(frozen=True)
class UniqueBatch:
    """Distinct sampled configurations with multiplicities summing to n_batch."""

    configs: np.ndarray  # (B, n) int8
    counts: np.ndarray  # (B,) int64
    n_batch: int
    J: CouplingVector

    def __post_init__(self):
        if self.configs.ndim != 2 or len(self.counts) != len(self.configs):
            raise ValueError("configs and counts must align")
        if int(self.counts.sum()) != self.n_batch:
            raise ValueError("counts must sum to n_batch")
        if np.any(self.counts <= 0):
            raise ValueError("counts must be positive")
        keys = pack_rows(self.configs)
        if len(np.unique(keys)) != len(keys):
            raise ValueError("configurations must be pairwise distinct")

    @property
    def weights(self) -> np.ndarray:
        return self.counts.astype(np.float64) / float(self.n_batch)

    def entries(self):
        return list(zip(self.configs, self.counts))


def _categorical_rows(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One draw per row from each row's distribution."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    picks = (u[:, None] > cum).sum(axis=1)
    return np.minimum(picks, probs.shape[1] - 1)


def sample_unique(model, J: CouplingVector, cfg: SamplerConfig) -> UniqueBatch:
    """Draw a UniqueBatch of complete length-n configurations from the model.

    Counter-based Philox streams keyed by the config seed make the result
    reproducible regardless of how the conditional evaluations are scheduled;
    all random splits for one step happen in a single vectorized draw.
    """
    n = J.n
    d = model.d
    rng = np.random.Generator(np.random.Philox(key=np.uint64(cfg.seed)))
    prefixes = np.zeros((1, 0), dtype=np.int8)
    counts = np.array([cfg.n_batch], dtype=np.int64)
    branching = True

    for _ in range(n):
        log_p, _ = model.conditionals_batch(prefixes, J)
        probs = np.exp(np.asarray(log_p, dtype=np.float64))
        probs /= probs.sum(axis=1, keepdims=True)
        B = prefixes.shape[0]
        if branching and B * d > cfg.n_unique:
            branching = False
        if branching:
            draws = rng.multinomial(counts, probs)  # (B, d)
            children = np.repeat(prefixes, d, axis=0)
            values = np.tile(np.arange(d, dtype=np.int8), B)
            prefixes = np.concatenate([children, values[:, None]], axis=1)
            counts = draws.reshape(-1)
            keep = counts > 0
            prefixes = prefixes[keep]
            counts = counts[keep]
        else:
            picks = _categorical_rows(rng, probs).astype(np.int8)
            prefixes = np.concatenate([prefixes, picks[:, None]], axis=1)
    return UniqueBatch(configs=prefixes, counts=counts, n_batch=cfg.n_batch, J=J)


def expectation(batch: UniqueBatch, f) -> complex:
    """Count-weighted mean sum_k (count_k / n_batch) f(s_k)."""
    if len(batch.counts) == 0:
        raise ValueError("cannot take an expectation over an empty batch")
    total = 0.0 + 0.0j
    for config, count in zip(batch.configs, batch.counts):
        total += (count / batch.n_batch) * complex(f(config))
    return complex(total)
