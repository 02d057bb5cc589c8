"""Explicit symmetrization of the wave function and U(1) particle-number masking.

A discrete symmetry T with T^m = 1 and sector eigenvalue 1 is enforced by
averaging probabilities over the orbit and assigning one common phase per
orbit, anchored at the orbit member with the smallest binary value:

    P~(s)    = (1/m) sum_k P(T^k s)
    phi~(s)  = Arg( sum_k psi(T^k s0) ),   s0 = canonical representative.

Only the sector eigenvalue 1 is supported; other sectors would impose a
nontrivial phase pattern across the orbit and are rejected at construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import UnsupportedSizeError
from .hamiltonian import as_config, pack_rows
from .sampler import SamplerConfig, UniqueBatch, sample_unique


@dataclass(frozen=True)
class SymmetryOp:
    """Site reversal and/or global value relabeling; closed under composition."""

    reverse: bool = False
    invert: bool = False

    def apply(self, configs: np.ndarray) -> np.ndarray:
        out = np.asarray(configs)
        if self.reverse:
            out = out[..., ::-1]
        if self.invert:
            out = 1 - out
        return np.ascontiguousarray(out)

    def compose(self, other: "SymmetryOp") -> "SymmetryOp":
        return SymmetryOp(self.reverse ^ other.reverse, self.invert ^ other.invert)


SPIN_FLIP = SymmetryOp(invert=True)
REFLECTION = SymmetryOp(reverse=True)

_GENERATORS = {"spin_flip": SPIN_FLIP, "reflection": REFLECTION}


@dataclass(frozen=True)
class SymmetryGroup:
    """Closure of the generators, identity first; ``m`` is the group order."""

    elements: tuple[SymmetryOp, ...]

    @classmethod
    def from_generators(cls, generators, sector: complex = 1) -> "SymmetryGroup":
        if sector != 1:
            raise ValueError(
                "only the trivial symmetry sector (eigenvalue 1) is supported; "
                f"got {sector!r}"
            )
        elements = [SymmetryOp()]
        frontier = list(elements)
        while frontier:
            current = frontier.pop()
            for gen in generators:
                candidate = current.compose(gen)
                if candidate not in elements:
                    elements.append(candidate)
                    frontier.append(candidate)
        elements.sort(key=lambda op: (op.reverse, op.invert))
        return cls(elements=tuple(elements))

    @classmethod
    def from_names(cls, names) -> "SymmetryGroup":
        gens = []
        for name in names:
            if name not in _GENERATORS:
                raise ValueError(f"unknown symmetry {name!r}; known: {sorted(_GENERATORS)}")
            gens.append(_GENERATORS[name])
        return cls.from_generators(gens)

    @property
    def m(self) -> int:
        return len(self.elements)

    def orbit_stack(self, configs: np.ndarray) -> np.ndarray:
        """Images of a batch under every element, shape (m, B, n)."""
        return np.stack([op.apply(configs) for op in self.elements], axis=0)


def orbit(group: SymmetryGroup, s) -> list[np.ndarray]:
    """The m images of s in group element order (duplicates retained)."""
    s = as_config(s)
    return [op.apply(s) for op in group.elements]


def canonical_rep(group: SymmetryGroup, s) -> np.ndarray:
    """Orbit member whose bitstring, read as a binary integer with s_1 most
    significant, is minimal."""
    s = as_config(s)
    members = orbit(group, s)
    keys = [m.tobytes() for m in members]
    return members[keys.index(min(keys))]


def canonical_rep_batch(group: SymmetryGroup, configs: np.ndarray) -> np.ndarray:
    stack = group.orbit_stack(configs)
    best = stack[0]
    best_keys = pack_rows(best)
    for k in range(1, stack.shape[0]):
        keys = pack_rows(stack[k])
        smaller = keys < best_keys
        best = np.where(smaller[:, None], stack[k], best)
        best_keys = np.where(smaller, keys, best_keys)
    return best


class SymmetrizedModel:
    """Wave function with orbit-averaged probability and orbit-common phase.

    Exposes the same evaluation surface as the base model; sampling goes
    through :func:`sample_symmetric`.
    """

    def __init__(self, base, group: SymmetryGroup):
        self.base = base
        self.group = group

    @property
    def d(self) -> int:
        return self.base.d

    def parameters(self):
        return self.base.parameters()

    def named_parameters(self):
        return self.base.named_parameters()

    def parameter_store(self):
        return self.base.parameter_store()

    def conditionals_batch(self, prefixes, J):
        # sampling draws from the base conditionals; the symmetry is restored
        # by the post-hoc random group action in sample_symmetric
        return self.base.conditionals_batch(prefixes, J)

    def _orbit_log_psi(self, configs: np.ndarray, J, dedup: bool):
        """(log amplitudes, phases) over orbits of the canonical representatives.

        Returns torch tensors of shape (m, B).  With ``dedup`` the stacked
        orbit rows are evaluated once per distinct row; without it the base
        model is evaluated on exactly m rows per input configuration.
        """
        configs = np.asarray(configs, dtype=np.int8)
        reps = canonical_rep_batch(self.group, configs)
        stack = self.group.orbit_stack(reps)
        m, B, n = stack.shape
        flat = stack.reshape(m * B, n)
        if dedup:
            keys = pack_rows(flat)
            _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
            log_a_u, phase_u = self.base.log_psi_t(flat[first], J)
            log_a = log_a_u[torch.from_numpy(inverse)].reshape(m, B)
            phase = phase_u[torch.from_numpy(inverse)].reshape(m, B)
        else:
            log_a_flat, phase_flat = self.base.log_psi_t(flat, J)
            log_a = log_a_flat.reshape(m, B)
            phase = phase_flat.reshape(m, B)
        return log_a, phase

    def log_psi_t(self, configs, J) -> tuple[torch.Tensor, torch.Tensor]:
        log_a, phase = self._orbit_log_psi(configs, J, dedup=True)
        return _combine_orbit(log_a, phase, self.group.m)

    def log_psi_batch(self, configs, J) -> tuple[np.ndarray, np.ndarray]:
        with torch.no_grad():
            log_a, phase = self.log_psi_t(configs, J)
        return log_a.numpy(), phase.numpy()

    def log_psi(self, s, J) -> tuple[float, float]:
        """Symmetrized (log amplitude, phase); issues exactly m base evaluations."""
        with torch.no_grad():
            log_a, phase = self._orbit_log_psi(np.asarray(s)[None, :], J, dedup=False)
            log_amp, ph = _combine_orbit(log_a, phase, self.group.m)
        return float(log_amp[0]), float(ph[0])

    def log_prob_batch(self, configs, J) -> np.ndarray:
        log_a, _ = self.log_psi_batch(configs, J)
        return 2.0 * log_a


def _combine_orbit(log_a: torch.Tensor, phase: torch.Tensor, m: int):
    """Reduce per-orbit-member (log A, phi) to (log A~, phi~).

    A whole orbit at zero probability (possible only under U(1) masking)
    yields log A~ = -inf with phase 0, flagging the configuration.
    """
    log_pt = torch.logsumexp(2.0 * log_a, dim=0) - math.log(m)
    shift = log_a.max(dim=0).values
    shift = torch.where(torch.isfinite(shift), shift, torch.zeros_like(shift))
    scaled = torch.exp(log_a - shift.unsqueeze(0))
    real = (scaled * torch.cos(phase)).sum(dim=0)
    imag = (scaled * torch.sin(phase)).sum(dim=0)
    phase_out = torch.atan2(imag, real)
    return 0.5 * log_pt, phase_out


def symmetrized_log_psi(sym: SymmetrizedModel, s, J) -> tuple[float, float]:
    return sym.log_psi(s, J)


def sample_symmetric(sym: SymmetrizedModel, J, cfg: SamplerConfig) -> UniqueBatch:
    """Sample the base model, then spread each count uniformly over its orbit.

    The post-hoc random group action targets the symmetrized distribution P~
    at negligible extra sampling cost; duplicates created by the action are
    merged.
    """
    base_batch = sample_unique(sym.base, J, cfg)
    group = sym.group
    m = group.m
    if m == 1:
        return base_batch
    rng = np.random.Generator(np.random.Philox(key=np.uint64(cfg.seed), counter=1 << 64))
    splits = rng.multinomial(base_batch.counts, np.full(m, 1.0 / m))  # (B, m)
    stack = group.orbit_stack(base_batch.configs)  # (m, B, n)
    flat = stack.transpose(1, 0, 2).reshape(-1, stack.shape[2])  # entry-major
    flat_counts = splits.reshape(-1)
    keep = flat_counts > 0
    flat = flat[keep]
    flat_counts = flat_counts[keep]
    keys = pack_rows(flat)
    uniq_keys, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    merged = np.zeros(len(uniq_keys), dtype=np.int64)
    np.add.at(merged, inverse, flat_counts)
    return UniqueBatch(
        configs=flat[first], counts=merged, n_batch=base_batch.n_batch, J=base_batch.J
    )


def wrap_model(base, symmetries):
    """Apply the configured wrappers: U(1) masking first, then the discrete group."""
    names = [str(s) for s in symmetries]
    unknown = [s for s in names if s != "u1" and s not in _GENERATORS]
    if unknown:
        known = ["u1", *sorted(_GENERATORS)]
        raise ValueError(f"unknown symmetry name(s) {unknown}; known: {known}")
    model = base
    if "u1" in names:
        model = U1MaskedModel(model)
        names = [s for s in names if s != "u1"]
    if names:
        model = SymmetrizedModel(model, SymmetryGroup.from_names(names))
    return model


def draw_batch(model, J, cfg: SamplerConfig) -> UniqueBatch:
    """Sample from the model, via the symmetric path when it is symmetrized."""
    if isinstance(model, SymmetrizedModel):
        return sample_symmetric(model, J, cfg)
    return sample_unique(model, J, cfg)


def u1_mask(prefix, n: int) -> tuple[int, ...]:
    """Next values allowed under zero total magnetization.

    A value is forbidden once its running count would exceed n/2; only even
    sizes support the balanced sector.
    """
    if n % 2 != 0:
        raise UnsupportedSizeError(f"U(1) masking needs an even system size, got {n}")
    prefix = np.asarray(prefix, dtype=np.int64).reshape(-1)
    half = n // 2
    ones = int(prefix.sum())
    zeros = prefix.size - ones
    allowed = []
    if zeros + 1 <= half:
        allowed.append(0)
    if ones + 1 <= half:
        allowed.append(1)
    return tuple(allowed)


class U1MaskedModel:
    """Conditional-level wrapper enforcing zero total magnetization.

    Forbidden values get probability exactly zero and the remaining
    conditional is renormalized, so sampling and log-amplitude evaluation
    stay consistent automatically.
    """

    def __init__(self, base):
        self.base = base

    @property
    def d(self) -> int:
        return self.base.d

    def parameters(self):
        return self.base.parameters()

    def named_parameters(self):
        return self.base.named_parameters()

    def parameter_store(self):
        return self.base.parameter_store()

    @staticmethod
    def _mask_tensor(spins: torch.Tensor, n: int) -> torch.Tensor:
        """Allowed-value mask per position for prefix rows (B, L) -> (B, L+1, 2)."""
        if n % 2 != 0:
            raise UnsupportedSizeError(f"U(1) masking needs an even system size, got {n}")
        B, L = spins.shape
        half = n // 2
        ones = torch.cumsum(spins, dim=1)
        ones = torch.cat([torch.zeros(B, 1, dtype=ones.dtype), ones], dim=1)  # before each position
        positions = torch.arange(L + 1, dtype=ones.dtype).unsqueeze(0)
        zeros = positions - ones
        return torch.stack([zeros + 1 <= half, ones + 1 <= half], dim=2)

    def _masked_outputs(self, J, spins: np.ndarray):
        log_p, phases = self.base._outputs(J, spins)
        mask = self._mask_tensor(torch.from_numpy(np.asarray(spins, dtype=np.int64)), J.n)
        neg_inf = torch.tensor(float("-inf"), dtype=log_p.dtype)
        masked = torch.where(mask, log_p, neg_inf)
        norm = torch.logsumexp(masked, dim=2, keepdim=True)
        return masked - norm, phases

    def conditionals_batch(self, prefixes, J):
        prefixes = np.asarray(prefixes, dtype=np.int64)
        with torch.no_grad():
            log_p, phases = self._masked_outputs(J, prefixes)
        return log_p[:, -1, :].numpy(), phases[:, -1, :].numpy()

    def conditionals(self, prefix, J):
        log_p, phase = self.conditionals_batch(np.asarray(prefix).reshape(1, -1), J)
        return np.exp(log_p[0]), phase[0]

    def log_psi_t(self, configs, J):
        configs = np.asarray(configs, dtype=np.int64)
        if configs.ndim == 1:
            configs = configs[None, :]
        log_p, phases = self._masked_outputs(J, configs[:, :-1])
        picked = torch.from_numpy(configs).unsqueeze(-1)
        log_sel = log_p.gather(2, picked).squeeze(-1)
        phase_sel = phases.gather(2, picked).squeeze(-1)
        return 0.5 * log_sel.sum(dim=1), phase_sel.sum(dim=1)

    def log_psi_batch(self, configs, J):
        with torch.no_grad():
            log_a, phase = self.log_psi_t(configs, J)
        return log_a.numpy(), phase.numpy()

    def log_psi(self, s, J):
        log_a, phase = self.log_psi_batch(np.asarray(s)[None, :], J)
        return float(log_a[0]), float(phase[0])

    def log_prob_batch(self, configs, J):
        log_a, _ = self.log_psi_batch(configs, J)
        return 2.0 * log_a
