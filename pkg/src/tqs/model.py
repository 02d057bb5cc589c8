"""Autoregressive transformer wave function over spin configurations.

One network represents a whole family of states psi(s | J): coupling values,
the system size, and the spins seen so far enter as a token sequence, and the
network emits, per position, a conditional distribution over the next spin
together with a phase contribution.  The squared amplitude is the product of
conditionals, so the state is normalized by construction and supports exact
ancestral sampling.

Token layout (width d + n_param_channels):
  * one token per coupling: channel ``d + j`` carries the value of coupling j;
  * one size token: the size channel carries ln(n), the parity channel is 1
    for even n and 0 for odd n;
  * one token per spin: a one-hot in the first d channels.

The coupling block comes first.  Output position t predicts spin t+1; the
size token (last coupling-block token) predicts s_1.  The attention mask
lets coupling tokens attend only within the coupling block, while spin token
i attends to the whole coupling block and to spin tokens <= i.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ContextOverflowError, NumericFailureError, ShapeError
from .hamiltonian import LOG_PROB_FLOOR, CouplingVector

DTYPE = torch.float64


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``n_param_channels`` counts the coupling channels including the size and
    parity channels, so a family with k varying couplings needs k + 2.
    """

    n_layers: int
    d_e: int
    n_heads: int
    d: int = 2
    n_param_channels: int = 3
    max_context: int = 128

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.d_e < 4:
            raise ValueError(f"d_e must be >= 4, got {self.d_e}")
        if self.d_e % self.n_heads != 0:
            raise ValueError(f"d_e={self.d_e} not divisible by n_heads={self.n_heads}")
        if self.n_param_channels < 2:
            raise ValueError("need at least the size and parity channels")

    def as_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "d_e": self.d_e,
            "n_heads": self.n_heads,
            "d": self.d,
            "n_param_channels": self.n_param_channels,
            "max_context": self.max_context,
        }


@dataclass(frozen=True)
class TokenSequence:
    """Raw input tokens plus the position bookkeeping the encoder needs."""

    tokens: np.ndarray  # (T, d + n_param_channels)
    n_coupling: int  # tokens in the coupling block, couplings + size token
    spin_sites: np.ndarray  # (T - n_coupling,) 0-based site indices

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ShapeError(f"tokens must be 2D, got shape {self.tokens.shape}")
        if self.n_coupling < 1 or self.n_coupling + len(self.spin_sites) != len(self.tokens):
            raise ShapeError("token count must equal coupling block plus spin tokens")


@dataclass(frozen=True)
class ModelOutput:
    """Per-position next-spin conditionals.

    Row t holds the distribution and phase candidates for spin t+1 (row 0,
    produced by the size token, predicts s_1).
    """

    cond_log_probs: np.ndarray  # (R, d)
    cond_phases: np.ndarray  # (R, d)


class ParameterStore(Mapping):
    """Ordered name -> tensor view of all trainable arrays of a model."""

    def __init__(self, named: dict[str, torch.Tensor]):
        self._named = dict(named)

    @classmethod
    def from_module(cls, module: nn.Module) -> "ParameterStore":
        return cls(dict(module.named_parameters()))

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._named[name]

    def __iter__(self):
        return iter(self._named)

    def __len__(self) -> int:
        return len(self._named)

    @property
    def total_parameters(self) -> int:
        return sum(t.numel() for t in self._named.values())

    def assert_finite(self):
        for name, tensor in self._named.items():
            if not torch.isfinite(tensor).all():
                raise NumericFailureError(f"non-finite values in parameter {name!r}")

    def arrays(self) -> dict[str, np.ndarray]:
        """Detached float64 copies, in deterministic iteration order."""
        return {k: t.detach().cpu().numpy().astype(np.float64, copy=True) for k, t in self._named.items()}

    def load(self, arrays: dict[str, np.ndarray]):
        missing = set(self._named) - set(arrays)
        extra = set(arrays) - set(self._named)
        if missing or extra:
            raise ShapeError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        with torch.no_grad():
            for name, tensor in self._named.items():
                arr = np.asarray(arrays[name], dtype=np.float64)
                if tuple(arr.shape) != tuple(tensor.shape):
                    raise ShapeError(f"shape mismatch for {name!r}: {arr.shape} vs {tuple(tensor.shape)}")
                tensor.copy_(torch.from_numpy(arr))


def sinusoidal_table(max_len: int, d_e: int) -> np.ndarray:
    """Interleaved sin/cos of position / 10000^(2k / d_e), one spatial dimension."""
    table = np.zeros((max_len, d_e))
    pos = np.arange(max_len)[:, None].astype(np.float64)
    k = np.arange(0, d_e, 2).astype(np.float64)
    angle = pos / np.power(10000.0, k / d_e)[None, :]
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_e // 2])
    return table


class EncoderLayer(nn.Module):
    """Masked multi-head self-attention and a two-layer feed-forward block,
    each followed by a residual connection and layer normalization."""

    def __init__(self, d_e: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_e // n_heads
        self.qkv = nn.Linear(d_e, 3 * d_e, dtype=DTYPE)
        self.out = nn.Linear(d_e, d_e, dtype=DTYPE)
        self.norm1 = nn.LayerNorm(d_e, dtype=DTYPE)
        self.norm2 = nn.LayerNorm(d_e, dtype=DTYPE)
        self.ff1 = nn.Linear(d_e, d_e, dtype=DTYPE)
        self.ff2 = nn.Linear(d_e, d_e, dtype=DTYPE)

    def forward(self, x: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        B, T, d_e = x.shape
        qkv = self.qkv(x).reshape(B, T, 3, self.n_heads, self.head_dim)
        q, k, v = qkv.unbind(dim=2)  # each (B, T, H, hd)
        scores = torch.einsum("bihd,bjhd->bhij", q, k) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~allowed, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        mixed = torch.einsum("bhij,bjhd->bihd", attn, v).reshape(B, T, d_e)
        x = self.norm1(x + self.out(mixed))
        x = self.norm2(x + self.ff2(F.relu(self.ff1(x))))
        return x


class TransformerWaveFunction(nn.Module):
    """The family wave function psi(s | J) with amplitude and phase heads."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        width = config.d + config.n_param_channels
        self.embed = nn.Linear(width, config.d_e, dtype=DTYPE)
        self.coupling_positions = nn.Parameter(
            torch.zeros(config.n_param_channels + 1, config.d_e, dtype=DTYPE)
        )
        self.layers = nn.ModuleList(
            EncoderLayer(config.d_e, config.n_heads) for _ in range(config.n_layers)
        )
        self.amp_head = nn.Linear(config.d_e, config.d, dtype=DTYPE)
        self.phase_head = nn.Linear(config.d_e, config.d, dtype=DTYPE)
        self.register_buffer(
            "spin_positions",
            torch.from_numpy(sinusoidal_table(config.max_context, config.d_e)),
            persistent=False,
        )
        self._mask_cache: dict[tuple[int, int], torch.Tensor] = {}
        self._init_parameters(seed)

    # ---------------------------------------------------------------- setup

    def _init_parameters(self, seed: int):
        """Seeded init: linear layers uniform within +/- fan_in^(-1/2),
        learnable position slots normal(0, 0.02), layer norms identity."""
        rng = np.random.Generator(np.random.Philox(key=seed))
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    bound = 1.0 / math.sqrt(module.in_features)
                    module.weight.copy_(
                        torch.from_numpy(rng.uniform(-bound, bound, size=tuple(module.weight.shape)))
                    )
                    module.bias.copy_(
                        torch.from_numpy(rng.uniform(-bound, bound, size=tuple(module.bias.shape)))
                    )
                elif isinstance(module, nn.LayerNorm):
                    module.weight.fill_(1.0)
                    module.bias.fill_(0.0)
            self.coupling_positions.copy_(
                torch.from_numpy(rng.normal(0.0, 0.02, size=tuple(self.coupling_positions.shape)))
            )

    def parameter_store(self) -> ParameterStore:
        return ParameterStore.from_module(self)

    @property
    def d(self) -> int:
        return self.config.d

    # ------------------------------------------------------------- encoding

    def encode_inputs(self, J: CouplingVector, s_prefix=()) -> TokenSequence:
        """Token sequence for a coupling vector and a (possibly empty) spin prefix."""
        prefix = np.asarray(s_prefix, dtype=np.int64).reshape(-1)
        if prefix.size > J.n:
            raise ShapeError(f"prefix length {prefix.size} exceeds system size {J.n}")
        tokens = self._coupling_block(J, batch=1)[0]
        spin = np.zeros((prefix.size, tokens.shape[1]))
        if prefix.size:
            spin[np.arange(prefix.size), prefix] = 1.0
        return TokenSequence(
            tokens=np.concatenate([tokens, spin], axis=0),
            n_coupling=tokens.shape[0],
            spin_sites=np.arange(prefix.size),
        )

    def _coupling_block(self, J: CouplingVector, batch: int) -> np.ndarray:
        cfg = self.config
        n_params = len(J.params)
        if n_params + 2 != cfg.n_param_channels:
            raise ShapeError(
                f"coupling vector has {n_params} parameters but the model expects "
                f"{cfg.n_param_channels - 2}"
            )
        n_c = n_params + 1
        block = np.zeros((n_c, cfg.d + cfg.n_param_channels))
        for j, (_, value) in enumerate(J.params):
            block[j, cfg.d + j] = value
        block[n_c - 1, cfg.d + n_params] = math.log(J.n)
        block[n_c - 1, cfg.d + n_params + 1] = 1.0 if J.n % 2 == 0 else 0.0
        return np.broadcast_to(block, (batch,) + block.shape)

    def positional_encoding(self, kind: str, position: int) -> np.ndarray:
        """Positional vector lookup: sinusoidal for spin sites, learnable slots for couplings."""
        if kind == "sinusoidal":
            if not 0 <= position < self.config.max_context:
                raise ContextOverflowError(
                    f"site {position} outside precomputed context of {self.config.max_context}"
                )
            return self.spin_positions[position].numpy().copy()
        if kind == "learnable":
            if not 0 <= position < self.config.n_param_channels + 1:
                raise ContextOverflowError(f"learnable slot {position} out of range")
            return self.coupling_positions[position].detach().numpy().copy()
        raise ValueError(f"unknown positional encoding kind {kind!r}")

    # -------------------------------------------------------------- forward

    def _allowed_mask(self, T: int, n_c: int) -> torch.Tensor:
        key = (T, n_c)
        if key not in self._mask_cache:
            rows = torch.arange(T).unsqueeze(1)
            cols = torch.arange(T).unsqueeze(0)
            self._mask_cache[key] = ((cols < n_c) | (cols <= rows)).reshape(1, 1, T, T)
        return self._mask_cache[key]

    def _encode(self, tokens: torch.Tensor, n_c: int, spin_sites: torch.Tensor) -> torch.Tensor:
        B, T, _ = tokens.shape
        L = T - n_c
        if L > 0 and int(spin_sites.max()) >= self.config.max_context:
            raise ContextOverflowError(
                f"site {int(spin_sites.max())} outside precomputed context of {self.config.max_context}"
            )
        positions = self.coupling_positions[:n_c]
        if L > 0:
            positions = torch.cat([positions, self.spin_positions[spin_sites]], dim=0)
        x = self.embed(tokens) + positions.unsqueeze(0)
        allowed = self._allowed_mask(T, n_c)
        for index, layer in enumerate(self.layers):
            x = layer(x, allowed)
            if not torch.isfinite(x).all():
                raise NumericFailureError("non-finite activations", layer=index)
        return x

    def _outputs(self, J: CouplingVector, spins: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
        """Conditionals for a batch of equal-length prefixes.

        Returns (log_probs, phases), each (B, L+1, d): row t predicts spin
        t+1, with row 0 coming from the size token.
        """
        spins = np.asarray(spins, dtype=np.int64)
        if spins.ndim != 2:
            raise ShapeError(f"expected a (batch, length) spin array, got shape {spins.shape}")
        B, L = spins.shape
        block = self._coupling_block(J, batch=B)
        n_c = block.shape[1]
        cfg = self.config
        tokens = np.zeros((B, n_c + L, cfg.d + cfg.n_param_channels))
        tokens[:, :n_c, :] = block
        if L > 0:
            rows = np.arange(B)[:, None]
            cols = n_c + np.arange(L)[None, :]
            tokens[rows, cols, spins] = 1.0
        x = self._encode(
            torch.from_numpy(tokens), n_c, torch.arange(L, dtype=torch.int64)
        )
        x = x[:, n_c - 1 :, :]
        log_probs = torch.log_softmax(self.amp_head(x), dim=-1).clamp(min=LOG_PROB_FLOOR)
        phases = math.pi * F.softsign(self.phase_head(x))
        return log_probs, phases

    def forward(self, seq: TokenSequence) -> ModelOutput:
        """Run the encoder on an explicit token sequence (single instance)."""
        tokens = torch.from_numpy(np.asarray(seq.tokens, dtype=np.float64)).unsqueeze(0)
        with torch.no_grad():
            x = self._encode(
                tokens, seq.n_coupling, torch.from_numpy(np.asarray(seq.spin_sites, dtype=np.int64))
            )
            x = x[:, seq.n_coupling - 1 :, :]
            log_probs = torch.log_softmax(self.amp_head(x), dim=-1).clamp(min=LOG_PROB_FLOOR)
            phases = math.pi * F.softsign(self.phase_head(x))
        return ModelOutput(
            cond_log_probs=log_probs[0].numpy(), cond_phases=phases[0].numpy()
        )

    # ------------------------------------------------------- wave function

    def log_psi_t(self, configs, J: CouplingVector) -> tuple[torch.Tensor, torch.Tensor]:
        """Differentiable (log amplitude, phase) for complete configurations.

        log A = (1/2) sum_i log P(s_i | s_<i, J); the phase is the sum of the
        per-position phase outputs at the realized spins.
        """
        configs = np.asarray(configs, dtype=np.int64)
        if configs.ndim == 1:
            configs = configs[None, :]
        if configs.shape[1] != J.n:
            raise ShapeError(f"configurations have length {configs.shape[1]}, expected {J.n}")
        log_probs, phases = self._outputs(J, configs[:, :-1])
        picked = torch.from_numpy(configs).unsqueeze(-1)
        log_p = log_probs.gather(2, picked).squeeze(-1)
        phase = phases.gather(2, picked).squeeze(-1)
        return 0.5 * log_p.sum(dim=1), phase.sum(dim=1)

    def log_psi_batch(self, configs, J: CouplingVector) -> tuple[np.ndarray, np.ndarray]:
        with torch.no_grad():
            log_a, phase = self.log_psi_t(configs, J)
        return log_a.numpy(), phase.numpy()

    def log_psi(self, s, J: CouplingVector) -> tuple[float, float]:
        log_a, phase = self.log_psi_batch(np.asarray(s)[None, :], J)
        return float(log_a[0]), float(phase[0])

    def log_prob_batch(self, configs, J: CouplingVector) -> np.ndarray:
        """log P(s | J) = 2 log A(s, J), the measurement likelihood weight."""
        log_a, _ = self.log_psi_batch(configs, J)
        return 2.0 * log_a

    def conditionals_batch(self, prefixes, J: CouplingVector) -> tuple[np.ndarray, np.ndarray]:
        """Next-spin (log probabilities, phases) for a batch of equal-length prefixes."""
        prefixes = np.asarray(prefixes, dtype=np.int64)
        if prefixes.ndim != 2:
            raise ShapeError(f"expected (batch, length) prefixes, got shape {prefixes.shape}")
        if prefixes.shape[1] >= J.n:
            raise ShapeError("prefix must be shorter than the system size")
        with torch.no_grad():
            log_probs, phases = self._outputs(J, prefixes)
        return log_probs[:, -1, :].numpy(), phases[:, -1, :].numpy()

    def conditionals(self, prefix, J: CouplingVector) -> tuple[np.ndarray, np.ndarray]:
        """Distribution over the next spin and its phase candidates."""
        prefix = np.asarray(prefix, dtype=np.int64).reshape(1, -1)
        log_p, phase = self.conditionals_batch(prefix, J)
        return np.exp(log_p[0]), phase[0]

    # -------------------------------------------------------------- gradient

    def gradient(self, loss) -> dict[str, torch.Tensor]:
        """d loss / d theta for every parameter, by reverse-mode differentiation.

        ``loss`` is a scalar tensor built from this model's outputs, or a
        callable evaluated on the model to produce one.
        """
        if callable(loss):
            loss = loss(self)
        names, params = zip(*self.named_parameters())
        if not loss.requires_grad:
            # constant loss: zero gradient everywhere
            return {name: torch.zeros_like(p) for name, p in zip(names, params)}
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        out: dict[str, torch.Tensor] = {}
        for name, param, grad in zip(names, params, grads):
            value = torch.zeros_like(param) if grad is None else grad.detach()
            if not torch.isfinite(value).all():
                raise NumericFailureError(f"non-finite gradient for parameter {name!r}")
            out[name] = value
        return out
