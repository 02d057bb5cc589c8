"""Variational energy minimization over a family of Hamiltonians.

Each iteration samples one (n, J) from the family prior, draws a unique-string
batch from the wave function, and follows the baseline-subtracted estimator

    dE/dtheta = 2 Re < (E_loc(s) - <E_loc>) d log psi*(s) / dtheta >,

with the gradient scaled by min(1 / |<E_loc>|, scale_cap) so every family
member contributes at a comparable magnitude.  Updates use Adam with a warmup
plus inverse-power learning-rate schedule:

    pretrain:  lr(i) = 5 d_e^-0.5 min(i^-0.75, i * warmup^-1.75)
    finetune:  lr(i) = 5 d_e^-0.5 (i + offset)^-0.75
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import Checkpoint, save_checkpoint
from .exceptions import BatchRejectedError, ContextOverflowError, NumericFailureError
from .hamiltonian import (
    CouplingVector,
    HamiltonianFamily,
    PauliHamiltonian,
    all_configs,
    local_energies,
    sample_couplings,
)
from .model import ModelConfig, TransformerWaveFunction
from .sampler import SamplerConfig, UniqueBatch
from .symmetry import draw_batch, wrap_model

logger = logging.getLogger(__name__)

_MAX_RETRIES = 5
# stream tags for deriving independent per-step seeds from the global seed
_TAG_COUPLING = 1
_TAG_SAMPLER = 2


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    sampler: SamplerConfig
    seed: int = 0
    mode: str = "pretrain"
    i_warmup: int = 4000
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8
    scale_cap: float = 5.0
    finetune_offset: int = 100_000
    energy_shift: float = 0.0
    grad_clip_norm: float | None = None
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.scale_cap <= 0:
            raise ValueError(f"scale_cap must be > 0, got {self.scale_cap}")
        if self.mode not in ("pretrain", "finetune"):
            raise ValueError(f"mode must be pretrain or finetune, got {self.mode!r}")


@dataclass
class TrainState:
    """Optimizer state: step counter, Adam moments, running energy history."""

    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    energy_ema: float | None = None
    imag_warnings: int = 0

    @classmethod
    def fresh(cls, model) -> "TrainState":
        m = {name: torch.zeros_like(p) for name, p in model.named_parameters()}
        v = {name: torch.zeros_like(p) for name, p in model.named_parameters()}
        return cls(step=0, m=m, v=v)


def learning_rate(
    step: int,
    d_e: int,
    mode: str = "pretrain",
    i_warmup: int = 4000,
    finetune_offset: int = 100_000,
) -> float:
    if step < 1:
        raise ValueError(f"learning rate is defined for step >= 1, got {step}")
    base = 5.0 * d_e**-0.5
    if mode == "pretrain":
        return base * min(step**-0.75, step * i_warmup**-1.75)
    if mode == "finetune":
        return base * (step + finetune_offset) ** -0.75
    raise ValueError(f"unknown schedule mode {mode!r}")


def _derived_seed(seed: int, tag: int, step: int, retry: int = 0) -> int:
    return int(np.random.SeedSequence((seed, tag, step, retry)).generate_state(1, np.uint64)[0])


def _model_gradient(model, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    names, params = zip(*model.named_parameters())
    if not loss.requires_grad:
        return {name: torch.zeros_like(p) for name, p in zip(names, params)}
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    out = {}
    for name, param, grad in zip(names, params, grads):
        value = torch.zeros_like(param) if grad is None else grad.detach()
        if not torch.isfinite(value).all():
            raise NumericFailureError(f"non-finite gradient for parameter {name!r}")
        out[name] = value
    return out


def _surrogate_gradient(model, J: CouplingVector, configs, weights, eloc, baseline: bool):
    """Gradient of the surrogate 2 Re sum_k w_k (E_loc,k - Ebar) log psi*(s_k).

    E_loc values and weights enter as constants; only log psi is
    differentiated.  With log psi* = log A - i phi the real part is
    Re(dE) log A + Im(dE) phi, which reproduces the analytic d<E>/dtheta
    under exact enumeration weights.
    """
    ebar = complex(np.sum(weights * eloc))
    coef = eloc - ebar if baseline else eloc
    log_a, phase = model.log_psi_t(configs, J)
    w_t = torch.from_numpy(np.asarray(weights, dtype=np.float64))
    re = torch.from_numpy(np.ascontiguousarray(coef.real))
    im = torch.from_numpy(np.ascontiguousarray(coef.imag))
    loss = 2.0 * (w_t * (re * log_a + im * phase)).sum()
    return _model_gradient(model, loss), ebar


def energy_gradient(
    model, H: PauliHamiltonian, batch: UniqueBatch, baseline: bool = True
) -> tuple[dict[str, torch.Tensor], complex]:
    """Sampled estimate of the energy gradient and the batch energy Ebar.

    Degenerate samples (amplitude underflow) are skipped with a warning and
    the remaining weights renormalized; a fully degenerate batch raises
    BatchRejectedError so the caller can retry with a fresh seed.
    """
    eloc, valid = local_energies(H, batch.configs, lambda c: model.log_psi_batch(c, batch.J))
    if not valid.any():
        raise BatchRejectedError("every sample in the batch had amplitude underflow")
    if not valid.all():
        logger.warning("skipping %d degenerate samples", int((~valid).sum()))
    weights = batch.weights[valid]
    weights = weights / weights.sum()
    return _surrogate_gradient(model, batch.J, batch.configs[valid], weights, eloc[valid], baseline)


def full_enumeration_gradient(
    model, H: PauliHamiltonian, J: CouplingVector, baseline: bool = True
) -> tuple[dict[str, torch.Tensor], complex]:
    """Exact-expectation gradient with weights P(s | J) over all 2^n configurations."""
    configs = all_configs(J.n)
    probs = np.exp(model.log_prob_batch(configs, J))
    keep = probs > 0
    configs, probs = configs[keep], probs[keep]
    probs = probs / probs.sum()
    eloc, valid = local_energies(H, configs, lambda c: model.log_psi_batch(c, J))
    if not valid.all():
        raise BatchRejectedError("enumeration hit amplitude underflow")
    return _surrogate_gradient(model, J, configs, probs, eloc, baseline)


def variational_energy(model, H: PauliHamiltonian, batch: UniqueBatch) -> complex:
    """Batch estimate of <E_loc> under the sampled weights."""
    eloc, valid = local_energies(H, batch.configs, lambda c: model.log_psi_batch(c, batch.J))
    if not valid.any():
        raise BatchRejectedError("every sample in the batch had amplitude underflow")
    weights = batch.weights[valid]
    weights = weights / weights.sum()
    return complex(np.sum(weights * eloc[valid]))


def _base_config(model) -> ModelConfig:
    inner = model
    while not isinstance(inner, TransformerWaveFunction):
        inner = inner.base
    return inner.config


def energy_scale(ebar: complex, energy_shift: float, scale_cap: float) -> float:
    """min(1 / |Re Ebar + shift|, scale_cap), the per-family gradient weight."""
    denom = abs(ebar.real + energy_shift)
    if denom == 0.0:
        return scale_cap
    return min(1.0 / denom, scale_cap)


def _adam_update(model, state: TrainState, grads: dict[str, torch.Tensor], lr: float, cfg: TrainConfig):
    t = state.step
    with torch.no_grad():
        for name, param in model.named_parameters():
            g = grads[name]
            state.m[name].mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
            state.v[name].mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
            m_hat = state.m[name] / (1.0 - cfg.beta1**t)
            v_hat = state.v[name] / (1.0 - cfg.beta2**t)
            param.sub_(lr * m_hat / (v_hat.sqrt() + cfg.adam_eps))


def train_step(model, family: HamiltonianFamily, state: TrainState, cfg: TrainConfig) -> dict:
    """One optimization iteration; returns the log row for this step."""
    step = state.step + 1
    started = time.perf_counter()
    for retry in range(_MAX_RETRIES):
        rng = np.random.Generator(
            np.random.Philox(key=_derived_seed(cfg.seed, _TAG_COUPLING, step, retry))
        )
        J = sample_couplings(family, rng)
        H = family.build(J)
        sampler_cfg = dataclasses.replace(
            cfg.sampler, seed=_derived_seed(cfg.seed, _TAG_SAMPLER, step, retry)
        )
        batch = draw_batch(model, J, sampler_cfg)
        try:
            grads, ebar = energy_gradient(model, H, batch)
            break
        except BatchRejectedError:
            logger.warning("batch rejected at step %d (retry %d)", step, retry + 1)
    else:
        raise BatchRejectedError(f"step {step}: batch rejected {_MAX_RETRIES} times")

    if abs(ebar.imag) > 1e-2 * abs(ebar.real):
        state.imag_warnings += 1
        # expected while the phase structure is still random; rate-limited
        if state.imag_warnings <= 3 or step % 1000 == 0:
            logger.warning(
                "step %d: imaginary batch energy %.3e vs real %.3e (occurrence %d)",
                step,
                ebar.imag,
                ebar.real,
                state.imag_warnings,
            )
    scale = energy_scale(ebar, cfg.energy_shift, cfg.scale_cap)
    for g in grads.values():
        g.mul_(scale)
    if cfg.grad_clip_norm is not None:
        total = float(torch.sqrt(sum((g**2).sum() for g in grads.values())))
        if total > cfg.grad_clip_norm:
            factor = cfg.grad_clip_norm / total
            for g in grads.values():
                g.mul_(factor)

    state.step = step
    d_e = _base_config(model).d_e
    lr = learning_rate(step, d_e, cfg.mode, cfg.i_warmup, cfg.finetune_offset)
    _adam_update(model, state, grads, lr, cfg)
    model.parameter_store().assert_finite()

    energy = float(ebar.real)
    state.energy_ema = energy if state.energy_ema is None else 0.99 * state.energy_ema + 0.01 * energy
    row = {"step": step, "n": J.n}
    row.update(J.as_dict())
    row.update(
        {
            "energy": energy,
            "scale": scale,
            "lr": lr,
            "seconds": time.perf_counter() - started,
        }
    )
    return row


def make_checkpoint(
    model,
    family: HamiltonianFamily,
    symmetries,
    state: TrainState,
    seeds: dict | None = None,
) -> Checkpoint:
    store = model.parameter_store()
    arrays = store.arrays()
    for name, tensor in state.m.items():
        arrays[f"adam.m/{name}"] = tensor.numpy().astype(np.float64, copy=True)
    for name, tensor in state.v.items():
        arrays[f"adam.v/{name}"] = tensor.numpy().astype(np.float64, copy=True)
    header = {
        "model": _base_config(model).as_dict(),
        "family": family.describe(),
        "symmetries": list(symmetries),
        "train": {"step": state.step, "energy_ema": state.energy_ema},
        "seeds": dict(seeds or {}),
    }
    return Checkpoint(header=header, arrays=arrays)


def restore_model(ck: Checkpoint):
    """Rebuild (wrapped model, family, base network) from a checkpoint."""
    base = TransformerWaveFunction(ModelConfig(**ck.header["model"]), seed=0)
    base.parameter_store().load(ck.parameter_arrays())
    family = HamiltonianFamily.from_description(ck.header["family"])
    model = wrap_model(base, ck.header.get("symmetries", ()))
    return model, family, base


def restore_state(ck: Checkpoint, model) -> TrainState:
    state = TrainState.fresh(model)
    state.step = int(ck.header.get("train", {}).get("step", 0))
    ema = ck.header.get("train", {}).get("energy_ema")
    state.energy_ema = None if ema is None else float(ema)
    m = ck.moment_arrays("m")
    v = ck.moment_arrays("v")
    if m:
        for name in state.m:
            state.m[name] = torch.from_numpy(m[name].copy())
            state.v[name] = torch.from_numpy(v[name].copy())
    return state


def pretrain(
    model,
    family: HamiltonianFamily,
    cfg: TrainConfig,
    *,
    symmetries=(),
    state: TrainState | None = None,
    out_path=None,
    log=None,
    seeds: dict | None = None,
) -> Checkpoint:
    """Run the training loop to cfg.iterations, checkpointing periodically.

    Passing a partially advanced ``state`` resumes mid-run; the per-step seed
    derivation makes the continued trajectory identical to an uninterrupted
    one.
    """
    if state is None:
        state = TrainState.fresh(model)
    while state.step < cfg.iterations:
        row = train_step(model, family, state, cfg)
        if log is not None:
            log(row)
        if (
            out_path is not None
            and cfg.checkpoint_interval
            and state.step % cfg.checkpoint_interval == 0
            and state.step < cfg.iterations
        ):
            save_checkpoint(out_path, make_checkpoint(model, family, symmetries, state, seeds))
    ck = make_checkpoint(model, family, symmetries, state, seeds)
    if out_path is not None:
        save_checkpoint(out_path, ck)
    return ck


def point_family(family: HamiltonianFamily, J_star: CouplingVector) -> HamiltonianFamily:
    """Degenerate family pinned at a single (n, J)."""
    return HamiltonianFamily(
        name=family.name,
        prior={name: (value, value) for name, value in J_star.params},
        sizes=(J_star.n,),
        fixed=family.fixed,
    )


def fine_tune(
    ck: Checkpoint,
    J_star: CouplingVector,
    iterations: int,
    *,
    seed: int = 0,
    sampler: SamplerConfig | None = None,
    out_path=None,
    log=None,
) -> Checkpoint:
    """Continue training restricted to a single (n*, J*) with the finetune schedule.

    The step counter restarts at 1 with the schedule offset baked in, and the
    Adam moments start fresh.
    """
    model, family, base = restore_model(ck)
    n_c = len(J_star.params) + 1
    if J_star.n + n_c - 1 > base.config.max_context:
        raise ContextOverflowError(
            f"n={J_star.n} does not fit the model context of {base.config.max_context}"
        )
    target = point_family(family, J_star)
    if sampler is None:
        sampler = SamplerConfig(n_batch=10**6, n_unique=100, seed=0)
    cfg = TrainConfig(iterations=iterations, sampler=sampler, seed=seed, mode="finetune")
    state = TrainState.fresh(model)
    result = pretrain(
        model,
        target,
        cfg,
        symmetries=ck.header.get("symmetries", ()),
        state=state,
        out_path=out_path,
        log=log,
        seeds={"global": seed, "parent": ck.header.get("seeds", {})},
    )
    # keep the original family description so downstream scans know the trained ranges
    result.header["family"] = ck.header["family"]
    result.header["finetuned_at"] = {"n": J_star.n, **J_star.as_dict()}
    if out_path is not None:
        save_checkpoint(out_path, result)
    return result
