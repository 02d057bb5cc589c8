"""Transformer wave functions for families of 1D spin chains."""

__version__ = "0.1.0"

from .hamiltonian import (
    CouplingVector,
    HamiltonianFamily,
    PauliHamiltonian,
    PauliTerm,
    build_tfi,
    build_xyz,
    connected_configs,
    local_energy,
    sample_couplings,
    tfi_family,
    xyz_family,
)
from .model import ModelConfig, ModelOutput, ParameterStore, TokenSequence, TransformerWaveFunction
from .oracle import ExactState, ed_ground_state, ff_tfi_energy, generate_measurements
from .sampler import SamplerConfig, UniqueBatch, expectation, sample_unique
from .symmetry import (
    SymmetrizedModel,
    SymmetryGroup,
    U1MaskedModel,
    canonical_rep,
    orbit,
    sample_symmetric,
    symmetrized_log_psi,
    u1_mask,
    wrap_model,
)
from .trainer import TrainConfig, TrainState, energy_gradient, fine_tune, learning_rate, pretrain, train_step

__all__ = [
    "CouplingVector",
    "HamiltonianFamily",
    "PauliHamiltonian",
    "PauliTerm",
    "build_tfi",
    "build_xyz",
    "connected_configs",
    "local_energy",
    "sample_couplings",
    "tfi_family",
    "xyz_family",
    "ModelConfig",
    "ModelOutput",
    "ParameterStore",
    "TokenSequence",
    "TransformerWaveFunction",
    "ExactState",
    "ed_ground_state",
    "ff_tfi_energy",
    "generate_measurements",
    "SamplerConfig",
    "UniqueBatch",
    "expectation",
    "sample_unique",
    "SymmetrizedModel",
    "SymmetryGroup",
    "U1MaskedModel",
    "canonical_rep",
    "orbit",
    "sample_symmetric",
    "symmetrized_log_psi",
    "u1_mask",
    "wrap_model",
    "TrainConfig",
    "TrainState",
    "energy_gradient",
    "fine_tune",
    "learning_rate",
    "pretrain",
    "train_step",
]
