"""Regularized Riemannian optimization of quantum channels in Kraus form."""

from .quantum import (
    ChannelError,
    KrausStack,
    Povm,
    apply_channel,
    choi_fidelity,
    choi_purity,
    choi_spectrum,
    choi_state,
    outcome_probabilities,
    pauli_input_states,
    pauli_povm,
    sample_random_channel,
    sample_unitary_init,
)
from .regularizers import RegularizerKind, combine, r_choi, r_hs, r_l1
from .stiefel import CostFunction, OptimizerConfig, TrainingTrace, cayley_step, grad_check, optimize

__version__ = "0.1.0"
