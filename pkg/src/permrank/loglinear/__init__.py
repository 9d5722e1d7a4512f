from .learning import LoglinHyper, cd_train, local_log_laws, pl_train, pseudo_likelihood, pseudo_likelihood_gradient
from .mcmc import (
    ChainState,
    acceptance_probability,
    metropolis_step,
    mixed_proposal,
    propose_relocate,
    propose_swap,
    run_chain,
    start_chain,
    sublist_proposal,
)
from .models import (
    PairwiseModel,
    PositionalModel,
    Relocate,
    SublistPerm,
    Swap,
    apply_move,
    build_pairwise_params,
    delta_energy,
    energy,
    inverse_move,
)
from .predict import insertion_energies, predict_insert, predict_order, rank_unseen

__all__ = [
    "ChainState", "LoglinHyper", "PairwiseModel", "PositionalModel", "Relocate", "SublistPerm", "Swap",
    "acceptance_probability", "apply_move", "build_pairwise_params", "cd_train", "delta_energy", "energy",
    "insertion_energies", "inverse_move", "local_log_laws", "metropolis_step", "mixed_proposal", "pl_train",
    "predict_insert", "predict_order", "propose_relocate", "propose_swap", "pseudo_likelihood",
    "pseudo_likelihood_gradient", "rank_unseen", "run_chain", "start_chain", "sublist_proposal",
]
