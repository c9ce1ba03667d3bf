"""k-contraction analysis of Lurie and networked systems via compound matrices."""

__version__ = "0.1.0"

from .compound import (
    MultiIndex,
    add_compound,
    multi_index_enumerate,
    mult_compound,
    parallelotope_volume,
    rank_of,
    unrank,
)
from .errors import DimensionCapError, IntegrationError, KContractError
from .lurie import (
    Certificate,
    LurieSystem,
    NonlinearityDescriptor,
    certify_lurie,
    certify_with_gain,
    gain_condition_check,
    k_ari_check,
    lemma1_gap,
    recertify,
    scalar_p_search,
)
from .measures import mu2, mu2_scaled, top_k_eig_sum
from .network import (
    ActivationDescriptor,
    NetworkedSystem,
    alpha_k,
    hopfield_thresholds,
    net_k_contraction_check,
    opinion_check,
    power_2bus_check,
)
from .sim import (
    SimConfig,
    Trajectory,
    convergence_sweep,
    find_equilibria,
    integrate,
    volume_decay_audit,
)

__all__ = [
    "ActivationDescriptor",
    "Certificate",
    "DimensionCapError",
    "IntegrationError",
    "KContractError",
    "LurieSystem",
    "MultiIndex",
    "NetworkedSystem",
    "NonlinearityDescriptor",
    "SimConfig",
    "Trajectory",
    "add_compound",
    "alpha_k",
    "certify_lurie",
    "certify_with_gain",
    "convergence_sweep",
    "find_equilibria",
    "gain_condition_check",
    "hopfield_thresholds",
    "integrate",
    "k_ari_check",
    "lemma1_gap",
    "mu2",
    "mu2_scaled",
    "multi_index_enumerate",
    "mult_compound",
    "net_k_contraction_check",
    "opinion_check",
    "parallelotope_volume",
    "power_2bus_check",
    "rank_of",
    "recertify",
    "scalar_p_search",
    "top_k_eig_sum",
    "unrank",
    "volume_decay_audit",
]
