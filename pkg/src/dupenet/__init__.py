"""Diverse-misinformation spreading with peer correction on two-class networks."""

__version__ = "0.1.0"

from .ensemble import (
    ClassDegreeDistribution,
    ExplicitNetwork,
    NetworkConfig,
    build_ensemble,
    degree_marginal,
    mean_excess_degree,
    sample_network,
)
from .meanfield import (
    DupedField,
    MeanFieldTrajectory,
    MixingState,
    SolverConfig,
    StrainParams,
    derivative,
    duped_fraction,
    find_invasion_threshold,
    find_invasion_threshold_auto,
    integrate,
    mixing_probabilities,
    seed_initial,
)
from .multistrain import (
    JointStrainField,
    MatchingProfile,
    ProfileCurve,
    StrainPair,
    joint_state,
    matching_profile,
    neighborhood_profile,
)
from .abm import (
    AbmResult,
    AbmRun,
    compare_to_meanfield,
    ensemble_average,
    run_event_driven,
    run_replicates,
)
from .biasstats import (
    ConfusionMatrix,
    CredibilityResult,
    ResponseRecord,
    accuracy,
    aggregate,
    bootstrap_credibility,
    load_records,
    mcc,
    partition_homophily,
)
from .experiments import (
    SweepSpec,
    TrendReport,
    gamma_sweep,
    herd_correction_sweep,
    reproduce_fig4,
)

__all__ = [
    "AbmResult",
    "AbmRun",
    "ClassDegreeDistribution",
    "ConfusionMatrix",
    "CredibilityResult",
    "DupedField",
    "ExplicitNetwork",
    "JointStrainField",
    "MatchingProfile",
    "MeanFieldTrajectory",
    "MixingState",
    "NetworkConfig",
    "ProfileCurve",
    "ResponseRecord",
    "SolverConfig",
    "StrainPair",
    "StrainParams",
    "SweepSpec",
    "TrendReport",
    "accuracy",
    "aggregate",
    "bootstrap_credibility",
    "build_ensemble",
    "compare_to_meanfield",
    "degree_marginal",
    "derivative",
    "duped_fraction",
    "ensemble_average",
    "find_invasion_threshold",
    "find_invasion_threshold_auto",
    "gamma_sweep",
    "herd_correction_sweep",
    "integrate",
    "joint_state",
    "load_records",
    "matching_profile",
    "mcc",
    "mean_excess_degree",
    "mixing_probabilities",
    "neighborhood_profile",
    "partition_homophily",
    "reproduce_fig4",
    "run_event_driven",
    "run_replicates",
    "sample_network",
    "seed_initial",
    "__version__",
]
