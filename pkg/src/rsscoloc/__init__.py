"""Bayesian cooperative localization from RSS with an unknown path loss exponent.

Particle beliefs for positions, a grid belief for the path loss exponent, and
BP / SPAWN message passing with either an importance sampler or the auxiliary
importance sampler for the position belief update.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DomainError, FormatError  # noqa: E402
from .rss_model import (  # noqa: E402
    ChannelParams,
    Measurement,
    MeasurementSet,
    NetworkGeometry,
    Node,
    Position,
    log_likelihood,
    neighbor_sets,
    normalizer_z,
    rss_mean,
    synthesize_measurements,
)
from .belief_store import (  # noqa: E402
    AliasTable,
    AlphaGridBelief,
    AlphaMessage,
    ParticleBelief,
    PositionMessage,
    Priors,
    Rectangle,
    evaluate_position_message,
    init_beliefs,
    resample_systematic,
    sample_categorical,
)
from .msgpass import EngineConfig, RunResult, run  # noqa: E402
from .estimator import alpha_point_estimate, compute_metrics, kde_mode  # noqa: E402

__all__ = [
    "ConfigError",
    "DomainError",
    "FormatError",
    "ChannelParams",
    "Measurement",
    "MeasurementSet",
    "NetworkGeometry",
    "Node",
    "Position",
    "log_likelihood",
    "neighbor_sets",
    "normalizer_z",
    "rss_mean",
    "synthesize_measurements",
    "AliasTable",
    "AlphaGridBelief",
    "AlphaMessage",
    "ParticleBelief",
    "PositionMessage",
    "Priors",
    "Rectangle",
    "evaluate_position_message",
    "init_beliefs",
    "resample_systematic",
    "sample_categorical",
    "EngineConfig",
    "RunResult",
    "run",
    "alpha_point_estimate",
    "compute_metrics",
    "kde_mode",
]
