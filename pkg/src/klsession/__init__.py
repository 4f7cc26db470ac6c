"""Short-term session interest detection and interest-aware top-N re-ranking.

Properties whose in-session value distribution diverges (KL, nats) from the
global distribution beyond a length-calibrated null quantile are treated as
the user's current interest; a base recommender's scores are then rescaled by
the session/global likelihood ratio of those properties.
"""
from .catalog import Catalog, GlobalModel, PropertySchema, fit_global_model, load_catalog, property_value, save_catalog
from .detection import InterestReport, ThresholdTable, calibrate_thresholds, detect_interest, session_divergence
from .distributions import Categorical, empirical_value_distribution, kl_divergence, smoothed_session_estimate
from .errors import ConfigError, DataError
from .evaluation import dcg_at, evaluate, hit_at, leave_last_out
from .rerank import RankedList, Scorer, base_recommend, base_weights, interest_coefficient, recommend
from .sessions import Event, Session, load_events, split_sessions
from .simulator import PlantedInterest, synth_catalog, synth_session

__all__ = [
    "Catalog",
    "Categorical",
    "ConfigError",
    "DataError",
    "Event",
    "GlobalModel",
    "InterestReport",
    "PlantedInterest",
    "PropertySchema",
    "RankedList",
    "Scorer",
    "Session",
    "ThresholdTable",
    "base_recommend",
    "base_weights",
    "calibrate_thresholds",
    "dcg_at",
    "detect_interest",
    "empirical_value_distribution",
    "evaluate",
    "fit_global_model",
    "hit_at",
    "interest_coefficient",
    "kl_divergence",
    "leave_last_out",
    "load_catalog",
    "load_events",
    "property_value",
    "recommend",
    "save_catalog",
    "session_divergence",
    "smoothed_session_estimate",
    "split_sessions",
    "synth_catalog",
    "synth_session",
]
