"""Prebuilt integrated models assembled from the modules and the bus."""
from .mlda_words import MldaWordsResult, fit_mlda_words
from .proto import (ProtoAgent, ProtoAgentError, ProtoConfig, ProtoReport, build_proto_agent,
                    oracle_return, run_proto_agent)
from .spco import (NavigationResult, SpcoConfig, SpcoError, SpcoLiteModel, cell_goal_distribution,
                   fit_spco_lite, place_posterior, spconavi_lite)

__all__ = [
    "MldaWordsResult", "fit_mlda_words", "ProtoAgent", "ProtoAgentError", "ProtoConfig", "ProtoReport",
    "build_proto_agent", "oracle_return", "run_proto_agent", "NavigationResult", "SpcoConfig",
    "SpcoError", "SpcoLiteModel", "cell_goal_distribution", "fit_spco_lite", "place_posterior",
    "spconavi_lite",
]
