"""Universal key sets for attention via leverage scores and Lewis weights."""
from levattn._backend import BACKEND
from levattn.distributed import Shard, distributed_universal_set
from levattn.features import FeatureMap
from levattn.linalg import Factorization, khatri_rao_rows
from levattn.oracle import dense_attention
from levattn.planted import generate_query, generate_separated, generate_stochastic, recover_relevant_keys
from levattn.sensitivities import (
    leverage_scores,
    lewis_weights,
    online_leverage_scores,
    sensitivity_oracle,
    sensitivity_upper_bounds,
)
from levattn.streaming import one_pass_universal_set, two_pass_universal_set
from levattn.universal_set import (
    UniversalSet,
    build_universal_set,
    coverage_check,
    preprocess_query_engine,
    query_heavy_attentions,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Factorization",
    "FeatureMap",
    "Shard",
    "UniversalSet",
    "build_universal_set",
    "coverage_check",
    "dense_attention",
    "distributed_universal_set",
    "generate_query",
    "generate_separated",
    "generate_stochastic",
    "khatri_rao_rows",
    "leverage_scores",
    "lewis_weights",
    "one_pass_universal_set",
    "online_leverage_scores",
    "preprocess_query_engine",
    "query_heavy_attentions",
    "recover_relevant_keys",
    "sensitivity_oracle",
    "sensitivity_upper_bounds",
    "two_pass_universal_set",
]
