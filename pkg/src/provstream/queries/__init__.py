"""Built-in vertex-centric queries."""

from .dtw import dtw
from .lps import DEFAULT_RELEVANT, DEFAULT_SINKS, LossPreventionQuery, LpsConfig, NodeSelector
from .ordercheck import OrderAssertQuery
from .pathq import PathQuery, PathQueryResult, PathQuerySpec, PropertyPredicate
from .sign import (
    HashChainEntry,
    HashChainQuery,
    VerifyReport,
    canonical_node_bytes,
    chain_digest,
    read_entries,
    verify_chain,
    write_entries,
)
from .structid import FeatureCsvWriter, FeatureVector, InDegreeSequenceList, StructuralIdentityQuery

__all__ = [
    "dtw",
    "DEFAULT_RELEVANT", "DEFAULT_SINKS", "LossPreventionQuery", "LpsConfig",
    "NodeSelector",
    "OrderAssertQuery",
    "PathQuery", "PathQueryResult", "PathQuerySpec", "PropertyPredicate",
    "HashChainEntry", "HashChainQuery", "VerifyReport", "canonical_node_bytes",
    "chain_digest", "read_entries", "verify_chain", "write_entries",
    "FeatureCsvWriter", "FeatureVector", "InDegreeSequenceList",
    "StructuralIdentityQuery",
]
