"""Federated synthetic gene-expression data with input and output privacy.

Three non-colluding servers compute quantile binning, contingency
tables, and calibrated noise over replicated secret shares of the
holders' cohorts; only differentially private tables are ever revealed,
and the release server samples synthetic records from them.
"""

__version__ = "0.1.0"

from .data import CohortTable, ingest, make_demo_cohort, split_holders, write_csv
from .errors import (IngestionError, ParameterError, ProtocolError, SgsynthError,
                     TransportError)
from .generator import DPParams, StarModel, calibrate, estimate_model, inverse_bin, sample
from .metrics import MetricsReport, detpr, dcr_mean, evaluate_pair, tstr, wasserstein_mean
from .pipeline import RunConfig, RunResult, load_config, run_end_to_end
from .primitives import Engine
from .protocols import ReleasedTables, execute_sdg
from .ring import FixedPointCodec, Ring, RingValue
from .sharing import (ReplicatedShare, SharedVector, ZeroShareSource,
                      reconstruct_value, reconstruct_vector, share_value, share_vector)
from .transport import LocalMesh, connect_tcp_links, run_three_party_local

__all__ = [
    "__version__",
    "CohortTable", "ingest", "make_demo_cohort", "split_holders", "write_csv",
    "SgsynthError", "ParameterError", "IngestionError", "ProtocolError", "TransportError",
    "DPParams", "StarModel", "calibrate", "estimate_model", "sample", "inverse_bin",
    "MetricsReport", "tstr", "wasserstein_mean", "detpr", "dcr_mean", "evaluate_pair",
    "RunConfig", "RunResult", "load_config", "run_end_to_end",
    "Engine", "ReleasedTables", "execute_sdg",
    "FixedPointCodec", "Ring", "RingValue",
    "ReplicatedShare", "SharedVector", "ZeroShareSource",
    "share_value", "reconstruct_value", "share_vector", "reconstruct_vector",
    "LocalMesh", "connect_tcp_links", "run_three_party_local",
]
