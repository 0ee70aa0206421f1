"""Graph transformer volatility forecasting from limit-order-book data."""

from .errors import ConfigError, DataError, GtnvfError, NumericalError
from .features import FEATURE_NAMES, N_FEATURES, aggregate, encode_bucket, encode_buckets
from .graph import Graph, NodeGrid, build_graph, union_dedup
from .lob import Bucket, build_buckets, bucketize, log_return, realized_volatility, sample_quotes, sample_trades
from .model import GtnConfig, GtnModel, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Bucket",
    "ConfigError",
    "DataError",
    "FEATURE_NAMES",
    "Graph",
    "GtnConfig",
    "GtnModel",
    "GtnvfError",
    "N_FEATURES",
    "NodeGrid",
    "NumericalError",
    "aggregate",
    "bucketize",
    "build_buckets",
    "build_graph",
    "encode_bucket",
    "encode_buckets",
    "load_checkpoint",
    "log_return",
    "realized_volatility",
    "sample_quotes",
    "sample_trades",
    "save_checkpoint",
    "train",
    "union_dedup",
]
