"""Estimating group bias in human decisions from a small gold-standard pool."""

from .datamodel import DatasetSchema, DecisionSet, GoldStandardSet, Instance
from .mdba import BiasEstimate, MdbaConfig, estimate_bias

__all__ = [
    "BiasEstimate",
    "DatasetSchema",
    "DecisionSet",
    "GoldStandardSet",
    "Instance",
    "MdbaConfig",
    "estimate_bias",
]
__version__ = "0.1.0"
