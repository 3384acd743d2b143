"""Desk-scale monaural speech enhancement with global-local dependency attention."""

__version__ = "0.1.0"

from .tensor import Tensor, ContractError, DimensionError, NumericError

__all__ = ["Tensor", "ContractError", "DimensionError", "NumericError", "__version__"]
