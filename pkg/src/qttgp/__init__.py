"""Gross-Pitaevskii dynamics on quantics tensor trains."""

from .quantics import QuanticsGrid
from .tt import TensorTrain, TensorTrainOperator, TruncationPolicy

__all__ = ["QuanticsGrid", "TensorTrain", "TensorTrainOperator", "TruncationPolicy"]
