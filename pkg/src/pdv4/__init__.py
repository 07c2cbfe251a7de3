"""Pricing and calibration toolkit for a 4-factor path-dependent volatility model.

The instantaneous volatility is an explicit function of four exponentially
weighted moving averages of past returns (trend) and past squared returns
(realized variance).  The package simulates the model, estimates the VIX by
nested Monte Carlo, trains a neural surrogate (parameters, factor state) -> VIX,
prices SPX/VIX futures and options, and jointly calibrates the model to SPX
and VIX smiles.
"""

__version__ = "0.1.0"

from .model import FactorState, ModelParams, ParamBounds

__all__ = ["ModelParams", "FactorState", "ParamBounds", "__version__"]
