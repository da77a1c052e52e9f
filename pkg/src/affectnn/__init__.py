"""affectnn: frame-level valence regression.

A from-scratch single-frame regression CNN, a frozen-CNN + windowed Elman
RNN, the RMSE/CC/CCC evaluation stack, and a CLI harness with a synthetic
dataset generator.
"""

from .backend import BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"
