"""Canonical distortion measures: closed forms, Monte-Carlo estimation, learned
approximations and quantization under them."""

from .distortion import DistortionMeasure, eval_distortion
from .environment import Environment
from .errors import NumericalError

__all__ = ["DistortionMeasure", "Environment", "NumericalError", "eval_distortion"]
__version__ = "0.1.0"
