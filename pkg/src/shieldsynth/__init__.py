"""Shield synthesis for stochastic linear systems with linear controller families."""

__version__ = "0.1.0"
