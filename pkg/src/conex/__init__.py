"""Black-box configuration tuning with evolutionary MCMC search."""

__version__ = "0.1.0"
