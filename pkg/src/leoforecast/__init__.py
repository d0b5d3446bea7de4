"""Self-similar traffic generation, long-memory forecasting and a sparse-attention forecaster."""

__version__ = "0.1.0"
