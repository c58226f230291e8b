"""Day-ahead electricity price forecasting from merit-order curves."""

__version__ = "0.1.0"
