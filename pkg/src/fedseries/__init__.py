"""Federated Time2Vec transformer forecasting for daily stock returns."""

__version__ = "0.1.0"
