"""Daily price forecasting with from-scratch recurrent networks.

Subpackages cover the full research loop: CSV loading and gap filling,
technical and volatility features, GARCH(1,1) estimation, LSTM-family
networks with a hand-written backward pass, and a walk-forward backtest.
"""

__version__ = "0.1.0"
