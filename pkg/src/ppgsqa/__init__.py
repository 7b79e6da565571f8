"""PPG signal-quality assessment with a lightweight residual/SE network."""

__version__ = "0.1.0"
