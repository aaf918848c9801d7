"""Market-impact calibration toolkit."""

__version__ = "0.1.0"
