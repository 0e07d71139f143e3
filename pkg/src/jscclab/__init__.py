"""Low-latency joint speech enhancement and analog transmission over AWGN."""

__version__ = "0.1.0"
