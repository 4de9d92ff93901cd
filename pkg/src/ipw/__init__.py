"""Intelligence-per-watt profiling harness and local/cloud routing simulator."""

__version__ = "0.1.0"
