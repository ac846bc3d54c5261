"""Branch-and-cut laboratory: learnable scoring policies, structure probes and complexity bounds."""

__version__ = "0.1.0"
