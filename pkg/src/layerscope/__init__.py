"""Layer-aware software composition analysis for container images."""

__version__ = "0.1.0"
