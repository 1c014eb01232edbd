"""lightmesh: deterministic simulator for agent-based on-demand optical circuits."""

from .topology import SPT_BACKEND

__version__ = "0.1.0"
__all__ = ["SPT_BACKEND", "__version__"]
