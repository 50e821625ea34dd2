"""splatforge: deterministic panorama + LiDAR to 3DGS initialization pipeline."""

from splatforge._kernels import active_backend, available_backends

__version__ = "0.1.0"

__all__ = ["__version__", "active_backend", "available_backends"]
