"""Per-object depth priors, sparse iterative temporal stereo and BEV lift-splat."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
