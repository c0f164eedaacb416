"""Graph convolution directly on the Lorentz model of hyperbolic space.

Subpackages:
  geometry   hyperbolic kernel (Lorentz / Klein / Poincare, Einstein midpoint)
  autodiff   reverse-mode tape over the op set the model uses
  model      manifold-preserving layer stack, decoders, Euclidean baseline
  optimizer  Riemannian SGD on the Stiefel manifold + Euclidean updates
  graphdata  loaders, synthetic generators, splits, negative sampling
  runner     training loops, metrics, checkpoints, configs
"""

from . import autodiff, geometry, graphdata, model, optimizer, runner
from .errors import (
    ConfigError,
    ContractViolation,
    DimensionError,
    DomainError,
    ParseError,
    TapeStateError,
    UnsupportedOpError,
)

__version__ = "0.1.0"

__all__ = [
    "autodiff", "geometry", "graphdata", "model", "optimizer", "runner",
    "ConfigError", "ContractViolation", "DimensionError", "DomainError",
    "ParseError", "TapeStateError", "UnsupportedOpError", "__version__",
]
