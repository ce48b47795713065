"""Mean curvature flow and strong-stability certification on chart-based Riemannian manifolds."""

from . import ambient, barrier, flow, stability, submanifold
from .errors import LabError

__version__ = "0.1.0"

__all__ = ["ambient", "submanifold", "stability", "barrier", "flow", "LabError", "__version__"]
