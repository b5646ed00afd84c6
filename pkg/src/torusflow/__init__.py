"""Numerical laboratory for flows on the torus and their rotation sets."""

from .errors import (
    ConsistencyError,
    DomainError,
    GeometryError,
    IntegrationError,
    InvalidInputError,
    PositivityError,
    ResolutionError,
    SignError,
    SmoothnessError,
    TorusFlowError,
)
from .torus import classify_commensurability, convex_hull, torus_distance, wrap

__version__ = "0.1.0"

__all__ = [
    "ConsistencyError",
    "DomainError",
    "GeometryError",
    "IntegrationError",
    "InvalidInputError",
    "PositivityError",
    "ResolutionError",
    "SignError",
    "SmoothnessError",
    "TorusFlowError",
    "classify_commensurability",
    "convex_hull",
    "torus_distance",
    "wrap",
]
