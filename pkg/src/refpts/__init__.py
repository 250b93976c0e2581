"""Reference-point cooperative perception: alignment, association, fusion,
binary payload codec and a seeded multi-agent simulation harness."""

from refpts.geometry import Point3, Size3, TransformSE3, Velocity2
from refpts.core import AgentFrame, FusionConfig, MatchSet, ReferencePoint

__all__ = [
    "AgentFrame",
    "FusionConfig",
    "MatchSet",
    "Point3",
    "ReferencePoint",
    "Size3",
    "TransformSE3",
    "Velocity2",
]

__version__ = "0.1.0"
