"""Exception types shared across the pipeline."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument violates a documented precondition."""


class TotalReflection(Exception):
    """The refracted tangential component exceeds unit norm; no transmitted ray."""


class SolverDiverged(RuntimeError):
    """A surface update produced non-finite heights (step size too large)."""


class RingTooSmall(RuntimeError):
    """The sampling ring near the critical normal has fewer pixels than required."""


class InsufficientMatches(RuntimeError):
    """Block matching produced too few reliable correspondences."""


class DegenerateGeometry(RuntimeError):
    """Triangulation normal matrix is singular or near-singular."""


class BehindCamera(DomainError):
    """A ray direction does not proceed toward the scene (z component <= 0)."""


class EmptyOutput(RuntimeError):
    """An image-producing operation has no valid pixels to emit."""
