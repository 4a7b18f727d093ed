"""Exception taxonomy shared across the package."""

from __future__ import annotations


class AnonnetError(Exception):
    """Base class for all package errors."""


class ValidationError(AnonnetError):
    """Structurally malformed input: broken port maps, non-unitary matrices,
    non-bijective basis maps, bad parameters."""


class DomainError(AnonnetError):
    """Input is well-formed but outside the operation's domain
    (e.g. diameter of a graph that is not strongly connected)."""


class CapacityError(AnonnetError):
    """A configured enumeration / branch cap would be exceeded."""


class FixtureLookupError(AnonnetError):
    """Unknown fixture name."""


class ConstructionError(AnonnetError):
    """A numeric construction failed its mandatory post-verification."""


class NonTerminationError(AnonnetError):
    """A party exceeded the round budget; signals a protocol bug."""


class PreconditionError(AnonnetError):
    """A stated operation precondition does not hold (e.g. entangled
    residual across a bipartition in a fidelity check)."""
