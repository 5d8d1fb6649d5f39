"""Exception types shared across the package."""


class DomainError(ValueError):
    """An evaluation point lies outside the parametric domain."""


class TopologyError(ValueError):
    """Patch gluing or entity identification is inconsistent."""


class ValidationError(ValueError):
    """A geometric consistency check failed."""


class AssemblyError(RuntimeError):
    """Quadrature-level failure, e.g. a singular Jacobian."""


class SingularSystemError(RuntimeError):
    """A reduced system that should be regular turned out singular."""
