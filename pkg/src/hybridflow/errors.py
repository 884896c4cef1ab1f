"""Exception types shared across the package."""


class HybridflowError(Exception):
    pass


class ConfigurationError(HybridflowError):
    """Bad or inconsistent run configuration (CLI exit code 2)."""


class GeometryError(HybridflowError):
    """Degenerate or self-intersecting geometry."""


class OutOfDomainError(GeometryError):
    """Query point outside a grid hull or mesh."""


class SolverError(HybridflowError):
    """Linear or nonlinear solve failed (CLI exit code 3)."""


class CouplingError(HybridflowError):
    """Inter-solver bookkeeping cannot be satisfied (e.g. circulation with
    nowhere to go)."""


class BlowupError(SolverError):
    """Field values became non-finite; the time step is unstable."""


class PhaseError(HybridflowError):
    """A hybrid coupling step failed; carries the phase that broke."""

    def __init__(self, phase, cause):
        super().__init__(f"hybrid step failed in phase '{phase}': {cause}")
        self.phase = phase
        self.cause = cause
