"""Error taxonomy shared by all modules.

Every exception carries the logical module name, the operation that failed,
and a details mapping, so the CLI can surface machine-readable error objects.
"""
from __future__ import annotations

from typing import Any


class SturmkitError(Exception):
    """Base class for all toolkit errors."""

    def __init__(self, module: str, operation: str, message: str, **details: Any):
        self.module = module
        self.operation = operation
        self.message = message
        self.details = details
        super().__init__(f"{module}.{operation}: {message}")

    def to_dict(self) -> dict:
        return {
            "error": type(self).__name__,
            "module": self.module,
            "operation": self.operation,
            "message": self.message,
            "details": {k: repr(v) for k, v in self.details.items()},
        }


class DomainBoxError(SturmkitError):
    """Evaluation requested outside the declared working box."""


class VariantError(SturmkitError):
    """Operation requires a different nonlinearity variant."""


class HyperbolicityError(SturmkitError):
    """A degenerate equilibrium, resonant center, or tangential period root."""


class StructuralError(SturmkitError):
    """Equilibrium alternation, counts, or region structure violated."""


class DegeneracyError(SturmkitError):
    """Saddle potential values tie in a way that makes nesting ambiguous."""


class TracingError(SturmkitError):
    """Separatrix integration failed to close or to escape."""


class RegionMembershipError(SturmkitError):
    """A label or point does not belong to the claimed cyclicity region."""


class NearSeparatrixError(SturmkitError):
    """Orbit too close to a homoclinic boundary for the requested operation."""


class ResolutionError(SturmkitError):
    """Grid refinement exhausted without convergence."""


class NormalHyperbolicityError(SturmkitError):
    """A frozen wave has extra near-zero eigenvalues."""


class DataError(SturmkitError):
    """Inconsistent critical-element data (e.g. wave index out of range)."""


class ConstructionError(SturmkitError):
    """A composite object (scale map, filler, family) cannot be built."""


class RealizationRefusedError(SturmkitError):
    """Hamiltonian realization refused because condition (C) fails."""


class ConvergenceError(SturmkitError):
    """Residual-driven iteration stalled; details carry the residual report."""


class SignatureParseError(SturmkitError):
    """Ill-formed signature text; details carry the offending position."""


class SignatureMismatchError(SturmkitError):
    """Collective homotopy refused: endpoint lap signatures differ."""


class StageError(SturmkitError):
    """A homotopy stage lost a hyperbolicity margin at some tau."""


class UnresolvedEventError(SturmkitError):
    """Two bifurcation events inside one bracket at finest resolution."""


class DissipativityError(SturmkitError):
    """A trajectory left the dissipativity box."""


class AmbiguousZeroError(SturmkitError):
    """Sign-change counting hit a zero plateau wider than two grid cells."""


class AuditError(SturmkitError):
    """A monotonicity or no-return audit failed; never accepted silently."""


class UsageError(SturmkitError):
    """Bad CLI arguments or configuration."""
