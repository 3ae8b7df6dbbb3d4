"""Exception classes shared across the package."""


class QmmNetError(Exception):
    """Base class for all package errors."""


class UnknownElement(QmmNetError):
    """Atomic number has no entry in the basis or parameter tables."""


class LinearDependence(QmmNetError):
    """Overlap matrix is numerically singular (pathological geometry)."""


class ScfNotConverged(QmmNetError):
    """SCF hit the iteration cap without meeting the density tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UnsupportedEnvironment(QmmNetError):
    """Environment settings (e.g. dielectric != 1) that we refuse to fake."""


class InsufficientOrbitals(QmmNetError):
    """More electrons of one spin than basis functions can hold."""


class InvalidRotation(QmmNetError):
    """Matrix is not a proper rotation (det != +1 or not orthogonal)."""


class SelectionRuleViolation(QmmNetError):
    """Requested angular momentum coupling outside the triangle inequality."""


class LayoutMismatch(QmmNetError):
    """Two objects disagree on atomic-orbital indexing."""


class UnknownChargeState(QmmNetError):
    """No trained charge shift for the requested total charge."""


class DegenerateAttention(QmmNetError):
    """Global attention normalization denominator is not positive."""


class MissingLowLevel(QmmNetError):
    """Delta-label requested but the low-level SCF result is absent."""


class SingularDesign(QmmNetError):
    """Element-count design matrix is rank deficient."""


class NonFiniteGradient(QmmNetError):
    """A gradient tensor contains NaN or Inf; the optimizer step is aborted."""

    def __init__(self, message, tensor_name=None):
        super().__init__(message)
        self.tensor_name = tensor_name


class UnregisteredAdjoint(QmmNetError):
    """A recorded operation has no backward rule."""


class ParseError(QmmNetError):
    """Malformed input file."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class InvariantViolation(QmmNetError):
    """Parsed data violates a MolecularSystem invariant."""


class InsufficientData(QmmNetError):
    """Requested dataset split cannot be satisfied."""


class ChecksumMismatch(QmmNetError):
    """Checkpoint and feature files were built from different basis tables."""
