"""Exception types shared across the package."""


class FrmabError(Exception):
    """Base class for all package-specific failures."""


class NonPositiveState(FrmabError):
    """Quadratic-drift propagation requires a strictly positive state."""


class StateBoundViolation(FrmabError):
    """A trajectory left the open state box (0, H) beyond tolerance."""


class InfeasibleControl(FrmabError):
    """Control vector is non-binary or exceeds the effort budget."""


class NoConvergence(FrmabError):
    """Shooting iteration failed to meet the terminal tolerance."""


class SingularJacobian(FrmabError):
    """Quasi-Newton Jacobian surrogate became non-finite."""


class TooManyFailures(FrmabError):
    """More than the tolerated fraction of instance solves failed."""


class DegenerateData(FrmabError):
    """Training data cannot support a classifier (identical rows, conflicting labels)."""


class MalformedModel(FrmabError):
    """A policy-tree file violates the model schema."""


class DimensionMismatch(FrmabError):
    """Feature vector length does not match the model's feature names."""


class EmptyDataset(FrmabError):
    """An operation received a dataset with no samples."""
