"""Exception types shared across the package."""


class RegistrationError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateDepth(RegistrationError):
    """A point lies on or behind the camera plane for the candidate pose."""


class SingularCovariance(RegistrationError):
    """A covariance matrix is not invertible within conditioning tolerance."""


class NoFeasiblePose(RegistrationError):
    """Every candidate pose on the search grid was infeasible."""


class InsufficientCorrespondences(RegistrationError):
    """Fewer than three distinct model points were matched."""


class RankDeficient(RegistrationError):
    """Cross-covariance rank too low for a unique pose fit."""


class InputShape(RegistrationError):
    """Point-set sizes violate the registration preconditions."""


class DegenerateScene(RegistrationError):
    """Scene generation could not place all points in front of the camera."""


class ConfigError(RegistrationError):
    """Invalid or unknown configuration fields."""
