"""Exception types shared across the package."""


class CCLiftError(Exception):
    """Base class for all errors raised by cclift."""


class RankDeficient(CCLiftError):
    """A matrix expected to have full row rank does not.

    For a Jacobian this means the map is not a submersion at the point.
    """

    def __init__(self, sigma_min, message=None):
        self.sigma_min = float(sigma_min)
        super().__init__(message or f"matrix is rank deficient (sigma_min={self.sigma_min:.3e})")


class DimensionMismatch(CCLiftError):
    pass


class WordTooLong(CCLiftError):
    pass


class BlowUp(CCLiftError):
    """Integration escaped to infinity (or the step size underflowed) at ``t``."""

    def __init__(self, t, reason="norm"):
        self.t = float(t)
        self.reason = reason
        super().__init__(f"solution blew up at t={self.t:.6g} ({reason})")


class StepBudgetExceeded(CCLiftError):
    def __init__(self, t, steps):
        self.t = float(t)
        self.steps = int(steps)
        super().__init__(f"step budget of {steps} exhausted at t={t:.6g}")


class LeftDomain(CCLiftError):
    def __init__(self, t):
        self.t = float(t)
        super().__init__(f"lifted path left the domain ball at t={self.t:.6g}")


class NotInCertifiedBall(CCLiftError):
    def __init__(self, distance, radius):
        self.distance = float(distance)
        self.radius = float(radius)
        super().__init__(
            f"target at distance {self.distance:.6g} is outside the certified ball of radius {self.radius:.6g}"
        )


class NotInRange(CCLiftError):
    pass


class RankZero(CCLiftError):
    pass


class UnknownSystem(CCLiftError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class SpecFileError(CCLiftError, ValueError):
    pass
