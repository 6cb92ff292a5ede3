"""Exception types raised across the package."""


class ScanError(Exception):
    """Base class for all package errors."""


class Unreachable(ScanError, ValueError):
    def __init__(self, leg_index, message=None):
        self.leg_index = leg_index
        super().__init__(message or f"pose outside workspace: leg {leg_index} cannot close")


class NoConvergence(ScanError, RuntimeError):
    pass


class LengthMismatch(ScanError, ValueError):
    pass


class EmptyInput(ScanError, ValueError):
    pass


class ZeroNorm(ScanError, ValueError):
    pass


class TooFewPoints(ScanError, ValueError):
    pass


class NoCluster(ScanError, ValueError):
    pass


class DegenerateNeighborhood(ScanError, ValueError):
    pass


class EmptyCloud(ScanError, ValueError):
    pass


class DegenerateContacts(ScanError, ValueError):
    pass


class OutOfRange(ScanError, ValueError):
    pass


class UnknownMaterial(ScanError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class PlanSceneMismatch(ScanError, ValueError):
    pass


class NoOverlap(ScanError, ValueError):
    pass


class ConfigError(ScanError, ValueError):
    """Raised with every validation problem found, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
