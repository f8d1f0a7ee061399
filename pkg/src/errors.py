"""Exception hierarchy for the FBSDE lab"""


class LabError(Exception):
    """Base class for every error raised by the lab"""


class DimensionMismatchError(LabError, ValueError):
    """Two objects disagree on a dimension"""


class NotExactlyComputableError(LabError, ValueError):
    """Requested quantity has no exact algorithm for this configuration"""


class OutOfHorizonError(LabError, ValueError):
    """Time argument outside [0, T]"""


class MissingBoundError(LabError, ValueError):
    """A declared bound needed for thinning is absent"""


class MajorantViolationError(LabError, RuntimeError):
    """An evaluated intensity exceeded its declared majorant"""

    def __init__(self, time: float, intensity: float, bound: float):
        self.time = time
        self.intensity = intensity
        self.bound = bound
        super().__init__(
            f"Intensity {intensity:.6g} exceeds majorant {bound:.6g} at t={time:.6g}"
        )


class NonMonotoneCompensatorError(LabError, ValueError):
    """Compensator decreased between two event times"""


class RegressionError(LabError, RuntimeError):
    """Least-squares regression cannot be assembled"""


class CoefficientError(LabError, RuntimeError):
    """Coefficient evaluation produced NaN or overflow"""

    def __init__(self, name: str, step: int, time: float):
        self.name = name
        self.step = step
        self.time = time
        super().__init__(f"Non-finite value from coefficient '{name}' at step {step} (t={time:.6g})")


class RiccatiBlowUpError(LabError, RuntimeError):
    """Riccati solution left the well-posed window"""


class StepUnderflowError(LabError, RuntimeError):
    """Continuation step fell below the configured minimum"""


class PicardDivergenceError(LabError, RuntimeError):
    """Picard iteration diverged where it must converge"""


class DegenerateJumpError(LabError, ValueError):
    """Zero intensity met where 1/lambda is required"""


class NoiseMismatchError(LabError, ValueError):
    """Processes were not driven by the same realized noise"""


class ConfigError(LabError, ValueError):
    """Run configuration failed validation"""


class ArtifactMissingError(LabError, FileNotFoundError):
    """A file needed for replay is missing"""


class NormSandwichError(LabError, RuntimeError):
    """Weighted norm left the interval implied by the plain norm"""
