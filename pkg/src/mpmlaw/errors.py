"""Exception types shared across the package."""


class MpmlawError(Exception):
    """Base class for all package errors."""


class SingularMatrix(MpmlawError):
    """Matrix inverse requested below the determinant safety threshold."""


class InvalidDeformation(MpmlawError):
    """Deformation gradient outside the admissible range of a material model."""


class SimulationDiverged(MpmlawError):
    """Simulation state became non-finite or left the domain.

    Carries the step index at which divergence was detected.
    """

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(f"simulation diverged at step {step}" + (f": {message}" if message else ""))


class GradientDiverged(MpmlawError):
    """Backward sweep produced a non-finite gradient."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(f"gradient diverged at step {step}" + (f": {message}" if message else ""))


class ShapeMismatch(MpmlawError):
    """Operands with incompatible particle or frame counts."""
