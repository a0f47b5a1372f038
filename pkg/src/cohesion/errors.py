"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures (blow-ups, divergence, NaNs during sampling) with 3.
"""


class CohesionError(Exception):
    pass


class ConfigError(CohesionError):
    pass


class NumericalError(CohesionError):
    pass


class SolverBlowUpError(NumericalError):
    """Integration produced non-finite values."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class TrainingDivergedError(NumericalError):
    """Training loss became non-finite."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class SamplingError(NumericalError):
    """Denoising produced non-finite values."""

    def __init__(self, message, step_index=None, k=None):
        super().__init__(message)
        self.step_index = step_index
        self.k = k
