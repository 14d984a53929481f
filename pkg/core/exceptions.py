from typing import Optional, Sequence


class FusionError(Exception):
    """Base exception for estimation and fusion errors"""
    pass


class NumericError(FusionError):
    """Exception raised for non-finite values or overflow"""
    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(message)


class SingularMatrixError(NumericError):
    """A linear system stayed singular after the ridge fallback"""
    pass


class IllConditionedError(NumericError):
    """An eigenvalue fell below the relative threshold of an inverse square root"""
    def __init__(self, message: str, eigenvalue: float):
        self.eigenvalue = eigenvalue
        super().__init__(message)


class SchemaError(FusionError):
    """Exception raised for missing columns, bad shapes, or malformed input files"""
    def __init__(self, message: str, column: Optional[str] = None, line: Optional[int] = None):
        self.column = column
        self.line = line
        super().__init__(message)


class ConfigError(FusionError):
    """Exception raised for an invalid run configuration"""
    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(message)


class NonConvergenceError(FusionError):
    """The Z-solver did not reach tolerance; carries the best iterate"""
    def __init__(self, message: str, best_params: Optional[Sequence[float]] = None,
                 final_norm: Optional[float] = None, iterations: int = 0):
        self.best_params = best_params
        self.final_norm = final_norm
        self.iterations = iterations
        super().__init__(message)


class DegenerateTransformError(FusionError):
    """A ratio transformation was evaluated at a near-zero denominator"""
    pass


class InsufficientDataError(FusionError):
    """A data split has too few rows to fit its model"""
    pass


class BootstrapDegenerateError(FusionError):
    """Too many bootstrap replicates failed"""
    def __init__(self, message: str, n_failed: int = 0, replicates: int = 0):
        self.n_failed = n_failed
        self.replicates = replicates
        super().__init__(message)


class ScenarioDegenerateError(FusionError):
    """Too many Monte Carlo replicates failed"""
    def __init__(self, message: str, n_failed: int = 0, replicates: int = 0):
        self.n_failed = n_failed
        self.replicates = replicates
        super().__init__(message)
