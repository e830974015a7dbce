"""Exception taxonomy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, IntegrationError -> 3,
tolerance failures -> 1 (no exception; the command reports and exits).
"""


class ConfigError(ValueError):
    """Invalid configuration: bad schedule parameters, unknown preset, etc."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation (e.g. t not in (0,1))."""


class ShapeError(ValueError):
    """Mismatched array dimensions between inputs."""


class ContractError(RuntimeError):
    """A required precomputation is missing (e.g. density tracking was off)."""


class EstimatorError(ValueError):
    """Estimator cannot be applied to these inputs (e.g. histogram TV with d > 3)."""


class IntegrationError(RuntimeError):
    """Numerical failure during ODE integration."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index
