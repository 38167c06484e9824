"""Exception types shared across the toolkit.

The CLI maps these onto its exit codes: ConfigError -> 2, DataError -> 3,
DivergenceError -> 4.
"""


class HandsfreeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(HandsfreeError):
    """Invalid configuration value or inconsistent parameter combination."""


class DataError(HandsfreeError):
    """Malformed, missing or numerically unusable input data."""


class DivergenceError(HandsfreeError):
    """An iterative algorithm produced non-finite state.

    Carries the step/frame index at which divergence was detected.
    """

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} (at index {index})")
        self.index = index


class WeightFormatError(DataError):
    """Weight container file is structurally invalid."""
