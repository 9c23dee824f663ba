"""Exception hierarchy and process exit codes shared across the package."""


class PhaseTadError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(PhaseTadError):
    """Invalid configuration value or inconsistent option combination."""

    exit_code = 2


class DataError(PhaseTadError):
    """Malformed or missing data: feature files, manifests, descriptions."""

    exit_code = 3


class FeatureFormatError(DataError):
    """Feature file violates the binary container format."""


class DescriptionParseError(PhaseTadError):
    """LLM response does not match the expected phase-tagged answer shape."""

    def __init__(self, message: str, raw_response: str):
        super().__init__(message)
        self.raw_response = raw_response


class ProviderError(PhaseTadError):
    """The LLM backend failed (network, auth, quota, ...)."""


class DivergenceError(PhaseTadError):
    """Training produced a non-finite loss or activations."""

    exit_code = 4

    def __init__(self, message: str, epoch: int | None = None, step: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class NumericError(PhaseTadError):
    """Non-finite values appeared during a forward pass."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer
