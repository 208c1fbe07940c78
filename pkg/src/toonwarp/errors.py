"""Exception hierarchy. Every error carries a machine-readable `code` that the
CLI prints as `error: <code>: <detail>`."""


class ToonWarpError(Exception):
    code = "error"


class InvalidDimensionError(ToonWarpError):
    code = "invalid-dimension"


class InvalidArgumentError(ToonWarpError):
    code = "invalid-argument"


class FormatError(ToonWarpError):
    """Corrupt or mismatched ATF1 field file / model checkpoint."""

    code = "format-error"


class DatasetError(ToonWarpError):
    code = "dataset-error"


class NumericFailureError(ToonWarpError):
    code = "numeric-failure"

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration
