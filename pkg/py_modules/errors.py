"""Error kinds shared across the pipeline.

The CLI maps them onto exit codes; library code only raises.
"""


class TriInvertError(Exception):
    exit_code = 1


class InvalidArgumentError(TriInvertError, ValueError):
    exit_code = 2


class DependencyError(TriInvertError):
    """A required artifact (checkpoint, dataset, depth prior) is missing."""

    exit_code = 3


class NoBackgroundError(TriInvertError):
    """Background mask was empty over every sampled render."""


def require(condition: bool, message: str) -> None:
    if not condition:
        raise InvalidArgumentError(message)
