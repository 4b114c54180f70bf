"""Exception types shared across the pipeline.

Each carries a distinct CLI exit code so scripted runs can tell failures apart.
"""


class SemGraphError(Exception):
    exit_code = 1


class FormatError(SemGraphError):
    """Malformed input file (size, token count)."""

    exit_code = 5


class DataError(SemGraphError):
    """Well-formed file whose contents violate a data invariant."""

    exit_code = 5


class TaxonomyError(SemGraphError):
    exit_code = 5


class ConfigError(SemGraphError):
    exit_code = 3


class ContractViolation(SemGraphError):
    exit_code = 6


class ShapeError(SemGraphError, ValueError):
    exit_code = 6


class DegenerateWeightsError(SemGraphError):
    exit_code = 6


class DegenerateGeometryError(SemGraphError):
    exit_code = 6


class UnreliableGradientError(SemGraphError):
    exit_code = 6


class NonFiniteGradientError(SemGraphError, FloatingPointError):
    exit_code = 6

    def __init__(self, name):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


class NoPositiveLabelsError(SemGraphError):
    exit_code = 6


class TrainingError(SemGraphError):
    exit_code = 7


class UsageError(SemGraphError, ValueError):
    exit_code = 2


class MissingInputError(SemGraphError, FileNotFoundError):
    exit_code = 4
