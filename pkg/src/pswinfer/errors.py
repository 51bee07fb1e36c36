"""Exception hierarchy.

Every library error derives from :class:`PSWError` so callers (and the CLI)
can catch one base class and map it to an exit code.
"""

from __future__ import annotations


class PSWError(Exception):
    """Base class for all pswinfer errors."""

    exit_code = 1


# data
class DataError(PSWError):
    exit_code = 3


class UnreadableData(DataError):
    pass


class MissingColumn(DataError):
    pass


class UnknownColumn(DataError):
    pass


class NonBinaryOutcome(DataError):
    pass


class NonBinaryTreatment(DataError):
    pass


class UnparseableCell(DataError):
    def __init__(self, row: int, col: str, value: str = ""):
        self.row = row
        self.col = col
        self.value = value
        super().__init__(f"cannot parse cell at row {row}, column {col!r}: {value!r}")


class EmptyDataset(DataError):
    pass


class TooManyLevels(DataError):
    pass


# model fitting
class FitError(PSWError):
    exit_code = 4


class QuasiSeparation(FitError):
    pass


class SingularInformation(FitError):
    pass


class NoVariation(FitError):
    pass


class DimensionMismatch(FitError):
    pass


# estimation
class EstimationError(PSWError):
    exit_code = 5


class DegeneratePropensity(EstimationError):
    pass


class EmptyArm(EstimationError):
    pass


class SingularBread(EstimationError):
    pass


class JacobianNonFinite(EstimationError):
    pass


class InvalidMethod(EstimationError):
    pass


# resampling / intervals
class BootstrapError(PSWError):
    exit_code = 6


class ExcessiveFailures(BootstrapError):
    pass


class TooFewReplicates(BootstrapError):
    pass


class NegativeSE(PSWError):
    exit_code = 6


class DegenerateJackknife(BootstrapError):
    pass


# simulation
class SimulationError(PSWError):
    exit_code = 7


class BracketFailure(SimulationError):
    pass


class StratumExhausted(SimulationError):
    pass


class InvalidGrid(SimulationError):
    pass


class TooFewReps(SimulationError):
    pass


class ExcessiveRepFailures(SimulationError):
    pass


class ConfigError(PSWError):
    exit_code = 2

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


# Replicate-level failures that bootstrap and harness drop and tally.
RECOVERABLE_FIT_ERRORS = (QuasiSeparation, SingularInformation, NoVariation, EmptyArm,
                          DegeneratePropensity)
