"""
Exception hierarchy of the valuation engine.

Management commands map ``ConfigError`` to exit code 2 and
``NumericalError`` to exit code 3.
"""


class ValuationError(Exception):
    """Root of every engine error."""


# datasets

class DatasetError(ValuationError):
    pass


class EmptyCoalition(DatasetError):
    def __init__(self, message="coalition has no members"):
        super().__init__(message)


class MissingOwner(DatasetError):
    def __init__(self, owner):
        self.owner = owner
        super().__init__(f"no dataset for owner {owner}")


class ParseError(DatasetError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class HeterogeneousSchema(DatasetError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownClass(DatasetError):
    pass


class MissingClass(DatasetError):
    pass


# transport

class TransportError(ValuationError):
    pass


class EmptyDistribution(TransportError):
    def __init__(self, message="empirical distribution has no points"):
        super().__init__(message)


class CacheMiss(TransportError):
    def __init__(self, coalition):
        self.coalition = coalition
        super().__init__(f"coalition {coalition} was never projected")


class DimensionMismatch(TransportError):
    pass


class MissingEmbedding(TransportError):
    def __init__(self, message="classification data needs a label embedding"):
        super().__init__(message)


class RegressionUnsupported(TransportError):
    def __init__(self, message="OTDD needs classification labels"):
        super().__init__(message)


class ProblemTooLarge(TransportError):
    pass


# kernel

class KernelError(ValuationError):
    pass


class NonSquare(KernelError):
    pass


# numerical failures

class NumericalError(ValuationError):
    pass


class FactorizationFailure(NumericalError):
    pass


class PosteriorInconsistency(NumericalError):
    pass


class DegenerateSchur(NumericalError):
    def __init__(self, schur):
        self.schur = schur
        super().__init__(f"Schur complement {schur:.3e} is not positive")


# gp

class GPError(ValuationError):
    pass


class EmptyGrid(GPError):
    def __init__(self, message="hyperparameter grid has no candidates"):
        super().__init__(message)


# semivalue

class SemivalueError(ValuationError):
    pass


class TooManyOwners(SemivalueError):
    pass


class DuplicateCoalition(SemivalueError):
    def __init__(self, coalition):
        self.coalition = coalition
        super().__init__(f"coalition {coalition} listed twice")


class AlignmentError(SemivalueError):
    pass


class MissingPrefix(SemivalueError):
    def __init__(self, coalition):
        self.coalition = coalition
        super().__init__(f"prefix coalition {coalition} is not in the ledger")


class WeightNormalizationError(SemivalueError):
    pass


class InvalidBudget(SemivalueError):
    pass


# active selection

class ActiveError(ValuationError):
    pass


class BudgetExceedsPool(ActiveError):
    def __init__(self, budget, pool):
        self.budget = budget
        self.pool = pool
        super().__init__(f"budget {budget} exceeds candidate pool of {pool}")


# utility

class UtilityError(ValuationError):
    pass


class ConstantTarget(UtilityError):
    def __init__(self, message="R2 is undefined for a constant target"):
        super().__init__(message)


class UtilityTableMiss(UtilityError):
    def __init__(self, coalition):
        self.coalition = coalition
        super().__init__(f"utility table has no entry for {coalition}")


class TaskMismatch(UtilityError):
    pass


# configuration / pipeline

class ConfigError(ValuationError):
    pass


class OwnerMismatch(ConfigError):
    pass


class PipelineError(ValuationError):
    """Any engine error, tagged with the pipeline stage it came from."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
