"""A central location to define stmiss specific exceptions and avoid introducing
inter-module dependency issues."""

import typing


class StmissException(Exception):
    """Base exception for all stmiss exceptions."""

    pass


class InvalidArgumentError(StmissException, ValueError):
    """Raised when an argument is outside of its documented domain, such as a negative
    smoothing constant.
    """

    pass


class InvalidSpecError(StmissException):
    """Raised when a :class:`stmiss.VariableSpec` is malformed or does not match the
    data or tree it is used with.
    """

    pass


class InvalidTreeError(StmissException):
    """Raised when vertices and edges do not form a valid event tree."""

    pass


class NotStageableError(StmissException):
    """Raised when situations that must share a stage do not share their outgoing edge
    labels.
    """

    pass


class InvalidStagingError(StmissException):
    """Raised when a staging is not a valid partition of the situations of a tree."""

    pass


class InvalidProbabilitiesError(StmissException):
    """Raised when transition probabilities are negative, do not sum to one or do not
    match the labels of their stage.
    """

    pass


class UnestimatedModelError(StmissException):
    """Raised when an operation needs transition probabilities but the model has none."""

    pass


class EmptyDataError(StmissException):
    """Raised when a data set has no rows."""

    pass


class DataParseError(StmissException):
    """Raised when a cell can not be parsed against the variable specification.

    Attributes:
        row: The zero based data row index, not counting the header.
        column: The name of the offending column.
    """

    def __init__(self, message: str, row: int, column: str):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingValuesError(StmissException):
    """Raised when an operation defined on complete data receives missing values.  Use
    the EM routines or a pseudo-likelihood instead.
    """

    pass


class InconsistentSampleError(StmissException):
    """Raised when the observed values of a sample match no root-to-leaf path."""

    pass


class DegenerateSupportError(StmissException):
    """Raised when every possible path of some sample has zero probability.

    Attributes:
        group: The index of the first group with zero mass.
    """

    def __init__(self, message: str, group: int):
        super().__init__(message)
        self.group = group


class SearchError(StmissException):
    """Raised when a model search can not be carried out as configured."""

    pass


class AmputationError(StmissException):
    """Raised when missingness can not be injected as requested."""

    pass


class ModelSchemaError(StmissException):
    """Raised when a model JSON document does not follow the schema.

    Attributes:
        field: A dotted path to the offending field.
    """

    def __init__(self, message: str, field: typing.Optional[str] = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class PlanError(StmissException):
    """Raised when a benchmark plan is malformed."""

    pass
