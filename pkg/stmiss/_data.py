"""Categorical data sets with missing values, possible paths and count tables."""
import enum
import json
import logging
import os
import typing

import attr
import numpy
import pandas

import stmiss
from stmiss._trees import EventTree, StagedTreeModel, VariableSpec


logger = logging.getLogger(__name__)


class MissingType(enum.Enum):
    """The type of the :data:`MISSING` marker."""

    MISSING = "MISSING"

    def __repr__(self) -> str:
        return "MISSING"


MISSING = MissingType.MISSING
"""Marks an unobserved value in a :class:`Sample`."""

Value = typing.Union[str, MissingType]

DEFAULT_NA_TOKEN = "NA"


@attr.s(auto_attribs=True, frozen=True, slots=True)
class Sample:
    """One row of categorical values, some of which may be :data:`MISSING`.

    Attributes:
        values: A label or :data:`MISSING` per variable.
    """

    values: typing.Tuple[Value, ...] = attr.ib(converter=tuple)

    @property
    def missing_mask(self) -> typing.Tuple[bool, ...]:
        """True where the value is missing."""
        return tuple(value is MISSING for value in self.values)

    @property
    def is_complete(self) -> bool:
        return not any(self.missing_mask)


@attr.s(auto_attribs=True, frozen=True, slots=True)
class Origin:
    """Where a data set was read from.

    Attributes:
        path: The source file.
        na_token: The token that marked missing cells.
    """

    path: str
    na_token: str = DEFAULT_NA_TOKEN


def _frozen_codes(codes: typing.Any) -> numpy.ndarray:
    array = numpy.array(codes, dtype=numpy.int64)
    if array.ndim != 2:
        raise stmiss.InvalidSpecError("Data codes must be a two dimensional array.")
    array.setflags(write=False)
    return array


@attr.s(auto_attribs=True, frozen=True, slots=True, eq=False)
class DataSet:
    """Rows of categorical values conforming to a :class:`stmiss.VariableSpec`.

    Values are held as level indices with ``-1`` for missing so counting and amputation
    can work on whole columns.

    Attributes:
        spec: The variables and their levels.
        codes: An ``(n_rows, n_variables)`` array of level indices, ``-1`` if missing.
        origin: Where the rows were read from, if from a file.
    """

    spec: VariableSpec
    codes: numpy.ndarray = attr.ib(converter=_frozen_codes)
    origin: typing.Optional[Origin] = None

    def __attrs_post_init__(self) -> None:
        if self.codes.shape[1] != len(self.spec.names):
            raise stmiss.InvalidSpecError(
                f"Rows have {self.codes.shape[1]} values but the spec has"
                + f" {len(self.spec.names)} variables."
            )
        for column, cardinality in enumerate(self.spec.cardinalities):
            values = self.codes[:, column]
            bad = numpy.flatnonzero((values < -1) | (values >= cardinality))
            if len(bad) > 0:
                raise stmiss.DataParseError(
                    f"Row {bad[0]} has an unknown level code {values[bad[0]]} for"
                    + f" column {self.spec.names[column]!r}",
                    row=int(bad[0]),
                    column=self.spec.names[column],
                )

    @classmethod
    def from_rows(
        cls,
        spec: VariableSpec,
        rows: typing.Iterable[typing.Union[Sample, typing.Sequence[typing.Optional[Value]]]],
    ) -> "DataSet":
        """Build a data set from samples or sequences of labels.  :py:obj:`None` and
        :data:`MISSING` both mark a missing value.
        """
        codes = []
        for index, row in enumerate(rows):
            values = row.values if isinstance(row, Sample) else tuple(row)
            if len(values) != len(spec.names):
                raise stmiss.DataParseError(
                    f"Row {index} has {len(values)} values, expected {len(spec.names)}",
                    row=index,
                    column="",
                )
            row_codes = []
            for column, value in enumerate(values):
                if value is None or value is MISSING:
                    row_codes.append(-1)
                    continue
                try:
                    row_codes.append(spec.level_index(column, typing.cast(str, value)))
                except ValueError:
                    name = spec.names[column]
                    raise stmiss.DataParseError(
                        f"Row {index}, column {name!r}: {value!r} is not one of"
                        + f" {list(spec.levels[column])}",
                        row=index,
                        column=name,
                    ) from None
            codes.append(row_codes)
        return cls(spec=spec, codes=numpy.array(codes, dtype=numpy.int64).reshape(-1, len(spec.names)))

    def __len__(self) -> int:
        return int(self.codes.shape[0])

    @property
    def n_rows(self) -> int:
        return len(self)

    @property
    def rows(self) -> typing.Tuple[Sample, ...]:
        levels = self.spec.levels
        return tuple(
            Sample(
                values=[
                    MISSING if code < 0 else levels[column][code]
                    for column, code in enumerate(row)
                ]
            )
            for row in self.codes.tolist()
        )

    @property
    def missing_mask(self) -> numpy.ndarray:
        return typing.cast(numpy.ndarray, self.codes < 0)

    def is_complete(self) -> bool:
        return not bool(self.missing_mask.any())

    def complete_rows(self) -> "DataSet":
        """The data set restricted to rows without missing values."""
        keep = ~self.missing_mask.any(axis=1)
        return attr.evolve(self, codes=self.codes[keep])

    def reorder(self, names: typing.Sequence[str]) -> "DataSet":
        """Permute the columns into the order of `names`."""
        spec = self.spec.reorder(names)
        positions = [self.spec.names.index(name) for name in names]
        return attr.evolve(self, spec=spec, codes=self.codes[:, positions])

    def equals(self, other: "DataSet") -> bool:
        return self.spec == other.spec and numpy.array_equal(self.codes, other.codes)

    def to_frame(self) -> pandas.DataFrame:
        """The rows as a frame of labels with :py:obj:`None` for missing values."""
        columns = {}
        for column, name in enumerate(self.spec.names):
            levels = numpy.array(self.spec.levels[column] + (None,), dtype=object)
            columns[name] = levels[self.codes[:, column]]
        return pandas.DataFrame(columns, columns=list(self.spec.names))

    def write_csv(self, path: typing.Union[str, os.PathLike], na_token: str = DEFAULT_NA_TOKEN) -> None:
        self.to_frame().to_csv(path, index=False, na_rep=na_token, lineterminator="\n")


def read_csv(
    path: typing.Union[str, os.PathLike],
    na_token: str = DEFAULT_NA_TOKEN,
    spec: typing.Optional[VariableSpec] = None,
) -> DataSet:
    """Read a CSV file whose header names the variables.  Cells equal to `na_token` or
    empty become missing.

    Args:
        path: The file to read.
        na_token: The token marking missing cells.
        spec: The expected variables.  If not given, levels are inferred in order of
            first appearance.

    Raises:
        stmiss.EmptyDataError: If the file has no header or no rows.
        stmiss.DataParseError: If a cell is not a level of its variable.
    """
    try:
        frame = pandas.read_csv(
            path, dtype=str, keep_default_na=False, na_filter=False
        )
    except pandas.errors.EmptyDataError as error:
        raise stmiss.EmptyDataError(f"{os.fspath(path)} is empty") from error
    if len(frame) == 0:
        raise stmiss.EmptyDataError(f"{os.fspath(path)} has a header but no rows")

    missing = frame.isin([na_token, ""])

    if spec is None:
        names = [str(name) for name in frame.columns]
        levels = [
            list(pandas.unique(frame[name][~missing[name]])) for name in frame.columns
        ]
        spec = VariableSpec(names=names, levels=levels)
    elif sorted(frame.columns) != sorted(spec.names):
        raise stmiss.InvalidSpecError(
            f"Columns {list(frame.columns)} do not match variables {list(spec.names)}"
        )

    codes = numpy.full((len(frame), len(spec.names)), -1, dtype=numpy.int64)
    for column, name in enumerate(spec.names):
        lookup = {level: index for index, level in enumerate(spec.levels[column])}
        observed = ~missing[name].to_numpy()
        mapped = frame[name].map(lookup)
        unknown = numpy.flatnonzero(observed & mapped.isna().to_numpy())
        if len(unknown) > 0:
            row = int(unknown[0])
            raise stmiss.DataParseError(
                f"Row {row}, column {name!r}: {frame[name].iloc[row]!r} is not one of"
                + f" {list(spec.levels[column])}",
                row=row,
                column=name,
            )
        codes[observed, column] = mapped[observed].astype(numpy.int64).to_numpy()

    logger.info(
        "Read %d rows of %d variables from %s", len(frame), len(spec.names), path
    )
    return DataSet(
        spec=spec, codes=codes, origin=Origin(path=os.fspath(path), na_token=na_token)
    )


@attr.s(auto_attribs=True, frozen=True, slots=True)
class PossiblePathSet:
    """The root-to-leaf paths consistent with the observed values of a sample.

    Attributes:
        paths: Sorted path ids.
    """

    paths: typing.Tuple[int, ...] = attr.ib(converter=lambda v: tuple(sorted(v)))

    def __attrs_post_init__(self) -> None:
        if len(self.paths) == 0:
            raise stmiss.InconsistentSampleError("A possible path set can not be empty.")

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self) -> typing.Iterator[int]:
        return iter(self.paths)

    @property
    def is_singleton(self) -> bool:
        return len(self.paths) == 1


def _constrained_leaves(
    tree: EventTree, values: typing.Sequence[typing.Optional[str]]
) -> typing.List[int]:
    leaves = []
    stack = [0]
    while stack:
        vertex = stack.pop()
        depth = tree.depth[vertex]
        children = tree.children[vertex]
        if not children:
            if all(value is None for value in values[depth:]):
                leaves.append(vertex)
            continue
        if depth >= len(values):
            continue
        value = values[depth]
        if value is None:
            stack.extend(reversed(children))
        else:
            child = tree.child(vertex, value)
            if child is not None:
                stack.append(child)
    return leaves


def _leaf_to_path(tree: EventTree) -> typing.Dict[int, int]:
    return {leaf: path for path, leaf in enumerate(tree.leaves)}


def _check_columns(tree: EventTree, spec: VariableSpec) -> None:
    if tree.variables is not None and tree.variables.names != spec.names:
        raise stmiss.InvalidSpecError(
            f"Data columns {list(spec.names)} are not in the tree variable order"
            + f" {list(tree.variables.names)}, reorder the data first."
        )


def possible_paths(tree: EventTree, x: Sample) -> PossiblePathSet:
    """Find the paths of `tree` that agree with every observed value of `x`.  The tree
    is walked depth first following observed labels and branching only on missing
    positions so the cost follows the size of the answer.

    Raises:
        stmiss.InconsistentSampleError: If no path agrees with the observed values.
    """
    values = [None if value is MISSING else value for value in x.values]
    leaves = _constrained_leaves(tree, values)
    if not leaves:
        raise stmiss.InconsistentSampleError(
            f"No root-to-leaf path is consistent with {x.values}"
        )
    lookup = _leaf_to_path(tree)
    return PossiblePathSet(paths=[lookup[leaf] for leaf in leaves])


def _pattern_paths(
    tree: EventTree, spec: VariableSpec, patterns: numpy.ndarray
) -> typing.List[PossiblePathSet]:
    lookup = _leaf_to_path(tree)
    result = []
    for pattern in patterns.tolist():
        values = [
            None if code < 0 else spec.levels[column][code]
            for column, code in enumerate(pattern)
        ]
        leaves = _constrained_leaves(tree, values)
        if not leaves:
            raise stmiss.InconsistentSampleError(
                f"No root-to-leaf path is consistent with {values}"
            )
        result.append(PossiblePathSet(paths=[lookup[leaf] for leaf in leaves]))
    return result


def row_path_ids(tree: EventTree, data: DataSet) -> numpy.ndarray:
    """The path id of every row of complete `data`.

    Raises:
        stmiss.MissingValuesError: If any value is missing.
    """
    _check_columns(tree, data.spec)
    if not data.is_complete():
        raise stmiss.MissingValuesError(
            "Complete data is required here, use the EM routines or a"
            + " pseudo-likelihood for data with missing values."
        )
    if len(data) == 0:
        return numpy.zeros(0, dtype=numpy.intp)
    patterns, inverse = numpy.unique(data.codes, axis=0, return_inverse=True)
    ids = numpy.array(
        [paths.paths[0] for paths in _pattern_paths(tree, data.spec, patterns)],
        dtype=numpy.intp,
    )
    return typing.cast(numpy.ndarray, ids[inverse.reshape(-1)])


def path_codes(tree: EventTree) -> numpy.ndarray:
    """The level codes of every root-to-leaf path, one row per path id."""
    spec = tree.require_x_compatible()
    return numpy.array(
        [
            [
                spec.level_index(column, label)
                for column, label in enumerate(tree.path_labels(path))
            ]
            for path in range(tree.n_paths)
        ],
        dtype=numpy.int64,
    ).reshape(tree.n_paths, len(spec.names))


@attr.s(auto_attribs=True, frozen=True, slots=True)
class Group:
    """Samples sharing one set of possible paths.

    Attributes:
        paths: The shared possible paths.
        count: How many samples have them.
    """

    paths: PossiblePathSet
    count: int


@attr.s(auto_attribs=True, frozen=True, slots=True)
class GroupedCounts:
    """A data set collected into groups of samples with equal possible paths.

    Attributes:
        groups: The groups, ordered lexicographically by their sorted path ids.
        n_paths: The number of root-to-leaf paths of the tree.
    """

    groups: typing.Tuple[Group, ...] = attr.ib(converter=tuple)
    n_paths: int

    def __attrs_post_init__(self) -> None:
        if any(group.count <= 0 for group in self.groups):
            raise stmiss.InvalidArgumentError("Group counts must be positive.")

    @property
    def singleton_prefix(self) -> typing.Tuple[int, ...]:
        """Indices of the groups with exactly one possible path."""
        return tuple(
            index for index, group in enumerate(self.groups) if group.paths.is_singleton
        )

    @property
    def total(self) -> int:
        return sum(group.count for group in self.groups)

    @property
    def complete_total(self) -> int:
        return sum(self.groups[index].count for index in self.singleton_prefix)

    @property
    def is_complete(self) -> bool:
        return len(self.singleton_prefix) == len(self.groups)

    def counts(self) -> numpy.ndarray:
        return numpy.array([group.count for group in self.groups], dtype=float)

    def incidence(self) -> numpy.ndarray:
        """A ``(n_groups, n_paths)`` indicator matrix of possible paths."""
        matrix = numpy.zeros((len(self.groups), self.n_paths))
        for row, group in enumerate(self.groups):
            matrix[row, list(group.paths.paths)] = 1.0
        return matrix

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_paths": self.n_paths,
                "groups": [
                    {"paths": list(group.paths.paths), "count": group.count}
                    for group in self.groups
                ],
            },
            indent=2,
        )


def group_counts(tree: EventTree, data: DataSet) -> GroupedCounts:
    """Collect the rows of `data` by their possible paths in `tree`."""
    _check_columns(tree, data.spec)
    if len(data) == 0:
        return GroupedCounts(groups=(), n_paths=tree.n_paths)

    patterns, counts = numpy.unique(data.codes, axis=0, return_counts=True)
    collected: typing.Dict[typing.Tuple[int, ...], int] = {}
    for paths, count in zip(_pattern_paths(tree, data.spec, patterns), counts.tolist()):
        collected[paths.paths] = collected.get(paths.paths, 0) + count

    groups = [
        Group(paths=PossiblePathSet(paths=key), count=collected[key])
        for key in sorted(collected)
    ]
    return GroupedCounts(groups=groups, n_paths=tree.n_paths)


def _as_nonnegative(
    value: typing.Mapping[int, typing.Mapping[str, float]],
) -> typing.Dict[int, typing.Dict[str, float]]:
    result = {
        int(stage): {str(label): float(n) for label, n in by_label.items()}
        for stage, by_label in value.items()
    }
    for stage, by_label in result.items():
        if any(n < 0 for n in by_label.values()):
            raise stmiss.InvalidArgumentError(f"Stage {stage} has a negative count.")
    return result


@attr.s(auto_attribs=True, frozen=True, slots=True)
class EdgeCounts:
    """Counts along the outgoing edges of every stage, pooled over stage members.
    Counts are real valued so expected counts fit as well as observed ones.

    Attributes:
        counts: Maps a stage id to a mapping of label to count.
    """

    counts: typing.Dict[int, typing.Dict[str, float]] = attr.ib(
        converter=_as_nonnegative
    )

    def __getitem__(self, stage: int) -> typing.Dict[str, float]:
        return self.counts[stage]

    def total(self, stage: int) -> float:
        return sum(self.counts[stage].values())


def zero_counts(model: StagedTreeModel) -> typing.Dict[int, typing.Dict[str, float]]:
    return {
        stage: {label: 0.0 for label in model.stage_labels(stage)}
        for stage in model.staging.stage_ids
    }


def complete_edge_counts(
    model: StagedTreeModel,
    data: typing.Union[DataSet, numpy.ndarray, typing.Sequence[float]],
) -> EdgeCounts:
    """Count traversals of each stage's outgoing edges.

    Args:
        model: The tree and staging; transition probabilities are not needed.
        data: Either complete rows, or a real valued count per path id such as the
            expected path counts of the EM algorithm.

    Raises:
        stmiss.MissingValuesError: If `data` has missing values.
    """
    tree = model.tree
    if isinstance(data, DataSet):
        path_counts = numpy.bincount(
            row_path_ids(tree, data), minlength=tree.n_paths
        ).astype(float)
    else:
        path_counts = numpy.asarray(data, dtype=float)
        if path_counts.shape != (tree.n_paths,):
            raise stmiss.InvalidArgumentError(
                f"Expected {tree.n_paths} path counts, got shape {path_counts.shape}"
            )

    width = tree.path_index.shape[1]
    vertex_counts = numpy.bincount(
        tree.path_index.ravel(),
        weights=numpy.repeat(path_counts, width),
        minlength=len(tree.parents),
    )

    counts = zero_counts(model)
    for vertex in range(1, len(tree.parents)):
        stage = model.staging.stage_of(tree.parents[vertex])
        counts[stage][tree.labels[vertex]] += float(vertex_counts[vertex])
    return EdgeCounts(counts)
