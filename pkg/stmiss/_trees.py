"""Event trees, stagings, transition probabilities and staged tree models.

Vertices are integer ids assigned breadth first with the root as ``0``.  Every other
ordering in the package (paths, situations, stage ids) derives from this one so models
are deterministic and serializable.
"""
import collections
import math
import numbers
import typing

import attr
import numpy

import stmiss


Labels = typing.Tuple[str, ...]


def _tuple_of_tuples(value: typing.Iterable[typing.Iterable[str]]) -> typing.Tuple[Labels, ...]:
    return tuple(tuple(inner) for inner in value)


@attr.s(auto_attribs=True, frozen=True, slots=True)
class VariableSpec:
    """The ordered categorical variables behind an X-compatible event tree.

    Attributes:
        names: The variable names, in tree depth order.
        levels: For each variable, its ordered category labels.
    """

    names: typing.Tuple[str, ...] = attr.ib(converter=tuple)
    levels: typing.Tuple[Labels, ...] = attr.ib(converter=_tuple_of_tuples)

    def __attrs_post_init__(self) -> None:
        if len(self.names) == 0:
            raise stmiss.InvalidSpecError("At least one variable is required.")
        if len(self.names) != len(self.levels):
            raise stmiss.InvalidSpecError(
                f"Got {len(self.names)} names but {len(self.levels)} level lists."
            )
        if len(set(self.names)) != len(self.names):
            raise stmiss.InvalidSpecError(f"Variable names are not distinct: {self.names}")
        for name, levels in zip(self.names, self.levels):
            if len(levels) < 2:
                raise stmiss.InvalidSpecError(
                    f"Variable {name!r} needs at least two levels, got {list(levels)}"
                )
            if len(set(levels)) != len(levels):
                raise stmiss.InvalidSpecError(
                    f"Levels of variable {name!r} are not distinct: {list(levels)}"
                )

    @property
    def cardinalities(self) -> typing.Tuple[int, ...]:
        return tuple(len(levels) for levels in self.levels)

    def level_index(self, variable: int, label: str) -> int:
        """Position of `label` in the level list of the variable at index `variable`."""
        return self.levels[variable].index(label)

    def reorder(self, names: typing.Sequence[str]) -> "VariableSpec":
        """Build the spec with the variables permuted into the order of `names`."""
        if sorted(names) != sorted(self.names):
            raise stmiss.InvalidSpecError(
                f"Ordering {list(names)} is not a permutation of {list(self.names)}"
            )
        positions = [self.names.index(name) for name in names]
        return VariableSpec(
            names=names, levels=[self.levels[position] for position in positions]
        )


@attr.s(auto_attribs=True, frozen=True, slots=True)
class EventTree:
    """A rooted directed tree whose edges carry event labels.

    Do not build instances from raw parents unless they are already in breadth first
    order.  Use :func:`stmiss.build_event_tree` or :meth:`EventTree.from_edges`.

    Attributes:
        parents: The parent of each vertex, ``-1`` for the root.
        labels: The label of the edge entering each vertex, ``""`` for the root.
        variables: The variables the tree was built from, when X-compatible.
    """

    parents: typing.Tuple[int, ...] = attr.ib(converter=tuple)
    labels: Labels = attr.ib(converter=tuple)
    variables: typing.Optional[VariableSpec] = None

    children: typing.Tuple[typing.Tuple[int, ...], ...] = attr.ib(
        init=False, eq=False, repr=False
    )
    depth: typing.Tuple[int, ...] = attr.ib(init=False, eq=False, repr=False)
    situations_by_depth: typing.Tuple[typing.Tuple[int, ...], ...] = attr.ib(
        init=False, eq=False, repr=False
    )
    paths: typing.Tuple[typing.Tuple[int, ...], ...] = attr.ib(
        init=False, eq=False, repr=False
    )
    path_index: numpy.ndarray = attr.ib(init=False, eq=False, repr=False)
    _child_by_label: typing.Tuple[typing.Dict[str, int], ...] = attr.ib(
        init=False, eq=False, repr=False
    )

    def __attrs_post_init__(self) -> None:
        count = len(self.parents)
        if count != len(self.labels):
            raise stmiss.InvalidTreeError("Every vertex needs exactly one label entry.")
        if count < 3 or self.parents[0] != -1:
            raise stmiss.InvalidTreeError(
                "The root must be vertex 0 and have at least two children."
            )

        children: typing.List[typing.List[int]] = [[] for _ in range(count)]
        depth = [0] * count
        for vertex in range(1, count):
            parent = self.parents[vertex]
            if not 0 <= parent < vertex:
                raise stmiss.InvalidTreeError(
                    f"Vertex {vertex} has parent {parent}, vertices must be numbered"
                    + " breadth first from the root."
                )
            if parent < self.parents[vertex - 1]:
                raise stmiss.InvalidTreeError(
                    f"Vertex {vertex} breaks breadth first order."
                )
            children[parent].append(vertex)
            depth[vertex] = depth[parent] + 1

        child_by_label = []
        for vertex, vertex_children in enumerate(children):
            if len(vertex_children) == 1:
                raise stmiss.InvalidTreeError(
                    f"Situation {vertex} has a single outgoing edge."
                )
            by_label = {self.labels[child]: child for child in vertex_children}
            if len(by_label) != len(vertex_children):
                raise stmiss.InvalidTreeError(
                    f"Outgoing edge labels of situation {vertex} are not distinct."
                )
            child_by_label.append(by_label)

        by_depth: typing.Dict[int, typing.List[int]] = collections.defaultdict(list)
        for vertex in range(count):
            if children[vertex]:
                by_depth[depth[vertex]].append(vertex)

        paths = []
        for vertex in range(count):
            if children[vertex]:
                continue
            path = [vertex]
            while path[-1] != 0:
                path.append(self.parents[path[-1]])
            paths.append(tuple(reversed(path)))

        # padded with the root whose entering edge has probability one
        width = max(len(path) for path in paths) - 1
        path_index = numpy.zeros((len(paths), width), dtype=numpy.intp)
        for row, path in enumerate(paths):
            path_index[row, : len(path) - 1] = path[1:]
        path_index.setflags(write=False)

        object.__setattr__(self, "children", tuple(tuple(c) for c in children))
        object.__setattr__(self, "depth", tuple(depth))
        object.__setattr__(
            self,
            "situations_by_depth",
            tuple(tuple(by_depth[d]) for d in range(len(by_depth))),
        )
        object.__setattr__(self, "paths", tuple(paths))
        object.__setattr__(self, "path_index", path_index)
        object.__setattr__(self, "_child_by_label", tuple(child_by_label))

    @classmethod
    def from_edges(
        cls,
        edges: typing.Sequence[typing.Tuple[typing.Hashable, typing.Hashable]],
        labels: typing.Sequence[str],
    ) -> "EventTree":
        """Build a tree from arbitrary vertex identifiers.  Vertices are renumbered
        breadth first, children keeping the order in which their edges are listed.

        Args:
            edges: The ``(parent, child)`` pairs.
            labels: The label of each edge, parallel to `edges`.
        """
        if len(edges) != len(labels):
            raise stmiss.InvalidTreeError("Every edge needs exactly one label.")

        incoming: typing.Dict[typing.Hashable, int] = collections.Counter(
            child for _, child in edges
        )
        doubled = [vertex for vertex, n in incoming.items() if n > 1]
        if doubled:
            raise stmiss.InvalidTreeError(
                f"Vertices with more than one incoming edge: {doubled}"
            )
        outgoing: typing.Dict[typing.Hashable, typing.List[typing.Tuple[typing.Hashable, str]]]
        outgoing = collections.defaultdict(list)
        vertices = []
        for (parent, child), label in zip(edges, labels):
            outgoing[parent].append((child, label))
            vertices.extend([parent, child])
        roots = {vertex for vertex in vertices if vertex not in incoming}
        if len(roots) != 1:
            raise stmiss.InvalidTreeError(
                f"Expected exactly one root, found {len(roots)}."
            )

        (root,) = roots
        parents = [-1]
        new_labels = [""]
        queue = collections.deque([(root, 0)])
        seen = {root}
        while queue:
            vertex, new_id = queue.popleft()
            for child, label in outgoing[vertex]:
                if child in seen:
                    raise stmiss.InvalidTreeError(f"Vertex {child!r} closes a cycle.")
                seen.add(child)
                queue.append((child, len(parents)))
                parents.append(new_id)
                new_labels.append(label)

        if len(seen) != len(set(vertices)):
            raise stmiss.InvalidTreeError("The edges do not form a connected tree.")

        return cls(parents=parents, labels=new_labels)

    @property
    def root(self) -> int:
        return 0

    @property
    def vertices(self) -> range:
        return range(len(self.parents))

    @property
    def situations(self) -> typing.Tuple[int, ...]:
        return tuple(v for depth in self.situations_by_depth for v in depth)

    @property
    def leaves(self) -> typing.Tuple[int, ...]:
        return tuple(path[-1] for path in self.paths)

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    def floret_labels(self, situation: int) -> Labels:
        """The outgoing edge labels of `situation` in child order."""
        return tuple(self.labels[child] for child in self.children[situation])

    def child(self, situation: int, label: str) -> typing.Optional[int]:
        """The child of `situation` along the edge labelled `label`, if there is one."""
        return self._child_by_label[situation].get(label)

    def path_labels(self, path: int) -> Labels:
        """The edge labels along the path with id `path`."""
        return tuple(self.labels[vertex] for vertex in self.paths[path][1:])

    def is_x_compatible(self) -> bool:
        return self.variables is not None

    def require_x_compatible(self) -> VariableSpec:
        """Return the variables of the tree or raise for general trees, which can be
        represented but not learned.
        """
        if self.variables is None:
            raise stmiss.NotStageableError(
                "Learning requires an X-compatible tree built from a VariableSpec."
            )
        return self.variables


def build_event_tree(spec: VariableSpec) -> EventTree:
    """Build the symmetric event tree whose depth ``d`` edges are labelled by the levels
    of variable ``d`` of `spec`.  Vertices are numbered breadth first so leaves, and
    therefore paths, come out in lexicographic order of level indices.

    Args:
        spec: The ordered variables.
    """
    parents = [-1]
    labels = [""]
    frontier = [0]
    for levels in spec.levels:
        next_frontier = []
        for parent in frontier:
            for level in levels:
                next_frontier.append(len(parents))
                parents.append(parent)
                labels.append(level)
        frontier = next_frontier

    return EventTree(parents=parents, labels=labels, variables=spec)


def _canonical_stages(
    stages: typing.Sequence[typing.Sequence[typing.Hashable]],
) -> typing.Tuple[typing.Tuple[int, ...], ...]:
    renumbered: typing.Dict[typing.Tuple[int, typing.Hashable], int] = {}
    result = []
    for depth, depth_stages in enumerate(stages):
        row = []
        for stage in depth_stages:
            key = (depth, stage)
            if key not in renumbered:
                renumbered[key] = len(renumbered)
            row.append(renumbered[key])
        result.append(tuple(row))
    return tuple(result)


@attr.s(auto_attribs=True, frozen=True, slots=True)
class Staging:
    """A partition of the situations of each depth into stages.  Stage ids are numbered
    by their smallest member so two stagings of the same tree are equal exactly when
    they partition the situations the same way.  Build instances with
    :meth:`Staging.build`, :func:`saturated_staging` or
    :func:`full_independence_staging`.

    Attributes:
        situations: The situations at each depth, in vertex order.
        stages: The stage id of each situation, parallel to `situations`.
    """

    situations: typing.Tuple[typing.Tuple[int, ...], ...] = attr.ib(
        converter=_tuple_of_tuples
    )
    stages: typing.Tuple[typing.Tuple[int, ...], ...] = attr.ib(
        converter=_tuple_of_tuples
    )

    _stage_of: typing.Dict[int, int] = attr.ib(init=False, eq=False, repr=False)
    _members: typing.Dict[int, typing.Tuple[int, ...]] = attr.ib(
        init=False, eq=False, repr=False
    )

    def __attrs_post_init__(self) -> None:
        if [len(row) for row in self.situations] != [len(row) for row in self.stages]:
            raise stmiss.InvalidStagingError(
                "Every situation needs exactly one stage id."
            )
        if _canonical_stages(self.stages) != self.stages:
            raise stmiss.InvalidStagingError(
                "Stage ids are not canonical, use Staging.build()."
            )
        stage_of = {}
        members: typing.Dict[int, typing.List[int]] = collections.defaultdict(list)
        for depth_situations, depth_stages in zip(self.situations, self.stages):
            for situation, stage in zip(depth_situations, depth_stages):
                if situation in stage_of:
                    raise stmiss.InvalidStagingError(
                        f"Situation {situation} is listed twice."
                    )
                stage_of[situation] = stage
                members[stage].append(situation)
        object.__setattr__(self, "_stage_of", stage_of)
        object.__setattr__(
            self, "_members", {stage: tuple(m) for stage, m in members.items()}
        )

    @classmethod
    def build(
        cls,
        situations: typing.Sequence[typing.Sequence[int]],
        stages: typing.Sequence[typing.Sequence[typing.Hashable]],
    ) -> "Staging":
        """Build a staging from arbitrary per depth stage keys.  Equal keys at the same
        depth share a stage, keys at different depths never do.
        """
        return cls(situations=situations, stages=_canonical_stages(stages))

    @classmethod
    def from_blocks(
        cls,
        situations: typing.Sequence[typing.Sequence[int]],
        blocks: typing.Iterable[typing.Iterable[int]],
    ) -> "Staging":
        """Build a staging from the member sets of each stage."""
        key = {}
        for index, block in enumerate(blocks):
            for situation in block:
                key[situation] = index
        try:
            stages = [[key[s] for s in depth] for depth in situations]
        except KeyError as error:
            raise stmiss.InvalidStagingError(
                f"Situation {error.args[0]} is in no stage."
            ) from error
        return cls.build(situations=situations, stages=stages)

    @property
    def stage_ids(self) -> typing.Tuple[int, ...]:
        return tuple(range(len(self._members)))

    @property
    def n_stages(self) -> int:
        return len(self._members)

    def stage_of(self, situation: int) -> int:
        return self._stage_of[situation]

    def members(self, stage: int) -> typing.Tuple[int, ...]:
        return self._members[stage]

    def stages_at_depth(self, depth: int) -> typing.Tuple[int, ...]:
        return tuple(sorted(set(self.stages[depth])))

    def depth_of_stage(self, stage: int) -> int:
        for depth, row in enumerate(self.stages):
            if stage in row:
                return depth
        raise KeyError(stage)

    def merge(self, a: int, b: int) -> "Staging":
        """Merge stages `a` and `b`, which must be at the same depth."""
        if self.depth_of_stage(a) != self.depth_of_stage(b):
            raise stmiss.InvalidStagingError(
                f"Stages {a} and {b} are at different depths."
            )
        stages = [[a if s == b else s for s in row] for row in self.stages]
        return Staging.build(situations=self.situations, stages=stages)

    def split(self, stage: int, situations: typing.Iterable[int]) -> "Staging":
        """Move `situations` out of `stage` into a new stage of their own."""
        moved = set(situations)
        if not moved or not moved < set(self._members[stage]):
            raise stmiss.InvalidStagingError(
                f"Can only split a proper nonempty subset out of stage {stage}."
            )
        stages = [
            [
                (s, "split") if situation in moved else (s, "")
                for situation, s in zip(depth_situations, row)
            ]
            for depth_situations, row in zip(self.situations, self.stages)
        ]
        return Staging.build(situations=self.situations, stages=stages)


def saturated_staging(tree: EventTree) -> Staging:
    """Put every situation in a stage of its own."""
    return Staging.build(
        situations=tree.situations_by_depth, stages=tree.situations_by_depth
    )


def full_independence_staging(tree: EventTree) -> Staging:
    """Put all situations of each depth into a single stage.

    Raises:
        stmiss.NotStageableError: If situations at some depth have different outgoing
            label sets.
    """
    for depth, situations in enumerate(tree.situations_by_depth):
        label_sets = {frozenset(tree.floret_labels(s)) for s in situations}
        if len(label_sets) > 1:
            raise stmiss.NotStageableError(
                f"Situations at depth {depth} have different outgoing labels."
            )
    return Staging.build(
        situations=tree.situations_by_depth,
        stages=[[0] * len(situations) for situations in tree.situations_by_depth],
    )


def validate_staging(tree: EventTree, staging: Staging) -> None:
    """Check that `staging` partitions the situations of `tree` into stages of
    identically labelled florets.  Labels are compared as exact strings.
    """
    if staging.situations != tree.situations_by_depth:
        raise stmiss.InvalidStagingError(
            "The staging does not list the situations of the tree."
        )
    for stage in staging.stage_ids:
        members = staging.members(stage)
        expected = frozenset(tree.floret_labels(members[0]))
        for situation in members[1:]:
            if frozenset(tree.floret_labels(situation)) != expected:
                raise stmiss.NotStageableError(
                    f"Situations {members[0]} and {situation} share stage {stage} but"
                    + " not their outgoing labels."
                )


def model_dimension(tree: EventTree, staging: Staging) -> int:
    """The number of free parameters, one less than the floret size summed over
    stages.
    """
    return sum(
        len(tree.children[staging.members(stage)[0]]) - 1 for stage in staging.stage_ids
    )


def _as_probabilities(
    value: typing.Mapping[int, typing.Mapping[str, float]],
) -> typing.Dict[int, typing.Dict[str, float]]:
    return {
        int(stage): {str(label): float(p) for label, p in distribution.items()}
        for stage, distribution in value.items()
    }


@attr.s(auto_attribs=True, frozen=True, slots=True)
class TransitionProbabilities:
    """A categorical distribution over outgoing edge labels for every stage.

    Attributes:
        probabilities: Maps a stage id to a mapping of label to probability.
    """

    probabilities: typing.Dict[int, typing.Dict[str, float]] = attr.ib(
        converter=_as_probabilities
    )

    def __attrs_post_init__(self) -> None:
        for stage, distribution in self.probabilities.items():
            values = list(distribution.values())
            if any(not 0 <= p <= 1 for p in values):
                raise stmiss.InvalidProbabilitiesError(
                    f"Stage {stage} has a probability outside of [0, 1]: {distribution}"
                )
            total = math.fsum(values)
            if abs(total - 1) > 1e-12:
                raise stmiss.InvalidProbabilitiesError(
                    f"Stage {stage} probabilities sum to {total!r}, not 1."
                )

    def __getitem__(self, stage: int) -> typing.Dict[str, float]:
        return self.probabilities[stage]

    @property
    def stage_ids(self) -> typing.Tuple[int, ...]:
        return tuple(sorted(self.probabilities))

    def to_dict(self) -> typing.Dict[int, typing.Dict[str, float]]:
        return {stage: dict(d) for stage, d in self.probabilities.items()}


def uniform_probabilities(tree: EventTree, staging: Staging) -> TransitionProbabilities:
    """Give every outgoing label of every stage the same probability."""
    probabilities = {}
    for stage in staging.stage_ids:
        labels = tree.floret_labels(staging.members(stage)[0])
        probabilities[stage] = {label: 1 / len(labels) for label in labels}
    return TransitionProbabilities(probabilities)


@attr.s(auto_attribs=True, frozen=True, slots=True)
class StagedTreeModel:
    """An event tree with a staging and, once estimated, transition probabilities.

    Attributes:
        tree: The event tree.
        staging: The partition of the situations of `tree` into stages.
        theta: The per stage distributions, :py:obj:`None` until estimated.
    """

    tree: EventTree
    staging: Staging
    theta: typing.Optional[TransitionProbabilities] = None

    def __attrs_post_init__(self) -> None:
        validate_staging(self.tree, self.staging)
        if self.theta is None:
            return
        if self.theta.stage_ids != self.staging.stage_ids:
            raise stmiss.InvalidProbabilitiesError(
                "Transition probabilities must cover exactly the stages of the staging."
            )
        for stage in self.staging.stage_ids:
            labels = set(self.stage_labels(stage))
            if set(self.theta[stage]) != labels:
                raise stmiss.InvalidProbabilitiesError(
                    f"Stage {stage} has labels {sorted(labels)} but probabilities for"
                    + f" {sorted(self.theta[stage])}."
                )

    def stage_labels(self, stage: int) -> Labels:
        """The outgoing labels of `stage`, in the child order of its first member."""
        return self.tree.floret_labels(self.staging.members(stage)[0])

    @property
    def dimension(self) -> int:
        return model_dimension(self.tree, self.staging)

    def require_theta(self) -> TransitionProbabilities:
        if self.theta is None:
            raise stmiss.UnestimatedModelError(
                "The model has no transition probabilities, fit it first."
            )
        return self.theta

    def with_theta(self, theta: typing.Optional[TransitionProbabilities]) -> "StagedTreeModel":
        return attr.evolve(self, theta=theta)

    def edge_probabilities(self) -> numpy.ndarray:
        """The probability of the edge entering each vertex, one for the root."""
        theta = self.require_theta()
        result = numpy.ones(len(self.tree.parents))
        for vertex in range(1, len(result)):
            stage = self.staging.stage_of(self.tree.parents[vertex])
            result[vertex] = theta[stage][self.tree.labels[vertex]]
        return result

    def path_probabilities(self) -> numpy.ndarray:
        """The probability of every root-to-leaf path, indexed by path id."""
        return typing.cast(
            numpy.ndarray, self.edge_probabilities()[self.tree.path_index].prod(axis=1)
        )


Path = typing.Union[int, typing.Sequence[int]]


def path_probability(model: StagedTreeModel, path: Path) -> float:
    """The product of the transition probabilities along a root-to-leaf path.

    Args:
        model: An estimated staged tree model.
        path: A path id or the sequence of vertices from the root to a leaf.
    """
    theta = model.require_theta()
    tree = model.tree
    if isinstance(path, numbers.Integral):
        vertices = tree.paths[int(path)]
    else:
        vertices = tuple(path)
        if vertices not in tree.paths:
            raise stmiss.InvalidTreeError(f"{vertices} is not a root-to-leaf path.")

    probability = 1.0
    for parent, child in zip(vertices, vertices[1:]):
        probability *= theta[model.staging.stage_of(parent)][tree.labels[child]]
    return probability
