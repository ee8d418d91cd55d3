"""Staging selection by hill-climbing and backward hill-climbing, and event tree
selection over variable orderings.

During a search the staging is held as a tuple of stage member sets per depth, each
depth's stages sorted by their smallest member.  Flattening this gives the canonical
stage ids of :class:`stmiss.Staging`, so candidates are enumerated in stage id order and
the first of several equally good moves wins.
"""
import enum
import itertools
import logging
import math
import time
import typing

import attr
import numpy
import scipy.special

import stmiss
from stmiss._data import DataSet, GroupedCounts, group_counts
from stmiss._likelihood import (
    LikelihoodKind,
    fit,
    group_terms,
    penalty_size,
)
from stmiss._python import make_rng
from stmiss._trees import (
    EventTree,
    StagedTreeModel,
    Staging,
    VariableSpec,
    build_event_tree,
    saturated_staging,
)


logger = logging.getLogger(__name__)

MAX_EXHAUSTIVE_VARIABLES = 8

Block = typing.FrozenSet[int]
Partition = typing.Tuple[typing.Tuple[Block, ...], ...]


class Strategy(enum.Enum):
    """How the space of stagings is explored."""

    HC = "hc"
    BHC = "bhc"


def _at_least(minimum: float) -> typing.Callable[[typing.Any, attr.Attribute, typing.Any], None]:
    def validator(instance: typing.Any, attribute: attr.Attribute, value: typing.Any) -> None:
        if value < minimum:
            raise stmiss.InvalidArgumentError(
                f"{attribute.name} must be >= {minimum}, got {value}"
            )

    return validator


@attr.s(auto_attribs=True, frozen=True, slots=True)
class SearchConfig:
    """Settings for a staging search.

    Attributes:
        score_kind: The likelihood inside the BIC score.
        strategy: Hill-climbing with merges and splits, or backward hill-climbing with
            merges only.
        max_iter: The cap on accepted moves, in total for hill-climbing and per depth
            for backward hill-climbing.
        seed: Seeds the sampling of variable orderings.
        score_epsilon: A move must improve the score by more than this.
        smoothing: The pseudo count used when fitting θ of the selected model.
    """

    score_kind: LikelihoodKind = LikelihoodKind.FIRST_MISSING
    strategy: Strategy = Strategy.HC
    max_iter: int = attr.ib(default=10_000, validator=_at_least(1))
    seed: int = 0
    score_epsilon: float = attr.ib(default=1e-9, validator=_at_least(0))
    smoothing: float = attr.ib(default=0.0, validator=_at_least(0))


@attr.s(auto_attribs=True, frozen=True, slots=True)
class SearchResult:
    """The outcome of a search.

    Attributes:
        model: The selected staged tree with fitted θ.
        score: Its BIC score.
        trace: The accepted moves with the score after each.
        elapsed: Wall time in seconds.
    """

    model: StagedTreeModel
    score: float
    trace: typing.Tuple[typing.Tuple[str, float], ...]
    elapsed: float


def _improvement(new: float, old: float) -> float:
    if new == -math.inf:
        return -math.inf
    if old == -math.inf:
        return math.inf
    return new - old


def _block_loglik(counts: typing.Mapping[str, float]) -> float:
    values = numpy.fromiter(counts.values(), dtype=float)
    total = values.sum()
    if total <= 0:
        return 0.0
    return float(numpy.sum(scipy.special.xlogy(values, values / total)))


class _Scorer:
    """BIC of a partition, written as a sum of per depth log-likelihood terms so a move
    at one depth only rescores that depth.
    """

    def __init__(self, tree: EventTree, grouped: GroupedCounts, kind: LikelihoodKind):
        self.tree = tree
        self.kind = kind
        self.terms = group_terms(tree, grouped)
        n = penalty_size(kind, grouped)
        if n < 1:
            raise stmiss.SearchError(
                f"No rows contribute to the {kind.value} likelihood, nothing to score."
            )
        self.half_log_n = 0.5 * math.log(n)

    def block_dim(self, block: Block) -> int:
        return len(self.tree.children[min(block)]) - 1

    def depth_loglik(self, depth: int, blocks: typing.Tuple[Block, ...]) -> float:
        raise NotImplementedError()

    def penalty(self, blocks: typing.Iterable[Block]) -> float:
        return self.half_log_n * sum(self.block_dim(block) for block in blocks)

    def score(self, partition: Partition) -> float:
        loglik = 0.0
        for depth, blocks in enumerate(partition):
            term = self.depth_loglik(depth, blocks)
            if term == -math.inf:
                return -math.inf
            loglik += term
        return loglik - self.penalty(itertools.chain.from_iterable(partition))

    def candidate(
        self,
        partition: Partition,
        current: float,
        depth: int,
        blocks: typing.Tuple[Block, ...],
    ) -> float:
        """The score of `partition` with the stages at `depth` replaced by `blocks`."""
        if current == -math.inf:
            return self.score(partition[:depth] + (blocks,) + partition[depth + 1 :])
        new = self.depth_loglik(depth, blocks)
        if new == -math.inf:
            return -math.inf
        old = self.depth_loglik(depth, partition[depth])
        return (
            current
            + new
            - old
            - self.penalty(blocks)
            + self.penalty(partition[depth])
        )


class _DecomposableScorer(_Scorer):
    """Complete, omit and first-missing likelihoods keep edges independently of the
    staging, so situation counts are tallied once and each stage scores on its own.
    """

    def __init__(self, tree: EventTree, grouped: GroupedCounts, kind: LikelihoodKind):
        super().__init__(tree, grouped, kind)
        if kind is LikelihoodKind.COMPLETE and not grouped.is_complete:
            raise stmiss.MissingValuesError(
                "The complete data score needs rows without missing values."
            )
        self.situation_counts: typing.Dict[int, typing.Dict[str, float]] = {
            situation: {label: 0.0 for label in tree.floret_labels(situation)}
            for situation in tree.situations
        }
        for group in self.terms:
            for term in group.terms:
                if kind is LikelihoodKind.FIRST_MISSING:
                    keep = term.is_single_situation
                else:
                    keep = group.singleton
                if keep:
                    (situation,) = term.situations
                    self.situation_counts[situation][term.label] += group.count
        self.cache: typing.Dict[Block, float] = {}

    def block_loglik(self, block: Block) -> float:
        cached = self.cache.get(block)
        if cached is None:
            counts: typing.Dict[str, float] = {}
            for situation in block:
                for label, n in self.situation_counts[situation].items():
                    counts[label] = counts.get(label, 0.0) + n
            cached = self.cache[block] = _block_loglik(counts)
        return cached

    def depth_loglik(self, depth: int, blocks: typing.Tuple[Block, ...]) -> float:
        return sum(self.block_loglik(block) for block in blocks)


class _StageAverageScorer(_Scorer):
    """Whether a shared label counts depends on the stages at its depth, so per depth
    counts are recomputed per candidate and memoized on that depth's stages.
    """

    def __init__(self, tree: EventTree, grouped: GroupedCounts, kind: LikelihoodKind):
        super().__init__(tree, grouped, kind)
        self.by_depth: typing.Dict[int, typing.List[typing.Tuple[int, typing.FrozenSet[int], str]]] = {}
        for group in self.terms:
            for term in group.terms:
                depth = tree.depth[next(iter(term.situations))]
                self.by_depth.setdefault(depth, []).append(
                    (group.count, term.situations, term.label)
                )
        self.cache: typing.Dict[
            typing.Tuple[int, typing.Tuple[Block, ...]],
            typing.List[typing.Dict[str, float]],
        ] = {}

    def depth_counts(
        self, depth: int, blocks: typing.Tuple[Block, ...]
    ) -> typing.List[typing.Dict[str, float]]:
        key = (depth, blocks)
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        block_of = {
            situation: index for index, block in enumerate(blocks) for situation in block
        }
        counts = [
            {label: 0.0 for label in self.tree.floret_labels(min(block))}
            for block in blocks
        ]
        for count, situations, label in self.by_depth.get(depth, ()):
            indices = {block_of[situation] for situation in situations}
            if len(indices) == 1:
                (index,) = indices
                counts[index][label] += count
        self.cache[key] = counts
        return counts

    def depth_loglik(self, depth: int, blocks: typing.Tuple[Block, ...]) -> float:
        return sum(_block_loglik(counts) for counts in self.depth_counts(depth, blocks))


class _FullMissingScorer(_StageAverageScorer):
    """The exact missing-data likelihood with θ from the stage-average counts.  It does
    not split by depth so every candidate is scored in full.
    """

    def __init__(self, tree: EventTree, grouped: GroupedCounts, kind: LikelihoodKind):
        super().__init__(tree, grouped, kind)
        self.incidence = grouped.incidence()
        self.group_sizes = grouped.counts()
        self.edge_cache: typing.Dict[
            typing.Tuple[int, typing.Tuple[Block, ...]], typing.Dict[int, float]
        ] = {}

    def depth_edges(self, depth: int, blocks: typing.Tuple[Block, ...]) -> typing.Dict[int, float]:
        key = (depth, blocks)
        cached = self.edge_cache.get(key)
        if cached is not None:
            return cached
        edges = {}
        for block, counts in zip(blocks, self.depth_counts(depth, blocks)):
            total = sum(counts.values())
            for situation in block:
                for child in self.tree.children[situation]:
                    label = self.tree.labels[child]
                    edges[child] = counts[label] / total if total > 0 else 1 / len(counts)
        self.edge_cache[key] = edges
        return edges

    def score(self, partition: Partition) -> float:
        edge_probabilities = numpy.ones(len(self.tree.parents))
        for depth, blocks in enumerate(partition):
            for child, probability in self.depth_edges(depth, blocks).items():
                edge_probabilities[child] = probability
        paths = edge_probabilities[self.tree.path_index].prod(axis=1)
        masses = self.incidence @ paths
        loglik = float(numpy.sum(scipy.special.xlogy(self.group_sizes, masses)))
        if loglik == -math.inf:
            return -math.inf
        return loglik - self.penalty(itertools.chain.from_iterable(partition))

    def candidate(
        self,
        partition: Partition,
        current: float,
        depth: int,
        blocks: typing.Tuple[Block, ...],
    ) -> float:
        return self.score(partition[:depth] + (blocks,) + partition[depth + 1 :])


def _make_scorer(tree: EventTree, grouped: GroupedCounts, kind: LikelihoodKind) -> _Scorer:
    if kind is LikelihoodKind.FULL_MISSING:
        return _FullMissingScorer(tree, grouped, kind)
    if kind is LikelihoodKind.STAGE_AVERAGE:
        return _StageAverageScorer(tree, grouped, kind)
    return _DecomposableScorer(tree, grouped, kind)


def _partition_of(staging: Staging) -> Partition:
    result = []
    for depth_stages in staging.stages:
        stages = sorted(set(depth_stages))
        result.append(tuple(frozenset(staging.members(stage)) for stage in stages))
    return tuple(result)


def _sorted_blocks(blocks: typing.Iterable[Block]) -> typing.Tuple[Block, ...]:
    return tuple(sorted(blocks, key=min))


def _stage_id(partition: Partition, depth: int, index: int) -> int:
    return sum(len(blocks) for blocks in partition[:depth]) + index


@attr.s(auto_attribs=True, frozen=True, slots=True)
class _Move:
    description: str
    depth: int
    blocks: typing.Tuple[Block, ...]


def _merges(tree: EventTree, partition: Partition, depth: int) -> typing.Iterator[_Move]:
    blocks = partition[depth]
    for a, b in itertools.combinations(range(len(blocks)), 2):
        labels_a = frozenset(tree.floret_labels(min(blocks[a])))
        labels_b = frozenset(tree.floret_labels(min(blocks[b])))
        if labels_a != labels_b:
            continue
        rest = [block for index, block in enumerate(blocks) if index not in (a, b)]
        yield _Move(
            description=(
                f"merge {_stage_id(partition, depth, a)}"
                + f" {_stage_id(partition, depth, b)}"
            ),
            depth=depth,
            blocks=_sorted_blocks(rest + [blocks[a] | blocks[b]]),
        )


def _splits(partition: Partition, depth: int) -> typing.Iterator[_Move]:
    blocks = partition[depth]
    for index, block in enumerate(blocks):
        if len(block) < 2:
            continue
        rest = [other for position, other in enumerate(blocks) if position != index]
        for situation in sorted(block):
            yield _Move(
                description=(
                    f"split {situation} from {_stage_id(partition, depth, index)}"
                ),
                depth=depth,
                blocks=_sorted_blocks(
                    rest + [block - {situation}, frozenset([situation])]
                ),
            )


def _best_move(
    scorer: _Scorer,
    partition: Partition,
    current: float,
    moves: typing.Iterable[_Move],
) -> typing.Tuple[typing.Optional[_Move], float]:
    best = None
    best_score = -math.inf
    for move in moves:
        score = scorer.candidate(partition, current, move.depth, move.blocks)
        if best is None or _improvement(score, best_score) > 0:
            best = move
            best_score = score
    return best, best_score


def _grouped(tree: EventTree, data: typing.Union[DataSet, GroupedCounts]) -> GroupedCounts:
    grouped = data if isinstance(data, GroupedCounts) else group_counts(tree, data)
    if grouped.total == 0:
        raise stmiss.EmptyDataError("Can not search for a staging without data.")
    return grouped


def _finish(
    tree: EventTree,
    grouped: GroupedCounts,
    config: SearchConfig,
    scorer: _Scorer,
    partition: Partition,
    trace: typing.List[typing.Tuple[str, float]],
    start: float,
) -> SearchResult:
    staging = Staging.from_blocks(
        situations=tree.situations_by_depth,
        blocks=itertools.chain.from_iterable(partition),
    )
    model = fit(
        StagedTreeModel(tree=tree, staging=staging),
        grouped,
        config.score_kind,
        smoothing=config.smoothing,
    )
    return SearchResult(
        model=model,
        score=scorer.score(partition),
        trace=tuple(trace),
        elapsed=time.perf_counter() - start,
    )


def bhc_stage_search(
    tree: EventTree,
    data: typing.Union[DataSet, GroupedCounts],
    config: SearchConfig,
) -> SearchResult:
    """Backward hill-climbing from the saturated staging.  Depth by depth from the root,
    the best merge of two stages is applied while it improves the score by more than
    ``config.score_epsilon``.
    """
    start = time.perf_counter()
    tree.require_x_compatible()
    grouped = _grouped(tree, data)
    scorer = _make_scorer(tree, grouped, config.score_kind)
    partition = _partition_of(saturated_staging(tree))
    current = scorer.score(partition)
    trace = []
    logger.info("Backward hill-climbing from score %r", current)

    for depth in range(len(partition)):
        for _ in range(config.max_iter):
            move, score = _best_move(
                scorer, partition, current, _merges(tree, partition, depth)
            )
            if move is None or _improvement(score, current) <= config.score_epsilon:
                break
            partition = partition[:depth] + (move.blocks,) + partition[depth + 1 :]
            current = scorer.score(partition)
            trace.append((f"{move.description} at depth {depth}", current))
            logger.debug("%s at depth %d, score %r", move.description, depth, current)

    return _finish(tree, grouped, config, scorer, partition, trace, start)


def hc_stage_search(
    tree: EventTree,
    data: typing.Union[DataSet, GroupedCounts],
    config: SearchConfig,
    start_staging: typing.Optional[Staging] = None,
) -> SearchResult:
    """Hill-climbing over merges of any two same depth stages and extractions of one
    situation from a stage into a stage of its own.  Each iteration applies the best
    move of the whole tree.

    Args:
        tree: An X-compatible event tree.
        data: The rows or their grouped counts.
        config: Search settings.
        start_staging: Where to start, the saturated staging by default.
    """
    start = time.perf_counter()
    tree.require_x_compatible()
    grouped = _grouped(tree, data)
    scorer = _make_scorer(tree, grouped, config.score_kind)
    if start_staging is None:
        start_staging = saturated_staging(tree)
    partition = _partition_of(start_staging)
    current = scorer.score(partition)
    trace = []
    logger.info("Hill-climbing from score %r", current)

    for _ in range(config.max_iter):
        depths = range(len(partition))
        moves = itertools.chain(
            itertools.chain.from_iterable(_merges(tree, partition, d) for d in depths),
            itertools.chain.from_iterable(_splits(partition, d) for d in depths),
        )
        move, score = _best_move(scorer, partition, current, moves)
        if move is None or _improvement(score, current) <= config.score_epsilon:
            break
        depth = move.depth
        partition = partition[:depth] + (move.blocks,) + partition[depth + 1 :]
        current = scorer.score(partition)
        trace.append((f"{move.description} at depth {depth}", current))
        logger.debug("%s at depth %d, score %r", move.description, depth, current)

    return _finish(tree, grouped, config, scorer, partition, trace, start)


def stage_search(
    tree: EventTree,
    data: typing.Union[DataSet, GroupedCounts],
    config: SearchConfig,
) -> SearchResult:
    """Run the search selected by ``config.strategy`` from the saturated staging."""
    if config.strategy is Strategy.BHC:
        return bhc_stage_search(tree, data, config)
    return hc_stage_search(tree, data, config)


Learner = typing.Callable[[EventTree, DataSet], SearchResult]


def _orderings(
    k: int, max_orders: typing.Optional[int], seed: int
) -> typing.List[typing.Tuple[int, ...]]:
    if max_orders is None:
        if k > MAX_EXHAUSTIVE_VARIABLES:
            raise stmiss.SearchError(
                f"Refusing to enumerate all {math.factorial(k)} orderings of {k}"
                + " variables, request a sample with max_orders."
            )
        return list(itertools.permutations(range(k)))
    if max_orders < 1:
        raise stmiss.InvalidArgumentError(f"max_orders must be >= 1, got {max_orders}")
    if math.factorial(k) <= max_orders:
        return list(itertools.permutations(range(k)))

    rng = make_rng(seed)
    sampled: typing.Set[typing.Tuple[int, ...]] = set()
    while len(sampled) < max_orders:
        sampled.add(tuple(int(i) for i in rng.permutation(k)))
    return sorted(sampled)


def order_search(
    spec: VariableSpec,
    data: DataSet,
    config: SearchConfig,
    max_orders: typing.Optional[int] = None,
    learner: typing.Optional[Learner] = None,
) -> typing.Tuple[typing.Tuple[str, ...], SearchResult]:
    """Learn the event tree by trying variable orderings.  Each ordering gets its
    X-compatible tree and a staging search, and the best scoring ordering is returned.
    Ties go to the ordering enumerated first.

    Args:
        spec: The variables to order.
        data: Rows with columns in the order of `spec`.
        config: The staging search settings.
        max_orders: If given and smaller than the number of orderings, evaluate this
            many distinct orderings drawn with ``config.seed``.
        learner: Replaces the staging search, for example with structural EM.

    Raises:
        stmiss.SearchError: For more than eight variables without `max_orders`.
    """
    start = time.perf_counter()
    if len(data) == 0:
        raise stmiss.EmptyDataError("Can not search for an ordering without data.")

    best: typing.Optional[typing.Tuple[typing.Tuple[str, ...], SearchResult]] = None
    for ordering in _orderings(len(spec.names), max_orders, config.seed):
        names = tuple(spec.names[i] for i in ordering)
        reordered = data.reorder(names)
        tree = build_event_tree(reordered.spec)
        if learner is None:
            result = stage_search(tree, reordered, config)
        else:
            result = learner(tree, reordered)
        logger.debug("Ordering %s scored %r", names, result.score)
        if best is None or _improvement(result.score, best[1].score) > 0:
            best = (names, result)

    assert best is not None
    names, result = best
    return names, attr.evolve(result, elapsed=time.perf_counter() - start)
