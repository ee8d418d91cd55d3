"""Distances between stagings, path distributions and variable orderings."""
import enum
import itertools
import logging
import math
import typing

import attr
import numpy
import scipy.special

import stmiss
from stmiss._trees import StagedTreeModel, Staging, build_event_tree


logger = logging.getLogger(__name__)


class Metric(enum.Enum):
    HAMMING = "hamming"
    KL = "kl"
    CD = "cd"
    KENDALL = "kendall"


ALL_METRICS = tuple(Metric)


def hamming_staging(a: Staging, b: Staging) -> float:
    """The fraction of unordered pairs of same depth situations that one staging puts
    in a common stage and the other does not.  Depths with a single situation offer no
    pairs.  Zero when there are no pairs at all.

    Raises:
        stmiss.InvalidStagingError: If the stagings are over different situations.
    """
    if a.situations != b.situations:
        raise stmiss.InvalidStagingError(
            "Can only compare stagings of the same event tree."
        )
    disagreeing = 0
    pairs = 0
    for stages_a, stages_b in zip(a.stages, b.stages):
        if len(stages_a) < 2:
            continue
        left = numpy.array(stages_a)
        right = numpy.array(stages_b)
        upper = numpy.triu_indices(len(left), k=1)
        same_a = (left[:, None] == left[None, :])[upper]
        same_b = (right[:, None] == right[None, :])[upper]
        disagreeing += int((same_a != same_b).sum())
        pairs += len(same_a)
    if pairs == 0:
        return 0.0
    return disagreeing / pairs


def _aligned_paths(
    p_model: StagedTreeModel, q_model: StagedTreeModel
) -> typing.Tuple[numpy.ndarray, numpy.ndarray]:
    """The path distributions of both models indexed by the paths of `p_model`.  Models
    over X-compatible trees of the same variables, in different orders or with their
    levels listed in different orders, are aligned by the joint configuration each path
    stands for.
    """
    p_tree = p_model.tree
    q_tree = q_model.tree
    if p_tree == q_tree:
        return p_model.path_probabilities(), q_model.path_probabilities()

    p_spec = p_tree.variables
    q_spec = q_tree.variables
    if p_spec is None or q_spec is None or sorted(p_spec.names) != sorted(q_spec.names):
        raise stmiss.InvalidTreeError("The models are over different event trees.")
    q_levels = q_spec.reorder(p_spec.names).levels
    if any(sorted(p) != sorted(q) for p, q in zip(p_spec.levels, q_levels)):
        raise stmiss.InvalidTreeError("The models give their variables different levels.")
    if build_event_tree(p_spec) != p_tree or build_event_tree(q_spec) != q_tree:
        raise stmiss.InvalidTreeError("Only full X-compatible trees can be realigned.")

    # paths of a full X-compatible tree are in lexicographic order of level indices
    joint = q_model.path_probabilities().reshape(q_spec.cardinalities)
    joint = joint.transpose([q_spec.names.index(name) for name in p_spec.names])
    for axis, (p_labels, q_labels) in enumerate(zip(p_spec.levels, q_levels)):
        joint = joint.take([q_labels.index(label) for label in p_labels], axis=axis)
    return p_model.path_probabilities(), joint.reshape(-1)


def kl_paths(p_model: StagedTreeModel, q_model: StagedTreeModel) -> float:
    """The Kullback-Leibler divergence, in nats, of the path distribution of the
    estimate `q_model` from that of the generator `p_model`.  Infinite when `q_model`
    gives zero probability to a path `p_model` supports.
    """
    p, q = _aligned_paths(p_model, q_model)
    return max(float(scipy.special.rel_entr(p, q).sum()), 0.0)


def cd_paths(p_model: StagedTreeModel, q_model: StagedTreeModel) -> float:
    """The Chan-Darwiche distance between the path distributions, the log of the
    largest ratio ``q / p`` minus the log of the smallest.  Infinite when either model
    gives some path probability zero.
    """
    p, q = _aligned_paths(p_model, q_model)
    if bool((p <= 0).any()) or bool((q <= 0).any()):
        return math.inf
    ratios = numpy.log(q) - numpy.log(p)
    return max(float(ratios.max() - ratios.min()), 0.0)


def kendall_orderings(a: typing.Sequence[str], b: typing.Sequence[str]) -> float:
    """The fraction of variable pairs the two orderings put in opposite order."""
    if sorted(a) != sorted(b) or len(set(a)) != len(a):
        raise stmiss.InvalidArgumentError(
            f"Orderings {list(a)} and {list(b)} are not of the same variables."
        )
    if len(a) < 2:
        return 0.0
    return discordant_pairs(a, b) / math.comb(len(a), 2)


def discordant_pairs(a: typing.Sequence[str], b: typing.Sequence[str]) -> int:
    """The number of variable pairs the two orderings put in opposite order."""
    position = {name: index for index, name in enumerate(b)}
    return sum(
        1
        for first, second in itertools.combinations(a, 2)
        if position[first] > position[second]
    )


def _in_unit_interval(
    instance: typing.Any, attribute: attr.Attribute, value: typing.Optional[float]
) -> None:
    if value is not None and not 0 <= value <= 1:
        raise stmiss.InvalidArgumentError(f"{attribute.name} must be in [0, 1], got {value}")


def _nonnegative(
    instance: typing.Any, attribute: attr.Attribute, value: typing.Optional[float]
) -> None:
    if value is not None and value < 0:
        raise stmiss.InvalidArgumentError(f"{attribute.name} must be >= 0, got {value}")


@attr.s(auto_attribs=True, frozen=True, slots=True)
class MetricReport:
    """How far an estimated model is from the model that generated its data.

    Attributes:
        hamming: The staging distance, when both models share an event tree.
        kl: The Kullback-Leibler divergence of the path distributions, when selected.
        cd: The Chan-Darwiche distance of the path distributions, when selected.
        kendall: The ordering distance, when orderings were compared.
        learn_time_s: The wall time of learning the estimate.
        cd_degenerate: True when `cd` is infinite because of a zero path probability.
    """

    kl: typing.Optional[float] = attr.ib(default=None, validator=_nonnegative)
    cd: typing.Optional[float] = attr.ib(default=None, validator=_nonnegative)
    hamming: typing.Optional[float] = attr.ib(default=None, validator=_in_unit_interval)
    kendall: typing.Optional[float] = attr.ib(default=None, validator=_in_unit_interval)
    learn_time_s: float = 0.0
    cd_degenerate: bool = False

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return attr.asdict(self)


def evaluate(
    true_model: StagedTreeModel,
    estimated_model: StagedTreeModel,
    learn_time_s: float = 0.0,
    metrics: typing.Iterable[Metric] = ALL_METRICS,
) -> MetricReport:
    """Compare an estimate to the generating model.  The staging distance needs both
    models on the same tree and is left out otherwise.  The ordering distance is taken
    between the variable orders of the two trees.
    """
    selected = frozenset(metrics)
    kl = kl_paths(true_model, estimated_model) if Metric.KL in selected else None
    cd = cd_paths(true_model, estimated_model) if Metric.CD in selected else None

    hamming = None
    if Metric.HAMMING in selected and true_model.tree == estimated_model.tree:
        hamming = hamming_staging(true_model.staging, estimated_model.staging)

    kendall = None
    true_spec = true_model.tree.variables
    estimated_spec = estimated_model.tree.variables
    if Metric.KENDALL in selected and true_spec is not None and estimated_spec is not None:
        kendall = kendall_orderings(true_spec.names, estimated_spec.names)

    return MetricReport(
        kl=kl,
        cd=cd,
        hamming=hamming,
        kendall=kendall,
        learn_time_s=learn_time_s,
        cd_degenerate=cd is not None and math.isinf(cd),
    )
