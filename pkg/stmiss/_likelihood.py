"""The missing-data likelihood, its pseudo-likelihoods, maximum likelihood fitting and
BIC scoring.

Every pseudo-likelihood keeps, for each group of samples, a subset of the edges shared by
all of the group's possible paths.  :func:`group_terms` lists those shared edges once per
data set and :func:`pseudo_edge_counts` turns the kept ones into count tables, so each
pseudo-likelihood and its maximizer come from the same counts.
"""
import enum
import logging
import math
import typing

import attr
import numpy
import scipy.special

import stmiss
from stmiss._data import DataSet, EdgeCounts, GroupedCounts, group_counts, zero_counts
from stmiss._trees import EventTree, StagedTreeModel, TransitionProbabilities


logger = logging.getLogger(__name__)


class LikelihoodKind(enum.Enum):
    """The likelihood, or pseudo-likelihood, being evaluated or optimized."""

    FULL_MISSING = "full"
    COMPLETE = "complete"
    OMIT = "omit"
    FIRST_MISSING = "fm"
    STAGE_AVERAGE = "sa"


@attr.s(auto_attribs=True, frozen=True, slots=True)
class LogLikValue:
    """A log-likelihood along with what is needed to penalize it.

    Attributes:
        loglik: The log-likelihood, ``-math.inf`` when a traversed edge has probability
            zero.
        n_effective: The number of rows contributing.
        dim: The number of free parameters of the model.
        kind: Which likelihood this is.
        warnings: Human readable notes about degenerate evaluations.
    """

    loglik: float
    n_effective: int
    dim: int
    kind: LikelihoodKind
    warnings: typing.Tuple[str, ...] = ()

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "loglik": self.loglik,
            "n_effective": self.n_effective,
            "dim": self.dim,
            "kind": self.kind.value,
            "warnings": list(self.warnings),
        }


@attr.s(auto_attribs=True, frozen=True, slots=True)
class Term:
    """An edge depth at which all possible paths of a group share a label.

    Attributes:
        situations: The situations the paths leave from at this depth.
        label: The common outgoing label.
    """

    situations: typing.FrozenSet[int]
    label: str

    @property
    def is_single_situation(self) -> bool:
        return len(self.situations) == 1


@attr.s(auto_attribs=True, frozen=True, slots=True)
class GroupTerms:
    """The shared edges of one group of samples.

    Attributes:
        count: The number of samples in the group.
        terms: One :class:`Term` per edge depth where every possible path continues
            and shares a label.
        singleton: Whether the group has a single possible path.
    """

    count: int
    terms: typing.Tuple[Term, ...]
    singleton: bool


def group_terms(tree: EventTree, grouped: GroupedCounts) -> typing.Tuple[GroupTerms, ...]:
    """List, per group, the edge depths whose label is common to all possible paths.
    This depends on the tree but not on the staging.
    """
    result = []
    for group in grouped.groups:
        paths = [tree.paths[path] for path in group.paths.paths]
        shortest = min(len(path) for path in paths)
        terms = []
        for depth in range(1, shortest):
            labels = {tree.labels[path[depth]] for path in paths}
            if len(labels) == 1:
                (label,) = labels
                terms.append(
                    Term(
                        situations=frozenset(path[depth - 1] for path in paths),
                        label=label,
                    )
                )
        result.append(
            GroupTerms(
                count=group.count, terms=tuple(terms), singleton=len(paths) == 1
            )
        )
    return tuple(result)


def _as_grouped(model: StagedTreeModel, data: typing.Union[DataSet, GroupedCounts]) -> GroupedCounts:
    if isinstance(data, GroupedCounts):
        return data
    return group_counts(model.tree, data)


def term_included(
    kind: LikelihoodKind,
    group: GroupTerms,
    term: Term,
    stage_of: typing.Callable[[int], int],
) -> bool:
    """Whether a pseudo-likelihood keeps `term` of `group`."""
    if kind in (LikelihoodKind.OMIT, LikelihoodKind.COMPLETE):
        return group.singleton
    if kind is LikelihoodKind.FIRST_MISSING:
        return term.is_single_situation
    if kind is LikelihoodKind.STAGE_AVERAGE:
        return len({stage_of(situation) for situation in term.situations}) == 1
    raise stmiss.InvalidArgumentError(f"{kind} does not keep individual edges.")


def pseudo_edge_counts(
    model: StagedTreeModel,
    data: typing.Union[DataSet, GroupedCounts],
    kind: LikelihoodKind,
    terms: typing.Optional[typing.Sequence[GroupTerms]] = None,
) -> EdgeCounts:
    """The stage counts a pseudo-likelihood is built from.

    For ``OMIT`` and ``COMPLETE`` only groups with one possible path count, along their
    whole path.  ``FIRST_MISSING`` counts each group along the prefix shared by all its
    paths.  ``STAGE_AVERAGE`` counts each shared label whose situations all lie in one
    stage.

    Args:
        model: The tree and staging.
        data: The rows, or their grouped counts.
        kind: The pseudo-likelihood.
        terms: Precomputed :func:`group_terms`, for callers evaluating many stagings.
    """
    grouped = _as_grouped(model, data)
    if kind is LikelihoodKind.COMPLETE and not grouped.is_complete:
        raise stmiss.MissingValuesError(
            "The complete data likelihood needs rows without missing values."
        )
    if terms is None:
        terms = group_terms(model.tree, grouped)

    counts = zero_counts(model)
    stage_of = model.staging.stage_of
    for group in terms:
        for term in group.terms:
            if term_included(kind, group, term, stage_of):
                stage = stage_of(next(iter(term.situations)))
                counts[stage][term.label] += group.count
    return EdgeCounts(counts)


def fit_mle(
    model: StagedTreeModel, counts: EdgeCounts, smoothing: float = 0.0
) -> TransitionProbabilities:
    """Estimate the transition probabilities as smoothed relative frequencies.  A stage
    without counts and without smoothing gets the uniform distribution.

    Args:
        model: The tree and staging the counts belong to.
        counts: Counts per stage and outgoing label.
        smoothing: The pseudo count added to every edge, ``1`` for Laplace smoothing.
    """
    if smoothing < 0:
        raise stmiss.InvalidArgumentError(f"Smoothing must be >= 0, got {smoothing}")

    probabilities = {}
    for stage in model.staging.stage_ids:
        labels = model.stage_labels(stage)
        values = numpy.array(
            [counts[stage].get(label, 0.0) + smoothing for label in labels]
        )
        total = values.sum()
        if total > 0:
            values = values / total
        else:
            values = numpy.full(len(labels), 1 / len(labels))
        probabilities[stage] = dict(zip(labels, values.tolist()))
    return TransitionProbabilities(probabilities)


def counts_loglik(model: StagedTreeModel, counts: EdgeCounts) -> float:
    """``sum n log(theta)`` over stages and labels, where ``0 log 0`` is zero."""
    theta = model.require_theta()
    n = []
    p = []
    for stage in model.staging.stage_ids:
        for label, probability in theta[stage].items():
            n.append(counts[stage].get(label, 0.0))
            p.append(probability)
    return float(numpy.sum(scipy.special.xlogy(n, p)))


def _decomposable(
    model: StagedTreeModel,
    grouped: GroupedCounts,
    kind: LikelihoodKind,
    n_effective: int,
    warnings: typing.Tuple[str, ...] = (),
) -> LogLikValue:
    model.require_theta()
    counts = pseudo_edge_counts(model, grouped, kind)
    return LogLikValue(
        loglik=counts_loglik(model, counts),
        n_effective=n_effective,
        dim=model.dimension,
        kind=kind,
        warnings=warnings,
    )


def loglik_complete(model: StagedTreeModel, data: typing.Union[DataSet, GroupedCounts]) -> LogLikValue:
    """The likelihood of complete data, factorized over stages.

    Raises:
        stmiss.MissingValuesError: If any value is missing.
    """
    grouped = _as_grouped(model, data)
    return _decomposable(model, grouped, LikelihoodKind.COMPLETE, grouped.total)


def group_masses(model: StagedTreeModel, grouped: GroupedCounts) -> numpy.ndarray:
    """The probability mass of each group's possible paths."""
    return typing.cast(numpy.ndarray, grouped.incidence() @ model.path_probabilities())


def loglik_full_missing(model: StagedTreeModel, grouped: GroupedCounts) -> LogLikValue:
    """The exact likelihood of data with missing values: each group contributes the
    log of the summed probability of its possible paths, times its size.  The
    probability of the missingness pattern itself is left out as a constant.
    """
    model.require_theta()
    if len(grouped.groups) == 0:
        loglik = 0.0
    else:
        loglik = float(
            numpy.sum(scipy.special.xlogy(grouped.counts(), group_masses(model, grouped)))
        )
    return LogLikValue(
        loglik=loglik,
        n_effective=grouped.total,
        dim=model.dimension,
        kind=LikelihoodKind.FULL_MISSING,
    )


def loglik_omit(model: StagedTreeModel, grouped: GroupedCounts) -> LogLikValue:
    """The likelihood of the rows without missing values only."""
    n_effective = grouped.complete_total
    warnings: typing.Tuple[str, ...] = ()
    if n_effective == 0:
        warnings = ("no complete rows, the omit likelihood is empty",)
        logger.warning("Omit likelihood evaluated without complete rows")
    return _decomposable(model, grouped, LikelihoodKind.OMIT, n_effective, warnings)


def loglik_first_missing(model: StagedTreeModel, grouped: GroupedCounts) -> LogLikValue:
    """Each group contributes the edges of the longest prefix common to all of its
    possible paths, so a row is used up to its first missing value.
    """
    return _decomposable(
        model, grouped, LikelihoodKind.FIRST_MISSING, grouped.total
    )


def loglik_stage_average(model: StagedTreeModel, grouped: GroupedCounts) -> LogLikValue:
    """Each group contributes every shared label whose source situations all belong to
    one stage, wherever it lies on the paths.
    """
    return _decomposable(
        model, grouped, LikelihoodKind.STAGE_AVERAGE, grouped.total
    )


def loglik(
    model: StagedTreeModel,
    data: typing.Union[DataSet, GroupedCounts],
    kind: LikelihoodKind,
) -> LogLikValue:
    """Evaluate the likelihood of the given kind."""
    grouped = _as_grouped(model, data)
    if kind is LikelihoodKind.FULL_MISSING:
        return loglik_full_missing(model, grouped)
    if kind is LikelihoodKind.COMPLETE:
        return loglik_complete(model, grouped)
    if kind is LikelihoodKind.OMIT:
        return loglik_omit(model, grouped)
    if kind is LikelihoodKind.FIRST_MISSING:
        return loglik_first_missing(model, grouped)
    return loglik_stage_average(model, grouped)


def estimator_kind(kind: LikelihoodKind) -> LikelihoodKind:
    """The pseudo-likelihood whose closed form maximizer estimates θ for `kind`.  The
    exact likelihood has no closed form maximizer so it borrows the stage-average one.
    """
    if kind is LikelihoodKind.FULL_MISSING:
        return LikelihoodKind.STAGE_AVERAGE
    return kind


def fit(
    model: StagedTreeModel,
    data: typing.Union[DataSet, GroupedCounts],
    kind: LikelihoodKind,
    smoothing: float = 0.0,
) -> StagedTreeModel:
    """Return `model` with θ maximizing the pseudo-likelihood `kind`."""
    counts = pseudo_edge_counts(model, data, estimator_kind(kind))
    return model.with_theta(fit_mle(model, counts, smoothing=smoothing))


def penalty_size(kind: LikelihoodKind, grouped: GroupedCounts) -> int:
    """The sample size used in the BIC penalty.  The omit likelihood only sees the
    complete rows, the others see every row.
    """
    if kind is LikelihoodKind.OMIT:
        return grouped.complete_total
    return grouped.total


def bic_score(ll: LogLikValue, n_for_penalty: int) -> float:
    """The Bayesian information criterion, higher is better.

    Raises:
        stmiss.InvalidArgumentError: If `n_for_penalty` is less than one.
    """
    if n_for_penalty < 1:
        raise stmiss.InvalidArgumentError(
            f"The BIC penalty needs a sample size of at least 1, got {n_for_penalty}"
        )
    if ll.loglik == -math.inf:
        return -math.inf
    return ll.loglik - 0.5 * math.log(n_for_penalty) * ll.dim
