"""EM estimation of transition probabilities and structural EM selection of stagings."""
import enum
import logging
import math
import time
import typing

import attr
import numpy

import stmiss
from stmiss._data import (
    DataSet,
    GroupedCounts,
    _check_columns,
    _pattern_paths,
    complete_edge_counts,
    group_counts,
    path_codes,
)
from stmiss._likelihood import (
    LikelihoodKind,
    bic_score,
    fit_mle,
    group_masses,
    loglik_full_missing,
    pseudo_edge_counts,
)
from stmiss._python import derive_seed, make_rng
from stmiss._search import (
    SearchConfig,
    SearchResult,
    Strategy,
    bhc_stage_search,
    hc_stage_search,
    order_search,
)
from stmiss._trees import (
    EventTree,
    StagedTreeModel,
    Staging,
    TransitionProbabilities,
    VariableSpec,
    saturated_staging,
    uniform_probabilities,
)


logger = logging.getLogger(__name__)

RESMOOTHING = 1e-6


class EmVariant(enum.Enum):
    """Which EM algorithm to run."""

    PARAM_SOFT = "em-params"
    PARAM_HARD = "em-hard"
    STRUCT_EM_HC = "em-hc"
    STRUCT_EM_BHC = "em-bhc"
    STRUCT_EM_SIMPLE = "em-simple"


STRUCTURAL_VARIANTS = frozenset(
    [EmVariant.STRUCT_EM_HC, EmVariant.STRUCT_EM_BHC, EmVariant.STRUCT_EM_SIMPLE]
)


class EmInit(enum.Enum):
    """How the initial transition probabilities are chosen."""

    OMIT_MLE_SMOOTHED = "omit"
    UNIFORM = "uniform"


class Imputation(enum.Enum):
    """How hard EM completes a row: the most probable completion or a seeded draw."""

    ARGMAX = "argmax"
    RANDOM = "random"


def _positive(instance: typing.Any, attribute: attr.Attribute, value: typing.Any) -> None:
    if not value > 0:
        raise stmiss.InvalidArgumentError(f"{attribute.name} must be > 0, got {value}")


@attr.s(auto_attribs=True, frozen=True, slots=True)
class EmConfig:
    """Settings for the EM routines.

    Attributes:
        variant: The algorithm.
        max_iter: The iteration cap of parameter EM.
        tol: Soft EM stops once the log-likelihood and every entry of θ change by less
            than this.
        init: How θ is initialised.
        seed: Seeds random imputation.
        impute: How hard EM completes rows.
        max_outer_iter: The iteration cap of structural EM.
        smoothing: The pseudo count of every M step.
        search: The staging search settings of the structural M step, whose score kind
            is always the complete data likelihood.
    """

    variant: EmVariant = EmVariant.PARAM_SOFT
    max_iter: int = attr.ib(default=50, validator=_positive)
    tol: float = attr.ib(default=1e-6, validator=_positive)
    init: EmInit = EmInit.OMIT_MLE_SMOOTHED
    seed: int = 0
    impute: Imputation = Imputation.ARGMAX
    max_outer_iter: int = attr.ib(default=20, validator=_positive)
    smoothing: float = 0.0
    search: SearchConfig = attr.ib(factory=SearchConfig)

    def search_config(self) -> SearchConfig:
        strategy = Strategy.BHC if self.variant is EmVariant.STRUCT_EM_BHC else Strategy.HC
        return attr.evolve(
            self.search,
            score_kind=LikelihoodKind.COMPLETE,
            strategy=strategy,
            smoothing=self.smoothing,
        )


@attr.s(auto_attribs=True, frozen=True, slots=True, eq=False)
class EmResult:
    """The outcome of an EM run.

    Attributes:
        model: The final model.
        iterations: The number of iterations run.
        loglik_trace: The missing-data log-likelihood after each iteration.
        converged: False if the iteration cap stopped the run.
        imputed_data: The last completed data set, for the hard variants.
        warnings: Notes about fallbacks taken during the run.
    """

    model: StagedTreeModel
    iterations: int
    loglik_trace: typing.Tuple[float, ...]
    converged: bool
    imputed_data: typing.Optional[DataSet] = None
    warnings: typing.Tuple[str, ...] = ()


def expected_path_counts(model: StagedTreeModel, grouped: GroupedCounts) -> numpy.ndarray:
    """Spread every group over its possible paths in proportion to their current
    probabilities and sum, giving real valued counts per path id.

    Raises:
        stmiss.DegenerateSupportError: If all possible paths of a group have
            probability zero.
    """
    paths = model.path_probabilities()
    if len(grouped.groups) == 0:
        return numpy.zeros(len(paths))
    incidence = grouped.incidence()
    masses = incidence @ paths
    empty = numpy.flatnonzero(masses <= 0)
    if len(empty) > 0:
        raise stmiss.DegenerateSupportError(
            f"Group {empty[0]} has no probability mass on its possible paths",
            group=int(empty[0]),
        )
    weights = grouped.counts() / masses
    return typing.cast(numpy.ndarray, paths * (incidence.T @ weights))


def initial_theta(
    model: StagedTreeModel, grouped: GroupedCounts, init: EmInit
) -> typing.Tuple[TransitionProbabilities, typing.Tuple[str, ...]]:
    """θ⁽⁰⁾: the Laplace smoothed fit on the complete rows, or uniform if requested or
    if no row is complete.
    """
    if init is EmInit.OMIT_MLE_SMOOTHED:
        if grouped.complete_total > 0:
            counts = pseudo_edge_counts(model, grouped, LikelihoodKind.OMIT)
            return fit_mle(model, counts, smoothing=1.0), ()
        message = "no complete rows, initialising EM with uniform probabilities"
        logger.warning(message)
        return uniform_probabilities(model.tree, model.staging), (message,)
    return uniform_probabilities(model.tree, model.staging), ()


def _resmoothed(model: StagedTreeModel) -> StagedTreeModel:
    theta = model.require_theta()
    probabilities = {}
    for stage in theta.stage_ids:
        raw = {label: p + RESMOOTHING for label, p in theta[stage].items()}
        total = math.fsum(raw.values())
        probabilities[stage] = {label: p / total for label, p in raw.items()}
    return model.with_theta(TransitionProbabilities(probabilities))


def _initial_model(
    tree: EventTree, staging: Staging, grouped: GroupedCounts, config: EmConfig
) -> typing.Tuple[StagedTreeModel, typing.List[str]]:
    model = StagedTreeModel(tree=tree, staging=staging)
    theta, notes = initial_theta(model, grouped, config.init)
    model = model.with_theta(theta)
    warnings = list(notes)
    if bool((group_masses(model, grouped) <= 0).any()):
        message = "initial probabilities give a sample zero mass, using uniform ones"
        logger.warning(message)
        warnings.append(message)
        model = model.with_theta(uniform_probabilities(tree, staging))
    return model, warnings


def _require_rows(data: DataSet) -> None:
    if len(data) == 0:
        raise stmiss.EmptyDataError("EM needs at least one row.")


def _largest_change(
    before: TransitionProbabilities, after: TransitionProbabilities
) -> float:
    return max(
        abs(after[stage][label] - probability)
        for stage in before.stage_ids
        for label, probability in before[stage].items()
    )


def soft_em_params(
    tree: EventTree, staging: Staging, data: DataSet, config: EmConfig
) -> EmResult:
    """Estimate θ for a fixed staging by EM on the expected path counts.  Iterates until
    both the missing-data log-likelihood and every entry of θ change by less than
    ``config.tol``, or ``config.max_iter`` iterations have run.
    """
    _require_rows(data)
    grouped = group_counts(tree, data)
    model, warnings = _initial_model(tree, staging, grouped, config)
    previous = loglik_full_missing(model, grouped).loglik
    trace = []
    converged = False
    resmoothed = False

    for iteration in range(1, config.max_iter + 1):
        try:
            path_counts = expected_path_counts(model, grouped)
        except stmiss.DegenerateSupportError:
            if not resmoothed:
                message = f"zero mass group at iteration {iteration}, re-smoothing θ"
                logger.warning(message)
                warnings.append(message)
                resmoothed = True
            model = _resmoothed(model)
            path_counts = expected_path_counts(model, grouped)

        counts = complete_edge_counts(model, path_counts)
        theta = fit_mle(model, counts, smoothing=config.smoothing)
        shift = _largest_change(model.require_theta(), theta)
        model = model.with_theta(theta)
        current = loglik_full_missing(model, grouped).loglik
        trace.append(current)
        logger.debug(
            "Soft EM iteration %d, log-likelihood %r, largest θ change %r",
            iteration,
            current,
            shift,
        )

        # without incomplete rows the expected counts do not depend on θ
        if grouped.is_complete or (
            abs(current - previous) < config.tol and shift < config.tol
        ):
            converged = True
            break
        previous = current

    return EmResult(
        model=model,
        iterations=len(trace),
        loglik_trace=tuple(trace),
        converged=converged,
        warnings=tuple(warnings),
    )


def hard_impute(
    model: StagedTreeModel,
    data: DataSet,
    seed: typing.Optional[int] = None,
    method: Imputation = Imputation.ARGMAX,
) -> DataSet:
    """Complete every incomplete row along one of its possible paths.  By default the
    most probable path is taken, the lowest path id on ties, so all rows sharing a
    pattern get the same completion.  With ``Imputation.RANDOM`` each row draws its path
    in proportion to the path probabilities, using `seed`.
    """
    tree = model.tree
    spec = tree.require_x_compatible()
    _check_columns(tree, data.spec)
    incomplete = numpy.flatnonzero(data.missing_mask.any(axis=1))
    if len(incomplete) == 0:
        return data

    paths = model.path_probabilities()
    codes_by_path = path_codes(tree)
    codes = numpy.array(data.codes)
    patterns, inverse = numpy.unique(
        data.codes[incomplete], axis=0, return_inverse=True
    )
    inverse = inverse.reshape(-1)
    grouped_paths = [paths.paths for paths in _pattern_paths(tree, spec, patterns)]
    rng = make_rng(seed)

    for index, candidates in enumerate(grouped_paths):
        rows = incomplete[inverse == index]
        masses = paths[list(candidates)]
        if method is Imputation.ARGMAX:
            chosen = numpy.full(len(rows), candidates[int(numpy.argmax(masses))])
        else:
            total = masses.sum()
            weights = masses / total if total > 0 else numpy.full(len(masses), 1 / len(masses))
            chosen = numpy.array(candidates)[rng.choice(len(candidates), size=len(rows), p=weights)]
        codes[rows] = codes_by_path[chosen]

    return attr.evolve(data, codes=codes)


def _imputation_seed(config: EmConfig, iteration: int) -> typing.Optional[int]:
    if config.impute is Imputation.ARGMAX:
        return None
    return derive_seed(config.seed, iteration)


def hard_em_params(
    tree: EventTree, staging: Staging, data: DataSet, config: EmConfig
) -> EmResult:
    """Estimate θ for a fixed staging by alternating imputation and fitting.  Stops once
    an imputation reproduces the previous completed data, the raw data for the first
    iteration, or after ``config.max_iter`` iterations.
    """
    _require_rows(data)
    grouped = group_counts(tree, data)
    model, warnings = _initial_model(tree, staging, grouped, config)
    previous = data
    completed = data
    trace = []
    converged = False

    for iteration in range(1, config.max_iter + 1):
        completed = hard_impute(
            model, data, seed=_imputation_seed(config, iteration), method=config.impute
        )
        counts = complete_edge_counts(model, completed)
        model = model.with_theta(fit_mle(model, counts, smoothing=config.smoothing))
        trace.append(loglik_full_missing(model, grouped).loglik)
        logger.debug("Hard EM iteration %d, log-likelihood %r", iteration, trace[-1])
        if completed.equals(previous):
            converged = True
            break
        previous = completed

    return EmResult(
        model=model,
        iterations=len(trace),
        loglik_trace=tuple(trace),
        converged=converged,
        imputed_data=completed,
        warnings=tuple(warnings),
    )


def structural_em(tree: EventTree, data: DataSet, config: EmConfig) -> EmResult:
    """Select a staging by structural EM.  Each iteration completes the data with the
    current model and searches for the best staging of the completed data: from the
    saturated staging for ``STRUCT_EM_HC`` and ``STRUCT_EM_BHC``, from the previous
    staging for ``STRUCT_EM_SIMPLE``.  Stops when the staging, or the completed data,
    no longer changes, or after ``config.max_outer_iter`` iterations.
    """
    if config.variant not in STRUCTURAL_VARIANTS:
        raise stmiss.InvalidArgumentError(
            f"{config.variant} is not a structural EM variant."
        )
    tree.require_x_compatible()
    _require_rows(data)
    grouped = group_counts(tree, data)
    model, warnings = _initial_model(tree, saturated_staging(tree), grouped, config)
    search = config.search_config()
    previous_data = data
    completed = data
    trace = []
    converged = False

    for iteration in range(1, config.max_outer_iter + 1):
        completed = hard_impute(
            model, data, seed=_imputation_seed(config, iteration), method=config.impute
        )
        if config.variant is EmVariant.STRUCT_EM_BHC:
            result = bhc_stage_search(tree, completed, search)
        elif config.variant is EmVariant.STRUCT_EM_SIMPLE:
            result = hc_stage_search(tree, completed, search, start_staging=model.staging)
        else:
            result = hc_stage_search(tree, completed, search)

        unchanged = result.model.staging == model.staging
        model = result.model
        trace.append(loglik_full_missing(model, grouped).loglik)
        logger.debug(
            "Structural EM iteration %d, %d stages, log-likelihood %r",
            iteration,
            model.staging.n_stages,
            trace[-1],
        )
        if unchanged or completed.equals(previous_data):
            converged = True
            break
        previous_data = completed

    return EmResult(
        model=model,
        iterations=len(trace),
        loglik_trace=tuple(trace),
        converged=converged,
        imputed_data=completed,
        warnings=tuple(warnings),
    )


def run_em(
    tree: EventTree,
    data: DataSet,
    config: EmConfig,
    staging: typing.Optional[Staging] = None,
) -> EmResult:
    """Dispatch on ``config.variant``.  Parameter variants use `staging`, the saturated
    one by default.
    """
    if config.variant in STRUCTURAL_VARIANTS:
        return structural_em(tree, data, config)
    if staging is None:
        staging = saturated_staging(tree)
    if config.variant is EmVariant.PARAM_HARD:
        return hard_em_params(tree, staging, data, config)
    return soft_em_params(tree, staging, data, config)


def em_score(result: EmResult, grouped: GroupedCounts) -> float:
    """The BIC of an EM result under the exact missing-data likelihood."""
    return bic_score(loglik_full_missing(result.model, grouped), max(grouped.total, 1))


def structural_em_order_search(
    spec: VariableSpec,
    data: DataSet,
    config: EmConfig,
    max_orders: typing.Optional[int] = None,
) -> typing.Tuple[typing.Tuple[str, ...], EmResult]:
    """Learn the event tree with structural EM inside every ordering.  Orderings are
    compared by the BIC of the exact missing-data likelihood of their final models,
    which is comparable across orderings as it is evaluated on the same rows.
    """
    results: typing.Dict[typing.Tuple[str, ...], EmResult] = {}

    def learner(tree: EventTree, reordered: DataSet) -> SearchResult:
        start = time.perf_counter()
        result = structural_em(tree, reordered, config)
        results[tree.require_x_compatible().names] = result
        return SearchResult(
            model=result.model,
            score=em_score(result, group_counts(tree, reordered)),
            trace=(),
            elapsed=time.perf_counter() - start,
        )

    ordering, _ = order_search(
        spec, data, config.search_config(), max_orders=max_orders, learner=learner
    )
    return ordering, results[ordering]
