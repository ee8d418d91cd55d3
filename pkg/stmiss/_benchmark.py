"""Simulation studies comparing structure learning algorithms on amputed data."""
import enum
import functools
import itertools
import json
import logging
import os
import pathlib
import time
import typing

import async_generator
import attr
import outcome
import pandas
import trio

import stmiss
import stmiss.generators
from stmiss._data import DataSet
from stmiss._em import EmConfig, EmVariant, structural_em, structural_em_order_search
from stmiss._likelihood import LikelihoodKind
from stmiss._metrics import MetricReport, evaluate
from stmiss._python import derive_seed
from stmiss._search import SearchConfig, Strategy, order_search, stage_search
from stmiss._simulate import AmputeSpec, MissingMechanism, ampute, sample_data
from stmiss._trees import StagedTreeModel, build_event_tree


logger = logging.getLogger(__name__)


class Algorithm(enum.Enum):
    """The structure learning algorithms a benchmark can compare.  The ``full`` ones
    learn from the data before amputation.
    """

    FULL_HC = "full-hc"
    FULL_BHC = "full-bhc"
    OM_HC = "om-hc"
    OM_BHC = "om-bhc"
    FM_HC = "fm-hc"
    FM_BHC = "fm-bhc"
    EM_HC = "em-hc"
    EM_BHC = "em-bhc"
    EM_SIMPLE = "em-simple"


class OrderMode(enum.Enum):
    """Whether the variable ordering is given or learned."""

    FIXED = "fixed"
    SEARCH = "search"


_searches = {
    Algorithm.FULL_HC: (LikelihoodKind.COMPLETE, Strategy.HC),
    Algorithm.FULL_BHC: (LikelihoodKind.COMPLETE, Strategy.BHC),
    Algorithm.OM_HC: (LikelihoodKind.OMIT, Strategy.HC),
    Algorithm.OM_BHC: (LikelihoodKind.OMIT, Strategy.BHC),
    Algorithm.FM_HC: (LikelihoodKind.FIRST_MISSING, Strategy.HC),
    Algorithm.FM_BHC: (LikelihoodKind.FIRST_MISSING, Strategy.BHC),
}

_em_variants = {
    Algorithm.EM_HC: EmVariant.STRUCT_EM_HC,
    Algorithm.EM_BHC: EmVariant.STRUCT_EM_BHC,
    Algorithm.EM_SIMPLE: EmVariant.STRUCT_EM_SIMPLE,
}

RESULT_COLUMNS = (
    "model",
    "n",
    "p",
    "mechanism",
    "replicate",
    "algorithm",
    "order",
    "n_stages",
    "hamming",
    "kl",
    "cd",
    "cd_degenerate",
    "kendall",
    "error",
)

TIMING_COLUMNS = (
    "model",
    "n",
    "p",
    "mechanism",
    "replicate",
    "algorithm",
    "learn_time_s",
)


def _nonempty(instance: typing.Any, attribute: attr.Attribute, value: typing.Any) -> None:
    if len(value) == 0:
        raise stmiss.PlanError(f"{attribute.name} must not be empty.")


def _enum_tuple(
    kind: typing.Type[enum.Enum],
) -> typing.Callable[[typing.Iterable[typing.Any]], typing.Tuple[typing.Any, ...]]:
    def convert(values: typing.Iterable[typing.Any]) -> typing.Tuple[typing.Any, ...]:
        result = []
        for value in values:
            try:
                result.append(kind(value.lower() if isinstance(value, str) else value))
            except ValueError:
                raise stmiss.PlanError(
                    f"{value!r} is not one of {[member.value for member in kind]}"
                ) from None
        return tuple(result)

    return convert


def _order_mode(value: typing.Any) -> OrderMode:
    try:
        return OrderMode(value)
    except ValueError:
        raise stmiss.PlanError(
            f"{value!r} is not one of {[member.value for member in OrderMode]}"
        ) from None


@attr.s(auto_attribs=True, frozen=True, slots=True)
class BenchmarkPlan:
    """The grid of conditions of a simulation study.

    Attributes:
        models: Bundled generator names or model JSON paths.
        sizes: Sample sizes.
        proportions: Missingness proportions.
        mechanisms: Missingness mechanisms.
        algorithms: The algorithms to compare.
        replicates: Runs per condition.
        seed: The base seed every run derives its own from.
        order: Whether the variable ordering is given or learned.
        max_orders: Caps the number of orderings tried when learning the order.
        max_outer_iter: The iteration cap of structural EM.
    """

    models: typing.Tuple[str, ...] = attr.ib(converter=tuple, validator=_nonempty)
    sizes: typing.Tuple[int, ...] = attr.ib(converter=tuple, validator=_nonempty)
    proportions: typing.Tuple[float, ...] = attr.ib(converter=tuple, validator=_nonempty)
    mechanisms: typing.Tuple[MissingMechanism, ...] = attr.ib(
        converter=_enum_tuple(MissingMechanism), validator=_nonempty
    )
    algorithms: typing.Tuple[Algorithm, ...] = attr.ib(
        converter=_enum_tuple(Algorithm), validator=_nonempty
    )
    replicates: int = 1
    seed: int = 0
    order: OrderMode = attr.ib(default=OrderMode.FIXED, converter=_order_mode)
    max_orders: typing.Optional[int] = None
    max_outer_iter: int = 20

    def __attrs_post_init__(self) -> None:
        if self.replicates < 1:
            raise stmiss.PlanError(f"replicates must be >= 1, got {self.replicates}")
        if any(n < 1 for n in self.sizes):
            raise stmiss.PlanError(f"Sample sizes must be >= 1, got {self.sizes}")
        if any(not 0 < p < 1 for p in self.proportions):
            raise stmiss.PlanError(f"Proportions must be in (0, 1), got {self.proportions}")
        if self.order is OrderMode.SEARCH and Algorithm.EM_SIMPLE in self.algorithms:
            raise stmiss.PlanError(
                "em-simple has no starting model when the ordering is learned."
            )

    @classmethod
    def from_dict(cls, document: typing.Mapping[str, typing.Any]) -> "BenchmarkPlan":
        try:
            return cls(**document)
        except TypeError as error:
            raise stmiss.PlanError(f"Malformed plan: {error}") from error

    @classmethod
    def from_json(cls, path: typing.Union[str, os.PathLike]) -> "BenchmarkPlan":
        """Load a plan from a JSON object whose keys are the attribute names."""
        try:
            document = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as error:
            raise stmiss.PlanError(f"{os.fspath(path)} is not valid JSON: {error}") from error
        if not isinstance(document, dict):
            raise stmiss.PlanError("A plan must be a JSON object.")
        return cls.from_dict(document)


@attr.s(auto_attribs=True, frozen=True, slots=True)
class Condition:
    """One cell of the plan grid, with the indices its seeds derive from."""

    model_index: int
    size_index: int
    proportion_index: int
    mechanism_index: int
    replicate: int


def conditions(plan: BenchmarkPlan) -> typing.List[Condition]:
    """Every condition and replicate of `plan`, in output order."""
    return [
        Condition(*indices)
        for indices in itertools.product(
            range(len(plan.models)),
            range(len(plan.sizes)),
            range(len(plan.proportions)),
            range(len(plan.mechanisms)),
            range(plan.replicates),
        )
    ]


def data_seed(plan: BenchmarkPlan, condition: Condition) -> int:
    """The sampling seed, shared by every proportion and mechanism of a replicate."""
    return derive_seed(
        plan.seed, condition.model_index, condition.size_index, condition.replicate
    )


def ampute_seed(plan: BenchmarkPlan, condition: Condition) -> int:
    return derive_seed(
        plan.seed,
        condition.model_index,
        condition.size_index,
        condition.replicate,
        condition.proportion_index,
        condition.mechanism_index,
    )


def learn(
    algorithm: Algorithm,
    complete: DataSet,
    amputed: DataSet,
    order: OrderMode = OrderMode.FIXED,
    max_orders: typing.Optional[int] = None,
    max_outer_iter: int = 20,
) -> StagedTreeModel:
    """Learn a model with `algorithm`.  The ``full`` algorithms see `complete`, all
    others see `amputed`.
    """
    if algorithm in _searches:
        kind, strategy = _searches[algorithm]
        data = complete if kind is LikelihoodKind.COMPLETE else amputed
        config = SearchConfig(score_kind=kind, strategy=strategy)
        if order is OrderMode.SEARCH:
            _, result = order_search(data.spec, data, config, max_orders=max_orders)
        else:
            result = stage_search(build_event_tree(data.spec), data, config)
        return result.model

    em_config = EmConfig(variant=_em_variants[algorithm], max_outer_iter=max_outer_iter)
    if order is OrderMode.SEARCH:
        _, em_result = structural_em_order_search(
            amputed.spec, amputed, em_config, max_orders=max_orders
        )
    else:
        em_result = structural_em(build_event_tree(amputed.spec), amputed, em_config)
    return em_result.model


@attr.s(auto_attribs=True, frozen=True, slots=True)
class RunRecord:
    """The outcome of one algorithm on one condition and replicate."""

    condition: Condition
    algorithm: Algorithm
    result: outcome.Outcome
    learn_time_s: float = 0.0


def _learn_and_evaluate(
    generator: StagedTreeModel,
    algorithm: Algorithm,
    complete: DataSet,
    amputed: DataSet,
    plan: BenchmarkPlan,
) -> typing.Tuple[StagedTreeModel, MetricReport]:
    start = time.perf_counter()
    model = learn(
        algorithm,
        complete,
        amputed,
        order=plan.order,
        max_orders=plan.max_orders,
        max_outer_iter=plan.max_outer_iter,
    )
    elapsed = time.perf_counter() - start
    return model, evaluate(generator, model, learn_time_s=elapsed)


def run_condition(
    plan: BenchmarkPlan,
    condition: Condition,
    generators: typing.Sequence[StagedTreeModel],
) -> typing.List[RunRecord]:
    """Sample, ampute and run every algorithm of `plan` for one condition.  Failures
    are captured per algorithm so the others still run.
    """
    generator = generators[condition.model_index]
    spec = AmputeSpec(
        proportion=plan.proportions[condition.proportion_index],
        mechanism=plan.mechanisms[condition.mechanism_index],
        seed=ampute_seed(plan, condition),
    )

    def prepare() -> typing.Tuple[DataSet, DataSet]:
        complete = sample_data(
            generator, plan.sizes[condition.size_index], seed=data_seed(plan, condition)
        )
        return complete, ampute(complete, spec)

    prepared = outcome.capture(prepare)
    records = []
    for algorithm in plan.algorithms:
        if isinstance(prepared, outcome.Error):
            records.append(
                RunRecord(condition=condition, algorithm=algorithm, result=prepared)
            )
            continue
        complete, amputed = prepared.value
        result = outcome.capture(
            _learn_and_evaluate, generator, algorithm, complete, amputed, plan
        )
        learn_time_s = 0.0
        if isinstance(result, outcome.Value):
            learn_time_s = result.value[1].learn_time_s
        else:
            logger.warning(
                "%s failed on %s: %r", algorithm.value, condition, result.error
            )
        records.append(
            RunRecord(
                condition=condition,
                algorithm=algorithm,
                result=result,
                learn_time_s=learn_time_s,
            )
        )
    logger.info("Finished %s", condition)
    return records


@attr.s(auto_attribs=True)
class WorkerNursery:
    """Runs blocking callables in worker threads, at most `limiter` at a time, and
    stores their results by index.

    Attributes:
        nursery: The Trio nursery the worker tasks run in.
        limiter: Caps the number of busy threads.
        results: The result of each started callable, by index.
    """

    nursery: trio.Nursery
    limiter: trio.CapacityLimiter
    results: typing.Dict[int, typing.Any] = attr.ib(factory=dict)

    def start_soon(self, index: int, fn: typing.Callable[[], typing.Any]) -> None:
        async def run() -> None:
            self.results[index] = await trio.to_thread.run_sync(fn, limiter=self.limiter)

        self.nursery.start_soon(run)


@async_generator.asynccontextmanager
async def open_worker_nursery(jobs: int) -> typing.AsyncGenerator[WorkerNursery, None]:
    """Open a nursery whose blocking work runs in at most `jobs` threads.  Exiting waits
    for every started callable.
    """
    if jobs < 1:
        raise stmiss.InvalidArgumentError(f"jobs must be >= 1, got {jobs}")
    async with trio.open_nursery() as nursery:
        yield WorkerNursery(nursery=nursery, limiter=trio.CapacityLimiter(jobs))


async def run_benchmark_async(plan: BenchmarkPlan, jobs: int = 1) -> typing.List[RunRecord]:
    generators = [stmiss.generators.resolve(reference) for reference in plan.models]
    grid = conditions(plan)
    logger.info("Running %d conditions with %d jobs", len(grid), jobs)

    async with open_worker_nursery(jobs) as workers:
        for index, condition in enumerate(grid):
            workers.start_soon(
                index, functools.partial(run_condition, plan, condition, generators)
            )

    return [record for index in range(len(grid)) for record in workers.results[index]]


@attr.s(auto_attribs=True, frozen=True, slots=True, eq=False)
class BenchmarkResult:
    """The result and timing tables of a benchmark.

    Attributes:
        results: One row per condition, replicate and algorithm, in plan order.
        timings: The learn time of every row of `results`.
    """

    results: pandas.DataFrame
    timings: pandas.DataFrame

    def write_csv(self, path: typing.Union[str, os.PathLike]) -> pathlib.Path:
        """Write the results to `path` and the timings next to it, returning the timing
        file path.  Results are byte identical across reruns of a plan.
        """
        path = pathlib.Path(path)
        timing_path = timing_path_for(path)
        self.results.to_csv(path, index=False, lineterminator="\n")
        self.timings.to_csv(timing_path, index=False, lineterminator="\n")
        return timing_path


def timing_path_for(path: typing.Union[str, os.PathLike]) -> pathlib.Path:
    """``results.csv`` keeps its timings in ``results.timing.csv``."""
    path = pathlib.Path(path)
    return path.with_name(f"{path.stem}.timing.csv")


def _format_error(error: BaseException) -> str:
    return f"{type(error).__name__}: {error}"


def tabulate(plan: BenchmarkPlan, records: typing.Sequence[RunRecord]) -> BenchmarkResult:
    rows = []
    timings = []
    for record in records:
        condition = record.condition
        keys = {
            "model": plan.models[condition.model_index],
            "n": plan.sizes[condition.size_index],
            "p": plan.proportions[condition.proportion_index],
            "mechanism": plan.mechanisms[condition.mechanism_index].value,
            "replicate": condition.replicate,
            "algorithm": record.algorithm.value,
        }
        row: typing.Dict[str, typing.Any] = dict(keys, order=plan.order.value)
        if isinstance(record.result, outcome.Value):
            model, report = record.result.value
            row.update(
                n_stages=model.staging.n_stages,
                hamming=report.hamming,
                kl=report.kl,
                cd=report.cd,
                cd_degenerate=report.cd_degenerate,
                kendall=report.kendall,
                error="",
            )
        else:
            row["error"] = _format_error(record.result.error)
        rows.append(row)
        timings.append(dict(keys, learn_time_s=record.learn_time_s))

    return BenchmarkResult(
        results=pandas.DataFrame(rows, columns=list(RESULT_COLUMNS)),
        timings=pandas.DataFrame(timings, columns=list(TIMING_COLUMNS)),
    )


def run_benchmark(plan: BenchmarkPlan, jobs: int = 1) -> BenchmarkResult:
    """Run every condition of `plan`, `jobs` at a time.  Rows come out in plan order
    whatever order runs finish in.
    """
    records = trio.run(run_benchmark_async, plan, jobs)
    return tabulate(plan, records)
