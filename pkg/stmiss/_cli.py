import functools
import json
import logging
import math
import pathlib
import time
import typing

import attr
import click

import stmiss
import stmiss.generators
from stmiss._benchmark import BenchmarkPlan, run_benchmark
from stmiss._data import DEFAULT_NA_TOKEN, group_counts, read_csv
from stmiss._em import (
    EmConfig,
    EmVariant,
    Imputation,
    run_em,
    structural_em_order_search,
)
from stmiss._likelihood import LikelihoodKind, loglik
from stmiss._metrics import Metric, evaluate as evaluate_models
from stmiss._search import SearchConfig, Strategy, order_search, stage_search
from stmiss._serialize import load_model, save_model
from stmiss._simulate import (
    AmputeSpec,
    MissingMechanism,
    ampute as ampute_data,
    sample_data,
)
from stmiss._trees import build_event_tree


LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"
LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


def _reports_errors(fn: typing.Callable[..., None]) -> typing.Callable[..., None]:
    @functools.wraps(fn)
    def wrapper(*args: typing.Any, **kwargs: typing.Any) -> None:
        try:
            fn(*args, **kwargs)
        except stmiss.StmissException as error:
            raise click.ClickException(str(error)) from error

    return wrapper


def _jsonable(value: typing.Any) -> typing.Any:
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, dict):
        return {key: _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    return value


def _read_data(
    in_path: str, na_token: str, spec_from: typing.Optional[str]
) -> stmiss.DataSet:
    if spec_from is None:
        return read_csv(in_path, na_token=na_token)
    variables = stmiss.generators.resolve(spec_from).tree.require_x_compatible()
    return read_csv(in_path, na_token=na_token, spec=variables)


SPEC_FROM_HELP = "Bundled name or model JSON whose variables and level order to use."


def _emit(document: typing.Dict[str, typing.Any], out: typing.Optional[str]) -> None:
    text = json.dumps(_jsonable(document), indent=2)
    if out is None:
        click.echo(text)
    else:
        pathlib.Path(out).write_text(text + "\n", encoding="utf-8")


@click.group()
@click.option(
    "--log-level",
    envvar="STM_LOG",
    default="WARNING",
    show_default=True,
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    help="Logging verbosity, also read from STM_LOG.",
)
def cli(log_level: str) -> None:
    """stmiss - staged tree models learned from categorical data with missing values"""

    logging.basicConfig(level=log_level.upper(), format=LOG_FORMAT)


@cli.command()
@click.option("--model", "model_path", required=True, help="Bundled name or JSON path.")
@click.option("--n", "n", required=True, type=int, help="Number of rows.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--na", default=DEFAULT_NA_TOKEN, show_default=True, help="Missing token.")
@_reports_errors
def simulate(model_path: str, n: int, seed: int, out: str, na: str) -> None:
    """Sample complete rows from a staged tree model."""

    model = stmiss.generators.resolve(model_path)
    sample_data(model, n, seed=seed).write_csv(out, na_token=na)


@cli.command()
@click.option(
    "--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False)
)
@click.option("--p", "proportion", required=True, type=float, help="Fraction of cells.")
@click.option(
    "--mechanism",
    default="mcar",
    show_default=True,
    type=click.Choice([mechanism.value for mechanism in MissingMechanism]),
)
@click.option("--weights", default=None, help="Comma separated weight per variable.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--spec-from", default=None, help=SPEC_FROM_HELP)
@click.option("--na", default=DEFAULT_NA_TOKEN, show_default=True, help="Missing token.")
@_reports_errors
def ampute(
    in_path: str,
    proportion: float,
    mechanism: str,
    weights: typing.Optional[str],
    seed: int,
    out: str,
    na: str,
    spec_from: typing.Optional[str],
) -> None:
    """Remove values from complete data, at most one per row."""

    data = _read_data(in_path, na, spec_from)
    parsed = None
    if weights is not None:
        try:
            parsed = [float(weight) for weight in weights.split(",")]
        except ValueError as error:
            raise click.BadParameter(str(error), param_hint="--weights") from error
    spec = AmputeSpec(
        proportion=proportion,
        mechanism=MissingMechanism(mechanism),
        weights=parsed,
        seed=seed,
    )
    ampute_data(data, spec).write_csv(out, na_token=na)


SEARCH_ALGORITHMS = {"hc": Strategy.HC, "bhc": Strategy.BHC}
EM_ALGORITHMS = {variant.value: variant for variant in EmVariant}


@cli.command()
@click.option(
    "--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False)
)
@click.option(
    "--algo",
    default="hc",
    show_default=True,
    type=click.Choice([*SEARCH_ALGORITHMS, *EM_ALGORITHMS]),
)
@click.option(
    "--score",
    default=LikelihoodKind.FIRST_MISSING.value,
    show_default=True,
    type=click.Choice([kind.value for kind in LikelihoodKind]),
    help="The likelihood in the BIC score of hc and bhc.",
)
@click.option(
    "--order", default="fixed", show_default=True, type=click.Choice(["fixed", "search"])
)
@click.option("--max-orders", default=None, type=int, help="Sample this many orderings.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--epsilon", default=1e-9, show_default=True, type=float)
@click.option("--smooth", default=0.0, show_default=True, type=float, help="Laplace count.")
@click.option("--em-max-iter", default=50, show_default=True, type=int)
@click.option("--em-outer-iter", default=20, show_default=True, type=int)
@click.option("--em-tol", default=1e-6, show_default=True, type=float)
@click.option(
    "--impute",
    default=Imputation.ARGMAX.value,
    show_default=True,
    type=click.Choice([imputation.value for imputation in Imputation]),
)
@click.option(
    "--staging-from",
    default=None,
    type=click.Path(exists=True, dir_okay=False),
    help="Model whose tree and staging em-params and em-hard estimate.",
)
@click.option("--spec-from", default=None, help=SPEC_FROM_HELP)
@click.option("--na", default=DEFAULT_NA_TOKEN, show_default=True, help="Missing token.")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Model JSON.")
@click.option("--report", default=None, type=click.Path(dir_okay=False))
@click.option("--dump-groups", default=None, type=click.Path(dir_okay=False))
@_reports_errors
def fit(
    in_path: str,
    algo: str,
    score: str,
    order: str,
    max_orders: typing.Optional[int],
    seed: int,
    epsilon: float,
    smooth: float,
    em_max_iter: int,
    em_outer_iter: int,
    em_tol: float,
    impute: str,
    staging_from: typing.Optional[str],
    spec_from: typing.Optional[str],
    na: str,
    out: typing.Optional[str],
    report: typing.Optional[str],
    dump_groups: typing.Optional[str],
) -> None:
    """Learn a staged tree model from data with missing values.  The report goes to
    --report, or to standard output.
    """

    data = _read_data(in_path, na, spec_from)
    kind = LikelihoodKind(score)
    search = SearchConfig(
        score_kind=kind,
        strategy=SEARCH_ALGORITHMS.get(algo, Strategy.HC),
        seed=seed,
        score_epsilon=epsilon,
        smoothing=smooth,
    )
    document: typing.Dict[str, typing.Any] = {"algorithm": algo, "order": order}
    start = time.perf_counter()

    if algo in SEARCH_ALGORITHMS:
        if order == "search":
            _, result = order_search(data.spec, data, search, max_orders=max_orders)
        else:
            result = stage_search(build_event_tree(data.spec), data, search)
        model = result.model
        document.update(
            score_kind=kind.value, score=result.score, moves=len(result.trace)
        )
    else:
        config = EmConfig(
            variant=EM_ALGORITHMS[algo],
            max_iter=em_max_iter,
            tol=em_tol,
            seed=seed,
            impute=Imputation(impute),
            max_outer_iter=em_outer_iter,
            smoothing=smooth,
            search=search,
        )
        staging = None
        if staging_from is not None:
            template = load_model(staging_from)
            tree = template.tree
            staging = template.staging
            data = data.reorder(tree.require_x_compatible().names)
        else:
            tree = build_event_tree(data.spec)
        if order == "search" and algo not in ("em-params", "em-hard"):
            _, em_result = structural_em_order_search(
                data.spec, data, config, max_orders=max_orders
            )
        else:
            em_result = run_em(tree, data, config, staging=staging)
        model = em_result.model
        kind = LikelihoodKind.FULL_MISSING
        document.update(
            iterations=em_result.iterations,
            converged=em_result.converged,
            loglik_trace=list(em_result.loglik_trace),
            warnings=list(em_result.warnings),
        )

    spec = model.tree.require_x_compatible()
    reordered = data.reorder(spec.names)
    document.update(
        learn_time_s=time.perf_counter() - start,
        ordering=list(spec.names),
        n_stages=model.staging.n_stages,
        loglik=loglik(model, reordered, kind).to_dict(),
    )

    if out is not None:
        save_model(model, out)
    if dump_groups is not None:
        grouped = group_counts(model.tree, reordered)
        pathlib.Path(dump_groups).write_text(grouped.to_json() + "\n", encoding="utf-8")
    _emit(document, report)


@cli.command()
@click.option("--true", "true_path", required=True, help="Bundled name or JSON path.")
@click.option("--est", "estimate_path", required=True, type=click.Path(exists=True))
@click.option(
    "--metrics",
    default=",".join(metric.value for metric in Metric),
    show_default=True,
    help="Comma separated subset of hamming, kl, cd and kendall.",
)
@click.option("--out", default=None, type=click.Path(dir_okay=False))
@_reports_errors
def evaluate(
    true_path: str, estimate_path: str, metrics: str, out: typing.Optional[str]
) -> None:
    """Compare an estimated model to the model that generated its data."""

    try:
        selected = [Metric(name.strip().lower()) for name in metrics.split(",")]
    except ValueError as error:
        raise click.BadParameter(str(error), param_hint="--metrics") from error
    report = evaluate_models(
        stmiss.generators.resolve(true_path), load_model(estimate_path), metrics=selected
    )
    document = {
        key: value
        for key, value in report.to_dict().items()
        if key in {metric.value for metric in selected} or key == "cd_degenerate"
    }
    _emit(document, out)


@cli.command()
@click.option(
    "--plan", "plan_path", required=True, type=click.Path(exists=True, dir_okay=False)
)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Result CSV.")
@click.option("--jobs", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=None, type=int, help="Overrides the seed of the plan.")
@_reports_errors
def benchmark(plan_path: str, out: str, jobs: int, seed: typing.Optional[int]) -> None:
    """Run a simulation study and write one CSV row per run."""

    plan = BenchmarkPlan.from_json(plan_path)
    if seed is not None:
        plan = attr.evolve(plan, seed=seed)
    result = run_benchmark(plan, jobs=jobs)
    timing_path = result.write_csv(out)
    click.echo(f"Wrote {len(result.results)} rows to {out} and timings to {timing_path}")
