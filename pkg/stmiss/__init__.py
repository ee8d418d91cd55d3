"""Top-level package for stmiss."""

from ._version import __version__

from ._exceptions import (
    StmissException,
    AmputationError,
    DataParseError,
    DegenerateSupportError,
    EmptyDataError,
    InconsistentSampleError,
    InvalidArgumentError,
    InvalidProbabilitiesError,
    InvalidSpecError,
    InvalidStagingError,
    InvalidTreeError,
    MissingValuesError,
    ModelSchemaError,
    NotStageableError,
    PlanError,
    SearchError,
    UnestimatedModelError,
)

from ._trees import (
    build_event_tree,
    full_independence_staging,
    model_dimension,
    path_probability,
    saturated_staging,
    uniform_probabilities,
    validate_staging,
    EventTree,
    StagedTreeModel,
    Staging,
    TransitionProbabilities,
    VariableSpec,
)

from ._data import (
    complete_edge_counts,
    group_counts,
    path_codes,
    possible_paths,
    read_csv,
    row_path_ids,
    DataSet,
    EdgeCounts,
    Group,
    GroupedCounts,
    MISSING,
    PossiblePathSet,
    Sample,
)

from ._likelihood import (
    bic_score,
    counts_loglik,
    estimator_kind,
    fit,
    fit_mle,
    group_terms,
    loglik,
    loglik_complete,
    loglik_first_missing,
    loglik_full_missing,
    loglik_omit,
    loglik_stage_average,
    penalty_size,
    pseudo_edge_counts,
    LikelihoodKind,
    LogLikValue,
)

from ._search import (
    bhc_stage_search,
    hc_stage_search,
    order_search,
    stage_search,
    SearchConfig,
    SearchResult,
    Strategy,
)

from ._em import (
    expected_path_counts,
    hard_em_params,
    hard_impute,
    run_em,
    soft_em_params,
    structural_em,
    structural_em_order_search,
    EmConfig,
    EmInit,
    EmResult,
    EmVariant,
    Imputation,
)

from ._simulate import ampute, sample_data, AmputeSpec, MissingMechanism

from ._metrics import (
    cd_paths,
    evaluate,
    hamming_staging,
    kendall_orderings,
    kl_paths,
    Metric,
    MetricReport,
)

from ._serialize import (
    load_model,
    model_from_json,
    model_to_json,
    save_model,
)

from ._benchmark import (
    run_benchmark,
    Algorithm,
    BenchmarkPlan,
    BenchmarkResult,
    OrderMode,
)
