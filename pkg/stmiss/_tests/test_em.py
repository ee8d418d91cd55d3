import math

import numpy
import pytest

import stmiss
from stmiss._em import STRUCTURAL_VARIANTS
from stmiss._tests.helpers import punch_holes, random_model


def saturated_model(tree, theta):
    return stmiss.StagedTreeModel(
        tree=tree,
        staging=stmiss.saturated_staging(tree),
        theta=stmiss.TransitionProbabilities(theta),
    )


@pytest.fixture(name="skewed_model")
def skewed_model_fixture(binary_tree):
    return saturated_model(
        binary_tree,
        {
            0: {"a0": 0.3, "a1": 0.7},
            1: {"b0": 0.75, "b1": 0.25},
            2: {"b0": 0.5, "b1": 0.5},
        },
    )


@pytest.fixture(
    name="structural_variant",
    params=sorted(STRUCTURAL_VARIANTS, key=lambda variant: variant.value),
    ids=lambda variant: variant.value,
)
def structural_variant_fixture(request):
    return request.param


def test_expected_path_counts_split_by_path_probability(binary_tree, skewed_model):
    """A row missing B after a0 is shared between its two completions."""
    data = stmiss.DataSet.from_rows(binary_tree.variables, [["a0", None]])

    counts = stmiss.expected_path_counts(
        skewed_model, stmiss.group_counts(binary_tree, data)
    )

    assert counts.tolist() == pytest.approx([0.75, 0.25, 0, 0])


def test_expected_path_counts_conserve_rows(rng):
    """Each row spreads exactly its own weight over its possible paths."""
    for _ in range(50):
        model = random_model(rng)
        data = punch_holes(rng, stmiss.sample_data(model, 40, seed=7), fraction=0.3)

        counts = stmiss.expected_path_counts(
            model, stmiss.group_counts(model.tree, data)
        )

        assert counts.sum() == pytest.approx(40)
        assert (counts >= 0).all()


def test_expected_path_counts_report_zero_mass(binary_tree):
    model = saturated_model(
        binary_tree,
        {0: {"a0": 1.0, "a1": 0.0}, 1: {"b0": 0.5, "b1": 0.5}, 2: {"b0": 0.5, "b1": 0.5}},
    )
    data = stmiss.DataSet.from_rows(binary_tree.variables, [["a0", "b0"], ["a1", None]])

    with pytest.raises(stmiss.DegenerateSupportError) as info:
        stmiss.expected_path_counts(model, stmiss.group_counts(binary_tree, data))

    assert info.value.group == 1


def test_soft_em_reaches_the_fixed_point():
    """Three yes, two no and two missing: the maximizer is 3/5 for yes."""
    spec = stmiss.VariableSpec(names=["X"], levels=[["yes", "no"]])
    tree = stmiss.build_event_tree(spec)
    data = stmiss.DataSet.from_rows(spec, [["yes"]] * 3 + [["no"]] * 2 + [[None]] * 2)
    config = stmiss.EmConfig(max_iter=200, tol=1e-14)

    result = stmiss.soft_em_params(tree, stmiss.saturated_staging(tree), data, config)

    assert result.converged
    assert result.model.theta[0]["yes"] == pytest.approx(0.6, abs=1e-6)


def test_soft_em_stops_at_a_fixed_point(rng):
    """One more E and M step after convergence barely moves θ."""
    tol = 1e-8
    config = stmiss.EmConfig(max_iter=5000, tol=tol)
    for _ in range(10):
        model = random_model(rng, max_variables=3)
        data = punch_holes(rng, stmiss.sample_data(model, 100, seed=5), fraction=0.2)
        grouped = stmiss.group_counts(model.tree, data)

        result = stmiss.soft_em_params(model.tree, model.staging, data, config)
        fitted = result.model
        counts = stmiss.complete_edge_counts(
            fitted, stmiss.expected_path_counts(fitted, grouped)
        )
        refitted = stmiss.fit_mle(fitted, counts)

        assert result.converged
        for stage, distribution in fitted.theta.to_dict().items():
            for label, probability in distribution.items():
                assert abs(refitted[stage][label] - probability) < 10 * tol


def test_soft_em_log_likelihood_never_decreases(rng):
    for _ in range(30):
        model = random_model(rng, max_variables=3)
        data = punch_holes(rng, stmiss.sample_data(model, 60, seed=9), fraction=0.3)
        tree = model.tree

        result = stmiss.soft_em_params(
            tree, model.staging, data, stmiss.EmConfig(max_iter=30)
        )

        trace = result.loglik_trace
        assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))
        assert result.iterations == len(trace)


def test_soft_em_on_complete_data_is_one_fit(binary_tree):
    data = stmiss.DataSet.from_rows(
        binary_tree.variables, [["a0", "b0"], ["a0", "b1"], ["a1", "b1"], ["a1", "b1"]]
    )
    staging = stmiss.saturated_staging(binary_tree)

    result = stmiss.soft_em_params(binary_tree, staging, data, stmiss.EmConfig())

    assert result.iterations == 1
    assert result.converged
    assert result.model.theta.to_dict() == {
        0: {"a0": 0.5, "a1": 0.5},
        1: {"b0": 0.5, "b1": 0.5},
        2: {"b0": 0.0, "b1": 1.0},
    }


def test_soft_em_without_complete_rows_starts_uniform(binary_tree):
    data = stmiss.DataSet.from_rows(binary_tree.variables, [["a0", None], [None, "b1"]])
    tree = binary_tree

    result = stmiss.soft_em_params(
        tree, stmiss.full_independence_staging(tree), data, stmiss.EmConfig()
    )

    assert any("uniform" in warning for warning in result.warnings)
    assert math.isfinite(result.loglik_trace[-1])


def test_hard_impute_takes_most_probable_completion(binary_tree, skewed_model):
    data = stmiss.DataSet.from_rows(
        binary_tree.variables, [["a0", None], [None, "b0"], ["a1", "b1"]]
    )

    imputed = stmiss.hard_impute(skewed_model, data)

    # a1 b0 has 0.35 against 0.225 for a0 b0
    assert imputed.codes.tolist() == [[0, 0], [1, 0], [1, 1]]


def test_hard_impute_breaks_ties_by_lowest_path(binary_tree):
    staging = stmiss.saturated_staging(binary_tree)
    model = stmiss.StagedTreeModel(
        tree=binary_tree,
        staging=staging,
        theta=stmiss.uniform_probabilities(binary_tree, staging),
    )
    data = stmiss.DataSet.from_rows(binary_tree.variables, [[None, None], ["a1", None]])

    imputed = stmiss.hard_impute(model, data)

    assert imputed.codes.tolist() == [[0, 0], [1, 0]]


def test_random_imputation_is_seeded(binary_tree, skewed_model):
    rows = [[None, None]] * 200
    data = stmiss.DataSet.from_rows(binary_tree.variables, rows)

    first = stmiss.hard_impute(skewed_model, data, seed=4, method=stmiss.Imputation.RANDOM)
    second = stmiss.hard_impute(skewed_model, data, seed=4, method=stmiss.Imputation.RANDOM)

    assert first.equals(second)
    assert first.is_complete()
    assert len(numpy.unique(first.codes, axis=0)) > 1


def test_hard_impute_leaves_complete_data_alone(binary_tree, skewed_model):
    data = stmiss.DataSet.from_rows(binary_tree.variables, [["a1", "b0"]])

    assert stmiss.hard_impute(skewed_model, data) is data


def test_hard_em_stops_on_a_stable_completion(binary_tree):
    """The first completion differs from the raw data, the second repeats the first."""
    rows = [["a0", "b0"]] * 8 + [["a0", "b1"]] * 2 + [["a1", "b1"]] * 5 + [["a0", None]]
    data = stmiss.DataSet.from_rows(binary_tree.variables, rows)
    config = stmiss.EmConfig(variant=stmiss.EmVariant.PARAM_HARD)

    result = stmiss.run_em(binary_tree, data, config)

    assert result.iterations == 2
    assert result.converged
    assert result.imputed_data.codes.tolist()[-1] == [0, 0]
    assert result.model.theta[1]["b0"] == pytest.approx(9 / 11)


def test_hard_em_reports_an_iteration_cap(binary_tree):
    rows = [["a0", "b0"]] * 8 + [["a0", "b1"]] * 2 + [["a1", "b1"]] * 5 + [["a0", None]]
    data = stmiss.DataSet.from_rows(binary_tree.variables, rows)
    config = stmiss.EmConfig(variant=stmiss.EmVariant.PARAM_HARD, max_iter=1)

    result = stmiss.run_em(binary_tree, data, config)

    assert result.iterations == 1
    assert not result.converged
    assert result.imputed_data.is_complete()


def test_hard_em_on_complete_data_takes_one_iteration(binary_tree):
    data = stmiss.DataSet.from_rows(binary_tree.variables, [["a0", "b0"], ["a1", "b1"]])
    config = stmiss.EmConfig(variant=stmiss.EmVariant.PARAM_HARD)

    result = stmiss.run_em(binary_tree, data, config)

    assert result.iterations == 1
    assert result.imputed_data is data


def test_run_em_keeps_the_given_staging(binary_tree):
    data = stmiss.DataSet.from_rows(
        binary_tree.variables, [["a0", "b0"], ["a1", None], ["a0", "b1"]]
    )
    staging = stmiss.full_independence_staging(binary_tree)

    result = stmiss.run_em(binary_tree, data, stmiss.EmConfig(), staging=staging)

    assert result.model.staging == staging


def test_structural_em_on_complete_data_is_a_staging_search(binary_tree, structural_variant):
    """Without missing values one iteration of structural EM is a complete data
    search.
    """
    data = stmiss.DataSet.from_rows(
        binary_tree.variables,
        [["a0", "b0"]] * 30 + [["a0", "b1"]] * 30 + [["a1", "b0"]] * 30 + [["a1", "b1"]] * 30,
    )
    config = stmiss.EmConfig(variant=structural_variant)

    result = stmiss.structural_em(binary_tree, data, config)
    expected = stmiss.stage_search(binary_tree, data, config.search_config())

    assert result.iterations == 1
    assert result.converged
    assert result.model.staging == expected.model.staging
    assert result.model.theta.to_dict() == expected.model.theta.to_dict()


def test_structural_em_selects_stagings_with_missing_values(rng, structural_variant):
    model = random_model(rng, max_variables=3)
    data = punch_holes(rng, stmiss.sample_data(model, 150, seed=8), fraction=0.1)
    config = stmiss.EmConfig(variant=structural_variant, max_outer_iter=5)

    result = stmiss.structural_em(model.tree, data, config)

    assert 1 <= result.iterations <= 5
    assert result.imputed_data.is_complete()
    assert len(result.loglik_trace) == result.iterations
    stmiss.validate_staging(model.tree, result.model.staging)


def test_structural_em_rejects_parameter_variants(binary_tree):
    data = stmiss.DataSet.from_rows(binary_tree.variables, [["a0", "b0"]])

    with pytest.raises(stmiss.InvalidArgumentError):
        stmiss.structural_em(binary_tree, data, stmiss.EmConfig())


def test_em_needs_rows(binary_tree):
    data = stmiss.DataSet(spec=binary_tree.variables, codes=numpy.zeros((0, 2)))

    with pytest.raises(stmiss.EmptyDataError):
        stmiss.run_em(binary_tree, data, stmiss.EmConfig())


def test_em_config_validates():
    with pytest.raises(stmiss.InvalidArgumentError):
        stmiss.EmConfig(max_iter=0)


def test_search_config_of_structural_em_scores_completed_data():
    config = stmiss.EmConfig(variant=stmiss.EmVariant.STRUCT_EM_BHC, smoothing=0.5)

    search = config.search_config()

    assert search.score_kind is stmiss.LikelihoodKind.COMPLETE
    assert search.strategy is stmiss.Strategy.BHC
    assert search.smoothing == 0.5


def test_structural_em_order_search_returns_the_winning_run():
    spec = stmiss.VariableSpec(
        names=["B", "C"], levels=[["b0", "b1"], ["c0", "c1", "c2"]]
    )
    rows = [["b0", "c0"]] * 40 + [["b0", "c1"]] * 40 + [["b1", "c2"]] * 80 + [[None, "c2"]]
    data = stmiss.DataSet.from_rows(spec, rows)
    config = stmiss.EmConfig(variant=stmiss.EmVariant.STRUCT_EM_HC)

    names, result = stmiss.structural_em_order_search(spec, data, config)

    assert names == ("C", "B")
    assert result.model.tree.variables.names == ("C", "B")
    assert result.imputed_data.is_complete()


@pytest.mark.slow
def test_structural_em_converges_on_mostly_complete_data():
    generator = stmiss.generators.load("bank")
    config = stmiss.EmConfig(variant=stmiss.EmVariant.STRUCT_EM_HC, max_outer_iter=50)
    converged = 0
    for seed in range(25):
        complete = stmiss.sample_data(generator, 5000, seed=seed)
        data = stmiss.ampute(complete, stmiss.AmputeSpec(proportion=0.05, seed=seed + 100))

        result = stmiss.structural_em(generator.tree, data, config)

        converged += result.converged

    assert converged >= 23
