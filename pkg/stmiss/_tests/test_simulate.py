import numpy
import pytest
import scipy.stats

import stmiss
from stmiss._tests.helpers import make_spec, random_model


@pytest.fixture(name="mechanism", params=list(stmiss.MissingMechanism), ids=lambda m: m.value)
def mechanism_fixture(request):
    return request.param


@pytest.fixture(name="uniform_model")
def uniform_model_fixture():
    tree = stmiss.build_event_tree(make_spec([2, 3, 2, 2]))
    staging = stmiss.full_independence_staging(tree)
    return stmiss.StagedTreeModel(
        tree=tree, staging=staging, theta=stmiss.uniform_probabilities(tree, staging)
    )


@pytest.fixture(name="complete")
def complete_fixture(uniform_model):
    return stmiss.sample_data(uniform_model, 10_000, seed=1)


def test_sample_data_is_reproducible(rng):
    model = random_model(rng)

    first = stmiss.sample_data(model, 100, seed=3)
    second = stmiss.sample_data(model, 100, seed=3)

    assert first.equals(second)
    assert first.is_complete()
    assert first.spec == model.tree.variables


def test_sample_data_follows_path_probabilities(rng):
    model = random_model(rng, max_variables=2)

    data = stmiss.sample_data(model, 20_000, seed=2)

    frequencies = numpy.bincount(
        stmiss.row_path_ids(model.tree, data), minlength=model.tree.n_paths
    ) / len(data)
    assert frequencies == pytest.approx(model.path_probabilities(), abs=0.02)


def test_sample_data_passes_a_goodness_of_fit_test(uniform_model):
    data = stmiss.sample_data(uniform_model, 4800, seed=12)

    observed = numpy.bincount(
        stmiss.row_path_ids(uniform_model.tree, data),
        minlength=uniform_model.tree.n_paths,
    )

    assert scipy.stats.chisquare(observed).pvalue > 1e-3


def test_sample_data_needs_rows(uniform_model):
    with pytest.raises(stmiss.InvalidArgumentError):
        stmiss.sample_data(uniform_model, 0)


def test_sample_data_needs_variables():
    tree = stmiss.EventTree(parents=[-1, 0, 0], labels=["", "a", "b"])
    staging = stmiss.saturated_staging(tree)
    model = stmiss.StagedTreeModel(
        tree=tree, staging=staging, theta=stmiss.uniform_probabilities(tree, staging)
    )

    with pytest.raises(stmiss.NotStageableError):
        stmiss.sample_data(model, 10)


def test_ampute_hits_the_requested_proportion(complete, mechanism):
    """5% of 40000 cells is 2000 holes, 500 per variable, in 2000 distinct rows."""
    spec = stmiss.AmputeSpec(proportion=0.05, mechanism=mechanism, seed=4)

    amputed = stmiss.ampute(complete, spec)

    mask = amputed.missing_mask
    assert mask.sum() == 2000
    assert mask.sum(axis=0).tolist() == [500, 500, 500, 500]
    assert mask.any(axis=1).sum() == 2000
    assert mask.sum(axis=1).max() == 1


def test_ampute_only_removes_values(complete, mechanism):
    amputed = stmiss.ampute(
        complete, stmiss.AmputeSpec(proportion=0.1, mechanism=mechanism, seed=5)
    )

    kept = ~amputed.missing_mask
    assert (amputed.codes[kept] == complete.codes[kept]).all()


def test_ampute_spreads_remainder_over_first_variables(uniform_model):
    data = stmiss.sample_data(uniform_model, 10, seed=0)

    amputed = stmiss.ampute(data, stmiss.AmputeSpec(proportion=0.15, seed=1))

    # floor(0.15 * 10 * 4) = 6 holes
    assert amputed.missing_mask.sum(axis=0).tolist() == [2, 2, 1, 1]


def test_ampute_is_reproducible(complete, mechanism):
    spec = stmiss.AmputeSpec(proportion=0.05, mechanism=mechanism, seed=6)
    other = stmiss.AmputeSpec(proportion=0.05, mechanism=mechanism, seed=7)

    first = stmiss.ampute(complete, spec)

    assert first.equals(stmiss.ampute(complete, spec))
    assert not first.equals(stmiss.ampute(complete, other))


def test_mnar_removes_high_levels_more_often(complete):
    """With positive weights a value is more likely to go missing the higher its
    level index.
    """
    spec = stmiss.AmputeSpec(proportion=0.05, mechanism=stmiss.MissingMechanism.MNAR)

    amputed = stmiss.ampute(complete, spec)

    for column in range(complete.codes.shape[1]):
        levels = complete.codes[:, column]
        missing = amputed.missing_mask[:, column]
        assert missing[levels == levels.max()].mean() > missing[levels == 0].mean()


def test_mar_depends_on_the_other_variables(complete):
    spec = stmiss.AmputeSpec(
        proportion=0.05,
        mechanism=stmiss.MissingMechanism.MAR,
        weights=[0, 1, 0, 0],
    )

    amputed = stmiss.ampute(complete, spec)

    driver = complete.codes[:, 1]
    missing = amputed.missing_mask[:, 0]
    assert missing[driver == 2].mean() > missing[driver == 0].mean()


def test_mcar_does_not_depend_on_values(complete):
    amputed = stmiss.ampute(complete, stmiss.AmputeSpec(proportion=0.05, seed=8))

    levels = complete.codes[:, 0]
    missing = amputed.missing_mask[:, 0]
    assert missing[levels == 1].mean() == pytest.approx(
        missing[levels == 0].mean(), abs=0.03
    )


def test_ampute_needs_complete_data(complete):
    amputed = stmiss.ampute(complete, stmiss.AmputeSpec(proportion=0.05))

    with pytest.raises(stmiss.AmputationError):
        stmiss.ampute(amputed, stmiss.AmputeSpec(proportion=0.05))


def test_ampute_allows_one_hole_per_row(complete):
    with pytest.raises(stmiss.AmputationError):
        stmiss.ampute(complete, stmiss.AmputeSpec(proportion=0.3))


def test_ampute_checks_weights(complete):
    spec = stmiss.AmputeSpec(
        proportion=0.05, mechanism=stmiss.MissingMechanism.MAR, weights=[1, 2]
    )

    with pytest.raises(stmiss.InvalidArgumentError):
        stmiss.ampute(complete, spec)


@pytest.mark.parametrize(
    argnames=["proportion"],
    argvalues=[[0], [1], [-0.1]],
)
def test_ampute_spec_validates_proportion(proportion):
    with pytest.raises(stmiss.InvalidArgumentError):
        stmiss.AmputeSpec(proportion=proportion)
