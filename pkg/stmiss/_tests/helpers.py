"""Random models and data shared by the test modules."""
import itertools
import typing

import numpy

import stmiss


def make_spec(cardinalities: typing.Sequence[int]) -> stmiss.VariableSpec:
    """Variables ``X0, X1, ...`` with levels ``l0, l1, ...``."""
    return stmiss.VariableSpec(
        names=[f"X{index}" for index in range(len(cardinalities))],
        levels=[[f"l{level}" for level in range(k)] for k in cardinalities],
    )


def random_staging(
    rng: numpy.random.Generator, tree: stmiss.EventTree, max_stages: int = 3
) -> stmiss.Staging:
    stages = [
        [int(key) for key in rng.integers(0, max_stages, size=len(situations))]
        for situations in tree.situations_by_depth
    ]
    return stmiss.Staging.build(situations=tree.situations_by_depth, stages=stages)


def random_theta(
    rng: numpy.random.Generator, tree: stmiss.EventTree, staging: stmiss.Staging
) -> stmiss.TransitionProbabilities:
    probabilities = {}
    for stage in staging.stage_ids:
        labels = tree.floret_labels(staging.members(stage)[0])
        values = rng.dirichlet(numpy.ones(len(labels)))
        probabilities[stage] = dict(zip(labels, values.tolist()))
    return stmiss.TransitionProbabilities(probabilities)


def random_model(
    rng: numpy.random.Generator,
    max_variables: int = 4,
    max_levels: int = 3,
) -> stmiss.StagedTreeModel:
    """A model over 1 to `max_variables` variables with random staging and θ."""
    n_variables = int(rng.integers(1, max_variables + 1))
    cardinalities = [int(k) for k in rng.integers(2, max_levels + 1, size=n_variables)]
    tree = stmiss.build_event_tree(make_spec(cardinalities))
    staging = random_staging(rng, tree)
    return stmiss.StagedTreeModel(
        tree=tree, staging=staging, theta=random_theta(rng, tree, staging)
    )


def punch_holes(
    rng: numpy.random.Generator, data: stmiss.DataSet, fraction: float
) -> stmiss.DataSet:
    """Make each cell missing independently with probability `fraction`."""
    codes = numpy.array(data.codes)
    codes[rng.random(codes.shape) < fraction] = -1
    return stmiss.DataSet(spec=data.spec, codes=codes)


def completion_oracle(model: stmiss.StagedTreeModel, data: stmiss.DataSet) -> float:
    """The missing-data log-likelihood by enumerating the completions of every row."""
    spec = data.spec
    total = 0.0
    for row in data.codes.tolist():
        choices = [
            range(k) if code < 0 else [code]
            for code, k in zip(row, spec.cardinalities)
        ]
        mass = 0.0
        for completion in itertools.product(*choices):
            labels = [spec.levels[column][code] for column, code in enumerate(completion)]
            vertex = 0
            probability = 1.0
            for label in labels:
                stage = model.staging.stage_of(vertex)
                probability *= model.require_theta()[stage][label]
                vertex = model.tree.child(vertex, label)
            mass += probability
        total += numpy.log(mass)
    return float(total)


