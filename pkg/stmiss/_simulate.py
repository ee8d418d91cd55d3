"""Forward sampling from staged tree models and amputation of complete data."""
import enum
import logging
import math
import typing

import attr
import numpy
import scipy.special

import stmiss
from stmiss._data import DataSet, path_codes
from stmiss._python import make_rng
from stmiss._trees import StagedTreeModel


logger = logging.getLogger(__name__)


class MissingMechanism(enum.Enum):
    """How the chance of a value going missing depends on the data."""

    MCAR = "mcar"
    MAR = "mar"
    MNAR = "mnar"


def _proportion(instance: typing.Any, attribute: attr.Attribute, value: float) -> None:
    if not 0 < value < 1:
        raise stmiss.InvalidArgumentError(
            f"The missingness proportion must be in (0, 1), got {value}"
        )


def _optional_weights(
    value: typing.Optional[typing.Iterable[float]],
) -> typing.Optional[typing.Tuple[float, ...]]:
    if value is None:
        return None
    return tuple(float(weight) for weight in value)


@attr.s(auto_attribs=True, frozen=True, slots=True)
class AmputeSpec:
    """How to remove values from a complete data set.

    Attributes:
        proportion: The fraction of all cells to make missing.
        mechanism: The missingness mechanism.
        weights: One weight per variable for the MAR and MNAR scores, all ones by
            default.
        seed: Seeds the selection of cells.
    """

    proportion: float = attr.ib(validator=_proportion)
    mechanism: MissingMechanism = MissingMechanism.MCAR
    weights: typing.Optional[typing.Tuple[float, ...]] = attr.ib(
        default=None, converter=_optional_weights
    )
    seed: int = 0


def sample_data(
    model: StagedTreeModel, n: int, seed: typing.Optional[int] = None
) -> DataSet:
    """Draw `n` independent rows from an estimated model over an X-compatible tree.
    Each row follows one root-to-leaf path, drawn with its path probability.
    """
    if n < 1:
        raise stmiss.InvalidArgumentError(f"Can not sample {n} rows, need at least one.")
    tree = model.tree
    spec = tree.require_x_compatible()
    probabilities = model.path_probabilities()
    probabilities = probabilities / probabilities.sum()

    rng = make_rng(seed)
    paths = rng.choice(tree.n_paths, size=n, p=probabilities)
    logger.debug("Sampled %d rows from %d paths", n, tree.n_paths)
    return DataSet(spec=spec, codes=path_codes(tree)[paths])


def _standardized(scores: numpy.ndarray) -> numpy.ndarray:
    spread = scores.std()
    if spread == 0:
        return numpy.zeros(len(scores))
    return typing.cast(numpy.ndarray, (scores - scores.mean()) / spread)


def _selection_weights(
    codes: numpy.ndarray,
    target: int,
    mechanism: MissingMechanism,
    weights: numpy.ndarray,
) -> numpy.ndarray:
    if mechanism is MissingMechanism.MCAR:
        return numpy.ones(len(codes))
    if mechanism is MissingMechanism.MNAR:
        scores = weights[target] * codes[:, target]
    else:
        others = numpy.delete(numpy.arange(codes.shape[1]), target)
        scores = codes[:, others] @ weights[others]
    return typing.cast(
        numpy.ndarray, scipy.special.expit(_standardized(scores.astype(float)))
    )


def _weighted_sample(
    rng: numpy.random.Generator, weights: numpy.ndarray, size: int
) -> numpy.ndarray:
    # keys log(u) / w, keep the largest
    keys = numpy.log(rng.random(len(weights))) / weights
    return typing.cast(numpy.ndarray, numpy.argsort(-keys, kind="stable")[:size])


def ampute(data: DataSet, spec: AmputeSpec) -> DataSet:
    """Remove values from complete `data`, at most one per row, so that a fraction
    ``spec.proportion`` of all cells is missing.  The holes are split equally over the
    variables, the first variables taking any remainder.

    Rows are shuffled into one candidate group per variable.  Within the group of a
    variable, rows are picked without replacement with weight:

    * MCAR: one for every row.
    * MAR: the logistic function of the standardized weighted sum of the level indices
      of the other variables.
    * MNAR: the logistic function of the standardized weighted level index of the
      variable itself.

    Raises:
        stmiss.AmputationError: If `data` already has missing values or more than one
            hole per row would be needed.
    """
    if not data.is_complete():
        raise stmiss.AmputationError("Can only ampute complete data.")
    n_rows, n_variables = data.codes.shape
    if spec.proportion * n_variables > 1:
        raise stmiss.AmputationError(
            f"A proportion of {spec.proportion} over {n_variables} variables needs more"
            + " than one missing value per row."
        )
    if spec.weights is None:
        weights = numpy.ones(n_variables)
    elif len(spec.weights) != n_variables:
        raise stmiss.InvalidArgumentError(
            f"Got {len(spec.weights)} weights for {n_variables} variables."
        )
    else:
        weights = numpy.array(spec.weights)

    n_holes = math.floor(spec.proportion * n_rows * n_variables + 1e-9)
    per_variable = [
        n_holes // n_variables + (1 if target < n_holes % n_variables else 0)
        for target in range(n_variables)
    ]

    rng = make_rng(spec.seed)
    groups = numpy.array_split(rng.permutation(n_rows), n_variables)
    codes = numpy.array(data.codes)
    for target, (group, size) in enumerate(zip(groups, per_variable)):
        selection = _selection_weights(
            data.codes[group], target, spec.mechanism, weights
        )
        chosen = group[_weighted_sample(rng, selection, size)]
        codes[chosen, target] = -1

    logger.info(
        "Amputed %d of %d rows (%s, p=%r)",
        n_holes,
        n_rows,
        spec.mechanism.value,
        spec.proportion,
    )
    return attr.evolve(data, codes=codes)
