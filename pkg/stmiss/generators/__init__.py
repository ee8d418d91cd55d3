"""Generator models for simulation studies.

Each model is a staged tree over a handful of categorical variables shaped after a
classic data set: the number of variables, root-to-leaf paths and stages follow the
originals while the stagings and probabilities are stand-ins.

============  =========  =====  ======
name          variables  paths  stages
============  =========  =====  ======
``titanic``   4          32     13
``chds``      4          24     7
``bank``      4          16     8
``life``      5          72     17
``coronary``  6          64     14
============  =========  =====  ======
"""
import os
import pathlib
import typing

import stmiss
from stmiss._serialize import load_model
from stmiss._trees import StagedTreeModel


here = pathlib.Path(__file__).parent

names = ("titanic", "chds", "bank", "life", "coronary")


def path(name: str) -> pathlib.Path:
    """The JSON file of the bundled model `name`."""
    if name not in names:
        raise stmiss.InvalidArgumentError(
            f"Unknown generator {name!r}, expected one of {list(names)}"
        )
    return here / f"{name}.json"


def load(name: str) -> StagedTreeModel:
    """Load the bundled model `name`."""
    return load_model(path(name))


def resolve(reference: typing.Union[str, os.PathLike]) -> StagedTreeModel:
    """Load a bundled model by name or any model by file path."""
    if isinstance(reference, str) and reference in names:
        return load(reference)
    return load_model(reference)
