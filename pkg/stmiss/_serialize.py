"""Reading and writing staged tree models as JSON documents.

A document holds the variables of an X-compatible tree, or the raw tree for general
trees, the stage id of every situation depth by depth and, once estimated, the
transition probabilities of every stage keyed by stage id::

    {
        "format": "stmiss.model",
        "version": 1,
        "variables": [{"name": "Sex", "levels": ["Male", "Female"]}, ...],
        "staging": [[0], [1, 1], [2, 3, 3, 4], ...],
        "theta": {"0": {"Male": 0.5, "Female": 0.5}, "1": {...}, ...}
    }

Stage ids are shared by the whole tree, so an id names situations of one depth only.
Written documents number stages the way :class:`Staging` does.  ``staging`` defaults to
the saturated staging and ``theta`` may be absent or null.  Any other key is an error.
"""
import json
import math
import os
import typing

import stmiss
from stmiss._trees import (
    EventTree,
    StagedTreeModel,
    Staging,
    TransitionProbabilities,
    VariableSpec,
    build_event_tree,
    saturated_staging,
)


FORMAT = "stmiss.model"
VERSION = 1
KEYS = frozenset(["format", "version", "variables", "tree", "staging", "theta"])

Document = typing.Dict[str, typing.Any]


def model_to_dict(model: StagedTreeModel) -> Document:
    """Describe `model` as plain JSON compatible values."""
    tree = model.tree
    staging = model.staging
    document: Document = {"format": FORMAT, "version": VERSION}
    if tree.variables is not None:
        document["variables"] = [
            {"name": name, "levels": list(levels)}
            for name, levels in zip(tree.variables.names, tree.variables.levels)
        ]
    if tree.variables is None or build_event_tree(tree.variables) != tree:
        document["tree"] = {"parents": list(tree.parents), "labels": list(tree.labels)}
    document["staging"] = [list(row) for row in staging.stages]

    if model.theta is None:
        document["theta"] = None
    else:
        document["theta"] = {
            str(stage): dict(model.theta[stage]) for stage in staging.stage_ids
        }
    return document


def model_to_json(model: StagedTreeModel) -> str:
    return json.dumps(model_to_dict(model), indent=2)


def save_model(model: StagedTreeModel, path: typing.Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="utf-8") as file:
        file.write(model_to_json(model))
        file.write("\n")


def _require(document: Document, key: str, kind: typing.Type[typing.Any]) -> typing.Any:
    if key not in document:
        raise stmiss.ModelSchemaError("is required", field=key)
    value = document[key]
    if not isinstance(value, kind):
        raise stmiss.ModelSchemaError(
            f"expected {kind.__name__}, got {type(value).__name__}", field=key
        )
    return value


def _variables(document: Document) -> typing.Optional[VariableSpec]:
    if "variables" not in document:
        return None
    entries = _require(document, "variables", list)
    names = []
    levels = []
    for index, entry in enumerate(entries):
        field = f"variables[{index}]"
        if not isinstance(entry, dict):
            raise stmiss.ModelSchemaError("expected an object", field=field)
        name = entry.get("name")
        entry_levels = entry.get("levels")
        if not isinstance(name, str):
            raise stmiss.ModelSchemaError("expected a string", field=f"{field}.name")
        if not isinstance(entry_levels, list) or not all(
            isinstance(level, str) for level in entry_levels
        ):
            raise stmiss.ModelSchemaError(
                "expected a list of strings", field=f"{field}.levels"
            )
        names.append(name)
        levels.append(entry_levels)
    try:
        return VariableSpec(names=names, levels=levels)
    except stmiss.InvalidSpecError as error:
        raise stmiss.ModelSchemaError(str(error), field="variables") from error


def _tree(document: Document, spec: typing.Optional[VariableSpec]) -> EventTree:
    if "tree" not in document:
        if spec is None:
            raise stmiss.ModelSchemaError(
                "either variables or tree is required", field="variables"
            )
        return build_event_tree(spec)

    raw = _require(document, "tree", dict)
    parents = raw.get("parents")
    labels = raw.get("labels")
    if not isinstance(parents, list) or not all(isinstance(p, int) for p in parents):
        raise stmiss.ModelSchemaError("expected a list of integers", field="tree.parents")
    if not isinstance(labels, list) or not all(isinstance(label, str) for label in labels):
        raise stmiss.ModelSchemaError("expected a list of strings", field="tree.labels")
    try:
        return EventTree(parents=parents, labels=labels, variables=spec)
    except stmiss.InvalidTreeError as error:
        raise stmiss.ModelSchemaError(str(error), field="tree") from error


def _stage_key(value: typing.Any) -> bool:
    return isinstance(value, (str, int)) and not isinstance(value, bool)


def _staging(
    document: Document, tree: EventTree
) -> typing.Tuple[Staging, typing.Dict[str, int]]:
    """The staging and the map from document stage ids to :class:`Staging` ids."""
    if "staging" in document:
        rows = _require(document, "staging", list)
    else:
        rows = [list(row) for row in saturated_staging(tree).stages]

    situations = tree.situations_by_depth
    if len(rows) != len(situations):
        raise stmiss.ModelSchemaError(
            f"expected {len(situations)} depths, got {len(rows)}", field="staging"
        )
    depth_of: typing.Dict[str, int] = {}
    keys = []
    for depth, (row, depth_situations) in enumerate(zip(rows, situations)):
        field = f"staging[{depth}]"
        if not isinstance(row, list) or len(row) != len(depth_situations):
            raise stmiss.ModelSchemaError(
                f"expected a list of {len(depth_situations)} stage ids", field=field
            )
        if not all(_stage_key(key) for key in row):
            raise stmiss.ModelSchemaError(
                "stage ids must be integers or strings", field=field
            )
        for key in map(str, row):
            if depth_of.setdefault(key, depth) != depth:
                raise stmiss.ModelSchemaError(
                    f"stage {key} is used at depths {depth_of[key]} and {depth}",
                    field=field,
                )
        keys.append([str(key) for key in row])

    try:
        staging = Staging.build(situations=situations, stages=keys)
    except stmiss.InvalidStagingError as error:
        raise stmiss.ModelSchemaError(str(error), field="staging") from error

    lookup = {
        key: stage
        for depth_keys, depth_stages in zip(keys, staging.stages)
        for key, stage in zip(depth_keys, depth_stages)
    }
    return staging, lookup


def _theta(
    document: Document, lookup: typing.Dict[str, int]
) -> typing.Optional[TransitionProbabilities]:
    raw = document.get("theta")
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise stmiss.ModelSchemaError(
            f"expected an object keyed by stage id, got {type(raw).__name__}",
            field="theta",
        )
    if set(raw) != set(lookup):
        raise stmiss.ModelSchemaError(
            f"expected stage ids {sorted(lookup)}, got {sorted(raw)}", field="theta"
        )

    probabilities = {}
    for key, distribution in raw.items():
        field = f"theta.{key}"
        if not isinstance(distribution, dict) or not all(
            isinstance(p, (int, float)) and not isinstance(p, bool)
            for p in distribution.values()
        ):
            raise stmiss.ModelSchemaError(
                "expected an object of probabilities", field=field
            )
        total = math.fsum(distribution.values())
        if abs(total - 1) > 1e-12:
            raise stmiss.ModelSchemaError(
                f"probabilities sum to {total!r}, not 1", field=field
            )
        probabilities[lookup[key]] = distribution

    try:
        return TransitionProbabilities(probabilities)
    except stmiss.InvalidProbabilitiesError as error:
        raise stmiss.ModelSchemaError(str(error), field="theta") from error


def model_from_dict(document: Document) -> StagedTreeModel:
    """Build a model from a parsed document.

    Raises:
        stmiss.ModelSchemaError: If the document is malformed, naming the field.
    """
    if not isinstance(document, dict):
        raise stmiss.ModelSchemaError("a model document must be a JSON object")
    unknown = sorted(set(document) - KEYS)
    if unknown:
        raise stmiss.ModelSchemaError(
            f"unknown key, expected one of {sorted(KEYS)}", field=unknown[0]
        )
    if document.get("format", FORMAT) != FORMAT:
        raise stmiss.ModelSchemaError(
            f"expected {FORMAT!r}, got {document['format']!r}", field="format"
        )
    if document.get("version", VERSION) != VERSION:
        raise stmiss.ModelSchemaError(
            f"unsupported version {document['version']!r}", field="version"
        )

    spec = _variables(document)
    tree = _tree(document, spec)
    staging, lookup = _staging(document, tree)
    theta = _theta(document, lookup)
    try:
        return StagedTreeModel(tree=tree, staging=staging, theta=theta)
    except stmiss.NotStageableError as error:
        raise stmiss.ModelSchemaError(str(error), field="staging") from error
    except stmiss.InvalidProbabilitiesError as error:
        raise stmiss.ModelSchemaError(str(error), field="theta") from error


def model_from_json(text: str) -> StagedTreeModel:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as error:
        raise stmiss.ModelSchemaError(f"not valid JSON: {error}") from error
    return model_from_dict(document)


def load_model(path: typing.Union[str, os.PathLike]) -> StagedTreeModel:
    with open(path, encoding="utf-8") as file:
        return model_from_json(file.read())
