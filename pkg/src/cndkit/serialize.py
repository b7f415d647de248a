"""Versioned JSON serialization for model graphs.

Schema v1::

    {"schema_version": 1, "name": ..., "input_shape": [H, W, C],
     "num_classes": ..., "metadata": {...},
     "nodes": [{"id": ..., "kind": ..., "attrs": {...},
                "inputs": [...], "tag": ... | null}, ...]}

Attribute keys are exactly the dataclass fields of each layer kind; unknown
attrs are rejected. Nodes must be listed in dependency order (every input
precedes its consumer), which serialize always produces. Output is
byte-stable for a given graph.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from . import graph as g
from .errors import CndkitError, ParseError, SchemaVersionError

SCHEMA_VERSION = 1

_KIND_BY_NAME = {cls.__name__: cls for cls in g.KIND_CLASSES}
_ATTR_FIELDS = {
    cls.__name__: tuple(f.name for f in dataclasses.fields(cls)) for cls in g.KIND_CLASSES
}


def _node_to_dict(node: g.LayerNode) -> dict:
    attrs = {name: getattr(node.kind, name) for name in _ATTR_FIELDS[type(node.kind).__name__]}
    return {
        "id": node.id,
        "kind": type(node.kind).__name__,
        "attrs": attrs,
        "inputs": list(node.inputs),
        "tag": node.tag,
    }


def serialize(graph: g.ModelGraph) -> str:
    """Render a validated graph as schema-v1 JSON text."""
    g.validate(graph)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": graph.name,
        "input_shape": [graph.input_shape.height, graph.input_shape.width, graph.input_shape.channels],
        "num_classes": graph.num_classes,
        "metadata": dict(graph.metadata),
        "nodes": [_node_to_dict(n) for n in graph.nodes],
    }
    return json.dumps(doc, indent=2) + "\n"


def _expect(doc: dict, key: str, types, field: str):
    if key not in doc:
        raise ParseError(f"missing required key {key!r}", field=field)
    value = doc[key]
    if not isinstance(value, types) or isinstance(value, bool) and types is not bool:
        raise ParseError(f"key {key!r} has wrong type {type(value).__name__}", field=field)
    return value


def _parse_node(entry: dict, index: int) -> g.LayerNode:
    where = f"nodes[{index}]"
    if not isinstance(entry, dict):
        raise ParseError("node entry must be an object", field=where)
    node_id = _expect(entry, "id", str, f"{where}.id")
    kind_name = _expect(entry, "kind", str, f"{where}.kind")
    if kind_name not in _KIND_BY_NAME:
        raise ParseError(f"unknown layer kind {kind_name!r}", field=f"{where}.kind")
    attrs = _expect(entry, "attrs", dict, f"{where}.attrs")
    allowed = set(_ATTR_FIELDS[kind_name])
    unknown = set(attrs) - allowed
    if unknown:
        raise ParseError(
            f"unknown attrs for {kind_name}: {sorted(unknown)}", field=f"{where}.attrs"
        )
    inputs = _expect(entry, "inputs", list, f"{where}.inputs")
    if not all(isinstance(i, str) for i in inputs):
        raise ParseError("inputs must be a list of node ids", field=f"{where}.inputs")
    tag = entry.get("tag")
    if tag is not None and not isinstance(tag, str):
        raise ParseError("tag must be a string or null", field=f"{where}.tag")
    try:
        kind = _KIND_BY_NAME[kind_name](**attrs)
    except (TypeError, CndkitError) as exc:
        raise ParseError(f"bad attrs for {kind_name}: {exc}", field=f"{where}.attrs") from exc
    return g.LayerNode(id=node_id, kind=kind, inputs=tuple(inputs), tag=tag)


def deserialize(text: str) -> g.ModelGraph:
    """Parse schema-v1 JSON text into a validated graph."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ParseError("top-level value must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")
    name = _expect(doc, "name", str, "name")
    shape_raw = _expect(doc, "input_shape", list, "input_shape")
    if len(shape_raw) != 3 or not all(isinstance(v, int) and not isinstance(v, bool) for v in shape_raw):
        raise ParseError("input_shape must be [H, W, C] integers", field="input_shape")
    num_classes = _expect(doc, "num_classes", int, "num_classes")
    metadata = _expect(doc, "metadata", dict, "metadata")
    if not all(isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()):
        raise ParseError("metadata must map strings to strings", field="metadata")
    nodes_raw = _expect(doc, "nodes", list, "nodes")

    try:
        shape = g.TensorShape(*shape_raw)
    except CndkitError as exc:
        raise ParseError(str(exc), field="input_shape") from exc
    model = g.ModelGraph(name=name, input_shape=shape, num_classes=num_classes, metadata=dict(metadata))
    for i, entry in enumerate(nodes_raw):
        node = _parse_node(entry, i)
        try:
            model = g.add_layer(model, node)
        except CndkitError as exc:
            raise ParseError(str(exc), field=f"nodes[{i}]") from exc
    try:
        g.validate(model)
    except CndkitError as exc:
        raise ParseError(f"graph failed validation: {exc}") from exc
    return model


def save_model(graph: g.ModelGraph, path: str | Path) -> None:
    Path(path).write_text(serialize(graph), encoding="utf-8")


def load_model(path: str | Path) -> g.ModelGraph:
    return deserialize(Path(path).read_text(encoding="utf-8"))
