"""Graph-to-graph parameter-reduction passes, validators, and diffing.

Two rewrite passes are provided, applied per tagged module:

  * kernel replacement: the first separable conv of each module trades its
    3x3 kernel for 1x1 (a 9x cut of that layer's depthwise kernel),
  * fire insertion: a module's conv stack is replaced by a squeeze 1x1 ->
    expand 1x1 -> expand 3x3 triplet, so the 3x3 layer sees the narrow
    expand1 width instead of the module's full input width. Pooling and
    residual structure are preserved; the residual projection is resized
    (or inserted) when the module's output width changes.

Both passes are total: a graph with no matching modules comes back unchanged
with an empty report.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from . import analyzer
from .errors import (
    ModuleStructureError,
    ResidualShapeBrokenError,
    ShapeMismatchError,
    UnknownModuleTagError,
)
from .graph import (
    Activation,
    Add,
    BatchNorm,
    Conv2D,
    LayerNode,
    MaxPool,
    ModelGraph,
    SeparableConv2D,
    TensorShape,
    infer_shapes,
    is_conv,
    module_groups,
    module_of,
    role_of,
    topo_sort,
    validate,
)
from .zoo import FireModuleSpec, check_fire_spec, make_fire_module


@dataclass(frozen=True)
class NodeChange:
    node_id: str
    before: str
    after: str


@dataclass(frozen=True)
class PassReport:
    pass_name: str
    nodes_changed: tuple[NodeChange, ...]
    params_before: int
    params_after: int
    violations: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "pass_name": self.pass_name,
            "nodes_changed": [
                {"id": c.node_id, "before": c.before, "after": c.after}
                for c in self.nodes_changed
            ],
            "params_before": self.params_before,
            "params_after": self.params_after,
            "violations": list(self.violations),
        }


def _describe(kind) -> str:
    if isinstance(kind, (Conv2D, SeparableConv2D)):
        return f"{type(kind).__name__}(f{kind.filters},k{kind.kernel},s{kind.stride})"
    return type(kind).__name__


# -- strategy 1: kernel replacement -------------------------------------------

def strategy1_replace_kernels(graph: ModelGraph) -> tuple[ModelGraph, PassReport]:
    """Give the first separable conv of every tagged module a 1x1 kernel.

    Only modules whose leading separable conv still has a 3x3 kernel are
    touched, which makes the pass idempotent. Filters, stride, and padding
    are untouched.
    """
    order = {node_id: i for i, node_id in enumerate(topo_sort(graph))}
    by_id = graph.node_map()
    targets: list[str] = []
    for ids in module_groups(graph).values():
        seps = sorted(
            (i for i in ids if isinstance(by_id[i].kind, SeparableConv2D)),
            key=order.__getitem__,
        )
        if seps and by_id[seps[0]].kind.kernel == 3:
            targets.append(seps[0])

    params_before = analyzer.count_params(graph).total
    if not targets:
        return graph, PassReport("strategy1_replace_kernels", (), params_before, params_before)

    changed: list[NodeChange] = []
    new_nodes: list[LayerNode] = []
    target_set = set(targets)
    for node in graph.nodes:
        if node.id in target_set:
            new_kind = dataclasses.replace(node.kind, kernel=1)
            changed.append(NodeChange(node.id, _describe(node.kind), _describe(new_kind)))
            new_nodes.append(dataclasses.replace(node, kind=new_kind))
        else:
            new_nodes.append(node)
    result = dataclasses.replace(graph, nodes=tuple(new_nodes))
    changed.sort(key=lambda c: order[c.node_id])
    report = PassReport(
        "strategy1_replace_kernels",
        tuple(changed),
        params_before,
        analyzer.count_params(result).total,
    )
    return result, report


# -- strategy 2: fire-module insertion -----------------------------------------

_REWRITABLE_KINDS = (Conv2D, SeparableConv2D, MaxPool, BatchNorm, Activation, Add)


def _module_structure(graph: ModelGraph, ids: list[str], module: str):
    """Pick apart one tagged module: input, main convs, pool, add, projection."""
    by_id = graph.node_map()
    id_set = set(ids)
    nodes = [by_id[i] for i in ids]
    for node in nodes:
        if not isinstance(node.kind, _REWRITABLE_KINDS):
            raise ModuleStructureError(
                f"module {module!r} contains a {type(node.kind).__name__} node; "
                "only conv/pool/norm/activation/add modules can be rewritten"
            )

    external = []
    for node in nodes:
        for src in node.inputs:
            if src not in id_set and src not in external:
                external.append(src)
    if len(external) != 1:
        raise ModuleStructureError(
            f"module {module!r} must be fed by exactly one outside node, found {external}"
        )
    module_input = external[0]

    main_convs = [n for n in nodes if is_conv(n.kind) and role_of(n.tag) != "residual"]
    pools = [n for n in nodes if isinstance(n.kind, MaxPool)]
    adds = [n for n in nodes if isinstance(n.kind, Add)]
    proj = next((n for n in nodes if is_conv(n.kind) and role_of(n.tag) == "residual"), None)
    proj_bn = None
    if proj is not None:
        proj_bn = next(
            (n for n in nodes if isinstance(n.kind, BatchNorm) and n.inputs == (proj.id,)), None
        )
    if len(pools) > 1 or len(adds) > 1:
        raise ModuleStructureError(
            f"module {module!r} has more than one pool or add; cannot rewrite"
        )

    consumers = graph.consumers()
    tails = [n.id for n in nodes if not any(c in id_set for c in consumers[n.id])]
    if len(tails) != 1:
        raise ModuleStructureError(f"module {module!r} must have a single output, found {tails}")
    return module_input, main_convs, (pools[0] if pools else None), (adds[0] if adds else None), proj, proj_bn, tails[0]


def strategy2_insert_fire(
    graph: ModelGraph, specs: dict[str, FireModuleSpec]
) -> tuple[ModelGraph, PassReport]:
    """Replace each targeted module's conv stack with a fire triplet.

    ``specs`` maps module tags (e.g. ``"entry_flow/m2"``) to the fire widths
    to insert. Pool and Add nodes keep their ids; the residual projection is
    resized to the new output width, or inserted when an identity residual
    no longer matches.
    """
    groups = module_groups(graph)
    for tag, spec in specs.items():
        if tag not in groups:
            raise UnknownModuleTagError(f"no module tagged {tag!r} in graph {graph.name!r}")
        check_fire_spec(spec, module=tag)
    params_before = analyzer.count_params(graph).total
    if not specs:
        return graph, PassReport("strategy2_insert_fire", (), params_before, params_before)

    shapes = infer_shapes(graph)
    existing_ids = {n.id for n in graph.nodes}
    remap: dict[str, str] = {}
    changed: list[NodeChange] = []
    new_nodes: list[LayerNode] = []
    emitted: set[str] = set()

    def fresh(base: str) -> str:
        candidate = base
        while candidate in existing_ids:
            candidate = candidate + "_f"
        existing_ids.add(candidate)
        return candidate

    def rebuild(module: str, spec: FireModuleSpec) -> None:
        module_input, main_convs, pool, add_node, proj, proj_bn, old_tail = _module_structure(
            graph, groups[module], module
        )
        source = remap.get(module_input, module_input)
        in_shape = shapes[module_input]
        out_shape = shapes[old_tail]
        downsamples = out_shape.height < in_shape.height or out_shape.width < in_shape.width
        stride_out = 1 if pool is not None or not downsamples else 2

        prefix = fresh(module.replace("/", "_") + "_fire")
        fire = make_fire_module(source, spec, stride_out=stride_out,
                                id_prefix=prefix, module_tag=module)
        new_nodes.extend(fire)
        main_tail = fire[-1].id

        fire_convs = [n for n in fire if is_conv(n.kind)]
        for i in range(max(len(main_convs), len(fire_convs))):
            old = _describe(main_convs[i].kind) if i < len(main_convs) else "(none)"
            new = _describe(fire_convs[i].kind) if i < len(fire_convs) else "(removed)"
            node_id = main_convs[i].id if i < len(main_convs) else fire_convs[i].id
            changed.append(NodeChange(node_id, old, new))

        if pool is not None:
            new_nodes.append(dataclasses.replace(pool, inputs=(main_tail,)))
            main_tail = pool.id

        if add_node is not None:
            if proj is not None:
                new_kind = dataclasses.replace(proj.kind, filters=spec.e3x3)
                if new_kind != proj.kind:
                    changed.append(NodeChange(proj.id, _describe(proj.kind), _describe(new_kind)))
                new_nodes.append(dataclasses.replace(proj, kind=new_kind, inputs=(source,)))
                res_tail = proj.id
                if proj_bn is not None:
                    new_nodes.append(dataclasses.replace(proj_bn, inputs=(proj.id,)))
                    res_tail = proj_bn.id
            elif spec.e3x3 == in_shape.channels and not downsamples:
                res_tail = source
            else:
                res_id = fresh(module.replace("/", "_") + "_res")
                res_kind = Conv2D(spec.e3x3, 1, stride=2 if downsamples else 1)
                new_nodes.append(LayerNode(res_id, res_kind, (source,), f"{module}/residual"))
                bn_id = fresh(res_id + "_bn")
                new_nodes.append(LayerNode(bn_id, BatchNorm(), (res_id,), f"{module}/residual_bn"))
                changed.append(NodeChange(res_id, "(identity residual)", _describe(res_kind)))
                res_tail = bn_id
            new_nodes.append(dataclasses.replace(add_node, inputs=(main_tail, res_tail)))
            remap[old_tail] = add_node.id
        else:
            remap[old_tail] = main_tail

    by_id = graph.node_map()
    for node_id in topo_sort(graph):
        node = by_id[node_id]
        module = module_of(node.tag)
        if module in specs:
            if module not in emitted:
                emitted.add(module)
                rebuild(module, specs[module])
            continue
        new_nodes.append(
            dataclasses.replace(node, inputs=tuple(remap.get(i, i) for i in node.inputs))
        )

    result = dataclasses.replace(graph, nodes=tuple(new_nodes))
    try:
        validate(result)
    except ShapeMismatchError as exc:
        raise ResidualShapeBrokenError(
            f"fire insertion broke residual shapes in {graph.name!r}: {exc}"
        ) from exc
    report = PassReport(
        "strategy2_insert_fire",
        tuple(changed),
        params_before,
        analyzer.count_params(result).total,
        violations=tuple(validate_fire_constraints(result)),
    )
    return result, report


# -- strategy 3: downsampling audit ---------------------------------------------

@dataclass(frozen=True)
class DownsampleEntry:
    node_id: str
    depth_fraction: float
    input_shape: TensorShape
    output_shape: TensorShape


@dataclass(frozen=True)
class DownsampleAudit:
    entries: tuple[DownsampleEntry, ...]
    early_pool_count: int
    late_downsample_flag: bool


def strategy3_audit(graph: ModelGraph) -> DownsampleAudit:
    """List every stride-2 or pooling node with its position and shapes.

    ``late_downsample_flag`` is true when at least half of the total spatial
    reduction (log2 of the input-to-final-feature-map area ratio) happens in
    the second half of the graph's depth; ``early_pool_count`` counts listed
    nodes in the first half. Global average pooling is head collapse, not
    downsampling, and is excluded.
    """
    shapes = infer_shapes(graph)
    order = topo_sort(graph)
    by_id = graph.node_map()
    denom = max(len(order) - 1, 1)

    entries: list[DownsampleEntry] = []
    for pos, node_id in enumerate(order):
        node = by_id[node_id]
        kind = node.kind
        if isinstance(kind, MaxPool) or (is_conv(kind) and kind.stride == 2):
            entries.append(
                DownsampleEntry(
                    node_id=node_id,
                    depth_fraction=pos / denom,
                    input_shape=shapes[node.inputs[0]],
                    output_shape=shapes[node_id],
                )
            )

    early = sum(1 for e in entries if e.depth_fraction < 0.5)
    flag = False
    if entries:
        input_area = graph.input_shape.area
        final_area = entries[-1].output_shape.area
        mid_area = input_area
        for e in entries:
            if e.depth_fraction < 0.5:
                mid_area = e.output_shape.area
        total_bits = math.log2(input_area / final_area)
        late_bits = math.log2(mid_area / final_area)
        flag = total_bits > 0 and late_bits >= 0.5 * total_bits
    return DownsampleAudit(tuple(entries), early, flag)


# -- fire-module validator --------------------------------------------------------

def validate_fire_constraints(graph: ModelGraph) -> list[str]:
    """Check every squeeze/expand1/expand3 triple for s1x1 < e1x1 + e3x3.

    Returns one message per violating module; an empty list means the graph
    has no violating fire module (vacuously true without fire tags).
    """
    by_id = graph.node_map()
    violations: list[str] = []
    for module, ids in module_groups(graph).items():
        widths: dict[str, int] = {}
        for node_id in ids:
            node = by_id[node_id]
            if is_conv(node.kind) and role_of(node.tag) in ("squeeze", "expand1", "expand3"):
                widths[role_of(node.tag)] = node.kind.filters
        if {"squeeze", "expand1", "expand3"} <= widths.keys():
            s, e1, e3 = widths["squeeze"], widths["expand1"], widths["expand3"]
            if not s < e1 + e3:
                violations.append(
                    f"{module}: s1x1={s} must be < e1x1+e3x3={e1 + e3} (e1x1={e1}, e3x3={e3})"
                )
    return violations


# -- structural comparison and diff ------------------------------------------------

def structurally_equal(a: ModelGraph, b: ModelGraph) -> bool:
    """True when two graphs match node-for-node up to a renaming of ids.

    Nodes are compared by kind (with attrs), tag, and canonicalized wiring;
    name and metadata are ignored.
    """
    def canon(graph: ModelGraph):
        table: dict[tuple, int] = {}
        assigned: dict[str, int] = {}
        keys = []
        by_id = graph.node_map()
        for node_id in topo_sort(graph):
            node = by_id[node_id]
            attrs = tuple(sorted(dataclasses.asdict(node.kind).items()))
            key = (
                type(node.kind).__name__,
                attrs,
                node.tag,
                tuple(assigned[i] for i in node.inputs),
            )
            assigned[node_id] = table.setdefault(key, len(table))
            keys.append(key)
        terminal = assigned[graph.terminal_id()]
        return (graph.input_shape, graph.num_classes, sorted(keys), terminal)

    return canon(a) == canon(b)


def _module_summary(graph: ModelGraph, report) -> dict[str, dict]:
    params_by_node = {entry.node_id: entry.total for entry in report.per_layer}
    by_id = graph.node_map()
    out: dict[str, dict] = {}
    untagged_params = 0
    for node in graph.nodes:
        module = module_of(node.tag)
        if module is None:
            untagged_params += params_by_node[node.id]
            continue
        info = out.setdefault(module, {"kernels": [], "filters": [], "params": 0})
        info["params"] += params_by_node[node.id]
        if is_conv(node.kind) and role_of(node.tag) != "residual":
            info["kernels"].append(node.kind.kernel)
            info["filters"].append(node.kind.filters)
    if untagged_params:
        out["(untagged)"] = {"kernels": [], "filters": [], "params": untagged_params}
    return out


def percentage_reduction(params_before: int, params_after: int) -> float:
    if params_before == 0:
        return 0.0
    return (params_before - params_after) / params_before * 100.0


def diff(original: ModelGraph, transformed: ModelGraph) -> str:
    """Side-by-side per-module comparison of kernels, filters, and params."""
    rep_a = analyzer.count_params(original)
    rep_b = analyzer.count_params(transformed)
    mods_a = _module_summary(original, rep_a)
    mods_b = _module_summary(transformed, rep_b)
    modules = list(mods_a)
    for m in mods_b:
        if m not in modules:
            modules.append(m)

    def fmt(info: dict | None, field: str) -> str:
        if info is None:
            return "-"
        if field == "params":
            return f"{info['params']:,}"
        values = info[field]
        return ",".join(str(v) for v in values) if values else "-"

    header = (
        f"{'module':<18} {'kernels A':>10} {'filters A':>16} {'params A':>12} "
        f"{'kernels B':>10} {'filters B':>16} {'params B':>12} {'delta':>12}"
    )
    lines = [f"model A: {original.name}", f"model B: {transformed.name}", header, "-" * len(header)]
    for module in modules:
        a = mods_a.get(module)
        b = mods_b.get(module)
        delta = (b["params"] if b else 0) - (a["params"] if a else 0)
        lines.append(
            f"{module:<18} {fmt(a, 'kernels'):>10} {fmt(a, 'filters'):>16} {fmt(a, 'params'):>12} "
            f"{fmt(b, 'kernels'):>10} {fmt(b, 'filters'):>16} {fmt(b, 'params'):>12} {delta:>+12,}"
        )
    reduction = percentage_reduction(rep_a.total, rep_b.total)
    lines.append("-" * len(header))
    lines.append(
        f"{'total':<18} {'':>10} {'':>16} {rep_a.total:>12,} {'':>10} {'':>16} {rep_b.total:>12,} "
        f"{rep_b.total - rep_a.total:>+12,}"
    )
    lines.append(f"parameter reduction: {reduction:.1f}%")
    return "\n".join(lines) + "\n"
