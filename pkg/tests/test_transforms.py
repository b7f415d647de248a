import random

import pytest

from cndkit.analyzer import count_params
from cndkit.errors import InvalidFireSpecError, UnknownModuleTagError
from cndkit.graph import (
    Add,
    BatchNorm,
    Conv2D,
    Input,
    LayerNode,
    MaxPool,
    ModelGraph,
    SeparableConv2D,
    TensorShape,
    add_layer,
    infer_shapes,
    is_conv,
)
from cndkit.transforms import (
    diff,
    percentage_reduction,
    strategy1_replace_kernels,
    strategy2_insert_fire,
    strategy3_audit,
    structurally_equal,
    validate_fire_constraints,
)
from cndkit.zoo import DEFAULT_OPTIMIZED_CONFIG, FireModuleSpec


def default_specs():
    cfg = DEFAULT_OPTIMIZED_CONFIG
    specs = {f"entry_flow/m{i + 2}": s for i, s in enumerate(cfg.entry_fire)}
    specs.update({f"middle_flow/m{i + 5}": s for i, s in enumerate(cfg.middle_fire)})
    return specs


def _single_module_graph(kernels=(3, 3), filters=128, channels=64, with_residual=True):
    """input -> sepA -> bn -> sepB -> bn [-> add with 1x1 projection]."""
    graph = ModelGraph(name="module", input_shape=TensorShape(16, 16, channels), num_classes=2)
    graph = add_layer(graph, LayerNode("in", Input()))
    tip = "in"
    for i, kernel in enumerate(kernels, start=1):
        conv = f"sep{i}"
        graph = add_layer(
            graph,
            LayerNode(conv, SeparableConv2D(filters, kernel), (tip,), f"flow/m1/sep{i}"),
        )
        graph = add_layer(graph, LayerNode(f"{conv}_bn", BatchNorm(), (conv,), f"flow/m1/sep{i}_bn"))
        tip = f"{conv}_bn"
    if with_residual:
        graph = add_layer(graph, LayerNode("res", Conv2D(filters, 1), ("in",), "flow/m1/residual"))
        graph = add_layer(graph, LayerNode("sum", Add(), (tip, "res"), "flow/m1/add"))
    return graph


class TestStrategy1:
    def test_rewrites_first_sep_of_module(self):
        graph = _single_module_graph()
        out, report = strategy1_replace_kernels(graph)
        assert [c.node_id for c in report.nodes_changed] == ["sep1"]
        assert out.node("sep1").kind.kernel == 1
        assert out.node("sep2").kind.kernel == 3
        assert out.node("sep1").kind.filters == 128

    def test_no_matches_is_identity(self):
        graph = _single_module_graph(kernels=(1, 1))
        out, report = strategy1_replace_kernels(graph)
        assert out == graph
        assert report.nodes_changed == ()
        assert report.params_before == report.params_after

    def test_ninefold_depthwise_reduction(self):
        graph = _single_module_graph()
        shapes = infer_shapes(graph)
        out, report = strategy1_replace_kernels(graph)
        for change in report.nodes_changed:
            channels = shapes[graph.node(change.node_id).inputs[0]].channels
            before = channels * 9
            after = channels * 1
            assert before == 9 * after

    def test_idempotent_on_baseline(self, xception):
        once, _ = strategy1_replace_kernels(xception)
        twice, report = strategy1_replace_kernels(once)
        assert twice == once
        assert report.nodes_changed == ()

    def test_changes_one_node_per_leading_sep3_module(self, xception):
        _, report = strategy1_replace_kernels(xception)
        assert len(report.nodes_changed) == 13  # every module but the stem
        assert report.params_after < report.params_before

    def test_preserves_macro_structure(self, xception):
        out, _ = strategy1_replace_kernels(xception)
        assert out.num_classes == xception.num_classes
        assert out.input_shape == xception.input_shape
        count = lambda g, pred: sum(1 for n in g.nodes if pred(n))
        assert count(out, lambda n: isinstance(n.kind, Add)) == 12
        downs = lambda g: count(
            g, lambda n: isinstance(n.kind, MaxPool) or (is_conv(n.kind) and n.kind.stride == 2)
        )
        assert downs(out) == downs(xception)


class TestStrategy2:
    def test_narrows_channels_into_expand3(self):
        graph = _single_module_graph(channels=728, filters=728)
        spec = FireModuleSpec(128, 256, 256)
        out, report = strategy2_insert_fire(graph, {"flow/m1": spec})
        shapes = infer_shapes(out)
        expand3 = next(
            n for n in out.nodes if is_conv(n.kind) and n.tag == "flow/m1/expand3"
        )
        assert shapes[expand3.inputs[0]].channels == 256 < 728
        assert report.params_after < report.params_before

    def test_invalid_spec_rejected(self):
        graph = _single_module_graph()
        with pytest.raises(InvalidFireSpecError) as exc:
            strategy2_insert_fire(graph, {"flow/m1": FireModuleSpec(128, 64, 64)})
        assert "flow/m1" in str(exc.value)

    def test_unknown_tag_rejected(self):
        graph = _single_module_graph()
        with pytest.raises(UnknownModuleTagError):
            strategy2_insert_fire(graph, {"flow/m9": FireModuleSpec(16, 32, 32)})

    def test_head_module_not_rewritable(self, xception):
        from cndkit.errors import ModuleStructureError

        with pytest.raises(ModuleStructureError):
            strategy2_insert_fire(xception, {"exit_flow/m14": FireModuleSpec(64, 128, 128)})

    def test_empty_specs_is_identity(self, xception):
        out, report = strategy2_insert_fire(xception, {})
        assert out == xception
        assert report.nodes_changed == ()

    def test_identity_residual_kept_when_width_matches(self):
        graph = ModelGraph(name="mid", input_shape=TensorShape(16, 16, 64), num_classes=2)
        graph = add_layer(graph, LayerNode("in", Input()))
        graph = add_layer(graph, LayerNode("sep1", SeparableConv2D(64, 3), ("in",), "flow/m1/sep1"))
        graph = add_layer(graph, LayerNode("sum", Add(), ("sep1", "in"), "flow/m1/add"))
        out, _ = strategy2_insert_fire(graph, {"flow/m1": FireModuleSpec(16, 32, 64)})
        add_node = out.node("sum")
        assert "in" in add_node.inputs  # residual is still the module input itself

    def test_projection_inserted_when_width_changes(self):
        graph = ModelGraph(name="mid", input_shape=TensorShape(16, 16, 64), num_classes=2)
        graph = add_layer(graph, LayerNode("in", Input()))
        graph = add_layer(graph, LayerNode("sep1", SeparableConv2D(64, 3), ("in",), "flow/m1/sep1"))
        graph = add_layer(graph, LayerNode("sum", Add(), ("sep1", "in"), "flow/m1/add"))
        out, _ = strategy2_insert_fire(graph, {"flow/m1": FireModuleSpec(16, 32, 48)})
        projs = [n for n in out.nodes if is_conv(n.kind) and n.tag == "flow/m1/residual"]
        assert len(projs) == 1 and projs[0].kind.filters == 48
        infer_shapes(out)  # wiring stays consistent

    def test_reduces_params_for_squeeze_style_specs(self, xception):
        # Random reduction specs: squeeze and expand1 stay narrower than the
        # module input, expand3 keeps the original output width.
        rng = random.Random(1234)
        inputs = {
            "entry_flow/m2": (64, 128),
            "entry_flow/m3": (128, 256),
            "entry_flow/m4": (256, 728),
            "middle_flow/m5": (728, 728),
            "middle_flow/m9": (728, 728),
        }
        for _ in range(10):
            specs = {}
            for tag, (c_in, f_out) in inputs.items():
                e1 = rng.randint(4, c_in - 1)
                s = rng.randint(2, e1)
                specs[tag] = FireModuleSpec(s, e1, f_out)
            out, report = strategy2_insert_fire(xception, specs)
            assert report.params_after < report.params_before
            assert count_params(out).total == report.params_after

    def test_params_monotone_in_squeeze_width(self, xception):
        def total(s):
            spec = FireModuleSpec(s, 600, 728)
            _, report = strategy2_insert_fire(xception, {"middle_flow/m5": spec})
            return report.params_after

        widths = [total(s) for s in (64, 128, 256, 414)]
        assert widths == sorted(widths)

    def test_composition_matches_builder(self, xception, optimized):
        step1, _ = strategy1_replace_kernels(xception)
        step2, _ = strategy2_insert_fire(step1, default_specs())
        assert structurally_equal(step2, optimized)
        assert count_params(step2).total == count_params(optimized).total

    def test_preserves_macro_structure(self, xception):
        out, _ = strategy2_insert_fire(xception, default_specs())
        assert out.num_classes == xception.num_classes
        assert out.input_shape == xception.input_shape
        adds = lambda g: sum(1 for n in g.nodes if isinstance(n.kind, Add))
        assert adds(out) == adds(xception)
        downs = lambda g: sum(
            1 for n in g.nodes
            if isinstance(n.kind, MaxPool) or (is_conv(n.kind) and n.kind.stride == 2)
        )
        assert downs(out) == downs(xception)


class TestStrategy3Audit:
    def test_lists_baseline_downsamplers(self, xception):
        audit = strategy3_audit(xception)
        expected = {
            n.id for n in xception.nodes
            if isinstance(n.kind, MaxPool) or (is_conv(n.kind) and n.kind.stride == 2)
        }
        assert {e.node_id for e in audit.entries} == expected
        fractions = [e.depth_fraction for e in audit.entries]
        assert fractions == sorted(fractions)
        assert all(0.0 <= f <= 1.0 for f in fractions)

    def test_all_early_pooling_flag_false(self):
        graph = ModelGraph(name="early", input_shape=TensorShape(64, 64, 4), num_classes=2)
        graph = add_layer(graph, LayerNode("in", Input()))
        graph = add_layer(graph, LayerNode("p1", MaxPool(3, 2), ("in",)))
        graph = add_layer(graph, LayerNode("p2", MaxPool(3, 2), ("p1",)))
        tip = "p2"
        for i in range(17):
            graph = add_layer(graph, LayerNode(f"c{i}", Conv2D(8, 1), (tip,)))
            tip = f"c{i}"
        audit = strategy3_audit(graph)
        assert audit.early_pool_count == 2
        assert audit.late_downsample_flag is False

    def test_single_final_downsample_flag_true(self):
        graph = ModelGraph(name="late", input_shape=TensorShape(64, 64, 4), num_classes=2)
        graph = add_layer(graph, LayerNode("in", Input()))
        tip = "in"
        for i in range(10):
            graph = add_layer(graph, LayerNode(f"c{i}", Conv2D(8, 1), (tip,)))
            tip = f"c{i}"
        graph = add_layer(graph, LayerNode("down", Conv2D(8, 3, stride=2), (tip,)))
        audit = strategy3_audit(graph)
        assert [e.node_id for e in audit.entries] == ["down"]
        assert audit.late_downsample_flag is True

    def test_no_downsampling_flag_false(self):
        graph = ModelGraph(name="flat", input_shape=TensorShape(8, 8, 4), num_classes=2)
        graph = add_layer(graph, LayerNode("in", Input()))
        graph = add_layer(graph, LayerNode("c", Conv2D(8, 1), ("in",)))
        audit = strategy3_audit(graph)
        assert audit.entries == ()
        assert audit.late_downsample_flag is False


class TestFireConstraints:
    def test_optimized_zoo_is_clean(self, optimized):
        assert validate_fire_constraints(optimized) == []

    def test_violating_triple_reported(self):
        graph = ModelGraph(name="bad", input_shape=TensorShape(16, 16, 8), num_classes=2)
        graph = add_layer(graph, LayerNode("in", Input()))
        graph = add_layer(graph, LayerNode("s", SeparableConv2D(64, 1), ("in",), "f/m1/squeeze"))
        graph = add_layer(graph, LayerNode("e1", SeparableConv2D(32, 1), ("s",), "f/m1/expand1"))
        graph = add_layer(graph, LayerNode("e3", SeparableConv2D(16, 3), ("e1",), "f/m1/expand3"))
        violations = validate_fire_constraints(graph)
        assert len(violations) == 1
        assert "64" in violations[0] and "48" in violations[0]

    def test_untagged_graph_vacuously_clean(self):
        graph = ModelGraph(name="plain", input_shape=TensorShape(8, 8, 3), num_classes=2)
        graph = add_layer(graph, LayerNode("in", Input()))
        graph = add_layer(graph, LayerNode("c", Conv2D(4, 1), ("in",)))
        assert validate_fire_constraints(graph) == []


class TestDiff:
    def test_baseline_vs_optimized_reduction(self, xception, optimized):
        text = diff(xception, optimized)
        assert "parameter reduction: 25.0%" in text
        assert "entry_flow/m2" in text

    def test_self_diff_is_zero(self, xception):
        text = diff(xception, xception)
        assert "parameter reduction: 0.0%" in text
        assert "+0" in text

    def test_percentage_definition(self):
        assert percentage_reduction(200, 150) == 25.0
        assert percentage_reduction(0, 0) == 0.0


class TestStructuralEquality:
    def test_id_renaming_is_ignored(self):
        a = _single_module_graph()
        b = ModelGraph(
            name="renamed",
            input_shape=a.input_shape,
            num_classes=a.num_classes,
            nodes=tuple(
                LayerNode(
                    id=f"x_{n.id}",
                    kind=n.kind,
                    inputs=tuple(f"x_{i}" for i in n.inputs),
                    tag=n.tag,
                )
                for n in a.nodes
            ),
        )
        assert structurally_equal(a, b)

    def test_kind_change_detected(self, xception):
        out, _ = strategy1_replace_kernels(xception)
        assert not structurally_equal(out, xception)
