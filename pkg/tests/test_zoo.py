import pytest

from cndkit.analyzer import count_params, round_params_millions
from cndkit.errors import InvalidFireSpecError, ValidationError
from cndkit.graph import (
    Add,
    Dense,
    MaxPool,
    SeparableConv2D,
    TensorShape,
    infer_shapes,
    is_conv,
    module_groups,
    module_of,
    role_of,
    topo_sort,
)
from cndkit.zoo import (
    DEFAULT_OPTIMIZED_CONFIG,
    FireModuleSpec,
    OptimizedConfig,
    build_mobilenet_v2,
    build_optimized_xception,
    build_xception,
    make_fire_module,
)

XCEPTION_TOTAL = 21_068_429
OPTIMIZED_TOTAL = 15_798_273
MOBILENET_TOTAL = 2_358_821


def _module_conv_nodes(graph):
    return [
        n for n in graph.nodes
        if is_conv(n.kind) and module_of(n.tag) is not None and role_of(n.tag) != "residual"
    ]


class TestXception:
    def test_total_params(self, xception):
        report = count_params(xception)
        assert report.total == XCEPTION_TOTAL
        assert round_params_millions(report.total) == 21.1

    def test_macro_structure(self, xception):
        assert len(_module_conv_nodes(xception)) == 36
        assert len(module_groups(xception)) == 14
        assert sum(1 for n in xception.nodes if isinstance(n.kind, Add)) == 12

    def test_head_units(self):
        graph = build_xception(TensorShape(299, 299, 3), 2)
        dense = next(n for n in graph.nodes if isinstance(n.kind, Dense))
        assert dense.kind.units == 2

    def test_rejects_single_class(self):
        with pytest.raises(ValidationError):
            build_xception(TensorShape(299, 299, 3), 1)

    def test_middle_flow_shape(self, xception):
        shapes = infer_shapes(xception)
        adds = [n for n in xception.nodes if isinstance(n.kind, Add) and n.tag.startswith("middle_flow")]
        assert all(shapes[n.id] == TensorShape(19, 19, 728) for n in adds)


class TestOptimizedXception:
    def test_total_params_within_band(self, optimized, xception):
        total = count_params(optimized).total
        assert total == OPTIMIZED_TOTAL
        assert abs(total - 15_800_000) <= 0.05 * 15_800_000
        assert total < count_params(xception).total

    def test_first_sep_conv_of_every_module_is_pointwise(self, optimized):
        order = {nid: i for i, nid in enumerate(topo_sort(optimized))}
        by_id = optimized.node_map()
        for module, ids in module_groups(optimized).items():
            seps = sorted(
                (i for i in ids if isinstance(by_id[i].kind, SeparableConv2D)),
                key=order.__getitem__,
            )
            if seps:
                assert by_id[seps[0]].kind.kernel == 1, module

    def test_downsampling_positions_match_baseline(self, xception, optimized):
        def downsamplers(graph):
            return [
                (module_of(n.tag), type(n.kind).__name__)
                for n in graph.nodes
                if isinstance(n.kind, MaxPool) or (is_conv(n.kind) and n.kind.stride == 2)
            ]

        assert downsamplers(xception) == downsamplers(optimized)

    def test_residual_add_count_preserved(self, xception, optimized):
        count = lambda g: sum(1 for n in g.nodes if isinstance(n.kind, Add))
        assert count(optimized) == count(xception) == 12

    def test_eq2_boundary_rejected(self):
        bad = OptimizedConfig(
            entry_fire=(
                FireModuleSpec(224, 96, 128),  # 224 == 96 + 128
                FireModuleSpec(128, 192, 256),
                FireModuleSpec(256, 364, 728),
            ),
            middle_fire=DEFAULT_OPTIMIZED_CONFIG.middle_fire,
        )
        with pytest.raises(InvalidFireSpecError) as exc:
            build_optimized_xception(config=bad)
        assert "entry_flow/m2" in str(exc.value)

    def test_config_length_checked(self):
        with pytest.raises(ValidationError):
            OptimizedConfig(
                entry_fire=DEFAULT_OPTIMIZED_CONFIG.entry_fire[:2],
                middle_fire=DEFAULT_OPTIMIZED_CONFIG.middle_fire,
            ).check()

    def test_random_reduction_configs_shrink_params(self, xception):
        # Squeeze-style configs: expand1/squeeze narrower than the module
        # input, expand3 at most the original width.
        import random

        rng = random.Random(77)
        baseline_total = count_params(xception).total
        entry_inputs = ((64, 128), (128, 256), (256, 728))
        for _ in range(5):
            entry = []
            for c_in, f_out in entry_inputs:
                e1 = rng.randint(8, c_in - 1)
                entry.append(FireModuleSpec(rng.randint(2, e1), e1, f_out))
            e1 = rng.randint(64, 727)
            middle = tuple(FireModuleSpec(rng.randint(2, e1), e1, 728) for _ in range(8))
            graph = build_optimized_xception(
                config=OptimizedConfig(entry_fire=tuple(entry), middle_fire=middle)
            )
            assert count_params(graph).total < baseline_total
            from cndkit.transforms import validate_fire_constraints

            assert validate_fire_constraints(graph) == []


class TestMobileNetV2:
    def test_total_params(self, mobilenet):
        report = count_params(mobilenet)
        assert report.total == MOBILENET_TOTAL
        assert round_params_millions(report.total) == 2.4

    def test_head_units(self):
        graph = build_mobilenet_v2(TensorShape(224, 224, 3), 2)
        dense = next(n for n in graph.nodes if isinstance(n.kind, Dense))
        assert dense.kind.units == 2

    def test_validates_and_infers_end_to_end(self, mobilenet):
        shapes = infer_shapes(mobilenet)
        assert shapes[mobilenet.terminal_id()] == TensorShape(1, 1, 101)


class TestMakeFireModule:
    def test_structure(self):
        nodes = make_fire_module("src", FireModuleSpec(16, 64, 64), module_tag="f/m1")
        convs = [n for n in nodes if isinstance(n.kind, SeparableConv2D)]
        assert [n.kind.kernel for n in convs] == [1, 1, 3]
        assert [n.kind.filters for n in convs] == [16, 64, 64]
        assert [role_of(n.tag) for n in convs] == ["squeeze", "expand1", "expand3"]

    def test_output_channels_is_e3x3(self):
        nodes = make_fire_module("src", FireModuleSpec(16, 64, 96), module_tag="f/m1")
        last_conv = [n for n in nodes if isinstance(n.kind, SeparableConv2D)][-1]
        assert last_conv.kind.filters == 96

    def test_invalid_spec_rejected(self):
        with pytest.raises(InvalidFireSpecError):
            make_fire_module("src", FireModuleSpec(128, 64, 64), module_tag="f/m1")

    def test_stride_out_lands_on_expand3(self):
        nodes = make_fire_module("src", FireModuleSpec(16, 64, 64), stride_out=2, module_tag="f/m1")
        convs = [n for n in nodes if isinstance(n.kind, SeparableConv2D)]
        assert [c.kind.stride for c in convs] == [1, 1, 2]
