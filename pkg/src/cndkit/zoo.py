"""Builders for the architectures the toolkit analyzes.

Three graphs are provided: the 36-conv/14-module separable-convolution
baseline (Xception layout), a squeeze/expand-optimized variant of it, and an
inverted-residual reference (MobileNetV2 layout, width 1.0).

Conventions shared by all builders:
  * convolutions carry no bias (a BatchNorm follows each); the classifier
    Dense carries bias,
  * each conv is emitted as conv -> BatchNorm -> relu unless noted
    (residual projections and inverted-residual bottlenecks skip the relu),
  * module tags follow ``flow/mN/role`` (see graph module docstring).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidFireSpecError, ValidationError
from .graph import (
    Activation,
    Add,
    BatchNorm,
    Conv2D,
    Dense,
    GlobalAvgPool,
    Input,
    LayerKind,
    LayerNode,
    MaxPool,
    ModelGraph,
    SeparableConv2D,
    TensorShape,
    make_tag,
    validate,
)

STEM_FILTERS = (32, 64)
ENTRY_MODULE_FILTERS = (128, 256, 728)
MIDDLE_MODULE_COUNT = 8
MIDDLE_FILTERS = 728
EXIT_FILTERS = (728, 1024, 1536, 2048)


@dataclass(frozen=True)
class FireModuleSpec:
    """Squeeze/expand filter counts of one fire module.

    A usable spec keeps the squeeze width below the combined expand width
    (s1x1 < e1x1 + e3x3); construction allows any positive counts so that
    validators and passes can report the violation themselves.
    """

    s1x1: int
    e1x1: int
    e3x3: int

    def __post_init__(self):
        for name in ("s1x1", "e1x1", "e3x3"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValidationError(f"FireModuleSpec.{name} must be a positive integer, got {v!r}")

    def is_valid(self) -> bool:
        return self.s1x1 < self.e1x1 + self.e3x3


def check_fire_spec(spec: FireModuleSpec, module: str | None = None) -> None:
    if not spec.is_valid():
        raise InvalidFireSpecError(
            f"squeeze filters must stay below the expand total: "
            f"s1x1={spec.s1x1} is not < e1x1+e3x3={spec.e1x1 + spec.e3x3}",
            module=module,
        )


@dataclass(frozen=True)
class OptimizedConfig:
    """Fire-module widths for the optimized build.

    One spec per entry-flow residual module (3) and per middle-flow module
    (8); the exit flow keeps its original filter counts.
    """

    entry_fire: tuple[FireModuleSpec, ...]
    middle_fire: tuple[FireModuleSpec, ...]
    exit_filters: tuple[int, int, int, int] = EXIT_FILTERS

    def __post_init__(self):
        object.__setattr__(self, "entry_fire", tuple(self.entry_fire))
        object.__setattr__(self, "middle_fire", tuple(self.middle_fire))
        object.__setattr__(self, "exit_filters", tuple(self.exit_filters))

    def check(self) -> None:
        if len(self.entry_fire) != len(ENTRY_MODULE_FILTERS):
            raise ValidationError(
                f"entry_fire needs {len(ENTRY_MODULE_FILTERS)} specs, got {len(self.entry_fire)}"
            )
        if len(self.middle_fire) != MIDDLE_MODULE_COUNT:
            raise ValidationError(
                f"middle_fire needs {MIDDLE_MODULE_COUNT} specs, got {len(self.middle_fire)}"
            )
        if len(self.exit_filters) != 4:
            raise ValidationError(f"exit_filters needs 4 counts, got {len(self.exit_filters)}")
        for i, spec in enumerate(self.entry_fire):
            check_fire_spec(spec, module=f"entry_flow/m{i + 2}")
        for i, spec in enumerate(self.middle_fire):
            check_fire_spec(spec, module=f"middle_flow/m{i + 5}")


# Widths picked so the optimized build totals 15,798,273 params (~25% below
# the 21,068,429 baseline) while every squeeze stays narrower than its
# module's input and every expand1 is narrower than the original channels.
DEFAULT_OPTIMIZED_CONFIG = OptimizedConfig(
    entry_fire=(
        FireModuleSpec(64, 96, 128),
        FireModuleSpec(128, 192, 256),
        FireModuleSpec(256, 364, 728),
    ),
    middle_fire=tuple(FireModuleSpec(414, 600, 728) for _ in range(MIDDLE_MODULE_COUNT)),
)


class _Assembler:
    """Incremental graph builder used by the zoo; validates on build()."""

    def __init__(self, name: str, input_shape: TensorShape, num_classes: int,
                 metadata: dict[str, str] | None = None):
        self.name = name
        self.input_shape = input_shape
        self.num_classes = num_classes
        self.metadata = dict(metadata or {})
        self.nodes: list[LayerNode] = []
        self.add("input", Input(), (), None)

    def add(self, node_id: str, kind: LayerKind, inputs: tuple[str, ...], tag: str | None) -> str:
        self.nodes.append(LayerNode(id=node_id, kind=kind, inputs=tuple(inputs), tag=tag))
        return node_id

    def conv_unit(self, base_id: str, kind: LayerKind, source: str, tag: str,
                  activation: str | None = "relu") -> str:
        """conv -> BatchNorm [-> Activation]; returns the unit's tail id."""
        out = self.add(base_id, kind, (source,), tag)
        out = self.add(f"{base_id}_bn", BatchNorm(), (out,), f"{tag}_bn")
        if activation is not None:
            out = self.add(f"{base_id}_act", Activation(activation), (out,), f"{tag}_act")
        return out

    def build(self) -> ModelGraph:
        graph = ModelGraph(
            name=self.name,
            input_shape=self.input_shape,
            num_classes=self.num_classes,
            nodes=tuple(self.nodes),
            metadata=self.metadata,
        )
        return validate(graph)


def _check_head(num_classes: int) -> None:
    if num_classes < 2:
        raise ValidationError(f"classifier head needs at least 2 classes, got {num_classes}")


def make_fire_module(
    input_id: str,
    spec: FireModuleSpec,
    stride_out: int = 1,
    *,
    id_prefix: str | None = None,
    module_tag: str = "fire/m1",
) -> list[LayerNode]:
    """Nodes of one fire module: squeeze 1x1 -> expand 1x1 -> expand 3x3.

    Every conv is separable and followed by BatchNorm + relu. ``stride_out``
    is applied to the final 3x3 expand so a module can downsample in place.
    Returns the nodes in wiring order; the last node is the module output.
    """
    check_fire_spec(spec, module=module_tag)
    prefix = id_prefix if id_prefix is not None else module_tag.replace("/", "_")
    plan = (
        ("squeeze", SeparableConv2D(spec.s1x1, 1)),
        ("expand1", SeparableConv2D(spec.e1x1, 1)),
        ("expand3", SeparableConv2D(spec.e3x3, 3, stride=stride_out)),
    )
    nodes: list[LayerNode] = []
    source = input_id
    for role, kind in plan:
        base = f"{prefix}_{role}"
        tag = f"{module_tag}/{role}"
        nodes.append(LayerNode(id=base, kind=kind, inputs=(source,), tag=tag))
        nodes.append(LayerNode(id=f"{base}_bn", kind=BatchNorm(), inputs=(base,), tag=f"{tag}_bn"))
        nodes.append(
            LayerNode(id=f"{base}_act", kind=Activation("relu"), inputs=(f"{base}_bn",), tag=f"{tag}_act")
        )
        source = f"{base}_act"
    return nodes


def _stem(asm: _Assembler) -> str:
    x = asm.conv_unit(
        "stem_conv1", Conv2D(STEM_FILTERS[0], 3, stride=2, padding="valid"), "input",
        make_tag("entry_flow", "m1", "conv1"),
    )
    return asm.conv_unit(
        "stem_conv2", Conv2D(STEM_FILTERS[1], 3, padding="valid"), x,
        make_tag("entry_flow", "m1", "conv2"),
    )


def _pool_residual_tail(asm: _Assembler, prefix: str, flow: str, mod: str,
                        main_tail: str, module_input: str, out_filters: int) -> str:
    """MaxPool on the main path + strided 1x1 projection, joined by Add."""
    pool = asm.add(f"{prefix}_pool", MaxPool(3, 2), (main_tail,), make_tag(flow, mod, "pool"))
    res = asm.conv_unit(
        f"{prefix}_res", Conv2D(out_filters, 1, stride=2), module_input,
        make_tag(flow, mod, "residual"), activation=None,
    )
    return asm.add(f"{prefix}_add", Add(), (pool, res), make_tag(flow, mod, "add"))


def _head(asm: _Assembler, source: str, flow: str, mod: str) -> str:
    x = asm.add("gap", GlobalAvgPool(), (source,), make_tag(flow, mod, "gap"))
    x = asm.add("classifier", Dense(asm.num_classes), (x,), make_tag(flow, mod, "head"))
    return asm.add("predictions", Activation("softmax"), (x,), make_tag(flow, mod, "head_act"))


def build_xception(
    input_shape: TensorShape = TensorShape(299, 299, 3), num_classes: int = 101
) -> ModelGraph:
    """Baseline graph: 36 convs in 14 modules, residuals around all but the
    first and last, downsampling in the entry flow and once in the exit flow.
    """
    _check_head(num_classes)
    asm = _Assembler("xception", input_shape, num_classes,
                     {"family": "xception", "variant": "original"})
    x = _stem(asm)

    for i, filters in enumerate(ENTRY_MODULE_FILTERS):
        mod = f"m{i + 2}"
        prefix = f"entry_{mod}"
        a = asm.conv_unit(f"{prefix}_sep1", SeparableConv2D(filters, 3), x,
                          make_tag("entry_flow", mod, "sep1"))
        b = asm.conv_unit(f"{prefix}_sep2", SeparableConv2D(filters, 3), a,
                          make_tag("entry_flow", mod, "sep2"))
        x = _pool_residual_tail(asm, prefix, "entry_flow", mod, b, x, filters)

    for i in range(MIDDLE_MODULE_COUNT):
        mod = f"m{i + 5}"
        prefix = f"middle_{mod}"
        tail = x
        for j in range(3):
            tail = asm.conv_unit(
                f"{prefix}_sep{j + 1}", SeparableConv2D(MIDDLE_FILTERS, 3), tail,
                make_tag("middle_flow", mod, f"sep{j + 1}"),
            )
        x = asm.add(f"{prefix}_add", Add(), (tail, x), make_tag("middle_flow", mod, "add"))

    f1, f2, f3, f4 = EXIT_FILTERS
    a = asm.conv_unit("exit_m13_sep1", SeparableConv2D(f1, 3), x, make_tag("exit_flow", "m13", "sep1"))
    b = asm.conv_unit("exit_m13_sep2", SeparableConv2D(f2, 3), a, make_tag("exit_flow", "m13", "sep2"))
    x = _pool_residual_tail(asm, "exit_m13", "exit_flow", "m13", b, x, f2)
    x = asm.conv_unit("exit_m14_sep1", SeparableConv2D(f3, 3), x, make_tag("exit_flow", "m14", "sep1"))
    x = asm.conv_unit("exit_m14_sep2", SeparableConv2D(f4, 3), x, make_tag("exit_flow", "m14", "sep2"))
    _head(asm, x, "exit_flow", "m14")
    return asm.build()


def build_optimized_xception(
    input_shape: TensorShape = TensorShape(299, 299, 3),
    num_classes: int = 101,
    config: OptimizedConfig = DEFAULT_OPTIMIZED_CONFIG,
) -> ModelGraph:
    """Optimized variant: fire modules in the entry and middle flows, exit
    flow kept at its original widths but with each module's leading separable
    conv switched to a 1x1 kernel. Macro structure (residuals, pooling
    positions, head) matches :func:`build_xception`.
    """
    _check_head(num_classes)
    config.check()
    asm = _Assembler("optimized-xception", input_shape, num_classes,
                     {"family": "xception", "variant": "optimized"})
    x = _stem(asm)
    channels = STEM_FILTERS[1]

    for i, spec in enumerate(config.entry_fire):
        mod = f"m{i + 2}"
        module_tag = f"entry_flow/{mod}"
        fire = make_fire_module(x, spec, id_prefix=f"entry_{mod}", module_tag=module_tag)
        for node in fire:
            asm.nodes.append(node)
        x = _pool_residual_tail(asm, f"entry_{mod}", "entry_flow", mod, fire[-1].id, x, spec.e3x3)
        channels = spec.e3x3

    for i, spec in enumerate(config.middle_fire):
        mod = f"m{i + 5}"
        module_tag = f"middle_flow/{mod}"
        prefix = f"middle_{mod}"
        fire = make_fire_module(x, spec, id_prefix=prefix, module_tag=module_tag)
        for node in fire:
            asm.nodes.append(node)
        if spec.e3x3 == channels:
            residual = x
        else:
            residual = asm.conv_unit(
                f"{prefix}_res", Conv2D(spec.e3x3, 1), x,
                make_tag("middle_flow", mod, "residual"), activation=None,
            )
        x = asm.add(f"{prefix}_add", Add(), (fire[-1].id, residual),
                    make_tag("middle_flow", mod, "add"))
        channels = spec.e3x3

    f1, f2, f3, f4 = config.exit_filters
    a = asm.conv_unit("exit_m13_sep1", SeparableConv2D(f1, 1), x, make_tag("exit_flow", "m13", "sep1"))
    b = asm.conv_unit("exit_m13_sep2", SeparableConv2D(f2, 3), a, make_tag("exit_flow", "m13", "sep2"))
    x = _pool_residual_tail(asm, "exit_m13", "exit_flow", "m13", b, x, f2)
    x = asm.conv_unit("exit_m14_sep1", SeparableConv2D(f3, 1), x, make_tag("exit_flow", "m14", "sep1"))
    x = asm.conv_unit("exit_m14_sep2", SeparableConv2D(f4, 3), x, make_tag("exit_flow", "m14", "sep2"))
    _head(asm, x, "exit_flow", "m14")
    return asm.build()


# (expansion factor, output channels, repeats, first stride) per stage
_MOBILENET_V2_STAGES = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)


def build_mobilenet_v2(
    input_shape: TensorShape = TensorShape(224, 224, 3), num_classes: int = 101
) -> ModelGraph:
    """Inverted-residual reference network at width 1.0.

    The depthwise 3x3 + linear 1x1 projection of each bottleneck is expressed
    as a single SeparableConv2D node, which is how this IR accounts separable
    parameters; the contract is parameter equivalence, not op-for-op
    equivalence with a runtime implementation.
    """
    _check_head(num_classes)
    asm = _Assembler("mobilenetv2", input_shape, num_classes,
                     {"family": "mobilenetv2", "variant": "width-1.0"})
    x = asm.conv_unit("stem_conv", Conv2D(32, 3, stride=2), "input", make_tag("stem", "m1", "conv"))
    channels = 32

    block = 2
    for expansion, out_channels, repeats, first_stride in _MOBILENET_V2_STAGES:
        for r in range(repeats):
            stride = first_stride if r == 0 else 1
            mod = f"m{block}"
            prefix = f"block{block}"
            tail = x
            if expansion != 1:
                tail = asm.conv_unit(
                    f"{prefix}_expand", Conv2D(channels * expansion, 1), tail,
                    make_tag("blocks", mod, "expand"),
                )
            tail = asm.conv_unit(
                f"{prefix}_sepconv", SeparableConv2D(out_channels, 3, stride=stride), tail,
                make_tag("blocks", mod, "sepconv"), activation=None,
            )
            if stride == 1 and channels == out_channels:
                tail = asm.add(f"{prefix}_add", Add(), (tail, x), make_tag("blocks", mod, "add"))
            x = tail
            channels = out_channels
            block += 1

    x = asm.conv_unit("head_conv", Conv2D(1280, 1), x, make_tag("head", f"m{block}", "conv"))
    _head(asm, x, "head", f"m{block}")
    return asm.build()
