"""Static resource analysis: parameters, FLOPs, activations, memory.

Parameter accounting per layer kind (C = input channels, M = filters,
K = kernel elements, i.e. 1 or 9):

    Conv2D            kernel = C*M*K            aux = M if bias else 0
    SeparableConv2D   kernel = C*K + C*M        aux = 0 (never biased)
    BatchNorm         kernel = 0                aux = 4C (2C trainable + 2C stats)
    Dense             kernel = units*C_flat     aux = units if bias else 0
    Pool/Add/Act/...  0

Dense flattens its input, so C_flat = H*W*C of the incoming shape.

The memory model is deliberately coarse: 4 bytes per scalar, gradients and
optimizer state sized by trainable params (momentum 1x, adaptive 2x), training
activations = 2x the forward sum (forward + gradient buffers), inference
activations = the peak in+out footprint of a single layer. It predicts
orderings between models, not absolute process-level megabytes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .errors import ValidationError
from .graph import (
    BatchNorm,
    Conv2D,
    Dense,
    LayerNode,
    ModelGraph,
    SeparableConv2D,
    TensorShape,
    infer_shapes,
    topo_sort,
)

BYTES_PER_SCALAR = 4
OPTIMIZER_STATE_MULTIPLIER = {"sgd_momentum": 1, "adam": 2}


@dataclass(frozen=True)
class LayerParams:
    """Per-layer parameter accounting entry."""

    node_id: str
    channels_in: int
    filters: int
    kernel_elems: int
    kernel_params: int
    aux_params: int

    @property
    def total(self) -> int:
        return self.kernel_params + self.aux_params


@dataclass(frozen=True)
class ParamReport:
    per_layer: tuple[LayerParams, ...]
    total: int
    total_trainable: int


def round_params_millions(total: int) -> float:
    """Round a raw parameter count to 0.1M, half up (21_068_429 -> 21.1)."""
    return float((Decimal(total) / Decimal(1_000_000)).quantize(Decimal("0.1"), ROUND_HALF_UP))


def count_params_layer(node: LayerNode, input_channels: int) -> LayerParams:
    """Parameter entry for one node given its (flattened, for Dense) input channels."""
    kind = node.kind
    if isinstance(kind, Conv2D):
        k = kind.kernel * kind.kernel
        kernel = input_channels * kind.filters * k
        aux = kind.filters if kind.has_bias else 0
        return LayerParams(node.id, input_channels, kind.filters, k, kernel, aux)
    if isinstance(kind, SeparableConv2D):
        k = kind.kernel * kind.kernel
        kernel = input_channels * k + input_channels * kind.filters
        return LayerParams(node.id, input_channels, kind.filters, k, kernel, 0)
    if isinstance(kind, BatchNorm):
        return LayerParams(node.id, input_channels, input_channels, 0, 0, 4 * input_channels)
    if isinstance(kind, Dense):
        kernel = kind.units * input_channels
        aux = kind.units if kind.has_bias else 0
        return LayerParams(node.id, input_channels, kind.units, 1, kernel, aux)
    return LayerParams(node.id, input_channels, 0, 0, 0, 0)


def _layer_input_channels(kind, shape_in: TensorShape | None) -> int:
    if shape_in is None:
        return 0
    if isinstance(kind, Dense):
        return shape_in.elements
    return shape_in.channels


def count_params(graph: ModelGraph) -> ParamReport:
    """Parameter report over the whole graph, per-layer entries in topo order."""
    shapes = infer_shapes(graph)
    by_id = graph.node_map()
    per_layer: list[LayerParams] = []
    total = 0
    non_trainable = 0
    for node_id in topo_sort(graph):
        node = by_id[node_id]
        shape_in = shapes[node.inputs[0]] if node.inputs else None
        entry = count_params_layer(node, _layer_input_channels(node.kind, shape_in))
        per_layer.append(entry)
        total += entry.total
        if isinstance(node.kind, BatchNorm):
            non_trainable += 2 * entry.channels_in  # moving statistics
    return ParamReport(tuple(per_layer), total, total - non_trainable)


def flops_estimate(graph: ModelGraph, input_shape: TensorShape | None = None) -> int:
    """Multiply-accumulate count for one forward pass at batch 1."""
    if input_shape is not None and input_shape != graph.input_shape:
        graph = dataclasses.replace(graph, input_shape=input_shape)
    shapes = infer_shapes(graph)
    by_id = graph.node_map()
    macs = 0
    for node_id in topo_sort(graph):
        node = by_id[node_id]
        kind = node.kind
        if not node.inputs:
            continue
        out = shapes[node_id]
        shape_in = shapes[node.inputs[0]]
        if isinstance(kind, Conv2D):
            macs += out.area * kind.filters * shape_in.channels * kind.kernel * kind.kernel
        elif isinstance(kind, SeparableConv2D):
            c = shape_in.channels
            macs += out.area * (c * kind.kernel * kind.kernel + c * kind.filters)
        elif isinstance(kind, Dense):
            macs += kind.units * shape_in.elements
    return macs


def activation_sizes(graph: ModelGraph, batch: int = 1) -> list[tuple[str, int]]:
    """Output element count (batch * H * W * C) per node, in topo order."""
    if batch < 1:
        raise ValidationError(f"batch must be >= 1, got {batch}")
    shapes = infer_shapes(graph)
    return [(node_id, batch * shapes[node_id].elements) for node_id in topo_sort(graph)]


@dataclass(frozen=True)
class MemoryAssumptions:
    bytes_per_scalar: int
    optimizer: str
    optimizer_state_multiplier: int
    batch_size: int
    mode: str
    overhead_bytes: int


@dataclass(frozen=True)
class MemoryEstimate:
    weights_bytes: int
    gradients_bytes: int
    optimizer_state_bytes: int
    activations_bytes: int
    total_bytes: int
    assumptions: MemoryAssumptions

    def as_dict(self) -> dict:
        return {
            "weights_bytes": self.weights_bytes,
            "gradients_bytes": self.gradients_bytes,
            "optimizer_state_bytes": self.optimizer_state_bytes,
            "activations_bytes": self.activations_bytes,
            "total_bytes": self.total_bytes,
            "assumptions": {
                "bytes_per_scalar": self.assumptions.bytes_per_scalar,
                "optimizer": self.assumptions.optimizer,
                "optimizer_state_multiplier": self.assumptions.optimizer_state_multiplier,
                "batch_size": self.assumptions.batch_size,
                "mode": self.assumptions.mode,
                "overhead_bytes": self.assumptions.overhead_bytes,
            },
        }


def memory_estimate(
    graph: ModelGraph,
    batch: int = 1,
    mode: str = "training",
    optimizer: str = "adam",
    overhead_bytes: int = 0,
) -> MemoryEstimate:
    """Modeled memory footprint; see module docstring for the formula."""
    if mode not in ("training", "inference"):
        raise ValidationError(f"mode must be 'training' or 'inference', got {mode!r}")
    if optimizer not in OPTIMIZER_STATE_MULTIPLIER:
        raise ValidationError(
            f"optimizer must be one of {sorted(OPTIMIZER_STATE_MULTIPLIER)}, got {optimizer!r}"
        )
    if batch < 1:
        raise ValidationError(f"batch must be >= 1, got {batch}")
    if overhead_bytes < 0:
        raise ValidationError(f"overhead_bytes must be >= 0, got {overhead_bytes}")

    report = count_params(graph)
    weights = report.total * BYTES_PER_SCALAR
    multiplier = OPTIMIZER_STATE_MULTIPLIER[optimizer]
    sizes = activation_sizes(graph, batch)

    if mode == "training":
        gradients = report.total_trainable * BYTES_PER_SCALAR
        optimizer_state = multiplier * report.total_trainable * BYTES_PER_SCALAR
        activations = 2 * sum(elems for _, elems in sizes) * BYTES_PER_SCALAR
    else:
        gradients = 0
        optimizer_state = 0
        by_node = dict(sizes)
        peak = 0
        for node in graph.nodes:
            footprint = by_node[node.id] + sum(by_node[i] for i in node.inputs)
            peak = max(peak, footprint)
        activations = peak * BYTES_PER_SCALAR

    total = weights + gradients + optimizer_state + activations + overhead_bytes
    return MemoryEstimate(
        weights_bytes=weights,
        gradients_bytes=gradients,
        optimizer_state_bytes=optimizer_state,
        activations_bytes=activations,
        total_bytes=total,
        assumptions=MemoryAssumptions(
            bytes_per_scalar=BYTES_PER_SCALAR,
            optimizer=optimizer,
            optimizer_state_multiplier=multiplier,
            batch_size=batch,
            mode=mode,
            overhead_bytes=overhead_bytes,
        ),
    )
