"""Dual-objective model selection over measurement records.

Records carry measured accuracy and memory per model; the analysis classifies
each record into accuracy/memory quadrants (accuracy frontier defaulting to
70%, memory frontier at the midpoint of the observed min and max) and
extracts the non-dominated set for the two objectives: maximize test
accuracy, minimize average memory. Test accuracy drives classification;
training accuracy and the time columns are carried but never enter
dominance.

Boundary rules are inclusive: a record exactly on the accuracy frontier is
High Accuracy, one exactly on the memory frontier is Low Memory.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from importlib import resources

from .errors import EmptyInputError, MeasurementRangeError, ParseError

CSV_HEADER = (
    "model",
    "experiment",
    "train_acc",
    "test_acc",
    "avg_mem_mb",
    "avg_epoch_time_s",
    "avg_inf_time_ms",
    "params",
)

FIXTURE_NAMES = ("caltech101", "pcb_scratch", "pcb_pretrained")


class Quadrant(enum.Enum):
    HIGH_ACC_LOW_MEM = "HighAccLowMem"
    HIGH_ACC_HIGH_MEM = "HighAccHighMem"
    LOW_ACC_LOW_MEM = "LowAccLowMem"
    LOW_ACC_HIGH_MEM = "LowAccHighMem"


@dataclass(frozen=True)
class ModelMeasurement:
    model: str
    experiment: str
    train_acc: float
    test_acc: float
    avg_mem_mb: float
    avg_epoch_time_s: float | None = None
    avg_inf_time_ms: float | None = None
    params: int | None = None

    def __post_init__(self):
        for name in ("train_acc", "test_acc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise MeasurementRangeError(
                    f"{self.model!r}: {name}={v} outside [0, 100]"
                )
        if self.avg_mem_mb <= 0:
            raise MeasurementRangeError(
                f"{self.model!r}: avg_mem_mb={self.avg_mem_mb} must be positive"
            )


@dataclass(frozen=True)
class QuadrantConfig:
    accuracy_frontier: float = 70.0
    memory_frontier: float | None = None  # None -> midpoint of min/max

    def __post_init__(self):
        if not 0.0 < self.accuracy_frontier < 100.0:
            raise MeasurementRangeError(
                f"accuracy_frontier={self.accuracy_frontier} outside (0, 100)"
            )


def _parse_float(value: str, row: int, column: str) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise ParseError(f"cannot parse {value!r} as a number", row=row, column=column) from exc


def _parse_optional(value: str | None, row: int, column: str, kind) -> float | int | None:
    if value is None or value.strip() == "":
        return None
    try:
        return kind(value)
    except ValueError as exc:
        raise ParseError(f"cannot parse {value!r}", row=row, column=column) from exc


def load_measurements(text: str) -> list[ModelMeasurement]:
    """Parse measurement CSV (see CSV_HEADER for the exact column set)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input: missing header row", row=1) from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise ParseError(
            f"header must be {','.join(CSV_HEADER)}", row=1
        )
    records: list[ModelMeasurement] = []
    for row_num, cells in enumerate(reader, start=2):
        if not cells or all(c.strip() == "" for c in cells):
            continue
        if len(cells) != len(CSV_HEADER):
            raise ParseError(
                f"expected {len(CSV_HEADER)} cells, got {len(cells)}", row=row_num
            )
        row = dict(zip(CSV_HEADER, (c.strip() for c in cells)))
        if not row["model"]:
            raise ParseError("model name must not be empty", row=row_num, column="model")
        try:
            records.append(
                ModelMeasurement(
                    model=row["model"],
                    experiment=row["experiment"],
                    train_acc=_parse_float(row["train_acc"], row_num, "train_acc"),
                    test_acc=_parse_float(row["test_acc"], row_num, "test_acc"),
                    avg_mem_mb=_parse_float(row["avg_mem_mb"], row_num, "avg_mem_mb"),
                    avg_epoch_time_s=_parse_optional(row["avg_epoch_time_s"], row_num, "avg_epoch_time_s", float),
                    avg_inf_time_ms=_parse_optional(row["avg_inf_time_ms"], row_num, "avg_inf_time_ms", float),
                    params=_parse_optional(row["params"], row_num, "params", int),
                )
            )
        except MeasurementRangeError as exc:
            raise MeasurementRangeError(f"row {row_num}: {exc}") from exc
    return records


def load_fixture(name: str) -> list[ModelMeasurement]:
    """Load one of the bundled measurement sets (see FIXTURE_NAMES)."""
    if name not in FIXTURE_NAMES:
        raise KeyError(f"unknown fixture {name!r}; available: {FIXTURE_NAMES}")
    text = (resources.files("cndkit") / "fixtures" / f"{name}.csv").read_text(encoding="utf-8")
    return load_measurements(text)


def memory_frontier(records: list[ModelMeasurement]) -> float:
    """Midpoint of the smallest and largest measured memory."""
    if not records:
        raise EmptyInputError("memory_frontier needs at least one record")
    values = [r.avg_mem_mb for r in records]
    return (min(values) + max(values)) / 2


def resolve_memory_frontier(records: list[ModelMeasurement], config: QuadrantConfig) -> float:
    if config.memory_frontier is not None:
        return config.memory_frontier
    return memory_frontier(records)


def classify_quadrant(
    record: ModelMeasurement, config: QuadrantConfig, frontier_mem: float
) -> Quadrant:
    high_acc = record.test_acc >= config.accuracy_frontier
    low_mem = record.avg_mem_mb <= frontier_mem
    if high_acc:
        return Quadrant.HIGH_ACC_LOW_MEM if low_mem else Quadrant.HIGH_ACC_HIGH_MEM
    return Quadrant.LOW_ACC_LOW_MEM if low_mem else Quadrant.LOW_ACC_HIGH_MEM


def dominates(a: ModelMeasurement, b: ModelMeasurement) -> bool:
    """Weak dominance with one strict inequality (acc up, memory down)."""
    return (
        a.test_acc >= b.test_acc
        and a.avg_mem_mb <= b.avg_mem_mb
        and (a.test_acc > b.test_acc or a.avg_mem_mb < b.avg_mem_mb)
    )


def _sort_key(record: ModelMeasurement):
    return (record.avg_mem_mb, -record.test_acc, record.model, record.experiment)


def pareto_front(records: list[ModelMeasurement]) -> list[ModelMeasurement]:
    """Non-dominated subset, sorted by ascending memory.

    Single sweep over the memory-sorted records: within an equal-memory
    group only the highest-accuracy records survive, and a group survives
    only when it improves on the best accuracy seen at strictly lower
    memory. Duplicated points do not dominate each other and are all kept.
    """
    ordered = sorted(records, key=_sort_key)
    front: list[ModelMeasurement] = []
    best_acc: float | None = None
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].avg_mem_mb == ordered[i].avg_mem_mb:
            j += 1
        group = ordered[i:j]
        group_best = max(r.test_acc for r in group)
        if best_acc is None or group_best > best_acc:
            front.extend(r for r in group if r.test_acc == group_best)
            best_acc = group_best
        i = j
    return front


def export_plot_data(records: list[ModelMeasurement], config: QuadrantConfig) -> str:
    """CSV of (model, test_acc, avg_mem_mb, quadrant, on_front) rows plus
    comment lines carrying both frontier values."""
    if records:
        frontier_mem = resolve_memory_frontier(records, config)
    else:
        frontier_mem = config.memory_frontier if config.memory_frontier is not None else float("nan")
    front = pareto_front(records)
    lines = [
        f"# accuracy_frontier={config.accuracy_frontier:g}",
        f"# memory_frontier={frontier_mem:g}",
        "model,test_acc,avg_mem_mb,quadrant,on_front",
    ]
    for record in records:
        quadrant = classify_quadrant(record, config, frontier_mem)
        on_front = "true" if record in front else "false"
        lines.append(
            f"{record.model},{record.test_acc:g},{record.avg_mem_mb:g},{quadrant.value},{on_front}"
        )
    return "\n".join(lines) + "\n"
