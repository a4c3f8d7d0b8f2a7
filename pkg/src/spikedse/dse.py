"""Joint design-space exploration over precision x timestep x window.

Each grid point quantizes the full-precision baseline trained for its
(T, W) pair, evaluates accuracy, and attaches the analytic cost report.
Training happens once per (T, W); quantization is pure post-processing, so
the default grid costs eight trainings, not thirty-two.

Accuracy can come from live evaluation (synthetic data) or from an
imported reference table of reported NCARS results, selected per run; the
source is recorded on every point. Memory constraints are expressed in
megabits of packed weight storage (1 "MB" = 1e6 bits): that is the only
convention under which the published constraint walkthroughs reproduce.
Latency constraints compare each point's ratio against the 20-timestep
full-precision baseline of its own window.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from itertools import product
from pathlib import Path

from .costs import (
    CostConstants,
    CostReport,
    OpCount,
    full_report,
    setting_tag,
)
from .errors import EmptyAxis, MissingBaseline, NoFeasiblePoint
from .events import EventSample, encode_dataset
from .network import WeightSet, build_network
from .quantize import QuantConfig, ptq
from .training import evaluate

BASELINE_TAG = "32b_20t_100w"
MEMORY_UNIT_BITS = 1_000_000  # one "MB" of packed weight storage


@dataclass(frozen=True)
class DseGrid:
    bits: tuple[int, ...] = (32, 16, 12, 10)
    timesteps: tuple[int, ...] = (20, 15, 10, 5)
    windows: tuple[int, ...] = (100, 50)

    @classmethod
    def from_json(cls, path: str | Path) -> "DseGrid":
        raw = json.loads(Path(path).read_text())
        return cls(
            bits=tuple(raw["bits"]),
            timesteps=tuple(raw["timesteps"]),
            windows=tuple(raw["windows"]),
        )


@dataclass(frozen=True)
class DsePoint:
    bits: int
    timesteps: int
    window: int
    accuracy: float
    cost: CostReport
    accuracy_source: str = "live"

    @property
    def tag(self) -> str:
        return self.cost.tag


@dataclass(frozen=True)
class Constraints:
    max_memory_bits: int | None = None
    max_latency_ratio: float | None = None
    min_accuracy: float | None = None

    def __post_init__(self):
        for name in ("max_memory_bits", "max_latency_ratio", "min_accuracy"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive when present")

    @classmethod
    def from_json(cls, text_or_dict) -> "Constraints":
        raw = (
            json.loads(text_or_dict)
            if isinstance(text_or_dict, str)
            else dict(text_or_dict)
        )
        memory_bits = raw.get("max_memory_bits")
        if memory_bits is None and "max_memory_mb" in raw:
            memory_bits = int(raw["max_memory_mb"] * MEMORY_UNIT_BITS)
        return cls(
            max_memory_bits=memory_bits,
            max_latency_ratio=raw.get("max_latency_ratio"),
            min_accuracy=raw.get("min_accuracy"),
        )


def enumerate_grid(grid: DseGrid) -> list[tuple[int, int, int]]:
    """Full Cartesian product, each axis descending, bits outermost."""
    if not grid.bits or not grid.timesteps or not grid.windows:
        raise EmptyAxis("every grid axis needs at least one value")
    return list(
        product(
            sorted(grid.bits, reverse=True),
            sorted(grid.timesteps, reverse=True),
            sorted(grid.windows, reverse=True),
        )
    )


def load_accuracy_table(path: str | Path | None = None) -> dict[str, float]:
    """Tag -> accuracy fractions; defaults to the bundled NCARS reference."""
    if path is None:
        text = (
            resources.files("spikedse").joinpath("data/ncars_accuracy.json").read_text()
        )
    else:
        text = Path(path).read_text()
    return {tag: float(acc) for tag, acc in json.loads(text).items()}


def run_dse(
    datasets: dict[int, list[EventSample]] | dict[int, list] | None,
    baselines: dict[tuple[int, int], WeightSet] | None,
    grid: DseGrid,
    constants: CostConstants,
    *,
    accuracy_table: dict[str, float] | None = None,
    strict_windows: bool = True,
    workers: int = 1,
) -> list[DsePoint]:
    """Evaluate every grid point; returns points in grid order.

    datasets maps window -> test-split EventSamples (or pre-encoded
    (frames, label) pairs); baselines maps (timesteps, window) -> trained
    full-precision WeightSet. With accuracy_table set, neither is touched
    and accuracies come from the table instead of live evaluation.
    """
    settings = enumerate_grid(grid)
    specs = {w: build_network(w, strict=strict_windows) for w in grid.windows}
    reports = {
        (b, t, w): full_report(specs[w], b, t, w, constants) for b, t, w in settings
    }

    if accuracy_table is not None:
        points = []
        for b, t, w in settings:
            tag = setting_tag(b, t, w)
            if tag not in accuracy_table:
                raise MissingBaseline(f"accuracy table has no entry for {tag}")
            points.append(
                DsePoint(b, t, w, accuracy_table[tag], reports[(b, t, w)], "table")
            )
        return points

    if baselines is None or datasets is None:
        raise MissingBaseline("live DSE needs datasets and trained baselines")
    for _, t, w in settings:
        if (t, w) not in baselines:
            raise MissingBaseline(f"no trained baseline for T={t}, W={w}")

    encoded: dict[tuple[int, int], list] = {}

    def encoded_split(t: int, w: int) -> list:
        key = (t, w)
        if key not in encoded:
            samples = datasets[w]
            if samples and isinstance(samples[0], EventSample):
                encoded[key] = encode_dataset(samples, w, t)
            else:
                encoded[key] = samples
        return encoded[key]

    accuracy_cache: dict[tuple[int, int, int], float] = {}

    def point_accuracy(setting: tuple[int, int, int]) -> float:
        b, t, w = setting
        if setting not in accuracy_cache:
            quantized = ptq(baselines[(t, w)], QuantConfig(bits=b))
            accuracy_cache[setting] = evaluate(
                specs[w], quantized, encoded_split(t, w)
            )
        return accuracy_cache[setting]

    if workers > 1:
        # pre-encode serially (shared cache), evaluate points in parallel
        for _, t, w in settings:
            encoded_split(t, w)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accuracies = list(pool.map(point_accuracy, settings))
    else:
        accuracies = [point_accuracy(s) for s in settings]

    return [
        DsePoint(b, t, w, acc, reports[(b, t, w)], "live")
        for (b, t, w), acc in zip(settings, accuracies)
    ]


def filter_constraints(
    points: list[DsePoint], constraints: Constraints
) -> list[DsePoint]:
    """Keep points satisfying every present constraint (order preserved).

    The latency constraint compares each point's latency_ratio, i.e. its
    latency against the 20-timestep full-precision baseline of the same
    window; that is the normalization under which the published constraint
    walkthroughs reproduce.
    """
    kept = []
    for p in points:
        if (
            constraints.max_memory_bits is not None
            and p.cost.memory_bits > constraints.max_memory_bits
        ):
            continue
        if (
            constraints.max_latency_ratio is not None
            and p.cost.latency_ratio > constraints.max_latency_ratio
        ):
            continue
        if constraints.min_accuracy is not None and p.accuracy < constraints.min_accuracy:
            continue
        kept.append(p)
    return kept


def _dominates(p: DsePoint, q: DsePoint) -> bool:
    ge_acc = p.accuracy >= q.accuracy
    le_costs = (
        p.cost.memory_bits <= q.cost.memory_bits
        and p.cost.latency_units <= q.cost.latency_units
        and p.cost.energy_units <= q.cost.energy_units
    )
    strict = (
        p.accuracy > q.accuracy
        or p.cost.memory_bits < q.cost.memory_bits
        or p.cost.latency_units < q.cost.latency_units
        or p.cost.energy_units < q.cost.energy_units
    )
    return ge_acc and le_costs and strict


def pareto_front(points: list[DsePoint]) -> list[DsePoint]:
    """Non-dominated points, sorted by accuracy descending.

    Sorting accuracy-first guarantees any dominator precedes its victims,
    so each candidate only needs checking against the front built so far.
    """
    ordered = sorted(
        points,
        key=lambda p: (
            -p.accuracy,
            p.cost.memory_bits,
            p.cost.latency_units,
            p.cost.energy_units,
            p.tag,
        ),
    )
    front: list[DsePoint] = []
    for candidate in ordered:
        if not any(_dominates(kept, candidate) for kept in front):
            front.append(candidate)
    return front


def select(
    points: list[DsePoint],
    constraints: Constraints,
    policy: str = "max_accuracy",
) -> DsePoint:
    """Pick one point under the constraints.

    max_accuracy takes the highest accuracy; ties resolve to lower memory,
    then lower latency, then lower bits.
    """
    if policy != "max_accuracy":
        raise ValueError(f"unknown selection policy {policy!r}")
    feasible = filter_constraints(points, constraints)
    if not feasible:
        raise NoFeasiblePoint("no point satisfies the given constraints")
    return min(
        feasible,
        key=lambda p: (-p.accuracy, p.cost.memory_bits, p.cost.latency_units, p.bits),
    )


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

_CSV_COLUMNS = [
    "tag",
    "bits",
    "timesteps",
    "window",
    "accuracy",
    "accuracy_source",
    "memory_bits",
    "latency_units",
    "energy_units",
    "latency_ratio",
    "synaptic_ops",
    "neuron_ops",
    "memory_vs_baseline",
    "latency_vs_baseline",
    "energy_vs_baseline",
]


def emit_report(points: list[DsePoint], out_dir: str | Path) -> tuple[Path, Path]:
    """Write dse_results.csv (all points) and pareto.csv (front).

    Normalized columns divide by the 32b_20t_100w row (or the largest
    setting present); the baseline row's own ratios are exactly 1.0.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    baseline = next(
        (p for p in points if p.tag == BASELINE_TAG),
        max(points, key=lambda p: (p.bits, p.timesteps, p.window)) if points else None,
    )

    def rows(subset):
        for p in subset:
            yield [
                p.tag,
                p.bits,
                p.timesteps,
                p.window,
                repr(p.accuracy),
                p.accuracy_source,
                p.cost.memory_bits,
                repr(p.cost.latency_units),
                repr(p.cost.energy_units),
                repr(p.cost.latency_ratio),
                p.cost.op_count.synaptic_ops,
                p.cost.op_count.neuron_ops,
                repr(p.cost.memory_bits / baseline.cost.memory_bits),
                repr(p.cost.latency_units / baseline.cost.latency_units),
                repr(p.cost.energy_units / baseline.cost.energy_units),
            ]

    results_path = out / "dse_results.csv"
    pareto_path = out / "pareto.csv"
    for path, subset in ((results_path, points), (pareto_path, pareto_front(points))):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_COLUMNS)
            writer.writerows(rows(subset))
    return results_path, pareto_path


def parse_report(path: str | Path) -> list[DsePoint]:
    """Read a dse_results.csv back into DsePoints.

    Per-layer op breakdowns are not serialized, so the reconstructed
    OpCount carries totals only.
    """
    points = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ops = OpCount(
                synaptic_ops=int(row["synaptic_ops"]),
                neuron_ops=int(row["neuron_ops"]),
            )
            cost = CostReport(
                tag=row["tag"],
                bits=int(row["bits"]),
                timesteps=int(row["timesteps"]),
                window=int(row["window"]),
                memory_bits=int(row["memory_bits"]),
                latency_units=float(row["latency_units"]),
                energy_units=float(row["energy_units"]),
                latency_ratio=float(row["latency_ratio"]),
                op_count=ops,
            )
            points.append(
                DsePoint(
                    bits=cost.bits,
                    timesteps=cost.timesteps,
                    window=cost.window,
                    accuracy=float(row["accuracy"]),
                    cost=cost,
                    accuracy_source=row["accuracy_source"],
                )
            )
    return points
