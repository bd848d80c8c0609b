"""Fit per-node performance models from aligned metric samples.

Each node gets a linear CPU model (cputil vs. input tuple rate), an optional
capacity model (caputil vs. rate), an output-to-input ratio ``gamma``, and an
optional memory model fitted on post-GC troughs. Nodes are classified from
their saturation signature before fitting:

* any backpressure      -> miscalibrated: record the saturation rate and
                           exclude backpressured windows from the fits
* caputil saturated but CPU idle -> io_bound: rescale the CPU model so that
                           modeled cputil saturates exactly at the true peak
* caputil and CPU saturated with heavy GC -> memory_bound: refuse to model,
                           the operator must allocate more memory and retrain
* otherwise             -> cpu_bound
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from streamplan.dag import LogicalDag, STREAM_MANAGER
from streamplan.errors import TrainingError
from streamplan.metrics import AlignedSample

log = logging.getLogger(__name__)

MIN_SAMPLES = 8

CPU_BOUND = "cpu_bound"
IO_BOUND = "io_bound"
MEMORY_BOUND = "memory_bound"
MISCALIBRATED = "miscalibrated"

# saturation thresholds: caputil above CAPUTIL_SATURATED with cputil below
# CPU_SATURATED_FRACTION of the budget marks an I/O-bound node
CAPUTIL_SATURATED = 0.90
CPU_SATURATED_FRACTION = 0.80
GCTIME_HIGH = 0.10

DRIFT_THRESHOLD = 0.15


@dataclass(frozen=True)
class LinearModel:
    """y = slope * x + intercept over the observed x range."""

    slope: float
    intercept: float
    r_squared: float
    x_min: float
    x_max: float

    def predict(self, x: float) -> float:
        return self.slope * x + self.intercept

    def in_range(self, x: float, tolerance: float = 0.0) -> bool:
        return self.x_min * (1 - tolerance) <= x <= self.x_max * (1 + tolerance)


@dataclass
class NodeModel:
    node: str
    cpu: LinearModel
    gamma: float
    capacity: LinearModel | None = None
    memory: LinearModel | None = None
    classification: str = CPU_BOUND
    saturation_rate: float | None = None
    normalized: bool = False
    max_cpu: float = 1.0

    def peak_rate(self, cpu_budget: float | None = None) -> float:
        """Input rate at which modeled cputil reaches the CPU budget,
        capped by the observed saturation rate when one was recorded."""
        budget = self.max_cpu if cpu_budget is None else cpu_budget
        if self.cpu.slope > 0:
            peak = (budget - self.cpu.intercept) / self.cpu.slope
        else:
            peak = math.inf
        if self.saturation_rate is not None:
            peak = min(peak, self.saturation_rate)
        return peak


def fit_linear(points: Sequence[tuple[float, float]]) -> LinearModel:
    """Ordinary least squares fit with R^2 and the observed x range."""
    if len(points) < MIN_SAMPLES:
        raise TrainingError(f"need at least {MIN_SAMPLES} points, got {len(points)}")
    x = np.asarray([p[0] for p in points], dtype=float)
    y = np.asarray([p[1] for p in points], dtype=float)
    x_mean = x.mean()
    var = float(((x - x_mean) ** 2).sum())
    if var <= 0:
        raise TrainingError("zero variance in x; sweep a wider load range")
    slope = float(((x - x_mean) * (y - y.mean())).sum() / var)
    intercept = float(y.mean() - slope * x_mean)
    residuals = y - (slope * x + intercept)
    ss_res = float((residuals**2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot <= 1e-30:
        r_squared = 1.0 if ss_res <= 1e-30 else 0.0
    else:
        r_squared = max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return LinearModel(
        slope=slope,
        intercept=intercept,
        r_squared=r_squared,
        x_min=float(x.min()),
        x_max=float(x.max()),
    )


def estimate_gamma(samples: Sequence[tuple[float, float]]) -> float:
    """Output-to-input ratio as the slope of a zero-intercept fit.

    A node emitting tuples at zero input is nonphysical for the supported
    operation patterns, hence the forced zero intercept.
    """
    if len(samples) < MIN_SAMPLES:
        raise TrainingError(f"need at least {MIN_SAMPLES} samples, got {len(samples)}")
    x = np.asarray([s[0] for s in samples], dtype=float)
    y = np.asarray([s[1] for s in samples], dtype=float)
    denom = float((x * x).sum())
    if denom <= 0:
        raise TrainingError("all input rates are zero; gamma is undefined")
    return float((x * y).sum() / denom)


def classify_node(
    samples: Sequence[AlignedSample],
    max_cpu: float = 1.0,
    gctime_high: float = GCTIME_HIGH,
) -> tuple[str, float | None]:
    """Classify a node from its saturation signature.

    Returns (classification, saturation_rate). The decision is a pure
    function of sample statistics, so sample order never matters.
    """
    if len(samples) < MIN_SAMPLES:
        raise TrainingError(f"need at least {MIN_SAMPLES} samples, got {len(samples)}")
    backpressured = [s for s in samples if s.backpressure > 0]
    if backpressured:
        saturation = min(s.tuple_rate_in for s in backpressured)
        return MISCALIBRATED, saturation
    max_caputil = max((s.caputil for s in samples if s.caputil is not None), default=0.0)
    max_cputil = max(s.cputil for s in samples)
    max_gctime = max(s.gctime for s in samples)
    if max_caputil > CAPUTIL_SATURATED:
        if max_cputil < CPU_SATURATED_FRACTION * max_cpu:
            return IO_BOUND, None
        if max_gctime > gctime_high:
            return MEMORY_BOUND, None
    return CPU_BOUND, None


def normalize_io_model(model: NodeModel) -> NodeModel:
    """Rescale an I/O-bound node's CPU model so it saturates at the true peak.

    The effective peak R* is where the capacity model reaches 1.0; the CPU
    slope is rewritten so modeled cputil hits the budget exactly at R*. This
    intentionally over-states CPU need below R* to keep configurations
    feasible. Non-I/O-bound models pass through unchanged.
    """
    if model.classification != IO_BOUND:
        return model
    if model.capacity is None:
        raise TrainingError(f"node {model.node!r}: io_bound but no capacity model")
    if model.capacity.slope <= 0:
        raise TrainingError(f"node {model.node!r}: capacity model slope must be > 0")
    peak = (1.0 - model.capacity.intercept) / model.capacity.slope
    if peak <= 0:
        raise TrainingError(f"node {model.node!r}: capacity model implies peak <= 0")
    new_slope = (model.max_cpu - model.cpu.intercept) / peak
    return replace(model, cpu=replace(model.cpu, slope=new_slope), normalized=True)


def filter_gc_troughs(
    mem_series: Sequence[tuple[float, float, float]],
    gctime_series: Sequence[tuple[float, float]],
) -> list[tuple[float, float]]:
    """Keep only memory samples from the first window after a GC trigger.

    ``mem_series`` holds (window_start, tuple_rate_in, memutil) and
    ``gctime_series`` holds (window_start, gctime). Heap usage oscillates in
    a sawtooth between collections, so only the post-GC troughs reflect the
    node's true working set. Returns (rate, trough_bytes) pairs; empty when
    no GC was ever observed.
    """
    gc_windows = {w for w, gct in gctime_series if gct > 0}
    if not gc_windows:
        log.warning("no GC events observed; memory model will be omitted")
        return []
    ordered = sorted(mem_series)
    diffs = [b[0] - a[0] for a, b in zip(ordered, ordered[1:]) if b[0] > a[0]]
    spacing = min(diffs) if diffs else 0.0
    out: list[tuple[float, float]] = []
    for prev, cur in zip(ordered, ordered[1:]):
        # "immediately following" means the adjacent window: a gap in the
        # series (e.g. between sweep runs) must not be bridged
        if prev[0] in gc_windows and cur[0] - prev[0] <= 1.5 * spacing:
            out.append((cur[1], cur[2]))
    return out


def _cpu_points(samples: Iterable[AlignedSample]) -> list[tuple[float, float]]:
    return [(s.tuple_rate_in, s.cputil) for s in samples]


def _fit_node(
    node: str,
    samples: list[AlignedSample],
    max_cpu: float,
    gctime_high: float,
) -> NodeModel:
    classification, saturation = classify_node(samples, max_cpu, gctime_high)
    usable = [s for s in samples if s.backpressure == 0]
    if len(usable) < MIN_SAMPLES:
        raise TrainingError(
            f"node {node!r}: only {len(usable)} usable (non-backpressured) samples"
        )
    cpu = fit_linear(_cpu_points(usable))

    capacity = None
    cap_points = [(s.tuple_rate_in, s.caputil) for s in usable if s.caputil is not None]
    if len(cap_points) >= MIN_SAMPLES:
        try:
            capacity = fit_linear(cap_points)
        except TrainingError:
            capacity = None

    if node == STREAM_MANAGER:
        gamma = 1.0  # a router neither drops nor creates tuples
    else:
        gamma = estimate_gamma([(s.tuple_rate_in, s.tuple_rate_out) for s in usable])

    # GC troughs must be extracted per instance: pooling instances would
    # interleave their sawtooths within shared windows
    memory = None
    troughs: list[tuple[float, float]] = []
    saw_memory = False
    by_instance: dict[str, list[AlignedSample]] = {}
    for s in usable:
        by_instance.setdefault(s.instance, []).append(s)
    for inst_samples in by_instance.values():
        mem_series = [
            (s.window_start, s.tuple_rate_in, s.memutil)
            for s in inst_samples
            if s.memutil is not None
        ]
        if not any(m[2] > 0 for m in mem_series):
            continue
        saw_memory = True
        gct_series = [(s.window_start, s.gctime) for s in inst_samples]
        troughs.extend(filter_gc_troughs(mem_series, gct_series))
    if saw_memory:
        if len(troughs) >= MIN_SAMPLES:
            try:
                memory = fit_linear(troughs)
            except TrainingError as exc:
                log.warning("node %r: memory fit skipped (%s)", node, exc)
        else:
            log.warning(
                "node %r: only %d GC troughs, memory model omitted", node, len(troughs)
            )

    model = NodeModel(
        node=node,
        cpu=cpu,
        capacity=capacity,
        gamma=gamma,
        memory=memory,
        classification=classification,
        saturation_rate=saturation,
        max_cpu=max_cpu,
    )
    if classification == MEMORY_BOUND:
        raise TrainingError(
            f"node {node!r} is memory-bound: allocate more memory and retrain"
        )
    if classification == IO_BOUND:
        model = normalize_io_model(model)
    return model


def train(
    dag: LogicalDag,
    samples: Iterable[AlignedSample],
    sm_cpu_cap: float = 1.0,
    gctime_high: float = GCTIME_HIGH,
) -> dict[str, NodeModel]:
    """Train one NodeModel per DAG node plus the stream manager.

    Instances of a node pool their samples; window order within a node does
    not affect the result. Raises TrainingError when any node lacks enough
    usable samples.
    """
    by_node: dict[str, list[AlignedSample]] = {}
    for s in samples:
        by_node.setdefault(s.node, []).append(s)
    models: dict[str, NodeModel] = {}
    wanted = dag.node_names() + [STREAM_MANAGER]
    for node in wanted:
        node_samples = by_node.get(node, [])
        if len(node_samples) < MIN_SAMPLES:
            raise TrainingError(
                f"node {node!r}: {len(node_samples)} samples, need {MIN_SAMPLES}"
            )
        max_cpu = sm_cpu_cap if node == STREAM_MANAGER else dag.node(node).max_cpu_per_instance
        models[node] = _fit_node(node, node_samples, max_cpu, gctime_high)
    return models


@dataclass(frozen=True)
class DriftResult:
    drifted: bool
    error: float


def detect_drift(
    model: NodeModel,
    fresh_samples: Sequence[AlignedSample],
    threshold: float = DRIFT_THRESHOLD,
) -> DriftResult:
    """Compare modeled vs. observed cputil on fresh samples.

    The error is relative to the modeled value (a node whose true cost
    doubled reads as error ~1.0); drift fires strictly above the threshold.
    """
    if len(fresh_samples) < MIN_SAMPLES:
        raise TrainingError(
            f"need at least {MIN_SAMPLES} fresh samples, got {len(fresh_samples)}"
        )
    errors = []
    for s in fresh_samples:
        predicted = model.cpu.predict(s.tuple_rate_in)
        if predicted <= 0:
            continue
        errors.append(abs(predicted - s.cputil) / predicted)
    if not errors:
        raise TrainingError("no fresh samples with positive modeled cputil")
    error = sum(errors) / len(errors)
    return DriftResult(drifted=error > threshold, error=error)


# ---------------------------------------------------------------------------
# model file round-trip


def _linear_to_json(m: LinearModel | None) -> dict | None:
    if m is None:
        return None
    return {
        "slope": m.slope,
        "intercept": m.intercept,
        "r2": m.r_squared,
        "range": [m.x_min, m.x_max],
    }


def _linear_from_json(doc: dict | None) -> LinearModel | None:
    if doc is None:
        return None
    return LinearModel(
        slope=float(doc["slope"]),
        intercept=float(doc["intercept"]),
        r_squared=float(doc["r2"]),
        x_min=float(doc["range"][0]),
        x_max=float(doc["range"][1]),
    )


def models_to_json(models: dict[str, NodeModel]) -> dict:
    return {
        name: {
            "cpu": _linear_to_json(m.cpu),
            "capacity": _linear_to_json(m.capacity),
            "gamma": m.gamma,
            "memory": _linear_to_json(m.memory),
            "classification": m.classification,
            "saturation_rate": m.saturation_rate,
            "normalized": m.normalized,
            "max_cpu": m.max_cpu,
        }
        for name, m in sorted(models.items())
    }


def models_from_json(doc: dict) -> dict[str, NodeModel]:
    models: dict[str, NodeModel] = {}
    for name, entry in doc.items():
        cpu = _linear_from_json(entry["cpu"])
        if cpu is None:
            raise TrainingError(f"node {name!r}: model file lacks a CPU model")
        models[name] = NodeModel(
            node=name,
            cpu=cpu,
            capacity=_linear_from_json(entry.get("capacity")),
            gamma=float(entry["gamma"]),
            memory=_linear_from_json(entry.get("memory")),
            classification=entry.get("classification", CPU_BOUND),
            saturation_rate=entry.get("saturation_rate"),
            normalized=bool(entry.get("normalized", False)),
            max_cpu=float(entry.get("max_cpu", 1.0)),
        )
    return models


def load_models(path: str | Path) -> dict[str, NodeModel]:
    return models_from_json(json.loads(Path(path).read_text()))


def save_models(models: dict[str, NodeModel], path: str | Path) -> None:
    Path(path).write_text(json.dumps(models_to_json(models), indent=2, sort_keys=True))
