"""Parse runtime metric streams and align them into per-window training samples.

Input is JSON-lines, one sample per line:
``{"ts": ..., "node": ..., "instance": ..., "container": ..., "metric": ..., "value": ...}``

Alignment buckets samples into tumbling windows (start times are multiples of
the window length in epoch time, for determinism). Rates and utilizations are
averaged within a window; ``gctime`` and ``backpressure`` are summed and
normalized by the window length, yielding fraction-of-window values.
"""

from __future__ import annotations

import gzip
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from streamplan.errors import MetricsError

log = logging.getLogger(__name__)

METRIC_NAMES = (
    "tuple_rate_in",
    "tuple_rate_out",
    "cputil",
    "caputil",
    "memutil",
    "gctime",
    "backpressure",
)

# fraction of malformed lines above which parsing fails outright
MALFORMED_LIMIT = 0.10

# caputil above this is reported, not just clamped
CAPUTIL_JITTER_LIMIT = 1.05


@dataclass(frozen=True)
class MetricSample:
    timestamp: float
    node: str
    instance: str
    container: int
    metric: str
    value: float


@dataclass(frozen=True)
class AlignedSample:
    """One fully merged observation per (instance, window)."""

    node: str
    instance: str
    container: int
    window_start: float
    tuple_rate_in: float
    tuple_rate_out: float
    cputil: float
    caputil: float | None
    memutil: float | None
    gctime: float
    backpressure: float


@dataclass
class ParsedMetrics:
    samples: list[MetricSample]
    malformed: int
    total_lines: int


def _iter_lines(source: str | Path | Iterable[str]) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        path = Path(source)
        opener = gzip.open if path.suffix == ".gz" else open
        try:
            with opener(path, "rt") as handle:  # type: ignore[operator]
                yield from handle
        except OSError as exc:
            raise MetricsError(f"cannot read metrics from {path}: {exc}") from exc
    else:
        yield from source


def _parse_line(line: str) -> MetricSample | None:
    try:
        doc = json.loads(line)
        metric = doc["metric"]
        value = float(doc["value"])
        if metric not in METRIC_NAMES or value < 0:
            return None
        return MetricSample(
            timestamp=float(doc["ts"]),
            node=str(doc["node"]),
            instance=str(doc["instance"]),
            container=int(doc["container"]),
            metric=metric,
            value=value,
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        return None


def parse_metrics(source: str | Path | Iterable[str]) -> ParsedMetrics:
    """Parse a JSON-lines metrics stream (plain or .gz path, or lines).

    Malformed lines are counted and skipped; parsing only fails when more
    than 10% of non-empty lines are malformed.
    """
    samples: list[MetricSample] = []
    malformed = 0
    total = 0
    for line in _iter_lines(source):
        if not line.strip():
            continue
        total += 1
        sample = _parse_line(line)
        if sample is None:
            malformed += 1
        else:
            samples.append(sample)
    if total and malformed / total > MALFORMED_LIMIT:
        raise MetricsError(
            f"{malformed} of {total} metric lines are malformed "
            f"(limit {MALFORMED_LIMIT:.0%})"
        )
    if malformed:
        log.warning("skipped %d malformed metric lines out of %d", malformed, total)
    return ParsedMetrics(samples=samples, malformed=malformed, total_lines=total)


_MEAN_METRICS = ("tuple_rate_in", "tuple_rate_out", "cputil", "caputil", "memutil")
_SUM_METRICS = ("gctime", "backpressure")


def align(samples: Iterable[MetricSample], window: float = 10.0) -> list[AlignedSample]:
    """Merge raw samples into one AlignedSample per (instance, window).

    Buckets missing either ``tuple_rate_in`` or ``cputil`` are dropped:
    without load and CPU there is nothing to train on. Output is sorted by
    (instance, window_start). Already-aligned data passes through unchanged
    (alignment is idempotent).
    """
    if window <= 0:
        raise MetricsError("window must be > 0")
    buckets: dict[tuple[str, float], dict[str, list[float]]] = {}
    meta: dict[tuple[str, float], tuple[str, int]] = {}
    for s in samples:
        start = (s.timestamp // window) * window
        key = (s.instance, start)
        buckets.setdefault(key, {}).setdefault(s.metric, []).append(s.value)
        meta[key] = (s.node, s.container)

    out: list[AlignedSample] = []
    for key in sorted(buckets):
        values = buckets[key]
        if "tuple_rate_in" not in values or "cputil" not in values:
            continue
        merged: dict[str, float | None] = {}
        for name in _MEAN_METRICS:
            entries = values.get(name)
            merged[name] = sum(entries) / len(entries) if entries else None
        for name in _SUM_METRICS:
            merged[name] = sum(values.get(name, [])) / window
        caputil = merged["caputil"]
        if caputil is not None and caputil > 1.0:
            if caputil > CAPUTIL_JITTER_LIMIT:
                log.warning(
                    "caputil %.3f for %s at %.0f exceeds jitter limit; clamping",
                    caputil,
                    key[0],
                    key[1],
                )
            caputil = 1.0
        node, container = meta[key]
        out.append(
            AlignedSample(
                node=node,
                instance=key[0],
                container=container,
                window_start=key[1],
                tuple_rate_in=merged["tuple_rate_in"] or 0.0,
                tuple_rate_out=merged["tuple_rate_out"] or 0.0,
                cputil=merged["cputil"] or 0.0,
                caputil=caputil,
                memutil=merged["memutil"],
                gctime=merged["gctime"] or 0.0,
                backpressure=merged["backpressure"] or 0.0,
            )
        )
    return out


def aligned_to_rows(samples: Iterable[AlignedSample], window: float = 10.0) -> list[dict]:
    """Expand aligned samples back into raw metric rows (for round-trips)."""
    rows: list[dict] = []
    for s in samples:
        pairs = [
            ("tuple_rate_in", s.tuple_rate_in),
            ("tuple_rate_out", s.tuple_rate_out),
            ("cputil", s.cputil),
            ("gctime", s.gctime * window),
            ("backpressure", s.backpressure * window),
        ]
        if s.caputil is not None:
            pairs.append(("caputil", s.caputil))
        if s.memutil is not None:
            pairs.append(("memutil", s.memutil))
        for metric, value in pairs:
            rows.append(
                {
                    "ts": s.window_start,
                    "node": s.node,
                    "instance": s.instance,
                    "container": s.container,
                    "metric": metric,
                    "value": value,
                }
            )
    return rows
