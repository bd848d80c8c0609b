import gzip
import json

import pytest

from streamplan.errors import MetricsError
from streamplan.metrics import (
    AlignedSample,
    MetricSample,
    align,
    aligned_to_rows,
    parse_metrics,
)


def row(ts=0.0, node="w", instance="w-0", container=0, metric="cputil", value=0.5):
    return json.dumps(
        {"ts": ts, "node": node, "instance": instance, "container": container,
         "metric": metric, "value": value}
    )


class TestParse:
    def test_single_line(self):
        parsed = parse_metrics([row()])
        assert parsed.malformed == 0
        assert len(parsed.samples) == 1
        s = parsed.samples[0]
        assert s.metric == "cputil" and s.value == 0.5

    def test_malformed_below_limit(self):
        lines = [row(ts=float(i)) for i in range(19)] + ["{broken"]
        parsed = parse_metrics(lines)
        assert parsed.malformed == 1
        assert len(parsed.samples) == 19

    def test_malformed_above_limit(self):
        lines = [row()] * 8 + ["nope"] * 2
        with pytest.raises(MetricsError, match="malformed"):
            parse_metrics(lines)

    def test_unknown_metric_is_malformed(self):
        parsed = parse_metrics([row()] * 9 + [row(metric="latency")])
        assert parsed.malformed == 1

    def test_negative_value_is_malformed(self):
        parsed = parse_metrics([row()] * 9 + [row(value=-1.0)])
        assert parsed.malformed == 1

    def test_unreadable_path(self, tmp_path):
        with pytest.raises(MetricsError, match="cannot read"):
            parse_metrics(tmp_path / "missing.jsonl")

    def test_gzip_file(self, tmp_path):
        path = tmp_path / "m.jsonl.gz"
        with gzip.open(path, "wt") as fh:
            fh.write(row() + "\n" + row(ts=1.0, metric="tuple_rate_in", value=10) + "\n")
        parsed = parse_metrics(path)
        assert len(parsed.samples) == 2


def window_rows(instance="w-0", start=0.0, rate=100.0, cputil=0.5, **extra):
    """Minimal rows making one complete (instance, window) bucket."""
    rows = [
        row(ts=start + 1, instance=instance, metric="tuple_rate_in", value=rate),
        row(ts=start + 2, instance=instance, metric="cputil", value=cputil),
    ]
    for metric, value in extra.items():
        rows.append(row(ts=start + 3, instance=instance, metric=metric, value=value))
    return rows


class TestAlign:
    def test_mean_within_window(self):
        lines = [
            row(ts=1.0, metric="cputil", value=0.4),
            row(ts=5.0, metric="cputil", value=0.6),
            row(ts=2.0, metric="tuple_rate_in", value=100.0),
        ]
        aligned = align(parse_metrics(lines).samples, window=10.0)
        assert len(aligned) == 1
        assert aligned[0].cputil == pytest.approx(0.5)
        assert aligned[0].window_start == 0.0

    def test_gap_window_absent(self):
        lines = window_rows(start=0.0) + window_rows(start=20.0)
        aligned = align(parse_metrics(lines).samples, window=10.0)
        assert [a.window_start for a in aligned] == [0.0, 20.0]

    def test_bucket_without_load_dropped(self):
        lines = [row(ts=0.0, metric="cputil", value=0.4)]
        assert align(parse_metrics(lines).samples) == []

    def test_gctime_normalized_by_window(self):
        lines = window_rows(gctime=2.0)
        aligned = align(parse_metrics(lines).samples, window=10.0)
        assert aligned[0].gctime == pytest.approx(0.2)

    def test_caputil_clamped(self):
        lines = window_rows(caputil=1.02)
        aligned = align(parse_metrics(lines).samples)
        assert aligned[0].caputil == 1.0

    def test_idempotent_on_aligned_data(self):
        lines = window_rows(start=0.0, caputil=0.7, memutil=100.0) + window_rows(
            start=10.0, rate=200.0, cputil=0.9, caputil=0.8, memutil=120.0
        )
        first = align(parse_metrics(lines).samples, window=10.0)
        rows_again = aligned_to_rows(first, window=10.0)
        second = align(
            [
                MetricSample(r["ts"], r["node"], r["instance"], r["container"],
                             r["metric"], r["value"])
                for r in rows_again
            ],
            window=10.0,
        )
        assert second == first

    def test_sorted_by_instance_then_window(self):
        lines = (
            window_rows(instance="b-0", start=10.0)
            + window_rows(instance="a-0", start=20.0)
            + window_rows(instance="a-0", start=0.0)
        )
        aligned = align(parse_metrics(lines).samples)
        keys = [(a.instance, a.window_start) for a in aligned]
        assert keys == sorted(keys)

    def test_tuple_sum_matches_ingested(self):
        # sum over windows of rate*window reproduces the total tuple count
        total = 0
        lines = []
        for w in range(12):
            rate = 50.0 + 10 * w
            total += rate * 10.0
            lines += window_rows(start=10.0 * w, rate=rate)
        aligned = align(parse_metrics(lines).samples, window=10.0)
        recovered = sum(a.tuple_rate_in * 10.0 for a in aligned)
        assert recovered == pytest.approx(total)

    def test_bad_window(self):
        with pytest.raises(MetricsError):
            align([], window=0.0)


def test_aligned_sample_is_frozen():
    sample = AlignedSample(
        node="w", instance="w-0", container=0, window_start=0.0,
        tuple_rate_in=1.0, tuple_rate_out=1.0, cputil=0.1, caputil=None,
        memutil=None, gctime=0.0, backpressure=0.0,
    )
    with pytest.raises(AttributeError):
        sample.cputil = 0.2
