import pytest

from streamplan.dag import EdgeSpec, LogicalDag, NodeSpec, STREAM_MANAGER
from streamplan.errors import SimulationError
from streamplan.metrics import align, parse_metrics
from streamplan.sim import (
    GroundTruth,
    NodeCosts,
    SmCosts,
    emit_synthetic_metrics,
    find_max_rate,
    gt_from_json,
    gt_to_json,
    run_rate_sweep,
    simulate,
)
from streamplan.training import filter_gc_troughs

from helpers import (
    make_config,
    rows_to_samples,
    wordcount_dag,
    wordcount_gt,
)


def single_node_dag():
    return LogicalDag(nodes=[NodeSpec("only")], edges=[])


def single_node_gt(cpu_cost=1e-3, **kwargs):
    return GroundTruth(
        nodes={"only": NodeCosts(cpu_cost=cpu_cost, **kwargs)},
        sm=SmCosts(cpu_cost_route=1e-4),
    )


def single_node_config(parallelism=1, containers=1):
    dag = single_node_dag()
    return make_config(dag, {"only": parallelism}, containers)


class TestSingleServer:
    def test_half_loaded_server(self):
        # 1 ms/tuple at 1 CPU: 500/s occupies half the core
        result = simulate(single_node_dag(), single_node_gt(), single_node_config(),
                          offered_rate=500.0, duration=120.0, seed=3)
        assert result.stable
        assert result.achieved_rate == pytest.approx(500.0, rel=0.02)
        cputils = [r["value"] for r in result.metrics_rows
                   if r["metric"] == "cputil" and r["node"] == "only"]
        assert sum(cputils) / len(cputils) == pytest.approx(0.5, abs=0.05)

    def test_overload_throttles(self):
        # capacity 1000/s, offered 2000/s: unstable with backpressure,
        # achieving roughly the capacity
        result = simulate(single_node_dag(), single_node_gt(), single_node_config(),
                          offered_rate=2000.0, duration=120.0, seed=3)
        assert not result.stable
        assert result.achieved_rate == pytest.approx(1000.0, rel=0.08)
        assert sum(result.backpressure_seconds.values()) > 0
        bp_rows = [r["value"] for r in result.metrics_rows
                   if r["metric"] == "backpressure"]
        assert max(bp_rows) > 0

    def test_unstable_implies_growth_or_throttle(self):
        result = simulate(single_node_dag(), single_node_gt(), single_node_config(),
                          offered_rate=1100.0, duration=120.0, seed=3)
        assert not result.stable
        assert result.throttled or max(result.queue_slopes.values()) > 0

    def test_find_max_single(self):
        rate = find_max_rate(single_node_dag(), single_node_gt(),
                             single_node_config(), seed=3)
        assert rate == pytest.approx(1000.0, rel=0.02)

    def test_find_max_two_instances_additive(self):
        config = single_node_config(parallelism=2, containers=2)
        rate = find_max_rate(single_node_dag(), single_node_gt(), config, seed=3)
        assert rate == pytest.approx(2000.0, rel=0.03)

    def test_seed_required(self):
        with pytest.raises(SimulationError, match="seed"):
            simulate(single_node_dag(), single_node_gt(), single_node_config(),
                     500.0, 120.0, seed=None)


class TestDeterminism:
    def test_bit_identical_counters(self):
        dag, gt = wordcount_dag(), wordcount_gt()
        config = make_config(dag, {"w": 2, "c": 2}, 2,
                             packing={"w-0": 0, "c-0": 0, "w-1": 1, "c-1": 1})
        a = simulate(dag, gt, config, 900.0, 120.0, seed=17)
        b = simulate(dag, gt, config, 900.0, 120.0, seed=17)
        assert a.ingested == b.ingested
        assert a.emitted == b.emitted
        assert a.sm_handled == b.sm_handled
        assert (a.routed, a.crossed) == (b.routed, b.crossed)
        assert a.metrics_rows == b.metrics_rows


class TestConservation:
    def test_tuples_conserved_through_gammas(self):
        # chain with a 32% filter: sink consumption tracks source * 0.32
        dag = LogicalDag(
            nodes=[NodeSpec("src"), NodeSpec("filt"), NodeSpec("sink")],
            edges=[EdgeSpec("src", "filt"), EdgeSpec("filt", "sink")],
        )
        gt = GroundTruth(
            nodes={
                "src": NodeCosts(cpu_cost=5e-4, gamma=1.0),
                "filt": NodeCosts(cpu_cost=5e-4, gamma=0.32),
                "sink": NodeCosts(cpu_cost=5e-4, gamma=0.0),
            },
            sm=SmCosts(cpu_cost_route=5e-5),
        )
        config = make_config(dag, {"src": 1, "filt": 1, "sink": 1}, 1)
        result = simulate(dag, gt, config, 600.0, 400.0, seed=5)
        assert result.stable
        expected = result.ingested["src"] * 0.32
        assert result.sink_consumed == pytest.approx(expected, rel=0.01)

    def test_crossing_accounted_exactly_twice(self):
        dag, gt = wordcount_dag(), wordcount_gt()
        config = make_config(dag, {"w": 2, "c": 2}, 2,
                             packing={"w-0": 0, "c-0": 0, "w-1": 1, "c-1": 1})
        result = simulate(dag, gt, config, 800.0, 200.0, seed=9)
        assert sum(result.sm_handled.values()) == result.routed + result.crossed
        # symmetric fields split: half of all routed tuples cross
        assert result.crossed == pytest.approx(result.routed / 2, rel=0.01)

    def test_all_grouping_replicates(self):
        dag = LogicalDag(
            nodes=[NodeSpec("a"), NodeSpec("b")],
            edges=[EdgeSpec("a", "b", grouping="all")],
        )
        gt = GroundTruth(
            nodes={"a": NodeCosts(cpu_cost=1e-4), "b": NodeCosts(cpu_cost=1e-4, gamma=0.0)},
            sm=SmCosts(cpu_cost_route=1e-5),
        )
        config = make_config(dag, {"a": 1, "b": 3}, 1)
        result = simulate(dag, gt, config, 500.0, 200.0, seed=5)
        assert result.ingested["b"] == pytest.approx(3 * result.emitted["a"], rel=0.01)


class TestMetricsEmission:
    def test_round_trip_through_parser(self, tmp_path):
        dag, gt = wordcount_dag(), wordcount_gt()
        config = make_config(dag, {"w": 1, "c": 1}, 2, packing={"w-0": 0, "c-0": 1})
        result = simulate(dag, gt, config, 500.0, 120.0, seed=2)
        path = tmp_path / "metrics.jsonl"
        count = emit_synthetic_metrics(result, path)
        parsed = parse_metrics(path)
        assert parsed.malformed == 0
        assert len(parsed.samples) == count
        instances = {s.instance for s in parsed.samples}
        assert instances == {"w-0", "c-0", "SM-0", "SM-1"}
        nodes = {s.node for s in parsed.samples}
        assert STREAM_MANAGER in nodes

    def test_gzip_output(self, tmp_path):
        result = simulate(single_node_dag(), single_node_gt(),
                          single_node_config(), 300.0, 80.0, seed=2)
        path = tmp_path / "metrics.jsonl.gz"
        emit_synthetic_metrics(result, path)
        assert parse_metrics(path).malformed == 0

    def test_short_run_empty_with_warning(self, tmp_path, caplog):
        result = simulate(single_node_dag(), single_node_gt(),
                          single_node_config(), 300.0, 5.0, seed=2)
        assert result.metrics_rows == []
        with caplog.at_level("WARNING"):
            emit_synthetic_metrics(result, tmp_path / "empty.jsonl")
        assert "no metric rows" in caplog.text

    def test_long_sweep_sample_volume(self):
        # a 20-minute sweep yields at least 100 aligned windows per instance
        dag, gt = wordcount_dag(), wordcount_gt()
        config = make_config(dag, {"w": 1, "c": 1}, 1)
        _, rows = run_rate_sweep(dag, gt, config, [300.0, 500.0], 600.0, seed=4)
        aligned = align(rows_to_samples(rows))
        per_instance = {}
        for s in aligned:
            per_instance[s.instance] = per_instance.get(s.instance, 0) + 1
        assert all(v >= 100 for v in per_instance.values())


class TestGcEmulation:
    def gc_gt(self):
        return GroundTruth(
            nodes={
                "only": NodeCosts(
                    cpu_cost=1e-3,
                    mem_base=8e6,
                    mem_per_tuple_rate=4e5,  # 0.4 MB per tuple/s
                    gc_garbage_per_tuple=1e4,
                    gc_headroom=2.4e8,  # collect every ~60s at 400/s
                    gc_pause=0.1,
                )
            },
            sm=SmCosts(cpu_cost_route=1e-4),
        )

    def test_sawtooth_troughs_match_working_set(self):
        result = simulate(single_node_dag(), self.gc_gt(), single_node_config(),
                          400.0, 400.0, seed=6)
        rows = result.metrics_rows
        mem = [(r["ts"], 400.0, r["value"]) for r in rows
               if r["metric"] == "memutil" and r["node"] == "only"]
        gct = [(r["ts"], r["value"]) for r in rows
               if r["metric"] == "gctime" and r["node"] == "only"]
        assert any(v > 0 for _, v in gct)
        troughs = filter_gc_troughs(mem, gct)
        assert troughs
        expected = 8e6 + 4e5 * 400.0  # 168 MB working set
        for _, trough in troughs:
            assert trough == pytest.approx(expected, rel=0.05)

    def test_memutil_sawtooth_rises_between_collections(self):
        result = simulate(single_node_dag(), self.gc_gt(), single_node_config(),
                          400.0, 300.0, seed=6)
        mem = [r["value"] for r in result.metrics_rows if r["metric"] == "memutil"]
        assert max(mem) > min(m for m in mem if m > 0) * 1.5


def test_gt_json_round_trip():
    gt = wordcount_gt(peer_cost=0.03)
    back = gt_from_json(gt_to_json(gt))
    assert back == gt


def test_invalid_config_rejected():
    dag = single_node_dag()
    config = single_node_config()
    config.packing = {}
    with pytest.raises(Exception):
        simulate(dag, single_node_gt(), config, 100.0, 60.0, seed=1)


def test_zero_rate_is_stable():
    result = simulate(single_node_dag(), single_node_gt(), single_node_config(),
                      0.0, 80.0, seed=1)
    assert result.stable
    assert result.achieved_rate == 0.0


def test_io_wait_limits_throughput():
    # 1 ms CPU + 3 ms io: capacity 250/s even with a whole core
    gt = single_node_gt(cpu_cost=1e-3, io_wait=3e-3)
    rate = find_max_rate(single_node_dag(), gt, single_node_config(), seed=2)
    assert rate == pytest.approx(250.0, rel=0.03)
    result = simulate(single_node_dag(), gt, single_node_config(), 240.0, 120.0, seed=2)
    rows = result.metrics_rows
    caputil = [r["value"] for r in rows if r["metric"] == "caputil"]
    cputil = [r["value"] for r in rows if r["metric"] == "cputil"]
    assert max(caputil) > 0.9  # busy nearly all the time
    assert max(cputil) < 0.5  # but rarely on CPU


class TestSaturatedTraining:
    def test_overloaded_node_classified_with_true_peak(self):
        # sweep past the consumer's capacity: training must mark it
        # miscalibrated and pin the saturation rate near the true peak
        from streamplan.training import MISCALIBRATED, train

        dag, gt = wordcount_dag(), wordcount_gt()
        config = make_config(dag, {"w": 1, "c": 1}, 2, packing={"w-0": 0, "c-0": 1})
        rates = [200.0, 350.0, 500.0, 620.0, 750.0]  # c peaks at 658/s
        _, rows = run_rate_sweep(dag, gt, config, rates, 150.0, seed=41)
        models = train(dag, align(rows_to_samples(rows)))
        c = models["c"]
        assert c.classification == MISCALIBRATED
        assert c.saturation_rate is not None
        assert abs(c.saturation_rate - 658.0) / 658.0 <= 0.05
        assert models["w"].classification != MISCALIBRATED
        # the recorded saturation caps capacity estimates from the model
        assert c.peak_rate(10.0) == c.saturation_rate
