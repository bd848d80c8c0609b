"""Shared builders for the benchmark DAGs, ground truths and trained models."""

from __future__ import annotations

from streamplan.dag import Configuration, EdgeSpec, LogicalDag, NodeSpec, instance_id
from streamplan.metrics import MetricSample, align
from streamplan.sim import GroundTruth, NodeCosts, SmCosts, run_rate_sweep
from streamplan.training import NodeModel, train

BASE_CPU = 0.02
GB = 2**30


def cost_for_peak(peak: float, base: float = BASE_CPU) -> float:
    """CPU-seconds per tuple so one instance saturates 1 CPU at `peak`."""
    return (1.0 - base) / peak


# --- WordCount analog: producer w -> counting consumer c (fields) ----------

R_W = 839.0
R_C = 658.0


def wordcount_dag() -> LogicalDag:
    return LogicalDag(
        nodes=[NodeSpec("w"), NodeSpec("c")],
        edges=[EdgeSpec("w", "c", grouping="fields")],
    )


def wordcount_gt(peer_cost: float = 0.0) -> GroundTruth:
    return GroundTruth(
        nodes={
            "w": NodeCosts(cpu_cost=cost_for_peak(R_W), base_cpu=BASE_CPU, gamma=1.0),
            "c": NodeCosts(cpu_cost=cost_for_peak(R_C), base_cpu=BASE_CPU, gamma=0.0),
        },
        sm=SmCosts(cpu_cost_route=1.0e-3, base_cpu=BASE_CPU, cost_per_peer=peer_cost),
    )


# --- 6-node ad-pipeline analog ---------------------------------------------
#
# Chain: ads -> event_deserializer -> event_filter -> event_projection
#        -> redis_join -> campaign_processor, with the filter passing 32%.
# Router peak flux is 4000 tuples/s at one CPU; node peaks are chosen with 3%
# headroom over the balanced-container rate-match points so the template for
# every adjacent pair lands on the same container dimension.

SM_ROUTE_COST = (1.0 - BASE_CPU) / 4000.0
AD_SM_PEAK_FLUX = 4000.0

_R1 = AD_SM_PEAK_FLUX / 4.0  # ads/deserializer pair, gammas (1, 1)
_R2 = AD_SM_PEAK_FLUX / 1.96  # filter/projection pair, gammas (0.32, 1)
_R3 = AD_SM_PEAK_FLUX / 3.0  # join/processor pair, gammas (1, 0)

AD_PEAKS = {
    "ads": _R1 / 4 * 1.03,
    "event_deserializer": _R1 / 4 * 1.03,
    "event_filter": _R2 / 5 * 1.03,
    "event_projection": 0.32 * _R2 / 3 * 1.03,
    "redis_join": _R3 / 4 * 1.03,
    "campaign_processor": _R3 / 4 * 1.03,
}
AD_GAMMAS = {
    "ads": 1.0,
    "event_deserializer": 1.0,
    "event_filter": 0.32,
    "event_projection": 1.0,
    "redis_join": 1.0,
    "campaign_processor": 0.0,
}
AD_ORDER = [
    "ads",
    "event_deserializer",
    "event_filter",
    "event_projection",
    "redis_join",
    "campaign_processor",
]


def adanalytics_dag() -> LogicalDag:
    edges = [
        EdgeSpec(a, b, grouping="fields")
        for a, b in zip(AD_ORDER, AD_ORDER[1:])
    ]
    return LogicalDag(nodes=[NodeSpec(n) for n in AD_ORDER], edges=edges)


def adanalytics_gt() -> GroundTruth:
    return GroundTruth(
        nodes={
            name: NodeCosts(
                cpu_cost=cost_for_peak(AD_PEAKS[name]),
                base_cpu=BASE_CPU,
                gamma=AD_GAMMAS[name],
            )
            for name in AD_ORDER
        },
        sm=SmCosts(cpu_cost_route=SM_ROUTE_COST, base_cpu=BASE_CPU),
    )


# --- 9-node branching analog ------------------------------------------------
#
#            +-> filter_events -> session_join -> kpi_agg --+
# kafka_in -> decode                                        +-> alert_join -> alert_sink
#            +-> geo_enrich -> geo_agg ---------------------+

BR_PEAKS = {
    "kafka_in": 300.0,
    "decode": 250.0,
    "filter_events": 400.0,
    "session_join": 350.0,
    "kpi_agg": 300.0,
    "geo_enrich": 280.0,
    "geo_agg": 320.0,
    "alert_join": 200.0,
    "alert_sink": 500.0,
}
BR_GAMMAS = {
    "kafka_in": 1.0,
    "decode": 1.0,
    "filter_events": 0.5,
    "session_join": 1.0,
    "kpi_agg": 0.10,
    "geo_enrich": 0.8,
    "geo_agg": 0.2,
    "alert_join": 1.0,
    "alert_sink": 0.0,
}


def branching_dag() -> LogicalDag:
    nodes = [NodeSpec(n) for n in BR_PEAKS]
    edges = [
        EdgeSpec("kafka_in", "decode", grouping="fields"),
        EdgeSpec("decode", "filter_events", grouping="fields"),
        EdgeSpec("decode", "geo_enrich", grouping="shuffle"),
        EdgeSpec("filter_events", "session_join", grouping="fields"),
        EdgeSpec("session_join", "kpi_agg", grouping="fields"),
        EdgeSpec("geo_enrich", "geo_agg", grouping="fields"),
        EdgeSpec("kpi_agg", "alert_join", grouping="fields"),
        EdgeSpec("geo_agg", "alert_join", grouping="shuffle"),
        EdgeSpec("alert_join", "alert_sink", grouping="fields"),
    ]
    return LogicalDag(nodes=nodes, edges=edges)


def branching_gt() -> GroundTruth:
    return GroundTruth(
        nodes={
            name: NodeCosts(
                cpu_cost=cost_for_peak(peak),
                base_cpu=BASE_CPU,
                gamma=BR_GAMMAS[name],
            )
            for name, peak in BR_PEAKS.items()
        },
        sm=SmCosts(cpu_cost_route=SM_ROUTE_COST, base_cpu=BASE_CPU),
    )


# --- configuration and training helpers --------------------------------------


def rr_pack(dag: LogicalDag, parallelism: dict[str, int], containers: int) -> dict[str, int]:
    packing: dict[str, int] = {}
    slot = 0
    for node in dag.topo_order():
        for k in range(parallelism[node]):
            packing[instance_id(node, k)] = slot % containers
            slot += 1
    return packing


def make_config(
    dag: LogicalDag,
    parallelism: dict[str, int],
    containers: int,
    packing: dict[str, int] | None = None,
    cpu: float = 3.0,
    mem: float = 4 * GB,
) -> Configuration:
    return Configuration(
        parallelism=parallelism,
        container_cpu=cpu,
        container_mem=mem,
        containers=containers,
        packing=packing or rr_pack(dag, parallelism, containers),
    )


def rows_to_samples(rows: list[dict]) -> list[MetricSample]:
    return [
        MetricSample(r["ts"], r["node"], r["instance"], r["container"], r["metric"], r["value"])
        for r in rows
    ]


def train_from_sweep(
    dag: LogicalDag,
    gt: GroundTruth,
    config: Configuration,
    rates: list[float],
    duration: float = 120.0,
    seed: int = 11,
) -> dict[str, NodeModel]:
    _, rows = run_rate_sweep(dag, gt, config, rates, duration, seed)
    return train(dag, align(rows_to_samples(rows)))


def wordcount_train_config() -> Configuration:
    dag = wordcount_dag()
    return make_config(
        dag, {"w": 2, "c": 2}, 2,
        packing={"w-0": 0, "c-0": 0, "w-1": 1, "c-1": 1},
    )


def adanalytics_train_config() -> Configuration:
    dag = adanalytics_dag()
    parallelism = {n: 2 for n in AD_ORDER}
    return make_config(dag, parallelism, 3, cpu=5.0)


def branching_train_config() -> Configuration:
    dag = branching_dag()
    parallelism = {n: 2 for n in BR_PEAKS}
    return make_config(dag, parallelism, 4, cpu=5.0)


WORDCOUNT_SWEEP = [200.0, 400.0, 600.0, 800.0, 1000.0, 1200.0]
ADANALYTICS_SWEEP = [60.0, 120.0, 180.0, 240.0, 300.0, 360.0, 420.0, 470.0]
BRANCHING_SWEEP = [50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 360.0]
