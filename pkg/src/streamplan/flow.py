"""Data-flow solver: physical flow network, LP emission, rate prediction.

A deployed configuration is modeled as a flow network over node instances.
Each container's router is unfolded into an ingress vertex (all tuples
produced in the container enter here), an internal vertex for locally
delivered traffic, and an egress vertex feeding local consumers; a single
global switch vertex carries container-crossing traffic. A tuple that stays
inside its container passes one router; a tuple that crosses containers
passes two, which is what makes communication cost visible to the solver.

The LP maximizes total source ingestion subject to node CPU, router CPU,
container CPU/memory and link capacities. Flows between specific producer
and consumer instances are tracked per pair; when the grouping fixes the
split (fields and shuffle hash/spray uniformly, all-grouping replicates),
pair flows are emitted as fixed shares of the producer's output rather than
free variables, which keeps the program small. Shuffle splits become free
variables under the locality-aware policy flag.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from streamplan.dag import (
    Configuration,
    LogicalDag,
    STREAM_MANAGER,
    validate_config,
)
from streamplan.errors import DagError
from streamplan.simplex import EQ, LE, LinearProgram, LpSolution, solve_lp
from streamplan.training import NodeModel

SWITCH = "switch"

PairKey = tuple[int, str, str]  # (edge index, producer instance, consumer instance)


def sm_ingress(container: int) -> str:
    return f"sm{container}.in"


def sm_internal(container: int) -> str:
    return f"sm{container}.local"


def sm_egress(container: int) -> str:
    return f"sm{container}.out"


@dataclass(frozen=True)
class Vertex:
    name: str
    kind: str  # instance | sm_ingress | sm_internal | sm_egress | switch
    container: int | None = None
    node: str | None = None
    gamma: float = 1.0


@dataclass
class FlowNetwork:
    dag: LogicalDag
    config: Configuration
    vertices: dict[str, Vertex]
    arcs: dict[tuple[str, str], float]
    pair_paths: dict[PairKey, tuple[tuple[str, str], ...]]
    pair_flows: dict[PairKey, float] = field(default_factory=dict)

    def cross_pairs(self) -> list[PairKey]:
        out = []
        for key, path in self.pair_paths.items():
            if any(a == SWITCH or b == SWITCH for a, b in path):
                out.append(key)
        return out

    def apply_pair_flows(self, flows: dict[PairKey, float]) -> None:
        self.pair_flows = dict(flows)
        for arc in self.arcs:
            self.arcs[arc] = 0.0
        for key, flow in flows.items():
            for arc in self.pair_paths[key]:
                self.arcs[arc] += flow

    def vertex_balance(self) -> dict[str, tuple[float, float]]:
        """(inflow, outflow) per router/switch vertex from the arc flows."""
        balance: dict[str, tuple[float, float]] = {}
        for (src, dst), flow in self.arcs.items():
            for name in (src, dst):
                if self.vertices[name].kind == "instance":
                    continue
                inflow, outflow = balance.get(name, (0.0, 0.0))
                if dst == name:
                    inflow += flow
                if src == name:
                    outflow += flow
                balance[name] = (inflow, outflow)
        return balance


def build_network(
    dag: LogicalDag, config: Configuration, models: dict[str, NodeModel]
) -> FlowNetwork:
    """Materialize the physical flow network for a configuration."""
    validate_config(dag, config)
    for name in dag.node_names() + [STREAM_MANAGER]:
        if name not in models:
            raise DagError(f"missing model for node {name!r}")

    vertices: dict[str, Vertex] = {}
    arcs: dict[tuple[str, str], float] = {}
    pair_paths: dict[PairKey, tuple[tuple[str, str], ...]] = {}

    for node in dag.topo_order():
        for inst in config.instances_of(node):
            vertices[inst] = Vertex(
                name=inst,
                kind="instance",
                container=config.container_of(inst),
                node=node,
                gamma=models[node].gamma,
            )
    for c in range(config.containers):
        vertices[sm_ingress(c)] = Vertex(sm_ingress(c), "sm_ingress", container=c)
        vertices[sm_internal(c)] = Vertex(sm_internal(c), "sm_internal", container=c)
        vertices[sm_egress(c)] = Vertex(sm_egress(c), "sm_egress", container=c)
    vertices[SWITCH] = Vertex(SWITCH, "switch")

    def add_path(key: PairKey, hops: list[tuple[str, str]]) -> None:
        for hop in hops:
            arcs.setdefault(hop, 0.0)
        pair_paths[key] = tuple(hops)

    for edge_idx, edge in enumerate(dag.edges):
        for up in config.instances_of(edge.src):
            ci = config.container_of(up)
            for vq in config.instances_of(edge.dst):
                cj = config.container_of(vq)
                key: PairKey = (edge_idx, up, vq)
                if ci == cj:
                    add_path(
                        key,
                        [
                            (up, sm_ingress(ci)),
                            (sm_ingress(ci), sm_internal(ci)),
                            (sm_internal(ci), sm_egress(ci)),
                            (sm_egress(ci), vq),
                        ],
                    )
                else:
                    add_path(
                        key,
                        [
                            (up, sm_ingress(ci)),
                            (sm_ingress(ci), SWITCH),
                            (SWITCH, sm_ingress(cj)),
                            (sm_ingress(cj), sm_internal(cj)),
                            (sm_internal(cj), sm_egress(cj)),
                            (sm_egress(cj), vq),
                        ],
                    )
    return FlowNetwork(
        dag=dag, config=config, vertices=vertices, arcs=arcs, pair_paths=pair_paths
    )


@dataclass
class _PairTerm:
    """Linear expression for one pair flow: coeffs over LP variables."""

    coeffs: dict[int, float]


def _merge(into: dict[int, float], terms: dict[int, float], scale: float = 1.0) -> None:
    for idx, coef in terms.items():
        into[idx] = into.get(idx, 0.0) + scale * coef


@dataclass
class EmittedLp:
    lp: LinearProgram
    instance_var: dict[str, int]
    pair_terms: dict[PairKey, _PairTerm]
    flux_exprs: dict[int, dict[int, float]]  # container -> flux expression
    source_instances: list[str]


def emit_lp(
    network: FlowNetwork,
    dag: LogicalDag,
    config: Configuration,
    models: dict[str, NodeModel],
    locality_aware_shuffle: bool = False,
) -> EmittedLp:
    """Emit the rate-maximization LP for a built network."""
    sm_model = models[STREAM_MANAGER]
    var_names: list[str] = []
    instance_var: dict[str, int] = {}
    topo = dag.topo_order()
    for node in topo:
        for inst in config.instances_of(node):
            instance_var[inst] = len(var_names)
            var_names.append(inst)

    # free split variables for shuffle edges under the locality-aware policy
    pair_var: dict[PairKey, int] = {}
    if locality_aware_shuffle:
        for edge_idx, edge in enumerate(dag.edges):
            if edge.grouping != "shuffle":
                continue
            for up in config.instances_of(edge.src):
                for vq in config.instances_of(edge.dst):
                    key = (edge_idx, up, vq)
                    pair_var[key] = len(var_names)
                    var_names.append(f"f[{edge.src}->{edge.dst}][{up}->{vq}]")

    sources = [n.name for n in dag.source_nodes]
    source_instances = [i for n in sources for i in config.instances_of(n)]
    lp = LinearProgram(
        var_names=var_names,
        objective={instance_var[i]: 1.0 for i in source_instances},
    )

    # per-pair flow expressions
    pair_terms: dict[PairKey, _PairTerm] = {}
    for edge_idx, edge in enumerate(dag.edges):
        gamma = models[edge.src].gamma
        n_consumers = config.parallelism[edge.dst]
        out_scale = gamma * edge.weight
        for up in config.instances_of(edge.src):
            for vq in config.instances_of(edge.dst):
                key = (edge_idx, up, vq)
                if key in pair_var:
                    pair_terms[key] = _PairTerm({pair_var[key]: 1.0})
                elif edge.grouping == "all":
                    pair_terms[key] = _PairTerm({instance_var[up]: out_scale})
                else:  # fields / shuffle: uniform split over consumer instances
                    pair_terms[key] = _PairTerm(
                        {instance_var[up]: out_scale / n_consumers}
                    )

    # conservation: each non-source instance ingests exactly its pair inflows
    for node in topo:
        in_edges = [(i, e) for i, e in enumerate(dag.edges) if e.dst == node]
        if not in_edges:
            continue
        for vq in config.instances_of(node):
            coeffs = {instance_var[vq]: 1.0}
            for edge_idx, edge in in_edges:
                for up in config.instances_of(edge.src):
                    _merge(coeffs, pair_terms[(edge_idx, up, vq)].coeffs, -1.0)
            lp.add(f"conservation[{vq}]", coeffs, EQ, 0.0, "conservation", vq)

    # source fairness: instances of one source emit at equal rates
    for node in sources:
        instances = config.instances_of(node)
        for other in instances[1:]:
            lp.add(
                f"fairness[{node}][{other}]",
                {instance_var[instances[0]]: 1.0, instance_var[other]: -1.0},
                EQ,
                0.0,
                "fairness",
                node,
            )

    # locality-aware shuffles must still ship the whole output
    if locality_aware_shuffle:
        for edge_idx, edge in enumerate(dag.edges):
            if edge.grouping != "shuffle":
                continue
            out_scale = models[edge.src].gamma * edge.weight
            for up in config.instances_of(edge.src):
                coeffs: dict[int, float] = {instance_var[up]: -out_scale}
                for vq in config.instances_of(edge.dst):
                    _merge(coeffs, pair_terms[(edge_idx, up, vq)].coeffs)
                lp.add(
                    f"grouping[{edge.src}->{edge.dst}][{up}]",
                    coeffs,
                    EQ,
                    0.0,
                    "grouping",
                    f"{edge.src}->{edge.dst}",
                )

    # node CPU and observed saturation
    for node in topo:
        model = models[node]
        budget = dag.node(node).max_cpu_per_instance
        for inst in config.instances_of(node):
            if model.cpu.slope > 0:
                lp.add(
                    f"node-cpu[{inst}]",
                    {instance_var[inst]: model.cpu.slope},
                    LE,
                    budget - model.cpu.intercept,
                    "node-cpu",
                    inst,
                )
            elif model.cpu.intercept > budget:
                lp.add(f"node-cpu[{inst}]", {}, LE, budget - model.cpu.intercept,
                       "node-cpu", inst)
            if model.saturation_rate is not None:
                lp.add(
                    f"node-saturation[{inst}]",
                    {instance_var[inst]: 1.0},
                    LE,
                    model.saturation_rate,
                    "node-cpu",
                    inst,
                )

    # per-container router flux: everything produced in the container plus
    # everything received from other containers (crossing tuples count twice)
    flux_exprs: dict[int, dict[int, float]] = {c: {} for c in range(config.containers)}
    for key, term in pair_terms.items():
        _, up, vq = key
        ci = config.container_of(up)
        cj = config.container_of(vq)
        _merge(flux_exprs[ci], term.coeffs)
        if cj != ci:
            _merge(flux_exprs[cj], term.coeffs)

    for c in range(config.containers):
        flux = flux_exprs[c]
        if sm_model.cpu.slope > 0 and flux:
            lp.add(
                f"sm-cpu[{c}]",
                {idx: coef * sm_model.cpu.slope for idx, coef in flux.items()},
                LE,
                config.sm_cpu_cap - sm_model.cpu.intercept,
                "sm-cpu",
                str(c),
            )

    # container CPU: instance models plus the router model share the budget
    for c in range(config.containers):
        coeffs: dict[int, float] = {}
        intercepts = sm_model.cpu.intercept
        for inst in config.instances_in_container(c):
            node = network.vertices[inst].node
            model = models[node]
            _merge(coeffs, {instance_var[inst]: model.cpu.slope})
            intercepts += model.cpu.intercept
        _merge(coeffs, flux_exprs[c], sm_model.cpu.slope)
        lp.add(
            f"container-cpu[{c}]",
            coeffs,
            LE,
            config.container_cpu - intercepts,
            "container-cpu",
            str(c),
        )

    # container memory, when any packed instance has a memory model
    for c in range(config.containers):
        coeffs = {}
        base = 0.0
        for inst in config.instances_in_container(c):
            model = models[network.vertices[inst].node]
            if model.memory is None:
                continue
            _merge(coeffs, {instance_var[inst]: model.memory.slope})
            base += model.memory.intercept
        if coeffs or base:
            lp.add(
                f"container-mem[{c}]",
                coeffs,
                LE,
                config.container_mem - base,
                "container-mem",
                str(c),
            )

    # link budget on container-crossing bytes (in plus out)
    if config.container_link is not None:
        link_exprs: dict[int, dict[int, float]] = {
            c: {} for c in range(config.containers)
        }
        for key, term in pair_terms.items():
            edge_idx, up, vq = key
            bytes_per_tuple = dag.edges[edge_idx].bytes_per_tuple
            if bytes_per_tuple <= 0:
                continue
            ci = config.container_of(up)
            cj = config.container_of(vq)
            if ci == cj:
                continue
            _merge(link_exprs[ci], term.coeffs, bytes_per_tuple)
            _merge(link_exprs[cj], term.coeffs, bytes_per_tuple)
        for c, coeffs in link_exprs.items():
            if coeffs:
                lp.add(
                    f"link[{c}]", coeffs, LE, config.container_link, "link", str(c)
                )

    return EmittedLp(
        lp=lp,
        instance_var=instance_var,
        pair_terms=pair_terms,
        flux_exprs=flux_exprs,
        source_instances=source_instances,
    )


@dataclass(frozen=True)
class Bottleneck:
    kind: str  # node-cpu | sm-cpu | container-cpu | container-mem | link | grouping
    subject: str
    slack: float = 0.0


@dataclass
class Prediction:
    max_rate: float
    edge_rates: dict[str, float]
    bottlenecks: list[Bottleneck]
    instance_rates: dict[str, float]
    container_flux: dict[int, float]
    extrapolation: list[str]
    runtime_seconds: float
    network: FlowNetwork
    solution: LpSolution


def predict_rate(
    dag: LogicalDag,
    config: Configuration,
    models: dict[str, NodeModel],
    locality_aware_shuffle: bool = False,
    dump_lp: str | Path | None = None,
) -> Prediction:
    """Maximum sustainable aggregate source rate plus the binding constraints."""
    started = time.perf_counter()
    network = build_network(dag, config, models)
    emitted = emit_lp(network, dag, config, models, locality_aware_shuffle)
    if dump_lp is not None:
        Path(dump_lp).write_text(emitted.lp.to_text() + "\n")
    solution = solve_lp(emitted.lp)

    instance_rates = {
        inst: solution.value(idx) for inst, idx in emitted.instance_var.items()
    }
    pair_flows: dict[PairKey, float] = {}
    for key, term in emitted.pair_terms.items():
        pair_flows[key] = sum(coef * solution.value(idx) for idx, coef in term.coeffs.items())
    network.apply_pair_flows(pair_flows)

    edge_rates: dict[str, float] = {}
    for edge_idx, edge in enumerate(dag.edges):
        label = f"{edge.src}->{edge.dst}"
        edge_rates[label] = sum(
            flow for (idx, _, _), flow in pair_flows.items() if idx == edge_idx
        )

    container_flux = {
        c: sum(coef * solution.value(idx) for idx, coef in expr.items())
        for c, expr in emitted.flux_exprs.items()
    }

    by_name = {c.name: c for c in emitted.lp.constraints}
    seen: set[tuple[str, str]] = set()
    bottlenecks: list[Bottleneck] = []
    for name in solution.tight:
        c = by_name[name]
        if (c.kind, c.subject) in seen:
            continue
        seen.add((c.kind, c.subject))
        bottlenecks.append(Bottleneck(kind=c.kind, subject=c.subject))

    def limited(inst: str) -> bool:
        container = str(config.container_of(inst))
        return (
            ("node-cpu", inst) in seen
            or ("container-cpu", container) in seen
            or ("sm-cpu", container) in seen
        )

    # a fixed-split edge whose consumers are only partially saturated is
    # itself the limiter: the grouping forbids rebalancing toward the slack
    for edge in dag.edges:
        if edge.grouping == "all":
            continue
        if locality_aware_shuffle and edge.grouping == "shuffle":
            continue
        consumers = config.instances_of(edge.dst)
        if len(consumers) < 2:
            continue
        tight = [i for i in consumers if limited(i)]
        if tight and len(tight) < len(consumers):
            label = f"{edge.src}->{edge.dst}"
            if ("grouping", label) not in seen:
                seen.add(("grouping", label))
                bottlenecks.append(Bottleneck(kind="grouping", subject=label))

    extrapolation = []
    for inst, rate in instance_rates.items():
        node = network.vertices[inst].node
        cpu = models[node].cpu
        if rate > cpu.x_max * 1.001 or rate < cpu.x_min * 0.999:
            extrapolation.append(
                f"{inst}: rate {rate:.1f} outside trained range "
                f"[{cpu.x_min:.1f}, {cpu.x_max:.1f}]"
            )

    return Prediction(
        max_rate=solution.objective,
        edge_rates=edge_rates,
        bottlenecks=bottlenecks,
        instance_rates=instance_rates,
        container_flux=container_flux,
        extrapolation=extrapolation,
        runtime_seconds=time.perf_counter() - started,
        network=network,
        solution=solution,
    )


def prediction_to_json(prediction: Prediction) -> dict:
    return {
        "max_rate": prediction.max_rate,
        "edge_rates": prediction.edge_rates,
        "bottlenecks": [
            {"kind": b.kind, "subject": b.subject} for b in prediction.bottlenecks
        ],
        "extrapolation": prediction.extrapolation,
    }
