"""Domain types for logical stream DAGs and deployment configurations.

A :class:`LogicalDag` is the user-facing program: named operations connected
by grouped edges. A :class:`Configuration` is one concrete deployment of it:
per-node parallelism, container dimensions, container count, and the packing
of instances onto containers.

All values are treated as immutable after construction and the operations in
this module are pure functions, so they are safe to share between threads.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from streamplan.errors import DagError

GROUPINGS = ("fields", "shuffle", "all")

# Pseudo-node name under which per-container router processes report their
# metrics; the trainer treats it like any other node.
STREAM_MANAGER = "__stream_manager__"


@dataclass(frozen=True)
class NodeSpec:
    """One logical operation in the DAG.

    ``max_cpu_per_instance`` caps what a single instance can use (1.0 for the
    usual single-threaded implementation). ``source_weight`` only matters for
    multi-source DAGs, where the aggregate source rate is split between source
    nodes proportionally to their weights.
    """

    name: str
    max_cpu_per_instance: float = 1.0
    user_parallelism_hint: int | None = None
    source_weight: float = 1.0


@dataclass(frozen=True)
class EdgeSpec:
    """A directed, grouped data edge between two nodes.

    ``weight`` scales the fraction of the producer's output carried by this
    edge (default 1.0: every out-edge carries the full output, since edges are
    independent subscriptions). ``bytes_per_tuple`` of 0 disables link
    accounting for the edge.
    """

    src: str
    dst: str
    grouping: str = "fields"
    bytes_per_tuple: float = 0.0
    weight: float = 1.0


@dataclass
class LogicalDag:
    nodes: list[NodeSpec]
    edges: list[EdgeSpec]

    def __post_init__(self) -> None:
        self._by_name = {n.name: n for n in self.nodes}

    def node(self, name: str) -> NodeSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise DagError(f"unknown node {name!r}") from None

    def has_node(self, name: str) -> bool:
        return name in self._by_name

    def node_names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def in_edges(self, name: str) -> list[EdgeSpec]:
        return [e for e in self.edges if e.dst == name]

    def out_edges(self, name: str) -> list[EdgeSpec]:
        return [e for e in self.edges if e.src == name]

    @property
    def source_nodes(self) -> list[NodeSpec]:
        dsts = {e.dst for e in self.edges}
        return [n for n in self.nodes if n.name not in dsts]

    @property
    def sink_nodes(self) -> list[NodeSpec]:
        srcs = {e.src for e in self.edges}
        return [n for n in self.nodes if n.name not in srcs]

    def adjacency(self) -> dict[str, list[EdgeSpec]]:
        """Out-edges per node, skipping edges that reference unknown nodes."""
        adj: dict[str, list[EdgeSpec]] = {n.name: [] for n in self.nodes}
        for e in self.edges:
            if e.src in adj and e.dst in adj:
                adj[e.src].append(e)
        return adj

    def topo_order(self) -> list[str]:
        """Node names in topological order; raises DagError on a cycle."""
        adj = self.adjacency()
        indeg = {n.name: 0 for n in self.nodes}
        for edges in adj.values():
            for e in edges:
                indeg[e.dst] += 1
        ready = deque(name for name, d in indeg.items() if d == 0)
        order: list[str] = []
        while ready:
            name = ready.popleft()
            order.append(name)
            for e in adj[name]:
                indeg[e.dst] -= 1
                if indeg[e.dst] == 0:
                    ready.append(e.dst)
        if len(order) != len(self.nodes):
            raise DagError("graph contains a directed cycle")
        return order


@dataclass
class ValidationReport:
    ok: bool
    problems: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def validate_dag(dag: LogicalDag) -> ValidationReport:
    """Check the structural invariants of a logical DAG.

    Returns a report rather than raising, so callers can surface every
    violation at once.
    """
    problems: list[str] = []
    names = [n.name for n in dag.nodes]
    if not names:
        problems.append("DAG has no nodes")
    seen: set[str] = set()
    for name in names:
        if name in seen:
            problems.append(f"duplicate node name {name!r}")
        seen.add(name)
    for n in dag.nodes:
        if n.max_cpu_per_instance <= 0:
            problems.append(f"node {n.name!r}: max_cpu_per_instance must be > 0")
        if n.user_parallelism_hint is not None and n.user_parallelism_hint < 1:
            problems.append(f"node {n.name!r}: parallelism hint must be positive")
        if n.source_weight < 0:
            problems.append(f"node {n.name!r}: source_weight must be >= 0")

    pairs: set[tuple[str, str]] = set()
    for e in dag.edges:
        if e.src not in seen:
            problems.append(f"edge {e.src}->{e.dst}: unknown source node {e.src!r}")
        if e.dst not in seen:
            problems.append(f"edge {e.src}->{e.dst}: unknown destination node {e.dst!r}")
        if e.src == e.dst:
            problems.append(f"edge {e.src}->{e.dst}: self-loop")
        if (e.src, e.dst) in pairs:
            problems.append(f"edge {e.src}->{e.dst}: duplicate edge")
        pairs.add((e.src, e.dst))
        if e.grouping not in GROUPINGS:
            problems.append(
                f"edge {e.src}->{e.dst}: grouping {e.grouping!r} not one of {GROUPINGS}"
            )
        if e.bytes_per_tuple < 0:
            problems.append(f"edge {e.src}->{e.dst}: bytes_per_tuple must be >= 0")
        if not 0.0 <= e.weight <= 1.0:
            problems.append(f"edge {e.src}->{e.dst}: weight must lie in [0, 1]")

    if not problems:
        try:
            dag.topo_order()
        except DagError:
            problems.append("graph contains a directed cycle")
        else:
            if not dag.source_nodes:
                problems.append("DAG has no source node (every node has in-edges)")
    return ValidationReport(ok=not problems, problems=problems)


def _gamma_of(model: object) -> float:
    gamma = getattr(model, "gamma", model)
    return float(gamma)  # type: ignore[arg-type]


def node_input_rates(dag: LogicalDag, models: dict, source_rate: float) -> dict[str, float]:
    """Steady-state total input rate per node at the given aggregate source rate.

    Source nodes split ``source_rate`` proportionally to their
    ``source_weight`` (equal by default); downstream input is the sum of
    in-edge rates, each in-edge carrying the producer's gamma-scaled output
    times the edge weight.
    """
    if source_rate < 0:
        raise DagError("source_rate must be >= 0")
    for name in dag.node_names():
        if name not in models:
            raise DagError(f"missing model for node {name!r}")
    sources = dag.source_nodes
    total_weight = sum(n.source_weight for n in sources)
    if sources and total_weight <= 0:
        raise DagError("source weights sum to zero")
    incoming: dict[str, list[EdgeSpec]] = {n.name: [] for n in dag.nodes}
    for e in dag.edges:
        if e.src in incoming and e.dst in incoming:
            incoming[e.dst].append(e)
    rates: dict[str, float] = {}
    for name in dag.topo_order():
        in_edges = incoming[name]
        if not in_edges:
            rates[name] = source_rate * dag.node(name).source_weight / total_weight
        else:
            rates[name] = sum(
                rates[e.src] * _gamma_of(models[e.src]) * e.weight for e in in_edges
            )
    return rates


def propagate_rates(
    dag: LogicalDag, models: dict, source_rate: float
) -> dict[tuple[str, str], float]:
    """Steady-state tuple rate on every edge for the given source rate.

    The rate on edge ``(u, v)`` is the total input rate of ``u`` times
    ``gamma_u`` times the edge weight; each out-edge carries the full scaled
    output (edges are independent subscriptions, instance-level splitting is
    a grouping concern, not an edge-level one).
    """
    node_rates = node_input_rates(dag, models, source_rate)
    return {
        (e.src, e.dst): node_rates[e.src] * _gamma_of(models[e.src]) * e.weight
        for e in dag.edges
    }


def config_space_size(num_nodes: int, machines: int, max_instances_per_machine: int) -> int:
    """Count of distinct parallelism assignments over a machine budget.

    Sums ``(max_instances_per_machine * M) ** num_nodes`` for M from 1 to
    ``machines``. Computed with Python's arbitrary-precision integers, so the
    result is exact at any size.
    """
    for label, value in (
        ("num_nodes", num_nodes),
        ("machines", machines),
        ("max_instances_per_machine", max_instances_per_machine),
    ):
        if not isinstance(value, int) or value < 1:
            raise ValueError(f"{label} must be an integer >= 1")
    return sum((max_instances_per_machine * m) ** num_nodes for m in range(1, machines + 1))


def instance_id(node: str, index: int) -> str:
    return f"{node}-{index}"


@dataclass
class Configuration:
    """A concrete deployment: parallelism, container dimensions and packing.

    ``packing`` maps instance ids (``"<node>-<k>"`` with k in
    ``[0, parallelism)``) to container indices in ``[0, containers)``.
    ``sm_cpu_cap`` bounds the per-container router's CPU share (routers are
    observed single-threaded, hence the 1.0 default).
    """

    parallelism: dict[str, int]
    container_cpu: float
    container_mem: float
    containers: int
    packing: dict[str, int]
    container_link: float | None = None
    sm_cpu_cap: float = 1.0

    def instances_of(self, node: str) -> list[str]:
        return [instance_id(node, k) for k in range(self.parallelism.get(node, 0))]

    def all_instances(self) -> list[str]:
        out: list[str] = []
        for node in self.parallelism:
            out.extend(self.instances_of(node))
        return out

    def container_of(self, instance: str) -> int:
        try:
            return self.packing[instance]
        except KeyError:
            raise DagError(f"instance {instance!r} is not packed") from None

    def instances_in_container(self, container: int) -> list[str]:
        return sorted(i for i, c in self.packing.items() if c == container)


def validate_config(dag: LogicalDag, config: Configuration) -> None:
    """Raise DagError unless the configuration is consistent with the DAG."""
    if config.containers < 1:
        raise DagError("containers must be >= 1")
    if config.container_cpu <= 0:
        raise DagError("container_cpu must be > 0")
    if config.container_mem <= 0:
        raise DagError("container_mem must be > 0")
    if config.sm_cpu_cap <= 0:
        raise DagError("sm_cpu_cap must be > 0")
    for name in dag.node_names():
        p = config.parallelism.get(name)
        if p is None or p < 1:
            raise DagError(f"node {name!r} needs a positive parallelism")
    expected = set()
    for name in dag.node_names():
        expected.update(config.instances_of(name))
    packed = set(config.packing)
    if missing := expected - packed:
        raise DagError(f"unpacked instances: {sorted(missing)}")
    if extra := packed - expected:
        raise DagError(f"packing references unknown instances: {sorted(extra)}")
    for inst, c in config.packing.items():
        if not 0 <= c < config.containers:
            raise DagError(f"instance {inst!r} packed to nonexistent container {c}")


# ---------------------------------------------------------------------------
# JSON wire formats


def dag_to_json(dag: LogicalDag) -> dict:
    return {
        "nodes": [
            {
                "name": n.name,
                "max_cpu": n.max_cpu_per_instance,
                "hint": n.user_parallelism_hint,
                "source_weight": n.source_weight,
            }
            for n in dag.nodes
        ],
        "edges": [
            {
                "src": e.src,
                "dst": e.dst,
                "grouping": e.grouping,
                "bytes_per_tuple": e.bytes_per_tuple,
                "weight": e.weight,
            }
            for e in dag.edges
        ],
    }


def dag_from_json(doc: dict) -> LogicalDag:
    try:
        nodes = [
            NodeSpec(
                name=n["name"],
                max_cpu_per_instance=float(n.get("max_cpu", 1.0)),
                user_parallelism_hint=n.get("hint"),
                source_weight=float(n.get("source_weight", 1.0)),
            )
            for n in doc["nodes"]
        ]
        edges = [
            EdgeSpec(
                src=e["src"],
                dst=e["dst"],
                grouping=e.get("grouping", "fields"),
                bytes_per_tuple=float(e.get("bytes_per_tuple", 0.0)),
                weight=float(e.get("weight", 1.0)),
            )
            for e in doc.get("edges", [])
        ]
    except (KeyError, TypeError) as exc:
        raise DagError(f"malformed DAG document: {exc}") from exc
    return LogicalDag(nodes=nodes, edges=edges)


def config_to_json(config: Configuration) -> dict:
    container = {"cpu": config.container_cpu, "mem": config.container_mem}
    if config.container_link is not None:
        container["link"] = config.container_link
    if config.sm_cpu_cap != 1.0:
        container["sm_cpu_cap"] = config.sm_cpu_cap
    return {
        "parallelism": dict(config.parallelism),
        "container": container,
        "containers": config.containers,
        "packing": dict(config.packing),
    }


def config_from_json(doc: dict) -> Configuration:
    try:
        container = doc["container"]
        return Configuration(
            parallelism={k: int(v) for k, v in doc["parallelism"].items()},
            container_cpu=float(container["cpu"]),
            container_mem=float(container["mem"]),
            container_link=(
                float(container["link"]) if container.get("link") is not None else None
            ),
            sm_cpu_cap=float(container.get("sm_cpu_cap", 1.0)),
            containers=int(doc["containers"]),
            packing={k: int(v) for k, v in doc["packing"].items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DagError(f"malformed configuration document: {exc}") from exc


def load_dag(path: str | Path) -> LogicalDag:
    return dag_from_json(json.loads(Path(path).read_text()))


def load_config(path: str | Path) -> Configuration:
    return config_from_json(json.loads(Path(path).read_text()))
