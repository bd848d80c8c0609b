"""Discrete-event steady-state simulator of a container/router runtime.

Stands in for a production cluster: it is the ground truth that training
data is generated from and that predictions are verified against. Fidelity
target is steady-state tuple rates, not microsecond realism -- tuples move
in integer batches with deterministic per-tuple costs (optional exponential
jitter), which keeps multi-minute runs cheap while preserving queue dynamics,
saturation and backpressure behavior.

Topology semantics mirror the runtime being modeled: instances talk only to
their container's router; local deliveries pass one router, container
crossings pass two (and cost router CPU twice). Fields-grouping hashes a
uniform synthetic key space of 10,007 keys, shuffle spreads uniformly, and
all-grouping replicates to every consumer instance.

Each server (instance or router) gets a fixed CPU share for the run,
computed per container as the work-conserving processor-sharing fixed point
of the true per-server demands at the offered rate: demands are granted up
to capacity and any surplus is spread evenly. The event loop then verifies
the configuration mechanically -- if a server cannot keep up, its queue
grows, backpressure throttles the sources, and the run reports unstable.
"""

from __future__ import annotations

import gzip
import heapq
import json
import logging
import math
import random
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from streamplan.dag import (
    Configuration,
    LogicalDag,
    STREAM_MANAGER,
    validate_config,
)
from streamplan.errors import SimulationError

log = logging.getLogger(__name__)

KEY_SPACE = 10007  # synthetic keys for fields-grouping, uniformly distributed

QUEUE_BOUND = 1_000_000
EMITS_PER_SECOND = 25.0
TICK = 1.0

# queue growth (tuples/sec over the last half of the run) above which the
# run is declared unstable
STABLE_SLOPE_LIMIT = 1.0


@dataclass(frozen=True)
class NodeCosts:
    """True per-node costs the simulator charges (and models try to learn)."""

    cpu_cost: float  # CPU-seconds per tuple
    base_cpu: float = 0.0  # constant drain from supporting threads
    gamma: float = 1.0  # output tuples per input tuple
    mem_per_tuple_rate: float = 0.0  # working-set bytes per (tuple/sec)
    mem_base: float = 0.0
    io_wait: float = 0.0  # off-CPU wall seconds per tuple
    gc_garbage_per_tuple: float = 0.0
    gc_headroom: float = 0.0  # garbage bytes that trigger a collection
    gc_pause: float = 0.05


@dataclass(frozen=True)
class SmCosts:
    cpu_cost_route: float  # CPU-seconds per routed tuple
    base_cpu: float = 0.0
    cost_per_peer: float = 0.0  # extra drain per remote peer container


@dataclass(frozen=True)
class GroundTruth:
    nodes: dict[str, NodeCosts]
    sm: SmCosts
    service_jitter: float = 0.0  # 0 disables; blends in Exp(1) noise


def gt_to_json(gt: GroundTruth) -> dict:
    return {
        "nodes": {
            name: {
                "cpu_cost": n.cpu_cost,
                "base_cpu": n.base_cpu,
                "gamma": n.gamma,
                "mem_per_tuple_rate": n.mem_per_tuple_rate,
                "mem_base": n.mem_base,
                "io_wait": n.io_wait,
                "gc_garbage_per_tuple": n.gc_garbage_per_tuple,
                "gc_headroom": n.gc_headroom,
                "gc_pause": n.gc_pause,
            }
            for name, n in sorted(gt.nodes.items())
        },
        "stream_manager": {
            "cpu_cost_route": gt.sm.cpu_cost_route,
            "base_cpu": gt.sm.base_cpu,
            "cost_per_peer": gt.sm.cost_per_peer,
        },
        "service_jitter": gt.service_jitter,
    }


def gt_from_json(doc: dict) -> GroundTruth:
    nodes = {
        name: NodeCosts(
            cpu_cost=float(n["cpu_cost"]),
            base_cpu=float(n.get("base_cpu", 0.0)),
            gamma=float(n.get("gamma", 1.0)),
            mem_per_tuple_rate=float(n.get("mem_per_tuple_rate", 0.0)),
            mem_base=float(n.get("mem_base", 0.0)),
            io_wait=float(n.get("io_wait", 0.0)),
            gc_garbage_per_tuple=float(n.get("gc_garbage_per_tuple", 0.0)),
            gc_headroom=float(n.get("gc_headroom", 0.0)),
            gc_pause=float(n.get("gc_pause", 0.05)),
        )
        for name, n in doc["nodes"].items()
    }
    sm_doc = doc["stream_manager"]
    sm = SmCosts(
        cpu_cost_route=float(sm_doc["cpu_cost_route"]),
        base_cpu=float(sm_doc.get("base_cpu", 0.0)),
        cost_per_peer=float(sm_doc.get("cost_per_peer", 0.0)),
    )
    return GroundTruth(nodes=nodes, sm=sm, service_jitter=float(doc.get("service_jitter", 0.0)))


def load_gt(path: str | Path) -> GroundTruth:
    return gt_from_json(json.loads(Path(path).read_text()))


@dataclass
class SimResult:
    offered_rate: float
    achieved_rate: float
    stable: bool
    duration: float
    seed: int
    metrics_rows: list[dict]
    ingested: dict[str, int]  # tuples processed per node
    emitted: dict[str, int]  # logical output tuples per node
    sm_handled: dict[int, int]  # tuples handled per container router
    routed: int  # tuples entering routers from local instances
    crossed: int  # tuples forwarded between containers
    sink_consumed: int
    backpressure_seconds: dict[str, float]
    queue_slopes: dict[str, float]
    total_queue_slope: float
    throttled: bool

    def to_json(self) -> dict:
        return {
            "offered_rate": self.offered_rate,
            "achieved_rate": self.achieved_rate,
            "stable": self.stable,
            "duration": self.duration,
            "seed": self.seed,
            "crossed": self.crossed,
            "routed": self.routed,
            "sink_consumed": self.sink_consumed,
            "throttled": self.throttled,
            "total_queue_slope": self.total_queue_slope,
        }


class _Server:
    __slots__ = (
        "idx", "is_sm", "name", "node", "container", "queue", "qtuples", "busy",
        "blocked_until", "wall_per_tuple", "cpu_per_tuple", "base_cpu", "share",
        "win_in", "win_out", "win_cpu", "win_busy", "win_gc", "win_bp",
        "processed", "emitted", "carry_gamma", "gamma",
        "mem_base", "mem_rate", "gc_garbage", "gc_headroom", "gc_pause",
        "garbage", "trough", "pending_memutil", "in_bp",
    )

    def __init__(self, idx: int, is_sm: bool, name: str, node: str, container: int):
        self.idx = idx
        self.is_sm = is_sm
        self.name = name
        self.node = node
        self.container = container
        self.queue: deque = deque()
        self.qtuples = 0
        self.busy = False
        self.blocked_until = 0.0
        self.wall_per_tuple = 0.0
        self.cpu_per_tuple = 0.0
        self.base_cpu = 0.0
        self.share = 0.0
        self.win_in = 0
        self.win_out = 0
        self.win_cpu = 0.0
        self.win_busy = 0.0
        self.win_gc = 0.0
        self.win_bp = 0.0
        self.processed = 0
        self.emitted = 0
        self.carry_gamma = 0.0
        self.gamma = 1.0
        self.mem_base = 0.0
        self.mem_rate = 0.0
        self.gc_garbage = 0.0
        self.gc_headroom = 0.0
        self.gc_pause = 0.0
        self.garbage = 0.0
        self.trough = 0.0
        self.pending_memutil = 0.0
        self.in_bp = False


def _key_fractions(consumers: int) -> list[float]:
    counts = [len(range(q, KEY_SPACE, consumers)) for q in range(consumers)]
    return [c / KEY_SPACE for c in counts]


def _waterfill(demands: list[float], caps: list[float], budget: float) -> list[float]:
    """Work-conserving share assignment within one container."""
    granted = [min(d, c) for d, c in zip(demands, caps)]
    used = sum(granted)
    if used <= budget:
        # spread the surplus evenly, respecting caps
        surplus = budget - used
        active = [i for i, c in enumerate(caps) if granted[i] < c]
        while surplus > 1e-12 and active:
            step = surplus / len(active)
            next_active = []
            for i in active:
                room = caps[i] - granted[i]
                take = min(room, step)
                granted[i] += take
                surplus -= take
                if granted[i] < caps[i] - 1e-12:
                    next_active.append(i)
            if len(next_active) == len(active) and step <= 1e-15:
                break
            active = next_active
        return granted
    # overloaded: processor sharing gives backlogged servers equal shares
    lo, hi = 0.0, max(min(d, c) for d, c in zip(demands, caps))
    for _ in range(100):
        level = (lo + hi) / 2
        total = sum(min(d, c, level) for d, c in zip(demands, caps))
        if total > budget:
            hi = level
        else:
            lo = level
    return [min(d, c, lo) for d, c in zip(demands, caps)]


def _fluid_rates(
    dag: LogicalDag,
    gt: GroundTruth,
    config: Configuration,
    offered_rate: float,
    routes: dict,
) -> tuple[dict[str, float], dict[int, float]]:
    """Per-instance input rates and per-container router flux at the offered
    rate, using the true gammas and the routing split fractions."""
    rates: dict[str, float] = {i: 0.0 for i in config.all_instances()}
    sources = dag.source_nodes
    total_weight = sum(n.source_weight for n in sources)
    for n in sources:
        instances = config.instances_of(n.name)
        for inst in instances:
            rates[inst] = offered_rate * n.source_weight / total_weight / len(instances)
    flux: dict[int, float] = {c: 0.0 for c in range(config.containers)}
    order = dag.topo_order()
    for node in order:
        gamma = gt.nodes[node].gamma
        for edge_idx, edge in enumerate(dag.edges):
            if edge.src != node:
                continue
            for up in config.instances_of(node):
                out = rates[up] * gamma * edge.weight
                ci = config.container_of(up)
                for vq, cj, frac in routes[(edge_idx, up)][1]:
                    flow = out * frac
                    rates[vq] += flow
                    flux[ci] += flow
                    if cj != ci:
                        flux[cj] += flow
    return rates, flux


def _assign_shares(
    dag: LogicalDag,
    gt: GroundTruth,
    config: Configuration,
    offered_rate: float,
    routes: dict,
    peers: dict[int, int],
) -> tuple[dict[str, float], dict[int, float]]:
    inst_rates, flux = _fluid_rates(dag, gt, config, offered_rate, routes)
    inst_shares: dict[str, float] = {}
    sm_shares: dict[int, float] = {}
    for c in range(config.containers):
        members = config.instances_in_container(c)
        demands = []
        caps = []
        for inst in members:
            node = inst.rsplit("-", 1)[0]
            costs = gt.nodes[node]
            demands.append(costs.base_cpu + costs.cpu_cost * inst_rates[inst])
            caps.append(dag.node(node).max_cpu_per_instance)
        sm_base = gt.sm.base_cpu + gt.sm.cost_per_peer * peers[c]
        demands.append(sm_base + gt.sm.cpu_cost_route * flux[c])
        caps.append(config.sm_cpu_cap)
        shares = _waterfill(demands, caps, config.container_cpu)
        for inst, share in zip(members, shares):
            inst_shares[inst] = share
        sm_shares[c] = shares[-1]
    return inst_shares, sm_shares


def simulate(
    dag: LogicalDag,
    gt: GroundTruth,
    config: Configuration,
    offered_rate: float,
    duration: float,
    seed: int | None,
    window: float = 10.0,
) -> SimResult:
    """Run the configuration at a fixed offered rate; deterministic per seed."""
    if seed is None:
        raise SimulationError("a seed is required; simulations must be reproducible")
    validate_config(dag, config)
    for node in dag.node_names():
        if node not in gt.nodes:
            raise SimulationError(f"ground truth lacks node {node!r}")
        costs = gt.nodes[node]
        if min(costs.cpu_cost, costs.base_cpu, costs.gamma, costs.io_wait) < 0:
            raise SimulationError(f"ground truth for {node!r} has negative costs")
    if offered_rate < 0:
        raise SimulationError("offered_rate must be >= 0")
    if duration < 60.0:
        log.warning("duration %.0fs is below the 60s guideline; results are noisy",
                    duration)
    rng = random.Random(seed)

    # --- static structure -------------------------------------------------
    servers: list[_Server] = []
    by_name: dict[str, int] = {}
    for node in dag.topo_order():
        for inst in config.instances_of(node):
            s = _Server(len(servers), False, inst, node, config.container_of(inst))
            costs = gt.nodes[node]
            s.gamma = costs.gamma
            s.base_cpu = costs.base_cpu
            s.cpu_per_tuple = costs.cpu_cost
            s.mem_base = costs.mem_base
            s.mem_rate = costs.mem_per_tuple_rate
            s.gc_garbage = costs.gc_garbage_per_tuple
            s.gc_headroom = costs.gc_headroom
            s.gc_pause = costs.gc_pause
            s.trough = costs.mem_base
            s.pending_memutil = costs.mem_base
            servers.append(s)
            by_name[inst] = s.idx
    sm_idx: dict[int, int] = {}
    for c in range(config.containers):
        s = _Server(len(servers), True, f"SM-{c}", STREAM_MANAGER, c)
        servers.append(s)
        by_name[s.name] = s.idx
        sm_idx[c] = s.idx

    # routing tables: (edge, producer) -> (mode, [(consumer, container, frac)])
    routes: dict[tuple[int, str], tuple[str, list[tuple[str, int, float]]]] = {}
    for edge_idx, edge in enumerate(dag.edges):
        consumers = config.instances_of(edge.dst)
        if edge.grouping == "fields":
            fractions = _key_fractions(len(consumers))
        elif edge.grouping == "shuffle":
            fractions = [1.0 / len(consumers)] * len(consumers)
        else:
            fractions = [1.0] * len(consumers)
        table = [
            (vq, config.container_of(vq), frac)
            for vq, frac in zip(consumers, fractions)
        ]
        for up in config.instances_of(edge.src):
            routes[(edge_idx, up)] = (edge.grouping, table)

    peers: dict[int, int] = {c: 0 for c in range(config.containers)}
    peer_sets: dict[int, set[int]] = {c: set() for c in range(config.containers)}
    for (edge_idx, up), (_, table) in routes.items():
        ci = config.container_of(up)
        for _, cj, _ in table:
            if cj != ci:
                peer_sets[ci].add(cj)
                peer_sets[cj].add(ci)
    for c, s in peer_sets.items():
        peers[c] = len(s)

    inst_shares, sm_shares = _assign_shares(dag, gt, config, offered_rate, routes, peers)
    for s in servers:
        if s.is_sm:
            s.share = sm_shares[s.container]
            s.base_cpu = gt.sm.base_cpu + gt.sm.cost_per_peer * peers[s.container]
            s.cpu_per_tuple = gt.sm.cpu_cost_route
            usable = max(0.0, s.share - s.base_cpu)
            s.wall_per_tuple = (
                math.inf if (s.cpu_per_tuple > 0 and usable <= 0)
                else (s.cpu_per_tuple / usable if s.cpu_per_tuple > 0 else 0.0)
            )
        else:
            s.share = inst_shares[s.name]
            costs = gt.nodes[s.node]
            usable = max(0.0, s.share - s.base_cpu)
            if costs.cpu_cost > 0 and usable <= 0:
                s.wall_per_tuple = math.inf
            else:
                cpu_wall = costs.cpu_cost / usable if costs.cpu_cost > 0 else 0.0
                s.wall_per_tuple = cpu_wall + costs.io_wait

    # per-(producer, edge) and per-consumer integer carries
    edge_carry: dict[tuple[int, str], float] = {k: 0.0 for k in routes}
    split_carry: dict[tuple[int, str], list[float]] = {
        k: [0.0] * len(table) for k, (_, table) in routes.items()
    }
    out_edges_of: dict[str, list[int]] = {n: [] for n in dag.node_names()}
    for edge_idx, edge in enumerate(dag.edges):
        out_edges_of[edge.src].append(edge_idx)
    edge_weight = [e.weight for e in dag.edges]

    high_watermark = max(2000.0, 2.0 * offered_rate)
    low_watermark = high_watermark / 2.0

    # --- event loop state -------------------------------------------------
    events: list[tuple[float, int, int, int]] = []
    seq = 0
    DONE, EMIT, TICKEV, WINDOW = 0, 1, 2, 3

    def push(t: float, code: int, idx: int) -> None:
        nonlocal seq
        seq += 1
        heapq.heappush(events, (t, seq, code, idx))

    sources = dag.source_nodes
    total_weight = sum(n.source_weight for n in sources)
    emitters: list[dict] = []
    for n in sources:
        instances = config.instances_of(n.name)
        rate = offered_rate * n.source_weight / total_weight / len(instances)
        for inst in instances:
            if rate <= 0:
                continue
            batch = max(1, round(rate / EMITS_PER_SECOND))
            emitters.append(
                {"server": by_name[inst], "batch": batch, "interval": batch / rate,
                 "held": False}
            )
    for e_idx, em in enumerate(emitters):
        push(em["interval"], EMIT, e_idx)
    push(TICK, TICKEV, 0)
    push(window, WINDOW, 0)

    throttled = False
    throttle_seen = False
    jitter = gt.service_jitter
    tick_times: list[float] = []
    tick_totals: list[float] = []
    per_server_ticks: list[list[float]] = [[] for _ in servers]
    metrics_rows: list[dict] = []
    routed = 0
    crossed = 0
    bp_totals = [0.0] * len(servers)
    half_time = duration / 2.0
    half_ingested: float | None = None

    def service_time(s: _Server, tuples: int) -> float:
        t = tuples * s.wall_per_tuple
        if jitter > 0 and math.isfinite(t):
            t *= max(0.05, 1.0 + jitter * (rng.expovariate(1.0) - 1.0))
        return t

    def start_service(s: _Server, now: float) -> None:
        if s.busy or not s.queue:
            return
        item = s.queue[0]
        tuples = item if isinstance(item, int) else item[0]
        t_serv = service_time(s, tuples)
        if not math.isfinite(t_serv):
            return  # dead server: queue can only grow
        s.busy = True
        start = max(now, s.blocked_until)
        push(start + t_serv, DONE, s.idx)
        s.win_busy += t_serv

    def trip_backpressure(s: _Server) -> None:
        # the tripping server stays marked until the episode clears, so its
        # backpressure metric reflects the whole time it slowed the sources
        nonlocal throttled, throttle_seen
        s.in_bp = True
        throttled = True
        throttle_seen = True

    def enqueue_instance(s: _Server, tuples: int, now: float) -> None:
        s.queue.append(tuples)
        s.qtuples += tuples
        if s.qtuples > high_watermark:
            trip_backpressure(s)
        start_service(s, now)

    def enqueue_sm(s: _Server, item: tuple, now: float) -> None:
        s.queue.append(item)
        s.qtuples += item[0]
        if s.qtuples > high_watermark:
            trip_backpressure(s)
        start_service(s, now)

    def emit_output(s: _Server, batch: int, now: float) -> None:
        s.carry_gamma += batch * s.gamma
        out_log = int(s.carry_gamma)
        s.carry_gamma -= out_log
        s.emitted += out_log
        s.win_out += out_log
        if out_log <= 0:
            return
        for edge_idx in out_edges_of[s.node]:
            key = (edge_idx, s.name)
            edge_carry[key] += out_log * edge_weight[edge_idx]
            amount = int(edge_carry[key])
            edge_carry[key] -= amount
            if amount <= 0:
                continue
            mode, table = routes[key]
            carries = split_carry[key]
            locals_: list[tuple[int, int]] = []
            remotes: dict[int, list[tuple[int, int]]] = {}
            total = 0
            for pos, (vq, cj, frac) in enumerate(table):
                if mode == "all":
                    n = amount
                else:
                    carries[pos] += amount * frac
                    n = int(carries[pos])
                    carries[pos] -= n
                if n <= 0:
                    continue
                total += n
                target = (by_name[vq], n)
                if cj == s.container:
                    locals_.append(target)
                else:
                    remotes.setdefault(cj, []).append(target)
            if total > 0:
                enqueue_sm(servers[sm_idx[s.container]], (total, locals_, remotes, False), now)

    def complete(s: _Server, now: float) -> None:
        nonlocal routed, crossed
        item = s.queue.popleft()
        if s.is_sm:
            total, locals_, remotes, forwarded = item
            s.qtuples -= total
            s.processed += total
            s.win_in += total
            s.win_out += total
            s.win_cpu += total * s.cpu_per_tuple
            if forwarded:
                crossed += total
            else:
                routed += total
            for idx, n in locals_:
                enqueue_instance(servers[idx], n, now)
            for cj, targets in remotes.items():
                subtotal = sum(n for _, n in targets)
                enqueue_sm(servers[sm_idx[cj]], (subtotal, targets, {}, True), now)
        else:
            batch = item
            s.qtuples -= batch
            s.processed += batch
            s.win_in += batch
            s.win_cpu += batch * s.cpu_per_tuple
            if s.gc_garbage > 0:
                s.garbage += batch * s.gc_garbage
            emit_output(s, batch, now)

    def flush_window(now: float) -> None:
        start = now - window
        for s in servers:
            # collect at the boundary so the trough right after a GC is visible
            if not s.is_sm and s.gc_headroom > 0 and s.garbage >= s.gc_headroom:
                s.win_gc += s.gc_pause
                s.win_cpu += s.gc_pause
                s.win_busy += s.gc_pause
                s.blocked_until = max(s.blocked_until, now) + s.gc_pause
                s.garbage = 0.0
            if not s.is_sm:
                s.trough = s.mem_base + s.mem_rate * (s.win_in / window)
            rows = [
                ("tuple_rate_in", s.win_in / window),
                ("tuple_rate_out", s.win_out / window),
                ("cputil", (s.win_cpu + s.base_cpu * window) / window),
                ("caputil", min(1.2, s.win_busy / window)),
                ("memutil", s.pending_memutil),
                ("gctime", s.win_gc),
                ("backpressure", s.win_bp),
            ]
            for metric, value in rows:
                metrics_rows.append(
                    {
                        "ts": start,
                        "node": s.node,
                        "instance": s.name,
                        "container": s.container,
                        "metric": metric,
                        "value": value,
                    }
                )
            s.pending_memutil = s.trough + s.garbage
            s.win_in = 0
            s.win_out = 0
            s.win_cpu = 0.0
            s.win_busy = 0.0
            s.win_gc = 0.0
            s.win_bp = 0.0

    source_servers = [
        servers[by_name[i]] for n in sources for i in config.instances_of(n.name)
    ]

    def total_source_ingested() -> int:
        return sum(s.processed for s in source_servers)

    # --- main loop ----------------------------------------------------------
    while events:
        t, _, code, idx = heapq.heappop(events)
        if t > duration + 1e-9:
            break
        if code == DONE:
            s = servers[idx]
            s.busy = False
            complete(s, t)
            start_service(s, t)
        elif code == EMIT:
            em = emitters[idx]
            if throttled:
                em["held"] = True
                continue
            enqueue_instance(servers[em["server"]], em["batch"], t)
            push(t + em["interval"], EMIT, idx)
        elif code == TICKEV:
            total_q = 0
            for s in servers:
                total_q += s.qtuples
                per_server_ticks[s.idx].append(float(s.qtuples))
                if s.in_bp:
                    s.win_bp += TICK
                    bp_totals[s.idx] += TICK
            tick_times.append(t)
            tick_totals.append(float(total_q))
            if half_ingested is None and t >= half_time:
                half_ingested = float(total_source_ingested())
            if throttled and all(s.qtuples < low_watermark for s in servers):
                throttled = False
                for s in servers:
                    s.in_bp = False
                for e_idx, em in enumerate(emitters):
                    if em["held"]:
                        em["held"] = False
                        push(t + em["interval"], EMIT, e_idx)
            push(t + TICK, TICKEV, 0)
        else:  # WINDOW
            flush_window(t)
            push(t + window, WINDOW, 0)

    if duration < window:
        log.warning("run shorter than one sampling window; no metrics emitted")

    if half_ingested is None:
        half_ingested = 0.0
    achieved = (total_source_ingested() - half_ingested) / max(1e-9, duration - half_time)
    achieved = min(achieved, offered_rate)

    def slope(ts: list[float], ys: list[float]) -> float:
        n = len(ts)
        half = n // 2
        xs, vals = ts[half:], ys[half:]
        if len(xs) < 2:
            return 0.0
        mx = sum(xs) / len(xs)
        my = sum(vals) / len(vals)
        var = sum((x - mx) ** 2 for x in xs)
        if var <= 0:
            return 0.0
        return sum((x - mx) * (y - my) for x, y in zip(xs, vals)) / var

    total_slope = slope(tick_times, tick_totals)
    queue_slopes = {
        s.name: slope(tick_times, per_server_ticks[s.idx]) for s in servers
    }
    stable = (not throttle_seen) and total_slope <= STABLE_SLOPE_LIMIT

    ingested: dict[str, int] = {}
    emitted: dict[str, int] = {}
    for s in servers:
        if s.is_sm:
            continue
        ingested[s.node] = ingested.get(s.node, 0) + s.processed
        emitted[s.node] = emitted.get(s.node, 0) + s.emitted
    sm_handled = {s.container: s.processed for s in servers if s.is_sm}
    sink_consumed = sum(ingested.get(n.name, 0) for n in dag.sink_nodes)

    return SimResult(
        offered_rate=offered_rate,
        achieved_rate=achieved,
        stable=stable,
        duration=duration,
        seed=seed,
        metrics_rows=metrics_rows,
        ingested=ingested,
        emitted=emitted,
        sm_handled=sm_handled,
        routed=routed,
        crossed=crossed,
        sink_consumed=sink_consumed,
        backpressure_seconds={s.name: bp_totals[s.idx] for s in servers},
        queue_slopes=queue_slopes,
        total_queue_slope=total_slope,
        throttled=throttle_seen,
    )


def find_max_rate(
    dag: LogicalDag,
    gt: GroundTruth,
    config: Configuration,
    seed: int = 1,
    duration: float = 60.0,
    tolerance: float = 0.01,
    start: float = 1.0,
) -> float:
    """Bisect the offered rate on the stability predicate (1% tolerance)."""

    def stable_at(rate: float) -> bool:
        return simulate(dag, gt, config, rate, duration, seed).stable

    lo = 0.0
    rate = start
    for _ in range(60):
        if not stable_at(rate):
            break
        lo = rate
        rate *= 8.0
    else:
        raise SimulationError("no instability found; ground truth has no finite capacity")
    hi = rate
    while (hi - lo) > tolerance * max(hi, 1e-9):
        mid = (lo + hi) / 2.0
        if stable_at(mid):
            lo = mid
        else:
            hi = mid
    return lo


def emit_synthetic_metrics(result: SimResult, path: str | Path) -> int:
    """Write the run's metric rows as JSON-lines; returns the row count."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    rows = result.metrics_rows
    if not rows:
        log.warning("simulation produced no metric rows (run shorter than a window?)")
    with opener(path, "wt") as handle:  # type: ignore[operator]
        for row in rows:
            handle.write(json.dumps(row) + "\n")
    return len(rows)


def run_rate_sweep(
    dag: LogicalDag,
    gt: GroundTruth,
    config: Configuration,
    rates: list[float],
    duration: float,
    seed: int,
    path: str | Path | None = None,
    window: float = 10.0,
) -> tuple[list[SimResult], list[dict]]:
    """Simulate several offered rates and concatenate their metric streams.

    Each run's timestamps are offset so windows never collide; the combined
    stream is what the trainer expects as input.
    """
    results: list[SimResult] = []
    rows: list[dict] = []
    offset = 0.0
    for i, rate in enumerate(rates):
        result = simulate(dag, gt, config, rate, duration, seed + i, window=window)
        results.append(result)
        for row in result.metrics_rows:
            shifted = dict(row)
            shifted["ts"] = row["ts"] + offset
            rows.append(shifted)
        offset += duration + window
    if path is not None:
        p = Path(path)
        opener = gzip.open if p.suffix == ".gz" else open
        with opener(p, "wt") as handle:  # type: ignore[operator]
            for row in rows:
                handle.write(json.dumps(row) + "\n")
    return results, rows
