"""Produce efficient configurations for a target rate with balanced containers.

The allocation unit is a *balanced container*: a template co-locating a pair
of adjacent nodes (or a single node) with instance counts chosen so that the
instances and the container's router are rate-matched, the router running at
its peak CPU. Rate-matching uses the worst case for the router -- every
ingress, every delivery between the pair, and every egress crossing container
boundaries -- so replicated templates never starve on communication.

Templates can be shrunk uniformly (alpha-scaling) to a preferred container
dimension, then each template is replicated until the target rate (adjusted
by the calibration over-provisioning factor) is covered on every node it
hosts. Total work is linear in the DAG size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from streamplan.dag import (
    Configuration,
    LogicalDag,
    STREAM_MANAGER,
    instance_id,
    node_input_rates,
)
from streamplan.errors import AllocationError
from streamplan.flow import Bottleneck, predict_rate
from streamplan.training import NodeModel

MIN_CONTAINER_MEM = 64 * 2**20

# rate-match re-verification floor for alpha-scaled templates: the scaled
# router must still carry this fraction of the scaled worst-case flux
SCALE_RATE_MATCH_FLOOR = 0.90


@dataclass
class AllocationPolicy:
    preferred_container_cpu: float | None = None
    candidate_dims: list[float] | None = None
    overprovision_factor: float = 1.0
    sm_cpu: float = 1.0
    min_container_mem: float = MIN_CONTAINER_MEM

    def __post_init__(self) -> None:
        if self.preferred_container_cpu is not None and self.preferred_container_cpu <= 0:
            raise AllocationError("preferred_container_cpu must be > 0 when set")
        if self.overprovision_factor < 1.0:
            raise AllocationError("overprovision_factor must be >= 1")


@dataclass
class ContainerTemplate:
    group: tuple[str, ...]
    instances: dict[str, int]
    per_instance_cpu: dict[str, float]
    per_instance_rate: dict[str, float]
    fractional: dict[str, float]
    member_capacity: dict[str, float]
    sm_cpu: float
    cpu_dim: float
    mem_dim: float
    edge_rate: float
    alpha: float = 1.0


def worst_case_sm_flux(edge_rate: float, gamma_p: float, gamma_q: float) -> float:
    """Router flux through one container in the fully remote limit.

    Covers the head node's ingress arriving remotely, its output leaving and
    re-entering on the paired node's side, and the pair's output leaving:
    ``R * (1 + 2*gamma_p + gamma_p*gamma_q)``, which is 4R when both ratios
    are 1. Pass ``gamma_q=0`` for a container hosting a single node.
    """
    if edge_rate < 0 or gamma_p < 0 or gamma_q < 0:
        raise AllocationError("rates and ratios must be nonnegative")
    return edge_rate * (1.0 + 2.0 * gamma_p + gamma_p * gamma_q)


def pair_nodes(dag: LogicalDag, models: dict[str, NodeModel]) -> list[tuple[str, ...]]:
    """Group nodes for co-location: greedy matching in topological order.

    Each node pairs with its heaviest-compute unpaired out-neighbor (compute
    weight is the CPU slope scaled by the node's expected rate under
    unit-rate propagation); leftovers become singletons. On chains this
    yields alternate-edge pairing.
    """
    unit_rates = node_input_rates(dag, models, 1.0)

    def weight(name: str) -> float:
        return models[name].cpu.slope * unit_rates[name]

    adjacency = dag.adjacency()
    taken: set[str] = set()
    groups: list[tuple[str, ...]] = []
    for u in dag.topo_order():
        if u in taken:
            continue
        taken.add(u)
        candidates = sorted(
            {e.dst for e in adjacency[u] if e.dst not in taken},
            key=lambda d: (-weight(d), d),
        )
        if candidates:
            v = candidates[0]
            taken.add(v)
            groups.append((u, v))
        else:
            groups.append((u,))
    return groups


def _sm_peak_flux(models: dict[str, NodeModel], sm_cpu: float) -> float:
    sm = models.get(STREAM_MANAGER)
    if sm is None:
        raise AllocationError("missing stream-manager model")
    if sm.cpu.slope <= 0:
        raise AllocationError("stream-manager CPU model has nonpositive slope")
    peak = (sm_cpu - sm.cpu.intercept) / sm.cpu.slope
    if peak <= 0:
        raise AllocationError(
            f"stream-manager intercept {sm.cpu.intercept:.3g} exhausts its "
            f"{sm_cpu:.3g} CPU budget"
        )
    return peak


def compose_balanced_container(
    group: tuple[str, ...],
    models: dict[str, NodeModel],
    sm_cpu: float = 1.0,
    min_mem: float = MIN_CONTAINER_MEM,
) -> ContainerTemplate:
    """Size one container so the group and its router are rate-matched."""
    if not 1 <= len(group) <= 2:
        raise AllocationError(f"group must hold one or two nodes, got {group}")
    head = group[0]
    gamma_p = models[head].gamma
    gamma_q = models[group[1]].gamma if len(group) == 2 else 0.0
    peak_flux = _sm_peak_flux(models, sm_cpu)
    factor = worst_case_sm_flux(1.0, gamma_p, gamma_q)
    edge_rate = peak_flux / factor

    ingest = {head: edge_rate}
    if len(group) == 2:
        ingest[group[1]] = gamma_p * edge_rate

    instances: dict[str, int] = {}
    per_cpu: dict[str, float] = {}
    per_rate: dict[str, float] = {}
    fractional: dict[str, float] = {}
    cpu_dim = sm_cpu
    mem_dim = 0.0
    for node, rate in ingest.items():
        model = models[node]
        peak = model.peak_rate()
        if peak <= 0:
            raise AllocationError(f"node {node!r} has nonpositive peak rate")
        frac = rate / peak if math.isfinite(peak) else 0.0
        count = max(1, math.ceil(frac - 1e-12))
        r = rate / count
        share = model.cpu.predict(r)
        instances[node] = count
        per_rate[node] = r
        per_cpu[node] = share
        fractional[node] = frac if frac > 0 else 1.0
        cpu_dim += count * share
        if model.memory is not None:
            mem_dim += count * model.memory.predict(r)
    return ContainerTemplate(
        group=group,
        instances=instances,
        per_instance_cpu=per_cpu,
        per_instance_rate=per_rate,
        fractional=fractional,
        member_capacity=dict(ingest),
        sm_cpu=sm_cpu,
        cpu_dim=cpu_dim,
        mem_dim=max(mem_dim, min_mem),
        edge_rate=edge_rate,
    )


def scale_template(
    template: ContainerTemplate,
    preferred_cpu: float | None,
    models: dict[str, NodeModel],
) -> ContainerTemplate:
    """Shrink a template uniformly to a preferred container CPU dimension.

    The sustained edge rate, the router budget and the per-node instance
    requirements all scale by alpha = preferred / current; instance counts
    round up from the scaled fractional requirement and shares are re-read
    from the models at the resulting per-instance rates. Identity when the
    preferred dimension is absent or not smaller.
    """
    if preferred_cpu is None or preferred_cpu >= template.cpu_dim:
        return template
    alpha = preferred_cpu / template.cpu_dim
    sm = models[STREAM_MANAGER]
    scaled_sm = alpha * template.sm_cpu
    if scaled_sm <= sm.cpu.intercept:
        raise AllocationError(
            f"alpha={alpha:.3f} leaves the router below its idle cost"
        )
    for node, share in template.per_instance_cpu.items():
        if alpha * share < models[node].cpu.intercept:
            raise AllocationError(
                f"alpha={alpha:.3f} puts node {node!r} below its idle CPU cost"
            )

    edge_rate = alpha * template.edge_rate
    gamma_p = models[template.group[0]].gamma
    instances: dict[str, int] = {}
    per_cpu: dict[str, float] = {}
    per_rate: dict[str, float] = {}
    capacity: dict[str, float] = {}
    cpu_dim = scaled_sm
    mem_dim = 0.0
    for node, frac in template.fractional.items():
        model = models[node]
        count = max(1, math.ceil(alpha * frac - 1e-12))
        rate = edge_rate if node == template.group[0] else gamma_p * edge_rate
        r = rate / count
        share = model.cpu.predict(r)
        instances[node] = count
        per_rate[node] = r
        per_cpu[node] = share
        capacity[node] = rate
        cpu_dim += count * share
        if model.memory is not None:
            mem_dim += count * model.memory.predict(r)

    # rate-match re-verification: the shrunk router must still carry the
    # shrunk worst-case flux (intercepts do not scale, so a margin applies)
    gamma_q = models[template.group[1]].gamma if len(template.group) == 2 else 0.0
    needed = worst_case_sm_flux(edge_rate, gamma_p, gamma_q)
    achievable = (scaled_sm - sm.cpu.intercept) / sm.cpu.slope
    if achievable < SCALE_RATE_MATCH_FLOOR * needed:
        raise AllocationError(
            f"alpha={alpha:.3f} breaks rate matching: router sustains "
            f"{achievable:.1f} of worst-case {needed:.1f}"
        )
    return ContainerTemplate(
        group=template.group,
        instances=instances,
        per_instance_cpu=per_cpu,
        per_instance_rate=per_rate,
        fractional=dict(template.fractional),
        member_capacity=capacity,
        sm_cpu=scaled_sm,
        cpu_dim=cpu_dim,
        mem_dim=max(mem_dim, template.mem_dim * alpha, MIN_CONTAINER_MEM),
        edge_rate=edge_rate,
        alpha=alpha,
    )


def _build_configuration(
    dag: LogicalDag,
    models: dict[str, NodeModel],
    adjusted_target: float,
    templates: list[ContainerTemplate],
    policy: AllocationPolicy,
) -> Configuration:
    rates = node_input_rates(dag, models, adjusted_target)
    counts: list[int] = []
    for t in templates:
        needed = 1
        for node, capacity in t.member_capacity.items():
            if rates[node] <= 0:
                continue
            if capacity <= 0:
                raise AllocationError(f"template for {t.group} sustains no load on {node!r}")
            needed = max(needed, math.ceil(rates[node] / capacity - 1e-9))
        counts.append(needed)

    parallelism: dict[str, int] = {}
    packing: dict[str, int] = {}
    container = 0
    for t, count in zip(templates, counts):
        for node, per in t.instances.items():
            parallelism[node] = count * per
        for replica in range(count):
            for node, per in t.instances.items():
                for j in range(per):
                    packing[instance_id(node, replica * per + j)] = container
            container += 1

    cpu_dim = max(t.cpu_dim for t in templates)
    mem_dim = max(max(t.mem_dim for t in templates), policy.min_container_mem)
    return Configuration(
        parallelism=parallelism,
        container_cpu=cpu_dim,
        container_mem=mem_dim,
        containers=container,
        packing=packing,
        sm_cpu_cap=max(t.sm_cpu for t in templates),
    )


def allocate(
    dag: LogicalDag,
    models: dict[str, NodeModel],
    target_rate: float,
    policy: AllocationPolicy | None = None,
) -> Configuration:
    """Configuration sized for the target aggregate source rate.

    The target is first multiplied by the policy's over-provisioning factor;
    each group's template is replicated until every hosted node's propagated
    rate is covered, one replica per container. With ``candidate_dims`` set,
    each candidate dimension is tried and the cheapest configuration by total
    allocated CPU wins (smallest dimension breaking ties).
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be > 0")
    policy = policy or AllocationPolicy()
    adjusted = target_rate * policy.overprovision_factor
    groups = pair_nodes(dag, models)
    base = [
        compose_balanced_container(g, models, policy.sm_cpu, policy.min_container_mem)
        for g in groups
    ]

    dims: list[float | None]
    if policy.candidate_dims:
        dims = sorted(policy.candidate_dims)
    else:
        dims = [policy.preferred_container_cpu]

    best: tuple[float, float, Configuration] | None = None
    for dim in dims:
        templates = [scale_template(t, dim, models) for t in base]
        config = _build_configuration(dag, models, adjusted, templates, policy)
        cost = total_allocated_cpu(config)
        key = (cost, config.container_cpu)
        if best is None or key < (best[0], best[1]):
            best = (cost, config.container_cpu, config)
    assert best is not None
    return best[2]


@dataclass
class VerifyResult:
    ok: bool
    predicted: float
    gap: float
    bottlenecks: list[Bottleneck] = field(default_factory=list)


def verify_allocation(
    dag: LogicalDag,
    models: dict[str, NodeModel],
    config: Configuration,
    target_rate: float,
) -> VerifyResult:
    """Predict the configuration's rate and compare against the target."""
    prediction = predict_rate(dag, config, models)
    ok = prediction.max_rate >= target_rate * (1 - 1e-9)
    return VerifyResult(
        ok=ok,
        predicted=prediction.max_rate,
        gap=max(0.0, target_rate - prediction.max_rate),
        bottlenecks=prediction.bottlenecks,
    )


def total_allocated_cpu(config: Configuration) -> float:
    return config.containers * config.container_cpu


def optimal_line_cpu(
    dag: LogicalDag, models: dict[str, NodeModel], target_rate: float
) -> float:
    """CPU needed by an idealized single unconstrained container.

    All instances share one container (all traffic local, each tuple routed
    once) and the router is not capacity-limited; per-node instance counts
    are the minimal ones. This is the efficiency reference line allocations
    are judged against.
    """
    rates = node_input_rates(dag, models, target_rate)
    adjacency = dag.adjacency()

    def min_instances(node: str) -> int:
        peak = models[node].peak_rate()
        if not math.isfinite(peak):
            return 1
        return max(1, math.ceil(rates[node] / peak - 1e-9))

    total = 0.0
    flux = 0.0
    for node in dag.node_names():
        model = models[node]
        rate = rates[node]
        total += model.cpu.slope * rate + min_instances(node) * model.cpu.intercept
        for e in adjacency[node]:
            out_rate = rate * model.gamma * e.weight
            # replication delivers one copy per consumer instance
            copies = min_instances(e.dst) if e.grouping == "all" else 1
            flux += out_rate * copies
    sm = models[STREAM_MANAGER]
    total += sm.cpu.slope * flux + sm.cpu.intercept
    return total
