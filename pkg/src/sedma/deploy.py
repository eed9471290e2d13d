"""Agent placement over a simulated cluster, recompilation triggers, manifests.

Placement minimizes total communication cost plus a weighted memory term:
an edge (i, j) with data volume v costs v * network_cost(node_i, node_j),
where network cost is zero on the same node and latency / bandwidth across
nodes; the memory term charges each agent its requirement plus the volume
it pulls in from remote dependencies. The optimizer is greedy construction
(heaviest communicators first) refined by relocate/swap local search, which
is exact on small instances and never worse than the greedy start.

Recompilation fires when measured performance falls below a fraction theta
of the expectation, or utilization rises above rho. Applying a placement is
expressed through declarative manifests so regeneration is byte-stable.
"""

from __future__ import annotations

import graphlib
import itertools
from dataclasses import dataclass, field

from .p2p import NetworkModel

MANIFEST_FORMAT_TAG = "sedma-manifest/1"
MEM_LIMIT_FACTOR = 1.2
DEFAULT_RECONFIG_DELAY_S = 2.0


class PlacementInfeasibleError(ValueError):
    """No capacity-respecting assignment exists for some agent."""


@dataclass(frozen=True)
class AgentSpec:
    agent: str
    mem_req_gb: float


@dataclass
class AgentGraph:
    """Workflow DAG: agents with memory needs, dependency edges with volumes.

    An edge (i, j) means i depends on j and expects volume_gb[(i, j)]
    gigabytes from it.
    """

    agents: list[AgentSpec]
    volumes: dict[tuple[str, str], float]

    def __post_init__(self):
        names = [a.agent for a in self.agents]
        if len(set(names)) != len(names):
            raise ValueError("agent names must be unique")
        known = set(names)
        for (i, j), vol in self.volumes.items():
            if i not in known or j not in known:
                raise ValueError(f"edge ({i}, {j}) references an unknown agent")
            if vol < 0:
                raise ValueError("data volumes must be nonnegative")
        deps_map: dict[str, set[str]] = {name: set() for name in names}
        for (i, j) in self.volumes:
            deps_map[i].add(j)
        try:
            tuple(graphlib.TopologicalSorter(deps_map).static_order())
        except graphlib.CycleError as exc:
            raise ValueError(f"dependency graph has a cycle: {exc}") from exc

    def names(self) -> list[str]:
        return [a.agent for a in self.agents]

    def mem_req(self, agent: str) -> float:
        for a in self.agents:
            if a.agent == agent:
                return a.mem_req_gb
        raise KeyError(agent)

    def deps_of(self, agent: str) -> list[tuple[str, float]]:
        return [(j, v) for (i, j), v in self.volumes.items() if i == agent]

    def incident_volume(self, agent: str) -> float:
        return sum(v for (i, j), v in self.volumes.items() if agent in (i, j))

    def incident_edges(self, agent: str) -> list[tuple[str, str, float]]:
        return [(i, j, v) for (i, j), v in self.volumes.items() if agent in (i, j)]


@dataclass(frozen=True)
class NodeSpec:
    node: int
    mem_capacity_gb: float
    cpu_cores: int = 4

    def __post_init__(self):
        if self.mem_capacity_gb <= 0 or self.cpu_cores <= 0:
            raise ValueError("node capacities must be positive")


@dataclass
class ClusterState:
    """Current agent assignment over the simulated nodes."""

    nodes: dict[int, NodeSpec]
    net: NetworkModel
    assignments: dict[str, int] = field(default_factory=dict)
    agent_mem: dict[str, float] = field(default_factory=dict)
    cores_per_agent: float = 1.0

    def mem_used(self, node: int) -> float:
        return sum(self.agent_mem[a] for a, nd in self.assignments.items() if nd == node)

    def agents_on(self, node: int) -> list[str]:
        return sorted(a for a, nd in self.assignments.items() if nd == node)

    def utilization(self) -> float:
        """Mean of the average memory fraction and average CPU fraction."""
        if not self.nodes:
            return 0.0
        mem_fracs = []
        cpu_fracs = []
        for nid, spec in self.nodes.items():
            mem_fracs.append(min(1.0, self.mem_used(nid) / spec.mem_capacity_gb))
            busy = len(self.agents_on(nid)) * self.cores_per_agent
            cpu_fracs.append(min(1.0, busy / spec.cpu_cores))
        mem_avg = sum(mem_fracs) / len(mem_fracs)
        cpu_avg = sum(cpu_fracs) / len(cpu_fracs)
        return 0.5 * (mem_avg + cpu_avg)


@dataclass
class Placement:
    assign: dict[str, int]
    total_cost: float
    lambda_mem: float


@dataclass(frozen=True)
class TriggerConfig:
    theta: float = 0.8
    rho: float = 0.85

    def __post_init__(self):
        if not (0.0 < self.theta < 1.0):
            raise ValueError(f"theta {self.theta} outside (0, 1)")
        if not (0.0 < self.rho < 1.0):
            raise ValueError(f"rho {self.rho} outside (0, 1)")


def network_cost(net: NetworkModel, a: int, b: int) -> float:
    """Zero on the same node, else latency_ms / bandwidth_gbps."""
    if int(a) == int(b):
        net._pair(a, b)  # still reject unknown nodes
        return 0.0
    return net.latency(a, b) / net.bandwidth(a, b)


def comm_cost(g: AgentGraph, assign: dict[str, int], net: NetworkModel, agent: str) -> float:
    """Volume-weighted network cost from an agent to all its dependencies."""
    total = 0.0
    for dep, vol in g.deps_of(agent):
        if dep not in assign or agent not in assign:
            raise ValueError(f"agent {agent} or dependency {dep} is not placed")
        total += vol * network_cost(net, assign[agent], assign[dep])
    return total


def _memory_overhead(g: AgentGraph, assign: dict[str, int], agent: str) -> float:
    remote = sum(
        vol for dep, vol in g.deps_of(agent) if assign[dep] != assign[agent]
    )
    return g.mem_req(agent) + remote


def _check_capacity(g: AgentGraph, assign: dict[str, int], cluster: ClusterState) -> None:
    used: dict[int, float] = {}
    for agent, node in assign.items():
        if node not in cluster.nodes:
            raise ValueError(f"placement targets unknown node {node}")
        used[node] = used.get(node, 0.0) + g.mem_req(agent)
    for node, total in sorted(used.items()):
        cap = cluster.nodes[node].mem_capacity_gb
        if total > cap + 1e-9:
            raise PlacementInfeasibleError(
                f"node {node} capacity violated: {total} GB required > {cap} GB available"
            )


def placement_cost(
    g: AgentGraph, assign: dict[str, int], net: NetworkModel, lambda_mem: float
) -> float:
    """Sum of per-agent communication costs plus weighted memory overheads."""
    missing = [a for a in g.names() if a not in assign]
    if missing:
        raise ValueError(f"placement incomplete, missing {missing}")
    total = 0.0
    for agent in g.names():
        total += comm_cost(g, assign, net, agent)
        total += lambda_mem * _memory_overhead(g, assign, agent)
    return total


def _edge_term(
    net: NetworkModel, lambda_mem: float, vol: float, node_i: int, node_j: int
) -> float:
    # comm term plus the consumer-side remote-input surcharge for one edge.
    if node_i == node_j:
        return 0.0
    return vol * network_cost(net, node_i, node_j) + lambda_mem * vol


def _local_search(
    g: AgentGraph,
    cluster: ClusterState,
    assign: dict[str, int],
    lambda_mem: float,
    max_passes: int = 200,
) -> dict[str, int]:
    net = cluster.net
    agents = g.names()
    node_ids = sorted(cluster.nodes)
    used = {nid: 0.0 for nid in node_ids}
    for a, nd in assign.items():
        used[nd] += g.mem_req(a)

    def edges_delta(moves: dict[str, int]) -> float:
        touched: set[tuple[str, str]] = set()
        for a in moves:
            for i, j, _v in g.incident_edges(a):
                touched.add((i, j))
        delta = 0.0
        for (i, j) in touched:
            vol = g.volumes[(i, j)]
            old = _edge_term(net, lambda_mem, vol, assign[i], assign[j])
            new = _edge_term(
                net, lambda_mem, vol, moves.get(i, assign[i]), moves.get(j, assign[j])
            )
            delta += new - old
        return delta

    for _ in range(max_passes):
        best_delta = -1e-12
        best_moves = None
        # Single relocations.
        for a in agents:
            cur = assign[a]
            for nd in node_ids:
                if nd == cur:
                    continue
                if used[nd] + g.mem_req(a) > cluster.nodes[nd].mem_capacity_gb + 1e-9:
                    continue
                delta = edges_delta({a: nd})
                if delta < best_delta:
                    best_delta = delta
                    best_moves = {a: nd}
        # Pairwise swaps and joint pair relocations; single moves cannot
        # escape split placements whose repair needs two agents in flight.
        for ai in range(len(agents)):
            for bi in range(ai + 1, len(agents)):
                a, b = agents[ai], agents[bi]
                na, nb = assign[a], assign[b]
                if na != nb:
                    if (
                        used[na] - g.mem_req(a) + g.mem_req(b)
                        <= cluster.nodes[na].mem_capacity_gb + 1e-9
                        and used[nb] - g.mem_req(b) + g.mem_req(a)
                        <= cluster.nodes[nb].mem_capacity_gb + 1e-9
                    ):
                        delta = edges_delta({a: nb, b: na})
                        if delta < best_delta:
                            best_delta = delta
                            best_moves = {a: nb, b: na}
                for nd in node_ids:
                    add = (g.mem_req(a) if na != nd else 0.0) + (
                        g.mem_req(b) if nb != nd else 0.0
                    )
                    if add == 0.0:
                        continue
                    if used[nd] + add > cluster.nodes[nd].mem_capacity_gb + 1e-9:
                        continue
                    moves = {}
                    if na != nd:
                        moves[a] = nd
                    if nb != nd:
                        moves[b] = nd
                    delta = edges_delta(moves)
                    if delta < best_delta:
                        best_delta = delta
                        best_moves = moves
        if best_moves is None:
            break
        for a, nd in best_moves.items():
            used[assign[a]] -= g.mem_req(a)
            used[nd] += g.mem_req(a)
            assign[a] = nd
    return assign


def _greedy_construct(
    g: AgentGraph, cluster: ClusterState, lambda_mem: float
) -> dict[str, int]:
    net = cluster.net
    node_ids = sorted(cluster.nodes)
    order = sorted(g.names(), key=lambda a: (-g.incident_volume(a), a))
    assign: dict[str, int] = {}
    used = {nid: 0.0 for nid in node_ids}
    for agent in order:
        best_node = None
        best_cost = None
        for nd in node_ids:
            if used[nd] + g.mem_req(agent) > cluster.nodes[nd].mem_capacity_gb + 1e-9:
                continue
            cost = lambda_mem * g.mem_req(agent)
            for i, j, vol in g.incident_edges(agent):
                other = j if i == agent else i
                if other in assign:
                    ni = nd if i == agent else assign[i]
                    nj = nd if j == agent else assign[j]
                    cost += _edge_term(net, lambda_mem, vol, ni, nj)
            if best_cost is None or cost < best_cost:
                best_cost = cost
                best_node = nd
        if best_node is None:
            deficits = {
                nd: used[nd] + g.mem_req(agent) - cluster.nodes[nd].mem_capacity_gb
                for nd in node_ids
            }
            tightest = min(deficits, key=lambda nd: (deficits[nd], nd))
            raise PlacementInfeasibleError(
                f"agent {agent} ({g.mem_req(agent)} GB) fits no node; node {tightest} "
                f"short by {deficits[tightest]:.3g} GB"
            )
        assign[agent] = best_node
        used[best_node] += g.mem_req(agent)
    return assign


def _feasible(g: AgentGraph, assign: dict[str, int], cluster: ClusterState) -> bool:
    used: dict[int, float] = {}
    for a, nd in assign.items():
        used[nd] = used.get(nd, 0.0) + g.mem_req(a)
    return all(
        used[nd] <= cluster.nodes[nd].mem_capacity_gb + 1e-9 for nd in used
    )


def _greedy_complete(
    g: AgentGraph, cluster: ClusterState, lambda_mem: float, fixed: dict[str, int]
) -> dict[str, int] | None:
    net = cluster.net
    node_ids = sorted(cluster.nodes)
    assign = dict(fixed)
    used = {nid: 0.0 for nid in node_ids}
    for a, nd in assign.items():
        used[nd] += g.mem_req(a)
        if used[nd] > cluster.nodes[nd].mem_capacity_gb + 1e-9:
            return None
    order = sorted(
        (a for a in g.names() if a not in assign),
        key=lambda a: (-g.incident_volume(a), a),
    )
    for agent in order:
        best_node, best_cost = None, None
        for nd in node_ids:
            if used[nd] + g.mem_req(agent) > cluster.nodes[nd].mem_capacity_gb + 1e-9:
                continue
            cost = lambda_mem * g.mem_req(agent)
            for i, j, vol in g.incident_edges(agent):
                other = j if i == agent else i
                if other in assign:
                    ni = nd if i == agent else assign[i]
                    nj = nd if j == agent else assign[j]
                    cost += _edge_term(net, lambda_mem, vol, ni, nj)
            if best_cost is None or cost < best_cost:
                best_cost, best_node = cost, nd
        if best_node is None:
            return None
        assign[agent] = best_node
        used[best_node] += g.mem_req(agent)
    return assign


def optimize_placement(
    g: AgentGraph,
    cluster: ClusterState,
    hint=None,
    lambda_mem: float = 1.0,
) -> Placement:
    """Multi-start greedy plus local search; never worse than plain greedy.

    Relocate/swap/pair moves cannot escape every split placement, so the
    search also restarts from each feasible all-on-one-node placement and
    from the remembered hint. On small instances it additionally enumerates
    node choices for the heaviest communicators and applies one-level
    lookahead kicks (one forced move, then re-descent) until no kick
    improves the incumbent.
    """
    if lambda_mem < 0:
        raise ValueError("lambda_mem must be nonnegative")
    agents = g.names()
    node_ids = sorted(cluster.nodes)
    small = len(agents) <= 8 and len(node_ids) <= 4

    starts: list[dict[str, int]] = [_greedy_construct(g, cluster, lambda_mem)]
    total_mem = sum(a.mem_req_gb for a in g.agents)
    for nid in node_ids:
        if total_mem <= cluster.nodes[nid].mem_capacity_gb + 1e-9:
            starts.append({a: nid for a in agents})
    if hint is not None and getattr(hint, "kind", None) == "placement":
        seeded = {str(a): int(nd) for a, nd in dict(hint.payload).items()}
        if set(seeded) == set(agents) and _feasible(g, seeded, cluster):
            starts.append(seeded)
    if small:
        heavy = sorted(agents, key=lambda a: (-g.incident_volume(a), a))[:3]
        for combo in itertools.product(node_ids, repeat=len(heavy)):
            completed = _greedy_complete(g, cluster, lambda_mem, dict(zip(heavy, combo)))
            if completed is not None:
                starts.append(completed)

    assign, best_cost = None, None
    for start in starts:
        candidate = _local_search(g, cluster, dict(start), lambda_mem)
        cost = placement_cost(g, candidate, cluster.net, lambda_mem)
        if best_cost is None or cost < best_cost - 1e-12:
            assign, best_cost = candidate, cost

    if small:
        improved = True
        while improved:
            improved = False
            for agent in agents:
                for nd in node_ids:
                    if nd == assign[agent]:
                        continue
                    kicked = dict(assign)
                    kicked[agent] = nd
                    if not _feasible(g, kicked, cluster):
                        continue
                    kicked = _local_search(g, cluster, kicked, lambda_mem)
                    cost = placement_cost(g, kicked, cluster.net, lambda_mem)
                    if cost < best_cost - 1e-12:
                        assign, best_cost = kicked, cost
                        improved = True
    return Placement(assign=dict(assign), total_cost=best_cost, lambda_mem=lambda_mem)


def should_recompile(
    current_perf_ops: float,
    expected_perf_ops: float,
    utilization: float,
    cfg: TriggerConfig,
) -> bool:
    """(current / expected < theta) or (utilization > rho)."""
    if expected_perf_ops <= 0:
        raise ValueError("expected performance must be positive")
    if not (0.0 <= utilization <= 1.0):
        raise ValueError(f"utilization {utilization} out of [0, 1]")
    return (current_perf_ops / expected_perf_ops < cfg.theta) or (utilization > cfg.rho)


# -- manifests -------------------------------------------------------------------


def _fmt_real(x: float) -> str:
    return format(float(x), ".17g")


def generate_manifest(placement: Placement, g: AgentGraph) -> str:
    """One declarative document per agent, byte-stable for equal placements."""
    missing = [a for a in g.names() if a not in placement.assign]
    if missing:
        raise ValueError(f"placement incomplete, missing {missing}")
    parts = [MANIFEST_FORMAT_TAG]
    for agent in sorted(g.names()):
        node = placement.assign[agent]
        deps = sorted(g.deps_of(agent))
        dep_text = ",".join(f"{d}={placement.assign[d]}" for d, _v in deps)
        parts.append("---")
        parts.append(f"agent: {agent}")
        parts.append(f"node: {node}")
        parts.append(f"mem_limit_gb: {_fmt_real(MEM_LIMIT_FACTOR * g.mem_req(agent))}")
        parts.append(f"deps: {dep_text}" if dep_text else "deps:")
    return "\n".join(parts) + "\n"


def parse_manifest(text: str) -> dict[str, dict]:
    """Recover {agent: {node, mem_limit_gb, deps}} from manifest text."""
    lines = text.strip().split("\n")
    if not lines or lines[0] != MANIFEST_FORMAT_TAG:
        raise ValueError(f"bad manifest header, expected {MANIFEST_FORMAT_TAG!r}")
    docs: dict[str, dict] = {}
    current: dict = {}

    def flush():
        if current:
            agent = current.pop("agent")
            docs[agent] = dict(current)
            current.clear()

    for line in lines[1:]:
        if line == "---":
            flush()
            continue
        key, _, value = line.partition(":")
        value = value.strip()
        if key == "agent":
            current["agent"] = value
        elif key == "node":
            current["node"] = int(value)
        elif key == "mem_limit_gb":
            current["mem_limit_gb"] = float(value)
        elif key == "deps":
            deps = {}
            if value:
                for item in value.split(","):
                    d, nd = item.split("=", 1)
                    deps[d] = int(nd)
            current["deps"] = deps
        else:
            raise ValueError(f"unknown manifest key {key!r}")
    flush()
    return docs


@dataclass
class ApplyOutcome:
    moved: list[str]
    delay_s: float


def apply_manifest(
    cluster: ClusterState,
    manifest: str,
    g: AgentGraph,
    reconfig_delay_s: float = DEFAULT_RECONFIG_DELAY_S,
) -> ApplyOutcome:
    """Move agents to their manifest bindings; abort untouched on violations.

    The simulated reconfiguration delay is reconfig_delay_s per moved agent.
    """
    docs = parse_manifest(manifest)
    target = {agent: doc["node"] for agent, doc in docs.items()}
    for agent, node in target.items():
        if node not in cluster.nodes:
            raise ValueError(f"manifest binds {agent} to unknown node {node}")
    _check_capacity(g, target, cluster)
    moved = sorted(a for a, nd in target.items() if cluster.assignments.get(a) != nd)
    cluster.assignments.update(target)
    for agent in target:
        cluster.agent_mem[agent] = g.mem_req(agent)
    return ApplyOutcome(moved=moved, delay_s=reconfig_delay_s * len(moved))
