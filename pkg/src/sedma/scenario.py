"""Scenario and topology files for the batch simulator.

A scenario is one self-contained JSON document describing the workload
matrix, device and noise constants, the peer topology (by file path or
inline), selection weights, the agent workflow graph, trigger thresholds,
and ablation switches. Topology files are line-oriented:

    sedma-topology/1
    # node <id> <availability> <mem_gb> [cpu_cores]
    node 101 0.9 8 4
    # link <a> <b> <latency_ms> <bandwidth_gbps> <drop_prob>
    link 101 202 20 1.0 0.01

Links not listed default to a slow fallback (500 ms, 0.1 Gbps, no drops).
The only environment override honored anywhere is SEDMA_SEED.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .crossbar import NoiseModel
from .deploy import AgentGraph, AgentSpec, ClusterState, NodeSpec, TriggerConfig
from .p2p import NetworkModel, PeerProfile, SelectionWeights
from .partition import DeviceSpec

TOPOLOGY_FORMAT_TAG = "sedma-topology/1"
DEFAULT_LINK = (500.0, 0.1, 0.0)

SUPPORTED_ABLATIONS = (
    "no_ltm",
    "no_stm",
    "no_adaptive_peers",
    "no_recompile",
    "fixed_lambda",
    "dht_only_routing",
    "random_peers",
)


@dataclass
class MatrixSpec:
    rows: int = 64
    cols: int = 64
    distribution: str = "gaussian"  # gaussian | uniform | smooth
    nonzero_fraction: float = 1.0
    scale: float = 1.0
    regenerate: str = "fixed"  # fixed | per_round

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("matrix dimensions must be positive")
        if self.distribution not in ("gaussian", "uniform", "smooth"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if not (0.0 <= self.nonzero_fraction <= 1.0):
            raise ValueError("nonzero_fraction must lie in [0, 1]")
        if self.regenerate not in ("fixed", "per_round"):
            raise ValueError(f"unknown regenerate mode {self.regenerate!r}")

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        m, n = self.rows, self.cols
        if self.distribution == "gaussian":
            A = rng.standard_normal((m, n))
        elif self.distribution == "uniform":
            A = rng.uniform(-1.0, 1.0, size=(m, n))
        else:
            # Smooth row profile: rank-one structure plus a small rough part,
            # so the exact product varies slowly along the output index.
            t = np.linspace(0.0, 2.0 * np.pi, m)
            u = 1.0 + 0.5 * np.sin(t) + 0.25 * np.cos(3.0 * t)
            v = rng.standard_normal(n)
            A = np.outer(u, v) + 0.01 * rng.standard_normal((m, n))
        if self.nonzero_fraction < 1.0:
            mask = rng.random((m, n)) < self.nonzero_fraction
            A = A * mask
        x = rng.standard_normal(n)
        return self.scale * A, x


@dataclass
class TopologyNode:
    node: int
    availability: float
    mem_gb: float
    cpu_cores: int = 4


@dataclass
class Topology:
    nodes: list[TopologyNode]
    links: dict[tuple[int, int], tuple[float, float, float]]

    def ids(self) -> list[int]:
        return [n.node for n in self.nodes]


def parse_topology(text: str) -> Topology:
    lines = text.strip().split("\n")
    if not lines or lines[0].strip() != TOPOLOGY_FORMAT_TAG:
        raise ValueError(f"bad topology header, expected {TOPOLOGY_FORMAT_TAG!r}")
    nodes: list[TopologyNode] = []
    links: dict[tuple[int, int], tuple[float, float, float]] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "node":
            if len(parts) not in (4, 5):
                raise ValueError(f"line {lineno}: node takes id availability mem_gb [cores]")
            cores = int(parts[4]) if len(parts) == 5 else 4
            nodes.append(TopologyNode(int(parts[1]), float(parts[2]), float(parts[3]), cores))
        elif parts[0] == "link":
            if len(parts) != 6:
                raise ValueError(
                    f"line {lineno}: link takes a b latency_ms bandwidth_gbps drop_prob"
                )
            a, b = int(parts[1]), int(parts[2])
            key = (min(a, b), max(a, b))
            links[key] = (float(parts[3]), float(parts[4]), float(parts[5]))
        else:
            raise ValueError(f"line {lineno}: unknown directive {parts[0]!r}")
    if not nodes:
        raise ValueError("topology declares no nodes")
    ids = [n.node for n in nodes]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate node ids in topology")
    return Topology(nodes=nodes, links=links)


def load_topology(path) -> Topology:
    return parse_topology(Path(path).read_text(encoding="utf-8"))


def build_network(topo: Topology, seed: int = 0) -> NetworkModel:
    ids = topo.ids()
    n = len(ids)
    lat = np.zeros((n, n))
    bw = np.full((n, n), np.inf)
    drp = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            key = (min(ids[i], ids[j]), max(ids[i], ids[j]))
            latency, bandwidth, drop = topo.links.get(key, DEFAULT_LINK)
            lat[i, j] = lat[j, i] = latency
            bw[i, j] = bw[j, i] = bandwidth
            drp[i, j] = drp[j, i] = drop
    return NetworkModel(ids, lat, bw, drp, seed=seed)


def build_profiles(topo: Topology) -> dict[int, PeerProfile]:
    profiles = {}
    for node in topo.nodes:
        latencies = []
        for other in topo.nodes:
            if other.node == node.node:
                continue
            key = (min(node.node, other.node), max(node.node, other.node))
            latencies.append(topo.links.get(key, DEFAULT_LINK)[0])
        profiles[node.node] = PeerProfile(
            node=node.node,
            availability=node.availability,
            latency_ms=min(latencies) if latencies else 1.0,
            memory_free_gb=node.mem_gb,
        )
    return profiles


def build_cluster(topo: Topology, net: NetworkModel) -> ClusterState:
    nodes = {
        n.node: NodeSpec(node=n.node, mem_capacity_gb=n.mem_gb, cpu_cores=n.cpu_cores)
        for n in topo.nodes
    }
    return ClusterState(nodes=nodes, net=net)


@dataclass
class ScenarioConfig:
    """Validated scenario document driving one simulator run."""

    name: str
    seed: int
    rounds: int
    matrix: MatrixSpec
    device: DeviceSpec
    noise: NoiseModel
    topology: Topology
    trigger: TriggerConfig
    agents: list[AgentSpec]
    volumes: dict[tuple[str, str], float]
    weights_init: tuple[float, float, float] = (1.0, 1.0, 1.0)
    eta: float = 0.01
    top_k: int = 2
    normalize_scores: bool = False
    probe_count: int = 3
    write_tol: float = 0.01
    write_max_iters: int = 10
    partition_lambda_mem: float = 1.0
    placement_lambda_mem: float = 1.0
    cache_capacity_mb: float = 64.0
    transfer_overload_coeff: float = 0.0
    reconfig_delay_s: float = 2.0
    ablation: frozenset = frozenset()

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be positive")
        unknown = set(self.ablation) - set(SUPPORTED_ABLATIONS)
        if unknown:
            raise ValueError(
                f"unknown ablation flags {sorted(unknown)}; supported: {list(SUPPORTED_ABLATIONS)}"
            )
        if self.top_k < 1:
            raise ValueError("top_k must be positive")

    def agent_graph(self) -> AgentGraph:
        return AgentGraph(agents=list(self.agents), volumes=dict(self.volumes))

    def selection_weights(self) -> SelectionWeights:
        w1, w2, w3 = self.weights_init
        return SelectionWeights(w1=w1, w2=w2, w3=w3, eta=self.eta)

    def with_ablation(self, flags) -> "ScenarioConfig":
        merged = frozenset(self.ablation) | frozenset(flags)
        return ScenarioConfig(
            **{**self.__dict__, "ablation": merged}
        )

    def canonical_dict(self) -> dict:
        d = dict(self.__dict__)
        d["matrix"] = self.matrix.__dict__
        d["device"] = self.device.__dict__
        d["noise"] = self.noise.__dict__
        d["trigger"] = self.trigger.__dict__
        d["topology"] = {
            "nodes": [n.__dict__ for n in self.topology.nodes],
            "links": {f"{a}-{b}": list(v) for (a, b), v in sorted(self.topology.links.items())},
        }
        d["agents"] = [a.__dict__ for a in self.agents]
        d["volumes"] = {f"{i}->{j}": v for (i, j), v in sorted(self.volumes.items())}
        d["ablation"] = sorted(self.ablation)
        return d


def scenario_from_dict(doc: dict, base_dir: Path | None = None) -> ScenarioConfig:
    doc = dict(doc)
    seed = int(os.environ.get("SEDMA_SEED", doc.get("seed", 0)))

    matrix = MatrixSpec(**doc.get("matrix", {}))
    device = DeviceSpec(**doc.get("device", {}))
    noise_doc = dict(doc.get("noise", {}))
    noise_doc.setdefault("seed", seed)
    noise = NoiseModel(**noise_doc)
    trigger = TriggerConfig(**doc.get("trigger", {}))

    if "topology_file" in doc:
        path = Path(doc["topology_file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise FileNotFoundError(f"topology file {path} does not exist")
        topology = load_topology(path)
    elif "topology" in doc:
        topology = parse_topology(doc["topology"])
    else:
        raise ValueError("scenario needs a topology_file path or an inline topology")

    agents = [AgentSpec(str(a["agent"]), float(a["mem_req_gb"])) for a in doc.get("agents", [])]
    volumes = {
        (str(e["src"]), str(e["dst"])): float(e["volume_gb"]) for e in doc.get("deps", [])
    }
    selection = doc.get("selection", {})
    weights_init = tuple(float(v) for v in selection.get("weights", (1.0, 1.0, 1.0)))
    if len(weights_init) != 3:
        raise ValueError("selection.weights must have three entries")

    return ScenarioConfig(
        name=str(doc.get("name", "scenario")),
        seed=seed,
        rounds=int(doc.get("rounds", 1)),
        matrix=matrix,
        device=device,
        noise=noise,
        topology=topology,
        trigger=trigger,
        agents=agents,
        volumes=volumes,
        weights_init=weights_init,
        eta=float(selection.get("eta", 0.01)),
        top_k=int(selection.get("k", 2)),
        normalize_scores=bool(selection.get("normalize", False)),
        probe_count=int(doc.get("probes", {}).get("count", 3)),
        write_tol=float(doc.get("write", {}).get("tol", 0.01)),
        write_max_iters=int(doc.get("write", {}).get("max_iters", 10)),
        partition_lambda_mem=float(doc.get("partition_lambda_mem", 1.0)),
        placement_lambda_mem=float(doc.get("placement_lambda_mem", 1.0)),
        cache_capacity_mb=float(doc.get("cache_capacity_mb", 64.0)),
        transfer_overload_coeff=float(doc.get("transfer_overload_coeff", 0.0)),
        reconfig_delay_s=float(doc.get("reconfig_delay_s", 2.0)),
        ablation=frozenset(doc.get("ablation", [])),
    )


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return scenario_from_dict(doc, base_dir=path.parent)


# -- canned scenarios ---------------------------------------------------------


def demo_topology_text() -> str:
    return "\n".join(
        [
            TOPOLOGY_FORMAT_TAG,
            "# id availability mem_gb cores",
            "node 1001 0.90 8 4",
            "node 2002 0.85 8 4",
            "node 3003 0.80 6 4",
            "node 4004 0.75 6 4",
            "link 1001 2002 20 1.0 0.01",
            "link 1001 3003 40 1.0 0.01",
            "link 1001 4004 60 0.5 0.01",
            "link 2002 3003 30 1.0 0.01",
            "link 2002 4004 50 0.5 0.01",
            "link 3003 4004 25 1.0 0.01",
        ]
    ) + "\n"


def demo_scenario_doc() -> dict:
    return {
        "name": "demo",
        "seed": 7,
        "rounds": 5,
        "matrix": {"rows": 64, "cols": 64, "distribution": "gaussian"},
        "device": {"max_dim": 64},
        "noise": {"write_sigma": 0.02, "read_sigma": 0.005},
        "trigger": {"theta": 0.8, "rho": 0.85},
        "selection": {"weights": [1.0, 1.0, 1.0], "eta": 0.01, "k": 2},
        "agents": [
            {"agent": "ingest", "mem_req_gb": 2.0},
            {"agent": "compute", "mem_req_gb": 3.0},
            {"agent": "aggregate", "mem_req_gb": 2.0},
            {"agent": "serve", "mem_req_gb": 1.0},
        ],
        "deps": [
            {"src": "compute", "dst": "ingest", "volume_gb": 1.5},
            {"src": "aggregate", "dst": "compute", "volume_gb": 1.0},
            {"src": "serve", "dst": "aggregate", "volume_gb": 0.25},
        ],
        "cache_capacity_mb": 64.0,
    }


def stress_topology_text() -> str:
    """One trap peer: overloaded (low availability) but close and memory-rich."""
    return "\n".join(
        [
            TOPOLOGY_FORMAT_TAG,
            "# trap node 909: 5% idle cores, 2 ms links, 32 GB free",
            "node 101 0.90 8 4",
            "node 909 0.05 32 4",
            "node 303 0.85 6 4",
            "node 404 0.80 6 4",
            "link 101 909 2 10.0 0.02",
            "link 101 303 40 1.0 0.02",
            "link 101 404 60 1.0 0.02",
            "link 909 303 2 10.0 0.02",
            "link 909 404 2 10.0 0.02",
            "link 303 404 30 1.0 0.02",
        ]
    ) + "\n"


def stress_scenario_doc() -> dict:
    """Ablation stress case: smooth signal (denoising matters), a trap peer
    (adaptive selection matters), and a crowded cluster (recompilation
    matters)."""
    agents = [{"agent": f"a{i:02d}", "mem_req_gb": 1.5} for i in range(16)]
    deps = [
        {"src": f"a{i:02d}", "dst": f"a{i - 1:02d}", "volume_gb": 2.0}
        for i in range(1, 16)
    ]
    return {
        "name": "stress",
        "seed": 11,
        "rounds": 40,
        "matrix": {
            "rows": 64,
            "cols": 64,
            "distribution": "smooth",
            "regenerate": "per_round",
        },
        "device": {"max_dim": 64},
        "noise": {"write_sigma": 0.02, "read_sigma": 0.02},
        "trigger": {"theta": 0.8, "rho": 0.85},
        "selection": {"weights": [1.0, 1.0, 1.0], "eta": 0.1, "k": 2, "normalize": True},
        "agents": agents,
        "deps": deps,
        "transfer_overload_coeff": 0.95,
        "cache_capacity_mb": 64.0,
        "placement_lambda_mem": 0.5,
    }


def write_demo_files(directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "demo.topology").write_text(demo_topology_text(), encoding="utf-8")
    doc = demo_scenario_doc()
    doc["topology_file"] = "demo.topology"
    path = directory / "demo.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_stress_files(directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "stress.topology").write_text(stress_topology_text(), encoding="utf-8")
    doc = stress_scenario_doc()
    doc["topology_file"] = "stress.topology"
    path = directory / "stress.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
