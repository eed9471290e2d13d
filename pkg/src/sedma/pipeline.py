"""End-to-end batch pipeline: the three-stage adaptive loop plus benches.

Each round runs Stage 1 (classify, partition with a remembered hint,
program, three-product correct, denoise with the blended weight, concat),
Stage 2 (content id, DHT provider lookup, scored top-K selection, cached
transfers, weight adaptation), and Stage 3 (metrics, trigger check,
re-placement, manifest apply). A single logical clock drives all simulated
timings, so identical scenarios and seeds reproduce byte-identical outputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import crossbar, deploy, dht, p2p, partition
from .memory import DEFAULT_LAMBDA, LtmRecord, MemoryStore, Observation
from .scenario import (
    SUPPORTED_ABLATIONS,
    ScenarioConfig,
    build_cluster,
    build_network,
    build_profiles,
)

METRICS_FORMAT_TAG = "sedma-metrics/1"
SUMMARY_FORMAT_TAG = "sedma-summary/1"
EVENTS_FORMAT_TAG = "sedma-events/1"

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def gen_cid(payload: bytes) -> int:
    """FNV-1a 64-bit content id; stable, non-cryptographic."""
    h = FNV64_OFFSET
    for b in payload:
        h ^= b
        h = (h * FNV64_PRIME) & _U64
    return h


@dataclass
class SimClock:
    t_ms: float = 0.0

    def advance(self, ms: float) -> None:
        if ms < 0:
            raise ValueError("time cannot run backwards")
        self.t_ms += ms


class EventLog:
    """Ordered JSON-lines event stream with a nondecreasing clock."""

    def __init__(self, clock: SimClock):
        self.clock = clock
        self.events: list[dict] = []

    def emit(self, kind: str, **fields) -> None:
        if self.events and self.clock.t_ms < self.events[-1]["t_ms"]:
            raise RuntimeError("event clock went backwards")
        event = {"t_ms": self.clock.t_ms, "kind": kind}
        event.update(fields)
        self.events.append(event)

@dataclass
class MetricsRecord:
    run_id: str
    rounds: int
    stage1_ms: float = 0.0
    stage2_ms: float = 0.0
    stage3_ms: float = 0.0
    residual_norm_mean: float = 0.0
    residual_norm_last: float = 0.0
    raw_residual_norm_mean: float = 0.0
    hops_mean: float = 0.0
    transfer_attempts: int = 0
    transfer_successes: int = 0
    transfer_success_rate: float = 0.0
    cache_hit_rate: float = 0.0
    bandwidth_gb: float = 0.0
    placement_cost: float = 0.0
    recompile_count: int = 0
    agent_count: int = 0
    partition_count: int = 0
    lambda_last: float = 0.0
    ltm_size: int = 0
    stm_len: int = 0
    warnings: int = 0

    def to_dict(self) -> dict:
        d = {"format": METRICS_FORMAT_TAG}
        d.update(self.__dict__)
        return d


@dataclass
class RunResult:
    metrics: MetricsRecord
    events: list[dict]
    manifests: list[str] = field(default_factory=list)
    store: MemoryStore | None = None


@dataclass
class Stage1Result:
    y: np.ndarray
    exact: np.ndarray
    plan: partition.PartitionPlan
    lambda_t: float
    residual: float
    raw_residual: float
    workload_key: str


def run_stage1(
    A: np.ndarray,
    x: np.ndarray,
    cfg: ScenarioConfig,
    store: MemoryStore,
    now: float = 0.0,
    probe_rng: np.random.Generator | None = None,
    lambda_override: float | None = None,
) -> Stage1Result:
    """Classify, partition, program, correct, denoise, and reassemble."""
    use_ltm = "no_ltm" not in cfg.ablation
    use_stm = "no_stm" not in cfg.ablation

    wc = partition.classify_workload(A)
    hint = store.get_pattern(f"partition/{wc.key()}", now=now) if use_ltm else None
    plan = partition.optimize_partition(
        A,
        cfg.device,
        hint=hint,
        lambda_mem=cfg.partition_lambda_mem,
        noise=cfg.noise,
        tol=cfg.write_tol,
        max_iters=cfg.write_max_iters,
    )
    tiles = partition.split_matrix(A, x, plan)

    xbars = []
    x_tildes = []
    measured_attempts = 0
    for i, (a_tile, x_tile) in enumerate(tiles):
        xbar = crossbar.program_write_verify(
            a_tile,
            cfg.noise.spawn(i),
            tol=cfg.write_tol,
            max_iters=cfg.write_max_iters,
            max_dim=cfg.device.max_dim,
        )
        x_tilde = xbar.program_vector(x_tile, tol=cfg.write_tol, max_iters=cfg.write_max_iters)
        xbars.append(xbar)
        x_tildes.append(x_tilde)
        measured_attempts += xbar.program_iterations

    if lambda_override is not None:
        lambda_t = lambda_override
    elif "fixed_lambda" in cfg.ablation:
        lambda_t = DEFAULT_LAMBDA
    elif cfg.noise.noiseless:
        # Exact arithmetic: the corrective smoothing stage has nothing to
        # remove, so it is bypassed rather than allowed to distort.
        lambda_t = 0.0
    else:
        lambda_recent = crossbar.estimate_lambda_recent(
            store.stm if use_stm else None,
            xbars[0],
            enabled=use_stm,
            num_probes=cfg.probe_count,
            rng=probe_rng,
            now=now,
        )
        lambda_t = store.blend_lambda(lambda_recent, f"lambda/{wc.key()}")

    partials = []
    raw_partials = []
    for (a_tile, x_tile), xbar, x_tilde in zip(tiles, xbars, x_tildes):
        raw_partials.append(xbar.programmed @ x_tilde)
        p = crossbar.first_order_correct(a_tile, x_tile, xbar, x_tilde)
        partials.append(crossbar.denoise(p, lambda_t, warnings=store.warnings))
    y = partition.concat_results(partials, plan)
    raw = partition.concat_results(raw_partials, plan)

    exact = A @ x
    scale = float(np.linalg.norm(exact)) or 1.0
    residual = float(np.linalg.norm(y - exact)) / scale
    raw_residual = float(np.linalg.norm(raw - exact)) / scale

    if use_ltm:
        expected_cost = plan.est_compute_cost
        measured_cost = measured_attempts * cfg.device.t_prog + 3 * plan.num_tiles * cfg.device.t_read
        score = min(1.0, expected_cost / measured_cost) if measured_cost > 0 else 1.0
        store.put_pattern(
            f"partition/{wc.key()}",
            LtmRecord(key="", kind="partition", payload=plan.row_block, success_score=score),
            now=now,
        )
        if lambda_t > 0.0:
            lam_store = min(max(lambda_t, 1e-14), 1e-2)
            lam_score = 1.0 / (1.0 + residual)
            store.put_pattern(
                f"lambda/{wc.key()}",
                LtmRecord(key="", kind="lambda", payload=lam_store, success_score=lam_score),
                now=now,
            )
    if use_stm:
        store.record_observation(Observation(t=now, kind="residual", value=residual))

    return Stage1Result(
        y=y,
        exact=exact,
        plan=plan,
        lambda_t=lambda_t,
        residual=residual,
        raw_residual=raw_residual,
        workload_key=wc.key(),
    )


def run_scenario(cfg: ScenarioConfig, out_dir=None) -> RunResult:
    """Execute the configured number of rounds and emit metrics and events."""
    master = np.random.default_rng(cfg.seed)
    matrix_rng = np.random.default_rng(master.integers(0, 2**63))
    probe_rng = np.random.default_rng(master.integers(0, 2**63))
    peer_rng = np.random.default_rng(master.integers(0, 2**63))
    net_seed = int(master.integers(0, 2**63))

    clock = SimClock()
    events = EventLog(clock)
    store = MemoryStore()

    net = build_network(cfg.topology, seed=net_seed)
    profiles = build_profiles(cfg.topology)
    node_ids = cfg.topology.ids()
    dht_net = dht.DhtNetwork(node_ids)
    cluster = build_cluster(cfg.topology, net)
    weights = cfg.selection_weights()
    caches = {nid: p2p.CacheStore(cfg.cache_capacity_mb) for nid in node_ids}
    graph = cfg.agent_graph()
    origin = node_ids[0]

    # Static baseline placement: agents round-robin over nodes in id order.
    sorted_nodes = sorted(node_ids)
    for idx, agent in enumerate(graph.names()):
        cluster.assignments[agent] = sorted_nodes[idx % len(sorted_nodes)]
        cluster.agent_mem[agent] = graph.mem_req(agent)

    run_id = _run_id(cfg)
    metrics = MetricsRecord(run_id=run_id, rounds=cfg.rounds, agent_count=len(graph.names()))
    manifests: list[str] = []
    expected_perf = None
    residuals = []
    raw_residuals = []
    hops_seen = []
    A = x = None

    use_ltm = "no_ltm" not in cfg.ablation
    use_stm = "no_stm" not in cfg.ablation

    for rnd in range(cfg.rounds):
        events.emit("round_start", round=rnd)
        round_t0 = clock.t_ms

        # ----- Stage 1: memory-guided matrix processing -----
        if A is None or cfg.matrix.regenerate == "per_round":
            A, x = cfg.matrix.sample(matrix_rng)
        s1 = run_stage1(A, x, cfg, store, now=clock.t_ms / 1000.0, probe_rng=probe_rng)
        clock.advance(s1.plan.est_compute_cost * 1000.0)
        events.emit(
            "stage1",
            round=rnd,
            workload=s1.workload_key,
            tiles=s1.plan.num_tiles,
            block=s1.plan.row_block,
            lambda_t=s1.lambda_t,
            residual=s1.residual,
        )
        residuals.append(s1.residual)
        raw_residuals.append(s1.raw_residual)
        metrics.partition_count = s1.plan.num_tiles
        metrics.lambda_last = s1.lambda_t
        stage1_end = clock.t_ms
        metrics.stage1_ms += stage1_end - round_t0

        # ----- Stage 2: adaptive distributed communication -----
        payload = s1.y.tobytes()
        cid = gen_cid(payload)
        size_gb = len(payload) / 1e9
        lookup = dht_net.find_providers(cid, origin)
        events.emit(
            "dht_lookup",
            src=origin,
            dst=lookup.terminal,
            bytes=0,
            success=bool(lookup.providers),
            hops=lookup.hops,
        )
        hops_seen.append(lookup.hops)
        dht_net.announce(cid, origin)

        candidates = sorted((set(lookup.providers) | set(lookup.nearby)) - {origin})
        successes_this_round = 0
        if candidates:
            k = min(cfg.top_k, len(candidates))
            cand_profiles = [profiles[c] for c in candidates]
            ranked = p2p.rank_peers(cand_profiles, weights, normalize=cfg.normalize_scores)
            feature_map = {node: feats for node, _s, feats in ranked}
            if "random_peers" in cfg.ablation:
                chosen = sorted(peer_rng.choice(candidates, size=k, replace=False).tolist())
            elif "dht_only_routing" in cfg.ablation:
                by_xor = sorted(candidates, key=lambda nid: (dht.xor_distance(nid, cid), nid))
                chosen = by_xor[:k]
            else:
                chosen = [node for node, _s, _f in ranked[:k]]

            for peer in chosen:
                if caches[peer].get(cid, clock.t_ms / 1000.0) is not None:
                    events.emit(
                        "cache_hit", src=origin, dst=peer, bytes=0, success=True, hops=None
                    )
                    successes_this_round += 1
                    continue
                outcome = p2p.simulate_transfer(
                    net,
                    origin,
                    peer,
                    size_gb,
                    dst_availability=profiles[peer].availability,
                    overload_coeff=cfg.transfer_overload_coeff,
                    weights=weights,
                    features=feature_map[peer],
                )
                clock.advance(outcome.elapsed_ms)
                events.emit(
                    "transfer",
                    src=origin,
                    dst=peer,
                    bytes=outcome.bytes_moved,
                    success=outcome.success,
                    hops=None,
                )
                metrics.transfer_attempts += 1
                profiles[peer].load_history.append(
                    (clock.t_ms / 1000.0, profiles[peer].availability)
                )
                if outcome.success:
                    metrics.transfer_successes += 1
                    successes_this_round += 1
                    metrics.bandwidth_gb += size_gb
                    entry = p2p.CacheEntry(
                        content_id=cid,
                        size_mb=max(len(payload) / 1e6, 1e-6),
                        access_count_per_hour=1.0,
                        last_access=clock.t_ms / 1000.0,
                        payload=b"",
                    )
                    caches[peer].admit(entry, clock.t_ms / 1000.0)
                    dht_net.announce(cid, peer, origin=peer)
                if use_ltm:
                    store.put_pattern(
                        f"peer/{peer}",
                        LtmRecord(
                            key="",
                            kind="peer",
                            payload={
                                "availability": profiles[peer].availability,
                                "latency_ms": net.latency(origin, peer),
                                "memory_free_gb": profiles[peer].memory_free_gb,
                            },
                            success_score=1.0 if outcome.success else 0.0,
                        ),
                        now=clock.t_ms / 1000.0,
                    )
            adaptive = not (
                "no_adaptive_peers" in cfg.ablation
                or "random_peers" in cfg.ablation
                or "dht_only_routing" in cfg.ablation
            )
            if adaptive and weights.transfer_log:
                p2p.update_weights(weights)
                events.emit(
                    "weights_update",
                    w1=weights.w1,
                    w2=weights.w2,
                    w3=weights.w3,
                    success_rate=p2p.success_rate(weights.transfer_log),
                )
        stage2_end = clock.t_ms
        metrics.stage2_ms += stage2_end - stage1_end

        # ----- Stage 3: dynamic deployment optimization -----
        elapsed_s = max((clock.t_ms - round_t0) / 1000.0, 1e-9)
        ops = s1.plan.num_tiles + successes_this_round
        current_perf = ops / elapsed_s
        if expected_perf is None:
            seeded = store.get_pattern("perf/baseline", now=clock.t_ms / 1000.0) if use_ltm else None
            expected_perf = float(seeded.payload) if seeded is not None else current_perf
        utilization = cluster.utilization()
        if use_stm:
            store.record_observation(
                Observation(t=clock.t_ms / 1000.0, kind="utilization", value=utilization)
            )
            store.record_observation(
                Observation(t=clock.t_ms / 1000.0, kind="throughput", value=current_perf)
            )
        fire = False
        if "no_recompile" not in cfg.ablation:
            fire = deploy.should_recompile(
                current_perf, expected_perf, utilization, cfg.trigger
            )
        if fire:
            hint = store.get_pattern("placement/default", now=clock.t_ms / 1000.0) if use_ltm else None
            plc = deploy.optimize_placement(
                graph, cluster, hint=hint, lambda_mem=cfg.placement_lambda_mem
            )
            manifest = deploy.generate_manifest(plc, graph)
            outcome = deploy.apply_manifest(
                cluster, manifest, graph, reconfig_delay_s=cfg.reconfig_delay_s
            )
            clock.advance(outcome.delay_s * 1000.0)
            manifests.append(manifest)
            metrics.recompile_count += 1
            events.emit(
                "recompile",
                round=rnd,
                moved=len(outcome.moved),
                delay_s=outcome.delay_s,
                cost=plc.total_cost,
            )
            if use_ltm:
                store.put_pattern(
                    "placement/default",
                    LtmRecord(
                        key="",
                        kind="placement",
                        payload=dict(plc.assign),
                        success_score=1.0,
                    ),
                    now=clock.t_ms / 1000.0,
                )
        if use_ltm:
            store.put_pattern(
                "perf/baseline",
                LtmRecord(key="", kind="scalar", payload=current_perf, success_score=1.0),
                now=clock.t_ms / 1000.0,
            )
        expected_perf = 0.1 * current_perf + 0.9 * expected_perf
        metrics.stage3_ms += clock.t_ms - stage2_end
        events.emit("round_end", round=rnd, perf=current_perf, utilization=utilization)

    metrics.residual_norm_mean = float(np.mean(residuals))
    metrics.residual_norm_last = float(residuals[-1])
    metrics.raw_residual_norm_mean = float(np.mean(raw_residuals))
    metrics.hops_mean = float(np.mean(hops_seen)) if hops_seen else 0.0
    if metrics.transfer_attempts:
        metrics.transfer_success_rate = metrics.transfer_successes / metrics.transfer_attempts
    hits = sum(c.hits for c in caches.values())
    misses = sum(c.misses for c in caches.values())
    metrics.cache_hit_rate = hits / (hits + misses) if (hits + misses) else 0.0
    metrics.placement_cost = deploy.placement_cost(
        graph, cluster.assignments, net, cfg.placement_lambda_mem
    )
    metrics.ltm_size = len(store)
    metrics.stm_len = len(store.stm)
    metrics.warnings = sum(store.warnings.values())

    result = RunResult(metrics=metrics, events=events.events, manifests=manifests, store=store)
    if out_dir is not None:
        _write_outputs(result, Path(out_dir))
    return result


def _run_id(cfg: ScenarioConfig) -> str:
    canonical = json.dumps(cfg.canonical_dict(), sort_keys=True, default=str)
    return f"{cfg.name}-s{cfg.seed}-{gen_cid(canonical.encode()):016x}"


def _write_outputs(result: RunResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"format": EVENTS_FORMAT_TAG}, separators=(",", ":"))]
    lines.extend(
        json.dumps(e, sort_keys=True, separators=(",", ":")) for e in result.events
    )
    (out_dir / "events.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out_dir / "metrics.json").write_text(
        json.dumps(result.metrics.to_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    if result.manifests:
        mdir = out_dir / "manifests"
        mdir.mkdir(exist_ok=True)
        for i, text in enumerate(result.manifests):
            (mdir / f"placement-{i:03d}.manifest").write_text(text, encoding="utf-8")


def run_ablation(cfg: ScenarioConfig, axes: list[str], out_dir=None) -> list[dict]:
    """Full model plus one single-flag variant per axis, on paired seeds."""
    for axis in axes:
        if axis not in SUPPORTED_ABLATIONS:
            raise ValueError(
                f"unknown ablation flag {axis!r}; supported: {list(SUPPORTED_ABLATIONS)}"
            )
    rows = []
    full = run_scenario(cfg)
    row = {"variant": "full"}
    row.update(full.metrics.to_dict())
    rows.append(row)
    for axis in axes:
        variant = cfg.with_ablation([axis])
        res = run_scenario(variant)
        row = {"variant": axis}
        row.update(res.metrics.to_dict())
        rows.append(row)
    if out_dir is not None:
        write_summary_csv(rows, Path(out_dir) / "summary.csv")
    return rows


def write_summary_csv(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {SUMMARY_FORMAT_TAG}\n")
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# -- benches -------------------------------------------------------------------


def zipf_trace(
    num_requests: int, num_objects: int, exponent: float, rng: np.random.Generator
) -> np.ndarray:
    """Zipf-distributed object indices (rank 1 most popular)."""
    ranks = np.arange(1, num_objects + 1, dtype=np.float64)
    probs = ranks**-exponent
    probs /= probs.sum()
    return rng.choice(num_objects, size=num_requests, p=probs)


def cache_trace_bench(
    num_requests: int = 10_000,
    num_objects: int = 500,
    exponent: float = 1.1,
    capacity_fraction: float = 0.1,
    object_size_mb: float = 1.0,
    seed: int = 0,
) -> dict[str, float]:
    """Replay one Zipf trace under utility eviction and under FIFO.

    Same trace, same seed, same capacity for both policies; returns the two
    hit rates.
    """
    rng = np.random.default_rng(seed)
    trace = zipf_trace(num_requests, num_objects, exponent, rng)
    capacity_mb = capacity_fraction * num_objects * object_size_mb

    utility_cache = p2p.CacheStore(capacity_mb)
    hits_utility = 0
    for t, obj in enumerate(trace):
        now = float(t)
        if utility_cache.get(int(obj), now) is not None:
            hits_utility += 1
        else:
            entry = p2p.CacheEntry(
                content_id=int(obj),
                size_mb=object_size_mb,
                access_count_per_hour=1.0,
                last_access=now,
            )
            utility_cache.admit(entry, now)

    fifo: dict[int, None] = {}
    max_objects = int(capacity_mb / object_size_mb)
    hits_fifo = 0
    for obj in trace:
        obj = int(obj)
        if obj in fifo:
            hits_fifo += 1
        else:
            fifo[obj] = None
            while len(fifo) > max_objects:
                fifo.pop(next(iter(fifo)))
    return {
        "utility_hit_rate": hits_utility / num_requests,
        "fifo_hit_rate": hits_fifo / num_requests,
    }


def dht_scaling_bench(
    sizes: tuple[int, ...] = (1024, 4096),
    lookups: int = 500,
    seed: int = 0,
) -> dict[int, float]:
    """Mean greedy lookup hops per network size."""
    out = {}
    for n in sizes:
        rng = np.random.default_rng(seed + n)
        ids = _unique_ids(n, rng)
        network = dht.DhtNetwork(ids)
        total = 0
        for _ in range(lookups):
            cid = int(rng.integers(0, 2**64, dtype=np.uint64))
            origin = ids[int(rng.integers(0, n))]
            total += network.find_providers(cid, origin).hops
        out[n] = total / lookups
    return out


def _unique_ids(n: int, rng: np.random.Generator) -> list[int]:
    ids = set()
    while len(ids) < n:
        draw = rng.integers(0, 2**64, size=n, dtype=np.uint64)
        ids.update(int(v) for v in draw)
    return sorted(ids)[:n]


def selection_comparisons_bench(
    sizes: tuple[int, ...] = (16, 64, 256), seed: int = 0
) -> dict[int, int]:
    """Comparison counts of the top-K ranking as the peer count grows."""
    rng = np.random.default_rng(seed)
    weights = p2p.SelectionWeights()
    out = {}
    for p in sizes:
        profiles = [
            p2p.PeerProfile(
                node=i,
                availability=float(rng.random()),
                latency_ms=float(rng.uniform(1.0, 500.0)),
                memory_free_gb=float(rng.uniform(0.0, 32.0)),
            )
            for i in range(p)
        ]
        counter = p2p.ComparisonCounter()
        p2p.select_peers(profiles, weights, k=min(5, p), counter=counter)
        out[p] = counter.count
    return out
