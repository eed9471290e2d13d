"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
numbers. Every tolerance is pinned here, not configurable.
"""

import itertools
import time

import numpy as np

from sedma.crossbar import (
    NoiseModel,
    denoise,
    difference_operator,
    first_order_correct,
    program_write_verify,
)
from sedma.deploy import (
    AgentGraph,
    AgentSpec,
    ClusterState,
    NodeSpec,
    PlacementInfeasibleError,
    TriggerConfig,
    optimize_placement,
    should_recompile,
)
from sedma.memory import LtmRecord, MemoryStore, Observation
from sedma.p2p import NetworkModel, SelectionWeights, update_weights
from sedma.partition import DeviceSpec, concat_results, optimize_partition, split_matrix
from sedma.pipeline import (
    cache_trace_bench,
    dht_scaling_bench,
    run_scenario,
    write_summary_csv,
)
from sedma.scenario import (
    TOPOLOGY_FORMAT_TAG,
    scenario_from_dict,
    stress_scenario_doc,
    stress_topology_text,
)


def report(name, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPT {name}: {status} ({detail})")
    assert ok, f"{name}: {detail}"


def test_criterion_01_error_order_separation():
    t0 = time.time()
    eps_grid = (0.01, 0.02, 0.04)
    corrected, raw = [], []
    for eps in eps_grid:
        c_norms, r_norms = [], []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            A = rng.standard_normal((64, 64))
            x = rng.standard_normal(64)
            xbar = program_write_verify(
                A, NoiseModel(write_sigma=eps, read_sigma=0.0, seed=1000 + seed), max_iters=1
            )
            x_t = xbar.program_vector(x, max_iters=1)
            exact = A @ x
            p = first_order_correct(A, x, xbar, x_t)
            c_norms.append(np.linalg.norm(p - exact))
            r_norms.append(np.linalg.norm(xbar.programmed @ x_t - exact))
        corrected.append(np.mean(c_norms))
        raw.append(np.mean(r_norms))
    slope_c = float(np.polyfit(np.log(eps_grid), np.log(corrected), 1)[0])
    slope_r = float(np.polyfit(np.log(eps_grid), np.log(raw), 1)[0])
    elapsed = time.time() - t0
    ok = abs(slope_c - 2.0) <= 0.3 and abs(slope_r - 1.0) <= 0.3 and elapsed < 30.0
    report(
        "01 error-order separation",
        ok,
        f"corrected slope {slope_c:.3f} (target 2.0+-0.3), raw slope {slope_r:.3f} "
        f"(target 1.0+-0.3), {elapsed:.1f}s < 30s",
    )


def test_criterion_02_denoiser_exactness():
    t0 = time.time()
    worst = 0.0
    for n in (3, 10, 100):
        rng = np.random.default_rng(n)
        for lam in (1e-12, 1e-6, 0.5, 3.0):
            p = rng.standard_normal(n)
            L = difference_operator(n)
            expected = np.linalg.solve(np.eye(n) + lam * (L.T @ L), p)
            got = denoise(p, lam)
            rel = np.linalg.norm(got - expected) / np.linalg.norm(expected)
            worst = max(worst, rel)
    p = np.random.default_rng(0).standard_normal(100)
    identity_exact = np.array_equal(denoise(p, 0.0), p)
    elapsed = time.time() - t0
    ok = worst <= 1e-10 and identity_exact and elapsed < 5.0
    report(
        "02 denoiser exactness",
        ok,
        f"worst rel err {worst:.2e} <= 1e-10, lambda=0 bitwise identity "
        f"{identity_exact}, {elapsed:.1f}s < 5s",
    )


def test_criterion_03_partition_round_trip():
    t0 = time.time()
    rng = np.random.default_rng(33)
    dev = DeviceSpec(max_dim=64)
    worst = 0.0
    for case in range(50):
        m = int(rng.integers(32, 301))
        n = int(rng.integers(32, 301))
        A = rng.standard_normal((m, n))
        x = rng.standard_normal(n)
        plan = optimize_partition(A, dev, lambda_mem=1.0)
        tiles = split_matrix(A, x, plan)
        partials = []
        for i, (a_tile, x_tile) in enumerate(tiles):
            xbar = program_write_verify(
                a_tile, NoiseModel(0.0, 0.0, seed=case * 1000 + i), max_dim=dev.max_dim
            )
            partials.append(denoise(xbar.read_mvm(x_tile), 0.0))
        y = concat_results(partials, plan)
        exact = A @ x
        worst = max(worst, float(np.linalg.norm(y - exact) / np.linalg.norm(exact)))
    elapsed = time.time() - t0
    ok = worst <= 1e-12 and elapsed < 10.0
    report(
        "03 partition round-trip",
        ok,
        f"worst rel err {worst:.2e} <= 1e-12 over 50 matrices, {elapsed:.1f}s < 10s",
    )


def test_criterion_04_placement_optimality_gap():
    t0 = time.time()
    rng = np.random.default_rng(4444)
    exact = 0
    total = 0
    worst_ratio = 1.0
    while total < 50:
        n_agents = int(rng.integers(2, 7))
        n_nodes = int(rng.integers(2, 4))
        ids = [int(v) for v in rng.choice(100, size=n_nodes, replace=False)]
        lat = np.zeros((n_nodes, n_nodes))
        bw = np.full((n_nodes, n_nodes), np.inf)
        for i in range(n_nodes):
            for j in range(i + 1, n_nodes):
                lat[i, j] = lat[j, i] = rng.uniform(5.0, 200.0)
                bw[i, j] = bw[j, i] = rng.uniform(0.5, 10.0)
        net = NetworkModel(ids, lat, bw, np.zeros((n_nodes, n_nodes)), seed=0)
        agents = [AgentSpec(f"a{i}", float(rng.uniform(0.5, 2.5))) for i in range(n_agents)]
        volumes = {}
        for i in range(n_agents):
            for j in range(i):
                if rng.random() < 0.5:
                    volumes[(f"a{i}", f"a{j}")] = float(rng.uniform(0.1, 4.0))
        g = AgentGraph(agents=agents, volumes=volumes)
        caps = {nid: float(rng.uniform(4.0, 10.0)) for nid in ids}
        cluster = ClusterState(
            nodes={nid: NodeSpec(node=nid, mem_capacity_gb=c) for nid, c in caps.items()},
            net=net,
        )
        lam = float(rng.uniform(0.0, 2.0))

        # Exhaustive enumeration oracle.
        optimum = None
        for combo in itertools.product(sorted(caps), repeat=n_agents):
            assign = dict(zip(g.names(), combo))
            used = {}
            for a, nd in assign.items():
                used[nd] = used.get(nd, 0.0) + g.mem_req(a)
            if any(used[nd] > caps[nd] + 1e-9 for nd in used):
                continue
            cost = 0.0
            for agent in g.names():
                for dep, vol in g.deps_of(agent):
                    if assign[agent] != assign[dep]:
                        a, b = assign[agent], assign[dep]
                        cost += vol * net.latency(a, b) / net.bandwidth(a, b)
                remote = sum(
                    vol for dep, vol in g.deps_of(agent) if assign[dep] != assign[agent]
                )
                cost += lam * (g.mem_req(agent) + remote)
            if optimum is None or cost < optimum:
                optimum = cost
        if optimum is None:
            continue
        try:
            placement = optimize_placement(g, cluster, lambda_mem=lam)
        except PlacementInfeasibleError:
            continue
        total += 1
        if placement.total_cost <= optimum + 1e-9:
            exact += 1
        if optimum > 1e-12:
            worst_ratio = max(worst_ratio, placement.total_cost / optimum)
    elapsed = time.time() - t0
    ok = exact >= 45 and worst_ratio <= 1.2 and elapsed < 20.0
    report(
        "04 placement optimality gap",
        ok,
        f"exact {exact}/50 (need >=45), worst ratio {worst_ratio:.4f} <= 1.2, "
        f"{elapsed:.1f}s < 20s",
    )


def test_criterion_05_trigger_truth_table():
    cfg = TriggerConfig(theta=0.8, rho=0.85)
    table = [
        (0.79, 0.5, True),  # perf branch only
        (1.0, 0.86, True),  # util branch only
        (0.79, 0.86, True),  # both
        (1.0, 0.5, False),  # neither
        (0.8, 0.85, False),  # strict boundaries
    ]
    results = [
        should_recompile(ratio, 1.0, util, cfg) is expected
        for ratio, util, expected in table
    ]
    report(
        "05 trigger truth table",
        all(results),
        f"{sum(results)}/{len(table)} rows exact with theta=0.8 rho=0.85",
    )


def test_criterion_06_weight_adaptation_planted_signal():
    planted_ok = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        w = SelectionWeights(eta=0.01)
        for _ in range(100):
            avail = rng.random()
            w.log_outcome((avail, rng.random(), rng.random()), avail > 0.5)
            update_weights(w)
        if w.w1 > w.w2 and w.w1 > w.w3:
            planted_ok += 1

    rng = np.random.default_rng(4242)
    w = SelectionWeights(eta=0.01)
    deltas = []
    for _ in range(1000):
        w.log_outcome((rng.random(), rng.random(), rng.random()), bool(rng.random() < 0.5))
        before = w.as_tuple()
        update_weights(w)
        deltas.append([abs(a - b) for a, b in zip(w.as_tuple(), before)])
    mean_step = np.mean(deltas, axis=0)
    ok = planted_ok == 10 and bool(np.all(mean_step <= 0.005))
    report(
        "06 weight adaptation",
        ok,
        f"planted w1 strict max {planted_ok}/10 seeds, mean |dw| per round "
        f"{np.round(mean_step, 5).tolist()} <= 0.005",
    )


def test_criterion_07_cache_policy_dominance(tmp_path):
    rates = cache_trace_bench(
        num_requests=10_000, num_objects=500, exponent=1.1, capacity_fraction=0.1, seed=7
    )
    rows = [
        {"variant": "utility", "hit_rate": rates["utility_hit_rate"]},
        {"variant": "fifo", "hit_rate": rates["fifo_hit_rate"]},
    ]
    write_summary_csv(rows, tmp_path / "summary.csv")
    written = (tmp_path / "summary.csv").read_text()
    ok = (
        rates["utility_hit_rate"] >= rates["fifo_hit_rate"]
        and "utility" in written
        and "fifo" in written
    )
    report(
        "07 cache policy dominance",
        ok,
        f"utility {rates['utility_hit_rate']:.4f} >= fifo {rates['fifo_hit_rate']:.4f} "
        f"on the same Zipf(1.1) trace; both in summary.csv",
    )


def test_criterion_08_dht_scaling():
    t0 = time.time()
    hops = dht_scaling_bench(sizes=(1024, 4096), lookups=500, seed=8)
    elapsed = time.time() - t0
    ratio = hops[4096] / hops[1024]
    ok = hops[1024] <= 20.0 and hops[4096] <= 24.0 and ratio < 2.0 and elapsed < 60.0
    report(
        "08 dht scaling",
        ok,
        f"mean hops N=1024: {hops[1024]:.2f} <= 20, N=4096: {hops[4096]:.2f} <= 24, "
        f"ratio {ratio:.2f} < 2, {elapsed:.1f}s < 60s",
    )


def test_criterion_09_memory_bounds():
    rng = np.random.default_rng(9)
    store = MemoryStore()
    distinct = set()
    observations = 0
    t = 0.0
    for i in range(100_000):
        op = rng.integers(0, 3)
        if op == 0:
            key = f"k{int(rng.integers(0, 20_000))}"
            distinct.add(key)
            store.put_pattern(
                key,
                LtmRecord(key="", kind="scalar", payload=float(i), success_score=0.5),
            )
        elif op == 1:
            store.get_pattern(f"k{int(rng.integers(0, 20_000))}")
        else:
            t += 1.0
            observations += 1
            store.record_observation(Observation(t, "load", float(i)))
        assert len(store) == min(len(distinct), 10_000)
        assert len(store.stm) == min(observations, 100)
    report(
        "09 memory bounds",
        True,
        f"after 1e5 ops: LTM {len(store)} == min({len(distinct)}, 10000), "
        f"STM {len(store.stm)} == min({observations}, 100), asserted continuously",
    )


def test_criterion_10_determinism(tmp_path):
    doc = {
        "name": "det",
        "seed": 21,
        "rounds": 4,
        "matrix": {"rows": 48, "cols": 48},
        "device": {"max_dim": 64},
        "noise": {"write_sigma": 0.02, "read_sigma": 0.005},
        "topology": "\n".join(
            [
                TOPOLOGY_FORMAT_TAG,
                "node 11 0.9 8 4",
                "node 22 0.8 8 4",
                "node 33 0.7 6 4",
                "link 11 22 20 1.0 0.01",
                "link 11 33 30 1.0 0.01",
                "link 22 33 25 1.0 0.01",
            ]
        ),
        "selection": {"k": 2},
        "agents": [
            {"agent": "a", "mem_req_gb": 1.0},
            {"agent": "b", "mem_req_gb": 1.0},
        ],
        "deps": [{"src": "b", "dst": "a", "volume_gb": 1.0}],
    }
    run_scenario(scenario_from_dict(doc), out_dir=tmp_path / "one")
    run_scenario(scenario_from_dict(doc), out_dir=tmp_path / "two")
    events_match = (tmp_path / "one" / "events.jsonl").read_bytes() == (
        tmp_path / "two" / "events.jsonl"
    ).read_bytes()
    metrics_match = (tmp_path / "one" / "metrics.json").read_bytes() == (
        tmp_path / "two" / "metrics.json"
    ).read_bytes()
    report(
        "10 determinism",
        events_match and metrics_match,
        f"events.jsonl identical: {events_match}, metrics.json identical: {metrics_match}",
    )


def test_criterion_11_ablation_directionality():
    doc = stress_scenario_doc()
    doc["topology"] = stress_topology_text()
    full_resid, fixed_resid = [], []
    full_succ, dht_succ = [], []
    full_cost, norec_cost = [], []
    for rep in range(10):
        doc["seed"] = 100 + rep
        doc["ablation"] = []
        full = run_scenario(scenario_from_dict(doc)).metrics
        doc["ablation"] = ["fixed_lambda"]
        fixed = run_scenario(scenario_from_dict(doc)).metrics
        doc["ablation"] = ["dht_only_routing"]
        dht_only = run_scenario(scenario_from_dict(doc)).metrics
        doc["ablation"] = ["no_recompile"]
        norec = run_scenario(scenario_from_dict(doc)).metrics
        full_resid.append(full.residual_norm_mean)
        fixed_resid.append(fixed.residual_norm_mean)
        full_succ.append(full.transfer_success_rate)
        dht_succ.append(dht_only.transfer_success_rate)
        full_cost.append(full.placement_cost)
        norec_cost.append(norec.placement_cost)
    lam_ok = np.mean(full_resid) <= np.mean(fixed_resid)
    peer_ok = np.mean(full_succ) >= np.mean(dht_succ)
    recompile_ok = np.mean(full_cost) <= np.mean(norec_cost)
    report(
        "11 ablation directionality",
        lam_ok and peer_ok and recompile_ok,
        f"adaptive vs fixed lambda residual {np.mean(full_resid):.4f} <= "
        f"{np.mean(fixed_resid):.4f}; memory-aware vs dht-only success "
        f"{np.mean(full_succ):.3f} >= {np.mean(dht_succ):.3f}; recompile vs static "
        f"cost {np.mean(full_cost):.1f} <= {np.mean(norec_cost):.1f} "
        "(paired seeds, 10 reps each)",
    )
