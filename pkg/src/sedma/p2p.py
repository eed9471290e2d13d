"""Memory-aware peer selection, utility caching, and transfer simulation.

Peers are scored as w1 * availability + w2 / latency + w3 * free_memory and
the top-K become transfer targets. The weights adapt online: the gradient of
the transfer success rate with respect to each weight is proxied by the
regression slope cov(criterion, success) / var(criterion) over a bounded
log of (selected-peer criteria, outcome) pairs. Cached content is evicted
by minimum utility = frequency * recency / size.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

TRANSFER_LOG_CAPACITY = 100
RECENCY_TAU_S = 3600.0
MAX_LATENCY_MS = 1000.0


@dataclass
class PeerProfile:
    """Capability snapshot for one peer plus its recent load history."""

    node: int
    availability: float
    latency_ms: float
    memory_free_gb: float
    load_history: deque = field(default_factory=lambda: deque(maxlen=100))

    def __post_init__(self):
        if not (0.0 <= self.availability <= 1.0):
            raise ValueError(f"availability {self.availability} out of [0, 1]")
        if not (0.0 < self.latency_ms <= MAX_LATENCY_MS):
            raise ValueError(f"latency {self.latency_ms} ms outside (0, {MAX_LATENCY_MS}]")
        if self.memory_free_gb < 0:
            raise ValueError("memory_free_gb must be nonnegative")

    def features(self) -> tuple[float, float, float]:
        return (self.availability, 1.0 / self.latency_ms, self.memory_free_gb)


@dataclass
class SelectionWeights:
    """Adaptive scoring weights and the outcome log that trains them."""

    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    eta: float = 0.01
    transfer_log: deque = field(default_factory=lambda: deque(maxlen=TRANSFER_LOG_CAPACITY))

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("weights must be nonnegative")
        if self.w1 == self.w2 == self.w3 == 0.0:
            raise ValueError("at least one weight must be positive")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.w1, self.w2, self.w3)

    def log_outcome(self, features: tuple[float, float, float], success: bool) -> None:
        self.transfer_log.append((features, bool(success)))


def score_peer(profile: PeerProfile, w: SelectionWeights) -> float:
    """w1 * availability + w2 / latency_ms + w3 * memory_free_gb, raw units."""
    if profile.latency_ms <= 0:
        raise ValueError("latency must be positive; self-transfers are handled before scoring")
    a, inv_lat, mem = profile.features()
    return w.w1 * a + w.w2 * inv_lat + w.w3 * mem


class ComparisonCounter:
    """Counts key comparisons made while ranking peers."""

    def __init__(self):
        self.count = 0


class _CountedKey:
    __slots__ = ("value", "counter")

    def __init__(self, value, counter):
        self.value = value
        self.counter = counter

    def __lt__(self, other):
        self.counter.count += 1
        return self.value < other.value


def rank_peers(
    profiles: list[PeerProfile],
    w: SelectionWeights,
    normalize: bool = False,
    counter: ComparisonCounter | None = None,
) -> list[tuple[int, float, tuple[float, float, float]]]:
    """All peers sorted by descending score, ties to the smaller node id.

    Returns (node, score, features-as-scored). With ``normalize`` each
    criterion is min-max scaled over the candidate set before weighting,
    which makes the three terms unit-free and comparable.
    """
    feats = [p.features() for p in profiles]
    if normalize and feats:
        cols = list(zip(*feats))
        scaled = []
        for col in cols:
            lo, hi = min(col), max(col)
            span = hi - lo
            if span == 0.0:
                scaled.append([0.5] * len(col))
            else:
                scaled.append([(v - lo) / span for v in col])
        feats = list(zip(*scaled))
    weights = w.as_tuple()
    entries = []
    for p, f in zip(profiles, feats):
        if p.latency_ms <= 0:
            raise ValueError("latency must be positive")
        score = sum(wi * fi for wi, fi in zip(weights, f))
        entries.append((p.node, score, f))
    sort_key = lambda e: (-e[1], e[0])
    if counter is None:
        entries.sort(key=sort_key)
    else:
        entries.sort(key=lambda e: _CountedKey(sort_key(e), counter))
    return entries


def select_peers(
    profiles: list[PeerProfile],
    w: SelectionWeights,
    k: int,
    normalize: bool = False,
    counter: ComparisonCounter | None = None,
) -> list[int]:
    """Top-k node ids by score; k = 1 recovers the single-argmax selection."""
    if k > len(profiles):
        raise ValueError(f"k={k} exceeds the {len(profiles)} available profiles")
    if k < 1:
        raise ValueError("k must be positive")
    return [node for node, _score, _f in rank_peers(profiles, w, normalize, counter)[:k]]


def success_rate(log) -> float:
    """completed transfers / total attempts over the log."""
    if not log:
        raise ValueError("transfer log is empty")
    return sum(1 for _f, ok in log if ok) / len(log)


def update_weights(w: SelectionWeights) -> SelectionWeights:
    """One adaptation step from the outcome log.

    The partial derivative of the success rate in each weight is proxied by
    the per-criterion regression slope cov(criterion_j, success) /
    var(criterion_j) over the log. Updated weights are projected to >= 0;
    a fully zeroed vector resets to (1, 1, 1). An empty log is a no-op.
    """
    if not w.transfer_log:
        return w
    feats = np.array([f for f, _ok in w.transfer_log], dtype=np.float64)
    succ = np.array([1.0 if ok else 0.0 for _f, ok in w.transfer_log])
    s_centered = succ - succ.mean()
    new = []
    for j, wj in enumerate(w.as_tuple()):
        col = feats[:, j]
        var = float(np.mean((col - col.mean()) ** 2))
        if var < 1e-18:
            grad = 0.0
        else:
            grad = float(np.mean((col - col.mean()) * s_centered)) / var
        new.append(max(0.0, wj + w.eta * grad))
    if max(new) == 0.0:
        new = [1.0, 1.0, 1.0]
    w.w1, w.w2, w.w3 = new
    return w


# -- caching -------------------------------------------------------------------


@dataclass
class CacheEntry:
    content_id: int
    size_mb: float
    access_count_per_hour: float
    last_access: float
    payload: bytes = b""

    def __post_init__(self):
        if self.size_mb <= 0:
            raise ValueError("size_mb must be positive")
        if self.access_count_per_hour < 0:
            raise ValueError("access frequency must be nonnegative")


def cache_utility(entry: CacheEntry, now: float, tau: float = RECENCY_TAU_S) -> float:
    """frequency * exp(-age / tau) / size."""
    age = now - entry.last_access
    return entry.access_count_per_hour * math.exp(-age / tau) / entry.size_mb


def record_access(entry: CacheEntry, now: float, tau: float = RECENCY_TAU_S) -> None:
    """Exponentially decayed access counter; bumps recency to ``now``."""
    age = now - entry.last_access
    entry.access_count_per_hour = entry.access_count_per_hour * math.exp(-age / tau) + 1.0
    entry.last_access = now


class CacheStore:
    """Content cache evicting by minimum utility."""

    def __init__(self, capacity_mb: float):
        if capacity_mb <= 0:
            raise ValueError("capacity must be positive")
        self.capacity_mb = capacity_mb
        self.entries: dict[int, CacheEntry] = {}
        self.hits = 0
        self.misses = 0

    @property
    def total_mb(self) -> float:
        return sum(e.size_mb for e in self.entries.values())

    def get(self, content_id: int, now: float) -> CacheEntry | None:
        entry = self.entries.get(content_id)
        if entry is None:
            self.misses += 1
            return None
        record_access(entry, now)
        self.hits += 1
        return entry

    def admit(self, entry: CacheEntry, now: float) -> None:
        cache_admit(self, entry, self.capacity_mb, now)


def cache_admit(cache: CacheStore, entry: CacheEntry, capacity_mb: float, now: float) -> CacheStore:
    """Insert, then evict minimum-utility residents until under capacity.

    The incoming entry itself is evicted first when its utility is the
    minimum. Utility ties evict the smaller content id (deterministic).
    """
    if entry.size_mb > capacity_mb:
        raise ValueError(
            f"entry of {entry.size_mb} MB exceeds total capacity {capacity_mb} MB"
        )
    cache.entries[entry.content_id] = entry
    while cache.total_mb > capacity_mb:
        victim = min(
            cache.entries.values(),
            key=lambda e: (cache_utility(e, now), e.content_id),
        )
        del cache.entries[victim.content_id]
    return cache


# -- network -------------------------------------------------------------------


@dataclass
class TransferOutcome:
    src: int
    dst: int
    size_gb: float
    success: bool
    elapsed_ms: float
    bytes_moved: int


class NetworkModel:
    """Parametric latency/bandwidth/drop model over a fixed node set.

    Matrices are symmetric with zero self-latency and infinite self-bandwidth.
    All failure draws come from the model's seeded generator.
    """

    def __init__(
        self,
        node_ids,
        latency_ms: np.ndarray,
        bandwidth_gbps: np.ndarray,
        drop_prob: np.ndarray,
        seed: int = 0,
    ):
        self.ids = [int(v) for v in node_ids]
        n = len(self.ids)
        self._index = {v: i for i, v in enumerate(self.ids)}
        lat = np.asarray(latency_ms, dtype=np.float64)
        bw = np.asarray(bandwidth_gbps, dtype=np.float64)
        drp = np.asarray(drop_prob, dtype=np.float64)
        for name, mat in (("latency", lat), ("bandwidth", bw), ("drop_prob", drp)):
            if mat.shape != (n, n):
                raise ValueError(f"{name} matrix must be {n}x{n}")
            if not np.array_equal(mat, mat.T):
                raise ValueError(f"{name} matrix must be symmetric")
        if np.any(lat[~np.eye(n, dtype=bool)] <= 0) and n > 1:
            raise ValueError("off-diagonal latencies must be positive")
        if np.any(np.diag(lat) != 0):
            raise ValueError("self-latency must be zero")
        if not np.all(np.isinf(np.diag(bw))):
            raise ValueError("self-bandwidth must be the infinity sentinel")
        if np.any((drp < 0) | (drp > 1)):
            raise ValueError("drop probabilities must lie in [0, 1]")
        self.latency_ms = lat
        self.bandwidth_gbps = bw
        self.drop_prob = drp
        self.rng = np.random.default_rng(seed)

    def _pair(self, a: int, b: int) -> tuple[int, int]:
        try:
            return self._index[int(a)], self._index[int(b)]
        except KeyError:
            raise ValueError(f"unknown node in pair ({a}, {b})") from None

    def latency(self, a: int, b: int) -> float:
        i, j = self._pair(a, b)
        return float(self.latency_ms[i, j])

    def bandwidth(self, a: int, b: int) -> float:
        i, j = self._pair(a, b)
        return float(self.bandwidth_gbps[i, j])

    def drop(self, a: int, b: int) -> float:
        i, j = self._pair(a, b)
        return float(self.drop_prob[i, j])


def simulate_transfer(
    net: NetworkModel,
    src: int,
    dst: int,
    size_gb: float,
    dst_availability: float | None = None,
    overload_coeff: float = 0.0,
    weights: SelectionWeights | None = None,
    features: tuple[float, float, float] | None = None,
) -> TransferOutcome:
    """Move content across one link: latency + size / bandwidth, seeded drops.

    elapsed_ms = latency_ms + size_gb / bandwidth_gbps * 8000. Failure is
    drawn at the link drop probability; when ``overload_coeff`` is positive
    the destination's availability compounds the failure odds, modelling
    transfers stalling on busy peers. Outcomes are appended to the weights
    log when one is supplied.
    """
    if size_gb < 0:
        raise ValueError("size_gb must be nonnegative")
    i, j = net._pair(src, dst)
    if i == j:
        outcome = TransferOutcome(src, dst, size_gb, True, 0.0, int(size_gb * 1e9))
    else:
        elapsed = net.latency_ms[i, j] + size_gb / net.bandwidth_gbps[i, j] * 8000.0
        p_fail = net.drop_prob[i, j]
        if dst_availability is not None and overload_coeff > 0.0:
            p_busy = overload_coeff * (1.0 - dst_availability)
            p_fail = 1.0 - (1.0 - p_fail) * (1.0 - p_busy)
        success = bool(net.rng.random() >= p_fail)
        outcome = TransferOutcome(
            src, dst, size_gb, success, float(elapsed), int(size_gb * 1e9) if success else 0
        )
    if weights is not None and features is not None:
        weights.log_outcome(features, outcome.success)
    return outcome
