"""Dual memory store shared by all three layers.

Long-term memory (LTM) is a bounded, LRU-evicted map from workload/peer/
deployment keys to pattern records (partition strategies, regularization
weights, peer profiles, placement patterns). Short-term memory (STM) is a
bounded sliding window of recent observations (residual norms, loads,
utilizations). The blend weight ``alpha`` mixes a remembered regularization
weight with a freshly estimated one.
"""

from __future__ import annotations

from collections import Counter, OrderedDict, deque
from dataclasses import dataclass
from typing import Iterable, Optional, Union

LTM_CAPACITY = 10_000
STM_CAPACITY = 100

# Operating range for regularization-weight payloads; the fixed fallback sits
# well inside it.
LAMBDA_MIN = 1e-14
LAMBDA_MAX = 1e-2
DEFAULT_LAMBDA = 1e-12

LTM_FORMAT_TAG = "sedma-ltm/1"

RECORD_KINDS = ("lambda", "partition", "peer", "placement", "scalar")


@dataclass(frozen=True)
class WorkloadClass:
    """Bucketed matrix fingerprint; a pure function of the matrix.

    size_bucket: ceil(log2(max(m, n)))
    sparsity_bucket: "dense" (nonzero fraction >= 0.5), "medium" (>= 0.1),
        else "sparse"
    magnitude_bucket: floor(log10(max |a_ij|)), 0 for an all-zero matrix
    """

    size_bucket: int
    sparsity_bucket: str
    magnitude_bucket: int

    def key(self) -> str:
        return f"s{self.size_bucket}-{self.sparsity_bucket}-m{self.magnitude_bucket}"


MemoryKey = Union[str, WorkloadClass]


def normalize_key(key: MemoryKey) -> str:
    if isinstance(key, WorkloadClass):
        key = key.key()
    if not isinstance(key, str) or not key:
        raise ValueError(f"memory key must be a nonempty string or WorkloadClass, got {key!r}")
    if "\t" in key or "\n" in key:
        raise ValueError("memory key may not contain tabs or newlines")
    return key


@dataclass
class LtmRecord:
    """One long-term pattern: payload plus bookkeeping for LRU and scoring."""

    key: str
    kind: str
    payload: Union[float, int, dict]
    success_score: float
    last_used: float = 0.0
    use_count: int = 0

    def validate(self) -> None:
        if self.kind not in RECORD_KINDS:
            raise ValueError(f"unknown record kind {self.kind!r}; expected one of {RECORD_KINDS}")
        if not (0.0 <= self.success_score <= 1.0):
            raise ValueError(f"success_score {self.success_score} out of [0, 1]")
        if self.kind == "lambda":
            lam = float(self.payload)
            if not (LAMBDA_MIN <= lam <= LAMBDA_MAX):
                raise ValueError(
                    f"lambda payload {lam} outside [{LAMBDA_MIN}, {LAMBDA_MAX}]"
                )


@dataclass
class Observation:
    """Timestamped short-term sample (residual, load, rate, utilization...)."""

    t: float
    kind: str
    value: float


class StmWindow:
    """Time-ordered ring of observations, oldest evicted past capacity."""

    def __init__(self, capacity: int = STM_CAPACITY):
        if capacity <= 0:
            raise ValueError("STM capacity must be positive")
        self.capacity = capacity
        self._entries: deque[Observation] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def append(self, obs: Observation) -> None:
        if self._entries and obs.t < self._entries[-1].t:
            raise ValueError(
                f"out-of-order observation: t={obs.t} < head t={self._entries[-1].t}"
            )
        self._entries.append(obs)

    def latest(self, kind: Optional[str] = None) -> Optional[Observation]:
        if kind is None:
            return self._entries[-1] if self._entries else None
        for obs in reversed(self._entries):
            if obs.kind == kind:
                return obs
        return None

    def values(self, kind: str) -> list[float]:
        return [o.value for o in self._entries if o.kind == kind]


class MemoryStore:
    """Bounded dual store: LRU long-term patterns plus a short-term window.

    Safe for concurrent reads; mutations must be serialized by the caller
    (single-writer contract). Event time is caller-supplied where it matters;
    absent that, an internal logical clock ticks once per mutation.
    """

    def __init__(
        self,
        alpha: float = 0.7,
        ltm_capacity: int = LTM_CAPACITY,
        stm_capacity: int = STM_CAPACITY,
    ):
        if not (0.0 <= alpha <= 1.0):
            raise ValueError(f"alpha {alpha} out of [0, 1]")
        if ltm_capacity <= 0:
            raise ValueError("LTM capacity must be positive")
        self.alpha = alpha
        self.ltm_capacity = ltm_capacity
        self._ltm: OrderedDict[str, LtmRecord] = OrderedDict()
        self.stm = StmWindow(stm_capacity)
        self.warnings: Counter = Counter()
        self._clock = 0.0

    # -- event time -------------------------------------------------------

    def _tick(self, now: Optional[float]) -> float:
        if now is None:
            self._clock += 1.0
            return self._clock
        self._clock = max(self._clock, float(now))
        return float(now)

    # -- long-term memory --------------------------------------------------

    def __len__(self) -> int:
        return len(self._ltm)

    def ltm_keys(self) -> Iterable[str]:
        return self._ltm.keys()

    def put_pattern(self, key: MemoryKey, record: LtmRecord, now: Optional[float] = None) -> None:
        """Store a pattern; re-putting a key folds the score in by EMA (0.2).

        At capacity the least-recently-used record is evicted.
        """
        skey = normalize_key(key)
        record.validate()
        t = self._tick(now)
        existing = self._ltm.get(skey)
        if existing is not None:
            existing.kind = record.kind
            existing.payload = record.payload
            existing.success_score = 0.8 * existing.success_score + 0.2 * record.success_score
            existing.last_used = t
            self._ltm.move_to_end(skey)
        else:
            stored = LtmRecord(
                key=skey,
                kind=record.kind,
                payload=record.payload,
                success_score=record.success_score,
                last_used=t,
                use_count=record.use_count,
            )
            self._ltm[skey] = stored
            while len(self._ltm) > self.ltm_capacity:
                self._ltm.popitem(last=False)

    def get_pattern(self, key: MemoryKey, now: Optional[float] = None) -> Optional[LtmRecord]:
        """Return the record for key, refreshing its LRU position; None if absent."""
        skey = normalize_key(key)
        record = self._ltm.get(skey)
        if record is None:
            return None
        record.last_used = self._tick(now)
        record.use_count += 1
        self._ltm.move_to_end(skey)
        return record

    # -- short-term memory ---------------------------------------------------

    def record_observation(self, obs: Observation) -> None:
        self.stm.append(obs)

    # -- adaptive regularization blend ----------------------------------------

    def blend_lambda(self, lambda_recent: float, key: MemoryKey) -> float:
        """alpha * remembered weight + (1 - alpha) * recent estimate.

        Falls back to the fixed weight 1e-12 when no pattern is stored for
        the key. Out-of-range recent estimates are clipped and counted in
        ``warnings``.
        """
        lam = float(lambda_recent)
        if not (LAMBDA_MIN <= lam <= LAMBDA_MAX):
            self.warnings["lambda_clip"] += 1
            lam = min(max(lam, LAMBDA_MIN), LAMBDA_MAX)
        record = self.get_pattern(key)
        if record is not None and record.kind == "lambda":
            lambda_memory = float(record.payload)
        else:
            lambda_memory = DEFAULT_LAMBDA
        return self.alpha * lambda_memory + (1.0 - self.alpha) * lam


# -- persistence ---------------------------------------------------------------
#
# One record per line, tab-separated: key, kind, payload, success_score,
# last_used, use_count. Reals in canonical decimal with 17 significant digits.
# Records are written least-recently-used first so a reload reproduces the
# exact eviction order.


def _fmt_real(x: float) -> str:
    return format(float(x), ".17g")


def _encode_payload(kind: str, payload) -> str:
    if kind in ("lambda", "scalar"):
        return _fmt_real(payload)
    if kind == "partition":
        return str(int(payload))
    if kind == "peer":
        items = sorted(payload.items())
        return ";".join(f"{k}={_fmt_real(v)}" for k, v in items)
    if kind == "placement":
        items = sorted(payload.items())
        return ";".join(f"{k}={int(v)}" for k, v in items)
    raise ValueError(f"unknown record kind {kind!r}")


def _decode_payload(kind: str, text: str):
    if kind in ("lambda", "scalar"):
        return float(text)
    if kind == "partition":
        return int(text)
    if kind == "peer":
        out = {}
        if text:
            for item in text.split(";"):
                k, v = item.split("=", 1)
                out[k] = float(v)
        return out
    if kind == "placement":
        out = {}
        if text:
            for item in text.split(";"):
                k, v = item.split("=", 1)
                out[k] = int(v)
        return out
    raise ValueError(f"unknown record kind {kind!r}")


def save_store(store: MemoryStore, path) -> None:
    lines = [LTM_FORMAT_TAG]
    for key, rec in store._ltm.items():
        lines.append(
            "\t".join(
                (
                    key,
                    rec.kind,
                    _encode_payload(rec.kind, rec.payload),
                    _fmt_real(rec.success_score),
                    _fmt_real(rec.last_used),
                    str(rec.use_count),
                )
            )
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_store(path, alpha: float = 0.7, ltm_capacity: int = LTM_CAPACITY) -> MemoryStore:
    store = MemoryStore(alpha=alpha, ltm_capacity=ltm_capacity)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != LTM_FORMAT_TAG:
            raise ValueError(f"bad persistence header {header!r}, expected {LTM_FORMAT_TAG!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ValueError(f"malformed record at line {lineno}: {line!r}")
            key, kind, payload_text, score, last_used, use_count = parts
            rec = LtmRecord(
                key=key,
                kind=kind,
                payload=_decode_payload(kind, payload_text),
                success_score=float(score),
                last_used=float(last_used),
                use_count=int(use_count),
            )
            rec.validate()
            store._ltm[key] = rec
            store._clock = max(store._clock, rec.last_used)
    return store
