"""XOR-metric distributed hash table over simulated nodes.

Node identifiers are 64-bit unsigned integers and distance is bitwise XOR.
Each node keeps k-buckets: bucket i holds up to ``bucket_size`` contacts
whose distance to the owner has its highest set bit at position i (the
XOR-closest such contacts). Lookups walk greedily: hop to the known contact
strictly closest to the key until no contact improves, then query the
terminal node and its contacts for provider records. Provider records are
planted by announcements, which walk the same way and replicate the record
around the terminal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ID_BITS = 64
ID_MASK = (1 << ID_BITS) - 1
BUCKET_SIZE = 8
REPLICATION = 3


def xor_distance(a: int, b: int) -> int:
    """Kademlia-style distance: bitwise XOR of the two identifiers."""
    if not (0 <= a <= ID_MASK and 0 <= b <= ID_MASK):
        raise ValueError("node identifiers must fit in 64 bits")
    return a ^ b


def _msb_index(d: np.ndarray) -> np.ndarray:
    """Index of the highest set bit for each positive uint64 element.

    Split into 32-bit halves so the float conversion inside frexp is exact.
    """
    hi = (d >> np.uint64(32)).astype(np.float64)
    lo = (d & np.uint64(0xFFFFFFFF)).astype(np.float64)
    use_hi = hi > 0
    _, exp = np.frexp(np.where(use_hi, hi, lo))
    return (np.where(use_hi, exp + 32, exp) - 1).astype(np.int64)


@dataclass
class LookupResult:
    providers: list[int]
    hops: int
    terminal: int
    nearby: list[int]


class DhtNetwork:
    """Routing tables plus per-node provider stores for a fixed membership."""

    def __init__(self, node_ids, bucket_size: int = BUCKET_SIZE, replication: int = REPLICATION):
        ids = [int(v) for v in node_ids]
        if len(set(ids)) != len(ids):
            raise ValueError("node identifiers must be unique")
        for v in ids:
            if not (0 <= v <= ID_MASK):
                raise ValueError("node identifiers must fit in 64 bits")
        if not ids:
            raise ValueError("at least one node required")
        self.ids = list(ids)
        self._arr = np.array(self.ids, dtype=np.uint64)
        self._index = {v: i for i, v in enumerate(self.ids)}
        self.bucket_size = bucket_size
        self.replication = replication
        self._contacts = self._build_tables()
        self._providers: list[dict[int, set[int]]] = [dict() for _ in self.ids]
        self.lookups = 0
        self.total_hops = 0

    def _build_tables(self) -> list[np.ndarray]:
        n = len(self.ids)
        contacts = []
        for i in range(n):
            d = self._arr ^ self._arr[i]
            others = np.nonzero(d)[0]
            if others.size == 0:
                contacts.append(np.empty(0, dtype=np.int64))
                continue
            buckets = _msb_index(d[others])
            chosen: list[np.ndarray] = []
            for b in np.unique(buckets):
                members = others[buckets == b]
                if members.size > self.bucket_size:
                    dist = d[members]
                    order = np.argsort(dist, kind="stable")[: self.bucket_size]
                    members = members[order]
                chosen.append(members)
            contacts.append(np.sort(np.concatenate(chosen)))
        return contacts

    def contacts_of(self, node: int) -> list[int]:
        return [self.ids[j] for j in self._contacts[self._lookup_index(node)]]

    def _lookup_index(self, node: int) -> int:
        try:
            return self._index[int(node)]
        except KeyError:
            raise ValueError(f"unknown node id {node}") from None

    def _greedy_walk(self, cid: int, origin: int) -> tuple[int, int]:
        cur = self._lookup_index(origin)
        key = np.uint64(cid & ID_MASK)
        best = int(self._arr[cur] ^ key)
        hops = 0
        while True:
            neigh = self._contacts[cur]
            if neigh.size == 0:
                break
            dist = self._arr[neigh] ^ key
            j = int(np.argmin(dist))
            if int(dist[j]) < best:
                cur = int(neigh[j])
                best = int(dist[j])
                hops += 1
            else:
                break
        return cur, hops

    def announce(self, cid: int, provider: int, origin: int | None = None) -> int:
        """Plant a provider record at the node closest to the key (replicated).

        Returns the hop count of the placement walk.
        """
        self._lookup_index(provider)
        start = provider if origin is None else origin
        terminal, hops = self._greedy_walk(cid, start)
        targets = [terminal]
        neigh = self._contacts[terminal]
        if neigh.size:
            dist = self._arr[neigh] ^ np.uint64(cid & ID_MASK)
            order = np.argsort(dist, kind="stable")[: self.replication]
            targets.extend(int(neigh[k]) for k in order)
        for t in targets:
            self._providers[t].setdefault(cid, set()).add(int(provider))
        return hops

    def find_providers(self, cid: int, origin: int) -> LookupResult:
        """Iterative greedy lookup; empty provider list is a result, not an error."""
        terminal, hops = self._greedy_walk(cid, origin)
        found: set[int] = set()
        found.update(self._providers[terminal].get(cid, ()))
        nearby_idx = [terminal] + [int(j) for j in self._contacts[terminal]]
        for j in self._contacts[terminal]:
            found.update(self._providers[int(j)].get(cid, ()))
        self.lookups += 1
        self.total_hops += hops
        return LookupResult(
            providers=sorted(found),
            hops=hops,
            terminal=self.ids[terminal],
            nearby=sorted(self.ids[j] for j in nearby_idx),
        )
