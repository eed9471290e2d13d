"""Workload classification, block-decomposition costing, split and reassembly.

A matrix too large for one device is tiled into fixed-geometry blocks.
Candidate square block sizes {32, 64, 128, 256} (clipped by the device
maximum) are costed as

    total(b) = sum_i compute_cost(tile_i) + lambda_mem * sum_i mem_overhead(tile_i)

where compute cost counts expected programming attempts (analytic, from the
write noise and tolerance: a-priori costing must not simulate) plus three
reads per tile (one per product of the correction scheme), and memory
overhead is the per-block metadata/buffer budget. Ragged edges are padded
with zeros to the block shape and stripped on reassembly; padded cells
program exactly in one attempt because the write noise is multiplicative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .crossbar import NoiseModel
from .memory import LtmRecord, WorkloadClass

CANDIDATE_BLOCKS = (32, 64, 128, 256)
MIN_PARTITION_DIM = 32


@dataclass(frozen=True)
class DeviceSpec:
    """Simulated device constants used by the cost model.

    mem_block_coeff_mb scales per-block overhead: a full max_dim x max_dim
    block costs mem_block_coeff_mb megabytes, smaller blocks prorate by area.
    """

    max_dim: int = 256
    t_prog: float = 1e-6
    t_read: float = 1e-7
    mem_block_coeff_mb: float = 16.0

    def __post_init__(self):
        if self.max_dim <= 0 or self.t_prog <= 0 or self.t_read <= 0 or self.mem_block_coeff_mb <= 0:
            raise ValueError("device constants must be positive")

    def mem_overhead_mb(self, rows: int, cols: int) -> float:
        return self.mem_block_coeff_mb * (rows * cols) / float(self.max_dim**2)


@dataclass
class PartitionPlan:
    """Block decomposition with its cost-model terms.

    blocks holds the real (unpadded) index ranges ((r0, r1), (c0, c1)) in
    row-major order; tiles are physically padded to row_block x col_block.
    """

    rows: int
    cols: int
    row_block: int
    col_block: int
    blocks: list[tuple[tuple[int, int], tuple[int, int]]]
    est_compute_cost: float
    est_memory_overhead: float
    lambda_mem: float

    @property
    def num_tiles(self) -> int:
        return len(self.blocks)

    def total_cost(self) -> float:
        return self.est_compute_cost + self.lambda_mem * self.est_memory_overhead


def classify_workload(A: np.ndarray) -> WorkloadClass:
    """Bucket a matrix by size, nonzero fraction, and entry magnitude."""
    A = np.asarray(A)
    if A.ndim != 2 or A.size == 0:
        raise ValueError("expected a nonempty 2-D matrix")
    m, n = A.shape
    size_bucket = int(math.ceil(math.log2(max(m, n)))) if max(m, n) > 1 else 0
    nonzero_fraction = np.count_nonzero(A) / A.size
    if nonzero_fraction >= 0.5:
        sparsity = "dense"
    elif nonzero_fraction >= 0.1:
        sparsity = "medium"
    else:
        sparsity = "sparse"
    max_abs = float(np.abs(A).max())
    magnitude_bucket = int(math.floor(math.log10(max_abs))) if max_abs > 0 else 0
    return WorkloadClass(size_bucket, sparsity, magnitude_bucket)


def expected_program_attempts(write_sigma: float, tol: float, max_iters: int) -> float:
    """Mean attempts of the write-verify loop for one nonzero cell.

    One attempt succeeds when the lognormal factor lands within the relative
    tolerance: q = P(ln(1-tol) <= Z <= ln(1+tol)), Z ~ N(0, sigma). The loop
    is a geometric truncated at max_iters, so E = (1 - (1-q)^max_iters) / q.
    """
    if write_sigma == 0.0:
        return 1.0
    phi = lambda z: 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
    q = phi(math.log1p(tol) / write_sigma) - phi(math.log1p(-tol) / write_sigma)
    if q <= 0.0:
        return float(max_iters)
    return (1.0 - (1.0 - q) ** max_iters) / q


def _build_plan(
    m: int,
    n: int,
    row_block: int,
    col_block: int,
    dev: DeviceSpec,
    lambda_mem: float,
    attempts_per_cell: float,
) -> PartitionPlan:
    blocks = []
    compute = 0.0
    memory = 0.0
    for r0 in range(0, m, row_block):
        r1 = min(r0 + row_block, m)
        for c0 in range(0, n, col_block):
            c1 = min(c0 + col_block, n)
            blocks.append(((r0, r1), (c0, c1)))
            real = (r1 - r0) * (c1 - c0)
            padded = row_block * col_block - real
            prog_attempts = attempts_per_cell * real + padded  # pad cells: 1 attempt
            compute += prog_attempts * dev.t_prog + 3.0 * dev.t_read
            memory += dev.mem_overhead_mb(row_block, col_block)
    return PartitionPlan(
        rows=m,
        cols=n,
        row_block=row_block,
        col_block=col_block,
        blocks=blocks,
        est_compute_cost=compute,
        est_memory_overhead=memory,
        lambda_mem=lambda_mem,
    )


def optimize_partition(
    A: np.ndarray,
    dev: DeviceSpec,
    hint: Optional[LtmRecord] = None,
    lambda_mem: float = 1.0,
    noise: Optional[NoiseModel] = None,
    tol: float = 0.01,
    max_iters: int = 10,
) -> PartitionPlan:
    """Pick the candidate block size minimizing compute + lambda_mem * memory.

    A remembered block size (hint record of kind "partition") is evaluated
    first and wins ties; remaining ties prefer the larger block (fewer
    tiles). Matrices with a dimension under 32 bypass partitioning as a
    single exact block when they fit the device.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.size == 0:
        raise ValueError("expected a nonempty 2-D matrix")
    m, n = A.shape
    if lambda_mem < 0:
        raise ValueError("lambda_mem must be nonnegative")
    attempts = expected_program_attempts(noise.write_sigma if noise else 0.0, tol, max_iters)

    if (m < MIN_PARTITION_DIM or n < MIN_PARTITION_DIM) and m <= dev.max_dim and n <= dev.max_dim:
        return _build_plan(m, n, m, n, dev, lambda_mem, attempts)

    candidates = [b for b in CANDIDATE_BLOCKS if b <= dev.max_dim]
    if not candidates:
        raise ValueError(
            f"no candidate block size fits device max_dim={dev.max_dim}; need at least 32"
        )
    hint_block = None
    if hint is not None and hint.kind == "partition":
        hb = int(hint.payload)
        if hb in candidates:
            hint_block = hb

    # Hint first, then descending size: a strict < comparison makes the hint
    # win ties and larger blocks win the remaining ties.
    ordering = sorted(candidates, key=lambda b: (0 if b == hint_block else 1, -b))
    best_plan = None
    best_cost = np.inf
    for b in ordering:
        plan = _build_plan(m, n, b, b, dev, lambda_mem, attempts)
        cost = plan.total_cost()
        if cost < best_cost:
            best_cost = cost
            best_plan = plan
    return best_plan


def split_matrix(
    A: np.ndarray, x: np.ndarray, plan: PartitionPlan
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Cut (A, x) into padded tiles in the plan's row-major block order."""
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if A.shape != (plan.rows, plan.cols):
        raise ValueError(f"matrix shape {A.shape} does not match plan {(plan.rows, plan.cols)}")
    if x.shape != (plan.cols,):
        raise ValueError(f"vector length {x.shape} does not match plan columns {plan.cols}")
    tiles = []
    for (r0, r1), (c0, c1) in plan.blocks:
        a_tile = np.zeros((plan.row_block, plan.col_block))
        a_tile[: r1 - r0, : c1 - c0] = A[r0:r1, c0:c1]
        x_tile = np.zeros(plan.col_block)
        x_tile[: c1 - c0] = x[c0:c1]
        tiles.append((a_tile, x_tile))
    return tiles


def concat_results(partials: list[np.ndarray], plan: PartitionPlan) -> np.ndarray:
    """Sum column-tile partials within each row strip, then stack the strips."""
    if len(partials) != len(plan.blocks):
        raise ValueError(f"expected {len(plan.blocks)} partials, got {len(partials)}")
    strips: dict[tuple[int, int], np.ndarray] = {}
    for partial, ((r0, r1), _cols) in zip(partials, plan.blocks):
        if partial is None:
            raise ValueError("missing partial result")
        partial = np.asarray(partial, dtype=np.float64)
        if partial.shape != (plan.row_block,):
            raise ValueError(
                f"partial length {partial.shape} does not match row block {plan.row_block}"
            )
        trimmed = partial[: r1 - r0]
        if (r0, r1) in strips:
            strips[(r0, r1)] = strips[(r0, r1)] + trimmed
        else:
            strips[(r0, r1)] = trimmed.copy()
    return np.concatenate([strips[key] for key in sorted(strips.keys())])
