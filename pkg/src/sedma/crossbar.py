"""Simulated resistive crossbar matrix-vector multiplication.

A crossbar holds a target matrix A as programmed conductances. Programming
is noisy (multiplicative lognormal per write attempt) and closed-loop: each
cell is rewritten until its relative error is within tolerance or the
attempt budget runs out. Reads apply fresh multiplicative Gaussian noise
per cell. Error handling is two-stage:

 1. three-product correction: p = A @ x~ + A~ @ x - A~ @ x~, which cancels
    the noise terms that are linear in the perturbations and leaves only
    the second-order cross term;
 2. smoothing denoise: solve (I + lam * L^T L) y = p where L is the
    first-difference operator, via an O(n) tridiagonal solve (the system
    is symmetric positive definite and strictly diagonally dominant for
    all lam >= 0).

All randomness flows from the seed of the NoiseModel; a fixed seed gives
bit-identical streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .memory import DEFAULT_LAMBDA, Observation, StmWindow

DEVICE_MAX_DIM = 256

# Calibration grid {1e-14, 1e-13, ..., 1e-2}, ascending so ties resolve to
# the smaller weight.
LAMBDA_GRID = tuple(10.0 ** e for e in range(-14, -1))

_PROBE_SEED_MIX = 0x9E3779B97F4A7C15


class DeviceLimitError(ValueError):
    """Matrix exceeds the device dimensions; route it through the partitioner."""


@dataclass
class NoiseModel:
    """Multiplicative device noise: lognormal writes, Gaussian reads.

    write_sigma is the log-scale stddev of one programming attempt;
    read_sigma is the relative stddev applied per cell per read. Both zero
    means exact arithmetic.
    """

    write_sigma: float = 0.02
    read_sigma: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.write_sigma < 0 or self.read_sigma < 0:
            raise ValueError("noise sigmas must be nonnegative")

    @property
    def noiseless(self) -> bool:
        return self.write_sigma == 0.0 and self.read_sigma == 0.0

    def spawn(self, index: int) -> "NoiseModel":
        """Derived stream for partition ``index`` (seed XOR partition index)."""
        return NoiseModel(self.write_sigma, self.read_sigma, self.seed ^ index)


@dataclass
class CrossbarArray:
    """A programmed device: target matrix, realized conductances, noise stream."""

    target: np.ndarray
    programmed: np.ndarray
    program_iterations: int
    noise: NoiseModel
    rng: np.random.Generator = field(repr=False, default=None)

    @property
    def shape(self) -> tuple[int, int]:
        return self.target.shape

    def read_mvm(self, x: np.ndarray) -> np.ndarray:
        """One analog product: fresh per-cell read noise on the conductances."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.programmed.shape[1],):
            raise ValueError(
                f"vector length {x.shape} does not match array columns {self.programmed.shape[1]}"
            )
        return _noisy_product(self.programmed, x, self.rng, self.noise.read_sigma)

    def program_vector(self, x: np.ndarray, tol: float = 0.01, max_iters: int = 10) -> np.ndarray:
        """Write-and-verify the input vector on this array's noise stream."""
        x = np.asarray(x, dtype=np.float64)
        programmed, iters = _write_verify(x, self.rng, self.noise.write_sigma, tol, max_iters)
        self.program_iterations += int(iters)
        return programmed


def _noisy_product(matrix: np.ndarray, x: np.ndarray, rng, sigma: float) -> np.ndarray:
    if sigma == 0.0:
        return matrix @ x
    factors = 1.0 + rng.normal(0.0, sigma, size=matrix.shape)
    return (matrix * factors) @ x


def _write_verify(target: np.ndarray, rng, sigma: float, tol: float, max_iters: int):
    """Per-cell closed loop: rewrite until relative error <= tol, keep best.

    Vectorized as whole-array rounds with a pending mask; zero targets are
    exact immediately because the noise is multiplicative.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    target = np.asarray(target, dtype=np.float64)
    best = np.array(target, dtype=np.float64, copy=True)
    best_err = np.full(target.shape, np.inf)
    iterations = np.zeros(target.shape, dtype=np.int64)
    pending = np.ones(target.shape, dtype=bool)
    denom = np.where(target != 0.0, np.abs(target), 1.0)
    for _ in range(max_iters):
        if not pending.any():
            break
        factors = np.exp(rng.normal(0.0, sigma, size=target.shape))
        written = target * factors
        rel = np.abs(written - target) / denom
        improved = pending & (rel < best_err)
        best[improved] = written[improved]
        best_err[improved] = rel[improved]
        iterations[pending] += 1
        pending &= rel > tol
    return best, int(iterations.sum())


def program_write_verify(
    A: np.ndarray,
    noise: NoiseModel,
    tol: float = 0.01,
    max_iters: int = 10,
    max_dim: int = DEVICE_MAX_DIM,
    g_max: float | None = None,
) -> CrossbarArray:
    """Program a matrix through the closed-loop write-and-verify protocol.

    Rejects matrices that exceed the device dimensions (the partitioner is
    responsible for tiling those) or the conductance ceiling when one is
    configured.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    m, n = A.shape
    if m > max_dim or n > max_dim:
        raise DeviceLimitError(
            f"matrix {m}x{n} exceeds device max {max_dim}x{max_dim}; "
            "partition it before programming"
        )
    if g_max is not None and np.abs(A).max(initial=0.0) > g_max:
        raise ValueError(f"matrix entries exceed the conductance ceiling {g_max}")
    rng = np.random.default_rng(noise.seed)
    programmed, iters = _write_verify(A, rng, noise.write_sigma, tol, max_iters)
    return CrossbarArray(
        target=A,
        programmed=programmed,
        program_iterations=iters,
        noise=noise,
        rng=rng,
    )


def first_order_correct(
    A: np.ndarray,
    x: np.ndarray,
    xbar: CrossbarArray,
    x_programmed: np.ndarray,
) -> np.ndarray:
    """p = A @ x~ + A~ @ x - A~ @ x~.

    With A~ = A + dA and x~ = x + dx this equals A @ x - dA @ dx exactly,
    so the residual scales with the product of the perturbations. Each of
    the three products is taken through the read path (noisy when the read
    sigma is nonzero, exact otherwise).
    """
    A = np.asarray(A, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    x_programmed = np.asarray(x_programmed, dtype=np.float64)
    m, n = A.shape
    if xbar.programmed.shape != (m, n) or x.shape != (n,) or x_programmed.shape != (n,):
        raise ValueError("inconsistent shapes across A, x, the array, and x_programmed")
    sigma = xbar.noise.read_sigma
    t1 = _noisy_product(A, x_programmed, xbar.rng, sigma)
    t2 = _noisy_product(xbar.programmed, x, xbar.rng, sigma)
    t3 = _noisy_product(xbar.programmed, x_programmed, xbar.rng, sigma)
    return t1 + t2 - t3


def difference_operator(n: int) -> np.ndarray:
    """Dense (n-1) x n first-difference matrix with rows (..., -1, +1, ...)."""
    if n < 2:
        raise ValueError("difference operator needs n >= 2")
    L = np.zeros((n - 1, n))
    idx = np.arange(n - 1)
    L[idx, idx] = -1.0
    L[idx, idx + 1] = 1.0
    return L


def denoise(p: np.ndarray, lambda_t: float, warnings=None) -> np.ndarray:
    """Solve (I + lam * L^T L) y = p by the Thomas algorithm.

    L^T L is tridiagonal with main diagonal (1, 2, ..., 2, 1) and -1 off
    diagonals, so the system matrix has main diagonal 1 + lam * d_i and
    off-diagonal -lam. No pivoting is needed: the matrix is strictly
    diagonally dominant for every lam >= 0. Inputs shorter than 2 pass
    through unchanged (the operator is undefined there).
    """
    if lambda_t < 0:
        raise ValueError("lambda_t must be nonnegative")
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[0]
    if n < 2:
        if warnings is not None:
            warnings["denoise_short_input"] += 1
        return p.copy()
    lam = float(lambda_t)
    diag = np.full(n, 1.0 + 2.0 * lam)
    diag[0] = 1.0 + lam
    diag[-1] = 1.0 + lam
    off = -lam

    # Thomas forward sweep.
    c_prime = np.empty(n - 1)
    d_prime = np.empty(n)
    beta = diag[0]
    d_prime[0] = p[0] / beta
    for i in range(1, n):
        c_prime[i - 1] = off / beta
        beta = diag[i] - off * c_prime[i - 1]
        d_prime[i] = (p[i] - off * d_prime[i - 1]) / beta
    # Back substitution.
    y = np.empty(n)
    y[-1] = d_prime[-1]
    for i in range(n - 2, -1, -1):
        y[i] = d_prime[i] - c_prime[i] * y[i + 1]
    return y


def estimate_lambda_recent(
    stm: StmWindow | None,
    xbar: CrossbarArray,
    enabled: bool = True,
    num_probes: int = 3,
    rng: np.random.Generator | None = None,
    now: float = 0.0,
    grid: tuple[float, ...] = LAMBDA_GRID,
) -> float:
    """Calibrate the smoothing weight against exact software ground truth.

    Runs ``num_probes`` probe reads with known random vectors, scores every
    grid point by mean squared residual against the exact product, and
    returns the argmin (ties to the smaller weight; the grid is ascending).
    Residual statistics land in the short-term window. With probing
    disabled, the most recent remembered estimate is reused, else the fixed
    fallback 1e-12.
    """
    if not enabled:
        if stm is not None:
            prior = stm.latest("lambda_recent")
            if prior is not None:
                return prior.value
        return DEFAULT_LAMBDA
    if num_probes < 1:
        raise ValueError("num_probes must be at least 1")
    if rng is None:
        rng = np.random.default_rng(xbar.noise.seed ^ _PROBE_SEED_MIX)
    n = xbar.shape[1]
    probes = []
    for _ in range(num_probes):
        x = rng.standard_normal(n)
        noisy = xbar.read_mvm(x)
        exact = xbar.target @ x
        probes.append((noisy, exact))
    best_lam = grid[0]
    best_score = np.inf
    for lam in grid:
        score = 0.0
        for noisy, exact in probes:
            diff = denoise(noisy, lam) - exact
            score += float(diff @ diff)
        score /= len(probes)
        if score < best_score:
            best_score = score
            best_lam = lam
    if stm is not None:
        stm.append(Observation(t=now, kind="probe_residual", value=best_score))
        stm.append(Observation(t=now, kind="lambda_recent", value=best_lam))
    return best_lam
