"""Deterministic single-threaded executor of the block-update recursion with
injectable staleness.

One iteration updates exactly one block: draw a minibatch, draw a block
index, read a delayed snapshot of the model (per-block delays, bounded by T),
take a prox step on that block, copy the rest. A ring buffer of the last T+1
committed models serves the delayed reads. With all delays zero and a single
block this is plain proximal SGD.

Runs are pure functions of their RNG stream coordinates; telemetry rows
therefore carry a fixed 0.0 in the wall-time column so that exported CSVs
are byte-stable across repeats.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .data_io import RngStream, sample_with_replacement
from .objective import full_gradient, full_objective, stochastic_block_gradient
from .prox import as_model_vector, gradient_mapping, prox, prox_block

MAX_ABS_ITERATE = 1e12


class DivergedError(RuntimeError):
    """Iterate left the finite range; ``k`` is the failing iteration."""

    def __init__(self, k, detail="iterate diverged"):
        super().__init__(f"{detail} at iteration {k}")
        self.k = k


# ---------------------------------------------------------------------------
# step-size schedules


@dataclass(frozen=True)
class ConstantStep:
    value: float

    def __post_init__(self):
        if not (self.value > 0 and np.isfinite(self.value)):
            raise ValueError("step size must be positive and finite")

    def eta(self, k):
        return self.value


@dataclass(frozen=True)
class InverseSqrtStep:
    """eta_k = c / sqrt(1 + k), k counted from 0. Nonincreasing."""

    c: float

    def __post_init__(self):
        if not (self.c > 0 and np.isfinite(self.c)):
            raise ValueError("step coefficient must be positive and finite")

    def eta(self, k):
        return self.c / np.sqrt(1.0 + k)


# ---------------------------------------------------------------------------
# delay schedules


class ZeroDelay:
    """Every read is fresh; the serial baseline."""

    bound = 0

    def delays(self, k, num_blocks):
        return np.zeros(num_blocks, dtype=np.int64)


class ConstantPerBlockDelay:
    """Fixed per-block delays, clamped early so no pre-initial version is read."""

    def __init__(self, per_block):
        vals = np.asarray(per_block, dtype=np.int64)
        if vals.ndim != 1 or vals.size < 1 or np.any(vals < 0):
            raise ValueError("per-block delays must be a nonneg 1-D int array")
        self._vals = vals
        self.bound = int(vals.max())

    def delays(self, k, num_blocks):
        if num_blocks != self._vals.size:
            raise ValueError("delay vector length differs from block count")
        return np.minimum(self._vals, k)


class UniformRandomDelay:
    """Per-block delays iid uniform on {0..T}, derived statelessly from the
    stream coordinates so a schedule object can be reused across runs."""

    def __init__(self, T, rng):
        if T < 0:
            raise ValueError("delay bound must be >= 0")
        self.bound = int(T)
        self._base = rng.clone()

    def delays(self, k, num_blocks):
        blocks_per_iter = -(-num_blocks // 4)
        draw = RngStream(
            self._base.seed, self._base.stream, self._base.counter + k * blocks_per_iter
        )
        return np.minimum(draw.integers(self.bound + 1, num_blocks), k)


class TraceDelay:
    """Explicit K x M delay matrix."""

    def __init__(self, matrix):
        mat = np.asarray(matrix, dtype=np.int64)
        if mat.ndim != 2 or np.any(mat < 0):
            raise ValueError("trace must be a nonneg 2-D int matrix")
        self._mat = mat
        self.bound = int(mat.max()) if mat.size else 0

    def delays(self, k, num_blocks):
        if num_blocks != self._mat.shape[1]:
            raise ValueError("trace width differs from block count")
        if k >= self._mat.shape[0]:
            raise ValueError(f"trace has {self._mat.shape[0]} rows, need row {k}")
        return np.minimum(self._mat[k], k)


# ---------------------------------------------------------------------------
# version ring buffer


class VersionBuffer:
    """Ring of the last ``bound + 1`` committed models, tagged by iteration."""

    def __init__(self, x0, bound):
        x0 = as_model_vector(x0)
        self.capacity = bound + 1
        self._slots = np.zeros((self.capacity, x0.size))
        self._tags = np.full(self.capacity, -1, dtype=np.int64)
        self._slots[0] = x0
        self._tags[0] = 0
        self._latest = 0

    def commit(self, k, x):
        if k != self._latest + 1:
            raise ValueError(f"commits must be sequential, got {k} after {self._latest}")
        self._slots[k % self.capacity] = x
        self._tags[k % self.capacity] = k
        self._latest = k

    def latest(self):
        return self._slots[self._latest % self.capacity]

    def read_block(self, k, sl, staleness):
        """Block slice of the model committed at iteration k - staleness."""
        if staleness < 0 or staleness >= self.capacity:
            raise ValueError(f"staleness {staleness} outside [0, {self.capacity})")
        want = k - staleness
        slot = want % self.capacity
        if self._tags[slot] != want:
            raise ValueError(f"version {want} evicted or never committed")
        return self._slots[slot, sl]


# ---------------------------------------------------------------------------
# trajectories


class TelemetryRow(NamedTuple):
    k: int
    j: int
    eta: float
    psi: float
    gm_sq: float
    max_delay: int
    elapsed_s: float


CSV_HEADER = "k,j,eta,psi,gm_sq,max_delay,elapsed_s"


@dataclass
class Trajectory:
    """Telemetry rows (state snapshots every stride iterations plus the final
    one) and the final model."""

    rows: list
    final_model: np.ndarray
    iterations: int

    def column(self, name):
        i = TelemetryRow._fields.index(name)
        return np.array([row[i] for row in self.rows])

    def final_psi(self):
        return self.rows[-1].psi

    def min_gm_sq(self):
        return float(self.column("gm_sq").min())

    def to_csv(self):
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.k},{r.j},{r.eta:.17g},{r.psi:.17g},{r.gm_sq:.17g},"
                f"{r.max_delay},{r.elapsed_s:.17g}"
            )
        return "\n".join(lines) + "\n"


def _telemetry_row(problem, x, k, j, eta, max_delay, elapsed_s=0.0):
    psi = full_objective(problem, x).total
    gm = gradient_mapping(x, full_gradient(problem, x), eta, problem.reg)
    return TelemetryRow(k, j, eta, psi, float(np.dot(gm, gm)), max_delay, elapsed_s)


def _check_iterate(x, k):
    if not np.all(np.isfinite(x)) or np.abs(x).max() > MAX_ABS_ITERATE:
        raise DivergedError(k)


# ---------------------------------------------------------------------------
# executors


def run_global(
    problem,
    steps,
    delays,
    K,
    N,
    rng_batch,
    rng_block,
    x0=None,
    telemetry_stride=50,
):
    """Run K single-block updates against delayed snapshots.

    Per iteration k: draw N sample indices with replacement, draw a block
    uniformly, assemble the snapshot dictated by the delay schedule, take one
    prox step on that block. Telemetry (full objective and the squared norm
    of the full-gradient stationarity residual) is recorded every
    ``telemetry_stride`` iterations and at the end; the residual uses the
    true full gradient at the recorded iterate.
    """
    if K < 0 or N < 1:
        raise ValueError("need K >= 0 and N >= 1")
    if telemetry_stride < 1:
        raise ValueError("telemetry stride must be >= 1")
    layout = problem.layout
    M = layout.num_blocks
    n = problem.num_samples
    x = (
        np.zeros(problem.dim)
        if x0 is None
        else as_model_vector(x0, problem.dim).copy()
    )
    ring = VersionBuffer(x, delays.bound)
    rows = [_telemetry_row(problem, x, 0, -1, float(steps.eta(0)), 0)]
    for k in range(K):
        batch = sample_with_replacement(rng_batch, n, N)
        j = int(rng_block.integers(M, 1)[0])
        dvec = delays.delays(k, M)
        max_delay = int(dvec.max()) if M else 0
        assert np.all((0 <= dvec) & (dvec <= min(delays.bound, k))), "staleness bound"
        eta = float(steps.eta(k))

        x_cur = ring.latest()
        if max_delay == 0:
            x_hat = x_cur
        else:
            x_hat = np.empty(problem.dim)
            for jj in range(M):
                sl = layout.slice(jj)
                x_hat[sl] = ring.read_block(k, sl, int(dvec[jj]))

        g_j = stochastic_block_gradient(problem, x_hat, batch, j)
        sl = layout.slice(j)
        x_next = x_cur.copy()
        x_next[sl] = prox_block(problem.reg, eta, x_cur[sl] - eta * g_j, j)
        _check_iterate(x_next, k)
        ring.commit(k + 1, x_next)
        if (k + 1) % telemetry_stride == 0 or k + 1 == K:
            rows.append(_telemetry_row(problem, x_next, k + 1, j, eta, max_delay))

    x_final = ring.latest().copy()
    return Trajectory(rows=rows, final_model=x_final, iterations=K)


def run_serial_proxsgd(problem, steps, K, N, rng_batch, x0=None, telemetry_stride=50):
    """Full-vector proximal SGD baseline: every block updated each iteration.

    Consumes only the batch stream, with the same draw pattern as
    :func:`run_global`, so the two coincide bit-for-bit when the layout has a
    single block and delays are zero.
    """
    if K < 0 or N < 1:
        raise ValueError("need K >= 0 and N >= 1")
    if telemetry_stride < 1:
        raise ValueError("telemetry stride must be >= 1")
    from .objective import batch_gradient

    n = problem.num_samples
    x = (
        np.zeros(problem.dim)
        if x0 is None
        else as_model_vector(x0, problem.dim).copy()
    )
    rows = [_telemetry_row(problem, x, 0, -1, float(steps.eta(0)), 0)]
    for k in range(K):
        batch = sample_with_replacement(rng_batch, n, N)
        eta = float(steps.eta(k))
        g = batch_gradient(problem, x, batch)
        x = prox(problem.reg, eta, x - eta * g)
        _check_iterate(x, k)
        if (k + 1) % telemetry_stride == 0 or k + 1 == K:
            rows.append(_telemetry_row(problem, x, k + 1, -1, eta, 0))
    return Trajectory(rows=rows, final_model=x.copy(), iterations=K)


def estimate_psi_star(problem, steps, K_long, N, rng_batch, x0=None,
                      telemetry_stride=50):
    """Lowest objective value seen along a long serial reference run."""
    if K_long < 1:
        raise ValueError("need K_long >= 1")
    traj = run_serial_proxsgd(
        problem, steps, K_long, N, rng_batch, x0=x0,
        telemetry_stride=telemetry_stride,
    )
    return float(traj.column("psi").min())
