"""Concurrent parameter-server runtime: per-block server cells applying prox
updates on push, worker threads computing delayed block gradients, and a
partially-synchronous staleness barrier.

Locking discipline: each block cell has its own lock; the global update
counter has a separate innermost lock (never held while acquiring anything
else). Writers take exactly one cell lock; telemetry snapshots take all cell
locks in ascending index order. Workers share nothing but the problem data
(immutable), the server cells, and the barrier; every worker owns private
RNG streams.
"""
from __future__ import annotations

import threading
import time
import zlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data_io import sample_with_replacement
from .objective import stochastic_block_gradient
from .prox import prox_block
from .simulate import (
    MAX_ABS_ITERATE,
    DivergedError,
    TelemetryRow,
    Trajectory,
    _telemetry_row,
)


class DeadlockError(RuntimeError):
    """Barrier wait exceeded its timeout; carries the watermark snapshot."""

    def __init__(self, worker, t, watermarks, timeout_s):
        super().__init__(
            f"worker {worker} stalled at local iteration {t} for {timeout_s:.0f}s; "
            f"watermarks={list(watermarks)}"
        )
        self.watermarks = list(watermarks)


class EngineFailure(RuntimeError):
    """A worker failed; partial telemetry and reports are attached."""

    def __init__(self, cause, trajectory, reports):
        super().__init__(f"worker failure: {cause}")
        self.cause = cause
        self.trajectory = trajectory
        self.reports = reports


# ---------------------------------------------------------------------------
# block assignment policies


@dataclass(frozen=True)
class Pinned:
    """Worker always updates the same block."""

    block: int

    def choose(self, rng, num_blocks):
        if not 0 <= self.block < num_blocks:
            raise ValueError(f"pinned block {self.block} out of range")
        return self.block


class UniformBlocks:
    """Worker draws a block uniformly each iteration (consumes one word)."""

    def choose(self, rng, num_blocks):
        return int(rng.integers(num_blocks, 1)[0])


# ---------------------------------------------------------------------------
# server state


@dataclass
class PushRequest:
    worker: int
    local_iter: int
    block: int
    gradient: np.ndarray
    eta: float


class PullResponse(NamedTuple):
    """Single-block read: a private copy of some committed version."""

    block: int
    value: np.ndarray
    version: int
    committed_k: int


def _cell_checksum(value, version):
    return zlib.crc32(value.tobytes()) ^ (version & 0xFFFFFFFF)


class _BlockCell:
    __slots__ = ("lock", "value", "version", "committed_k", "checksum")

    def __init__(self, value):
        self.lock = threading.Lock()
        self.value = value.copy()
        self.version = 0
        self.committed_k = 0
        self.checksum = _cell_checksum(self.value, 0)


class ServerState:
    """M block cells plus a global commit counter capped at ``limit``.

    Each committed push advances exactly one block version and the global
    counter by one; commit order within a block matches global order. With
    ``record_history`` every commit logs (k, block, version, eta, gradient)
    for post-hoc linearizability checks.
    """

    def __init__(self, problem, x0, limit, record_history=False):
        self.problem = problem
        self.layout = problem.layout
        self.limit = int(limit)
        x0 = np.asarray(x0, dtype=np.float64)
        self.cells = [
            _BlockCell(x0[self.layout.slice(j)])
            for j in range(self.layout.num_blocks)
        ]
        self._klock = threading.Lock()
        self.k = 0
        self.halted = None  # DivergedError once any block blows up
        self.history = [] if record_history else None
        self._history_lock = threading.Lock()

    def snapshot(self):
        """Consistent (k, model) pair; takes all cell locks in index order."""
        for cell in self.cells:
            cell.lock.acquire()
        try:
            with self._klock:
                k = self.k
            x = np.concatenate([cell.value for cell in self.cells])
        finally:
            for cell in reversed(self.cells):
                cell.lock.release()
        return k, x

    def model(self):
        return self.snapshot()[1]


def server_pull(state, j):
    """Atomically consistent copy of block j (single block only; cross-block
    consistency is deliberately not provided)."""
    cell = state.cells[j]
    with cell.lock:
        value = cell.value.copy()
        version = cell.version
        committed_k = cell.committed_k
        checksum = cell.checksum
    if _cell_checksum(value, version) != checksum:
        raise RuntimeError(f"torn read detected on block {j}")
    return PullResponse(j, value, version, committed_k)


def server_push(state, req):
    """Apply x_j <- prox(x_j - eta * g_j) atomically; returns the committed
    global iteration index, or None when the commit budget is exhausted."""
    j = req.block
    if not 0 <= j < state.layout.num_blocks:
        raise ValueError(f"push to unknown block {j}")
    g = np.asarray(req.gradient, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError(f"worker {req.worker}: non-finite gradient rejected")
    if not (req.eta > 0 and np.isfinite(req.eta)):
        raise ValueError(f"worker {req.worker}: bad step size {req.eta}")
    cell = state.cells[j]
    with cell.lock:
        if state.halted is not None:
            raise state.halted
        new_val = prox_block(state.problem.reg, req.eta, cell.value - req.eta * g, j)
        if not np.all(np.isfinite(new_val)) or np.abs(new_val).max() > MAX_ABS_ITERATE:
            with state._klock:
                err = DivergedError(state.k, f"block {j} diverged")
            state.halted = err
            raise err
        with state._klock:
            if state.k >= state.limit:
                return None
            state.k += 1
            my_k = state.k
        cell.value = new_val
        cell.version += 1
        cell.committed_k = my_k
        cell.checksum = _cell_checksum(new_val, cell.version)
        version = cell.version
    if state.history is not None:
        with state._history_lock:
            state.history.append((my_k, j, version, req.eta, g.copy()))
    return my_k


# ---------------------------------------------------------------------------
# staleness barrier


class StalenessBarrier:
    """Partially-synchronous gate: a worker may run local iteration t only
    once every worker has completed iteration t - T. Wakes all waiters on
    every advance."""

    def __init__(self, num_workers, T, timeout_s=60.0):
        if num_workers < 1 or T < 0:
            raise ValueError("need num_workers >= 1 and T >= 0")
        self.T = int(T)
        self.timeout_s = float(timeout_s)
        self.completed = [0] * num_workers
        self._cond = threading.Condition()
        self._stopped = False

    def min_watermark(self):
        with self._cond:
            return min(self.completed)

    def wait_ready(self, worker, t):
        """Block until iteration t may run; False means the run is stopping."""
        deadline = time.monotonic() + self.timeout_s
        with self._cond:
            while min(self.completed) < t - self.T:
                if self._stopped:
                    return False
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise DeadlockError(worker, t, self.completed, self.timeout_s)
                self._cond.wait(min(remaining, 0.1))
            return not self._stopped

    def mark_done(self, worker, t):
        with self._cond:
            self.completed[worker] = t + 1
            self._cond.notify_all()

    def retire(self, worker):
        """Exited worker: never hold the others back again."""
        with self._cond:
            self.completed[worker] = 1 << 62
            self._cond.notify_all()

    def stop(self):
        with self._cond:
            self._stopped = True
            self._cond.notify_all()


# ---------------------------------------------------------------------------
# workers


@dataclass
class WorkerReport:
    worker: int
    iters: int
    pushes: int
    pulls: int
    mean_wait_s: float
    max_observed_staleness: int
    barrier_violations: int = 0


WORKER_CSV_HEADER = "worker,iters,pushes,pulls,mean_wait_s,max_observed_staleness"


def worker_reports_to_csv(reports):
    lines = [WORKER_CSV_HEADER]
    for r in reports:
        lines.append(
            f"{r.worker},{r.iters},{r.pushes},{r.pulls},"
            f"{r.mean_wait_s:.17g},{r.max_observed_staleness}"
        )
    return "\n".join(lines) + "\n"


def _pull_model(state, counters=None):
    """Full-model pull, one block at a time (blocks may come from different
    commits; that inconsistency is the point). Returns (x_hat, pull_ks)."""
    layout = state.layout
    x_hat = np.empty(layout.total_dim)
    pull_ks = np.empty(layout.num_blocks, dtype=np.int64)
    for j in range(layout.num_blocks):
        resp = server_pull(state, j)
        x_hat[layout.slice(j)] = resp.value
        with state._klock:
            pull_ks[j] = state.k
        if counters is not None:
            counters["pulls"] += 1
    return x_hat, pull_ks


def worker_loop(
    state,
    worker_id,
    assignment,
    steps,
    barrier,
    iterations,
    N,
    rng_batch,
    rng_block,
    stop=None,
    on_commit=None,
):
    """One worker: wait on the barrier, draw a batch, compute the gradient of
    one block at the last pulled (possibly inconsistent) snapshot, push it,
    pull a fresh snapshot, advance the watermark.

    ``iterations=None`` runs until the server's commit budget is exhausted or
    ``stop`` is set. Returns a WorkerReport; ``max_observed_staleness`` is an
    upper bound: commits anywhere in the system between this worker's pull
    and its next push.
    """
    problem = state.problem
    n = problem.num_samples
    counters = {"pulls": 0}
    pushes = 0
    waits = []
    max_stale = 0
    violations = 0
    x_hat, pull_ks = _pull_model(state, counters)
    t = 0
    try:
        while iterations is None or t < iterations:
            if stop is not None and stop.is_set():
                break
            t_wait = time.monotonic()
            if not barrier.wait_ready(worker_id, t):
                break
            waits.append(time.monotonic() - t_wait)
            if barrier.min_watermark() < t - barrier.T:
                violations += 1  # watermarks only grow, so this must never fire

            batch = sample_with_replacement(rng_batch, n, N)
            j = assignment.choose(rng_block, problem.layout.num_blocks)
            g_j = stochastic_block_gradient(problem, x_hat, batch, j)
            eta = float(steps.eta(t))
            my_k = server_push(
                state, PushRequest(worker_id, t, j, g_j, eta)
            )
            if my_k is None:
                break
            pushes += 1
            max_stale = max(max_stale, int(my_k - 1 - pull_ks.min()))
            if on_commit is not None:
                on_commit(my_k, j, eta, max_stale)
            x_hat, pull_ks = _pull_model(state, counters)
            barrier.mark_done(worker_id, t)
            t += 1
    finally:
        barrier.retire(worker_id)
    return WorkerReport(
        worker=worker_id,
        iters=t,
        pushes=pushes,
        pulls=counters["pulls"],
        mean_wait_s=float(np.mean(waits)) if waits else 0.0,
        max_observed_staleness=max_stale,
        barrier_violations=violations,
    )


# ---------------------------------------------------------------------------
# cluster driver


@dataclass
class ClusterResult:
    trajectory: Trajectory
    reports: list
    state: ServerState


def run_cluster_on(
    problem,
    steps,
    K,
    N,
    seed,
    workers=1,
    T=0,
    assignment="random",
    x0=None,
    telemetry_stride=50,
    timeout_s=60.0,
    record_history=False,
):
    """Launch per-block server cells plus ``workers`` threads and run until
    exactly K block updates have committed.

    Worker w draws batches from stream 1+4w and blocks from stream 2+4w of
    ``seed``, so a single worker replays the simulator's draw sequence
    exactly. ``assignment`` is "random" or an int pinning every worker to one
    block (or a list with one entry per worker).
    """
    from .data_io import batch_stream, block_stream

    if K < 0 or N < 1 or workers < 1 or T < 0:
        raise ValueError("need K >= 0, N >= 1, workers >= 1, T >= 0")
    x_start = np.zeros(problem.dim) if x0 is None else np.asarray(x0, float)
    state = ServerState(problem, x_start, limit=K, record_history=record_history)
    t0 = time.perf_counter()
    rows = [_telemetry_row(problem, x_start, 0, -1, float(steps.eta(0)), 0)]
    if K == 0:
        return ClusterResult(
            Trajectory(rows=rows, final_model=x_start.copy(), iterations=0),
            [],
            state,
        )

    if assignment == "random":
        policies = [UniformBlocks()] * workers
    elif isinstance(assignment, int):
        policies = [Pinned(assignment)] * workers
    else:
        policies = [Pinned(a) if isinstance(a, int) else a for a in assignment]
        if len(policies) != workers:
            raise ValueError("need one assignment per worker")

    barrier = StalenessBarrier(workers, T, timeout_s)
    stop = threading.Event()
    row_lock = threading.Lock()
    reports = [None] * workers
    failures = []

    def on_commit(k, j, eta, max_stale):
        if k % telemetry_stride == 0 or k == K:
            k_snap, x_snap = state.snapshot()
            row = _telemetry_row(
                problem, x_snap, k_snap, j, eta, max_stale,
                elapsed_s=time.perf_counter() - t0,
            )
            with row_lock:
                rows.append(row)
        if k == K:
            stop.set()
            barrier.stop()

    def run_worker(w):
        try:
            reports[w] = worker_loop(
                state,
                w,
                policies[w],
                steps,
                barrier,
                None,
                N,
                batch_stream(seed, w),
                block_stream(seed, w),
                stop=stop,
                on_commit=on_commit,
            )
        except BaseException as exc:  # noqa: BLE001 - surfaced to the caller
            failures.append(exc)
            stop.set()
            barrier.stop()

    threads = [
        threading.Thread(target=run_worker, args=(w,), name=f"worker-{w}")
        for w in range(workers)
    ]
    for th in threads:
        th.start()
    for th in threads:
        th.join()

    rows.sort(key=lambda r: (r.k, r.elapsed_s))
    final = state.model()
    traj = Trajectory(rows=rows, final_model=final, iterations=state.k)
    live_reports = [r for r in reports if r is not None]
    if failures:
        primary = failures[0]
        if isinstance(primary, DivergedError):
            primary.trajectory = traj
            primary.reports = live_reports
            raise primary
        raise EngineFailure(primary, traj, live_reports) from primary
    return ClusterResult(traj, live_reports, state)


def run_cluster(config):
    """RunConfig adapter around :func:`run_cluster_on`."""
    problem, x0 = config.build()
    return run_cluster_on(
        problem,
        config.step_schedule(),
        K=config.iterations,
        N=config.batch_size,
        seed=config.seed,
        workers=config.workers,
        T=config.staleness,
        assignment=config.assignment,
        x0=x0,
        telemetry_stride=config.telemetry_stride,
        timeout_s=config.timeout_s,
    )


def replay_block_history(state, x0):
    """Serially re-apply each block's logged pushes in commit order; returns
    the replayed final model for linearizability checks."""
    if state.history is None:
        raise ValueError("state was not recording history")
    layout = state.layout
    x = np.asarray(x0, dtype=np.float64).copy()
    for _, j, _, eta, g in sorted(state.history, key=lambda rec: rec[0]):
        sl = layout.slice(j)
        x[sl] = prox_block(state.problem.reg, eta, x[sl] - eta * g, j)
    return x
