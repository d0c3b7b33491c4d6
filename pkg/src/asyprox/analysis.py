"""Step-size admissibility checkers, convergence metrics, and speedup tables.

The checkers evaluate, per iteration, the two admissibility inequalities for
running K single-block updates under delay bound T with M blocks:

    eta_k <= 1 / (16 L_max)
    6 eta_k L^2 T sum_{l=1..T} eta_{k+l} <= M^2

and the constant-step planning constants (step size, minimum horizon as a
function of T, and the ergodic rate bound). Iterations are indexed from 0
everywhere, matching the step schedules.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def _etas_through(steps, count):
    """First ``count`` step sizes from a schedule object or a finite array."""
    if hasattr(steps, "eta"):
        vals = np.array([float(steps.eta(k)) for k in range(count)])
    else:
        arr = np.asarray(steps, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("step array must be 1-D")
        if arr.size < count:
            raise ValueError(
                f"schedule defines {arr.size} steps, need {count} (K + T)"
            )
        vals = arr[:count].copy()
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise ValueError("every step size must be positive and finite")
    return vals


@dataclass
class ConditionReport:
    """Per-iteration admissibility booleans for k = 0..K-1."""

    K: int
    L: float
    L_max: float
    T: int
    M: int
    etas: np.ndarray
    step_ok: np.ndarray
    delay_ok: np.ndarray
    constant_delay_lhs: float | None = None  # 6 eta^2 L^2 T^2 when constant

    @property
    def all_ok(self):
        return bool(np.all(self.step_ok) and np.all(self.delay_ok))

    @property
    def first_violation(self):
        bad = np.nonzero(~(self.step_ok & self.delay_ok))[0]
        return int(bad[0]) if bad.size else None

    def to_csv(self):
        lines = ["k,eta,step_ok,delay_ok"]
        for k in range(self.K):
            lines.append(
                f"{k},{self.etas[k]:.17g},"
                f"{int(self.step_ok[k])},{int(self.delay_ok[k])}"
            )
        return "\n".join(lines) + "\n"

    def to_text(self):
        lines = [
            f"iterations checked : {self.K}",
            f"constants          : L={self.L:.17g} L_max={self.L_max:.17g} "
            f"T={self.T} M={self.M}",
            f"step bound 1/(16 L_max) = {1.0 / (16.0 * self.L_max):.17g}",
            f"step condition ok  : {int(self.step_ok.sum())}/{self.K}",
            f"delay condition ok : {int(self.delay_ok.sum())}/{self.K}",
        ]
        if self.constant_delay_lhs is not None:
            lines.append(
                f"constant-step delay lhs 6 eta^2 L^2 T^2 = "
                f"{self.constant_delay_lhs:.17g} vs M^2 = {self.M ** 2}"
            )
        fv = self.first_violation
        lines.append(
            "all conditions hold" if fv is None else f"first violation at k={fv}"
        )
        return "\n".join(lines) + "\n"


def check_step_conditions(steps, K, L, L_max, T, M):
    """Evaluate both admissibility inequalities for every iteration k < K.

    ``steps`` is a schedule object (with .eta) or an array of at least K + T
    step sizes; the delay condition looks ahead through eta_{k+T}. With T = 0
    the delay sum is empty, leaving only the step-size condition.
    """
    if K < 1:
        raise ValueError("need K >= 1")
    if L <= 0 or L_max <= 0 or M < 1 or T < 0:
        raise ValueError("need L > 0, L_max > 0, M >= 1, T >= 0")
    etas = _etas_through(steps, K + T)
    step_ok = etas[:K] <= 1.0 / (16.0 * L_max)
    if T == 0:
        delay_ok = np.ones(K, dtype=bool)
    else:
        csum = np.concatenate([[0.0], np.cumsum(etas)])
        lookahead = csum[T + 1 : K + T + 1] - csum[1 : K + 1]  # sum eta_{k+1..k+T}
        delay_ok = 6.0 * etas[:K] * L * L * T * lookahead <= M * M
    constant_lhs = None
    if etas.size and np.all(etas == etas[0]):
        constant_lhs = float(6.0 * etas[0] ** 2 * L * L * T * T)
    return ConditionReport(
        K=K,
        L=float(L),
        L_max=float(L_max),
        T=int(T),
        M=int(M),
        etas=etas[:K],
        step_ok=step_ok,
        delay_ok=delay_ok,
        constant_delay_lhs=constant_lhs,
    )


@dataclass(frozen=True)
class ConstantStepPlan:
    """Planning constants for a constant-step run of K block updates.

    ``rate_bound`` is the ergodic bound on the minimum squared stationarity
    residual; ``rate_bound_with_delay`` carries the extra (T+1) factor that
    the sharper derivation produces. ``k_min(T)`` is the horizon needed for
    delay bound T, scaling as (T+1)^4.
    """

    psi_gap: float
    M: int
    N: int
    L: float
    K: int
    sigma_sq: float
    eta: float = field(init=False)
    rate_bound: float = field(init=False)

    def __post_init__(self):
        for name in ("psi_gap", "M", "N", "L", "K", "sigma_sq"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        eta = math.sqrt(
            self.psi_gap * self.M * self.N / (self.L * self.K * self.sigma_sq)
        )
        bound = 32.0 * math.sqrt(
            2.0 * self.psi_gap * self.L * self.M * self.sigma_sq / (self.K * self.N)
        )
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "rate_bound", bound)

    def k_min(self, T):
        if T < 0:
            raise ValueError("need T >= 0")
        return (
            128.0 * self.psi_gap * self.N * self.L / (self.M ** 3 * self.sigma_sq)
        ) * (T + 1) ** 4

    def rate_bound_with_delay(self, T):
        if T < 0:
            raise ValueError("need T >= 0")
        return self.rate_bound * math.sqrt(T + 1)

    def to_text(self, T=0):
        return (
            f"constant step eta      = {self.eta:.17g}\n"
            f"rate bound             = {self.rate_bound:.17g}\n"
            f"rate bound at T={T}      = {self.rate_bound_with_delay(T):.17g}\n"
            f"horizon k_min(T={T})     = {self.k_min(T):.17g}  (scales as (T+1)^4)\n"
        )


def constant_step_plan(psi_gap, M, N, L, K, sigma_sq):
    """Constant step size, minimum horizon, and rate bound for given constants."""
    return ConstantStepPlan(psi_gap, M, N, L, K, sigma_sq)


# ---------------------------------------------------------------------------
# trajectory metrics


def suboptimality_gap(traj, psi_star):
    """(k, psi(x^k) - psi_star) per telemetry row; negatives are reported as
    is (they mean psi_star overestimates the optimum)."""
    if not np.isfinite(psi_star):
        raise ValueError("psi_star must be finite")
    ks = traj.column("k")
    return np.column_stack([ks, traj.column("psi") - psi_star])


def min_gradient_mapping(traj):
    """Smallest recorded squared stationarity residual."""
    if not traj.rows:
        raise ValueError("empty trajectory")
    return float(traj.column("gm_sq").min())


@dataclass(frozen=True)
class SpeedupRecord:
    workers: int
    iters_to_target: int | None
    time_to_target_s: float | None
    iteration_speedup: float
    time_speedup: float
    reached: bool


SPEEDUP_CSV_HEADER = (
    "p,iters_to_target,time_to_target_s,iteration_speedup,time_speedup,reached"
)


def speedup_records_to_csv(records):
    lines = [SPEEDUP_CSV_HEADER]
    for r in records:
        iters = "" if r.iters_to_target is None else str(r.iters_to_target)
        tts = "" if r.time_to_target_s is None else f"{r.time_to_target_s:.17g}"
        lines.append(
            f"{r.workers},{iters},{tts},"
            f"{r.iteration_speedup:.17g},{r.time_speedup:.17g},{int(r.reached)}"
        )
    return "\n".join(lines) + "\n"


def _first_crossing(traj, psi_star, target_gap):
    for row in sorted(traj.rows, key=lambda r: r.k):
        if row.psi - psi_star <= target_gap:
            return row.k, row.elapsed_s
    return None, None


def speedup_table(runs, target_gap, psi_star):
    """Iteration and wall-time speedups of multi-worker runs over the 1-worker
    baseline: p * T_1 / T_p and time_1 / time_p at the first telemetry row
    whose gap reaches ``target_gap``. Input order does not matter.
    """
    by_p = {}
    for p, traj in runs:
        if p < 1:
            raise ValueError("worker counts must be >= 1")
        if p in by_p:
            raise ValueError(f"duplicate run for p={p}")
        by_p[p] = traj
    if 1 not in by_p:
        raise ValueError("a 1-worker baseline run is required")
    t1_iters, t1_time = _first_crossing(by_p[1], psi_star, target_gap)
    records = []
    for p in sorted(by_p):
        iters, tts = _first_crossing(by_p[p], psi_star, target_gap)
        reached = iters is not None
        if not reached or t1_iters is None:
            it_speedup = float("nan")
            tm_speedup = float("nan")
        elif p == 1:
            it_speedup = 1.0
            tm_speedup = 1.0
        else:
            it_speedup = p * t1_iters / iters if iters > 0 else float("nan")
            tm_speedup = t1_time / tts if tts and tts > 0 else float("nan")
        records.append(
            SpeedupRecord(p, iters, tts, it_speedup, tm_speedup, reached)
        )
    return records
