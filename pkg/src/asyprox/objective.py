"""Sparse logistic-regression objective: smooth loss, gradient oracles, and
constant estimators.

The composite objective splits as  psi(x) = f(x) + h(x)  where
f(x) = (1/n) sum_i log(1 + exp(-b_i <a_i, x>))  is handled here and the
nonsmooth h lives in :mod:`asyprox.prox`. Gradients exclude h; the prox step
accounts for it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .prox import BlockLayout, Regularizer, as_model_vector


@dataclass(frozen=True)
class SparseDataset:
    """CSR-encoded design matrix with +-1 labels.

    Row i holds the sorted nonzero features of sample i; ``labels[i]`` is +1
    or -1. Indices are 0-based and strictly increasing within a row, values
    finite and nonzero.
    """

    num_samples: int
    num_features: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    labels: np.ndarray
    matrix: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.float64)
        n, d = self.num_samples, self.num_features
        if n < 1 or d < 1:
            raise ValueError("dataset must have n >= 1 samples and d >= 1 features")
        if indptr.shape != (n + 1,) or indptr[0] != 0 or indptr[-1] != indices.size:
            raise ValueError("malformed CSR index pointer")
        if np.any(np.diff(indptr) < 0):
            raise ValueError("CSR index pointer must be nondecreasing")
        if indices.size != values.size:
            raise ValueError("indices and values length mismatch")
        if indices.size and (indices.min() < 0 or indices.max() >= d):
            raise ValueError("feature index out of range")
        for i in range(n):
            row = indices[indptr[i] : indptr[i + 1]]
            if row.size > 1 and np.any(np.diff(row) <= 0):
                raise ValueError(f"row {i}: indices must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values == 0.0):
            raise ValueError("feature values must be finite and nonzero")
        if labels.shape != (n,) or not np.all(np.abs(labels) == 1.0):
            raise ValueError("labels must be +-1, one per sample")
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        mat = sp.csr_matrix((values, indices, indptr), shape=(n, d))
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_rows(cls, rows, labels, num_features=None):
        """Build from per-sample [(index, value), ...] lists."""
        indptr = [0]
        indices = []
        values = []
        for row in rows:
            for idx, val in row:
                indices.append(idx)
                values.append(val)
            indptr.append(len(indices))
        if num_features is None:
            num_features = (max(indices) + 1) if indices else 1
        return cls(
            num_samples=len(indptr) - 1,
            num_features=num_features,
            indptr=np.array(indptr, dtype=np.int64),
            indices=np.array(indices, dtype=np.int64),
            values=np.array(values, dtype=np.float64),
            labels=np.asarray(labels, dtype=np.float64),
        )

    def row(self, i):
        """(indices, values) of sample i."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.values[lo:hi]

    @property
    def nnz(self):
        return int(self.indices.size)


@dataclass(frozen=True)
class LogisticProblem:
    """Dataset + block layout + regularizer, the full composite problem."""

    data: SparseDataset
    layout: BlockLayout
    reg: Regularizer

    def __post_init__(self):
        if self.layout.total_dim != self.data.num_features:
            raise ValueError(
                f"layout dimension {self.layout.total_dim} != "
                f"feature count {self.data.num_features}"
            )
        if self.reg.layout != self.layout:
            raise ValueError("regularizer layout differs from problem layout")

    @property
    def dim(self):
        return self.data.num_features

    @property
    def num_samples(self):
        return self.data.num_samples


class ObjectiveValue(NamedTuple):
    smooth: float
    nonsmooth: float
    total: float


def check_batch(batch, num_samples):
    """Validate a with-replacement index batch (duplicates allowed)."""
    b = np.asarray(batch, dtype=np.int64)
    if b.ndim != 1 or b.size < 1:
        raise ValueError("batch must be a nonempty 1-D index array")
    if b.min() < 0 or b.max() >= num_samples:
        raise ValueError("batch index out of range")
    return b


def smooth_loss(problem, x):
    """f(x) = (1/n) sum_i log(1 + exp(-b_i <a_i, x>)), overflow-safe.

    Uses log1p(exp(-t)) for t >= 0 and -t + log1p(exp(t)) for t < 0
    (np.logaddexp evaluates exactly this split).
    """
    x = as_model_vector(x, problem.dim)
    t = problem.data.labels * (problem.data.matrix @ x)
    return float(np.logaddexp(0.0, -t).sum() / problem.num_samples)


def full_objective(problem, x):
    """(f, h, f + h) at x."""
    f = smooth_loss(problem, x)
    h = problem.reg.value(x)
    return ObjectiveValue(f, h, f + h)


def full_gradient(problem, x):
    """grad f(x) = (1/n) sum_i -b_i sigma(-b_i <a_i, x>) a_i.

    The regularizer is excluded; the prox step handles it.
    """
    x = as_model_vector(x, problem.dim)
    b = problem.data.labels
    t = problem.data.matrix @ x
    coeff = -b * expit(-b * t) / problem.num_samples
    return np.asarray(problem.data.matrix.T @ coeff)


def batch_gradient(problem, x_hat, batch):
    """Average stochastic gradient (1/N) sum_{i in batch} grad F(x_hat; i)."""
    x_hat = as_model_vector(x_hat, problem.dim)
    batch = check_batch(batch, problem.num_samples)
    sub = problem.data.matrix[batch]
    b = problem.data.labels[batch]
    t = sub @ x_hat
    coeff = -b * expit(-b * t) / batch.size
    return np.asarray(sub.T @ coeff)


def stochastic_block_gradient(problem, x_hat, batch, j):
    """Block j of the batch-average stochastic gradient.

    With a batch enumerating every sample exactly once this equals block j of
    :func:`full_gradient`.
    """
    return batch_gradient(problem, x_hat, batch)[problem.layout.slice(j)]


def sample_gradient(problem, x, i):
    """grad F(x; i) for a single sample, as a dense vector."""
    x = as_model_vector(x, problem.dim)
    idx, val = problem.data.row(i)
    b = problem.data.labels[i]
    t = float(np.dot(val, x[idx]))
    c = -b * float(expit(-b * t))
    g = np.zeros(problem.dim)
    g[idx] = c * val
    return g


class LipschitzEstimate(NamedTuple):
    full: float
    block_max: float
    degenerate: bool


_SPECTRUM_ITERS = 20
_SPECTRUM_INFLATION = 1.1
_DEGENERATE_EPS = 1e-12


def _largest_eigenvalue(matrix, n):
    """Power-iteration estimate of lambda_max((1/n) A^T A), deterministic start."""
    d = matrix.shape[1]
    v = np.full(d, 1.0 / np.sqrt(d))
    lam = 0.0
    for _ in range(_SPECTRUM_ITERS):
        w = matrix.T @ (matrix @ v) / n
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam = norm
    return float(np.dot(v, matrix.T @ (matrix @ v) / n))


def estimate_lipschitz(problem):
    """Safe upper bounds (L, L_max) for the smooth-gradient Lipschitz constants.

    L comes from the logistic curvature bound 1/4 times a power-iteration
    estimate of the top eigenvalue of (1/n) A^T A, inflated by 10%; L_max is
    the same estimate restricted to each block's columns, clamped to L.
    Returns (eps, eps) flagged degenerate for an all-zero design matrix.
    """
    mat = problem.data.matrix
    n = problem.num_samples
    lam = _largest_eigenvalue(mat, n)
    if lam == 0.0:
        return LipschitzEstimate(_DEGENERATE_EPS, _DEGENERATE_EPS, True)
    full = _SPECTRUM_INFLATION * 0.25 * lam
    csc = mat.tocsc()
    block_max = 0.0
    for j in range(problem.layout.num_blocks):
        sl = problem.layout.slice(j)
        lam_j = _largest_eigenvalue(csc[:, sl.start : sl.stop], n)
        block_max = max(block_max, _SPECTRUM_INFLATION * 0.25 * lam_j)
    if block_max == 0.0:
        block_max = _DEGENERATE_EPS
    return LipschitzEstimate(full, min(block_max, full), False)


def estimate_variance(problem, x, trials, rng=None):
    """Empirical E ||grad F(x; i) - grad f(x)||^2 over single-sample draws.

    Residuals are formed directly, so datasets where every sample gradient
    equals the mean report exactly 0. ``rng`` is an RngStream; omitted, the
    draws enumerate samples cyclically (still an unbiased design for
    trials % n == 0 and deterministic always).
    """
    if trials < 2:
        raise ValueError("need at least 2 trials")
    x = as_model_vector(x, problem.dim)
    n = problem.num_samples
    if rng is None:
        draws = np.arange(trials, dtype=np.int64) % n
    else:
        draws = rng.integers(n, trials)
    counts = np.bincount(draws, minlength=n)
    g = full_gradient(problem, x)
    total = 0.0
    for i in np.nonzero(counts)[0]:
        r = -g.copy()
        idx, val = problem.data.row(i)
        b = problem.data.labels[i]
        t = float(np.dot(val, x[idx]))
        r[idx] += (-b * float(expit(-b * t))) * val
        total += counts[i] * float(np.dot(r, r))
    return total / trials
