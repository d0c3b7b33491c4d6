"""Block-partitioned model vectors, closed-form proximal operators, and the
gradient-mapping stationarity residual.

Everything here is pure and operates on float64 numpy arrays. A model vector
is a plain 1-D ndarray; block structure is described by :class:`BlockLayout`
and the nonsmooth term by :class:`Regularizer`. The proximal operator is
separable across blocks, so all block-level operations are exact slices of
the full-vector ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def as_model_vector(x, dim=None):
    """Coerce to a finite float64 1-D array, optionally checking its length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"model vector must be 1-D, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("model vector contains non-finite entries")
    return v


@dataclass(frozen=True)
class BlockLayout:
    """Partition of a d-dimensional model into M contiguous blocks.

    ``block_sizes`` must sum to ``total_dim``; offsets are derived. Blocks are
    indexed 0..M-1.
    """

    total_dim: int
    block_sizes: tuple
    offsets: tuple = field(init=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        object.__setattr__(self, "block_sizes", sizes)
        if self.total_dim < 1:
            raise ValueError("total_dim must be >= 1")
        if len(sizes) < 1:
            raise ValueError("need at least one block")
        if any(s < 1 for s in sizes):
            raise ValueError("every block size must be >= 1")
        if sum(sizes) != self.total_dim:
            raise ValueError(
                f"block sizes sum to {sum(sizes)}, expected {self.total_dim}"
            )
        offs = np.concatenate([[0], np.cumsum(sizes)])
        object.__setattr__(self, "offsets", tuple(int(o) for o in offs))

    @classmethod
    def equal_split(cls, total_dim, num_blocks):
        """Near-equal contiguous partition; the first ``total_dim % num_blocks``
        blocks get one extra element."""
        if num_blocks < 1 or num_blocks > total_dim:
            raise ValueError("need 1 <= num_blocks <= total_dim")
        base, extra = divmod(total_dim, num_blocks)
        sizes = [base + 1] * extra + [base] * (num_blocks - extra)
        return cls(total_dim, tuple(sizes))

    @property
    def num_blocks(self):
        return len(self.block_sizes)

    def slice(self, j):
        """Python slice selecting block j."""
        if not 0 <= j < self.num_blocks:
            raise ValueError(f"block index {j} out of range [0, {self.num_blocks})")
        return slice(self.offsets[j], self.offsets[j + 1])


@dataclass(frozen=True)
class Regularizer:
    """Blockwise-separable convex nonsmooth term.

    Each block j carries an absolute-value weight ``l1[j]`` and a squared
    weight ``l2[j]``, giving h_j(v) = l1[j] * ||v||_1 + l2[j]/2 * ||v||^2.
    The four supported variants are coefficient choices: zero (0, 0),
    pure l1 (a, 0), pure squared-l2 (0, b), and elastic net (a, b). All
    coefficients must be nonnegative, which makes every h_j convex, proper
    and closed by construction.
    """

    layout: BlockLayout
    l1: np.ndarray
    l2: np.ndarray
    # per-coordinate expansions, precomputed for vectorized prox/eval
    _l1_full: np.ndarray = field(init=False, repr=False, compare=False)
    _l2_full: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = self.layout.num_blocks
        l1 = np.broadcast_to(np.asarray(self.l1, dtype=np.float64), (m,)).copy()
        l2 = np.broadcast_to(np.asarray(self.l2, dtype=np.float64), (m,)).copy()
        if np.any(l1 < 0) or np.any(l2 < 0) or not (
            np.all(np.isfinite(l1)) and np.all(np.isfinite(l2))
        ):
            raise ValueError("regularizer coefficients must be finite and >= 0")
        object.__setattr__(self, "l1", l1)
        object.__setattr__(self, "l2", l2)
        sizes = self.layout.block_sizes
        object.__setattr__(self, "_l1_full", np.repeat(l1, sizes))
        object.__setattr__(self, "_l2_full", np.repeat(l2, sizes))

    @classmethod
    def zero(cls, layout):
        return cls(layout, 0.0, 0.0)

    @classmethod
    def l1_only(cls, layout, lam1):
        return cls(layout, lam1, 0.0)

    @classmethod
    def squared_l2_only(cls, layout, lam2):
        return cls(layout, 0.0, lam2)

    @classmethod
    def elastic_net(cls, layout, lam1, lam2):
        return cls(layout, lam1, lam2)

    def value(self, x):
        """h(x) = sum_j h_j(x_j); finite for every finite x."""
        x = as_model_vector(x, self.layout.total_dim)
        return float(
            np.dot(self._l1_full, np.abs(x)) + 0.5 * np.dot(self._l2_full, x * x)
        )

    def block_value(self, x_j, j):
        """h_j(x_j) for a single block vector."""
        sl = self.layout.slice(j)
        v = as_model_vector(x_j, sl.stop - sl.start)
        return float(
            self.l1[j] * np.abs(v).sum() + 0.5 * self.l2[j] * np.dot(v, v)
        )


def _shrink(v, thresh, scale):
    # soft-threshold then scale; + 0.0 turns the -0.0 of killed entries into
    # an exact 0.0, so ties |v| == thresh yield bit-clean zeros
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0) / scale + 0.0


def prox(reg, eta, v):
    """Proximal step: argmin_y h(y) + ||y - v||^2 / (2 eta).

    Computed blockwise in closed form: soft-threshold by eta*l1, then scale
    by 1/(1 + eta*l2). Shrinking before scaling is the exact joint minimizer
    for the combined term.
    """
    if not (eta > 0 and np.isfinite(eta)):
        raise ValueError(f"eta must be positive and finite, got {eta}")
    v = as_model_vector(v, reg.layout.total_dim)
    return _shrink(v, eta * reg._l1_full, 1.0 + eta * reg._l2_full)


def prox_block(reg, eta, v_j, j):
    """Proximal step restricted to block j (same closed form)."""
    if not (eta > 0 and np.isfinite(eta)):
        raise ValueError(f"eta must be positive and finite, got {eta}")
    sl = reg.layout.slice(j)
    v_j = as_model_vector(v_j, sl.stop - sl.start)
    return _shrink(v_j, eta * reg.l1[j], 1.0 + eta * reg.l2[j])


def gradient_mapping(x, g, eta, reg):
    """Stationarity residual (x - prox_{eta h}(x - eta g)) / eta.

    Vanishes exactly at fixed points of the prox-gradient step; with h == 0
    it reduces to g.
    """
    x = as_model_vector(x, reg.layout.total_dim)
    g = as_model_vector(g, reg.layout.total_dim)
    return (x - prox(reg, eta, x - eta * g)) / eta


def block_gradient_mapping(x, g, eta, reg, j):
    """Block j of the stationarity residual (prox separates across blocks)."""
    sl = reg.layout.slice(j)
    x_j = as_model_vector(x, reg.layout.total_dim)[sl]
    g_j = as_model_vector(g, reg.layout.total_dim)[sl]
    return (x_j - prox_block(reg, eta, x_j - eta * g_j, j)) / eta


def prox_objective_oracle(reg, eta, v, grid_halfwidth, grid_step):
    """Brute-force 1-D prox: grid-minimize h(y) + (y - v)^2 / (2 eta).

    Independent check of the closed forms; the regularizer must be scalar
    (total_dim == 1). The grid spans [v - grid_halfwidth, v + grid_halfwidth].
    """
    if reg.layout.total_dim != 1:
        raise ValueError("grid oracle only evaluates scalar regularizers")
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    if not (eta > 0 and np.isfinite(eta)):
        raise ValueError(f"eta must be positive and finite, got {eta}")
    ys = np.arange(v - grid_halfwidth, v + grid_halfwidth + grid_step, grid_step)
    if ys.size == 0:
        raise ValueError("empty grid")
    obj = (
        reg._l1_full[0] * np.abs(ys)
        + 0.5 * reg._l2_full[0] * ys * ys
        + (ys - v) ** 2 / (2.0 * eta)
    )
    return float(ys[np.argmin(obj)])
