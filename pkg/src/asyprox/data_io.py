"""Dataset ingestion, synthetic instance generation, and reproducible sampling.

Randomness flows through :class:`RngStream`, a counter-based generator
(Philox) addressed by (seed, stream, counter). Identical coordinates yield
identical output on every platform, and distinct stream ids are independent,
so workers and the simulator can own non-overlapping streams while replaying
each other's draws exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1
_INV_2_53 = 2.0 ** -53

# Stream-id allocation. Worker w of the concurrent engine owns streams
# (1 + 4w, 2 + 4w); the global simulator uses worker 0's pair so that a
# single-worker cluster run consumes the identical draw sequence.
STREAM_DATA = 0
STREAM_DELAY = 3


def batch_stream(seed, worker=0):
    """Stream drawing minibatch indices for one worker (or the simulator)."""
    return RngStream(seed, 1 + 4 * worker)


def block_stream(seed, worker=0):
    """Stream drawing block choices for one worker (or the simulator)."""
    return RngStream(seed, 2 + 4 * worker)


def data_stream(seed):
    return RngStream(seed, STREAM_DATA)


def delay_stream(seed):
    return RngStream(seed, STREAM_DELAY)


@dataclass
class RngStream:
    """Counter-based random stream: output is a pure function of
    (seed, stream, counter).

    The counter advances by ceil(m/4) per request of m raw words (Philox
    yields 4 words per counter block; partially used blocks are discarded),
    so consumption depends only on request sizes, never on drawn values.
    """

    seed: int
    stream: int
    counter: int = 0

    def _key(self):
        return np.array([self.seed & _MASK64, self.stream & _MASK64], dtype=np.uint64)

    def raw(self, m):
        """Next m raw uint64 words; advances the counter."""
        if m < 0:
            raise ValueError("cannot request a negative number of words")
        if m == 0:
            return np.empty(0, dtype=np.uint64)
        bg = Philox(key=self._key(), counter=[self.counter & _MASK64, 0, 0, 0])
        out = bg.random_raw(m)
        self.counter += -(-m // 4)
        return out

    def clone(self):
        return RngStream(self.seed, self.stream, self.counter)

    def integers(self, n, size):
        """size iid uniform indices in [0, n)."""
        if n < 1:
            raise ValueError("need n >= 1")
        return (self.raw(size) % np.uint64(n)).astype(np.int64)

    def uniforms(self, size):
        """size doubles in the open interval (0, 1)."""
        return ((self.raw(size) >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53

    def normals(self, size):
        """size standard normals via the inverse CDF (fixed consumption)."""
        return ndtri(self.uniforms(size))


class ParseError(ValueError):
    """Malformed dataset text; carries 1-based line (and column when known)."""

    def __init__(self, message, line, column=None):
        loc = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{loc}: {message}")
        self.line = line
        self.column = column


def parse_libsvm(text, num_features=None):
    """Parse `<label> <idx>:<val> ...` lines into a SparseDataset.

    Indices are 1-based ascending on input, stored 0-based. Labels map to
    +-1: values > 0 become +1, everything else -1 (covers both the 0/1 and
    +-1 conventions). The feature dimension is the largest index seen unless
    ``num_features`` overrides it. Explicit zero values are dropped.
    """
    from .objective import SparseDataset

    indptr = [0]
    indices = []
    values = []
    labels = []
    lines = text.splitlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise ParseError(f"unparseable label {tokens[0]!r}", lineno, 1) from None
        labels.append(1.0 if label > 0 else -1.0)
        prev = 0
        for tok in tokens[1:]:
            col = line.index(tok) + 1
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(f"expected idx:val, got {tok!r}", lineno, col)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"malformed entry {tok!r}", lineno, col) from None
            if idx < 1:
                raise ParseError(f"index {idx} must be >= 1", lineno, col)
            if idx <= prev:
                raise ParseError(
                    f"non-ascending index {idx} after {prev}", lineno, col
                )
            if not np.isfinite(val):
                raise ParseError(f"non-finite value {val_s!r}", lineno, col)
            prev = idx
            if val == 0.0:
                continue
            indices.append(idx - 1)
            values.append(val)
        indptr.append(len(indices))
    if not labels:
        raise ParseError("no samples", max(len(lines), 1))
    max_dim = (max(indices) + 1) if indices else 1
    if num_features is None:
        num_features = max_dim
    elif num_features < max_dim:
        raise ParseError(
            f"feature index {max_dim} exceeds requested dimension {num_features}",
            len(lines),
        )
    return SparseDataset(
        num_samples=len(labels),
        num_features=num_features,
        indptr=np.array(indptr, dtype=np.int64),
        indices=np.array(indices, dtype=np.int64),
        values=np.array(values, dtype=np.float64),
        labels=np.array(labels, dtype=np.float64),
    )


def write_libsvm(dataset):
    """Canonical libsvm text for a dataset (1-based indices, shortest floats)."""
    out = []
    for i in range(dataset.num_samples):
        idx, val = dataset.row(i)
        parts = ["1" if dataset.labels[i] > 0 else "-1"]
        parts.extend(f"{j + 1}:{float(v)!r}" for j, v in zip(idx, val))
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def write_truth(x_true):
    """Sidecar text for a ground-truth vector: `index value` per nonzero."""
    nz = np.nonzero(x_true)[0]
    return "".join(f"{i} {float(x_true[i])!r}\n" for i in nz)


def synthesize(n, d, density, sparsity_of_truth, noise, rng):
    """Generate a random sparse classification instance and its planted truth.

    Features are standard normal at a ``density`` fraction of positions;
    ``x_true`` has ``sparsity_of_truth`` standard-normal nonzeros at random
    positions; labels are sign(<a_i, x_true> + noise * eps_i) with sign(0)
    mapped to +1. Byte-identical output for equal rng coordinates.
    """
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    if not 0 <= sparsity_of_truth <= d:
        raise ValueError("need 0 <= sparsity_of_truth <= d")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    from .objective import SparseDataset

    mask = (rng.uniforms(n * d) < density).reshape(n, d)
    vals = rng.normals(int(mask.sum()))
    vals_grid = np.zeros((n, d))
    vals_grid[mask] = vals
    mask &= vals_grid != 0.0  # keep the nonzero-values invariant

    keys = rng.raw(d)
    support = np.sort(np.argsort(keys, kind="stable")[:sparsity_of_truth])
    x_true = np.zeros(d)
    x_true[support] = rng.normals(sparsity_of_truth)

    margins = vals_grid @ x_true + noise * rng.normals(n)
    labels = np.where(margins >= 0.0, 1.0, -1.0)

    counts = mask.sum(axis=1)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    cols = np.nonzero(mask)[1].astype(np.int64)
    data = SparseDataset(
        num_samples=n,
        num_features=d,
        indptr=indptr,
        indices=cols,
        values=vals_grid[mask],
        labels=labels,
    )
    return data, x_true


def sample_with_replacement(rng, n, size):
    """size iid uniform sample indices in [0, n), duplicates allowed."""
    if n < 1:
        raise ValueError("need a nonempty sample pool")
    if size < 1:
        raise ValueError("batch size must be >= 1")
    return rng.integers(n, size)
