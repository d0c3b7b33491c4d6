"""Run configuration shared by the CLI, the simulator, and the cluster engine.

A RunConfig either points at a libsvm file or carries synthetic-instance
parameters; ``build_problem`` materializes the LogisticProblem. Config files
are flat ``key=value`` text with the same keys as the dataclass fields;
command-line flags override file values.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .data_io import data_stream, parse_libsvm, synthesize
from .objective import LogisticProblem
from .prox import BlockLayout, Regularizer
from .simulate import ConstantStep, InverseSqrtStep


@dataclass
class RunConfig:
    data_path: str | None = None
    n: int = 2000
    d: int = 128
    density: float = 0.25
    truth_nnz: int = 4
    noise: float = 0.3
    blocks: int = 8
    workers: int = 1
    staleness: int = 0
    batch_size: int = 8192
    iterations: int = 10000
    step_kind: str = "invsqrt"  # "invsqrt" (value = c) or "constant" (value = eta)
    step_value: float = 0.1
    l1: float = 0.1
    l2: float = 0.001
    seed: int = 0
    telemetry_stride: int = 50
    out_dir: str = "."
    assignment: str | int = "random"
    timeout_s: float = 60.0
    # initial model = -x0_scale * x_true (synthetic instances only); an
    # elevated start makes the objective descent range measurable
    x0_scale: float = 0.0

    def validate(self):
        if self.data_path is not None and not os.path.exists(self.data_path):
            raise ValueError(f"dataset not found: {self.data_path}")
        if self.data_path is None:
            if self.n < 1 or self.d < 1:
                raise ValueError("need n >= 1 and d >= 1")
            if not 0 < self.density <= 1:
                raise ValueError("density must lie in (0, 1]")
            if not 0 <= self.truth_nnz <= self.d:
                raise ValueError("need 0 <= truth_nnz <= d")
            if self.noise < 0:
                raise ValueError("noise must be >= 0")
        if self.blocks < 1 or self.workers < 1 or self.batch_size < 1:
            raise ValueError("blocks, workers and batch size must be >= 1")
        if self.iterations < 0 or self.staleness < 0:
            raise ValueError("iterations and staleness must be >= 0")
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("regularizer coefficients must be >= 0")
        if self.step_kind not in ("invsqrt", "constant"):
            raise ValueError(f"unknown step kind {self.step_kind!r}")
        if self.step_value <= 0:
            raise ValueError("step value must be positive")
        if self.telemetry_stride < 1:
            raise ValueError("telemetry stride must be >= 1")
        if self.x0_scale != 0.0 and self.data_path is not None:
            raise ValueError("x0_scale needs a synthetic instance (planted truth)")
        return self

    def step_schedule(self):
        if self.step_kind == "constant":
            return ConstantStep(self.step_value)
        return InverseSqrtStep(self.step_value)

    def build_dataset(self):
        """(dataset, x_true-or-None) from the configured source."""
        if self.data_path is not None:
            with open(self.data_path, "r", encoding="utf-8") as fh:
                return parse_libsvm(fh.read()), None
        data, x_true = synthesize(
            self.n, self.d, self.density, self.truth_nnz, self.noise,
            data_stream(self.seed),
        )
        return data, x_true

    def build_problem(self):
        return self.build()[0]

    def build(self):
        """(problem, initial model) from the configured source."""
        data, x_true = self.build_dataset()
        layout = BlockLayout.equal_split(data.num_features, self.blocks)
        reg = Regularizer.elastic_net(layout, self.l1, self.l2)
        problem = LogisticProblem(data, layout, reg)
        if self.x0_scale != 0.0:
            x0 = -self.x0_scale * x_true
        else:
            x0 = np.zeros(problem.dim)
        return problem, x0


def parse_config_file(path):
    """Flat key=value lines; '#' starts a comment, blanks are skipped."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            values[key.strip()] = val.strip()
    return values
