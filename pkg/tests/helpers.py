"""Shared randomized-property drivers for the prox inequality suites.

Each driver runs ``trials`` random cases over dimensions up to 64, step sizes
in (1e-3, 1], and all four regularizer variants, asserting its inequality at
the stated slack. They are reused by the unit tests (small trial counts) and
by the acceptance suite (full counts with runtime caps).
"""
from __future__ import annotations

import numpy as np

from asyprox.prox import (
    BlockLayout,
    Regularizer,
    block_gradient_mapping,
    gradient_mapping,
    prox,
    prox_block,
)

VARIANTS = ("zero", "l1", "sql2", "elastic")


def random_case(rng, max_dim=64):
    """(layout, reg, eta) with a random variant and random block structure."""
    d = int(rng.integers(1, max_dim + 1))
    m = int(rng.integers(1, min(8, d) + 1))
    layout = BlockLayout.equal_split(d, m)
    variant = VARIANTS[int(rng.integers(len(VARIANTS)))]
    lam1 = float(rng.uniform(0.01, 3.0))
    lam2 = float(rng.uniform(0.01, 3.0))
    if variant == "zero":
        reg = Regularizer.zero(layout)
    elif variant == "l1":
        reg = Regularizer.l1_only(layout, lam1)
    elif variant == "sql2":
        reg = Regularizer.squared_l2_only(layout, lam2)
    else:
        reg = Regularizer.elastic_net(layout, lam1, lam2)
    eta = float(rng.uniform(1e-3, 1.0))
    return layout, reg, eta


def run_descent_inequality(rng, trials, slack=1e-9):
    """<g, y-x> + h(y) - h(x) <= -||y-x||^2 / eta for y = prox(x - eta g)."""
    worst = -np.inf
    for _ in range(trials):
        layout, reg, eta = random_case(rng)
        x = rng.standard_normal(layout.total_dim)
        g = rng.standard_normal(layout.total_dim)
        y = prox(reg, eta, x - eta * g)
        lhs = float(np.dot(g, y - x)) + reg.value(y) - reg.value(x)
        rhs = -float(np.dot(y - x, y - x)) / eta
        worst = max(worst, lhs - rhs)
        assert lhs <= rhs + slack, f"violated by {lhs - rhs:.3e}"
    return worst


def run_block_descent_inequality(rng, trials, slack=1e-9):
    """Per-block version of the descent inequality."""
    for _ in range(trials):
        layout, reg, eta = random_case(rng)
        j = int(rng.integers(layout.num_blocks))
        sl = layout.slice(j)
        x_j = rng.standard_normal(sl.stop - sl.start)
        g_j = rng.standard_normal(sl.stop - sl.start)
        y_j = prox_block(reg, eta, x_j - eta * g_j, j)
        lhs = (
            float(np.dot(g_j, y_j - x_j))
            + reg.block_value(y_j, j)
            - reg.block_value(x_j, j)
        )
        rhs = -float(np.dot(y_j - x_j, y_j - x_j)) / eta
        assert lhs <= rhs + slack, f"block {j} violated by {lhs - rhs:.3e}"


def run_nonexpansiveness(rng, trials, slack=1e-12):
    """||prox(x - eta G) - prox(x - eta g)|| <= eta ||G - g||."""
    for _ in range(trials):
        layout, reg, eta = random_case(rng)
        x = rng.standard_normal(layout.total_dim)
        g = rng.standard_normal(layout.total_dim)
        G = rng.standard_normal(layout.total_dim)
        lhs = float(
            np.linalg.norm(prox(reg, eta, x - eta * G) - prox(reg, eta, x - eta * g))
        )
        rhs = eta * float(np.linalg.norm(G - g))
        assert lhs <= rhs + slack, f"violated by {lhs - rhs:.3e}"


def run_block_nonexpansiveness(rng, trials, slack=1e-12):
    for _ in range(trials):
        layout, reg, eta = random_case(rng)
        j = int(rng.integers(layout.num_blocks))
        sl = layout.slice(j)
        x_j = rng.standard_normal(sl.stop - sl.start)
        g_j = rng.standard_normal(sl.stop - sl.start)
        G_j = rng.standard_normal(sl.stop - sl.start)
        lhs = float(
            np.linalg.norm(
                prox_block(reg, eta, x_j - eta * G_j, j)
                - prox_block(reg, eta, x_j - eta * g_j, j)
            )
        )
        rhs = eta * float(np.linalg.norm(G_j - g_j))
        assert lhs <= rhs + slack, f"block {j} violated by {lhs - rhs:.3e}"


def run_mapping_stability(rng, trials, slack=1e-12):
    """||P(x, g1, eta) - P(x, g2, eta)|| <= ||g1 - g2||."""
    for _ in range(trials):
        layout, reg, eta = random_case(rng)
        x = rng.standard_normal(layout.total_dim)
        g1 = rng.standard_normal(layout.total_dim)
        g2 = rng.standard_normal(layout.total_dim)
        lhs = float(
            np.linalg.norm(
                gradient_mapping(x, g1, eta, reg) - gradient_mapping(x, g2, eta, reg)
            )
        )
        rhs = float(np.linalg.norm(g1 - g2))
        assert lhs <= rhs + slack, f"violated by {lhs - rhs:.3e}"


def run_block_mapping_stability(rng, trials, slack=1e-12):
    for _ in range(trials):
        layout, reg, eta = random_case(rng)
        j = int(rng.integers(layout.num_blocks))
        x = rng.standard_normal(layout.total_dim)
        g1 = rng.standard_normal(layout.total_dim)
        g2 = rng.standard_normal(layout.total_dim)
        lhs = float(
            np.linalg.norm(
                block_gradient_mapping(x, g1, eta, reg, j)
                - block_gradient_mapping(x, g2, eta, reg, j)
            )
        )
        rhs = float(np.linalg.norm(g1 - g2))
        assert lhs <= rhs + slack, f"block {j} violated by {lhs - rhs:.3e}"


def run_young_inequality(rng, trials, slack=1e-12):
    """<a, b> <= ||a||^2 / (2 delta) + delta ||b||^2 / 2."""
    for _ in range(trials):
        d = int(rng.integers(1, 65))
        a = rng.standard_normal(d)
        b = rng.standard_normal(d)
        delta = float(rng.uniform(1e-3, 10.0))
        lhs = float(np.dot(a, b))
        rhs = float(np.dot(a, a)) / (2 * delta) + delta * float(np.dot(b, b)) / 2
        assert lhs <= rhs + slack, f"violated by {lhs - rhs:.3e}"


def run_prox_descent_bound(rng, trials, slack=1e-8, max_dim=16):
    """Composite bound linking prox steps at x to arbitrary comparison points:
    with y = prox(x - eta g) and a quadratic smooth part of known curvature L,

      psi(y) <= psi(z) + <y - z, grad(x) - g> + (L/2 - 1/(2 eta)) ||y-x||^2
                + (L/2 + 1/(2 eta)) ||z-x||^2 - ||y-z||^2 / (2 eta).
    """
    for _ in range(trials):
        layout, reg, eta = random_case(rng, max_dim=max_dim)
        d = layout.total_dim
        B = rng.standard_normal((d, d))
        Q = (B + B.T) / 2
        L = float(np.abs(np.linalg.eigvalsh(Q)).max()) + 1e-12
        c = rng.standard_normal(d)

        def f(v):
            return 0.5 * float(v @ Q @ v) + float(c @ v)

        def grad_f(v):
            return Q @ v + c

        def psi(v):
            return f(v) + reg.value(v)

        x = rng.standard_normal(d)
        g = rng.standard_normal(d)
        z = rng.standard_normal(d)
        y = prox(reg, eta, x - eta * g)
        lhs = psi(y)
        rhs = (
            psi(z)
            + float(np.dot(y - z, grad_f(x) - g))
            + (L / 2 - 1 / (2 * eta)) * float(np.dot(y - x, y - x))
            + (L / 2 + 1 / (2 * eta)) * float(np.dot(z - x, z - x))
            - float(np.dot(y - z, y - z)) / (2 * eta)
        )
        assert lhs <= rhs + slack, f"violated by {lhs - rhs:.3e}"
