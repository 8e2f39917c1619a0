"""Loop-based reference implementations of the accuracy metrics."""

import math

import numpy as np


def naive_interp(x, nodes, p):
    if x < nodes[0] or x > nodes[-1]:
        return 0.0
    for i in range(len(nodes) - 1):
        a, b = nodes[i], nodes[i + 1]
        if a <= x <= b:
            return p[i] + (p[i + 1] - p[i]) * (x - a) / (b - a)
    return p[-1]


def naive_rmse(grid, p_hat, nodes, p):
    total = 0.0
    for g, ph in zip(grid, p_hat):
        total += (ph - naive_interp(g, nodes, p)) ** 2
    return math.sqrt(total / len(grid))


def naive_mass(grid, p, lo, hi):
    mass = 0.0
    n = len(grid)
    for i in range(n):
        width = grid[i + 1] - grid[i] if i + 1 < n else grid[i] - grid[i - 1]
        if lo <= grid[i] < hi:
            mass += p[i] * width
    return min(max(mass, 0.0), 1.0)


def random_grid(rng, n):
    return np.cumsum(rng.uniform(0.01, 1.0, n)) + rng.normal()
