"""Deterministic random problem instances for tests, studies, and the CLI.

All draws come from ``numpy.random.default_rng(seed)`` (PCG64) in the
fixed order documented per function, so a seed pins the instance exactly;
ports in other environments can reproduce the same matrices by matching
the generator and the draw order.
"""

import numpy as np

from .core import HistoryFunction, MemoryKernel, TimeGrid
from .forward import DelaySystem

__all__ = ["random_delay_system", "random_control", "random_terminal_data"]


def random_delay_system(n, seed, m=None, T=1.0, h=0.25, kernel_scale=0.5,
                        smooth_history=True):
    """Seeded dense system with exp-poly kernels and a smooth history.

    Draw order: A (n*n uniform), A1 (n*n uniform), kernel coefficients
    C0, C1 (n*n each), terminal-kernel coefficients D0, D1 (n*n each),
    B (n*m uniform), then history slope and offset (n each).
    Matrices are scaled by 1/n to keep trajectories O(1) on unit horizons.
    """
    if m is None:
        m = max(1, n - 1)
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1.0, 1.0, (n, n)) / n
    A1 = rng.uniform(-1.0, 1.0, (n, n)) / (2 * n)
    C0 = rng.uniform(-1.0, 1.0, (n, n)) * kernel_scale / n
    C1 = rng.uniform(-1.0, 1.0, (n, n)) * kernel_scale / (2 * n)
    D0 = rng.uniform(-1.0, 1.0, (n, n)) * kernel_scale / n
    D1 = rng.uniform(-1.0, 1.0, (n, n)) * kernel_scale / (2 * n)
    B = rng.uniform(-1.0, 1.0, (n, m))
    slope = rng.uniform(-1.0, 1.0, n)
    offset = rng.uniform(-1.0, 1.0, n)

    M = MemoryKernel.exp_poly(-1.0, np.stack([C0, C1]))
    Mtilde = MemoryKernel.exp_poly(-1.0, np.stack([D0, D1]))
    grid = TimeGrid.for_horizon(T, int(round(T / h)) * 4, h)
    if smooth_history:
        thetas = np.linspace(-h, 0.0, grid.delay_steps + 1)
        values = offset[None, :] + thetas[:, None] * slope[None, :]
    else:
        values = np.zeros((grid.delay_steps + 1, n))
    history = HistoryFunction(values, h)
    return DelaySystem(A=A, A1=A1, M=M, Mtilde=Mtilde, B=B, h=h, T=T, history=history)


def random_control(grid, m, seed, n_modes=3, scale=1.0):
    """Smooth control: a short sine/cosine sum with seeded coefficients.

    Draw order: cosine coefficients (n_modes*m), sine coefficients
    (n_modes*m).
    """
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, (n_modes, m))
    b = rng.uniform(-1.0, 1.0, (n_modes, m))
    t = grid.times()
    span = max(grid.T, 1e-300)
    u = np.zeros((t.size, m))
    for k in range(n_modes):
        w = (k + 1) * np.pi / span
        u += np.cos(w * t)[:, None] * a[k] + np.sin(w * t)[:, None] * b[k]
    return scale * u


def random_terminal_data(n, seed, scale=1.0):
    """Seeded (w_T, z_T); draw order: w_T then z_T, both standard normal."""
    rng = np.random.default_rng(seed)
    w_T = rng.normal(size=n)
    z_T = rng.normal(size=n)
    return scale * w_T, scale * z_T
