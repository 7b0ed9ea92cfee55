"""Forward simulation by method of steps with implicit Euler.

The state equation is

    y'(t) = A y(t) + A1 y(t-h) + int_0^t M(t-s) y(s) ds + B(t) u(t)

with history y = phi on [-h, 0].  Each implicit Euler step solves

    (I - dt*A - (dt^2/2) M(0)) y_{k+1} = y_k + dt*(A1 y_{k-d} + m_{k+1} + B u_{k+1})

where d = h/dt, the retarded sample is lagged (taken at the last node,
t_k - h, so the scheme reproduces piecewise-linear delay solutions exactly)
and m_{k+1} collects the known part of the trapezoid memory sum; the
implicit endpoint (dt/2) M(0) y_{k+1} sits on the left-hand side.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .core import (
    GridError,
    HistoryFunction,
    MemoryKernel,
    ShapeError,
    StepFailureError,
    TimeGrid,
    Trajectory,
    _check_kernel_dim,
    convolve_memory,
    eval_kernel,
    kernel_values,
)

__all__ = [
    "DelaySystem",
    "FundamentalSolution",
    "simulate_forward",
    "fundamental_solution",
    "mild_solution_check",
]


@dataclass(frozen=True)
class DelaySystem:
    """Problem data (A, A1, M, Mtilde, B, h, T) plus the initial history.

    ``B`` is a constant (n, m) matrix or a callable t -> (n, m) matrix for
    time-varying actuation (e.g. a moving support).  ``Mtilde`` is the
    kernel whose accumulated integral must vanish at the final time; it
    may differ from the dynamics kernel ``M``.
    """

    A: np.ndarray
    A1: np.ndarray
    M: MemoryKernel
    Mtilde: MemoryKernel
    B: object
    h: float
    T: float
    history: HistoryFunction

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        A1 = np.atleast_2d(np.asarray(self.A1, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "A1", A1)
        n = A.shape[0]
        if A.shape != (n, n) or A1.shape != (n, n):
            raise ShapeError(f"A and A1 must both be {n}x{n}, got {A.shape} and {A1.shape}")
        if not callable(self.B):
            object.__setattr__(self, "B", _as_control_matrix(self.B, n))
        _check_kernel_dim(self.M, n)
        _check_kernel_dim(self.Mtilde, n)
        if self.h <= 0:
            raise ValueError(f"delay h must be positive, got {self.h}")
        if self.T < self.h:
            raise ValueError(f"horizon T={self.T} must cover the delay h={self.h}")
        if self.history.dim != n:
            raise ShapeError(f"history dimension {self.history.dim} != state dimension {n}")

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def n_controls(self):
        return self.control_matrix(0.0).shape[1]

    def control_matrix(self, t):
        if callable(self.B):
            return np.atleast_2d(np.asarray(self.B(t), dtype=float))
        return self.B

    def check_grid(self, grid):
        if abs(grid.T - self.T) > 1e-9 * max(1.0, self.T):
            raise GridError(f"grid horizon {grid.T} != system horizon {self.T}")
        if abs(grid.h - self.h) > 1e-9 * max(1.0, self.h):
            raise GridError(f"grid delay {grid.h} != system delay {self.h}")

    def history_nodes(self, grid):
        """History sampled on the grid's delay window, shape (delay_steps + 1, n)."""
        d = grid.delay_steps
        if self.history.delay_steps == d:
            return self.history.values.copy()
        return np.stack([self.history(max(-self.h, (j - d) * grid.dt)) for j in range(d + 1)])


def _as_control_matrix(B, n):
    B = np.asarray(B, dtype=float)
    if B.ndim == 0:
        B = B.reshape(1, 1)
    elif B.ndim == 1:
        B = B.reshape(-1, 1)
    if B.shape[0] != n:
        raise ShapeError(f"control map has {B.shape[0]} rows, state dimension is {n}")
    return B


@dataclass(frozen=True)
class FundamentalSolution:
    """Matrix solution S(t) of the uncontrolled delay system with S(0) = I.

    S vanishes on [-h, 0), so mild solutions factor through it.  ``bound``
    is the largest nodal operator norm observed on [0, T].
    """

    grid: TimeGrid
    S_samples: np.ndarray  # (n_steps + 1, n, n)
    bound: float

    def at_node(self, k):
        """S at node k; zero for k < 0."""
        n = self.S_samples.shape[1]
        if k < 0:
            return np.zeros((n, n))
        return self.S_samples[k]


def control_samples(sys, control, grid):
    """Normalize a control (None, array, or callable) to node samples (N+1, m)."""
    m = sys.n_controls
    N = grid.n_steps
    if control is None:
        return np.zeros((N + 1, m))
    if callable(control):
        return np.stack([np.atleast_1d(np.asarray(control(t), dtype=float)) for t in grid.times()])
    u = np.asarray(control, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, 1)
    if u.shape != (N + 1, m):
        raise ShapeError(f"control samples must have shape ({N + 1}, {m}), got {u.shape}")
    return u


def _memory_coeffs(kernel, grid, n_offsets):
    """Kernel at grid offsets 0..n_offsets-1; scalar kernels return a 1-D array."""
    offsets = np.arange(n_offsets) * grid.dt
    if kernel.dim == 1:
        return np.array([eval_kernel(kernel, float(t))[0, 0] for t in offsets])
    return kernel_values(kernel, offsets)


def step_matrix(sys, grid):
    """LU factorization of I - dt*A - (dt^2/2) M(0)."""
    n = sys.dim
    dt = grid.dt
    M0 = eval_kernel(sys.M, 0.0)
    if sys.M.dim == 1:
        M0 = M0[0, 0] * np.eye(n)
    E = np.eye(n) - dt * sys.A - 0.5 * dt * dt * M0
    try:
        lu = lu_factor(E)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises ValueError mostly
        raise StepFailureError(f"implicit step matrix is singular: {exc}") from exc
    if not np.all(np.isfinite(lu[0])):
        raise StepFailureError("implicit step matrix factorization is not finite")
    return lu


def simulate_forward(sys, control, grid):
    """Integrate the state equation on [0, T]; returns y on [-h, T].

    ``control`` may be None (zero), an (n_steps+1, m) array of node
    samples, or a callable t -> control vector.
    """
    sys.check_grid(grid)
    n, N, d, dt = sys.dim, grid.n_steps, grid.delay_steps, grid.dt
    u = control_samples(sys, control, grid)
    scalar_kernel = sys.M.dim == 1
    mem = None if sys.M.is_zero else _memory_coeffs(sys.M, grid, N + 1)
    lu = step_matrix(sys, grid)
    Bk = None if not callable(sys.B) else [sys.control_matrix(t) for t in grid.times()]

    y = np.zeros((d + N + 1, n))
    y[: d + 1] = sys.history_nodes(grid)
    for k in range(N):
        y_delay = y[k]  # y at t_k - h (lagged retarded sample), array index k = node k - d
        rhs = y[d + k] + dt * (sys.A1 @ y_delay)
        if mem is not None:
            # known trapezoid part of int_0^{t_{k+1}} M(t_{k+1}-s) y(s) ds:
            # weights dt*(1, ..., 1, 1/2) pairing M_i with y_{k+1-i}, i = 1..k+1;
            # the remaining (dt/2) M(0) y_{k+1} endpoint sits on the LHS.
            c = mem[1: k + 2].copy()
            c[-1] *= 0.5
            past = y[d: d + k + 1][::-1]  # y_k, y_{k-1}, ..., y_0
            if scalar_kernel:
                known = c @ past
            else:
                known = np.einsum("tij,tj->i", c, past)
            rhs = rhs + dt * known
        B = Bk[k + 1] if Bk is not None else sys.B
        rhs = rhs + dt * (B @ u[k + 1])
        sol = lu_solve(lu, rhs)
        if not np.all(np.isfinite(sol)):
            raise StepFailureError(f"non-finite state at step {k + 1}")
        y[d + k + 1] = sol
    return Trajectory(grid, y, lead=d)


def fundamental_solution(sys, grid):
    """Matrix solution S of the memoryless, uncontrolled system, column by column.

    Column i is the trajectory started from history zero on [-h, 0) with
    the unit vector e_i at time 0, so S(0) = I and the delayed argument
    sees S = 0 below zero.
    """
    sys.check_grid(grid)
    n = sys.dim
    base = DelaySystem(
        A=sys.A,
        A1=sys.A1,
        M=MemoryKernel.zero(n),
        Mtilde=MemoryKernel.zero(n),
        B=np.zeros((n, 1)),
        h=sys.h,
        T=sys.T,
        history=sys.history,
    )
    cols = []
    for i in range(n):
        hist = HistoryFunction.zero_before_final(np.eye(n)[i], sys.h, grid.delay_steps)
        sys_i = DelaySystem(base.A, base.A1, base.M, base.Mtilde, base.B, base.h, base.T, hist)
        cols.append(simulate_forward(sys_i, None, grid).main_segment())
    S = np.stack(cols, axis=-1)  # (n_steps + 1, n, n)
    bound = max(np.linalg.norm(S[k], 2) for k in range(S.shape[0]))
    return FundamentalSolution(grid, S, float(bound))


def mild_solution_check(sys, control, grid):
    """Discrepancy at t = T between the stepped solution and its integral form.

    The representation y(T) = S(T) phi(0) + int S(T-s) B u(s) ds
    + int S(T-s) [int_0^s M(s-tau) y(tau) dtau] ds only carries the state
    at time 0, so the history must vanish on [-h, 0).
    """
    if not sys.history.vanishes_before_final():
        raise ValueError("integral-form cross-check requires history zero on [-h, 0)")
    sys.check_grid(grid)
    N, dt = grid.n_steps, grid.dt
    traj = simulate_forward(sys, control, grid)
    fund = fundamental_solution(sys, grid)
    u = control_samples(sys, control, grid)

    forcing = np.empty((N + 1, sys.dim))
    for k in range(N + 1):
        Bu = sys.control_matrix(grid.times()[k]) @ u[k]
        forcing[k] = Bu + convolve_memory(traj, sys.M, k)
    weights = np.full(N + 1, dt)
    weights[0] = weights[-1] = dt / 2
    duhamel = np.einsum("s,sij,sj->i", weights, fund.S_samples[::-1], forcing)
    y_repr = fund.S_samples[N] @ sys.history.values[-1] + duhamel
    return float(np.max(np.abs(y_repr - traj.node(N))))
