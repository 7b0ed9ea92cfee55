"""Backward-in-time dual solver.

The dual state w runs backward from a terminal datum w_T with an advanced
argument and a future-weighted memory integral:

    -w'(t) = A^T w(t) + A1^T w(t+h) + int_t^T M(s-t)^T w(s) ds
             - Mtilde(T-t)^T z_T,
    w(T) = w_T,   w = 0 on (T, T+h].

Stepping mirrors the forward scheme (implicit Euler with the same
trapezoid memory weights, transposed) so discrete pairing defects stay
symmetric.  The backward sweep continues through [-h, 0) because the
pointwise dual state on the delay window feeds both the duality pairing
and the observability functionals.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .core import (
    KernelDomainError,
    StepFailureError,
    Trajectory,
    eval_kernel,
    eval_kernel_derivative,
)
from .forward import _memory_coeffs

__all__ = ["AdjointData", "simulate_adjoint", "adjoint_time_derivative_residual"]


@dataclass(frozen=True)
class AdjointData:
    """Dual trajectory on [-h, T+h] plus the observation record B(t)^T w(t).

    ``traj.main_segment()`` covers [0, T]; the trailing delay window holds
    exact zeros and the leading window holds the backward extension below
    time zero.  ``observation[k]`` samples B(t_k)^T w(t_k) on [0, T].
    """

    w_T: np.ndarray
    z_T: np.ndarray
    traj: Trajectory
    observation: np.ndarray  # (n_steps + 1, m)


def simulate_adjoint(sys, w_T, z_T, grid):
    """Integrate the dual system backward from t = T down to t = -h."""
    sys.check_grid(grid)
    n, N, d, dt = sys.dim, grid.n_steps, grid.delay_steps, grid.dt
    w_T = np.atleast_1d(np.asarray(w_T, dtype=float))
    z_T = np.atleast_1d(np.asarray(z_T, dtype=float))
    if w_T.shape != (n,) or z_T.shape != (n,):
        raise ValueError(f"terminal data must be vectors of length {n}")

    scalar_M = sys.M.dim == 1
    mem = None if sys.M.is_zero else _memory_coeffs(sys.M, grid, N + d + 1)
    if sys.Mtilde.is_zero or not np.any(z_T):
        forcing = None
    else:
        tilde = _memory_coeffs(sys.Mtilde, grid, N + d + 1)
        if sys.Mtilde.dim == 1:
            forcing = tilde[:, None] * z_T[None, :]  # row i: Mtilde(i*dt)^T z_T
        else:
            forcing = np.einsum("tji,j->ti", tilde, z_T)

    M0 = eval_kernel(sys.M, 0.0)
    if scalar_M:
        M0 = M0[0, 0] * np.eye(n)
    E = np.eye(n) - dt * sys.A.T - 0.5 * dt * dt * M0.T
    try:
        lu = lu_factor(E)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise StepFailureError(f"implicit dual step matrix is singular: {exc}") from exc

    w = np.zeros((N + 2 * d + 1, n))  # node j lives at array index j + d
    w[N + d] = w_T
    for k in range(N - 1, -d - 1, -1):
        a = k + d
        rhs = w[a + 1] + dt * (sys.A1.T @ w[a + d])
        if mem is not None:
            # known trapezoid part of int_{t_k}^T M(s-t_k)^T w(s) ds:
            # nodes j = k+1 .. N with weights dt*(1, ..., 1, 1/2); the
            # (dt/2) M(0)^T w_k endpoint is folded into the solve.
            c = mem[1: N - k + 1].copy()
            c[-1] *= 0.5
            future = w[a + 1: N + d + 1]
            if scalar_M:
                known = c @ future
            else:
                known = np.einsum("tji,tj->i", c, future)
            rhs = rhs + dt * known
        if forcing is not None:
            rhs = rhs - dt * forcing[N - k]
        sol = lu_solve(lu, rhs)
        if not np.all(np.isfinite(sol)):
            raise StepFailureError(f"non-finite dual state at node {k}")
        w[a] = sol

    traj = Trajectory(grid, w, lead=d)
    obs = np.empty((N + 1, sys.n_controls))
    for k, t in enumerate(grid.times()):
        obs[k] = sys.control_matrix(t).T @ w[k + d]
    return AdjointData(w_T=w_T, z_T=z_T, traj=traj, observation=obs)


def adjoint_time_derivative_residual(sys, adj, grid):
    """Defect of the time-differentiated dual system, max over clean nodes.

    phi = w_t (centered differences) satisfies the same backward structure
    with forcing M(T-t)^T w_T - Mtilde'(T-t)^T z_T and terminal value
    phi(T) = -A^T w_T + Mtilde(0)^T z_T, read off the dual equation at
    t = T where the advanced term and the future integral vanish.  Nodes
    within two steps of t = T-h and t = T-2h are excluded: the advanced
    argument makes w_t jump there whenever A1 w_T != 0, so difference
    stencils across those times are not informative.
    """
    for kern in (sys.M, sys.Mtilde):
        if kern.form not in ("zero", "constant", "exp_poly"):
            raise KernelDomainError(
                f"differentiated-system residual needs an analytic kernel derivative, "
                f"got form {kern.form!r}"
            )
    n, N, d, dt = sys.dim, grid.n_steps, grid.delay_steps, grid.dt
    w = adj.traj.main_segment()
    w_T, z_T = adj.w_T, adj.z_T

    def m_at(kern, t):
        v = eval_kernel(kern, t)
        return v[0, 0] * np.eye(n) if kern.dim == 1 else v

    def mprime_at(kern, t):
        v = eval_kernel_derivative(kern, t)
        return v[0, 0] * np.eye(n) if kern.dim == 1 else v

    # phi on [0, T]: centered differences inside, analytic value at T
    phi = np.zeros((N + 1, n))
    for k in range(1, N):
        phi[k] = (w[k + 1] - w[k - 1]) / (2 * dt)
    phi[N] = -sys.A.T @ w_T + m_at(sys.Mtilde, 0.0).T @ z_T

    def phi_at(j):
        return phi[j] if j <= N else np.zeros(n)

    skip = set()
    for kink in (N - d, N - 2 * d):
        skip.update(range(kink - 2, kink + 3))

    worst = 0.0
    for k in range(2, N):
        if k in skip:
            continue
        t = grid.times()[k]
        phi_t = (phi[k + 1] - phi[k - 1]) / (2 * dt)
        # trapezoid of int_{t_k}^T M(s-t_k)^T phi(s) ds over nodes k..N
        fut = np.zeros(n)
        if not sys.M.is_zero and k < N:
            weights = np.full(N - k + 1, dt)
            weights[0] = weights[-1] = dt / 2
            for j in range(k, N + 1):
                fut += weights[j - k] * (m_at(sys.M, (j - k) * dt).T @ phi[j])
        force = m_at(sys.M, sys.T - t).T @ w_T - mprime_at(sys.Mtilde, sys.T - t).T @ z_T
        rhs = -sys.A.T @ phi[k] - sys.A1.T @ phi_at(k + d) - fut + force
        worst = max(worst, float(np.max(np.abs(phi_t - rhs))))
    return worst
