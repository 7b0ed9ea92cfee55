"""Discrete observability diagnostics for the dual system.

The central object is the Gramian over terminal data (w_T, z_T): solving
the dual system for each basis datum and pairing the observation records
B(t)^T w(t) in L^2(0, T) gives a symmetric positive semidefinite 2n x 2n
matrix whose numerical kernel encodes unobservable directions.  A
direction is harmless when its w_T part vanishes and the terminal-memory
map annihilates its z_T part; otherwise it obstructs control synthesis.

The observability constant bounds the windowed dual energy

    ||w(theta)||^2 + int_{-h}^{theta} ||w(t+h)||^2 dt
                   + int_{t1-h}^{T-h} ||w(t+h)||^2 dt

by the observation energy <G v, v>, maximized over grids of theta and t1;
per-window values are exposed alongside the overall maximum.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from .adjoint import simulate_adjoint
from .core import ShapeError, eval_kernel

__all__ = [
    "ObservabilityReport",
    "KalmanRankResult",
    "ProbeResult",
    "observability_gramian",
    "kalman_rank_extended",
    "unique_continuation_probe",
]

NULLSPACE_RTOL = 1e-10  # eigenvalue threshold separating noise from rank deficiency


@dataclass(frozen=True)
class ObservabilityReport:
    gramian: np.ndarray  # (2n, 2n) over stacked (w_T, z_T)
    eigenvalues: np.ndarray  # non-increasing
    null_vectors: np.ndarray  # (k, 2n) rows spanning the numerical kernel
    verdict: str  # "observable" or "unobservable_direction"
    unobservable_direction: np.ndarray | None
    constant_K: float | None
    constant_K_per_window: np.ndarray | None  # (len(thetas), len(t1s))
    theta_grid: np.ndarray
    t1_grid: np.ndarray

    @property
    def observable(self):
        return self.verdict == "observable"


@dataclass(frozen=True)
class KalmanRankResult:
    rank: int
    dim: int  # full extended dimension 2n

    @property
    def controllable(self):
        return self.rank == self.dim


@dataclass(frozen=True)
class ProbeResult:
    worst_ratio: float
    worst_direction: np.ndarray
    ratios: np.ndarray = field(repr=False, default=None)


def _trapz_weights(n_nodes, dt):
    w = np.full(n_nodes, dt)
    w[0] = w[-1] = dt / 2
    return w


def observability_gramian(sys, grid, theta_samples=5, t1_samples=5):
    """Assemble the terminal-data Gramian and estimate the observability constant."""
    sys.check_grid(grid)
    n, N, d, dt = sys.dim, grid.n_steps, grid.delay_steps, grid.dt
    basis_w = []  # dual trajectories, node j at index j + d
    basis_obs = []
    eye = np.eye(n)
    zero = np.zeros(n)
    for i in range(n):
        adj = simulate_adjoint(sys, eye[i], zero, grid)
        basis_w.append(adj.traj.samples)
        basis_obs.append(adj.observation)
    for i in range(n):
        adj = simulate_adjoint(sys, zero, eye[i], grid)
        basis_w.append(adj.traj.samples)
        basis_obs.append(adj.observation)
    W = np.stack(basis_w)  # (2n, N + 2d + 1, n)
    O = np.stack(basis_obs)  # (2n, N + 1, m)

    tau = _trapz_weights(N + 1, dt)
    G = np.einsum("akm,k,bkm->ab", O, tau, O)
    G = 0.5 * (G + G.T)

    evals, evecs = eigh(G)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    gmax = max(evals[0], 0.0)
    null_mask = evals < NULLSPACE_RTOL * gmax if gmax > 0 else np.ones_like(evals, dtype=bool)
    null_vectors = evecs[:, null_mask].T

    # harmless kernel directions: w_T = 0 and Mtilde(t)^T z_T = 0 on the grid
    tilde_T = np.stack([eval_kernel(sys.Mtilde, float(t)).T for t in grid.times()])
    verdict = "observable"
    offender = None
    for v in null_vectors:
        w_part, z_part = v[:n], v[n:]
        if sys.Mtilde.dim == 1:
            tilde_norm = np.max(np.abs(tilde_T[:, 0, 0])) * np.linalg.norm(z_part)
        else:
            tilde_norm = np.max(np.linalg.norm(tilde_T @ z_part, axis=1))
        if np.linalg.norm(w_part) > 1e-6 or tilde_norm > 1e-6:
            verdict = "unobservable_direction"
            offender = v
            break

    thetas = np.round(np.linspace(-d, 0, theta_samples)).astype(int)
    t1s = np.round(np.linspace(N - d, N, t1_samples)).astype(int)
    K_win = None
    K = None
    if verdict == "observable":
        K_win = np.zeros((len(thetas), len(t1s)))
        keep = ~null_mask
        V = evecs[:, keep]  # observable directions
        lam = evals[keep]
        for a, i_th in enumerate(thetas):
            for b, i_t1 in enumerate(t1s):
                Nq = _window_energy_gramian(W, n, d, dt, N, i_th, i_t1)
                # max of <Nq v, v> / <G v, v> over the observable span
                Nr = V.T @ Nq @ V
                scale = 1.0 / np.sqrt(lam)
                K_win[a, b] = float(eigh(scale[:, None] * Nr * scale[None, :], eigvals_only=True)[-1])
        K = float(K_win.max())

    return ObservabilityReport(
        gramian=G,
        eigenvalues=evals,
        null_vectors=null_vectors,
        verdict=verdict,
        unobservable_direction=offender,
        constant_K=K,
        constant_K_per_window=K_win,
        theta_grid=grid.t_start + thetas * dt,
        t1_grid=grid.t_start + t1s * dt,
    )


def _window_energy_gramian(W, n, d, dt, N, i_th, i_t1):
    """Gramian of ||w(theta)||^2 + the two advanced-argument windows, over basis solves."""
    # w(theta): node i_th at array index i_th + d
    point = W[:, i_th + d, :]
    Nq = point @ point.T
    # int_{-h}^{theta} ||w(t+h)||^2 dt: nodes t+h in [0, theta+h]
    a_lo, a_hi = 0, i_th + d
    if a_hi > a_lo:
        tau = _trapz_weights(a_hi - a_lo + 1, dt)
        seg = W[:, a_lo + d: a_hi + d + 1, :]
        Nq = Nq + np.einsum("akn,k,bkn->ab", seg, tau, seg)
    # int_{t1-h}^{T-h} ||w(t+h)||^2 dt: nodes t+h in [t1, T]
    b_lo, b_hi = i_t1, N
    if b_hi > b_lo:
        tau = _trapz_weights(b_hi - b_lo + 1, dt)
        seg = W[:, b_lo + d: b_hi + d + 1, :]
        Nq = Nq + np.einsum("akn,k,bkn->ab", seg, tau, seg)
    return 0.5 * (Nq + Nq.T)


def kalman_rank_extended(A, G, Mtilde, B):
    """Kalman rank of the constant-kernel extended system [[A, G], [Mtilde, 0]], [B; 0]."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    Mt = np.atleast_2d(np.asarray(Mtilde, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 0:
        B = B.reshape(1, 1)
    elif B.ndim == 1:
        B = B.reshape(-1, 1)
    n = A.shape[0]
    for name, mat in (("A", A), ("G", G), ("Mtilde", Mt)):
        if mat.shape != (n, n):
            raise ShapeError(f"{name} must be {n}x{n}, got {mat.shape}")
    if B.shape[0] != n:
        raise ShapeError(f"B must have {n} rows, got {B.shape}")
    two_n = 2 * n
    Ahat = np.block([[A, G], [Mt, np.zeros((n, n))]])
    Bhat = np.vstack([B, np.zeros((n, B.shape[1]))])
    blocks = [Bhat]
    for _ in range(two_n - 1):
        blocks.append(Ahat @ blocks[-1])
    kalman = np.hstack(blocks)
    rank = int(np.linalg.matrix_rank(kalman))
    return KalmanRankResult(rank=rank, dim=two_n)


def unique_continuation_probe(sys, grid, n_samples=32, seed=0):
    """Sampled lower bound for observation energy against terminal-data size.

    Draws unit-norm terminal data (w_T, z_T), solves the dual system, and
    returns the smallest ratio

        int ||B^T w||^2 dt / ( ||w_T||^2 + (int ||Mtilde^T z_T|| dt)^2 ).

    A ratio floor bounded away from zero certifies, on this grid, that a
    vanishing observation forces both w_T and the terminal-memory forcing
    to vanish; a near-zero floor exposes the offending direction.
    """
    sys.check_grid(grid)
    n, N, dt = sys.dim, grid.n_steps, grid.dt
    rng = np.random.default_rng(seed)
    tau = _trapz_weights(N + 1, dt)
    tilde_T = np.stack([eval_kernel(sys.Mtilde, float(t)).T for t in grid.times()])
    worst = np.inf
    worst_dir = None
    ratios = []
    for _ in range(n_samples):
        v = rng.normal(size=2 * n)
        v /= np.linalg.norm(v)
        w_T, z_T = v[:n], v[n:]
        adj = simulate_adjoint(sys, w_T, z_T, grid)
        num = float(np.einsum("k,km->", tau, adj.observation ** 2))
        if sys.Mtilde.dim == 1:
            forcing_l1 = float(tau @ np.abs(tilde_T[:, 0, 0])) * np.linalg.norm(z_T)
        else:
            forcing_l1 = float(tau @ np.linalg.norm(tilde_T @ z_T, axis=1))
        den = float(w_T @ w_T) + forcing_l1 ** 2
        if den < 1e-300:
            continue
        r = num / den
        ratios.append(r)
        if r < worst:
            worst, worst_dir = r, v
    if worst_dir is None:
        warnings.warn("all probe denominators vanished; system has no terminal data to observe")
        return ProbeResult(worst_ratio=np.inf, worst_direction=np.zeros(2 * n), ratios=np.array([]))
    return ProbeResult(worst_ratio=float(worst), worst_direction=worst_dir, ratios=np.array(ratios))
