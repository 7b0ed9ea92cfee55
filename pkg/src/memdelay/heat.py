"""1-D heat equation with delay and memory on (0, pi), Dirichlet ends.

Builds the finite-difference system

    y_t = Dxx y(t) + L1 y(t-h) + int_0^t M(t-s) y(s) ds + chi_{omega(t)} u(t)

with Dxx the second-order discrete Laplacian, L1 either the Laplacian or
the identity, and a control support omega(t) that may sweep the domain,
follow a velocity field, or stay fixed.  A spectral decomposition through
the Dirichlet sine basis provides an independent oracle for the pure heat
semigroup and the coefficient-space control map used at low mode counts.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import GridError, HistoryFunction, MemoryKernel, TimeGrid, trajectory_to_csv
from .forward import DelaySystem, simulate_forward
from .synthesis import SynthesisConfig, synthesize_control, verify_terminal_conditions

__all__ = [
    "MovingRegion",
    "HeatConfig",
    "ExperimentResult",
    "laplacian_matrix",
    "space_grid",
    "region_mask",
    "build_heat_system",
    "explicit_control_profile",
    "run_experiment",
    "sine_modes",
    "spectral_apply",
    "spectral_control_map",
    "spectral_control_matrix",
    "spectral_heat_system",
]

DOMAIN_LENGTH = np.pi


@dataclass(frozen=True)
class MovingRegion:
    """Control support inside [0, pi]: a sweeping, flow-driven, or fixed interval."""

    kind: str  # "sweep" | "flow" | "fixed"
    width: float = 0.5
    horizon: float = 1.0  # sweep only: time to cross the domain
    lo: float = 0.0  # fixed only
    velocity: object = None  # flow only: f(t, x)
    seed_interval: tuple = (0.0, 0.5)  # flow only

    @classmethod
    def sweep(cls, width=0.5, horizon=1.0):
        if not 0 < width < DOMAIN_LENGTH:
            raise ValueError(f"sweep width must lie in (0, pi), got {width}")
        return cls(kind="sweep", width=width, horizon=horizon)

    @classmethod
    def fixed(cls, lo, hi):
        if not (0 <= lo < hi <= DOMAIN_LENGTH):
            raise ValueError(f"fixed interval [{lo}, {hi}] must sit inside [0, pi]")
        return cls(kind="fixed", width=hi - lo, lo=lo)

    @classmethod
    def flow(cls, velocity, seed_interval):
        a, b = seed_interval
        if not (0 <= a < b <= DOMAIN_LENGTH):
            raise ValueError(f"seed interval [{a}, {b}] must sit inside [0, pi]")
        return cls(kind="flow", velocity=velocity, seed_interval=(float(a), float(b)))

    def interval(self, t):
        """Endpoints of omega(t)."""
        if self.kind == "fixed":
            return self.lo, self.lo + self.width
        if self.kind == "sweep":
            delta = (DOMAIN_LENGTH - self.width) * t / self.horizon
            return delta, delta + self.width
        if self.kind == "flow":
            a = _flow_map(self.velocity, self.seed_interval[0], t)
            b = _flow_map(self.velocity, self.seed_interval[1], t)
            lo, hi = min(a, b), max(a, b)
            return lo, hi
        raise ValueError(f"unknown region kind {self.kind!r}")


def _flow_map(f, x0, t, steps_per_unit=200):
    """Advance x0 through dx/dt = f(t, x) from 0 to t with classical RK4."""
    if t == 0:
        return float(x0)
    n = max(1, int(np.ceil(abs(t) * steps_per_unit)))
    dt = t / n
    x = float(x0)
    s = 0.0
    for _ in range(n):
        k1 = f(s, x)
        k2 = f(s + dt / 2, x + dt / 2 * k1)
        k3 = f(s + dt / 2, x + dt / 2 * k2)
        k4 = f(s + dt, x + dt * k3)
        x += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        s += dt
    return x


def region_mask(region, t, xgrid):
    """0/1 indicator of omega(t) on the grid; interval endpoints are included."""
    lo, hi = region.interval(t)
    tol = 1e-12 * DOMAIN_LENGTH
    if lo < -tol or hi > DOMAIN_LENGTH + tol:
        raise ValueError(f"control region [{lo}, {hi}] leaves [0, pi] at t={t}")
    x = np.asarray(xgrid)
    return ((x >= lo - tol) & (x <= hi + tol)).astype(float)


def space_grid(nx):
    """Interior nodes of [0, pi] with spacing pi / (nx + 1)."""
    dx = DOMAIN_LENGTH / (nx + 1)
    return dx * np.arange(1, nx + 1), dx


def laplacian_matrix(nx):
    """Second-order Dirichlet Laplacian on the interior grid, (1/dx^2) tridiag(1, -2, 1)."""
    if nx < 3:
        raise ValueError(f"need at least 3 interior points, got {nx}")
    _, dx = space_grid(nx)
    A = (np.diag(-2.0 * np.ones(nx)) + np.diag(np.ones(nx - 1), 1) + np.diag(np.ones(nx - 1), -1))
    return A / dx ** 2


@dataclass(frozen=True)
class HeatConfig:
    nx: int = 50
    nt: int = 200
    T: float = 1.0
    h: float = 0.1
    kernel: MemoryKernel = field(default_factory=lambda: MemoryKernel.exp_poly(-1.0, 1.0))
    delay_operator: str = "identity"  # "identity" | "laplacian"
    region: MovingRegion = field(default_factory=lambda: MovingRegion.sweep(0.5, 1.0))
    control: str = "explicit"  # "explicit" | "zero" | "synthesized"
    history: str = "constant"  # "constant" | "final_only"
    profile: object = np.sin  # initial spatial profile on the interior grid
    tol: float = 1e-3
    synthesis: SynthesisConfig | None = None

    def __post_init__(self):
        if self.nx < 3:
            raise ValueError(f"nx must be >= 3, got {self.nx}")
        if self.delay_operator not in ("identity", "laplacian"):
            raise ValueError(f"delay_operator must be 'identity' or 'laplacian', got {self.delay_operator!r}")
        if self.control not in ("explicit", "zero", "synthesized"):
            raise ValueError(f"unknown control kind {self.control!r}")
        # delay must land on a node: nt * (h / T) integral
        ratio = self.nt * self.h / self.T
        if abs(ratio - round(ratio)) > 1e-9:
            raise GridError(f"nt*(h/T) = {ratio} must be an integer for node-aligned delay")


def build_heat_system(cfg):
    """Assemble the DelaySystem for a heat configuration."""
    xgrid, _ = space_grid(cfg.nx)
    A = laplacian_matrix(cfg.nx)
    A1 = A if cfg.delay_operator == "laplacian" else np.eye(cfg.nx)
    profile = cfg.profile(xgrid) if callable(cfg.profile) else np.asarray(cfg.profile, dtype=float)
    grid = TimeGrid.for_horizon(cfg.T, cfg.nt, cfg.h)
    if cfg.history == "constant":
        history = HistoryFunction.constant(profile, cfg.h, grid.delay_steps)
    elif cfg.history == "final_only":
        history = HistoryFunction.zero_before_final(profile, cfg.h, grid.delay_steps)
    else:
        raise ValueError(f"unknown history kind {cfg.history!r}")

    region = cfg.region

    def B(t):
        return np.diag(region_mask(region, t, xgrid))

    sys = DelaySystem(
        A=A, A1=A1, M=cfg.kernel, Mtilde=cfg.kernel, B=B,
        h=cfg.h, T=cfg.T, history=history,
    )
    return sys, grid, xgrid


def explicit_control_profile(t, xgrid):
    """Reference control -t * exp(-pi^2 t) * sin(pi x) on the grid."""
    return -t * np.exp(-np.pi ** 2 * t) * np.sin(np.pi * np.asarray(xgrid))


@dataclass(frozen=True)
class ExperimentResult:
    trajectory: object
    report: object  # TerminalReport
    control: np.ndarray
    norms: np.ndarray  # (n_nodes, 2): time, L2 norm
    metrics: dict
    files: dict


def run_experiment(cfg, outdir=None):
    """Run a heat configuration end to end and optionally write CSV artifacts.

    Artifacts: ``field.csv`` (t, x, y rows over the whole computed span
    including the history segment), ``norms.csv`` (t, L2 norm), and the
    returned metrics (terminal residuals, memory integral at T, tail sup).
    """
    sys, grid, xgrid = build_heat_system(cfg)
    _, dx = space_grid(cfg.nx)
    if cfg.control == "zero":
        u = None
        control = np.zeros((grid.n_steps + 1, cfg.nx))
    elif cfg.control == "explicit":
        control = np.stack([explicit_control_profile(t, xgrid) for t in grid.times()])
        u = control
    else:
        result = synthesize_control(sys, grid, cfg.synthesis or SynthesisConfig(tol=cfg.tol))
        control = result.control
        u = control

    traj = simulate_forward(sys, u, grid)
    report = verify_terminal_conditions(traj, sys.Mtilde, cfg.h, cfg.tol)
    norms = np.column_stack([traj.times, np.sqrt(dx * np.sum(traj.samples ** 2, axis=1))])
    metrics = {
        "res_a": report.res_a,
        "res_b": report.res_b,
        "res_c": report.res_c,
        "memory_integral_at_T": float(report.res_b_per_theta[-1]),
        "sup_tail": report.res_c,
        "final_l2_norm": float(norms[-1, 1]),
        "max_l2_norm": float(norms[:, 1].max()),
    }
    files = {}
    if outdir is not None:
        files["field"] = _write_field_csv(f"{outdir}/field.csv", traj, xgrid)
        np.savetxt(f"{outdir}/norms.csv", norms, delimiter=",", header="t,l2_norm",
                   comments="", fmt="%.17g")
        files["norms"] = f"{outdir}/norms.csv"
    return ExperimentResult(
        trajectory=traj, report=report, control=control,
        norms=norms, metrics=metrics, files=files,
    )


def _write_field_csv(path, traj, xgrid):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y"])
        for t, row in zip(traj.times, traj.samples):
            for x, y in zip(xgrid, row):
                writer.writerow([f"{t:.17g}", f"{x:.17g}", f"{y:.17g}"])
    return path


# ---------------------------------------------------------------------------
# Spectral oracle: Dirichlet sine basis on (0, pi)

def sine_modes(xgrid, n_modes):
    """Rows are psi_n(x) = sqrt(2/pi) sin(n x), n = 1..n_modes."""
    n = np.arange(1, n_modes + 1)[:, None]
    return np.sqrt(2.0 / DOMAIN_LENGTH) * np.sin(n * np.asarray(xgrid)[None, :])


def spectral_apply(profile, t, n_modes, xgrid):
    """Heat semigroup through the sine basis: damp mode n by exp(-n^2 t)."""
    profile = np.asarray(profile, dtype=float)
    if n_modes > profile.shape[0]:
        raise ValueError(
            f"n_modes={n_modes} exceeds the {profile.shape[0]} resolvable grid modes"
        )
    psi = sine_modes(xgrid, n_modes)
    dx = DOMAIN_LENGTH / (profile.shape[0] + 1)
    coeffs = dx * (psi @ profile)
    damped = np.exp(-np.arange(1, n_modes + 1) ** 2 * t) * coeffs
    return psi.T @ damped


def spectral_control_map(u_coeffs, xgrid):
    """Profile of the coefficient-space control map.

    ``u_coeffs[j]`` multiplies psi_{j+2}; the first coefficient also feeds
    2 psi_1, so the map is 2 u_2 psi_1 + sum_{n >= 2} u_n psi_n.
    """
    u = np.atleast_1d(np.asarray(u_coeffs, dtype=float))
    n_modes = u.shape[0] + 1
    psi = sine_modes(xgrid, n_modes)
    profile = 2.0 * u[0] * psi[0]
    for j, c in enumerate(u):
        profile = profile + c * psi[j + 1]
    return profile


def spectral_control_matrix(n_modes):
    """Coefficient-space matrix of the control map, (n_modes, n_modes - 1)."""
    if n_modes < 2:
        raise ValueError("need at least two modes for the coefficient-space control map")
    B = np.zeros((n_modes, n_modes - 1))
    B[0, 0] = 2.0
    for j in range(n_modes - 1):
        B[j + 1, j] = 1.0
    return B


def spectral_heat_system(n_modes, kernel, h, T, n_steps=None, initial_coeffs=None,
                         history="final_only"):
    """Low-mode truncation with A = diag(-n^2), delayed operator A1 = A.

    ``initial_coeffs`` defaults to the sine-basis coefficients of sin(x),
    which load only the first mode.
    """
    lam = -np.arange(1, n_modes + 1, dtype=float) ** 2
    A = np.diag(lam)
    B = spectral_control_matrix(n_modes)
    if initial_coeffs is None:
        initial_coeffs = np.zeros(n_modes)
        initial_coeffs[0] = np.sqrt(DOMAIN_LENGTH / 2.0)  # <sin, psi_1>
    if n_steps is None:
        n_steps = int(round(T / h)) * 20
    grid = TimeGrid.for_horizon(T, n_steps, h)
    if history == "final_only":
        hist = HistoryFunction.zero_before_final(initial_coeffs, h, grid.delay_steps)
    else:
        hist = HistoryFunction.constant(initial_coeffs, h, grid.delay_steps)
    sys = DelaySystem(A=A, A1=A, M=kernel, Mtilde=kernel, B=B, h=h, T=T, history=hist)
    return sys, grid
