"""Singular-in-time weight functions and the weighted energy functionals.

The scalar profile g blows up like 1/t at both ends of (0, T), bridges
monotonically to 1 on a transition band, and is symmetric about T/2.
Composite weights on a space-time grid,

    phi(t, x)   = g(t) (exp(lam * psi_max) - exp(lam * psi(t, x)))
    theta(t, x) = g(t) exp(lam * psi(t, x)),

feed two nonnegative quadratic functionals: a field energy that weights
second space differences, the delayed copy, the time derivative, the
gradient and the field itself, and an observation energy for a source
term.  Both are exploratory diagnostics: the profile psi is a heuristic
stand-in shaped around the moving control region, not a certified weight.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import GridError

__all__ = [
    "WeightSpec",
    "weight_g",
    "eval_weights",
    "weight_fields",
    "functional_IH",
    "functional_IO",
    "default_psi",
]


def weight_g(t, delta, T):
    """Piecewise weight: 1/t below delta/2, cubic bridge to 1 at delta, symmetric in T-t.

    The bridge is the Hermite cubic matching value and slope of 1/t at
    delta/2 and the constant 1 (zero slope) at delta; it is strictly
    decreasing for delta <= 4/3, which covers every configuration with
    delta < T/2 <= 2/3 * 2.
    """
    if not 0 < delta < T / 2:
        raise ValueError(f"delta={delta} must lie in (0, T/2) for T={T}")
    if not 0 < t < T:
        raise ValueError(f"weight argument t={t} must lie in (0, {T})")
    if t > T / 2:
        t = T - t
    if t < delta / 2:
        return 1.0 / t
    if t >= delta:
        return 1.0
    # Hermite cubic on [delta/2, delta]
    w = delta / 2
    s = (t - delta / 2) / w
    p0, m0 = 2.0 / delta, -4.0 / delta ** 2
    p1, m1 = 1.0, 0.0
    h00 = 2 * s ** 3 - 3 * s ** 2 + 1
    h10 = s ** 3 - 2 * s ** 2 + s
    h01 = -2 * s ** 3 + 3 * s ** 2
    h11 = s ** 3 - s ** 2
    return h00 * p0 + h10 * w * m0 + h01 * p1 + h11 * w * m1


@dataclass(frozen=True)
class WeightSpec:
    """Weight parameters plus the space-time grid carrying psi.

    ``psi`` has shape (len(tgrid), len(xgrid)).  When
    ``require_floor=True`` the profile must stay above 3/4 of its sup.
    """

    delta: float
    lam: float
    s: float
    tgrid: np.ndarray
    xgrid: np.ndarray
    psi: np.ndarray
    T: float
    require_floor: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tgrid", np.asarray(self.tgrid, dtype=float))
        object.__setattr__(self, "xgrid", np.asarray(self.xgrid, dtype=float))
        object.__setattr__(self, "psi", np.asarray(self.psi, dtype=float))
        if not 0 < self.delta < self.T / 2:
            raise ValueError(f"delta={self.delta} must lie in (0, T/2)")
        if self.lam < 0 or self.s <= 0:
            raise ValueError("lam must be >= 0 and s > 0")
        if self.psi.shape != (self.tgrid.size, self.xgrid.size):
            raise ValueError(
                f"psi shape {self.psi.shape} does not match grids "
                f"({self.tgrid.size}, {self.xgrid.size})"
            )
        if self.require_floor:
            top = np.max(np.abs(self.psi))
            if np.min(self.psi) < 0.75 * top - 1e-12:
                raise ValueError("psi drops below 3/4 of its sup norm")

    @property
    def psi_max(self):
        return float(np.max(self.psi))


def _nearest_index(grid, value, name):
    i = int(np.argmin(np.abs(grid - value)))
    if abs(grid[i] - value) > 1e-9 * max(1.0, abs(value)):
        raise GridError(f"{name}={value} is not a grid node")
    return i


def eval_weights(spec, t, x):
    """(phi, theta) at a grid node (t, x)."""
    it = _nearest_index(spec.tgrid, t, "t")
    ix = _nearest_index(spec.xgrid, x, "x")
    g = weight_g(t, spec.delta, spec.T)
    e = np.exp(spec.lam * spec.psi[it, ix])
    e_max = np.exp(spec.lam * spec.psi_max)
    return g * (e_max - e), g * e


def weight_fields(spec, t_indices=None):
    """phi and theta on the grid rows ``t_indices`` (default: interior rows)."""
    if t_indices is None:
        t_indices = np.arange(1, spec.tgrid.size - 1)
    g = np.array([weight_g(spec.tgrid[i], spec.delta, spec.T) for i in t_indices])
    e = np.exp(spec.lam * spec.psi[t_indices])
    e_max = np.exp(spec.lam * spec.psi_max)
    phi = g[:, None] * (e_max - e)
    theta = g[:, None] * e
    return phi, theta


def default_psi(region, tgrid, xgrid):
    """Heuristic profile 1 - eps * dist(x, center of omega(t))^2, floored at 3/4 of max.

    A smooth stand-in concentrated on the moving support; not a certified
    weight, but it satisfies the 3/4-floor normalization by construction.
    """
    tgrid = np.asarray(tgrid, dtype=float)
    xgrid = np.asarray(xgrid, dtype=float)
    centers = np.array([0.5 * sum(region.interval(t)) for t in tgrid])
    dist2 = (xgrid[None, :] - centers[:, None]) ** 2
    eps = 0.25 / max(dist2.max(), 1e-300)
    return 1.0 - eps * dist2


def _second_diff_x(p, dx):
    """Dirichlet second difference in x (zero boundary values)."""
    out = np.empty_like(p)
    padded = np.pad(p, ((0, 0), (1, 1)))
    out[:, :] = (padded[:, :-2] - 2 * padded[:, 1:-1] + padded[:, 2:]) / dx ** 2
    return out


def _first_diff_x(p, dx):
    padded = np.pad(p, ((0, 0), (1, 1)))
    return (padded[:, 2:] - padded[:, :-2]) / (2 * dx)


def functional_IH(p, spec, h, history=None):
    """Weighted field energy with a delayed second-difference copy.

    ``p`` is (len(tgrid), len(xgrid)); ``history`` optionally supplies the
    rows of p on [-h, 0) (zero extension otherwise).  The quadrature runs
    over interior time rows because the weights are singular at t = 0, T.
    """
    p = np.asarray(p, dtype=float)
    nt, nx = spec.tgrid.size, spec.xgrid.size
    if nx < 3:
        raise ValueError("need at least 3 space nodes for second differences")
    if p.shape != (nt, nx):
        raise ValueError(f"field shape {p.shape} does not match grids ({nt}, {nx})")
    dtg = spec.tgrid[1] - spec.tgrid[0]
    dx = spec.xgrid[1] - spec.xgrid[0]
    d = h / dtg
    dlag = int(round(d))
    if abs(d - dlag) > 1e-9:
        raise GridError(f"delay h={h} is not an integer multiple of the field time step {dtg}")

    ext = np.zeros((dlag, nx)) if history is None else np.asarray(history, dtype=float)
    if ext.shape != (dlag, nx):
        raise ValueError(f"history must have shape ({dlag}, {nx}), got {ext.shape}")
    p_ext = np.vstack([ext, p])  # rows for t in [-h, T]

    lap = _second_diff_x(p, dx)
    lap_delayed = _second_diff_x(p_ext[: nt], dx)  # row k is p at t_k - h
    grad = _first_diff_x(p, dx)
    p_t = np.gradient(p, dtg, axis=0)

    rows = np.arange(1, nt - 1)
    phi, theta = weight_fields(spec, rows)
    s, lam = spec.s, spec.lam
    st = s * theta
    integrand = (
        (1.0 / st) * (lap[rows] ** 2 + lap_delayed[rows] ** 2 + p_t[rows] ** 2)
        + lam ** 2 * st * grad[rows] ** 2
        + lam ** 4 * st ** 3 * p[rows] ** 2
    ) * np.exp(-2 * s * phi)
    return float(np.trapezoid(np.trapezoid(integrand, dx=dx, axis=1), dx=dtg))


def functional_IO(q, spec):
    """Weighted observation energy lam^2 * s * int theta q^2 exp(-2 s phi)."""
    q = np.asarray(q, dtype=float)
    nt, nx = spec.tgrid.size, spec.xgrid.size
    if q.shape != (nt, nx):
        raise ValueError(f"field shape {q.shape} does not match grids ({nt}, {nx})")
    dtg = spec.tgrid[1] - spec.tgrid[0]
    dx = spec.xgrid[1] - spec.xgrid[0]
    rows = np.arange(1, nt - 1)
    phi, theta = weight_fields(spec, rows)
    integrand = spec.lam ** 2 * spec.s * theta * q[rows] ** 2 * np.exp(-2 * spec.s * phi)
    return float(np.trapezoid(np.trapezoid(integrand, dx=dx, axis=1), dx=dtg))
