"""Domain types and quadrature primitives shared by every solver.

A problem lives on a uniform time grid whose step divides the delay
exactly, so the retarded sample y(t - h) always lands on a node and the
method of steps never interpolates.  Memory terms are Volterra
convolutions evaluated with composite-trapezoid weights on the same grid.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridError",
    "KernelDomainError",
    "ShapeError",
    "StepFailureError",
    "TimeGrid",
    "MemoryKernel",
    "HistoryFunction",
    "Trajectory",
    "eval_kernel",
    "eval_kernel_derivative",
    "kernel_values",
    "convolve_memory",
    "kernel_to_json",
    "kernel_from_json",
    "history_to_json",
    "history_from_json",
    "trajectory_to_csv",
]

_ALIGN_RTOL = 1e-9


class GridError(ValueError):
    """Time grid and delay (or a requested time) are inconsistent."""


class KernelDomainError(ValueError):
    """Kernel evaluated at a time outside its domain."""


class ShapeError(ValueError):
    """Array dimensions of kernels, states, or operators do not match."""


class StepFailureError(RuntimeError):
    """A linear solve inside a time step failed (singular or non-finite)."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t_start, t_end] with a node-aligned delay.

    ``delay_steps * dt`` must reproduce the delay h exactly (to rounding),
    which is enforced by the constructors below rather than here.
    """

    t_start: float
    t_end: float
    dt: float
    n_steps: int
    delay_steps: int

    def __post_init__(self):
        if self.dt <= 0:
            raise GridError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise GridError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.delay_steps < 1:
            raise GridError(f"delay_steps must be >= 1, got {self.delay_steps}")
        span = self.t_end - self.t_start
        if abs(span - self.n_steps * self.dt) > self.n_steps * np.finfo(float).eps * max(1.0, abs(span)):
            raise GridError(
                f"t_end - t_start = {span} is not n_steps*dt = {self.n_steps * self.dt}"
            )

    @classmethod
    def for_horizon(cls, T, n_steps, h, t_start=0.0):
        """Grid on [t_start, t_start+T] with n_steps steps; h must be a node multiple."""
        dt = T / n_steps
        d = h / dt
        delay_steps = int(round(d))
        if delay_steps < 1 or abs(d - delay_steps) > _ALIGN_RTOL * max(1.0, d):
            raise GridError(f"delay h={h} is not an integer multiple of dt={dt}")
        return cls(t_start, t_start + T, dt, n_steps, delay_steps)

    @property
    def h(self):
        return self.delay_steps * self.dt

    @property
    def T(self):
        return self.t_end - self.t_start

    def times(self, lead=0, trail=0):
        """Node times from ``lead`` nodes before t_start to ``trail`` past t_end."""
        idx = np.arange(-lead, self.n_steps + trail + 1)
        return self.t_start + idx * self.dt

    def index_of(self, t):
        """Node index of time t (0 at t_start); raises if t is off-grid."""
        x = (t - self.t_start) / self.dt
        k = int(round(x))
        if abs(x - k) > 1e-6:
            raise GridError(f"time {t} is not aligned with the grid (dt={self.dt})")
        return k


@dataclass(frozen=True)
class MemoryKernel:
    """Matrix-valued convolution kernel in one of four forms.

    form:
      - "zero":      M(t) = 0
      - "constant":  M(t) = coeffs[0]
      - "exp_poly":  M(t) = exp(a*t) * sum_k coeffs[k] * t**k
      - "sampled":   uniform table with linear interpolation

    ``dim == 1`` kernels act as scalar multipliers on states of any
    dimension (space-independent kernels); otherwise dim must equal the
    state dimension.
    """

    form: str
    coeffs: np.ndarray = field(default=None)  # (K+1, dim, dim); sampled: (n_samp, dim, dim)
    rate: float = 0.0
    spacing: float = 0.0  # sampled form only
    dim: int = 1

    @classmethod
    def zero(cls, dim=1):
        return cls(form="zero", coeffs=np.zeros((1, dim, dim)), dim=dim)

    @classmethod
    def constant(cls, matrix):
        m = _as_square(matrix)
        return cls(form="constant", coeffs=m[None, :, :], dim=m.shape[0])

    @classmethod
    def exp_poly(cls, rate, coeffs):
        """exp(rate*t) * sum_k coeffs[k] t^k; coeffs is a scalar, matrix, or list of matrices."""
        stack = _as_coeff_stack(coeffs)
        return cls(form="exp_poly", coeffs=stack, rate=float(rate), dim=stack.shape[1])

    @classmethod
    def sampled(cls, spacing, values):
        vals = _as_coeff_stack(values)
        if spacing <= 0:
            raise ValueError(f"sample spacing must be positive, got {spacing}")
        if vals.shape[0] < 2:
            raise ValueError("sampled kernel needs at least two samples")
        return cls(form="sampled", coeffs=vals, spacing=float(spacing), dim=vals.shape[1])

    @property
    def t_max(self):
        """Largest admissible argument (inf except for sampled tables)."""
        if self.form == "sampled":
            return (self.coeffs.shape[0] - 1) * self.spacing
        return np.inf

    @property
    def is_zero(self):
        return self.form == "zero"


def _as_square(matrix):
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"kernel coefficient must be square, got shape {m.shape}")
    return m


def _as_coeff_stack(coeffs):
    arr = np.asarray(coeffs, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1, 1)
    elif arr.ndim == 1:  # list of scalars
        arr = arr.reshape(-1, 1, 1)
    elif arr.ndim == 2:  # single matrix
        arr = arr[None, :, :]
    elif arr.ndim != 3:
        raise ShapeError(f"kernel coefficients must stack to (K+1, n, n), got shape {arr.shape}")
    if arr.shape[1] != arr.shape[2]:
        raise ShapeError(f"kernel coefficient matrices must be square, got shape {arr.shape[1:]}")
    return arr


def eval_kernel(kernel, t):
    """Value of the kernel at time t >= 0, as a (dim, dim) matrix."""
    if t < 0:
        raise KernelDomainError(f"kernel argument must be nonnegative, got {t}")
    if kernel.form == "zero":
        return np.zeros((kernel.dim, kernel.dim))
    if kernel.form == "constant":
        return kernel.coeffs[0].copy()
    if kernel.form == "exp_poly":
        powers = t ** np.arange(kernel.coeffs.shape[0])
        return np.exp(kernel.rate * t) * np.tensordot(powers, kernel.coeffs, axes=(0, 0))
    if kernel.form == "sampled":
        if t > kernel.t_max * (1 + 1e-12):
            raise KernelDomainError(
                f"argument {t} beyond sampled table range [0, {kernel.t_max}]"
            )
        x = min(t / kernel.spacing, kernel.coeffs.shape[0] - 1)
        j = min(int(x), kernel.coeffs.shape[0] - 2)
        lam = x - j
        return (1 - lam) * kernel.coeffs[j] + lam * kernel.coeffs[j + 1]
    raise ValueError(f"unknown kernel form {kernel.form!r}")


def eval_kernel_derivative(kernel, t):
    """d/dt of an exp-poly, constant, or zero kernel (sampled tables unsupported)."""
    if t < 0:
        raise KernelDomainError(f"kernel argument must be nonnegative, got {t}")
    if kernel.form in ("zero", "constant"):
        return np.zeros((kernel.dim, kernel.dim))
    if kernel.form == "exp_poly":
        k = np.arange(kernel.coeffs.shape[0])
        powers = t ** k
        poly = np.tensordot(powers, kernel.coeffs, axes=(0, 0))
        # derivative of t^k is k t^(k-1); the k=0 term drops out
        dpow = np.where(k > 0, k * t ** np.maximum(k - 1, 0), 0.0)
        dpoly = np.tensordot(dpow, kernel.coeffs, axes=(0, 0))
        return np.exp(kernel.rate * t) * (kernel.rate * poly + dpoly)
    raise KernelDomainError(f"no analytic derivative for kernel form {kernel.form!r}")


def kernel_values(kernel, times):
    """Stacked kernel values at an array of times, shape (len(times), dim, dim)."""
    return np.stack([eval_kernel(kernel, float(t)) for t in np.asarray(times)])


@dataclass(frozen=True)
class HistoryFunction:
    """State samples on the delay window [-h, 0], one per grid node.

    Linear interpolation between samples; evaluation outside [-h, 0]
    raises.  ``values[k]`` is the sample at theta = -h + k*(h/delay_steps),
    so values[-1] is the state at time 0.
    """

    values: np.ndarray  # (delay_steps + 1, dim)
    h: float

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", vals)
        if self.h <= 0:
            raise ValueError(f"delay h must be positive, got {self.h}")
        if vals.shape[0] < 2:
            raise ShapeError("history needs delay_steps + 1 >= 2 samples")

    @classmethod
    def constant(cls, value, h, delay_steps):
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.tile(v, (delay_steps + 1, 1)), h)

    @classmethod
    def zero_before_final(cls, final, h, delay_steps):
        """Zero on [-h, 0) with the given state at theta = 0."""
        v = np.atleast_1d(np.asarray(final, dtype=float))
        vals = np.zeros((delay_steps + 1, v.size))
        vals[-1] = v
        return cls(vals, h)

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def delay_steps(self):
        return self.values.shape[0] - 1

    def __call__(self, theta):
        if theta < -self.h - 1e-12 or theta > 1e-12:
            raise ValueError(f"history argument {theta} outside [-{self.h}, 0]")
        x = (theta + self.h) / (self.h / self.delay_steps)
        x = min(max(x, 0.0), float(self.delay_steps))
        j = min(int(x), self.delay_steps - 1)
        lam = x - j
        return (1 - lam) * self.values[j] + lam * self.values[j + 1]

    def vanishes_before_final(self, tol=0.0):
        """True when every sample strictly before theta = 0 is zero."""
        return bool(np.all(np.abs(self.values[:-1]) <= tol))


@dataclass(frozen=True)
class Trajectory:
    """Time-gridded state samples, optionally with leading/trailing segments.

    ``samples[lead + k]`` is the state at node k of [t_start, t_end];
    ``lead`` nodes before t_start hold the attached history (forward runs)
    and any samples past t_end hold the zero extension (dual runs).
    """

    grid: TimeGrid
    samples: np.ndarray  # (lead + n_steps + 1 + trail, dim)
    lead: int = 0

    def __post_init__(self):
        object.__setattr__(self, "samples", np.atleast_2d(np.asarray(self.samples, dtype=float)))
        if self.lead < 0 or self.samples.shape[0] < self.lead + self.grid.n_steps + 1:
            raise ShapeError(
                f"trajectory with {self.samples.shape[0]} samples cannot cover "
                f"lead={self.lead} plus {self.grid.n_steps + 1} grid nodes"
            )

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def trail(self):
        return self.samples.shape[0] - self.lead - self.grid.n_steps - 1

    @property
    def times(self):
        return self.grid.times(lead=self.lead, trail=self.trail)

    def node(self, k):
        """State at node k of the main segment; negative k reaches the lead segment."""
        if k < -self.lead or k > self.grid.n_steps + self.trail:
            raise GridError(f"node {k} outside trajectory range [{-self.lead}, {self.grid.n_steps + self.trail}]")
        return self.samples[self.lead + k]

    def main_segment(self):
        """Samples on [t_start, t_end] only, shape (n_steps + 1, dim)."""
        return self.samples[self.lead:self.lead + self.grid.n_steps + 1]


def convolve_memory(traj, kernel, t_index):
    """Trapezoid approximation of int_0^t M(t-s) y(s) ds at node ``t_index``.

    Uses the trajectory's main-segment samples; t_index = 0 returns zero.
    """
    if t_index < 0 or t_index > traj.grid.n_steps:
        raise GridError(f"t_index {t_index} outside [0, {traj.grid.n_steps}]")
    _check_kernel_dim(kernel, traj.dim)
    y = traj.main_segment()
    if t_index == 0 or kernel.is_zero:
        return np.zeros(traj.dim)
    dt = traj.grid.dt
    offsets = np.arange(t_index + 1) * dt  # kernel arguments t - s for s = t .. 0
    weights = np.full(t_index + 1, dt)
    weights[0] = weights[-1] = dt / 2
    if kernel.dim == 1:
        c = np.array([eval_kernel(kernel, float(tau))[0, 0] for tau in offsets])
        return (weights * c) @ y[t_index::-1]
    mats = kernel_values(kernel, offsets)
    return np.einsum("t,tij,tj->i", weights, mats, y[t_index::-1])


def _check_kernel_dim(kernel, dim):
    if kernel.dim not in (1, dim):
        raise ShapeError(f"kernel dimension {kernel.dim} incompatible with state dimension {dim}")


# ---------------------------------------------------------------------------
# JSON / CSV interchange

def kernel_to_json(kernel):
    if kernel.form == "zero":
        return {"form": "zero", "dim": kernel.dim}
    if kernel.form == "constant":
        return {"form": "constant", "matrix": kernel.coeffs[0].tolist()}
    if kernel.form == "exp_poly":
        return {"form": "exp_poly", "a": kernel.rate, "coeffs": kernel.coeffs.tolist()}
    if kernel.form == "sampled":
        return {"form": "sampled", "spacing": kernel.spacing, "values": kernel.coeffs.tolist()}
    raise ValueError(f"unknown kernel form {kernel.form!r}")


def kernel_from_json(doc):
    form = doc.get("form")
    if form == "zero":
        return MemoryKernel.zero(dim=int(doc.get("dim", 1)))
    if form == "constant":
        return MemoryKernel.constant(doc["matrix"])
    if form == "exp_poly":
        return MemoryKernel.exp_poly(doc["a"], doc["coeffs"])
    if form == "sampled":
        return MemoryKernel.sampled(doc["spacing"], doc["values"])
    raise ValueError(f"unknown kernel form {form!r}")


def history_to_json(history):
    return {"values": history.values.tolist(), "h": history.h}


def history_from_json(doc):
    return HistoryFunction(np.asarray(doc["values"], dtype=float), float(doc["h"]))


def trajectory_to_csv(traj, path, prefix="y"):
    """Write one row per node: t, y_1, ..., y_n."""
    header = "t," + ",".join(f"{prefix}_{i + 1}" for i in range(traj.dim))
    data = np.column_stack([traj.times, traj.samples])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
