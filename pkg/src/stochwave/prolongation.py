"""Piecewise-constant-in-time views of discrete trajectories.

Two interpolation conventions appear in the convergence analysis of the
scheme and both are exposed here:

* RIGHT: the value on the half-open cell (t_{n-1}, t_n] is the level-n
  vector (and the level-1 vector at t = 0),
* LEFT: the value on [t_{n-1}, t_n) is the level-(n-1) vector for n >= 2,
  with a dedicated head value on [0, tau) (zero for velocities, the initial
  displacement for displacements) and the level-N vector at t = T.

At interior grid points both conventions agree. Time integrals of these
processes are exact finite sums, and this module computes them that way; it
also provides the forward cell-averaging operator and its summation-by-parts
identity relating the two conventions, which holds exactly cell by cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .stepper import Trajectory


def _grid_index_right(t: float, tau: float, n_steps: int) -> int:
    """Index n with t in (t_{n-1}, t_n], snapping to grid points; 0 iff t = 0."""
    if t < -1e-12 * tau or t > (n_steps + 1e-9) * tau:
        raise ValueError(f"time {t} outside [0, {n_steps * tau}]")
    k = t / tau
    r = round(k)
    if abs(k - r) <= 1e-9 * max(1.0, abs(k)):
        return int(r)
    return int(ceil(k))


def theta_plus(t: float, tau: float, horizon: float) -> float:
    """Right endpoint of the grid cell containing t; fixed to 0 at t = 0."""
    n_steps = int(round(horizon / tau))
    n = _grid_index_right(t, tau, n_steps)
    return n * tau


@dataclass(frozen=True)
class PiecewiseConstantProcess:
    """Indexed view over level vectors; evaluation is index arithmetic.

    ``values`` has shape (N + 1, dim) and is held by reference, not copied.
    """

    values: np.ndarray
    tau: float
    convention: str
    head: np.ndarray | None = None

    def __post_init__(self):
        if self.convention not in ("right", "left"):
            raise ValueError("convention must be 'right' or 'left'")
        if self.convention == "left" and self.head is None:
            raise ValueError("left convention needs a head value for [0, tau)")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def horizon(self) -> float:
        return self.n_steps * self.tau

    def cell_value(self, n: int) -> np.ndarray:
        """Value on the n-th cell (t_{n-1}, t_n) for n = 1..N."""
        if self.convention == "right":
            return self.values[n]
        return self.head if n == 1 else self.values[n - 1]


def evaluate(process: PiecewiseConstantProcess, t: float) -> np.ndarray:
    n_steps = process.n_steps
    tau = process.tau
    if process.convention == "right":
        n = _grid_index_right(t, tau, n_steps)
        return process.values[max(n, 1)]
    # left convention: grid points evaluate to their own level, except that
    # all of [0, tau) maps to the head.
    k = t / tau
    r = round(k)
    if abs(k - r) <= 1e-9 * max(1.0, abs(k)):
        n = int(r)
        if n < 0 or n > n_steps:
            raise ValueError(f"time {t} outside [0, {n_steps * tau}]")
        return process.head if n == 0 else process.values[n]
    n = int(np.floor(k))
    if n < 0 or n >= n_steps:
        raise ValueError(f"time {t} outside [0, {n_steps * tau}]")
    return process.head if n == 0 else process.values[n]


def velocity_process(traj: Trajectory) -> PiecewiseConstantProcess:
    return PiecewiseConstantProcess(values=traj.v, tau=traj.tau, convention="right")


def velocity_minus(traj: Trajectory) -> PiecewiseConstantProcess:
    head = np.zeros(traj.v.shape[1])
    return PiecewiseConstantProcess(values=traj.v, tau=traj.tau, convention="left", head=head)


def displacement_process(traj: Trajectory) -> PiecewiseConstantProcess:
    return PiecewiseConstantProcess(values=traj.u, tau=traj.tau, convention="right")


def displacement_minus(traj: Trajectory) -> PiecewiseConstantProcess:
    return PiecewiseConstantProcess(values=traj.u, tau=traj.tau, convention="left",
                                    head=traj.u[0])


def steklov_average(y: PiecewiseConstantProcess) -> PiecewiseConstantProcess:
    """Forward cell average (1/tau) int_{theta+(t)}^{theta+(t) + tau} y ds.

    For piecewise-constant input the average collapses to a one-cell forward
    shift, with zero on the final cell (t > T - tau maps to zero).
    """
    n = y.n_steps
    shifted = np.zeros_like(y.values)
    for cell in range(1, n):
        shifted[cell] = y.cell_value(cell + 1)
    shifted[0] = shifted[1] if n >= 2 else 0.0
    return PiecewiseConstantProcess(values=shifted, tau=y.tau, convention="right")


def verify_steklov_identity(y: PiecewiseConstantProcess, x_levels: np.ndarray) -> float:
    """Absolute defect of int_0^T <S y, x> dt = int_tau^T <y, x_minus> dt.

    x_levels holds the trajectory levels x^0..x^N; both sides are exact cell
    sums, so the defect is pure floating-point roundoff.
    """
    x_levels = np.asarray(x_levels, dtype=float)
    n = y.n_steps
    if x_levels.shape[0] != n + 1:
        raise ValueError("trajectory levels do not match the process grid")
    tau = y.tau
    sy = steklov_average(y)
    lhs = 0.0
    for cell in range(1, n + 1):
        lhs += tau * float(np.dot(sy.cell_value(cell), x_levels[cell]))
    rhs = 0.0
    for cell in range(2, n + 1):
        rhs += tau * float(np.dot(y.cell_value(cell), x_levels[cell - 1]))
    return abs(lhs - rhs)


def velocity_gap_integral(traj: Trajectory, spec) -> float:
    """int_0^T |v - v_minus|^2 dt by exact cell-wise evaluation."""
    right = velocity_process(traj)
    left = velocity_minus(traj)
    total = 0.0
    for cell in range(1, traj.n_steps + 1):
        diff = right.cell_value(cell) - left.cell_value(cell)
        total += traj.tau * spec.norm_h_sq(diff)
    return total


def displacement_gap_integral(traj: Trajectory, spec) -> float:
    """int_0^T |u - u_minus|_B^2 dt by exact cell-wise evaluation."""
    right = displacement_process(traj)
    left = displacement_minus(traj)
    total = 0.0
    for cell in range(1, traj.n_steps + 1):
        diff = right.cell_value(cell) - left.cell_value(cell)
        total += traj.tau * spec.elastic.norm_sq(diff)
    return total
