"""Seeded truncated Wiener increments on uniform time grids.

Paths store the increment matrix ``increments[n-1, j-1] = dW_j`` over the
n-th time cell, for n = 1..N and modes j = 1..r, with the convention that
the first row is identically zero (the first step of the scheme takes no
noise, so the initial velocity only needs to be square integrable).

Reproducibility contract: mode j of path ``path_index`` under ``seed`` is an
independent substream keyed by (seed, path_index, j) through a counter-based
generator (Philox), so raising the truncation level or generating ensemble
members in parallel never reshuffles existing draws. Refinement draws its
bridge midpoints from substreams additionally keyed by the refinement level,
so equal parents always refine to equal children.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

_BRIDGE_TAG = 7
_LEVEL_OFFSET = 2**20


@dataclass(frozen=True)
class WienerPath:
    """Truncated Wiener increments on a uniform grid of N steps.

    ``level`` tracks the bisection depth relative to the original generation
    (refinement increments it, coarsening decrements it); it participates in
    the substream keys for bridge draws.
    """

    n_steps: int
    tau: float
    r: int
    horizon: float
    increments: np.ndarray
    seed: int
    path_index: int = 0
    level: int = 0

    def __post_init__(self):
        if self.increments.shape != (self.n_steps, self.r):
            raise ValueError("increment matrix shape does not match (N, r)")

    def truncated(self, r: int) -> "WienerPath":
        """Restrict to the first r modes (exact sub-matrix, shared draws)."""
        if not 1 <= r <= self.r:
            raise ValueError(f"cannot truncate to {r} of {self.r} modes")
        return replace(self, r=r, increments=self.increments[:, :r])


def _mode_stream(seed: int, path_index: int, mode: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(path_index, mode))
    return np.random.Generator(np.random.Philox(ss))


def _bridge_stream(seed: int, path_index: int, mode: int, level: int) -> np.random.Generator:
    ss = np.random.SeedSequence(
        entropy=seed, spawn_key=(path_index, mode, _BRIDGE_TAG, _LEVEL_OFFSET + level))
    return np.random.Generator(np.random.Philox(ss))


def generate_path(n_steps: int, r: int, horizon: float, seed: int,
                  path_index: int = 0) -> WienerPath:
    """Draw a fresh path: N(0, tau) entries for steps 2..N, zeros for step 1."""
    if n_steps < 1:
        raise ValueError("need at least one time step")
    if r < 1:
        raise ValueError("need at least one noise mode")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    tau = horizon / n_steps
    inc = np.empty((n_steps, r))
    scale = np.sqrt(tau)
    for j in range(r):
        inc[:, j] = _mode_stream(seed, path_index, j + 1).normal(0.0, scale, n_steps)
    inc[0, :] = 0.0
    return WienerPath(n_steps=n_steps, tau=tau, r=r, horizon=horizon,
                      increments=inc, seed=seed, path_index=path_index)


def refine_path(path: WienerPath) -> WienerPath:
    """Bisect every time cell, conditioning on the parent increments.

    Children of parent cell n >= 2 are (p/2 + eta, p - (p/2 + eta)) with eta
    drawn N(0, tau_child / 2), so each child has the right variance, the two
    are independent, and their sum reproduces the parent to within one ulp.
    The parent's first (zero) cell splits into two zero cells: re-zeroing the
    child's first step displaces its bridge mass, which is cancelled against
    step 2 so the cumulative path from the parent's first grid point onward
    is unchanged (coupling near t = 0 is approximate by construction).
    """
    n, r = path.n_steps, path.r
    tau_child = 0.5 * path.tau
    eta = np.empty((n, r))
    scale = np.sqrt(0.5 * tau_child)
    for j in range(r):
        eta[:, j] = _bridge_stream(path.seed, path.path_index, j + 1,
                                   path.level).normal(0.0, scale, n)
    left = 0.5 * path.increments + eta
    right = path.increments - left
    child = np.empty((2 * n, r))
    child[0::2] = left
    child[1::2] = right
    child[0, :] = 0.0
    child[1, :] = 0.0
    return WienerPath(n_steps=2 * n, tau=tau_child, r=r, horizon=path.horizon,
                      increments=child, seed=path.seed, path_index=path.path_index,
                      level=path.level + 1)


def coarsen_path(path: WienerPath) -> WienerPath:
    """Merge cell pairs; the inverse of refinement away from the first step.

    The merged first cell is re-zeroed (the convention again), which drops
    whatever mass the fine path carried on its second cell.
    """
    if path.n_steps % 2 != 0:
        raise ValueError("can only coarsen an even number of steps")
    n = path.n_steps // 2
    inc = path.increments[0::2] + path.increments[1::2]
    inc[0, :] = 0.0
    return WienerPath(n_steps=n, tau=2.0 * path.tau, r=path.r, horizon=path.horizon,
                      increments=inc, seed=path.seed, path_index=path.path_index,
                      level=path.level - 1)


def coarsen_to(path: WienerPath, n_steps: int) -> WienerPath:
    """Repeated halving down to n_steps (ratio must be a power of two)."""
    ratio = path.n_steps // n_steps
    if n_steps * ratio != path.n_steps or ratio < 1 or ratio & (ratio - 1):
        raise ValueError(f"{path.n_steps} steps do not halve down to {n_steps}")
    while path.n_steps > n_steps:
        path = coarsen_path(path)
    return path


_HEADER = struct.Struct("<qqdq")


def dump_increments(path: WienerPath, file) -> None:
    """Binary audit dump: header (N, r, tau, seed), then the matrix row-major."""
    file.write(_HEADER.pack(path.n_steps, path.r, path.tau, path.seed))
    file.write(np.ascontiguousarray(path.increments, dtype="<f8").tobytes())


def load_increments(file) -> WienerPath:
    """Read an audit dump back; path_index and level are not stored."""
    n_steps, r, tau, seed = _HEADER.unpack(file.read(_HEADER.size))
    data = np.frombuffer(file.read(n_steps * r * 8), dtype="<f8").reshape(n_steps, r)
    return WienerPath(n_steps=n_steps, tau=tau, r=r, horizon=tau * n_steps,
                      increments=data.copy(), seed=seed)
