"""P1 finite elements on a uniform mesh of (0, 1) with homogeneous Dirichlet data.

This module provides the concrete discrete spaces the rest of the library
works in: the space of continuous piecewise linear functions on the uniform
mesh with ``m`` interior nodes, identified with R^m through nodal values.
Functions are represented as plain ``numpy`` arrays of nodal coefficients;
all operations validate dimensions against the owning mesh.

Conventions:
    * nodes: x_i = i*h for i = 1..m, with h = 1/(m+1),
    * mass matrix: tridiagonal with diagonal 2h/3 and off-diagonal h/6
      (consistent, so the discrete L2 inner product is the exact one),
    * stiffness matrix: tridiagonal with diagonal 2/h and off-diagonal -1/h
      (Dirichlet Laplacian; its quadratic form is the squared H1_0 seminorm,
      which is the norm used on the energy spaces throughout).

Meshes refine by node insertion, m -> 2m + 1, so the coarse space is an exact
subspace of the fine one and nodal interpolation is the exact injection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


@dataclass(frozen=True)
class TridiagonalMatrix:
    """Symmetric tridiagonal matrix stored as diagonal and off-diagonal bands."""

    diag: np.ndarray
    off: np.ndarray
    _banded: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=float)
        off = np.asarray(self.off, dtype=float)
        if diag.ndim != 1 or off.ndim != 1 or off.size != max(diag.size - 1, 0):
            raise ValueError("off-diagonal band must have length len(diag) - 1")
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "off", off)
        banded = np.zeros((3, diag.size))
        banded[1] = diag
        if off.size:
            banded[0, 1:] = off
            banded[2, :-1] = off
        object.__setattr__(self, "_banded", banded)

    @property
    def n(self) -> int:
        return self.diag.size

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"vector of length {x.shape} against matrix of size {self.n}")
        y = self.diag * x
        if self.off.size:
            y[:-1] += self.off * x[1:]
            y[1:] += self.off * x[:-1]
        return y

    def quad(self, x: np.ndarray, y: np.ndarray | None = None) -> float:
        """Quadratic/bilinear form x^T A y (y defaults to x)."""
        if y is None:
            y = x
        return float(np.dot(np.asarray(x, dtype=float), self.matvec(y)))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (self.n,):
            raise ValueError("right-hand side has wrong length")
        return scipy.linalg.solve_banded((1, 1), self._banded, rhs)

    def inv_matvec(self, rhs: np.ndarray) -> np.ndarray:
        """Apply the inverse through a cached dense factor.

        Worth it only for matrices reused across many solves (the mass
        matrix in residual norms); well-conditioned at our sizes.
        """
        inv = getattr(self, "_inv", None)
        if inv is None:
            inv = np.linalg.inv(self.to_dense())
            object.__setattr__(self, "_inv", inv)
        return inv @ rhs

    def to_dense(self) -> np.ndarray:
        a = np.diag(self.diag)
        if self.off.size:
            a += np.diag(self.off, 1) + np.diag(self.off, -1)
        return a

    def scaled(self, factor: float) -> "TridiagonalMatrix":
        return TridiagonalMatrix(factor * self.diag, factor * self.off)

    def add(self, other: "TridiagonalMatrix") -> "TridiagonalMatrix":
        if other.n != self.n:
            raise ValueError("size mismatch")
        return TridiagonalMatrix(self.diag + other.diag, self.off + other.off)


def identity_matrix(n: int) -> TridiagonalMatrix:
    """Identity as a TridiagonalMatrix; used by scalar surrogate problems."""
    return TridiagonalMatrix(np.ones(n), np.zeros(max(n - 1, 0)))


@dataclass(frozen=True)
class Mesh1D:
    """Uniform P1 mesh of (0, 1) with its assembled mass and stiffness matrices.

    Attributes
    ----------
    m : number of interior nodes (dimension of the discrete space)
    h : mesh width, h = 1/(m+1)
    nodes : interior node coordinates, shape (m,)
    mass : consistent P1 mass matrix (L2 inner product)
    stiffness : Dirichlet Laplacian matrix (H1_0 seminorm Gram matrix)
    """

    m: int
    h: float
    nodes: np.ndarray
    mass: TridiagonalMatrix
    stiffness: TridiagonalMatrix

    def check_vector(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.m,):
            raise ValueError(f"expected vector of length {self.m}, got shape {x.shape}")
        return x


def build_mesh(m: int) -> Mesh1D:
    """Assemble the uniform P1 mesh with m >= 1 interior nodes."""
    if m < 1:
        raise ValueError("mesh needs at least one interior node")
    h = 1.0 / (m + 1)
    nodes = h * np.arange(1, m + 1)
    mass = TridiagonalMatrix(np.full(m, 2.0 * h / 3.0), np.full(m - 1, h / 6.0))
    stiffness = TridiagonalMatrix(np.full(m, 2.0 / h), np.full(m - 1, -1.0 / h))
    return Mesh1D(m=m, h=h, nodes=nodes, mass=mass, stiffness=stiffness)


def inner_h(mesh: Mesh1D, x: np.ndarray, y: np.ndarray) -> float:
    """L2(0,1) inner product of two nodal vectors."""
    return mesh.mass.quad(mesh.check_vector(x), mesh.check_vector(y))


def norm_h(mesh: Mesh1D, x: np.ndarray) -> float:
    return float(np.sqrt(max(inner_h(mesh, x, x), 0.0)))


def inner_b(mesh: Mesh1D, x: np.ndarray, y: np.ndarray, coefficient: float = 1.0) -> float:
    """Elastic-form inner product: coefficient * x^T stiffness y."""
    return coefficient * mesh.stiffness.quad(mesh.check_vector(x), mesh.check_vector(y))


def norm_va_sq(mesh: Mesh1D, x: np.ndarray) -> float:
    """Squared H1_0 seminorm (the energy-space norm) of a nodal vector."""
    return mesh.stiffness.quad(mesh.check_vector(x))


def gradient_at_cells(mesh: Mesh1D, x: np.ndarray) -> np.ndarray:
    """Piecewise-constant gradient, one value per cell, zero boundary values.

    Cell k (k = 0..m) spans (x_k, x_{k+1}) with x_0 = 0 and x_{m+1} = 1; the
    returned value on cell k is (x_{k+1} - x_k)/h with the boundary nodal
    values taken as zero.
    """
    x = mesh.check_vector(x)
    padded = np.concatenate(([0.0], x, [0.0]))
    return np.diff(padded) / mesh.h


def dual_norm_va(mesh: Mesh1D, g: np.ndarray) -> float:
    """Dual norm of a functional given by coefficients g_i = <G, phi_i>.

    Computed as sqrt(g^T stiffness^{-1} g), the Riesz representation in the
    H1_0 seminorm.
    """
    g = mesh.check_vector(g)
    return float(np.sqrt(max(np.dot(g, mesh.stiffness.solve(g)), 0.0)))


def interpolate(mesh: Mesh1D, f) -> np.ndarray:
    """Nodal interpolation of a callable f(x) onto the mesh."""
    return np.asarray(f(mesh.nodes), dtype=float)


def refine_mesh(mesh: Mesh1D) -> Mesh1D:
    """The nested refinement m -> 2m + 1 (every cell split in half)."""
    return build_mesh(2 * mesh.m + 1)


def is_nested(coarse: Mesh1D, fine: Mesh1D) -> bool:
    m = coarse.m
    while m < fine.m:
        m = 2 * m + 1
    return m == fine.m


def prolong(coarse: Mesh1D, fine: Mesh1D, x: np.ndarray) -> np.ndarray:
    """Nodal interpolation of a coarse-mesh vector onto a nested finer mesh.

    Exact (the coarse function belongs to the fine space), so all inner
    products are preserved up to roundoff.
    """
    if not is_nested(coarse, fine):
        raise ValueError(f"mesh with m={fine.m} does not refine m={coarse.m}")
    x = coarse.check_vector(x)
    while x.size < fine.m:
        padded = np.concatenate(([0.0], x, [0.0]))
        out = np.empty(2 * x.size + 1)
        out[::2] = 0.5 * (padded[:-1] + padded[1:])
        out[1::2] = x
        x = out
    return x


def restrict(fine: Mesh1D, coarse: Mesh1D, x: np.ndarray) -> np.ndarray:
    """Nodal restriction onto a nested coarser mesh (keep shared nodes)."""
    if not is_nested(coarse, fine):
        raise ValueError(f"mesh with m={coarse.m} is not refined by m={fine.m}")
    x = fine.check_vector(x)
    while x.size > coarse.m:
        x = x[1::2]
    return x


def dirichlet_eigenpairs(mesh: Mesh1D, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Leading eigenpairs of stiffness w = lam mass w, mass-orthonormalized.

    On the uniform mesh the eigenvectors are the sampled sine modes
    sin(j pi x); they are shared by both matrices, and the generalized
    eigenvalues admit the closed form used here. Returns (values, vectors)
    with vectors of shape (m, count) and w_j^T M w_k = delta_jk.
    """
    if not 1 <= count <= mesh.m:
        raise ValueError(f"requested {count} modes from a space of dimension {mesh.m}")
    j = np.arange(1, count + 1)
    h = mesh.h
    values = 6.0 * (1.0 - np.cos(j * np.pi * h)) / (h * h * (2.0 + np.cos(j * np.pi * h)))
    vectors = np.sin(np.outer(mesh.nodes, j * np.pi))
    for k in range(count):
        vectors[:, k] /= np.sqrt(mesh.mass.quad(vectors[:, k]))
    return values, vectors
