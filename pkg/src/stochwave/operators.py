"""Operator instances and runtime checks of their structural assumptions.

Three operator families act on the discrete spaces from :mod:`.mesh_fem`:

* a damping operator acting on the velocity: either the nonlinear
  gradient-damping operator built from the scalar profile :func:`rho`
  (monotone but not Lipschitz on bounded sets), or a linear strongly
  monotone one given by a fixed SPD matrix,
* a linear elastic operator acting on the displacement, a positive multiple
  of the Dirichlet Laplacian; its bilinear form is the energy inner product
  written ``(.,.)_B`` below,
* a multiplicative noise family ``C_j(u, v)``, realized as diagonal spectral
  noise: mode j reads off the j-th sine-mode components of displacement and
  velocity and feeds them back along that mode with weight j**(-decay).

A problem bundle (:class:`ProblemSpec`) records the operators together with
the constants entering the step-size gate ``lam * tau < 1``:

    lam = 2 * max(lambda_a, lambda_b, kappa)

derived from the operator-wise constants by the standard splitting
(Young's inequality on the noise terms):

    lambda_a = max(l1 + lambda4/2, l2 + lambda4),
    lambda_b = lambda3,   kappa = |C(0,0)|^2 bound,

where l1, l2 are the damping operator's monotonicity and coercivity shifts
(zero for both shipped instances) and (lambda3, lambda4) are the noise
Lipschitz constants in the B-norm and the L2 norm respectively.

:func:`check_assumptions` samples the inequalities on randomized and
structured tuples and reports worst margins with witnesses; it is the
runtime guard that a configured instance actually satisfies what the
solver and its a priori estimates rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import zeta

from .mesh_fem import (
    Mesh1D,
    TridiagonalMatrix,
    dirichlet_eigenpairs,
    dual_norm_va,
    gradient_at_cells,
    identity_matrix,
    interpolate,
)

# Lower cutoff for |gradient| in the generalized derivative of rho. The true
# slope diverges at 0; the cutoff keeps the Newton model bounded (slope at
# most 5e3) and decently conditioned. Iterates that need better local models
# than this are handled by the step solver's rescue directions, and residuals
# below the float-representability floor by its stall acceptance.
_RHO_SLOPE_CUTOFF = 1e-8


def rho(z):
    """Scalar damping profile: 0 at 0, |z|^(-1/2) z for 0 < |z| < 1, z beyond.

    Continuous, odd and nondecreasing; the derivative blows up at the origin,
    which is exactly what defeats Lipschitz continuity on bounded sets.
    """
    z = np.asarray(z, dtype=float)
    a = np.abs(z)
    inner = np.divide(z, np.sqrt(a), out=np.zeros_like(z), where=a > 0)
    return np.where(a < 1.0, inner, z)


def _rho_scalar(z: float) -> float:
    a = abs(z)
    if a >= 1.0:
        return z
    if a == 0.0:
        return 0.0
    return z / a**0.5


def rho_prime(z):
    """Generalized derivative of rho: inside branch used at |z| = 1, capped near 0."""
    a = np.abs(np.asarray(z, dtype=float))
    return np.where(a > 1.0, 1.0, 0.5 / np.sqrt(np.maximum(a, _RHO_SLOPE_CUTOFF)))


def rho_potential(z):
    """Convex primitive of rho: (2/3)|z|^(3/2) for |z| <= 1, z^2/2 + 1/6 beyond."""
    a = np.abs(np.asarray(z, dtype=float))
    return np.where(a <= 1.0, (2.0 / 3.0) * a**1.5, 0.5 * a * a + 1.0 / 6.0)


@dataclass(frozen=True)
class RhoDamping:
    """Gradient damping <Av, w> = int rho(v') w' dx on a P1 mesh.

    P1 gradients are piecewise constant, so the assembly below integrates the
    nonlinearity exactly: component i of the result is rho(g_i) - rho(g_{i+1})
    with g the cell gradients. The operator is the gradient of the convex
    potential h * sum(rho_potential(g_k)), hence monotone with zero shift, and
    rho(z) z >= z^2 for |z| <= 1 gives coercivity constant mu_a = 1 without a
    lower-order correction.
    """

    mesh: Mesh1D
    mu_a: float = 1.0
    lambda_mono: float = 0.0
    lambda_coer: float = 0.0
    c_a: float = 1.0
    p: float = 2.0

    def apply(self, v: np.ndarray) -> np.ndarray:
        g = gradient_at_cells(self.mesh, v)
        flux = rho(g)
        return flux[:-1] - flux[1:]

    def component(self, v: np.ndarray, i: int) -> float:
        """Single dual component <Av, phi_i>, scalar arithmetic only."""
        h = self.mesh.h
        m = v.shape[0]
        left = v[i - 1] if i > 0 else 0.0
        right = v[i + 1] if i + 1 < m else 0.0
        return float(_rho_scalar((v[i] - left) / h) - _rho_scalar((right - v[i]) / h))

    def scalar_component(self, left: float, x: float, right: float) -> float:
        """component() with the neighbor values already extracted as floats."""
        h = self.mesh.h
        return _rho_scalar((x - left) / h) - _rho_scalar((right - x) / h)

    def jacobian(self, v: np.ndarray) -> TridiagonalMatrix:
        w = rho_prime(gradient_at_cells(self.mesh, v))
        diag = (w[:-1] + w[1:]) / self.mesh.h
        off = -w[1:-1] / self.mesh.h
        return TridiagonalMatrix(diag, off)

    def jacobian_apply(self, v: np.ndarray, direction: np.ndarray) -> np.ndarray:
        return self.jacobian(v).matvec(self.mesh.check_vector(direction))

    def potential(self, v: np.ndarray) -> float:
        g = gradient_at_cells(self.mesh, v)
        return float(self.mesh.h * np.sum(rho_potential(g)))

    def pinning_info(self, v: np.ndarray, threshold: float):
        """Cells whose gradients are close enough to zero to act as rigid links.

        Near such cells the profile's curvature is effectively infinite: the
        two adjacent nodes can only move jointly. Returns the pinned-cell mask
        and the tangent slopes with pinned cells zeroed, from which the step
        solver builds its reduced (group-aggregated) Newton model.
        """
        g = gradient_at_cells(self.mesh, v)
        pinned = np.abs(g) <= threshold
        w = rho_prime(g)
        w[pinned] = 0.0
        return pinned, w

    def residual_jitter(self, v: np.ndarray) -> np.ndarray:
        """Per-component residual quantization bound at the floats around v.

        One-ulp moves of the nodal values shift each cell gradient by about
        q = eps (|v_i| + |v_{i+1}| + h) / h; through the square-root branch
        this moves rho by up to rho(|g| + q) - rho(|g| - q), which near g = 0
        is far larger than eps. No representable iterate can beat residuals
        of this size, so the step solver may stop there.
        """
        eps = np.finfo(float).eps
        padded = np.concatenate(([0.0], self.mesh.check_vector(v), [0.0]))
        g = np.abs(np.diff(padded)) / self.mesh.h
        q = eps * (np.abs(padded[:-1]) + np.abs(padded[1:]) + self.mesh.h) / self.mesh.h
        cell = rho(g + q) - rho(np.maximum(g - q, 0.0))
        return cell[:-1] + cell[1:]


@dataclass(frozen=True)
class LinearDamping:
    """Linear damping given by an SPD matrix; strongly monotone.

    ``from_mesh(mesh, mu)`` builds the instance mu * stiffness, i.e. the
    negative scaled Laplacian, which satisfies the stronger monotonicity
    <Aw - Az, w - z> = mu * ||w - z||_{V_A}^2 exactly.
    """

    matrix: TridiagonalMatrix
    mu_a: float
    c_a: float
    lambda_mono: float = 0.0
    lambda_coer: float = 0.0
    p: float = 2.0

    @classmethod
    def from_mesh(cls, mesh: Mesh1D, mu: float) -> "LinearDamping":
        if mu <= 0:
            raise ValueError("damping coefficient must be positive")
        return cls(matrix=mesh.stiffness.scaled(mu), mu_a=mu, c_a=mu)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix.matvec(v)

    def component(self, v: np.ndarray, i: int) -> float:
        out = self.matrix.diag[i] * v[i]
        if i > 0:
            out += self.matrix.off[i - 1] * v[i - 1]
        if i + 1 < v.shape[0]:
            out += self.matrix.off[i] * v[i + 1]
        return float(out)

    def jacobian(self, v: np.ndarray) -> TridiagonalMatrix:
        return self.matrix

    def jacobian_apply(self, v: np.ndarray, direction: np.ndarray) -> np.ndarray:
        return self.matrix.matvec(direction)

    def potential(self, v: np.ndarray) -> float:
        return 0.5 * self.matrix.quad(v)


@dataclass(frozen=True)
class ElasticOperator:
    """Linear, symmetric, strongly positive displacement operator.

    ``matrix`` is the full operator matrix (coefficient included); its
    quadratic form defines the B-norm used by the energy identity and the
    a priori estimates.
    """

    matrix: TridiagonalMatrix
    coefficient: float
    mu_b: float
    c_b: float

    @classmethod
    def from_mesh(cls, mesh: Mesh1D, b: float) -> "ElasticOperator":
        if b <= 0:
            raise ValueError("elastic coefficient must be positive")
        return cls(matrix=mesh.stiffness.scaled(b), coefficient=b, mu_b=b, c_b=b)

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix.matvec(u)

    def inner(self, x: np.ndarray, y: np.ndarray) -> float:
        return self.matrix.quad(x, y)

    def norm_sq(self, x: np.ndarray) -> float:
        return max(self.matrix.quad(x), 0.0)


@dataclass(frozen=True)
class ZeroNoise:
    """No stochastic forcing; stands in for C identically zero."""

    dim: int
    modes: float = float("inf")
    lambda4: float = 0.0
    kappa_bound: float = 0.0

    def lambda3_for(self, mu_b: float) -> float:
        return 0.0

    def apply(self, u: np.ndarray, v: np.ndarray, r: int) -> np.ndarray:
        return np.zeros((r, self.dim))

    def weighted_sum(self, u: np.ndarray, v: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return np.zeros(self.dim)

    def l2h_norm_sq(self, u: np.ndarray, v: np.ndarray, r: int | None = None) -> float:
        return 0.0

    def l2h_diff_sq(self, u1, v1, u2, v2, r: int | None = None) -> float:
        return 0.0


class SpectralNoise:
    """Diagonal multiplicative noise along mass-orthonormal sine modes.

    Mode j acts as
        C_j(u, v) = j**(-decay) * (alpha (u, e_j) + beta (v, e_j) + gamma) e_j
    with e_j the j-th discrete Dirichlet eigenvector normalized in L2. The
    diagonal structure makes the joint Lipschitz constants available in
    closed form:

        |C(u,w) - C(v,z)|^2 <= lambda3 |u - v|_B^2 + lambda4 |w - z|^2

    with lambda4 = 2 beta^2 (Parseval in L2, weights <= 1) and
    lambda3 = 2 alpha^2 / (b pi^2), using that the discrete eigenvalues
    dominate pi^2 so the B-norm controls mode-1 components the hardest.
    |C(0,0)|^2 is bounded by gamma^2 zeta(2 decay), which is the kappa
    recorded for the step-size gate (finite since decay > 1/2).
    """

    def __init__(self, mesh: Mesh1D, alpha: float, beta: float, gamma: float,
                 decay: float = 1.0, modes: int | None = None):
        if decay <= 0.5:
            raise ValueError("decay must exceed 1/2 so the mode weights are square summable")
        if modes is None:
            modes = mesh.m
        if not 1 <= modes <= mesh.m:
            raise ValueError(f"modes must lie in [1, {mesh.m}]")
        self.mesh = mesh
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.gamma = float(gamma)
        self.decay = float(decay)
        self.modes = int(modes)
        _, vectors = dirichlet_eigenpairs(mesh, self.modes)
        self._e = vectors
        self._me = np.column_stack([mesh.mass.matvec(vectors[:, j]) for j in range(self.modes)])
        self._kappa = np.arange(1, self.modes + 1, dtype=float) ** (-self.decay)

    @property
    def lambda4(self) -> float:
        return 2.0 * self.beta**2

    @property
    def kappa_bound(self) -> float:
        return self.gamma**2 * float(zeta(2.0 * self.decay))

    def lambda3_for(self, mu_b: float) -> float:
        return 2.0 * self.alpha**2 / (mu_b * np.pi**2)

    def _coefficients(self, u: np.ndarray, v: np.ndarray, r: int) -> np.ndarray:
        if r > self.modes:
            raise ValueError(f"requested {r} modes, only {self.modes} available")
        a = self._me[:, :r].T @ u
        b = self._me[:, :r].T @ v
        return self._kappa[:r] * (self.alpha * a + self.beta * b + self.gamma)

    def apply(self, u: np.ndarray, v: np.ndarray, r: int) -> np.ndarray:
        """Modes 1..r of C(u, v) as rows of an (r, m) array of nodal vectors."""
        coef = self._coefficients(u, v, r)
        return (self._e[:, :r] * coef).T

    def weighted_sum(self, u: np.ndarray, v: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """sum_j C_j(u, v) * weights[j], the assembled noise increment."""
        r = len(weights)
        coef = self._coefficients(u, v, r) * np.asarray(weights, dtype=float)
        return self._e[:, :r] @ coef

    def l2h_norm_sq(self, u: np.ndarray, v: np.ndarray, r: int | None = None) -> float:
        coef = self._coefficients(u, v, self.modes if r is None else r)
        return float(np.dot(coef, coef))

    def l2h_diff_sq(self, u1, v1, u2, v2, r: int | None = None) -> float:
        r = self.modes if r is None else r
        c1 = self._coefficients(u1, v1, r)
        c2 = self._coefficients(u2, v2, r)
        d = c1 - c2
        return float(np.dot(d, d))


@dataclass(frozen=True)
class ProblemSpec:
    """Operator triple with data and the derived gate constants.

    ``mass`` is the Gram matrix of the working inner product and ``va_form``
    the Gram matrix of the energy-space norm; for mesh problems these are the
    P1 mass and stiffness matrices, for scalar surrogates both are the
    identity. ``lam`` drives the step-size restriction lam * tau < 1.
    """

    mass: TridiagonalMatrix
    va_form: TridiagonalMatrix
    damping: object
    elastic: ElasticOperator
    noise: object
    forcing: object
    initial_u: np.ndarray
    initial_v: np.ndarray
    lambda_a: float
    lambda_b: float
    kappa: float
    lam: float
    mesh: Mesh1D | None = None

    @property
    def dim(self) -> int:
        return self.mass.n

    def norm_h_sq(self, x: np.ndarray) -> float:
        return max(self.mass.quad(x), 0.0)

    def norm_va_sq(self, x: np.ndarray) -> float:
        return max(self.va_form.quad(x), 0.0)


def assemble_problem(*, mass, va_form, damping, elastic, noise, forcing,
                     initial_u, initial_v, mesh=None,
                     lambda_a=None, lambda_b=None, kappa=None) -> ProblemSpec:
    """Bundle operators and derive the gate constants.

    Explicit ``lambda_a``/``lambda_b``/``kappa`` override the derivation;
    passing deliberately wrong values is how the assumption audit is shown
    a broken instance.
    """
    lambda4 = noise.lambda4
    lambda3 = noise.lambda3_for(elastic.mu_b)
    if lambda_a is None:
        lambda_a = max(damping.lambda_mono + 0.5 * lambda4, damping.lambda_coer + lambda4)
    if lambda_b is None:
        lambda_b = lambda3
    if kappa is None:
        kappa = noise.kappa_bound
    lam = 2.0 * max(lambda_a, lambda_b, kappa)
    initial_u = np.asarray(initial_u, dtype=float)
    initial_v = np.asarray(initial_v, dtype=float)
    if initial_u.shape != (mass.n,) or initial_v.shape != (mass.n,):
        raise ValueError("initial data dimension does not match the space")
    return ProblemSpec(mass=mass, va_form=va_form, damping=damping, elastic=elastic,
                       noise=noise, forcing=forcing, initial_u=initial_u,
                       initial_v=initial_v, lambda_a=float(lambda_a),
                       lambda_b=float(lambda_b), kappa=float(kappa), lam=lam, mesh=mesh)


def mesh_problem(mesh: Mesh1D, damping, elastic, noise, forcing,
                 initial_u, initial_v, **overrides) -> ProblemSpec:
    return assemble_problem(mass=mesh.mass, va_form=mesh.stiffness, damping=damping,
                            elastic=elastic, noise=noise, forcing=forcing,
                            initial_u=initial_u, initial_v=initial_v, mesh=mesh,
                            **overrides)


def scalar_surrogate(a: float, b: float, initial_v: float, initial_u: float,
                     forcing=None) -> ProblemSpec:
    """One-dimensional surrogate with identity mass, A = a*I and B = b*I.

    Closed-form solvable by hand, used to pin down the stepper and the
    energy ledger against exact fractions.
    """
    eye = identity_matrix(1)
    damping = LinearDamping(matrix=eye.scaled(a), mu_a=a, c_a=a)
    elastic = ElasticOperator(matrix=eye.scaled(b), coefficient=b, mu_b=b, c_b=b)
    return assemble_problem(mass=eye, va_form=eye, damping=damping, elastic=elastic,
                            noise=ZeroNoise(dim=1), forcing=forcing,
                            initial_u=np.array([float(initial_u)]),
                            initial_v=np.array([float(initial_v)]))


@dataclass
class MarginRecord:
    """Worst observed margin of one inequality, with the witness tuple."""

    name: str
    worst_margin: float = np.inf
    scale: float = 1.0
    witness: tuple | None = None

    @property
    def violated(self) -> bool:
        return self.worst_margin < -1e-9 * max(1.0, self.scale)

    def update(self, margin: float, scale: float, witness: tuple) -> None:
        if margin < self.worst_margin:
            self.worst_margin = margin
            self.scale = max(1.0, scale)
            self.witness = witness


@dataclass
class AuditReport:
    """Outcome of the randomized assumption audit."""

    records: dict[str, MarginRecord]
    samples: int
    seed: int

    @property
    def violations(self) -> list[MarginRecord]:
        return [r for r in self.records.values() if r.violated]

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary_lines(self) -> list[str]:
        lines = []
        for rec in self.records.values():
            status = "VIOLATED" if rec.violated else "ok"
            lines.append(f"{rec.name:<24} worst margin {rec.worst_margin: .6e}  [{status}]")
        return lines


def _audit_tuples(spec: ProblemSpec, samples: int, rng: np.random.Generator):
    """Yield (u, v, w, z) probe tuples mixing rough, smooth and aligned probes.

    Purely random nodal vectors are rough (large energy-space norms), which
    hides violations living along the lowest modes; the aligned probes set
    the pair differences along single smooth modes at several scales around
    bases with gradients away from the rho kink.
    """
    m = spec.dim
    if spec.mesh is not None and m >= 2:
        count = min(m, 8)
        _, smooth = dirichlet_eigenpairs(spec.mesh, count)
        tent = interpolate(spec.mesh, lambda x: 4.0 * np.minimum(x, 1.0 - x))
    else:
        count = min(m, 4)
        smooth = np.eye(m)[:, :count]
        tent = np.ones(m)
    bases = [np.zeros(m), tent, smooth @ rng.normal(size=count)]
    scales = np.array([1e-3, 1e-2, 1e-1, 1.0, 10.0])

    aligned = 0
    for k in range(samples):
        style = k % 5
        if style <= 2:
            scale = 10.0 ** rng.uniform(-2, 1)
            u, v, w, z = (scale * rng.normal(size=m) for _ in range(4))
        elif style == 3:
            scale = 10.0 ** rng.uniform(-2, 1)
            u, v, w, z = (scale * (smooth @ rng.normal(size=count)) for _ in range(4))
        else:
            base = bases[aligned % len(bases)]
            mode = smooth[:, (aligned // len(bases)) % count]
            eps = scales[(aligned // (len(bases) * count)) % len(scales)]
            aligned += 1
            u = v = base
            z = base.copy()
            w = base + eps * mode
        yield u, v, w, z


def check_assumptions(spec: ProblemSpec, samples: int = 1000, seed: int = 0) -> AuditReport:
    """Probe the structural inequalities on random tuples; report worst margins.

    Checked, each as LHS - RHS of the inequality in the form '>= 0':
      * monotonicity-like: <Aw - Az, w - z> + lambda_a |w-z|^2
            + lambda_b |u-v|_B^2 - |C(u,w) - C(v,z)|^2 / 2,
      * coercivity-like: <Aw, w> + lambda_a |w|^2 + lambda_b |u|_B^2 + kappa
            - mu_a ||w||^p - |C(u,w)|^2 / 2,
      * noise growth: 2 (lambda3 |u|_B^2 + lambda4 |w|^2 + kappa) - |C(u,w)|^2,
      * elastic positivity and boundedness with (mu_b, c_b),
      * noise Lipschitz continuity in the displacement argument:
            2 lambda_b |u - v|_B^2 - |C(u,w) - C(v,w)|^2,
      * damping growth: c_a (1 + ||w||) - ||Aw||_dual (mesh problems only).

    Violations are reported, not raised; each record carries the witness
    tuple that produced its worst margin.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    damping, elastic, noise = spec.damping, spec.elastic, spec.noise
    lambda3 = noise.lambda3_for(elastic.mu_b)
    lambda4 = noise.lambda4
    names = ["monotonicity_like", "coercivity_like", "noise_growth",
             "elastic_positivity", "elastic_boundedness", "noise_lipschitz_u"]
    if spec.mesh is not None:
        names.append("damping_growth")
    records = {name: MarginRecord(name) for name in names}

    for u, v, w, z in _audit_tuples(spec, samples, rng):
        witness = (u, v, w, z)
        aw = damping.apply(w)
        az = damping.apply(z)
        dw = w - z
        mono_gap = float(np.dot(aw - az, dw))
        shift = spec.lambda_a * spec.norm_h_sq(dw) + spec.lambda_b * elastic.norm_sq(u - v)
        cdiff = noise.l2h_diff_sq(u, w, v, z)
        records["monotonicity_like"].update(
            mono_gap + shift - 0.5 * cdiff, abs(mono_gap) + shift + 0.5 * cdiff, witness)

        aww = float(np.dot(aw, w))
        csq = noise.l2h_norm_sq(u, w)
        lhs = aww + spec.lambda_a * spec.norm_h_sq(w) + spec.lambda_b * elastic.norm_sq(u) + spec.kappa
        rhs = damping.mu_a * spec.norm_va_sq(w) ** (damping.p / 2.0) + 0.5 * csq
        records["coercivity_like"].update(lhs - rhs, abs(lhs) + abs(rhs), witness)

        growth_rhs = 2.0 * (lambda3 * elastic.norm_sq(u) + lambda4 * spec.norm_h_sq(w) + spec.kappa)
        records["noise_growth"].update(growth_rhs - csq, growth_rhs + csq, witness)

        bww = float(np.dot(elastic.apply(w), w))
        vb_sq = spec.norm_va_sq(w)
        records["elastic_positivity"].update(
            bww - elastic.mu_b * vb_sq, abs(bww) + elastic.mu_b * vb_sq, witness)
        bw = elastic.apply(w)
        bw_dual = float(np.sqrt(max(np.dot(bw, spec.va_form.solve(bw)), 0.0)))
        bound = elastic.c_b * np.sqrt(vb_sq)
        records["elastic_boundedness"].update(bound - bw_dual, bound + bw_dual, witness)

        lip = noise.l2h_diff_sq(u, w, v, w)
        lip_bound = 2.0 * spec.lambda_b * elastic.norm_sq(u - v)
        records["noise_lipschitz_u"].update(lip_bound - lip, lip_bound + lip, witness)

        if spec.mesh is not None:
            aw_dual = dual_norm_va(spec.mesh, aw)
            g_bound = damping.c_a * (1.0 + np.sqrt(spec.norm_va_sq(w)))
            records["damping_growth"].update(g_bound - aw_dual, g_bound + aw_dual, witness)

    return AuditReport(records=records, samples=samples, seed=seed)
