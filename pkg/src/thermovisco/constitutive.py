"""Isotropic elasticity, inelastic flow rules, and the clamp operator.

Stress and strain states are symmetric d×d matrices (d = 1, 2 or 3).
Internally they travel as Mandel component vectors: the d diagonal entries
first, then the off-diagonal entries scaled by √2, so that the plain
Euclidean dot product of two component vectors equals the Frobenius
product A:B of the matrices.  |A| below always means the Frobenius norm.
"""

from __future__ import annotations

import numpy as np
from dataclasses import dataclass, field
from typing import Callable, Optional

SQRT2 = np.sqrt(2.0)

# Off-diagonal index pairs per spatial dimension, in Mandel component order.
_OFFDIAG = {1: [], 2: [(0, 1)], 3: [(1, 2), (0, 2), (0, 1)]}


def sym_components(dim: int) -> int:
    """Number of independent components of a symmetric d×d matrix."""
    return dim * (dim + 1) // 2


def to_mandel(A: np.ndarray) -> np.ndarray:
    """Convert symmetric matrices (..., d, d) to Mandel vectors (..., s)."""
    dim = A.shape[-1]
    parts = [A[..., i, i] for i in range(dim)]
    parts += [SQRT2 * A[..., i, j] for (i, j) in _OFFDIAG[dim]]
    return np.stack(parts, axis=-1)


def from_mandel(v: np.ndarray, dim: int) -> np.ndarray:
    """Convert Mandel vectors (..., s) back to symmetric matrices (..., d, d)."""
    v = np.asarray(v, dtype=float)
    A = np.zeros(v.shape[:-1] + (dim, dim))
    for i in range(dim):
        A[..., i, i] = v[..., i]
    for k, (i, j) in enumerate(_OFFDIAG[dim]):
        A[..., i, j] = A[..., j, i] = v[..., dim + k] / SQRT2
    return A


def mandel_identity(dim: int) -> np.ndarray:
    """Mandel vector of the d×d identity matrix."""
    m = np.zeros(sym_components(dim))
    m[:dim] = 1.0
    return m


def _check_symmetric(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] not in (1, 2, 3):
        raise ValueError(f"expected a symmetric 1x1, 2x2 or 3x3 matrix, got shape {A.shape}")
    scale = max(1.0, float(np.abs(A).max()))
    if np.abs(A - A.T).max() > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (A + A.T)


@dataclass(frozen=True)
class ElasticityTensor:
    """Isotropic fourth-order tensor A ↦ λ·tr(A)·I + 2μ·A and its inverse.

    Positive definite on symmetric matrices iff μ > 0 and 3λ + 2μ > 0
    (the 3D condition; it implies definiteness in 1D and 2D as well).
    """

    lam: float
    mu: float

    def __post_init__(self):
        if not (self.mu > 0.0 and 3.0 * self.lam + 2.0 * self.mu > 0.0):
            raise ValueError(
                f"elasticity moduli must satisfy mu > 0 and 3*lambda + 2*mu > 0, "
                f"got lambda={self.lam}, mu={self.mu}"
            )

    def apply(self, A: np.ndarray) -> np.ndarray:
        """λ·tr(A)·I + 2μ·A for a symmetric matrix A."""
        A = _check_symmetric(A)
        d = A.shape[0]
        return self.lam * np.trace(A) * np.eye(d) + 2.0 * self.mu * A

    def inverse_apply(self, A: np.ndarray) -> np.ndarray:
        """Closed-form inverse: (A − λ/(dλ+2μ)·tr(A)·I) / (2μ)."""
        A = _check_symmetric(A)
        d = A.shape[0]
        c = self.lam / (d * self.lam + 2.0 * self.mu)
        return (A - c * np.trace(A) * np.eye(d)) / (2.0 * self.mu)

    def mandel_matrix(self, dim: int) -> np.ndarray:
        """Matrix of the tensor acting on Mandel vectors: λ m mᵀ + 2μ I."""
        m = mandel_identity(dim)
        return self.lam * np.outer(m, m) + 2.0 * self.mu * np.eye(m.size)

    def inverse_mandel_matrix(self, dim: int) -> np.ndarray:
        m = mandel_identity(dim)
        c = self.lam / (dim * self.lam + 2.0 * self.mu)
        return (np.eye(m.size) - c * np.outer(m, m)) / (2.0 * self.mu)

    def apply_mandel(self, v: np.ndarray, dim: int) -> np.ndarray:
        """Vectorized action on Mandel vectors of shape (..., s)."""
        v = np.asarray(v, dtype=float)
        tr = v[..., :dim].sum(axis=-1)
        out = 2.0 * self.mu * v.copy()
        out[..., :dim] += self.lam * tr[..., None]
        return out

    def inverse_apply_mandel(self, v: np.ndarray, dim: int) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        tr = v[..., :dim].sum(axis=-1)
        c = self.lam / (dim * self.lam + 2.0 * self.mu)
        out = v.copy()
        out[..., :dim] -= c * tr[..., None]
        return out / (2.0 * self.mu)


def elasticity_apply(C: ElasticityTensor, A: np.ndarray) -> np.ndarray:
    return C.apply(A)


def elasticity_inverse_apply(C: ElasticityTensor, A: np.ndarray) -> np.ndarray:
    return C.inverse_apply(A)


@dataclass(frozen=True)
class FlowRule:
    """Inelastic flow rate G(θ, T) with machine-checkable admissibility.

    Built-in kinds share the radial form G(θ, T) = g(θ, |T|)·T with a
    nonnegative scalar factor g, which makes them monotone in T, dissipative
    (G:T = g·|T|² ≥ 0) and of linear growth with constant c_growth:

      linear                g = κ₀
      mroz_saturating       g = κ₀ / (1 + |T|)      (bounded response)
      temperature_weighted  g = κ(θ) = clamp(κ₀/(1 + max(θ,0)), κ_min, κ₀)

    The temperature factor is clamped into [κ_min, κ_max] so the growth
    constant stays finite for every real θ.  User rules go through
    ``FlowRule.custom``; run ``verify_admissibility`` on them before use in
    the time stepper.
    """

    kind: str
    kappa0: float = 1.0
    kappa_min: float = 0.0
    kappa_max: float = 1.0
    c_growth: float = 1.0
    fn: Optional[Callable[[float, np.ndarray], np.ndarray]] = field(default=None, compare=False)

    _BUILTIN = ("linear", "mroz_saturating", "temperature_weighted")

    def __post_init__(self):
        if self.kind in self._BUILTIN:
            if self.kappa0 < 0.0:
                raise ValueError("rate coefficient kappa0 must be >= 0")
        elif self.fn is None:
            raise ValueError(f"custom flow rule kind {self.kind!r} needs an evaluation function")

    @classmethod
    def linear(cls, kappa0: float = 1.0) -> "FlowRule":
        return cls("linear", kappa0, kappa_min=kappa0, kappa_max=kappa0, c_growth=kappa0)

    @classmethod
    def mroz_saturating(cls, kappa0: float = 1.0) -> "FlowRule":
        return cls("mroz_saturating", kappa0, kappa_min=kappa0, kappa_max=kappa0, c_growth=kappa0)

    @classmethod
    def temperature_weighted(cls, kappa0: float = 1.0, kappa_min: Optional[float] = None) -> "FlowRule":
        if kappa_min is None:
            kappa_min = 1e-6 * kappa0
        if not 0.0 <= kappa_min <= kappa0:
            raise ValueError("need 0 <= kappa_min <= kappa0")
        return cls("temperature_weighted", kappa0, kappa_min=kappa_min, kappa_max=kappa0,
                   c_growth=kappa0)

    @classmethod
    def custom(cls, fn: Callable[[float, np.ndarray], np.ndarray], c_growth: float,
               kind: str = "custom") -> "FlowRule":
        """Wrap a user rule fn(theta, T_matrix) -> rate matrix."""
        return cls(kind, kappa0=0.0, kappa_min=0.0, kappa_max=c_growth, c_growth=c_growth, fn=fn)

    def kappa(self, theta):
        """Temperature factor κ(θ); clamped, defined for every real θ."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "temperature_weighted":
            raw = self.kappa0 / (1.0 + np.maximum(theta, 0.0))
            return np.clip(raw, self.kappa_min, self.kappa_max)
        return np.full_like(theta, self.kappa0)

    def _radial_factor(self, theta, norm):
        g = self.kappa(theta)
        if self.kind == "mroz_saturating":
            g = g / (1.0 + norm)
        return g

    def eval_mandel(self, theta: np.ndarray, V: np.ndarray, dim: int = 3) -> np.ndarray:
        """Vectorized G on Mandel vectors: theta (n,), V (n, s) -> (n, s)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if self.fn is not None:
            out = np.empty_like(V)
            mats = from_mandel(V, dim)
            for i in range(V.shape[0]):
                out[i] = to_mandel(np.asarray(self.fn(float(theta[i]), mats[i]), dtype=float))
            return out
        norm = np.linalg.norm(V, axis=-1)
        return self._radial_factor(theta, norm)[:, None] * V

    def eval(self, theta: float, T: np.ndarray) -> np.ndarray:
        """G(θ, T) for a single symmetric matrix T."""
        T = _check_symmetric(T)
        if self.fn is not None:
            return np.asarray(self.fn(float(theta), T), dtype=float)
        v = to_mandel(T)
        out = self.eval_mandel(np.array([theta]), v[None, :], dim=T.shape[0])
        return from_mandel(out[0], T.shape[0])

    def scalar_eval(self, theta, T):
        """1D reduction: scalar stress in, scalar rate out (arrays ok)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        T = np.atleast_1d(np.asarray(T, dtype=float))
        out = self.eval_mandel(theta, T[:, None], dim=1)[:, 0]
        return out if out.size > 1 else float(out[0])


def flow_eval(G: FlowRule, theta: float, T: np.ndarray) -> np.ndarray:
    return G.eval(theta, T)


@dataclass(frozen=True)
class TruncationLevel:
    """Clamp height n > 0 for the operator r ↦ min{n, max{r, −n}}."""

    n: float

    def __post_init__(self):
        if not self.n > 0.0:
            raise ValueError(f"truncation height must be positive, got {self.n}")


def truncate(level: TruncationLevel, r):
    """min{n, max{r, −n}}: identity on [−n, n], clamped outside."""
    return np.clip(r, -level.n, level.n)


@dataclass
class AdmissibilityReport:
    """Randomized check of the structural conditions on a flow rule."""

    kind: str
    samples: int
    seed: int
    worst_monotonicity: float       # min (G(θ,η1)−G(θ,η2)):(η1−η2)
    worst_dissipation: float        # min G(θ,η):η
    max_at_zero: float              # max |G(θ,0)|
    empirical_growth: float         # max |G(θ,η)| / (1+|η|)
    declared_growth: float          # recorded constant C_G of the rule
    tol: float

    @property
    def monotone_ok(self) -> bool:
        return self.worst_monotonicity >= -self.tol

    @property
    def dissipative_ok(self) -> bool:
        return self.worst_dissipation >= -self.tol

    @property
    def zero_ok(self) -> bool:
        return self.max_at_zero <= 1e-14

    @property
    def growth_ok(self) -> bool:
        return self.empirical_growth <= self.declared_growth * (1.0 + 1e-9) + 1e-14

    @property
    def passed(self) -> bool:
        return self.monotone_ok and self.dissipative_ok and self.zero_ok and self.growth_ok

    def __str__(self) -> str:
        def mark(ok):
            return "pass" if ok else "FAIL"

        lines = [
            f"flow rule admissibility ({self.kind}, {self.samples} samples, seed {self.seed})",
            f"  monotonicity   worst inner product = {self.worst_monotonicity: .3e}  [{mark(self.monotone_ok)}]",
            f"  dissipation    worst G:eta         = {self.worst_dissipation: .3e}  [{mark(self.dissipative_ok)}]",
            f"  zero response  max |G(theta,0)|    = {self.max_at_zero: .3e}  [{mark(self.zero_ok)}]",
            f"  growth         max |G|/(1+|eta|)   = {self.empirical_growth: .6g} "
            f"(declared {self.declared_growth:g})  [{mark(self.growth_ok)}]",
            f"  overall: {mark(self.passed)}",
        ]
        return "\n".join(lines)


def _random_symmetric(rng, count, dim=3):
    """Random symmetric matrices as Mandel vectors with log-spread magnitudes."""
    raw = rng.standard_normal((count, sym_components(dim)))
    unit = raw / np.maximum(np.linalg.norm(raw, axis=1), 1e-300)[:, None]
    mag = 10.0 ** rng.uniform(-3.0, 3.0, size=count)
    return unit * mag[:, None]


def verify_admissibility(G: FlowRule, sample_count: int = 10_000, rng_seed: int = 0,
                         tol: float = 1e-10) -> AdmissibilityReport:
    """Randomized test of monotonicity, growth, dissipativity and G(θ,0)=0.

    Temperatures are drawn over a wide range including negative values;
    stress magnitudes span six decades so the empirical growth constant
    approaches its supremum.  Failures are report content, not exceptions.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    dim = 3
    thetas = np.concatenate([
        rng.normal(1.0, 2.0, size=(sample_count + 1) // 2),
        rng.uniform(-50.0, 50.0, size=sample_count // 2),
    ])[:sample_count]
    eta1 = _random_symmetric(rng, sample_count, dim)
    eta2 = _random_symmetric(rng, sample_count, dim)

    g1 = G.eval_mandel(thetas, eta1, dim)
    g2 = G.eval_mandel(thetas, eta2, dim)
    g0 = G.eval_mandel(thetas, np.zeros_like(eta1), dim)

    mono = np.einsum("ij,ij->i", g1 - g2, eta1 - eta2)
    diss = np.einsum("ij,ij->i", g1, eta1)
    growth = np.linalg.norm(g1, axis=1) / (1.0 + np.linalg.norm(eta1, axis=1))

    return AdmissibilityReport(
        kind=G.kind,
        samples=sample_count,
        seed=rng_seed,
        worst_monotonicity=float(mono.min()),
        worst_dissipation=float(diss.min()),
        max_at_zero=float(np.linalg.norm(g0, axis=1).max()),
        empirical_growth=float(growth.max()),
        declared_growth=G.c_growth,
        tol=tol,
    )
