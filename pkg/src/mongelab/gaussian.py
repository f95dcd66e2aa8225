"""Standard Gaussian measure on R^d: quadrature, expectations, OU smoothing,
and the Gaussian / density-weighted divergence operators.

Quadrature duality: tensor Gauss-Hermite rules (exact on polynomials of
total degree <= 2L-1 per axis) for d <= 4, seeded Monte Carlo beyond.
Expectations reduce in a fixed order (ascending node index, pairwise),
so results are reproducible regardless of how evaluation is parallelized.

Conventions used throughout the package:

    (grad xi)_ij = d_i xi_j                      Jacobian of a vector field
    delta xi     = <x, xi> - sum_i d_i xi_i      divergence (adjoint of grad)
    (delta M)_j  = sum_i (M_ij x_i - d_i M_ij)   operator divergence
    L            = delta o grad                  Ornstein-Uhlenbeck operator

and for a target density e^{-f} (dnu = e^{-f} dmu / c):

    delta_nu xi  = delta xi + <grad f, xi>
    (delta_nu M)_j = (delta M)_j + sum_i d_i f M_ij
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import DegenerateWeightError, NonFiniteValueError, NonSquareOperatorError
from .hermite import as_points

MAX_TENSOR_NODES = 10**7
WEIGHT_FLOOR = 1e-300


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes (N, d) and nonnegative weights (N,) summing to one."""

    nodes: np.ndarray
    weights: np.ndarray
    description: str

    def __post_init__(self):
        if self.nodes.ndim != 2 or self.weights.ndim != 1:
            raise ValueError("nodes must be (N, d), weights (N,)")
        if self.nodes.shape[0] != self.weights.shape[0]:
            raise ValueError("nodes and weights must have matching length")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)


@dataclass(frozen=True)
class TensorHermitePolicy:
    level: int

    def describe(self, dim: int) -> str:
        return f"tensor-hermite(level={self.level}, dim={dim})"


@dataclass(frozen=True)
class MonteCarloPolicy:
    samples: int
    seed: int

    def describe(self, dim: int) -> str:
        return f"monte-carlo(samples={self.samples}, seed={self.seed}, dim={dim})"


def _tensor_rule(dim: int, level: int) -> QuadratureRule:
    if level < 1:
        raise ValueError("tensor-hermite level must be >= 1")
    if dim > 4:
        raise ValueError("tensor-hermite quadrature is limited to dim <= 4")
    if level**dim > MAX_TENSOR_NODES:
        raise ValueError(f"tensor-hermite node count {level}^{dim} exceeds {MAX_TENSOR_NODES}")
    x, w = hermegauss(level)
    w = w / w.sum()
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.ones(nodes.shape[0])
    for j in range(dim):
        weights *= w[np.unravel_index(np.arange(nodes.shape[0]), (level,) * dim)[j]]
    weights /= weights.sum()
    return QuadratureRule(nodes, weights, TensorHermitePolicy(level).describe(dim))


def _mc_rule(dim: int, samples: int, seed: int) -> QuadratureRule:
    if samples < 1:
        raise ValueError("monte-carlo sample count must be >= 1")
    rng = np.random.default_rng(seed)
    nodes = rng.standard_normal((samples, dim))
    weights = np.full(samples, 1.0 / samples)
    return QuadratureRule(nodes, weights, MonteCarloPolicy(samples, seed).describe(dim))


@dataclass(frozen=True)
class GaussianSpace:
    """Standard Gaussian N(0, I_d) with a fixed quadrature rule.

    Immutable; evaluation over nodes may fan out but always reduces in
    ascending node order (numpy pairwise summation).
    """

    dim: int
    policy: TensorHermitePolicy | MonteCarloPolicy
    rule: QuadratureRule = field(compare=False)

    @staticmethod
    def tensor_hermite(dim: int, level: int) -> "GaussianSpace":
        if dim < 1:
            raise ValueError("dim must be >= 1")
        return GaussianSpace(dim, TensorHermitePolicy(level), _tensor_rule(dim, level))

    @staticmethod
    def monte_carlo(dim: int, samples: int, seed: int) -> "GaussianSpace":
        if dim < 1:
            raise ValueError("dim must be >= 1")
        return GaussianSpace(dim, MonteCarloPolicy(samples, seed), _mc_rule(dim, samples, seed))

    def subspace(self, dim: int) -> "GaussianSpace":
        """Space of a different dimension under the same quadrature policy."""
        if isinstance(self.policy, TensorHermitePolicy):
            return GaussianSpace.tensor_hermite(dim, self.policy.level)
        # derived seed keeps nested integrations reproducible but decorrelated
        return GaussianSpace.monte_carlo(dim, self.policy.samples, self.policy.seed + 7919 * dim)

    @property
    def nodes(self) -> np.ndarray:
        return self.rule.nodes

    @property
    def weights(self) -> np.ndarray:
        return self.rule.weights


def _eval_at_nodes(space: GaussianSpace, g: Callable) -> np.ndarray:
    vals = np.asarray(g(space.nodes), dtype=float).reshape(-1)
    if vals.shape[0] != space.nodes.shape[0]:
        raise ValueError("integrand must return one value per node")
    return vals


def expectation(space: GaussianSpace, g: Callable, weight: Optional[Callable] = None) -> float:
    """E_mu[g], or the weight-normalized sum(w g weight)/sum(w weight).

    With weight = e^{-f} this computes E_nu[g] for dnu = e^{-f} dmu / c.
    """
    vals = _eval_at_nodes(space, g)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteValueError("integrand not finite at a quadrature node")
    if weight is None:
        return float(np.sum(space.weights * vals))
    wvals = _eval_at_nodes(space, weight)
    if not np.all(np.isfinite(wvals)):
        raise NonFiniteValueError("weight not finite at a quadrature node")
    if np.any(wvals < 0):
        raise ValueError("weight must be nonnegative at all nodes")
    num = np.sum(space.weights * wvals * vals)
    den = np.sum(space.weights * wvals)
    if den < WEIGHT_FLOOR:
        raise DegenerateWeightError(f"weight normalizer {den!r} below {WEIGHT_FLOOR}")
    return float(num / den)


def nu_weights(space: GaussianSpace, target) -> np.ndarray:
    """Normalized weights of dnu = e^{-f} dmu / c at the nodes.

    Computed with a max-shift in log space so large |f| cannot overflow;
    the shift cancels in the normalization.
    """
    fvals = np.asarray(target.eval(space.nodes), dtype=float).reshape(-1)
    if not np.all(np.isfinite(fvals)):
        raise NonFiniteValueError("target log-density not finite at a quadrature node")
    logw = np.log(space.weights) - fvals
    shift = logw.max()
    if not np.isfinite(shift):
        raise DegenerateWeightError("all nu-weights underflowed")
    w = np.exp(logw - shift)
    total = w.sum()
    if total < WEIGHT_FLOOR:
        raise DegenerateWeightError("nu-weight normalizer collapsed")
    return w / total


def nu_masked_weights(space: GaussianSpace, target, mass_tol: float = 1e-12):
    """Renormalized nu-weights on the smallest node set of mass >= 1 - mass_tol.

    nu-a.s. conditions (backward potentials, dual Hessians) are checked on
    this set only: polynomial potentials and conjugacy solves are
    meaningless far outside the nu-support, and the dropped nodes carry a
    combined nu-mass below mass_tol.  Returns (weights, mask) with the
    weights zeroed off-mask and renormalized.
    """
    w = nu_weights(space, target)
    order = np.argsort(w)[::-1]
    cum = np.cumsum(w[order])
    keep = int(np.searchsorted(cum, 1.0 - mass_tol)) + 1
    mask = np.zeros(w.shape[0], dtype=bool)
    mask[order[:keep]] = True
    w = np.where(mask, w, 0.0)
    return w / w.sum(), mask


def nu_expectation(space: GaussianSpace, target, values) -> float:
    """E_nu[g] for node values or a callable g, via self-normalized weights."""
    if callable(values):
        values = values(space.nodes)
    vals = np.asarray(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteValueError("integrand not finite at a quadrature node")
    return float(np.sum(nu_weights(space, target) * vals))


def log_normalizer(space: GaussianSpace, target) -> float:
    """log E_mu[e^{-f}] by shifted log-sum-exp over the nodes."""
    fvals = np.asarray(target.eval(space.nodes), dtype=float).reshape(-1)
    if not np.all(np.isfinite(fvals)):
        raise NonFiniteValueError("target log-density not finite at a quadrature node")
    logw = np.log(space.weights) - fvals
    shift = logw.max()
    if not np.isfinite(shift):
        raise DegenerateWeightError("normalizer underflowed everywhere")
    return float(shift + np.log(np.sum(np.exp(logw - shift))))


def ou_semigroup(space: GaussianSpace, g: Callable, t: float) -> Callable:
    """P_t g(x) = sum_j W_j g(e^{-t} x + sqrt(1 - e^{-2t}) y_j).

    The inner rule integrating over y is the space's own rule.  P_0 g = g
    exactly (shortcut, no quadrature).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return g
    a = float(np.exp(-t))
    b = float(np.sqrt(1.0 - a * a))
    y = space.nodes
    wy = space.weights

    def smoothed(x):
        pts = as_points(x, space.dim)
        mixed = a * pts[:, None, :] + b * y[None, :, :]
        vals = np.asarray(g(mixed.reshape(-1, space.dim)), dtype=float)
        vals = vals.reshape(pts.shape[0], y.shape[0])
        if not np.all(np.isfinite(vals)):
            raise NonFiniteValueError("semigroup integrand not finite")
        return vals @ wy

    return smoothed


def condition_first_n(space: GaussianSpace, g: Callable, n: int) -> Callable:
    """E[g | first n coordinates]: quadrature over the trailing block.

    n = d returns g unchanged; n = 0 integrates everything out.
    """
    d = space.dim
    if not 0 <= n <= d:
        raise ValueError(f"n must be in [0, {d}]")
    if n == d:
        return g
    tail = space.subspace(d - n)
    z = tail.nodes
    wz = tail.weights

    def conditioned(x):
        pts = as_points(x, d)
        rep = np.repeat(pts[:, None, :], z.shape[0], axis=1)
        rep[:, :, n:] = z[None, :, :]
        vals = np.asarray(g(rep.reshape(-1, d)), dtype=float)
        vals = vals.reshape(pts.shape[0], z.shape[0])
        if not np.all(np.isfinite(vals)):
            raise NonFiniteValueError("conditioning integrand not finite")
        return vals @ wz

    return conditioned


@dataclass(frozen=True)
class VectorField:
    """xi: R^d -> R^d with Jacobian J[n, i, j] = d_i xi_j(x_n)."""

    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]


def gradient_field(phi) -> VectorField:
    """xi = grad phi; the Jacobian is the (symmetric) Hessian."""
    return VectorField(phi.dim, phi.grad, phi.hess)


def constant_field(h) -> VectorField:
    h = np.asarray(h, dtype=float).reshape(-1)
    d = h.shape[0]
    return VectorField(
        d,
        lambda x: np.broadcast_to(h, (as_points(x, d).shape[0], d)).copy(),
        lambda x: np.zeros((as_points(x, d).shape[0], d, d)),
    )


def linear_field(a: np.ndarray) -> VectorField:
    """xi(x) = A x, so (grad xi)_ij = A_ji."""
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    return VectorField(
        d,
        lambda x: as_points(x, d) @ a.T,
        lambda x: np.broadcast_to(a.T, (as_points(x, d).shape[0], d, d)).copy(),
    )


@dataclass(frozen=True)
class OperatorField:
    """M: R^d -> R^{d x d} with the contracted derivative sum_i d_i M_ij."""

    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    partial_divergence: Callable[[np.ndarray], np.ndarray]


def constant_operator(a: np.ndarray) -> OperatorField:
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    return OperatorField(
        d,
        lambda x: np.broadcast_to(a, (as_points(x, d).shape[0], d, d)).copy(),
        lambda x: np.zeros((as_points(x, d).shape[0], d)),
    )


def hessian_operator(phi) -> OperatorField:
    """M = hess phi; sum_i d_i M_ij = sum_i phi'''_iij."""

    def pdiv(x):
        third = phi.third(x)
        return np.einsum("niij->nj", third)

    return OperatorField(phi.dim, phi.hess, pdiv)


def inverse_jacobian_operator(phi, subtract_identity: bool = True, eig_floor: float = 1e-8) -> OperatorField:
    """M = (I + hess phi)^{-1} (optionally minus I), with exact derivatives.

    d_i M = -K (d_i hess phi) K for K = (I + hess phi)^{-1}; the identity
    shift does not affect derivatives.
    """
    from .potentials import inverse_shift_jacobian  # local import to avoid a cycle

    d = phi.dim

    def value(x):
        k = inverse_shift_jacobian(phi, x, eig_floor=eig_floor)
        if subtract_identity:
            k = k - np.eye(d)
        return k

    def pdiv(x):
        k = inverse_shift_jacobian(phi, x, eig_floor=eig_floor)
        third = phi.third(x)  # (N, d, d, d); third[n, i] = d_i hess
        dk = -np.einsum("nab,nibc,ncd->niad", k, third, k)
        return np.einsum("niij->nj", dk)

    return OperatorField(d, value, pdiv)


def divergence(space: GaussianSpace, xi: VectorField) -> Callable:
    """delta xi = <x, xi(x)> - trace(grad xi)."""

    def div(x):
        pts = as_points(x, space.dim)
        vals = xi.value(pts)
        jac = xi.jacobian(pts)
        return np.einsum("ni,ni->n", pts, vals) - np.einsum("nii->n", jac)

    return div


def operator_divergence(space: GaussianSpace, m: OperatorField) -> Callable:
    """(delta M)_j = sum_i (M_ij x_i - d_i M_ij); adjoint of grad on fields."""

    def div(x):
        pts = as_points(x, space.dim)
        vals = m.value(pts)
        if vals.ndim != 3 or vals.shape[1] != space.dim or vals.shape[2] != space.dim:
            raise NonSquareOperatorError(f"operator field must be (N, {space.dim}, {space.dim})")
        return np.einsum("nij,ni->nj", vals, pts) - m.partial_divergence(pts)

    return div


def weighted_divergence(space: GaussianSpace, target, xi: VectorField) -> Callable:
    """delta_nu xi = delta xi + <grad f, xi>."""
    base = divergence(space, xi)

    def div(x):
        pts = as_points(x, space.dim)
        return base(pts) + np.einsum("ni,ni->n", target.grad(pts), xi.value(pts))

    return div


def weighted_operator_divergence(space: GaussianSpace, target, m: OperatorField) -> Callable:
    """(delta_nu M)_j = (delta M)_j + sum_i d_i f M_ij."""
    base = operator_divergence(space, m)

    def div(x):
        pts = as_points(x, space.dim)
        return base(pts) + np.einsum("nij,ni->nj", m.value(pts), target.grad(pts))

    return div
