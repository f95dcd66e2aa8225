"""Hermite-basis potential fields, the modified Carleman-Fredholm determinant,
the Gaussian Jacobian of a gradient shift, and entropy functionals.

A potential phi(x) = sum_alpha c_alpha He_alpha(x) (no constant term; the
additive constant of a transport potential is pinned to zero coefficient)
supports exact gradient/Hessian/third-derivative evaluation, and the
number operator acts diagonally: L phi has coefficients |alpha| c_alpha.

The Gaussian Jacobian of the shift T = I + grad phi is

    Lambda = det2(I + hess phi) exp(-L phi - |grad phi|^2 / 2)

with det2(I + K) = det(I + K) e^{-trace K}, so

    log det2(I + K) = sum_i [log(1 + k_i) - k_i] <= 0

over the eigenvalues k_i of K.  The change of variables gives the
pushforward entropy

    H(T mu | mu) = E[|grad phi|^2 / 2 - log det2(I + hess phi)] >= 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import SingularJacobianError
from .gaussian import GaussianSpace, log_normalizer, nu_expectation
from .hermite import HermiteBasis, as_points

EIG_FLOOR = 1e-8


class PotentialField:
    """Polynomial potential in the tensor Hermite basis (constant excluded)."""

    def __init__(self, basis: HermiteBasis, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
        if coeffs.shape[0] != basis.size:
            raise ValueError(f"expected {basis.size} coefficients, got {coeffs.shape[0]}")
        self.basis = basis
        self.coeffs = coeffs
        self.coeffs.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def degree(self) -> int:
        return self.basis.degree

    @staticmethod
    def zero(dim: int, degree: int) -> "PotentialField":
        basis = HermiteBasis(dim, degree)
        return PotentialField(basis, np.zeros(basis.size))

    @staticmethod
    def from_coeff_dict(dim: int, degree: int, coeffs: dict) -> "PotentialField":
        basis = HermiteBasis(dim, degree)
        vec = np.zeros(basis.size)
        lookup = {alpha: a for a, alpha in enumerate(basis.indices)}
        for alpha, c in coeffs.items():
            key = tuple(int(v) for v in (alpha if hasattr(alpha, "__len__") else (alpha,)))
            if key not in lookup:
                raise ValueError(f"multi-index {key} outside basis (dim={dim}, degree={degree})")
        # second pass so the error above fires before any assignment
        for alpha, c in coeffs.items():
            key = tuple(int(v) for v in (alpha if hasattr(alpha, "__len__") else (alpha,)))
            vec[lookup[key]] = float(c)
        return PotentialField(basis, vec)

    def coeff_dict(self) -> dict:
        return {alpha: float(c) for alpha, c in zip(self.basis.indices, self.coeffs) if c != 0.0}

    def eval(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        return self.coeffs @ self.basis.value_table(pts)

    def grad(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        table = self.basis.grad_table(pts)
        return np.tensordot(self.coeffs, table, axes=1).T  # (N, d)

    def hess(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        table = self.basis.hess_table(pts)
        return np.transpose(np.tensordot(self.coeffs, table, axes=1), (2, 0, 1))

    def third(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        if self.degree < 3:
            return np.zeros((pts.shape[0], self.dim, self.dim, self.dim))
        table = self.basis.third_table(pts)
        return np.transpose(np.tensordot(self.coeffs, table, axes=1), (3, 0, 1, 2))

    def ou_apply(self) -> "PotentialField":
        """L phi, computed from the eigenrelation L He_alpha = |alpha| He_alpha."""
        return PotentialField(self.basis, self.coeffs * self.basis.ou_eigenvalues)

    def semigroup(self, t: float) -> "PotentialField":
        """P_t phi: coefficients scale by e^{-|alpha| t}."""
        if t < 0:
            raise ValueError("t must be >= 0")
        return PotentialField(self.basis, self.coeffs * np.exp(-t * self.basis.ou_eigenvalues))

    def with_coeffs(self, coeffs: np.ndarray) -> "PotentialField":
        return PotentialField(self.basis, coeffs)

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "degree": self.degree,
            "coeffs": [
                [list(alpha), float(c)]
                for alpha, c in zip(self.basis.indices, self.coeffs)
                if c != 0.0
            ],
        }

    @staticmethod
    def from_json_dict(data: dict) -> "PotentialField":
        return PotentialField.from_coeff_dict(
            int(data["dim"]),
            int(data["degree"]),
            {tuple(alpha): c for alpha, c in data["coeffs"]},
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "PotentialField":
        with open(path, encoding="utf-8") as fh:
            return PotentialField.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class TransportShift:
    """T = I + grad phi (forward) or S = I + grad psi (backward)."""

    base: PotentialField
    direction: str = "forward"

    def map(self, x) -> np.ndarray:
        pts = as_points(x, self.base.dim)
        return pts + self.base.grad(pts)

    def jacobian(self, x) -> np.ndarray:
        pts = as_points(x, self.base.dim)
        return np.eye(self.base.dim)[None] + self.base.hess(pts)

    def monotonicity_margin(self, space: GaussianSpace) -> float:
        """Smallest eigenvalue of I + hess phi over the quadrature nodes."""
        eigs = np.linalg.eigvalsh(self.jacobian(space.nodes))
        return float(eigs.min())


def logdet2(a, eig_floor: float = EIG_FLOOR):
    """log det2(I + K) = sum_i [log(1 + k_i) - k_i] for symmetric K.

    Always <= 0 (log(1+x) <= x), zero only at K = 0.  Accepts one matrix
    (returns a float) or a batch (N, d, d) (returns (N,)).
    """
    a = np.asarray(a, dtype=float)
    single = a.ndim == 2
    batch = a[None] if single else a
    kappa = np.linalg.eigvalsh(batch)
    lam = 1.0 + kappa
    if np.any(lam <= eig_floor):
        raise SingularJacobianError(f"eigenvalue of I + K at or below floor {eig_floor}")
    vals = np.sum(np.log(lam) - kappa, axis=1)
    return float(vals[0]) if single else vals


def inverse_shift_jacobian(phi: PotentialField, x, eig_floor: float = EIG_FLOOR) -> np.ndarray:
    """K = (I + hess phi)^{-1} at a batch of points, floor-checked."""
    pts = as_points(x, phi.dim)
    jac = np.eye(phi.dim)[None] + phi.hess(pts)
    eigs = np.linalg.eigvalsh(jac)
    if np.any(eigs <= eig_floor):
        raise SingularJacobianError(f"I + hess phi has eigenvalue at or below {eig_floor}")
    return np.linalg.inv(jac)


def gaussian_jacobian(space: GaussianSpace, phi: PotentialField, eig_floor: float = EIG_FLOOR) -> Callable:
    """Lambda(x) = det2(I + hess phi) exp(-L phi - |grad phi|^2 / 2) > 0.

    L phi comes from the analytic Hermite representation, not quadrature.
    """
    lphi = phi.ou_apply()

    def jac(x):
        pts = as_points(x, phi.dim)
        ld2 = logdet2(phi.hess(pts), eig_floor=eig_floor)
        g = phi.grad(pts)
        return np.exp(ld2 - lphi.eval(pts) - 0.5 * np.sum(g**2, axis=1))

    return jac


def pushforward_entropy(space: GaussianSpace, phi: PotentialField, eig_floor: float = EIG_FLOOR) -> float:
    """H((I + grad phi) mu | mu) = E[|grad phi|^2 / 2 - log det2(I + hess phi)]."""
    g = phi.grad(space.nodes)
    ld2 = logdet2(phi.hess(space.nodes), eig_floor=eig_floor)
    vals = 0.5 * np.sum(g**2, axis=1) - ld2
    return float(np.sum(space.weights * vals))


def relative_entropy(space: GaussianSpace, target) -> float:
    """H(nu | mu) = E_nu[-f] - log E[e^{-f}]."""
    log_c = log_normalizer(space, target)
    return nu_expectation(space, target, lambda x: -target.eval(x)) - log_c
