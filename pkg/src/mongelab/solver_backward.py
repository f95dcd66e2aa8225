"""Dual (backward) transport potential psi, with S = I + grad psi = T^{-1}.

Primary path: conjugacy from the solved forward potential,

    psi(y) = -min_x [phi(x) + |x - y|^2 / 2],
    S(y)   = argmin_x [...],   grad psi(y) = S(y) - y,

evaluated by damped Newton per point (the inner objective is strongly
convex when I + hess phi has a positive margin).  Higher derivatives of
psi follow exactly from the implicit function theorem,

    I + hess psi(y)       = (I + hess phi(S(y)))^{-1},
    (I + hess psi)^{-1} - I = hess phi(S(y)),

so residual diagnostics never invert a fitted Hessian (a polynomial fit
of psi cannot keep I + hess psi positive across the nu-support for
non-quadratic targets).  A Hermite least-squares fit under nu is still
attached for serialization and for comparisons needing a coefficient
representation (e.g. applying the OU semigroup to psi).

A variational cross-check mode minimizes

    J_b(psi) = -E_nu[f] - E_nu[log det2(I + hess psi) - L psi - |grad psi|^2 / 2]

whose infimum is -log nu(e^f) = log E[e^{-f}], attained at the same psi.

The stationarity identity satisfied by the dual potential (the weak form
E_nu[-trace(((I+hess psi)^{-1} - I) grad xi) + delta xi + <grad psi, xi>] = 0
turned into a strong form via delta_nu) reads

    delta_nu((I + hess psi)^{-1} - I) = grad psi - grad f,

which closed-form Gaussian pairs satisfy exactly; backward_el_residual
measures its nu-mean-square violation.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import SingularJacobianError
from .gaussian import GaussianSpace, nu_masked_weights, nu_weights
from .hermite import HermiteBasis, as_points
from .potentials import PotentialField, inverse_shift_jacobian
from .solver_forward import (SolveConfig, SolveResult, coefficient_scale,
                             minimize_with_barrier)
from .targets import ScalarTarget

_NEWTON_TOL = 1e-12
_NEWTON_ITERS = 100


def conjugacy_minimize(phi: PotentialField, y: np.ndarray):
    """argmin_x [phi(x) + |x - y|^2 / 2] for each row of y, damped Newton.

    Returns (x_star, converged mask).
    """
    y = as_points(y, phi.dim)
    x = y.copy()
    eye = np.eye(phi.dim)

    def residual(pts, targets):
        return phi.grad(pts) + pts - targets

    r = residual(x, y)
    rnorm = np.linalg.norm(r, axis=1)
    tol = _NEWTON_TOL * (1.0 + np.linalg.norm(y, axis=1))
    for _ in range(_NEWTON_ITERS):
        active = rnorm > tol
        if not active.any():
            break
        jac = eye[None] + phi.hess(x[active])
        step = np.linalg.solve(jac, -r[active][..., None])[..., 0]
        lam = np.ones(step.shape[0])
        xa = x[active]
        ya = y[active]
        ra = rnorm[active]
        for _ in range(60):
            trial = xa + lam[:, None] * step
            trn = np.linalg.norm(residual(trial, ya), axis=1)
            bad = trn > (1.0 - 0.5 * lam) * ra
            if not bad.any():
                break
            lam[bad] *= 0.5
        x[active] = xa + lam[:, None] * step
        r = residual(x, y)
        rnorm = np.linalg.norm(r, axis=1)
    return x, rnorm <= tol


@dataclass(frozen=True)
class DualPotential:
    """Dual potential with exact pointwise evaluators and an optional fit.

    For provenance "conjugacy", eval/grad/hess/third are exact in the
    solved phi (implicit function theorem at the inner minimizer); for
    "variational" they delegate to the coefficient representation.
    """

    forward: PotentialField
    points: np.ndarray          # (M, d) evaluation points y
    psi_values: np.ndarray      # psi(y), including the conjugacy constant
    map_values: np.ndarray      # S(y) = argmin x
    converged: np.ndarray       # per-point Newton convergence
    provenance: str             # "conjugacy" or "variational"
    psi_fit: Optional[PotentialField] = None
    fit_offset: float = 0.0
    fit_residual: Optional[float] = None

    @property
    def dim(self) -> int:
        return self.forward.dim

    def as_field(self) -> PotentialField:
        if self.psi_fit is None:
            raise ValueError("dual potential has no basis fit; call fit_dual first")
        return self.psi_fit

    def _minimizers(self, y):
        pts = as_points(y, self.dim)
        x_star, _ = conjugacy_minimize(self.forward, pts)
        return pts, x_star

    def eval(self, y) -> np.ndarray:
        if self.provenance != "conjugacy":
            return self.psi_fit.eval(y)
        pts, x_star = self._minimizers(y)
        return -(self.forward.eval(x_star) + 0.5 * np.sum((x_star - pts) ** 2, axis=1))

    def grad(self, y) -> np.ndarray:
        """grad psi(y) = S(y) - y."""
        if self.provenance != "conjugacy":
            return self.psi_fit.grad(y)
        pts, x_star = self._minimizers(y)
        return x_star - pts

    def hess(self, y) -> np.ndarray:
        """hess psi(y) = (I + hess phi(S(y)))^{-1} - I."""
        if self.provenance != "conjugacy":
            return self.psi_fit.hess(y)
        _, x_star = self._minimizers(y)
        k = inverse_shift_jacobian(self.forward, x_star)
        return k - np.eye(self.dim)

    def third(self, y) -> np.ndarray:
        """third psi = -K third(phi)(S) K contracted with grad S = K."""
        if self.provenance != "conjugacy":
            return self.psi_fit.third(y)
        _, x_star = self._minimizers(y)
        k = inverse_shift_jacobian(self.forward, x_star)
        t3 = self.forward.third(x_star)
        return -np.einsum("nce,neij,nia,njb->ncab", k, t3, k, k)

    def to_json_dict(self) -> dict:
        data = {"provenance": self.provenance}
        if self.psi_fit is not None:
            data.update(self.psi_fit.to_json_dict())
            data["fit_offset"] = float(self.fit_offset)
            data["fit_residual"] = float(self.fit_residual)
        return data


def default_dual_grid(dim: int) -> np.ndarray:
    if dim == 1:
        return np.linspace(-8.0, 8.0, 2001).reshape(-1, 1)
    if dim == 2:
        side = np.linspace(-5.0, 5.0, 61)
        xx, yy = np.meshgrid(side, side, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=-1)
    raise ValueError("tabulated dual grids are provided for d <= 2 only")


def conjugate(space: GaussianSpace, phi: PotentialField,
              grid: np.ndarray | None = None) -> DualPotential:
    """psi(y) = -min_x [phi(x) + |x - y|^2 / 2] on the grid points."""
    pts = default_dual_grid(phi.dim) if grid is None else as_points(grid, phi.dim)
    x_star, ok = conjugacy_minimize(phi, pts)
    vals = -(phi.eval(x_star) + 0.5 * np.sum((x_star - pts) ** 2, axis=1))
    return DualPotential(
        forward=phi,
        points=pts,
        psi_values=vals,
        map_values=x_star,
        converged=ok,
        provenance="conjugacy",
    )


def fit_dual(space: GaussianSpace, target: ScalarTarget, dual: DualPotential,
             degree: int | None = None) -> DualPotential:
    """Least-squares Hermite fit of psi under nu at the quadrature nodes.

    The constant term (excluded from the basis) is kept as fit_offset; all
    residual diagnostics only use derivatives of the fit.
    """
    degree = dual.forward.degree if degree is None else degree
    basis = HermiteBasis(space.dim, degree)
    nodes = space.nodes
    x_star, ok = conjugacy_minimize(dual.forward, nodes)
    vals = -(dual.forward.eval(x_star) + 0.5 * np.sum((x_star - nodes) ** 2, axis=1))
    w = nu_weights(space, target)
    design = np.concatenate([np.ones((nodes.shape[0], 1)), basis.value_table(nodes).T], axis=1)
    sw = np.sqrt(w)
    sol, *_ = np.linalg.lstsq(design * sw[:, None], vals * sw, rcond=None)
    fit = PotentialField(basis, sol[1:])
    resid = design @ sol - vals
    rms = float(np.sqrt(np.sum(w * resid**2)))
    return replace(dual, psi_fit=fit, fit_offset=float(sol[0]), fit_residual=rms)


def inverse_check(space: GaussianSpace, phi: PotentialField, dual) -> float:
    """E_mu[|S(T(x)) - x|^2]; dual may be a DualPotential or a PotentialField."""
    x = space.nodes
    t = x + phi.grad(x)
    s = t + dual.grad(t)
    return float(np.sum(space.weights * np.sum((s - x) ** 2, axis=1)))


def _nu_masked(space: GaussianSpace, target: ScalarTarget):
    return nu_masked_weights(space, target)


def backward_objective(space: GaussianSpace, target: ScalarTarget, dual,
                       eig_floor: float = 1e-8) -> float:
    """J_b(psi) = -E_nu[f] - E_nu[log Lambda_psi]; >= log E[e^{-f}].

    L psi is evaluated pointwise as <y, grad psi> - laplace psi, and the
    nu-expectation runs over the mass-floored node set (the backward
    conditions are nu-a.s.).
    """
    w, mask = _nu_masked(space, target)
    y = space.nodes[mask]
    h = dual.hess(y)
    eigs = np.linalg.eigvalsh(np.eye(space.dim)[None] + h)
    if np.any(eigs <= eig_floor):
        raise SingularJacobianError("I + hess psi hit the eigenvalue floor on nu-support")
    ld2 = np.sum(np.log(eigs) - (eigs - 1.0), axis=1)
    g = dual.grad(y)
    lpsi = np.einsum("ni,ni->n", y, g) - np.einsum("nii->n", h)
    log_lambda = ld2 - lpsi - 0.5 * np.sum(g**2, axis=1)
    fvals = np.asarray(target.eval(y), dtype=float).reshape(-1)
    return float(np.sum(w[mask] * (-fvals - log_lambda)))


def _backward_operator(dual, y, eig_floor: float = 1e-8):
    """M = (I + hess psi)^{-1} - I and its contracted derivative at y.

    For a conjugacy dual, M(y) = hess phi(S(y)) exactly and
    sum_i d_i M_ij = sum_{i,e} K_ie phi'''_eij(S(y)); for a coefficient
    psi, M = K_psi - I with d_i M = -K_psi (d_i hess psi) K_psi.
    """
    if isinstance(dual, DualPotential) and dual.provenance == "conjugacy":
        phi = dual.forward
        x_star, _ = conjugacy_minimize(phi, y)
        m = phi.hess(x_star)
        k = inverse_shift_jacobian(phi, x_star, eig_floor=eig_floor)
        t3 = phi.third(x_star)
        pdiv = np.einsum("nie,neij->nj", k, t3)
        grad_psi = x_star - y
        return m, pdiv, grad_psi
    psi = dual if isinstance(dual, PotentialField) else dual.as_field()
    k = inverse_shift_jacobian(psi, y, eig_floor=eig_floor)
    m = k - np.eye(psi.dim)
    t3 = psi.third(y)
    dk = -np.einsum("nab,nibc,ncd->niad", k, t3, k)
    pdiv = np.einsum("niij->nj", dk)
    return m, pdiv, psi.grad(y)


def backward_el_residual(space: GaussianSpace, target: ScalarTarget, dual,
                         eig_floor: float = 1e-8) -> float:
    """E_nu[|delta_nu((I + hess psi)^{-1} - I) - grad psi + grad f|^2]."""
    w, mask = _nu_masked(space, target)
    y = space.nodes[mask]
    m, pdiv, grad_psi = _backward_operator(dual, y, eig_floor=eig_floor)
    delta_m = np.einsum("nij,ni->nj", m, y) - pdiv
    delta_nu_m = delta_m + np.einsum("nij,ni->nj", m, target.grad(y))
    r = delta_nu_m - grad_psi + target.grad(y)
    return float(np.sum(w[mask] * np.sum(r**2, axis=1)))


def young_gap(space: GaussianSpace, phi: PotentialField, dual: DualPotential,
              n_pairs: int = 10000, seed: int = 0) -> float:
    """min over probe pairs of F(x, y) = phi(x) + psi(y) + |x - y|^2 / 2.

    psi at the probe points is evaluated by the conjugacy minimization
    itself, so this checks that the inner Newton solves really reached
    the minimum (F >= 0 holds by construction at exact minimizers).
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_pairs, phi.dim))
    y = rng.standard_normal((n_pairs, phi.dim))
    x_star, _ = conjugacy_minimize(phi, y)
    psi_vals = -(phi.eval(x_star) + 0.5 * np.sum((x_star - y) ** 2, axis=1))
    f_vals = phi.eval(x) + psi_vals + 0.5 * np.sum((x - y) ** 2, axis=1)
    return float(f_vals.min())


def graph_identity_gap(phi: PotentialField, dual: DualPotential, x: np.ndarray) -> float:
    """max |phi(x) + psi(T(x)) + |grad phi(x)|^2 / 2| over sample points x."""
    pts = as_points(x, phi.dim)
    t = pts + phi.grad(pts)
    x_star, _ = conjugacy_minimize(phi, t)
    psi_vals = -(phi.eval(x_star) + 0.5 * np.sum((x_star - t) ** 2, axis=1))
    f_vals = phi.eval(pts) + psi_vals + 0.5 * np.sum(phi.grad(pts) ** 2, axis=1)
    return float(np.max(np.abs(f_vals)))


class BackwardWorkspace:
    """Objective/gradient of J_b over psi coefficients (nu-weighted)."""

    def __init__(self, space: GaussianSpace, target: ScalarTarget, basis: HermiteBasis,
                 eig_floor: float = 1e-8):
        self.space = space
        self.target = target
        self.basis = basis
        self.eig_floor = eig_floor
        w, mask = _nu_masked(space, target)
        self.w = w[mask]
        nodes = space.nodes[mask]
        self.nodes = nodes
        self.bval = basis.value_table(nodes)
        self.bgrad = basis.grad_table(nodes)
        self.bhess = basis.hess_table(nodes)
        self.eye = np.eye(space.dim)
        self.coeff_scale = coefficient_scale(self.bhess)
        fvals = np.asarray(target.eval(nodes), dtype=float).reshape(-1)
        self.const = float(np.sum(self.w * (-fvals)))
        self.ou_eigs = basis.ou_eigenvalues

    def objective_and_gradient(self, coeffs: np.ndarray):
        g = np.tensordot(coeffs, self.bgrad, axes=1).T
        h = np.transpose(np.tensordot(coeffs, self.bhess, axes=1), (2, 0, 1))
        jac = self.eye[None] + h
        eigs = np.linalg.eigvalsh(jac)
        margin = float(eigs.min()) - self.eig_floor
        if margin <= 0:
            return np.inf, None, margin
        ld2 = np.sum(np.log(eigs) - (eigs - 1.0), axis=1)
        lpsi = (coeffs * self.ou_eigs) @ self.bval
        log_lambda = ld2 - lpsi - 0.5 * np.sum(g**2, axis=1)
        obj = self.const - float(np.sum(self.w * log_lambda))
        k = np.linalg.inv(jac)
        m = (k - self.eye[None]) * self.w[:, None, None]
        grad = -np.einsum("nij,aijn->a", m, self.bhess)
        grad += self.ou_eigs * (self.bval @ self.w)
        grad += np.einsum("nk,akn->a", g * self.w[:, None], self.bgrad)
        return obj, grad, margin


def solve_backward_variational(space: GaussianSpace, target: ScalarTarget,
                               config: SolveConfig) -> tuple[DualPotential, SolveResult]:
    """Cross-check mode: minimize J_b directly over psi coefficients."""
    basis = HermiteBasis(space.dim, config.degree)
    ws = BackwardWorkspace(space, target, basis, eig_floor=config.eig_floor)
    c, val, grad, iterations, converged, history = minimize_with_barrier(
        ws.objective_and_gradient,
        np.zeros(basis.size),
        config.max_iters,
        config.grad_tol,
        use_bfgs=(config.optimizer == "quasi-newton"),
        plateau_tol=config.grad_tol_soft,
        scale=ws.coeff_scale,
    )
    from .gaussian import log_normalizer

    psi = PotentialField(basis, c)
    w, mask = _nu_masked(space, target)
    g = psi.grad(space.nodes[mask])
    dual = DualPotential(
        forward=psi,  # variational mode has no forward source; self-reference
        points=space.nodes,
        psi_values=psi.eval(space.nodes),
        map_values=space.nodes + psi.grad(space.nodes),
        converged=np.ones(space.nodes.shape[0], dtype=bool),
        provenance="variational",
        psi_fit=psi,
        fit_offset=0.0,
        fit_residual=0.0,
    )
    result = SolveResult(
        phi=psi,
        objective=val,
        iterations=iterations,
        converged=converged,
        grad_norm=float(np.linalg.norm(grad)),
        wasserstein2_sq=float(np.sum(w[mask] * np.sum(g**2, axis=1))),
        variational_lhs=log_normalizer(space, target),  # -log nu(e^f) = log E[e^{-f}]
        objective_history=history,
    )
    return dual, result
