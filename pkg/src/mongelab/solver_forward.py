"""Forward transport solver: minimize

    J_f(phi) = E[f o (I + grad phi)] + E[|grad phi|^2 / 2 - log det2(I + hess phi)]

over Hermite coefficients of phi.  The -log det2 term is a natural log
barrier at the monotonicity constraint I + hess phi > 0, enforced at
every quadrature node: the line search never accepts a step whose
smallest eigenvalue falls below the configured floor.

At the minimizer, J* = -log E[e^{-f}] and grad phi is the Brenier shift
transporting mu onto nu, with E[|grad phi|^2] the squared Wasserstein
distance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFiniteValueError, SingularJacobianError
from .gaussian import GaussianSpace
from .hermite import HermiteBasis
from .potentials import PotentialField, relative_entropy
from .targets import ScalarTarget


@dataclass(frozen=True)
class SolveConfig:
    degree: int
    optimizer: str = "quasi-newton"  # or "gradient-descent"
    max_iters: int = 500
    grad_tol: float = 1e-8
    grad_tol_soft: float = 1e-4  # accepted when descent is fp-limited
    eig_floor: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be > 0")
        if self.grad_tol_soft < self.grad_tol:
            raise ValueError("grad_tol_soft must be >= grad_tol")
        if self.optimizer not in ("quasi-newton", "gradient-descent"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class SolveResult:
    phi: PotentialField
    objective: float
    iterations: int
    converged: bool
    grad_norm: float
    wasserstein2_sq: float
    variational_lhs: float  # -log E[e^{-f}]
    objective_history: list = field(default_factory=list)


class ForwardWorkspace:
    """Cached per-node basis tables; objective and coefficient gradient.

    Infeasible coefficient vectors (eigenvalue floor violated at a node)
    evaluate to +inf, which the backtracking line search rejects.
    """

    def __init__(self, space: GaussianSpace, target: ScalarTarget, basis: HermiteBasis,
                 eig_floor: float = 1e-8):
        if basis.dim != space.dim:
            raise ValueError("basis dimension does not match space")
        self.space = space
        self.target = target
        self.basis = basis
        self.eig_floor = eig_floor
        nodes = space.nodes
        self.nodes = nodes
        self.w = space.weights
        self.bval = basis.value_table(nodes)    # (A, N)
        self.bgrad = basis.grad_table(nodes)    # (A, d, N)
        self.bhess = basis.hess_table(nodes)    # (A, d, d, N)
        self.eye = np.eye(space.dim)
        self.coeff_scale = coefficient_scale(self.bhess)

    def fields(self, coeffs: np.ndarray):
        g = np.tensordot(coeffs, self.bgrad, axes=1).T           # (N, d)
        h = np.transpose(np.tensordot(coeffs, self.bhess, axes=1), (2, 0, 1))  # (N, d, d)
        return g, h

    def objective(self, coeffs: np.ndarray) -> float:
        val, _, _ = self._evaluate(coeffs, want_grad=False)
        return val

    def objective_and_gradient(self, coeffs: np.ndarray):
        return self._evaluate(coeffs, want_grad=True)

    def _evaluate(self, coeffs: np.ndarray, want_grad: bool):
        g, h = self.fields(coeffs)
        jac = self.eye[None] + h
        eigs = np.linalg.eigvalsh(jac)
        margin = float(eigs.min()) - self.eig_floor
        if margin <= 0:
            return np.inf, None, margin
        shifted = self.nodes + g
        fvals = np.asarray(self.target.eval(shifted), dtype=float).reshape(-1)
        if not np.all(np.isfinite(fvals)):
            raise NonFiniteValueError("target not finite at a transported node")
        ld2 = np.sum(np.log(eigs) - (eigs - 1.0), axis=1)
        obj = float(np.sum(self.w * (fvals + 0.5 * np.sum(g**2, axis=1) - ld2)))
        if not want_grad:
            return obj, None, margin
        k = np.linalg.inv(jac)
        grad_f = np.asarray(self.target.grad(shifted), dtype=float)
        lin = (grad_f + g) * self.w[:, None]                      # (N, d)
        grad = np.einsum("nk,akn->a", lin, self.bgrad)
        m = (k - self.eye[None]) * self.w[:, None, None]
        grad -= np.einsum("nij,aijn->a", m, self.bhess)
        return obj, grad, margin


MARGIN_SHRINK = 0.2  # fraction-to-the-boundary: a step keeps >= 20% of the margin


def coefficient_scale(bhess: np.ndarray) -> np.ndarray:
    """Per-coefficient preconditioner 1 / (1 + max-node Hessian magnitude).

    High-degree basis functions move the monotonicity margin ~1e10 times
    faster than low-degree ones at extreme nodes; without this scaling a
    quasi-newton step can crush the margin for negligible objective gain.
    """
    sens = np.sqrt(np.sum(bhess**2, axis=(1, 2))).max(axis=1)
    return 1.0 / (1.0 + sens)


def minimize_with_barrier(
    fun_grad: Callable,
    x0: np.ndarray,
    max_iters: int,
    grad_tol: float,
    use_bfgs: bool = True,
    plateau_tol: float | None = None,
    scale: np.ndarray | None = None,
):
    """Deterministic BFGS (or plain descent) with Armijo backtracking.

    fun_grad(x) returns (value, gradient, margin); value is +inf and the
    gradient None when the margin (distance of the smallest eigenvalue
    above the floor) is nonpositive.  Accepted steps must keep a fixed
    fraction of the current margin (fraction-to-the-boundary rule), so
    iterates approach the feasibility boundary at most geometrically and
    never get pinned against it mid-path.  Restarts from steepest
    descent whenever the curvature condition fails or the quasi-newton
    direction is blocked.  When no acceptable step remains (descent
    below floating-point resolution), the run counts as converged iff
    the gradient norm is within plateau_tol.  Returns (x, value, grad,
    iterations, converged, history).
    """
    x = np.array(x0, dtype=float)
    val, grad, margin = fun_grad(x)
    if not np.isfinite(val):
        raise SingularJacobianError("infeasible starting point")
    n = x.shape[0]
    h0 = np.eye(n) if scale is None else np.diag(scale)
    h_inv = h0.copy()
    history = [val]
    iterations = 0
    converged = float(np.linalg.norm(grad)) <= grad_tol

    def backtrack(p, slope):
        alpha = 1.0
        while alpha > 1e-16:
            trial = x + alpha * p
            new_val, new_grad, new_margin = fun_grad(trial)
            if (
                np.isfinite(new_val)
                and new_margin >= MARGIN_SHRINK * margin
                and new_val <= val + 1e-4 * alpha * slope
            ):
                return alpha, new_val, new_grad, new_margin
            alpha *= 0.5
        return None, None, None, None

    for _ in range(max_iters):
        if converged:
            break
        iterations += 1
        p = -h_inv @ grad if use_bfgs else -(h0 @ grad)
        slope = float(p @ grad)
        if slope >= 0:
            h_inv = h0.copy()
            p = -(h0 @ grad)
            slope = float(p @ grad)
            if slope == 0.0:
                break
        alpha, new_val, new_grad, new_margin = backtrack(p, slope)
        if alpha is None and use_bfgs:
            # quasi-newton direction blocked; restart from scaled descent
            h_inv = h0.copy()
            p = -(h0 @ grad)
            slope = float(p @ grad)
            if slope < 0:
                alpha, new_val, new_grad, new_margin = backtrack(p, slope)
        if alpha is None:
            # no representable descent left; best iterate is the answer
            if plateau_tol is not None:
                converged = float(np.linalg.norm(grad)) <= plateau_tol
            break
        s = alpha * p
        y = new_grad - grad
        decrease = val - new_val
        x, val, grad, margin = x + s, new_val, new_grad, new_margin
        history.append(val)
        gn = float(np.linalg.norm(grad))
        converged = gn <= grad_tol
        if (
            not converged
            and plateau_tol is not None
            and gn <= plateau_tol
            and decrease <= 1e-15 * (1.0 + abs(val))
        ):
            converged = True  # stationary within floating-point resolution
        if use_bfgs:
            sy = float(s @ y)
            if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
                rho = 1.0 / sy
                sy_outer = np.outer(s, y)
                h_inv = (np.eye(n) - rho * sy_outer) @ h_inv @ (np.eye(n) - rho * sy_outer.T)
                h_inv += rho * np.outer(s, s)
            else:
                h_inv = h0.copy()
    return x, val, grad, iterations, converged, history


def objective(space: GaussianSpace, target: ScalarTarget, phi: PotentialField,
              eig_floor: float = 1e-8) -> float:
    """J_f(phi); raises SingularJacobianError when the barrier is hit."""
    ws = ForwardWorkspace(space, target, phi.basis, eig_floor=eig_floor)
    val = ws.objective(phi.coeffs)
    if not np.isfinite(val):
        raise SingularJacobianError("eigenvalue floor violated at a quadrature node")
    return val


def objective_coefficient_gradient(space: GaussianSpace, target: ScalarTarget,
                                   phi: PotentialField, eig_floor: float = 1e-8) -> np.ndarray:
    """Partial derivatives of J_f along each basis direction grad He_alpha."""
    ws = ForwardWorkspace(space, target, phi.basis, eig_floor=eig_floor)
    val, grad, _ = ws.objective_and_gradient(phi.coeffs)
    if not np.isfinite(val):
        raise SingularJacobianError("eigenvalue floor violated at a quadrature node")
    return grad


def variational_lhs(space: GaussianSpace, target: ScalarTarget) -> float:
    """-log E[e^{-f}], the exact infimum of J_f over all transports."""
    from .gaussian import log_normalizer

    return -log_normalizer(space, target)


def solve(space: GaussianSpace, target: ScalarTarget, config: SolveConfig,
          initial: PotentialField | None = None) -> SolveResult:
    """Minimize J_f from phi = 0 (always feasible: Lambda = 1 there).

    An explicit feasible `initial` potential (same dim and degree) may be
    supplied to warm-start, e.g. when re-solving a slightly perturbed
    target in a convergence study.  Returns the best iterate with
    converged=False when the gradient tolerance was not reached within
    max_iters; deterministic for a fixed (space, target, config, initial).
    """
    h_rel = relative_entropy(space, target)
    if not np.isfinite(h_rel):
        raise NonFiniteValueError("relative entropy of the target is not finite")
    basis = HermiteBasis(space.dim, config.degree)
    ws = ForwardWorkspace(space, target, basis, eig_floor=config.eig_floor)
    if initial is None:
        c0 = np.zeros(basis.size)
    else:
        if initial.dim != space.dim or initial.degree != config.degree:
            raise ValueError("initial potential must match the space dim and config degree")
        c0 = initial.coeffs.copy()
    c, val, grad, iterations, converged, history = minimize_with_barrier(
        ws.objective_and_gradient,
        c0,
        config.max_iters,
        config.grad_tol,
        use_bfgs=(config.optimizer == "quasi-newton"),
        plateau_tol=config.grad_tol_soft,
        scale=ws.coeff_scale,
    )
    phi = PotentialField(basis, c)
    g, _ = ws.fields(c)
    w2 = float(np.sum(space.weights * np.sum(g**2, axis=1)))
    return SolveResult(
        phi=phi,
        objective=val,
        iterations=iterations,
        converged=converged,
        grad_norm=float(np.linalg.norm(grad)),
        wasserstein2_sq=w2,
        variational_lhs=variational_lhs(space, target),
        objective_history=history,
    )


def gaussian_w2_sq(target: ScalarTarget) -> float:
    """Closed-form d2^2(mu, N(m, diag(s^2))) = |m|^2 + sum_i (s_i - 1)^2."""
    mean = np.asarray(target.params["mean"], dtype=float)
    sigma = np.asarray(target.params["sigma"], dtype=float)
    return float(np.sum(mean**2) + np.sum((sigma - 1.0) ** 2))


def wasserstein_check(space: GaussianSpace, result: SolveResult,
                      target: ScalarTarget) -> tuple[float, float]:
    """(E[|grad phi|^2], independent reference d2^2) for the solved potential.

    The reference is the Gaussian closed form when available, else the 1d
    monotone-rearrangement value, else NaN.
    """
    lhs = result.wasserstein2_sq
    if target.kind == "gaussian":
        return lhs, gaussian_w2_sq(target)
    if target.dim == 1:
        from .oracle1d import wasserstein2_sq as oracle_w2

        return lhs, oracle_w2(target)
    return lhs, float("nan")


def variational_gap(space: GaussianSpace, target: ScalarTarget, result: SolveResult) -> float:
    """J* - (-log E[e^{-f}]) >= 0 up to quadrature error; ~0 at convergence."""
    return result.objective - result.variational_lhs
