"""Target regularization schemes and their convergence studies.

OU scheme:       e^{-f_n} = E[P_{1/n} e^{-f} | first min(n, d) coordinates],
                 derivatives taken by differentiating the Mehler quadrature.
Truncation:      density scaled by a smooth cutoff theta_n(L) of the ratio
                 L = e^{-f}/c, equal to 1 on [1/n, n] and numerically
                 vanishing outside [1/(2n), 2n].

A convergence study re-solves the transport problem for each n and tracks

    n, |grad phi_n - grad phi|_{L2(mu)}, |psi_n - psi|_{L1(nu)},
    |Q_{1/n} psi_n - psi|_{L1(nu)}, E[|grad phi_n|^2]

against a reference solution (raw target, or finest n when the raw
target is not solvable).  Potentials are compared after centering under
nu, since transport potentials are defined up to additive constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWeightError, MongelabError
from .gaussian import GaussianSpace, log_normalizer, nu_weights
from .hermite import as_points
from .solver_forward import SolveConfig, solve
from .solver_backward import conjugate, fit_dual
from .targets import ScalarTarget, check_consistency

_RAMP_EDGE = 40.0      # theta at the outer band edge is e^{-40} ~ 4e-18
_RAMP_CAP = 4000.0     # penalty plateau far outside the band
_RAMP_WIDTH = float(np.log(2.0))


def smooth_target(space: GaussianSpace, target: ScalarTarget, n: int) -> ScalarTarget:
    """OU-regularized target: e^{-f_n} = E[P_{1/n} e^{-f} | V_{min(n,d)}].

    f_n and its derivatives come from one log-sum-exp over the combined
    (semigroup y, conditioning z) quadrature, so grad/hess are exact
    derivatives of the evaluated f_n.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    d = space.dim
    keep = min(n, d)
    t = 1.0 / n
    a = float(np.exp(-t))
    b = float(np.sqrt(1.0 - a * a))

    y_rule = space.subspace(d)
    if keep < d:
        z_rule = space.subspace(d - keep)
        z_nodes, z_w = z_rule.nodes, z_rule.weights
    else:
        z_nodes = np.zeros((1, 0))
        z_w = np.ones(1)
    y_nodes, y_w = y_rule.nodes, y_rule.weights
    log_omega = (np.log(y_w)[:, None] + np.log(z_w)[None, :]).ravel()  # (J*Z,)

    def _args(pts):
        # x with trailing coordinates replaced by z, then the Mehler mix with y
        m = pts.shape[0]
        full = np.repeat(pts[:, None, :], z_nodes.shape[0], axis=1)  # (M, Z, d)
        if keep < d:
            full[:, :, keep:] = z_nodes[None, :, :]
        mixed = a * full[:, None, :, :] + b * y_nodes[None, :, None, :]  # (M, J, Z, d)
        return mixed.reshape(m, -1, d)

    def _log_mix(pts):
        args = _args(pts)
        m, jz, _ = args.shape
        u = -np.asarray(target.eval(args.reshape(-1, d))).reshape(m, jz) + log_omega[None, :]
        shift = u.max(axis=1, keepdims=True)
        if not np.all(np.isfinite(shift)):
            raise DegenerateWeightError("smoothed density underflowed at a point")
        r = np.exp(u - shift)
        total = r.sum(axis=1, keepdims=True)
        return args, r / total, (shift[:, 0] + np.log(total[:, 0]))

    def f(x):
        pts = as_points(x, d)
        _, _, log_s = _log_mix(pts)
        return -log_s

    def grad(x):
        pts = as_points(x, d)
        args, r, _ = _log_mix(pts)
        gf = np.asarray(target.grad(args.reshape(-1, d))).reshape(args.shape)
        g = a * np.einsum("nj,njd->nd", r, gf)
        g[:, keep:] = 0.0
        return g

    def hess(x):
        pts = as_points(x, d)
        args, r, _ = _log_mix(pts)
        flat = args.reshape(-1, d)
        gf = np.asarray(target.grad(flat)).reshape(args.shape)
        hf = np.asarray(target.hess(flat)).reshape(args.shape[:2] + (d, d))
        mean_g = np.einsum("nj,njd->nd", r, gf)
        h = a * a * (
            np.einsum("nj,njde->nde", r, hf)
            - np.einsum("nj,njd,nje->nde", r, gf, gf)
            + np.einsum("nd,ne->nde", mean_g, mean_g)
        )
        h[:, keep:, :] = 0.0
        h[:, :, keep:] = 0.0
        return h

    smoothed = ScalarTarget(
        d,
        f"ou-smoothed({target.kind})",
        {"n": n, "base": target.params},
        f,
        grad,
        hess,
    )
    # positivity of e^{-f_n} on the nodes; raises on underflow
    vals = smoothed.eval(space.nodes)
    if not np.all(np.isfinite(vals)):
        raise DegenerateWeightError("smoothed target not finite at a quadrature node")
    check_consistency(smoothed)
    return smoothed


def _ramp(s: np.ndarray):
    """C2 capped cubic hinge: 0 on s <= 0, ~_RAMP_EDGE one band-width out.

    rho = C tanh(q / C) with q the cubic hinge reaching _RAMP_EDGE at
    s = _RAMP_WIDTH, plateauing at C = _RAMP_CAP far outside the band:
    the cutoff density is ~e^{-40} at the outer edge (numerically
    vanishing) while the penalty's slope stays shallow enough for the
    solver to traverse and saturates instead of dominating nodes that
    carry no mass.  Returns (rho, rho', rho'').
    """
    h = np.maximum(s, 0.0)
    cap = _RAMP_CAP
    scale = _RAMP_EDGE / _RAMP_WIDTH**3
    q = scale * h**3
    q1 = 3 * scale * h**2
    q2 = 6 * scale * h
    u = np.tanh(q / cap)
    sech2 = 1.0 - u**2
    rho = cap * u
    rho1 = sech2 * q1
    rho2 = sech2 * q2 - (2.0 / cap) * sech2 * u * q1**2
    return rho, rho1, rho2


def truncate_density(space: GaussianSpace, target: ScalarTarget, n: int) -> ScalarTarget:
    """Density L theta_n(L) (renormalized), theta_n a C2 cutoff of L = e^{-f}/c.

    theta_n = exp(-rho(log L)) with a cubic-hinge rho: exactly 1 on
    [1/n, n], about e^{-600} at the edges 1/(2n) and 2n.  The resulting
    f_n = f + rho stays finite, so truncated targets remain solvable.
    Params record the normalizer c_n = 1/E_nu[theta_n(L)] and the
    truncated mass gap 1 - E_nu[theta_n(L)].
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    d = space.dim
    log_c = log_normalizer(space, target)
    edge = float(np.log(n))

    def _penalty(s):
        up_v, up_d1, up_d2 = _ramp(s - edge)
        dn_v, dn_d1, dn_d2 = _ramp(-s - edge)
        return up_v + dn_v, up_d1 - dn_d1, up_d2 + dn_d2

    def _s(pts):
        return -np.asarray(target.eval(pts)).reshape(-1) - log_c

    def f(x):
        pts = as_points(x, d)
        v, _, _ = _penalty(_s(pts))
        return target.eval(pts) + v

    def grad(x):
        pts = as_points(x, d)
        _, p1, _ = _penalty(_s(pts))
        return (1.0 - p1)[:, None] * target.grad(pts)

    def hess(x):
        pts = as_points(x, d)
        _, p1, p2 = _penalty(_s(pts))
        gf = target.grad(pts)
        return (1.0 - p1)[:, None, None] * target.hess(pts) + p2[:, None, None] * np.einsum(
            "nd,ne->nde", gf, gf
        )

    truncated = ScalarTarget(
        d,
        f"truncated({target.kind})",
        {"n": n, "base": target.params},
        f,
        grad,
        hess,
    )
    w = nu_weights(space, target)
    v, _, _ = _penalty(_s(space.nodes))
    theta_mass = float(np.sum(w * np.exp(-v)))
    if theta_mass < 1e-300:
        raise DegenerateWeightError("truncation removed essentially all mass")
    truncated.params["normalizer"] = 1.0 / theta_mass
    truncated.params["mass_gap"] = 1.0 - theta_mass
    check_consistency(truncated)
    return truncated


@dataclass
class StudyRow:
    n: int
    grad_phi_err: float
    psi_err: float
    psi_err_smoothed: float
    w2sq: float
    status: str = "ok"


@dataclass
class StudyTable:
    scheme: str
    reference: str
    rows: list = field(default_factory=list)

    HEADER = "n,grad_phi_err,psi_err,psi_err_smoothed,w2sq,status"

    def to_csv(self) -> str:
        lines = [self.HEADER]
        for r in self.rows:
            lines.append(
                f"{r.n},{r.grad_phi_err!r},{r.psi_err!r},{r.psi_err_smoothed!r},"
                f"{r.w2sq!r},{r.status}"
            )
        return "\n".join(lines) + "\n"

    def grad_errors(self) -> list:
        return [r.grad_phi_err for r in self.rows if r.status == "ok"]


def _centered_values(space, target, psi_field, offset=0.0):
    w = nu_weights(space, target)
    vals = psi_field.eval(space.nodes) + offset
    return vals - np.sum(w * vals), w


def convergence_study(space: GaussianSpace, target: ScalarTarget, scheme: str,
                      n_list, config: SolveConfig,
                      reference: str = "raw") -> StudyTable:
    """Solve the regularized problems along n_list and tabulate errors.

    scheme: "ou" or "truncation"; reference: "raw" (solve the raw target)
    or "finest" (solve at max(n_list) and compare the remaining rows to it).
    Rows whose solve fails are flagged and the study continues.
    """
    if scheme not in ("ou", "truncation"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if reference not in ("raw", "finest"):
        raise ValueError(f"unknown reference {reference!r}")
    n_list = sorted(int(n) for n in n_list)
    if not n_list:
        raise ValueError("n_list must be nonempty")

    def regularize(n):
        if scheme == "ou":
            return smooth_target(space, target, n)
        return truncate_density(space, target, n)

    def solve_pair(tgt, warm=None):
        res = solve(space, tgt, config, initial=warm)
        if not res.converged:
            raise MongelabError("solver did not converge")
        dual = fit_dual(space, tgt, conjugate(space, res.phi, grid=space.nodes))
        return res, dual

    # rows warm-start from the reference: regularized targets are small
    # perturbations of it, and cold starts can stall on cutoff ramps
    if reference == "raw":
        ref_res, ref_dual = solve_pair(target)
        ref_label = "raw"
        row_ns = n_list
    else:
        # the raw solution, when obtainable, warms the finest solve too
        try:
            raw_phi = solve(space, target, config).phi
        except MongelabError:
            raw_phi = None
        ref_res, ref_dual = solve_pair(regularize(n_list[-1]), warm=raw_phi)
        ref_label = f"finest(n={n_list[-1]})"
        row_ns = n_list[:-1]

    ref_grad = ref_res.phi.grad(space.nodes)
    ref_psi_centered, w_nu = _centered_values(space, target, ref_dual.as_field(),
                                              ref_dual.fit_offset)

    table = StudyTable(scheme=scheme, reference=ref_label)
    for n in sorted(row_ns, reverse=True):
        try:
            tgt_n = regularize(n)
            res_n, dual_n = solve_pair(tgt_n, warm=ref_res.phi)
            g = res_n.phi.grad(space.nodes)
            grad_err = float(np.sqrt(np.sum(space.weights * np.sum((g - ref_grad) ** 2, axis=1))))
            psi_centered, _ = _centered_values(space, target, dual_n.as_field(),
                                               dual_n.fit_offset)
            psi_err = float(np.sum(w_nu * np.abs(psi_centered - ref_psi_centered)))
            if scheme == "ou":
                sm = dual_n.as_field().semigroup(1.0 / n)
                sm_centered, _ = _centered_values(space, target, sm, dual_n.fit_offset)
                psi_err_sm = float(np.sum(w_nu * np.abs(sm_centered - ref_psi_centered)))
            else:
                psi_err_sm = float("nan")
            table.rows.append(StudyRow(n, grad_err, psi_err, psi_err_sm,
                                       res_n.wasserstein2_sq))
        except MongelabError as exc:
            table.rows.append(StudyRow(n, float("nan"), float("nan"), float("nan"),
                                       float("nan"), status=f"failed: {exc}"))
    table.rows.sort(key=lambda r: r.n)
    return table
