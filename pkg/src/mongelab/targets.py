"""Target log-densities f defining dnu = e^{-f} dmu / c against the standard Gaussian.

Each constructor returns a ScalarTarget with consistent eval/grad/hess
evaluators.  Construction runs a finite-difference self-check of the
gradient on a small probe grid and verifies Hessian symmetry.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .hermite import as_points

_PROBE_SEED = 12345
_FD_STEP = 1e-5


@dataclass(frozen=True)
class ScalarTarget:
    """f with evaluators; kind tags: gaussian, quartic-well, mixture, tabulated-1d, ..."""

    dim: int
    kind: str
    params: dict
    eval: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]

    def shifted(self, offset: float) -> "ScalarTarget":
        """Target with f + offset (same measure, different normalizer)."""
        base_eval = self.eval
        return replace(
            self,
            params={**self.params, "offset": self.params.get("offset", 0.0) + offset},
            eval=lambda x: base_eval(x) + offset,
        )


def normalized(space, target: ScalarTarget) -> ScalarTarget:
    """Shift f so that E_mu[e^{-f}] = 1 under the space's quadrature."""
    from .gaussian import log_normalizer

    return target.shifted(log_normalizer(space, target))


def _probe_points(dim: int) -> np.ndarray:
    rng = np.random.default_rng(_PROBE_SEED)
    return 0.8 * rng.standard_normal((6, dim))


def check_consistency(target: ScalarTarget) -> None:
    """Gradient-vs-finite-difference and Hessian-symmetry self-check."""
    _self_check(target)


def _self_check(target: ScalarTarget) -> None:
    pts = _probe_points(target.dim)
    grad = target.grad(pts)
    for k in range(target.dim):
        step = np.zeros(target.dim)
        step[k] = _FD_STEP
        fd = (target.eval(pts + step) - target.eval(pts - step)) / (2 * _FD_STEP)
        err = np.abs(fd - grad[:, k])
        scale = np.maximum(np.abs(grad[:, k]), 1e-3)
        if np.any(err / scale > 1e-5):
            raise ValueError(f"{target.kind}: gradient does not match finite differences")
    hess = target.hess(pts)
    if np.max(np.abs(hess - np.transpose(hess, (0, 2, 1)))) > 1e-12:
        raise ValueError(f"{target.kind}: Hessian not symmetric")


def gaussian_target(mean, sigma, dim: int | None = None) -> ScalarTarget:
    """f(x) = sum_i [(x_i - m_i)^2 / (2 s_i^2) - x_i^2 / 2], so nu = N(m, diag(s^2)).

    The normalizer is E[e^{-f}] = prod_i s_i.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = dim if dim is not None else mean.shape[0]
    mean = np.broadcast_to(mean, (d,)).copy()
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (d,)).copy()
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    inv2 = 1.0 / sigma**2

    def f(x):
        pts = as_points(x, d)
        return 0.5 * np.sum((pts - mean) ** 2 * inv2 - pts**2, axis=1)

    def grad(x):
        pts = as_points(x, d)
        return (pts - mean) * inv2 - pts

    def hess(x):
        pts = as_points(x, d)
        h = np.zeros((pts.shape[0], d, d))
        h[:, np.arange(d), np.arange(d)] = inv2 - 1.0
        return h

    target = ScalarTarget(d, "gaussian", {"mean": mean.tolist(), "sigma": sigma.tolist()}, f, grad, hess)
    _self_check(target)
    return target


def quartic_well_target(a: float, b: float, dim: int = 1) -> ScalarTarget:
    """f(x) = sum_i (a x_i^4 + b x_i^2); requires a > 0 for integrability."""
    if a <= 0:
        raise ValueError("quartic coefficient a must be > 0")
    d = dim

    def f(x):
        pts = as_points(x, d)
        return np.sum(a * pts**4 + b * pts**2, axis=1)

    def grad(x):
        pts = as_points(x, d)
        return 4 * a * pts**3 + 2 * b * pts

    def hess(x):
        pts = as_points(x, d)
        h = np.zeros((pts.shape[0], d, d))
        h[:, np.arange(d), np.arange(d)] = 12 * a * pts**2 + 2 * b
        return h

    target = ScalarTarget(d, "quartic-well", {"a": a, "b": b}, f, grad, hess)
    _self_check(target)
    return target


def mixture_target(weights, means, sigmas, dim: int = 1) -> ScalarTarget:
    """e^{-f} = sum_k pi_k prod_i N(x_i; m_ki, s_ki^2) / N(x_i; 0, 1).

    Component ratios are normalized (E[e^{-f_k}] = 1), so nu is the
    Gaussian mixture with the given weights and E[e^{-f}] = 1.
    """
    pi = np.asarray(weights, dtype=float).reshape(-1)
    if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-12:
        raise ValueError("mixture weights must be positive and sum to 1")
    n_comp = pi.shape[0]
    d = dim
    means = np.broadcast_to(np.asarray(means, dtype=float).reshape(n_comp, -1), (n_comp, d)).copy()
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float).reshape(n_comp, -1), (n_comp, d)).copy()
    if np.any(sigmas <= 0):
        raise ValueError("mixture sigmas must be positive")
    inv2 = 1.0 / sigmas**2
    log_norm = np.sum(np.log(sigmas), axis=1)  # per-component E[e^{-f_k - log_norm_k}] = 1

    def _component_f(pts):
        # (N, K): f_k(x) including the normalizing log sigma term
        diff = pts[:, None, :] - means[None, :, :]
        return 0.5 * np.sum(diff**2 * inv2[None] - pts[:, None, :] ** 2, axis=2) + log_norm[None, :]

    def _responsibilities(pts):
        logs = np.log(pi)[None, :] - _component_f(pts)
        shift = logs.max(axis=1, keepdims=True)
        r = np.exp(logs - shift)
        total = r.sum(axis=1, keepdims=True)
        return r / total, shift[:, 0] + np.log(total[:, 0])

    def f(x):
        pts = as_points(x, d)
        _, log_s = _responsibilities(pts)
        return -log_s

    def _component_grads(pts):
        # (N, K, d): grad f_k
        return (pts[:, None, :] - means[None, :, :]) * inv2[None] - pts[:, None, :]

    def grad(x):
        pts = as_points(x, d)
        r, _ = _responsibilities(pts)
        return np.einsum("nk,nkd->nd", r, _component_grads(pts))

    def hess(x):
        pts = as_points(x, d)
        r, _ = _responsibilities(pts)
        gk = _component_grads(pts)
        g = np.einsum("nk,nkd->nd", r, gk)
        h = np.zeros((pts.shape[0], d, d))
        diag = np.einsum("nk,kd->nd", r, inv2 - 1.0)
        h[:, np.arange(d), np.arange(d)] = diag
        h -= np.einsum("nk,nkd,nke->nde", r, gk, gk)
        h += np.einsum("nd,ne->nde", g, g)
        return h

    target = ScalarTarget(
        d,
        "mixture",
        {"weights": pi.tolist(), "means": means.tolist(), "sigmas": sigmas.tolist()},
        f,
        grad,
        hess,
    )
    _self_check(target)
    return target


def tabulated_target_1d(xs, fs) -> ScalarTarget:
    """1d target from samples of f, interpolated by a cubic spline.

    The table should cover the quadrature support; the spline extrapolates
    cubically beyond it.
    """
    xs = np.asarray(xs, dtype=float)
    fs = np.asarray(fs, dtype=float)
    spline = CubicSpline(xs, fs)
    d1 = spline.derivative(1)
    d2 = spline.derivative(2)

    def f(x):
        return spline(as_points(x, 1)[:, 0])

    def grad(x):
        return d1(as_points(x, 1)[:, 0]).reshape(-1, 1)

    def hess(x):
        return d2(as_points(x, 1)[:, 0]).reshape(-1, 1, 1)

    target = ScalarTarget(
        1,
        "tabulated-1d",
        {"x_min": float(xs[0]), "x_max": float(xs[-1]), "points": int(xs.shape[0])},
        f,
        grad,
        hess,
    )
    _self_check(target)
    return target
