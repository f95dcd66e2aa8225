"""Probabilists' Hermite polynomials and tensor-product polynomial bases.

He_0 = 1, He_1 = x, He_{n+1}(x) = x He_n(x) - n He_{n-1}(x).  Under the
standard Gaussian they satisfy E[He_m He_n] = n! delta_mn, and every
derivative is again a basis element:

    d^o/dx^o He_n = n (n-1) ... (n-o+1) He_{n-o}.

A tensor basis element He_alpha(x) = prod_j He_{alpha_j}(x_j) is an
eigenfunction of the number operator L = <x, grad> - laplace with
eigenvalue |alpha| = sum_j alpha_j, which makes L and the associated
semigroup diagonal on coefficient vectors.
"""
from __future__ import annotations

import itertools

import numpy as np


def as_points(x, dim: int) -> np.ndarray:
    """Promote a single d-vector (or scalar when d=1) to an (N, d) array."""
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(1, dim) if pts.shape[0] == dim else pts.reshape(-1, 1)
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {np.shape(x)}")
    return pts


def hermite_values(x: np.ndarray, degree: int) -> np.ndarray:
    """He_n(x) for n = 0..degree; output shape (degree+1,) + x.shape."""
    x = np.asarray(x, dtype=float)
    out = np.empty((degree + 1,) + x.shape)
    out[0] = 1.0
    if degree >= 1:
        out[1] = x
    for n in range(1, degree):
        out[n + 1] = x * out[n] - n * out[n - 1]
    return out


def multi_indices(dim: int, degree: int) -> list[tuple[int, ...]]:
    """All alpha with 1 <= |alpha| <= degree, ordered by (|alpha|, alpha)."""
    if dim < 1 or degree < 1:
        raise ValueError("dim and degree must be >= 1")
    idx = [
        a
        for a in itertools.product(range(degree + 1), repeat=dim)
        if 1 <= sum(a) <= degree
    ]
    idx.sort(key=lambda a: (sum(a), a))
    return idx


def _falling(n: int, o: int) -> float:
    out = 1.0
    for k in range(o):
        out *= n - k
    return out


class HermiteBasis:
    """Tensor Hermite basis He_alpha, 1 <= |alpha| <= degree (no constant term).

    Tables evaluated at a batch of points feed both generic potential
    evaluation and the solvers' cached per-node design matrices.
    """

    def __init__(self, dim: int, degree: int):
        self.dim = dim
        self.degree = degree
        self.indices = multi_indices(dim, degree)
        self.size = len(self.indices)
        self.ou_eigenvalues = np.array([float(sum(a)) for a in self.indices])

    def _coord_tables(self, points: np.ndarray, max_order: int) -> list[np.ndarray]:
        """tabs[o][n, j, :] = d^o He_n at coordinate j of each point."""
        base = np.transpose(hermite_values(points, self.degree), (0, 2, 1))
        tabs = [base]
        for o in range(1, max_order + 1):
            t = np.zeros_like(base)
            for n in range(o, self.degree + 1):
                t[n] = _falling(n, o) * base[n - o]
            tabs.append(t)
        return tabs

    @staticmethod
    def _product(tabs, alpha, orders) -> np.ndarray:
        out = None
        for j, (n, o) in enumerate(zip(alpha, orders)):
            col = tabs[o][n, j]
            out = col.copy() if out is None else out * col
        return out

    def value_table(self, points: np.ndarray) -> np.ndarray:
        """(size, N) array of He_alpha(x_n)."""
        points = as_points(points, self.dim)
        tabs = self._coord_tables(points, 0)
        zero = (0,) * self.dim
        return np.stack([self._product(tabs, a, zero) for a in self.indices])

    def grad_table(self, points: np.ndarray) -> np.ndarray:
        """(size, d, N) array of d_k He_alpha(x_n)."""
        points = as_points(points, self.dim)
        n_pts = points.shape[0]
        tabs = self._coord_tables(points, 1)
        out = np.zeros((self.size, self.dim, n_pts))
        for a, alpha in enumerate(self.indices):
            for k in range(self.dim):
                if alpha[k] == 0:
                    continue
                orders = [0] * self.dim
                orders[k] = 1
                out[a, k] = self._product(tabs, alpha, orders)
        return out

    def hess_table(self, points: np.ndarray) -> np.ndarray:
        """(size, d, d, N) array of d_i d_j He_alpha(x_n)."""
        points = as_points(points, self.dim)
        n_pts = points.shape[0]
        tabs = self._coord_tables(points, 2)
        out = np.zeros((self.size, self.dim, self.dim, n_pts))
        for a, alpha in enumerate(self.indices):
            for i in range(self.dim):
                for j in range(i, self.dim):
                    orders = [0] * self.dim
                    orders[i] += 1
                    orders[j] += 1
                    if any(alpha[k] < orders[k] for k in range(self.dim)):
                        continue
                    v = self._product(tabs, alpha, orders)
                    out[a, i, j] = v
                    if i != j:
                        out[a, j, i] = v
        return out

    def third_table(self, points: np.ndarray) -> np.ndarray:
        """(size, d, d, d, N) array of d_i d_j d_k He_alpha(x_n)."""
        points = as_points(points, self.dim)
        n_pts = points.shape[0]
        tabs = self._coord_tables(points, 3)
        out = np.zeros((self.size, self.dim, self.dim, self.dim, n_pts))
        for a, alpha in enumerate(self.indices):
            for i in range(self.dim):
                for j in range(i, self.dim):
                    for k in range(j, self.dim):
                        orders = [0] * self.dim
                        orders[i] += 1
                        orders[j] += 1
                        orders[k] += 1
                        if any(alpha[m] < orders[m] for m in range(self.dim)):
                            continue
                        v = self._product(tabs, alpha, orders)
                        for perm in {(i, j, k), (i, k, j), (j, i, k),
                                     (j, k, i), (k, i, j), (k, j, i)}:
                            out[(a,) + perm] = v
        return out
