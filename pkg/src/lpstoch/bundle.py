"""Principal connection data on a trivialized bundle ``U x G``.

Index conventions (all arrays carry leading batch axes):

* ``A(x)[..., a, alpha]``         = A^a_alpha(x), shape ``(..., d, r)``
* ``dA(x)[..., a, alpha, beta]``  = dA^a_alpha / dx^beta, shape ``(..., d, r, r)``
* ``curvature(...)[..., b, alpha, beta]`` = B^b_{alpha beta}
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

FD_STEP = 1e-5


def central_jacobian(f, x, step=FD_STEP):
    """Central-difference Jacobian; the new trailing axis indexes ``x``."""
    x = np.asarray(x, dtype=float)
    r = x.shape[-1]
    cols = []
    for beta in range(r):
        e = np.zeros(r)
        e[beta] = step
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * step))
    if not cols:
        f0 = np.asarray(f(x))
        return np.zeros(f0.shape + (0,))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class Connection:
    """Connection coefficients ``A^a_alpha(x)`` with optional analytic derivative.

    Without ``derivative`` the x-derivative is taken by central differences
    with step ``fd_step``.
    """

    d: int
    r: int
    coeffs: Callable[[np.ndarray], np.ndarray]
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fd_step: float = FD_STEP

    def A(self, x):
        return np.asarray(self.coeffs(np.asarray(x, dtype=float)), dtype=float)

    def dA(self, x):
        x = np.asarray(x, dtype=float)
        if self.derivative is not None:
            return np.asarray(self.derivative(x), dtype=float)
        return central_jacobian(self.coeffs, x, self.fd_step)

    @property
    def is_analytic(self):
        return self.derivative is not None

    @classmethod
    def zero(cls, d, r):
        """The trivial (flat, vanishing) connection."""

        def coeffs(x):
            return np.zeros(np.shape(x)[:-1] + (d, r))

        def derivative(x):
            return np.zeros(np.shape(x)[:-1] + (d, r, r))

        return cls(d, r, coeffs, derivative)

    @classmethod
    def constant(cls, matrix):
        M = np.asarray(matrix, dtype=float)
        d, r = M.shape

        def coeffs(x):
            return np.broadcast_to(M, np.shape(x)[:-1] + (d, r))

        def derivative(x):
            return np.zeros(np.shape(x)[:-1] + (d, r, r))

        return cls(d, r, coeffs, derivative)


def curvature(conn, C, x):
    """Local curvature ``B^b_ab = d_a A^b_b - d_b A^b_a - C^b_cd A^c_a A^d_b``.

    The result is antisymmetrized explicitly so that ``B[..., a, b] ==
    -B[..., b, a]`` holds bit for bit.
    """
    dA = conn.dA(x)
    A = conn.A(x)
    # d_alpha A^b_beta = dA[b, beta, alpha]
    full = np.swapaxes(dA, -1, -2) - dA
    if A.shape[-2] and A.shape[-1]:
        full = full - np.einsum("bcd,...ca,...de->...bae", np.asarray(C), A, A)
    return 0.5 * (full - np.swapaxes(full, -1, -2))


def xi_bar_increment(conn, x, dx, dxi):
    """``dxibar^a = dxi^a + A^a_alpha(x) dx^alpha``."""
    return np.asarray(dxi, dtype=float) + np.einsum("...ar,...r->...a", conn.A(x), dx)


def coadjoint_covariant_increment(C, conn, x, mu, dxibar, dx):
    """``dmu_b = mu_a C^a_db (dxibar^d - A^d_alpha dx^alpha)``."""
    w = np.asarray(dxibar, dtype=float) - np.einsum("...ar,...r->...a", conn.A(x), dx)
    return np.einsum("adb,...a,...d->...b", np.asarray(C), mu, w)
