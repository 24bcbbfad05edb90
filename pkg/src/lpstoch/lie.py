"""Lie group and Lie algebra kernels for SO(3), S^1, the trivial group and
direct products.

Algebra elements are plain arrays of basis coordinates with shape ``(..., d)``;
leading axes are batch axes and every operation broadcasts over them.  Group
elements are stored per group:

* ``SO3``: rotation matrices, shape ``(..., 3, 3)``
* ``Circle``: angle in radians reduced to ``[0, 2*pi)``, shape ``(...,)``
* ``TrivialGroup``: empty array, shape ``(..., 0)``
* ``ProductGroup``: tuple of factor elements

The bracket convention is ``ad(xi, eta)^a = C^a_bc xi^b eta^c`` and the
coadjoint action is the dual map, ``<coad(xi, mu), eta> = <mu, ad(xi, eta)>``.
For SO(3) with the hat identification this gives ``ad(xi, eta) = xi x eta``
and ``coad(xi, mu) = mu x xi``, which is the sign of the rigid body equation
``dPi = Pi x dOmega``.
"""
from __future__ import annotations

import numpy as np

ORTHO_TOL = 1e-10


def hat(v):
    """Skew matrix with ``hat(v) @ w == cross(v, w)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m):
    """Inverse of :func:`hat` on skew matrices."""
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def levi_civita():
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    return eps


def rodrigues(v):
    """Rotation matrix ``expm(hat(v))``, stable for small angles."""
    v = np.asarray(v, dtype=float)
    theta2 = np.sum(v * v, axis=-1)
    theta = np.sqrt(theta2)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0 + theta2**2 / 120.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0 + theta2**2 / 720.0, (1.0 - np.cos(safe)) / safe**2)
    k = hat(v)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def rotation_log(R):
    """Rotation vector ``w`` with ``rodrigues(w) == R`` and ``|w| <= pi``."""
    R = np.asarray(R, dtype=float)
    cos = np.clip((np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    w = vee(R - np.swapaxes(R, -1, -2)) / 2.0
    small = theta < 1e-4
    sin = np.where(small, 1.0, np.sin(theta))
    factor = np.where(small, 1.0 + theta**2 / 6.0 + 7.0 * theta**4 / 360.0, theta / sin)
    out = factor[..., None] * w
    near_pi = theta > np.pi - 1e-6
    if np.any(near_pi):
        # sin(theta) ~ 0: recover the axis from the symmetric part instead
        S = (R + np.eye(3)) / 2.0
        diag = np.diagonal(S, axis1=-2, axis2=-1)
        i = np.argmax(diag, axis=-1)
        col = np.take_along_axis(S, i[..., None, None], axis=-1)[..., 0]
        axis = col / np.linalg.norm(col, axis=-1, keepdims=True)
        sign = np.where(np.sum(axis * w, axis=-1) < 0, -1.0, 1.0)
        out = np.where(near_pi[..., None], (sign * theta)[..., None] * axis, out)
    return out


def orthogonality_drift(R):
    """``max |R^T R - I|`` over the trailing matrix axes."""
    R = np.asarray(R, dtype=float)
    err = np.swapaxes(R, -1, -2) @ R - np.eye(3)
    return np.max(np.abs(err), axis=(-2, -1))


def polar_project(R):
    """Nearest rotation matrix in Frobenius norm."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    # det(Q) = -1 only for reflections, which never occur near SO(3)
    return Q


def rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class LieGroup:
    """Common interface.  Subclasses set ``dim`` and ``structure``."""

    dim: int
    structure: np.ndarray  # C[a, b, c] = C^a_bc
    name: str = "group"
    abelian: bool = False

    def identity(self, batch_shape=()):
        raise NotImplementedError

    def exp(self, xi):
        raise NotImplementedError

    def log(self, g):
        raise NotImplementedError

    def mul(self, g, h):
        raise NotImplementedError

    def inv(self, g):
        raise NotImplementedError

    def Ad(self, g, xi):
        raise NotImplementedError

    def Ad_star(self, g, mu):
        """``Ad*_g mu`` defined by ``<Ad*_g mu, xi> = <mu, Ad_g xi>``."""
        raise NotImplementedError

    def normalize(self, g):
        return g

    def flatten(self, g):
        """Group element as a ``(..., m)`` array of reals (for export)."""
        raise NotImplementedError

    def unflatten(self, a):
        raise NotImplementedError

    def ad(self, xi, eta):
        return np.einsum("abc,...b,...c->...a", self.structure, xi, eta)

    def coad(self, xi, mu):
        return np.einsum("abc,...a,...b->...c", self.structure, mu, xi)

    def retract(self, g, xi):
        """Right-multiplicative update ``g * exp(xi)``."""
        return self.normalize(self.mul(g, self.exp(xi)))

    def is_valid(self, g, tol=ORTHO_TOL):
        return True


class SO3(LieGroup):
    dim = 3
    name = "SO(3)"

    def __init__(self):
        self.structure = levi_civita()

    def identity(self, batch_shape=()):
        return np.broadcast_to(np.eye(3), tuple(batch_shape) + (3, 3)).copy()

    def exp(self, xi):
        return rodrigues(xi)

    def log(self, g):
        return rotation_log(g)

    def mul(self, g, h):
        return g @ h

    def inv(self, g):
        return np.swapaxes(g, -1, -2)

    def Ad(self, g, xi):
        return np.einsum("...ij,...j->...i", g, xi)

    def Ad_star(self, g, mu):
        return np.einsum("...ji,...j->...i", g, mu)

    def ad(self, xi, eta):
        return np.cross(xi, eta)

    def coad(self, xi, mu):
        return np.cross(mu, xi)

    def normalize(self, g):
        drift = orthogonality_drift(g)
        bad = drift > ORTHO_TOL
        if not np.any(bad):
            return g
        g = np.array(g, copy=True)
        g[bad] = polar_project(g[bad])
        return g

    def flatten(self, g):
        return np.reshape(g, np.shape(g)[:-2] + (9,))

    def unflatten(self, a):
        return np.reshape(a, np.shape(a)[:-1] + (3, 3))

    def is_valid(self, g, tol=ORTHO_TOL):
        return bool(np.all(orthogonality_drift(g) <= tol) and np.all(np.linalg.det(g) > 0))


class Circle(LieGroup):
    """S^1 with angle coordinates; algebra coordinate is the angular rate."""

    dim = 1
    name = "S1"
    abelian = True

    def __init__(self):
        self.structure = np.zeros((1, 1, 1))

    @staticmethod
    def _wrap(angle):
        return np.mod(angle, 2.0 * np.pi)

    def identity(self, batch_shape=()):
        return np.zeros(tuple(batch_shape))

    def exp(self, xi):
        return self._wrap(np.asarray(xi, dtype=float)[..., 0])

    def log(self, g):
        a = np.mod(np.asarray(g, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
        return a[..., None]

    def mul(self, g, h):
        return self._wrap(g + h)

    def inv(self, g):
        return self._wrap(-g)

    def Ad(self, g, xi):
        return np.broadcast_to(xi, np.broadcast_shapes(np.shape(xi), np.shape(g) + (1,)))

    def Ad_star(self, g, mu):
        return np.broadcast_to(mu, np.broadcast_shapes(np.shape(mu), np.shape(g) + (1,)))

    def ad(self, xi, eta):
        return np.zeros(np.broadcast_shapes(np.shape(xi), np.shape(eta)))

    def coad(self, xi, mu):
        return np.zeros(np.broadcast_shapes(np.shape(xi), np.shape(mu)))

    def flatten(self, g):
        return np.asarray(g)[..., None]

    def unflatten(self, a):
        return np.asarray(a)[..., 0]

    def is_valid(self, g, tol=ORTHO_TOL):
        return bool(np.all(np.isfinite(g)))


class TrivialGroup(LieGroup):
    """The one-element group.  Elements are empty arrays carrying batch shape."""

    dim = 0
    name = "trivial"
    abelian = True

    def __init__(self):
        self.structure = np.zeros((0, 0, 0))

    def identity(self, batch_shape=()):
        return np.zeros(tuple(batch_shape) + (0,))

    def exp(self, xi):
        return np.zeros(np.shape(xi)[:-1] + (0,))

    def log(self, g):
        return np.zeros(np.shape(g)[:-1] + (0,))

    def mul(self, g, h):
        return np.zeros(np.broadcast_shapes(np.shape(g), np.shape(h)))

    def inv(self, g):
        return g

    def Ad(self, g, xi):
        return xi

    def Ad_star(self, g, mu):
        return mu

    def flatten(self, g):
        return np.asarray(g)

    def unflatten(self, a):
        return np.asarray(a)


class ProductGroup(LieGroup):
    """Direct product; algebra coordinates are concatenated factor by factor."""

    def __init__(self, factors):
        self.factors = tuple(factors)
        dims = [f.dim for f in self.factors]
        self.dim = int(sum(dims))
        self._slices = []
        start = 0
        for d in dims:
            self._slices.append(slice(start, start + d))
            start += d
        C = np.zeros((self.dim,) * 3)
        for f, s in zip(self.factors, self._slices):
            C[s, s, s] = f.structure
        self.structure = C
        self.abelian = all(f.abelian for f in self.factors)
        self.name = " x ".join(f.name for f in self.factors)
        self._flat_dims = [f.flatten(f.identity()).shape[-1] for f in self.factors]

    def _split(self, v):
        return [v[..., s] for s in self._slices]

    def identity(self, batch_shape=()):
        return tuple(f.identity(batch_shape) for f in self.factors)

    def exp(self, xi):
        return tuple(f.exp(x) for f, x in zip(self.factors, self._split(xi)))

    def log(self, g):
        return np.concatenate([f.log(c) for f, c in zip(self.factors, g)], axis=-1)

    def mul(self, g, h):
        return tuple(f.mul(a, b) for f, a, b in zip(self.factors, g, h))

    def inv(self, g):
        return tuple(f.inv(a) for f, a in zip(self.factors, g))

    def Ad(self, g, xi):
        parts = [f.Ad(c, x) for f, c, x in zip(self.factors, g, self._split(xi))]
        return np.concatenate(parts, axis=-1)

    def Ad_star(self, g, mu):
        parts = [f.Ad_star(c, m) for f, c, m in zip(self.factors, g, self._split(mu))]
        return np.concatenate(parts, axis=-1)

    def ad(self, xi, eta):
        parts = [f.ad(a, b) for f, a, b in zip(self.factors, self._split(xi), self._split(eta))]
        return np.concatenate(parts, axis=-1)

    def coad(self, xi, mu):
        parts = [f.coad(a, b) for f, a, b in zip(self.factors, self._split(xi), self._split(mu))]
        return np.concatenate(parts, axis=-1)

    def normalize(self, g):
        return tuple(f.normalize(c) for f, c in zip(self.factors, g))

    def flatten(self, g):
        return np.concatenate([f.flatten(c) for f, c in zip(self.factors, g)], axis=-1)

    def unflatten(self, a):
        out, start = [], 0
        for f, m in zip(self.factors, self._flat_dims):
            out.append(f.unflatten(a[..., start:start + m]))
            start += m
        return tuple(out)

    def is_valid(self, g, tol=ORTHO_TOL):
        return all(f.is_valid(c, tol) for f, c in zip(self.factors, g))


def check_structure_constants(C, tol=1e-12):
    """Return ``(antisymmetry_error, jacobi_error)`` for a structure tensor."""
    C = np.asarray(C, dtype=float)
    anti = np.max(np.abs(C + np.swapaxes(C, 1, 2))) if C.size else 0.0
    # sum_e C^e_bc C^a_ed + C^e_cd C^a_eb + C^e_db C^a_ec
    jac = (
        np.einsum("ebc,aed->abcd", C, C)
        + np.einsum("ecd,aeb->abcd", C, C)
        + np.einsum("edb,aec->abcd", C, C)
    )
    jacobi = np.max(np.abs(jac)) if jac.size else 0.0
    return float(anti), float(jacobi)
