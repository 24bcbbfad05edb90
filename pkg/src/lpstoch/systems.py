"""Bundled example systems, each available in reduced and unreduced form.

* ``rotor``: rigid body carrying a symmetric rotor about its third axis,
  ``Q = S^1 x SO(3)`` with shape coordinate ``theta`` and trivializing
  connection (``A = 0``).
* ``free-rigid-body``: ``Q = G = SO(3)``; the reduced system is purely vertical.
* ``charged-particle``: Kaluza-Klein particle on ``R^3 x S^1``; the connection
  is the magnetic vector potential and its curvature the magnetic field.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Callable, Optional

import numpy as np

from .bundle import Connection
from .lie import SO3, Circle, TrivialGroup, levi_civita
from .mechanics import (
    NoiseFields,
    ReducedSpec,
    SpecError,
    UnreducedSpec,
    reduced_from_velocities,
)


def _zeros(x, *tail):
    return np.zeros(np.shape(x)[:-1] + tail)


def _const(value):
    value = np.asarray(value, dtype=float)
    return lambda x: np.broadcast_to(value, np.shape(x)[:-1] + value.shape).copy()


@dataclass(frozen=True)
class SystemPair:
    """Matching unreduced/reduced specs together with a default initial state."""

    name: str
    unreduced: UnreducedSpec
    reduced: ReducedSpec
    x0: np.ndarray
    u0: np.ndarray
    zbar0: np.ndarray
    params: object = None

    @property
    def k(self):
        return self.reduced.k

    def initial_state(self, batch_shape=()):
        shape = tuple(batch_shape)
        x = np.broadcast_to(self.x0, shape + self.x0.shape).copy()
        u = np.broadcast_to(self.u0, shape + self.u0.shape).copy()
        z = np.broadcast_to(self.zbar0, shape + self.zbar0.shape).copy()
        return reduced_from_velocities(self.reduced, x, u, z)


# ------------------------------------------------------------------ rotor

ROTOR_NOISE = ("none", "linear", "general")


@dataclass(frozen=True)
class RotorParams:
    I: tuple = (3.0, 2.0, 1.0)
    K: tuple = (1.0, 1.0, 0.5)
    beta: tuple = ((0.1, 0.0, 0.0), (0.0, 0.1, 0.0), (0.0, 0.0, 0.1))
    # rotor noise: "none" (L_i = V_i = 0), "linear" (L_i = theta, V_i = 0),
    # "general" (L_i = a sin(theta + i), V_i = b cos(theta + i))
    rotor_noise: str = "general"
    l_amp: float = 0.1
    v_amp: float = 0.05

    def validate(self):
        I1, I2, I3 = self.I
        K1, K2, K3 = self.K
        if not I1 > I2 > I3 > 0:
            raise SpecError("rotor inertia must satisfy I1 > I2 > I3 > 0")
        if K1 != K2 or not K1 > 0 or not K3 > 0:
            raise SpecError("rotor inertia must satisfy K1 = K2 > 0 and K3 > 0")
        if np.shape(self.beta) != (3, 3):
            raise SpecError("beta must list three algebra vectors")
        if self.rotor_noise not in ROTOR_NOISE:
            raise SpecError(f"rotor_noise must be one of {ROTOR_NOISE}")


def _rotor_noise(p, d, beta):
    k = 3
    phase = np.arange(k, dtype=float)
    if p.rotor_noise == "none":
        return NoiseFields(
            k, 1, d, lambda x: _zeros(x, k), lambda x: _zeros(x, k, 1), _const(beta),
            lambda x: _zeros(x, k, 1), lambda x: _zeros(x, k, 1, 1), lambda x: _zeros(x, k, d, 1),
        )
    if p.rotor_noise == "linear":
        return NoiseFields(
            k, 1, d,
            lambda x: np.repeat(x, k, axis=-1),
            lambda x: _zeros(x, k, 1),
            _const(beta),
            lambda x: np.ones(np.shape(x)[:-1] + (k, 1)),
            lambda x: _zeros(x, k, 1, 1),
            lambda x: _zeros(x, k, d, 1),
        )
    a, b = p.l_amp, p.v_amp
    return NoiseFields(
        k, 1, d,
        lambda x: a * np.sin(x + phase),
        lambda x: (b * np.cos(x + phase))[..., None],
        _const(beta),
        lambda x: (a * np.cos(x + phase))[..., None],
        lambda x: (-b * np.sin(x + phase))[..., None, None],
        lambda x: _zeros(x, k, d, 1),
    )


def make_rotor(params=RotorParams()):
    """Return ``(unreduced, reduced)`` specs for the rigid body with rotor."""
    params.validate()
    I1, I2, I3 = (float(v) for v in params.I)
    K1, K2, K3 = (float(v) for v in params.K)
    lam1, lam2 = I1 + K1, I2 + K2
    G = SO3()
    beta = np.asarray(params.beta, dtype=float)

    def ell(x, u, z):
        s = z[..., 2] + u[..., 0]
        return 0.5 * (lam1 * z[..., 0] ** 2 + lam2 * z[..., 1] ** 2 + I3 * z[..., 2] ** 2 + K3 * s ** 2)

    def ell_grad(x, u, z):
        s = z[..., 2] + u[..., 0]
        lz = np.stack([lam1 * z[..., 0], lam2 * z[..., 1], I3 * z[..., 2] + K3 * s], axis=-1)
        return np.zeros(np.shape(x)), (K3 * s)[..., None], lz

    def legendre_inv(x, y, mu):
        z3 = (mu[..., 2] - y[..., 0]) / I3
        z = np.stack([mu[..., 0] / lam1, mu[..., 1] / lam2, z3], axis=-1)
        u = (y[..., 0] / K3 - z3)[..., None]
        return u, z

    noise = _rotor_noise(params, 3, beta)
    conn = Connection.zero(3, 1)
    reduced = ReducedSpec(1, G, conn, ell, ell_grad, noise, legendre_inv, name="rotor")
    # the connection is trivializing, so L(theta, v, xi) = l(theta, v, xi) and betabar = beta
    unreduced = UnreducedSpec(1, G, ell, ell_grad, noise, legendre_inv, name="rotor")
    return unreduced, reduced


def rotor_system(params=RotorParams(), theta0=0.0, u0=0.6, sigma0=(0.5, -0.4, 0.3)):
    un, red = make_rotor(params)
    return SystemPair(
        "rotor", un, red, np.array([theta0], dtype=float), np.array([u0], dtype=float),
        np.asarray(sigma0, dtype=float), params,
    )


# ------------------------------------------------------- free rigid body


@dataclass(frozen=True)
class RigidBodyParams:
    I: tuple = (3.0, 2.0, 1.0)
    beta: tuple = ((0.1, 0.0, 0.0), (0.0, 0.1, 0.0), (0.0, 0.0, 0.1))

    def validate(self):
        if len(self.I) != 3 or not all(v > 0 for v in self.I):
            raise SpecError("inertia must be three positive principal moments")
        if np.ndim(self.beta) != 2 or np.shape(self.beta)[1] != 3:
            raise SpecError("beta must be a list of algebra vectors")


def make_free_rigid_body(params=RigidBodyParams()):
    """Return ``(unreduced, reduced)`` specs for ``Q = G = SO(3)``."""
    params.validate()
    inertia = np.asarray(params.I, dtype=float)
    beta = np.asarray(params.beta, dtype=float)
    k = beta.shape[0]
    G = SO3()

    def ell(x, u, z):
        return 0.5 * np.sum(inertia * z * z, axis=-1)

    def ell_grad(x, u, z):
        return np.zeros(np.shape(x)), np.zeros(np.shape(u)), inertia * z

    def legendre_inv(x, y, mu):
        return np.zeros(np.shape(y)), mu / inertia

    noise = NoiseFields(
        k, 0, 3, lambda x: _zeros(x, k), lambda x: _zeros(x, k, 0), _const(beta),
        lambda x: _zeros(x, k, 0), lambda x: _zeros(x, k, 0, 0), lambda x: _zeros(x, k, 3, 0),
    )
    reduced = ReducedSpec(0, G, Connection.zero(3, 0), ell, ell_grad, noise, legendre_inv, name="free-rigid-body")
    unreduced = UnreducedSpec(0, G, ell, ell_grad, noise, legendre_inv, name="free-rigid-body")
    return unreduced, reduced


def free_rigid_body_system(params=RigidBodyParams(), sigma0=(0.5, -0.4, 0.3)):
    un, red = make_free_rigid_body(params)
    return SystemPair("free-rigid-body", un, red, np.zeros(0), np.zeros(0), np.asarray(sigma0, dtype=float), params)


# ------------------------------------------------------ charged particle

KK_NOISE = ("none", "kick", "transport")


def uniform_field_potential(B):
    """Vector potential ``A = B x x / 2`` and its Jacobian ``dA_b/dx^a``."""
    B = np.asarray(B, dtype=float)
    jac = 0.5 * np.einsum("bga,g->ba", levi_civita(), B)

    def A_vec(x):
        return 0.5 * np.cross(B, x)

    def A_jac(x):
        return np.broadcast_to(jac, np.shape(x)[:-1] + (3, 3)).copy()

    return A_vec, A_jac


@dataclass(frozen=True)
class KKParams:
    B: tuple = (0.0, 0.0, 1.0)
    e_over_c: float = 1.0
    # "kick": L_i = x^i, V_i = 0; "transport": additionally
    # V_i(x) = sigma (e_i + sin(x^{i+1}) e_{i+2} / 2); "none": all zero
    noise: str = "kick"
    sigma: float = 0.1
    A_vec: Optional[Callable] = None
    A_jac: Optional[Callable] = None

    def validate(self):
        if self.noise not in KK_NOISE:
            raise SpecError(f"noise must be one of {KK_NOISE}")
        if len(self.B) != 3:
            raise SpecError("B must be a 3-vector")

    def potential(self):
        if self.A_vec is not None:
            return self.A_vec, self.A_jac
        return uniform_field_potential(self.B)


def _kk_base_noise(p):
    """``(l, l_grad, V, V_jac)`` on R^3 with k = 3."""
    k = 3
    if p.noise == "none":
        return (lambda x: _zeros(x, k), lambda x: _zeros(x, k, 3), lambda x: _zeros(x, k, 3),
                lambda x: _zeros(x, k, 3, 3))
    eye = np.eye(3)

    def l(x):
        return np.array(x, dtype=float, copy=True)

    def l_grad(x):
        return np.broadcast_to(eye, np.shape(x)[:-1] + (3, 3)).copy()

    if p.noise == "kick":
        return l, l_grad, lambda x: _zeros(x, k, 3), lambda x: _zeros(x, k, 3, 3)
    s = p.sigma
    idx = np.arange(3)
    nxt, nn = (idx + 1) % 3, (idx + 2) % 3

    def V(x):
        out = np.broadcast_to(s * eye, np.shape(x)[:-1] + (3, 3)).copy()
        out[..., idx, nn] += 0.5 * s * np.sin(x[..., nxt])
        return out

    def V_jac(x):
        out = np.zeros(np.shape(x)[:-1] + (3, 3, 3))
        out[..., idx, nn, nxt] = 0.5 * s * np.cos(x[..., nxt])
        return out

    return l, l_grad, V, V_jac


def make_charged_particle(params=KKParams()):
    """Return ``(unreduced, reduced)`` specs for the Kaluza-Klein particle."""
    params.validate()
    A_vec, A_jac = params.potential()
    G = Circle()
    k = 3

    def conn_A(x):
        return np.asarray(A_vec(x))[..., None, :]

    conn_dA = None if A_jac is None else (lambda x: np.asarray(A_jac(x))[..., None, :, :])
    conn = Connection(1, 3, conn_A, conn_dA)
    l, l_grad, V, V_jac = _kk_base_noise(params)

    def beta_bar(x):
        return np.einsum("...b,...ib->...i", A_vec(x), V(x))[..., None]

    def beta_bar_jac(x):
        dA = conn.dA(x)[..., 0, :, :]
        out = np.einsum("...ba,...ib->...ia", dA, V(x)) + np.einsum("...b,...iba->...ia", A_vec(x), V_jac(x))
        return out[..., None, :]

    red_noise = NoiseFields(k, 3, 1, l, V, beta_bar, l_grad, V_jac, beta_bar_jac)
    un_noise = NoiseFields(k, 3, 1, l, V, lambda x: _zeros(x, k, 1), l_grad, V_jac, lambda x: _zeros(x, k, 1, 3))

    def ell(x, u, z):
        return 0.5 * (np.sum(u * u, axis=-1) + z[..., 0] ** 2)

    def ell_grad(x, u, z):
        return np.zeros(np.shape(x)), np.array(u, dtype=float, copy=True), np.array(z, dtype=float, copy=True)

    def legendre_red(x, y, mu):
        return np.array(y, dtype=float, copy=True), np.array(mu, dtype=float, copy=True)

    def L(x, v, xi):
        s = np.sum(A_vec(x) * v, axis=-1) + xi[..., 0]
        return 0.5 * (np.sum(v * v, axis=-1) + s * s)

    def L_grad(x, v, xi):
        A = A_vec(x)
        s = np.sum(A * v, axis=-1) + xi[..., 0]
        dA = conn.dA(x)[..., 0, :, :]
        Lx = s[..., None] * np.einsum("...ba,...b->...a", dA, v)
        return Lx, v + s[..., None] * A, s[..., None]

    def legendre_un(x, p, mu):
        A = A_vec(x)
        v = p - mu * A
        xi = mu - np.sum(A * v, axis=-1)[..., None]
        return v, xi

    reduced = ReducedSpec(3, G, conn, ell, ell_grad, red_noise, legendre_red, name="charged-particle")
    unreduced = UnreducedSpec(3, G, L, L_grad, un_noise, legendre_un, name="charged-particle")
    return unreduced, reduced


def charged_particle_system(params=KKParams(), x0=(0.0, 0.0, 0.0), u0=(1.0, 0.0, 0.2)):
    un, red = make_charged_particle(params)
    zbar0 = np.array([params.e_over_c], dtype=float)
    return SystemPair("charged-particle", un, red, np.asarray(x0, dtype=float), np.asarray(u0, dtype=float), zbar0, params)


def larmor(x0, u0, B, e_over_c, t):
    """Closed-form ``(x(t), u(t))`` for ``du/dt = (e/c) u x B``, ``dx/dt = u``."""
    x0, u0, B = (np.asarray(a, dtype=float) for a in (x0, u0, B))
    t = np.asarray(t, dtype=float)[..., None]
    Bn = np.linalg.norm(B)
    if Bn == 0.0 or e_over_c == 0.0:
        return x0 + u0 * t, np.broadcast_to(u0, t.shape[:-1] + (3,)).copy()
    b = B / Bn
    w = e_over_c * Bn
    par = np.dot(u0, b) * b
    perp = u0 - par
    bxp = np.cross(b, perp)
    c, s = np.cos(w * t), np.sin(w * t)
    u = par + c * perp - s * bxp
    x = x0 + par * t + (s / w) * perp + ((c - 1.0) / w) * bxp
    return x, u


# ------------------------------------------------------- trivial group


def make_particle(k=2):
    """Planar particle in a quartic well with trivial symmetry group.

    Reduced and unreduced equations coincide; used as a fixture for the
    trivial-group consistency check.
    """
    G = TrivialGroup()

    def ell(x, u, z):
        return 0.5 * np.sum(u * u, axis=-1) - 0.5 * np.sum(x * x, axis=-1) - 0.25 * np.sum(x ** 4, axis=-1)

    def ell_grad(x, u, z):
        return -x - x ** 3, np.array(u, dtype=float, copy=True), np.zeros(np.shape(z))

    def legendre(x, y, mu):
        return np.array(y, dtype=float, copy=True), np.zeros(np.shape(mu))

    def l(x):
        return 0.2 * np.stack([np.sin(x[..., 0] + i * x[..., 1]) for i in range(k)], axis=-1)

    def V(x):
        return 0.1 * np.stack([np.stack([np.cos(x[..., 1]), (i + 1) * np.sin(x[..., 0])], -1) for i in range(k)], -2)

    noise = NoiseFields(k, 2, 0, l, V, lambda x: _zeros(x, k, 0))
    red = ReducedSpec(2, G, Connection.zero(0, 2), ell, ell_grad, noise, legendre, name="particle")
    un = UnreducedSpec(2, G, ell, ell_grad, noise, legendre, name="particle")
    return SystemPair("particle", un, red, np.array([0.5, -0.2]), np.array([0.1, 0.3]), np.zeros(0))


# ------------------------------------------------------------- registry

# (parameter overrides, initial-condition defaults); case 3 starts from y = 0
ROTOR_CASES = {
    "general": ({}, {}),
    "case1": ({"rotor_noise": "none"}, {}),
    "case2": ({"beta": ((0.0,) * 3,) * 3}, {}),
    "case3": ({"rotor_noise": "linear"}, {"u0": -0.3}),
}


def _tupled(val):
    if isinstance(val, list):
        return tuple(_tupled(v) for v in val)
    return val


def _apply(params, overrides):
    names = {f.name for f in fields(params)}
    unknown = set(overrides) - names
    if unknown:
        raise SpecError(f"unknown parameter(s) {sorted(unknown)} for {type(params).__name__}")
    return replace(params, **{key: _tupled(val) for key, val in overrides.items()})


def _build_rotor(overrides):
    overrides = dict(overrides)
    case = overrides.pop("case", "general")
    if case not in ROTOR_CASES:
        raise SpecError(f"unknown rotor case {case!r}; choose from {sorted(ROTOR_CASES)}")
    preset, ic = ROTOR_CASES[case]
    ic = dict(ic)
    ic.update({key: overrides.pop(key) for key in ("theta0", "u0", "sigma0") if key in overrides})
    params = _apply(RotorParams(**preset), overrides)
    return rotor_system(params, **ic)


def _build_rigid_body(overrides):
    overrides = dict(overrides)
    ic = {key: overrides.pop(key) for key in ("sigma0",) if key in overrides}
    return free_rigid_body_system(_apply(RigidBodyParams(), overrides), **ic)


def _build_charged_particle(overrides):
    overrides = dict(overrides)
    ic = {key: overrides.pop(key) for key in ("x0", "u0") if key in overrides}
    return charged_particle_system(_apply(KKParams(), overrides), **ic)


REGISTRY = {
    "rotor": _build_rotor,
    "free-rigid-body": _build_rigid_body,
    "charged-particle": _build_charged_particle,
}


def get_system(name, **overrides):
    """Look up a bundled system by its registered name.

    ``rotor-case1`` .. ``rotor-case3`` are shorthands for ``rotor`` with
    ``case=...``.
    """
    base, _, case = name.partition("-")
    if base == "rotor" and case in ROTOR_CASES:
        overrides = {"case": case, **overrides}
        name = "rotor"
    try:
        build = REGISTRY[name]
    except KeyError:
        raise SpecError(f"unknown system {name!r}; available: {', '.join(sorted(REGISTRY))}") from None
    return build(overrides)
