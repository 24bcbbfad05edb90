"""Reduced and unreduced stochastic dynamics in a trivialization ``U x G``.

Reduced side (stochastic implicit Lagrange-Poincare).  The stepped state is
``(x, y, mubar)``; the velocities ``(u, zbar)`` are always recovered from it by
Legendre inversion, so the fiber relations ``y = dl/du`` and
``mubar = dl/dzbar`` hold at every evaluated state.  The increment of the
formal differential ``xibar`` is recorded as an auxiliary output.

Unreduced side (stochastic implicit Euler-Lagrange).  The stepped state is
``(x, p_x, m)`` plus ``g``; ``m`` is the spatial momentum ``Ad*_{g^-1} mu``,
which is conserved for a left-invariant Lagrangian and noise, and the body
momentum is recovered as ``mu = Ad*_g m``.  The group is advanced by
``g <- g exp(dxi)``.

Array conventions for user-supplied fields (all with leading batch axes):

* ``l(x)``: ``(..., k)``, ``l_grad(x)``: ``(..., k, r)``
* ``V(x)``: ``(..., k, r)``, ``V_jac(x)[..., i, b, a] = dV_i^b/dx^a``
* ``beta(x)``: ``(..., k, d)``, ``beta_jac(x)[..., i, c, a] = dbeta_i^c/dx^a``
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .bundle import Connection, central_jacobian, curvature
from .integrators import (
    IncrementField,
    IntegrationError,
    Rates,
    State,
    StepperConfig,
    advance,
    integrate,
)

CONSISTENT = "consistent"
PRINTED = "printed"
FORMS = (CONSISTENT, PRINTED)


class LegendreError(IntegrationError):
    pass


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseFields:
    """Per-channel noise data ``(L_i, V_i, beta_i)`` for ``i = 1..k``.

    Derivatives left as ``None`` are taken by central differences.
    """

    k: int
    r: int
    d: int
    l: Callable
    V: Callable
    beta: Callable
    l_grad: Optional[Callable] = None
    V_jac: Optional[Callable] = None
    beta_jac: Optional[Callable] = None
    fd_step: float = 1e-5

    def grad_l(self, x):
        if self.l_grad is not None:
            return np.asarray(self.l_grad(x), dtype=float)
        return central_jacobian(self.l, x, self.fd_step)

    def jac_V(self, x):
        if self.V_jac is not None:
            return np.asarray(self.V_jac(x), dtype=float)
        return central_jacobian(self.V, x, self.fd_step)

    def jac_beta(self, x):
        if self.beta_jac is not None:
            return np.asarray(self.beta_jac(x), dtype=float)
        return central_jacobian(self.beta, x, self.fd_step)

    @classmethod
    def zero(cls, k, r, d):
        def z(*tail):
            return lambda x: np.zeros(np.shape(x)[:-1] + tail)

        return cls(k, r, d, z(k), z(k, r), z(k, d), z(k, r), z(k, r, r), z(k, d, r))


def newton_legendre(grad, x, y, mu, tol=1e-12, max_iter=50, fd_step=1e-6):
    """Solve ``(dl/du, dl/dz)(x, u, z) = (y, mu)`` by Newton's method.

    ``grad(x, u, z)`` returns ``(dl/dx, dl/du, dl/dz)``.  The Jacobian is
    formed by central differences.
    """
    r, d = y.shape[-1], mu.shape[-1]
    target = np.concatenate([y, mu], axis=-1)
    w = np.zeros(np.broadcast_shapes(x.shape[:-1], target.shape[:-1]) + (r + d,))

    def F(w):
        _, lu, lz = grad(x, w[..., :r], w[..., r:])
        return np.concatenate([lu, lz], axis=-1)

    for _ in range(max_iter):
        res = F(w) - target
        if np.max(np.abs(res), initial=0.0) <= tol:
            return w[..., :r], w[..., r:]
        J = central_jacobian(F, w, fd_step)
        try:
            w = w - np.linalg.solve(J, res[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise LegendreError("singular fiber Hessian in Legendre inversion") from exc
        if not np.all(np.isfinite(w)):
            break
    raise LegendreError(f"Legendre inversion did not converge in {max_iter} iterations")


@dataclass(frozen=True)
class ReducedSpec:
    """Reduced Lagrangian ``l(x, u, zbar)`` with connection and noise.

    ``noise.beta`` holds the reduced sections ``betabar_i``.
    """

    r: int
    group: object
    conn: Connection
    ell: Callable
    ell_grad: Callable
    noise: NoiseFields
    legendre_inv: Optional[Callable] = None
    name: str = "reduced"

    def __post_init__(self):
        d = self.group.dim
        if self.conn.d != d or self.conn.r != self.r:
            raise SpecError("connection shape does not match (d, r)")
        if (self.noise.r, self.noise.d) != (self.r, d):
            raise SpecError("noise fields do not match (r, d)")

    @property
    def d(self):
        return self.group.dim

    @property
    def k(self):
        return self.noise.k

    @property
    def dim(self):
        return 2 * self.r + self.d

    def velocities(self, x, y, mu):
        if self.legendre_inv is not None:
            return self.legendre_inv(x, y, mu)
        return newton_legendre(self.ell_grad, x, y, mu)

    def momenta(self, x, u, z):
        _, lu, lz = self.ell_grad(x, u, z)
        return lu, lz

    def split(self, flat):
        r = self.r
        return flat[..., :r], flat[..., r:2 * r], flat[..., 2 * r:]


@dataclass(frozen=True)
class UnreducedSpec:
    """Lagrangian ``L(x, v, xi)`` written with body velocity ``xi = g^-1 gdot``.

    Written this way ``L`` is invariant under ``g -> g0 g`` by construction.
    ``noise.beta`` holds the body-frame group parts ``beta_i(x)`` of ``V_i``.
    """

    r: int
    group: object
    L: Callable
    L_grad: Callable
    noise: NoiseFields
    legendre_inv: Callable
    name: str = "unreduced"

    @property
    def d(self):
        return self.group.dim

    @property
    def k(self):
        return self.noise.k

    def split(self, flat):
        r = self.r
        return flat[..., :r], flat[..., r:2 * r], flat[..., 2 * r:]

    def body_momentum(self, g, m):
        return self.group.Ad_star(g, m)

    def spatial_momentum(self, g, mu):
        return self.group.Ad_star(self.group.inv(g), mu)


@dataclass(frozen=True)
class ReducedState:
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    zbar: np.ndarray
    mubar: np.ndarray

    def flat(self):
        return np.concatenate([self.x, self.y, self.mubar], axis=-1)

    def full(self):
        return np.concatenate([self.x, self.u, self.y, self.zbar, self.mubar], axis=-1)


@dataclass(frozen=True)
class UnreducedState:
    x: np.ndarray
    g: object
    v: np.ndarray
    xi: np.ndarray
    p_x: np.ndarray
    mu: np.ndarray


def reduced_state(spec, x, y, mubar):
    x, y, mubar = (np.asarray(a, dtype=float) for a in (x, y, mubar))
    u, z = spec.velocities(x, y, mubar)
    return ReducedState(x, np.asarray(u), y, np.asarray(z), mubar)


def reduced_from_velocities(spec, x, u, zbar):
    x, u, zbar = (np.asarray(a, dtype=float) for a in (x, u, zbar))
    y, mu = spec.momenta(x, u, zbar)
    return ReducedState(x, u, np.asarray(y, dtype=float), zbar, np.asarray(mu, dtype=float))


def unreduced_state(spec, x, g, p_x, mu):
    x, p_x, mu = (np.asarray(a, dtype=float) for a in (x, p_x, mu))
    v, xi = spec.legendre_inv(x, p_x, mu)
    return UnreducedState(x, g, np.asarray(v), np.asarray(xi), p_x, mu)


def unreduced_from_velocities(spec, x, g, v, xi):
    x, v, xi = (np.asarray(a, dtype=float) for a in (x, v, xi))
    _, p, mu = spec.L_grad(x, v, xi)
    return UnreducedState(x, g, v, xi, np.asarray(p, dtype=float), np.asarray(mu, dtype=float))


# ---------------------------------------------------------------- reduced


def _columns(drift, noise):
    """Stack a drift ``(..., n)`` and per-channel ``(..., k, n)`` into ``(..., n, k+1)``."""
    return np.concatenate([drift[..., None], np.swapaxes(noise, -1, -2)], axis=-1)


def reduced_field(spec, form=CONSISTENT):
    """Increment field of the horizontal/vertical reduced equations.

    ``form="consistent"`` differentiates the reduced section ``betabar_i`` in
    the horizontal noise term, which is what the unreduced dynamics project
    to.  ``form="printed"`` uses the alternative local expression
    ``-mubar_a (C^a_bd betabar_i^b A^d_alpha + d_alpha beta_i^a)`` with the
    unbarred ``beta_i = betabar_i - A V_i``.  The two agree whenever ``A = 0``
    or (abelian ``G`` and ``V_i = 0``).
    """
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}; choose from {FORMS}")
    C = np.asarray(spec.group.structure, dtype=float)
    nz, conn = spec.noise, spec.conn
    d = spec.d

    def rates(state):
        x, y, mu = spec.split(state.flat)
        u, z = spec.velocities(x, y, mu)
        lx, _, lz = spec.ell_grad(x, u, z)
        V, bb = nz.V(x), nz.beta(x)
        Vj, bj = nz.jac_V(x), nz.jac_beta(x)
        xc = _columns(u, V)
        zc = _columns(z, bb)
        noise_y = nz.grad_l(x) - np.einsum("...b,...iba->...ia", y, Vj)
        if form == CONSISTENT:
            noise_y = noise_y - np.einsum("...c,...ica->...ia", mu, bj)
        else:
            A, dA = conn.A(x), conn.dA(x)
            # d_alpha (A^c_b V_i^b) = dA[c, b, alpha] V_i^b + A^c_b dV_i^b/dx^alpha
            dAV = np.einsum("...cba,...ib->...ica", dA, V) + np.einsum("...cb,...iba->...ica", A, Vj)
            dbeta = bj - dAV
            bracket = np.einsum("cbe,...ib,...ea->...ica", C, bb, A)
            noise_y = noise_y - np.einsum("...c,...ica->...ia", mu, bracket + dbeta)
        yc = _columns(lx, noise_y)
        if d:
            A = conn.A(x)
            B = curvature(conn, C, x)
            yc = yc + np.einsum("...c,...cab->...ab", mu, B) @ xc
            M = np.einsum("...c,cdb,...ba->...ad", lz, C, A)
            yc = yc - M @ zc
            N = np.einsum("...c,cdb->...bd", mu, C)
            mc = N @ (zc - A @ xc)
        else:
            mc = np.zeros(zc.shape)
        return Rates(np.concatenate([xc, yc, mc], axis=-2), (), zc)

    return IncrementField(rates, ())


def step_reduced(spec, s, dX, cfg=StepperConfig(), form=CONSISTENT):
    """Advance a :class:`ReducedState` by one driver increment ``dX``."""
    new, _ = advance(reduced_field(spec, form), State(s.flat()), dX, cfg)
    x, y, mu = spec.split(new.flat)
    return reduced_state(spec, x, y, mu)


@dataclass(frozen=True)
class ReducedTrajectory:
    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    zbar: np.ndarray
    mubar: np.ndarray
    dxibar: Optional[np.ndarray]

    def __len__(self):
        return len(self.times)

    def state(self, i):
        return ReducedState(self.x[i], self.u[i], self.y[i], self.zbar[i], self.mubar[i])

    def full(self):
        return np.concatenate([self.x, self.u, self.y, self.zbar, self.mubar], axis=-1)


def integrate_reduced(spec, s0, path, cfg=StepperConfig(), stride=1, form=CONSISTENT):
    traj = integrate(reduced_field(spec, form), State(s0.flat()), path, cfg, stride)
    x, y, mu = spec.split(traj.flat)
    u, z = spec.velocities(x, y, mu)
    aux = traj.aux
    if aux is None:
        aux = np.zeros((0,) + traj.flat.shape[1:-1] + (spec.d,))
    return ReducedTrajectory(traj.times, x, np.asarray(u), y, np.asarray(z), mu, aux)


# -------------------------------------------------------------- unreduced


def unreduced_field(spec):
    G, nz = spec.group, spec.noise

    def rates(state):
        x, p, m = spec.split(state.flat)
        g = state.group[0]
        mu = G.Ad_star(g, m)
        v, xi = spec.legendre_inv(x, p, mu)
        Lx = spec.L_grad(x, v, xi)[0]
        V, beta = nz.V(x), nz.beta(x)
        Vj, bj = nz.jac_V(x), nz.jac_beta(x)
        xc = _columns(v, V)
        gc = _columns(xi, beta)
        noise_p = nz.grad_l(x) - np.einsum("...b,...iba->...ia", p, Vj)
        noise_p = noise_p - np.einsum("...c,...ica->...ia", mu, bj)
        pc = _columns(Lx, noise_p)
        mc = np.zeros(gc.shape)
        return Rates(np.concatenate([xc, pc, mc], axis=-2), (gc,), gc)

    return IncrementField(rates, (G,))


def _unreduced_flat(spec, s):
    m = spec.spatial_momentum(s.g, s.mu)
    return State(np.concatenate([s.x, s.p_x, m], axis=-1), (s.g,))


def _unreduced_from_state(spec, state):
    x, p, m = spec.split(state.flat)
    g = state.group[0]
    mu = spec.body_momentum(g, m)
    v, xi = spec.legendre_inv(x, p, mu)
    return UnreducedState(x, g, np.asarray(v), np.asarray(xi), p, np.asarray(mu))


def step_unreduced(spec, s, dX, cfg=StepperConfig()):
    new, _ = advance(unreduced_field(spec), _unreduced_flat(spec, s), dX, cfg)
    return _unreduced_from_state(spec, new)


@dataclass(frozen=True)
class UnreducedTrajectory:
    times: np.ndarray
    x: np.ndarray
    g: np.ndarray
    v: np.ndarray
    xi: np.ndarray
    p_x: np.ndarray
    m: np.ndarray
    mu: np.ndarray
    dxi: Optional[np.ndarray]

    def __len__(self):
        return len(self.times)

    def state(self, i):
        return UnreducedState(self.x[i], self.g[i], self.v[i], self.xi[i], self.p_x[i], self.mu[i])


def _unreduced_trajectory(spec, times, x, p, m, g, dxi):
    mu = spec.body_momentum(g, m)
    v, xi = spec.legendre_inv(x, p, mu)
    return UnreducedTrajectory(times, x, g, np.asarray(v), np.asarray(xi), p, m, np.asarray(mu), dxi)


def integrate_unreduced(spec, s0, path, cfg=StepperConfig(), stride=1):
    traj = integrate(unreduced_field(spec), _unreduced_flat(spec, s0), path, cfg, stride)
    x, p, m = spec.split(traj.flat)
    aux = traj.aux
    if aux is None:
        aux = np.zeros((0,) + traj.flat.shape[1:-1] + (spec.d,))
    return _unreduced_trajectory(spec, traj.times, x, p, m, traj.group[0], aux)


def left_shift(spec, traj, g0):
    """Apply the constant left translation ``g -> g0 g`` to a whole trajectory."""
    G = spec.group
    g = G.mul(g0, traj.g)
    m = G.Ad_star(G.inv(g0), traj.m)
    return _unreduced_trajectory(spec, traj.times, traj.x, traj.p_x, m, g, traj.dxi)


# ------------------------------------------------------------- projection


def project_state(rspec, s):
    """Map an :class:`UnreducedState` to the reduced variables."""
    A = rspec.conn.A(s.x)
    zbar = s.xi + np.einsum("...ar,...r->...a", A, s.v)
    y = s.p_x - np.einsum("...a,...ar->...r", s.mu, A)
    return ReducedState(s.x, s.v, y, zbar, s.mu)


def lift_state(rspec, uspec, s, g=None):
    """Inverse of :func:`project_state` with group coordinate ``g`` (identity by default)."""
    G = uspec.group
    if g is None:
        g = G.identity(np.shape(s.x)[:-1])
    A = rspec.conn.A(s.x)
    xi = s.zbar - np.einsum("...ar,...r->...a", A, s.u)
    return unreduced_from_velocities(uspec, s.x, g, s.u, xi)


def project_trajectory(rspec, traj):
    A = rspec.conn.A(traj.x)
    zbar = traj.xi + np.einsum("...ar,...r->...a", A, traj.v)
    y = traj.p_x - np.einsum("...a,...ar->...r", traj.mu, A)
    dxibar = None
    if traj.dxi is not None and len(traj.dxi) == len(traj) - 1:
        Abar = 0.5 * (A[1:] + A[:-1])
        dx = np.diff(traj.x, axis=0)
        dxibar = traj.dxi + np.einsum("...ar,...r->...a", Abar, dx)
    return ReducedTrajectory(traj.times, traj.x, traj.v, y, zbar, traj.mu, dxibar)


# ---------------------------------------------------------------- actions


def _check_aligned(traj, path, inc):
    if inc is None or len(traj) != path.N + 1 or len(inc) != path.N:
        raise ValueError("trajectory must be recorded at every step of the path (stride 1)")


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _stratonovich_sum(F, p, dq, X):
    """Sum of trapezoid-weighted ``F . dX`` plus midpoint ``<p, dq>``."""
    if len(X) == 0:
        return np.zeros(F.shape[1:-1])
    Fbar = 0.5 * (F[1:] + F[:-1])
    terms = _dot(Fbar, X)
    for q_avg, dqn in zip(p, dq):
        terms = terms + _dot(q_avg, dqn)
    return np.sum(terms, axis=0)


def action_reduced(spec, traj, path):
    """Discrete reduced Hamilton-Pontryagin action along a recorded trajectory."""
    _check_aligned(traj, path, traj.dxibar)
    nz = spec.noise
    x, u, y, z, mu = traj.x, traj.u, traj.y, traj.zbar, traj.mubar
    l0 = spec.ell(x, u, z) - _dot(y, u) - _dot(mu, z)
    li = nz.l(x) - np.einsum("...b,...ib->...i", y, nz.V(x)) - np.einsum("...c,...ic->...i", mu, nz.beta(x))
    F = np.concatenate([l0[..., None], li], axis=-1)
    X = path.increments
    yb = 0.5 * (y[1:] + y[:-1])
    mb = 0.5 * (mu[1:] + mu[:-1])
    return _stratonovich_sum(F, (yb, mb), (np.diff(x, axis=0), traj.dxibar), X)


def action_unreduced(spec, traj, path):
    """Discrete Hamilton-Pontryagin action; ``<p, dq>`` is paired in body coordinates."""
    _check_aligned(traj, path, traj.dxi)
    nz = spec.noise
    x, v, xi, p, mu = traj.x, traj.v, traj.xi, traj.p_x, traj.mu
    L0 = spec.L(x, v, xi) - _dot(p, v) - _dot(mu, xi)
    Li = nz.l(x) - np.einsum("...b,...ib->...i", p, nz.V(x)) - np.einsum("...c,...ic->...i", mu, nz.beta(x))
    F = np.concatenate([L0[..., None], Li], axis=-1)
    X = path.increments
    pb = 0.5 * (p[1:] + p[:-1])
    mb = 0.5 * (mu[1:] + mu[:-1])
    return _stratonovich_sum(F, (pb, mb), (np.diff(x, axis=0), traj.dxi), X)


# ------------------------------------------------------------ diagnostics


def fiber_residual(spec, traj):
    """Largest ``|y - dl/du|`` and ``|mubar - dl/dzbar|`` along a trajectory."""
    _, lu, lz = spec.ell_grad(traj.x, traj.u, traj.zbar)
    ey = np.max(np.abs(traj.y - lu), initial=0.0)
    em = np.max(np.abs(traj.mubar - lz), initial=0.0)
    return float(ey), float(em)


# ----------------------------------------------------------------- export


def _names(prefix, n):
    return [f"{prefix}_{i}" for i in range(n)]


def _write_rows(fh, header, columns):
    data = np.concatenate([c.reshape(len(c), -1) for c in columns], axis=1)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for row in data:
        writer.writerow(["%.17g" % v for v in row])


def _open_for_write(target):
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        return open(target, "w", newline=""), True
    return target, False


def write_reduced_csv(traj, target):
    if traj.x.ndim != 2:
        raise ValueError("CSV export needs an unbatched trajectory")
    r, d = traj.x.shape[-1], traj.mubar.shape[-1]
    header = ["t"] + _names("x", r) + _names("u", r) + _names("y", r) + _names("zbar", d) + _names("mubar", d)
    fh, close = _open_for_write(target)
    try:
        _write_rows(fh, header, [traj.times[:, None], traj.x, traj.u, traj.y, traj.zbar, traj.mubar])
    finally:
        if close:
            fh.close()


def write_unreduced_csv(spec, traj, target):
    if traj.x.ndim != 2:
        raise ValueError("CSV export needs an unbatched trajectory")
    r, d = traj.x.shape[-1], traj.mu.shape[-1]
    gflat = spec.group.flatten(traj.g)
    header = (
        ["t"] + _names("x", r) + _names("g", gflat.shape[-1]) + _names("v", r)
        + _names("xi", d) + _names("p", r) + _names("mu", d)
    )
    fh, close = _open_for_write(target)
    try:
        _write_rows(fh, header, [traj.times[:, None], traj.x, gflat, traj.v, traj.xi, traj.p_x, traj.mu])
    finally:
        if close:
            fh.close()
