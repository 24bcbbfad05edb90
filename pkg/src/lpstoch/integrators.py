"""Stratonovich time stepping for ``ds = sum_j f_j(s) o dX^j``.

A state is a flat real vector plus zero or more group components.  An
:class:`IncrementField` returns, for every driver channel at once, the
coefficients of the flat increment and of the algebra increment of each group
component.  Flat coordinates are updated additively and group components by
right multiplication, ``g <- g * exp(dxi)``.

Fields may also report auxiliary rates: quantities whose Stratonovich
increments are wanted (and combined with the same scheme weights) but which do
not feed back into the state.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

EULER_HEUN = "euler_heun"
MIDPOINT = "midpoint"
SCHEMES = (EULER_HEUN, MIDPOINT)


class IntegrationError(RuntimeError):
    """Stepping failed; ``step`` is the index of the offending increment."""

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class State:
    flat: np.ndarray
    group: tuple = ()


class Rates(NamedTuple):
    flat: np.ndarray  # (..., n, k+1)
    group: tuple = ()  # each (..., d_m, k+1)
    aux: Optional[np.ndarray] = None  # (..., m, k+1)


class Increment(NamedTuple):
    flat: np.ndarray
    group: tuple
    aux: Optional[np.ndarray]


@dataclass(frozen=True)
class IncrementField:
    rates: Callable[[State], Rates]
    groups: tuple = ()


@dataclass(frozen=True)
class StepperConfig:
    scheme: str = EULER_HEUN
    newton_tol: float = 1e-13
    newton_max_iter: int = 100

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")


def _contract(coeffs, dX):
    return (coeffs @ dX[..., None])[..., 0]


def _increment(r, dX, scale=1.0):
    flat = _contract(r.flat, dX)
    group = tuple(_contract(g, dX) for g in r.group)
    aux = None if r.aux is None else _contract(r.aux, dX)
    if scale != 1.0:
        flat = scale * flat
        group = tuple(scale * g for g in group)
        aux = None if aux is None else scale * aux
    return Increment(flat, group, aux)


def _average(a, b):
    flat = 0.5 * (a.flat + b.flat)
    group = tuple(0.5 * (x + y) for x, y in zip(a.group, b.group))
    aux = None if a.aux is None else 0.5 * (a.aux + b.aux)
    return Increment(flat, group, aux)


def retract(field, state, inc):
    group = tuple(G.retract(g, xi) for G, g, xi in zip(field.groups, state.group, inc.group))
    return State(state.flat + inc.flat, group)


def _max_diff(a, b):
    err = np.max(np.abs(a.flat - b.flat), initial=0.0)
    for x, y in zip(a.group, b.group):
        err = max(err, np.max(np.abs(x - y), initial=0.0))
    return err


def advance(field, state, dX, cfg=StepperConfig(), step=None):
    """One step; returns the new state and the increment that produced it."""
    dX = np.asarray(dX, dtype=float)
    if not np.any(dX):
        r = field.rates(state)
        return state, _increment(r, dX)
    if cfg.scheme == EULER_HEUN:
        inc0 = _increment(field.rates(state), dX)
        predictor = retract(field, state, inc0)
        inc1 = _increment(field.rates(predictor), dX)
        inc = _average(inc0, inc1)
        return retract(field, state, inc), inc
    # implicit midpoint by fixed-point iteration on the half increment
    half = _increment(field.rates(state), dX, 0.5)
    for _ in range(cfg.newton_max_iter):
        mid = retract(field, state, half)
        new_half = _increment(field.rates(mid), dX, 0.5)
        err = _max_diff(new_half, half)
        half = new_half
        if not np.isfinite(err):
            break
        if err <= cfg.newton_tol:
            full = Increment(
                2.0 * half.flat,
                tuple(2.0 * g for g in half.group),
                None if half.aux is None else 2.0 * half.aux,
            )
            return retract(field, state, full), full
    raise IntegrationError(
        f"midpoint solve did not converge in {cfg.newton_max_iter} iterations (last change {err:.3e})",
        step,
    )


def strat_step(field, state, dX, cfg=StepperConfig()):
    return advance(field, state, dX, cfg)[0]


@dataclass(frozen=True)
class Trajectory:
    """Recorded states.  ``flat`` has shape ``(M, *batch, n)``; ``aux`` holds
    per-record-interval auxiliary increments, shape ``(M-1, *batch, m)``."""

    times: np.ndarray
    flat: np.ndarray
    group: tuple
    aux: Optional[np.ndarray] = None

    def state(self, i):
        return State(self.flat[i], tuple(g[i] for g in self.group))

    def __len__(self):
        return len(self.times)


def integrate(field, s0, path, cfg=StepperConfig(), stride=1, post=None):
    """Apply :func:`advance` over every increment of ``path``.

    ``post`` optionally maps each accepted state to a corrected one (used for
    algebraic constraints).  Every ``stride``-th state is recorded, plus the
    final one.
    """
    stride = max(int(stride), 1)
    inc_all = path.increments
    N = inc_all.shape[0]
    state = s0
    flats = [np.array(state.flat, copy=True)]
    groups = [[np.array(g, copy=True)] for g in state.group]
    times = [path.t0]
    aux_records = []
    aux_acc = None
    for n in range(N):
        try:
            state, inc = advance(field, state, inc_all[n], cfg, step=n)
        except IntegrationError as exc:
            if exc.step is None:
                raise IntegrationError(str(exc), n) from exc
            raise
        if post is not None:
            state = post(state)
        if not np.all(np.isfinite(state.flat)):
            raise IntegrationError("non-finite state (overflow or NaN)", n)
        if inc.aux is not None:
            aux_acc = inc.aux if aux_acc is None else aux_acc + inc.aux
        if (n + 1) % stride == 0 or n + 1 == N:
            flats.append(np.array(state.flat, copy=True))
            for store, g in zip(groups, state.group):
                store.append(np.array(g, copy=True))
            times.append(path.t0 + (n + 1) * path.h)
            if aux_acc is not None:
                aux_records.append(aux_acc)
                aux_acc = None
    aux = np.stack(aux_records) if aux_records else None
    return Trajectory(
        np.asarray(times),
        np.stack(flats),
        tuple(np.stack(store) for store in groups),
        aux,
    )
