"""Verification harness: ensembles, coupled convergence studies, invariant checks."""
from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import drivers
from .bundle import central_jacobian
from .integrators import IntegrationError, StepperConfig
from .mechanics import (
    CONSISTENT,
    ReducedSpec,
    action_reduced,
    action_unreduced,
    fiber_residual,
    integrate_reduced,
    integrate_unreduced,
    left_shift,
    lift_state,
    project_trajectory,
)

UNDERPOWERED = 100
THREADS_ENV = "LPSTOCH_THREADS"


class MonteCarloError(RuntimeError):
    def __init__(self, trial, cause):
        self.trial = trial
        self.step = getattr(cause, "step", None)
        super().__init__(f"trial {trial}: {cause}")


def worker_count(requested=None):
    n = requested or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(int(cap), 1))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return max(int(n), 1)


def _fsum_stats(values):
    """Exact-sum mean and standard error along axis 0 of ``(trials, ...)``."""
    n = values.shape[0]
    flat = values.reshape(n, -1)
    mean = np.array([math.fsum(col) / n for col in flat.T])
    var = np.array([math.fsum((col - m) ** 2) / (n - 1) for col, m in zip(flat.T, mean)])
    stderr = np.sqrt(np.maximum(var, 0.0) / n)
    shape = values.shape[1:]
    return mean.reshape(shape), stderr.reshape(shape)


@dataclass(frozen=True)
class EnsembleReport:
    """Mean and standard error of an observable at recorded time slices.

    ``mean`` and ``stderr`` have shape ``(slices, components)``.
    """

    trials: int
    names: tuple
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray

    @property
    def final_mean(self):
        return self.mean[-1]

    @property
    def final_stderr(self):
        return self.stderr[-1]

    def z_scores(self, reference):
        ref = np.broadcast_to(np.asarray(reference, dtype=float), self.mean.shape)
        diff = self.mean - ref
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(self.stderr > 0, np.abs(diff) / self.stderr, np.where(diff == 0, 0.0, np.inf))
        return z

    def within(self, reference, nsigma=3.0):
        return bool(np.all(self.z_scores(reference) <= nsigma))

    def to_csv(self, target=None):
        buf = io.StringIO() if target is None else target
        w = csv.writer(buf, lineterminator="\n")
        header = ["t"]
        for n in self.names:
            header += [f"{n}_mean", f"{n}_stderr"]
        w.writerow(header)
        for t, m, s in zip(self.times, self.mean, self.stderr):
            row = ["%.17g" % t]
            for a, b in zip(m, s):
                row += ["%.17g" % a, "%.17g" % b]
            w.writerow(row)
        return buf.getvalue() if target is None else None

    def summary(self, reference=None):
        lines = [f"ensemble: {self.trials} trials, t = {self.times[-1]:.6g}"]
        z = None if reference is None else self.z_scores(reference)[-1]
        for j, n in enumerate(self.names):
            line = f"  {n:>10s}  mean {self.final_mean[j]: .6e}  stderr {self.final_stderr[j]:.3e}"
            if z is not None:
                line += f"  |z| {z[j]:.2f}"
            lines.append(line)
        return "\n".join(lines)


def _component_names(name, m):
    if isinstance(name, (tuple, list)):
        if len(name) != m:
            raise ValueError(f"{len(name)} names given for {m} observable components")
        return tuple(name)
    return (name,) if m == 1 else tuple(f"{name}_{j}" for j in range(m))


def monte_carlo(
    pair,
    observable,
    trials,
    h,
    T,
    seed,
    name="obs",
    slices=1,
    cfg=StepperConfig(),
    form=CONSISTENT,
    chunk=1000,
    threads=None,
):
    """Ensemble statistics of ``observable`` over independent driver paths.

    ``observable`` reads the ``ReducedState`` fields (``x, u, y, zbar,
    mubar``) of the recorded trajectory, whose arrays carry leading
    ``(time, trial)`` axes, and returns ``(time, trial)`` or
    ``(time, trial, m)`` values.  Trial ``i`` always uses the seed derived from
    ``(seed, i)``, so results do not depend on chunking or thread count.
    """
    trials = int(trials)
    if trials < 2:
        raise ValueError("monte_carlo needs at least two trials")
    if trials < UNDERPOWERED:
        warnings.warn(f"only {trials} trials: ensemble statistics are underpowered", stacklevel=2)
    N = int(round(T / h))
    if N < 1 or abs(N * h - T) > 1e-9 * T:
        raise ValueError(f"T={T} is not a positive multiple of h={h}")
    slices = max(int(slices), 1)
    stride = N // slices if N % slices == 0 else 1
    k = pair.k
    bounds = [(a, min(a + chunk, trials)) for a in range(0, trials, chunk)]

    def run(bound):
        a, b = bound
        path = drivers.make_trial_paths(seed, b - a, h, N, k, first=a)
        s0 = pair.initial_state((b - a,))
        try:
            traj = integrate_reduced(pair.reduced, s0, path, cfg, stride, form)
        except IntegrationError as exc:
            raise MonteCarloError(_first_failing(pair, seed, a, b, h, N, k, cfg, form), exc) from exc
        vals = np.asarray(observable(traj), dtype=float)
        if vals.ndim == 2:
            vals = vals[..., None]
        return np.moveaxis(vals, 1, 0), traj.times

    with ThreadPoolExecutor(max_workers=worker_count(threads)) as pool:
        results = list(pool.map(run, bounds))
    values = np.concatenate([r[0] for r in results], axis=0)
    times = results[0][1]
    mean, stderr = _fsum_stats(values)
    return EnsembleReport(trials, _component_names(name, values.shape[-1]), times, mean, stderr)


def _first_failing(pair, seed, a, b, h, N, k, cfg, form):
    for i in range(a, b):
        path = drivers.make_trial_paths(seed, 1, h, N, k, first=i)
        try:
            integrate_reduced(pair.reduced, pair.initial_state((1,)), path, cfg, N, form)
        except IntegrationError:
            return i
    return a


# ------------------------------------------------------------ convergence


def fit_order(hs, errors):
    """Least-squares slope of ``log(error)`` against ``log(h)``."""
    hs, errors = np.asarray(hs, dtype=float), np.asarray(errors, dtype=float)
    if np.any(errors <= 0) or len(hs) < 2:
        return float("nan")
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


@dataclass(frozen=True)
class ConvergenceReport:
    levels: tuple  # ((h, error), ...) sorted by decreasing h
    fitted_order: float
    label: str = ""

    @property
    def hs(self):
        return np.array([h for h, _ in self.levels])

    @property
    def errors(self):
        return np.array([e for _, e in self.levels])

    def passed(self, min_order=0.75, floor=1e-12):
        # when every level already agrees to roundoff the fitted slope is noise
        if len(self.levels) and np.max(self.errors) <= floor:
            return True
        return bool(np.isfinite(self.fitted_order) and self.fitted_order >= min_order)

    def to_csv(self, target=None):
        buf = io.StringIO() if target is None else target
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["h", "error"])
        for h, e in self.levels:
            w.writerow(["%.17g" % h, "%.17g" % e])
        return buf.getvalue() if target is None else None

    def summary(self):
        lines = [f"convergence {self.label}".rstrip()]
        for h, e in self.levels:
            lines.append(f"  h = {h:.4e}   error = {e:.6e}")
        lines.append(f"  fitted order = {self.fitted_order:.3f}")
        return "\n".join(lines)


def compare_reduced_unreduced(pair, path, levels=4, cfg=StepperConfig(), form=CONSISTENT, s0=None):
    """Integrate both forms on coarsenings of ``path`` and measure the gap.

    ``path`` is the finest level; level ``j`` uses ``coarsen(path, 2**j)``.
    The error at a level is the mean over paths of the maximum over time of
    the sup-norm distance between the reduced state and the projected
    unreduced state.
    """
    batch = path.batch_shape
    if s0 is None:
        s0 = pair.initial_state(batch)
    u0 = lift_state(pair.reduced, pair.unreduced, s0)
    out = []
    for j in reversed(range(levels)):
        p = drivers.coarsen(path, 2 ** j)
        tr = integrate_reduced(pair.reduced, s0, p, cfg, form=form)
        tu = integrate_unreduced(pair.unreduced, u0, p, cfg)
        gap = np.abs(project_trajectory(pair.reduced, tu).full() - tr.full())
        per_path = np.max(gap, axis=(0, -1)) if gap.size else np.zeros(batch)
        out.append((p.h, float(np.mean(per_path))))
    hs, errs = zip(*out)
    return ConvergenceReport(tuple(out), fit_order(hs, errs), pair.name)


def strong_order_scalar(seed=0, paths=200, h=2 ** -10, T=1.0, levels=4, cfg=StepperConfig()):
    """Strong error of ``dY = Y o dW`` against ``exp(W_T)`` over dyadic levels."""
    from .integrators import IncrementField, Rates, State, integrate

    N = int(round(T / h))
    fine = drivers.make_trial_paths(seed, paths, h, N, 1)
    W = fine.increments[..., 1].sum(axis=0)

    def rates(s):
        y = s.flat
        return Rates(np.concatenate([np.zeros_like(y)[..., None], y[..., None]], axis=-1))

    field = IncrementField(rates)
    out = []
    for j in reversed(range(levels)):
        p = drivers.coarsen(fine, 2 ** j)
        traj = integrate(field, State(np.ones((paths, 1))), p, cfg, stride=p.N)
        err = np.mean(np.abs(traj.flat[-1, :, 0] - np.exp(W)))
        out.append((p.h, float(err)))
    hs, errs = zip(*out)
    return ConvergenceReport(tuple(out), fit_order(hs, errs), "dY = Y o dW")


# -------------------------------------------------------------- invariants


def casimir_drift(mu):
    """Max over time of ``| |mu_t|^2 - |mu_0|^2 | / |mu_0|^2`` (per batch entry)."""
    c = np.sum(np.asarray(mu) ** 2, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(c - c[0]) / np.where(c[0] > 0, c[0], 1.0)
    return np.max(rel, axis=0)


def check_casimir(pair, path, cfg=StepperConfig(), model="reduced", s0=None):
    """Largest relative drift of ``|mu|^2`` over the run and over all batch entries."""
    if s0 is None:
        s0 = pair.initial_state(path.batch_shape)
    if model == "reduced":
        mu = integrate_reduced(pair.reduced, s0, path, cfg).mubar
    else:
        mu = integrate_unreduced(pair.unreduced, lift_state(pair.reduced, pair.unreduced, s0), path, cfg).mu
    return float(np.max(casimir_drift(mu)))


@dataclass(frozen=True)
class GradientReport:
    errors: dict = field(default_factory=dict)

    @property
    def worst(self):
        return max(self.errors.values(), default=0.0)

    @property
    def worst_name(self):
        if not self.errors:
            return None
        return max(self.errors, key=self.errors.get)


def richardson_jacobian(f, x, step=1e-3):
    """Central differences with one Richardson extrapolation (O(step^4))."""
    coarse = central_jacobian(f, x, step)
    fine = central_jacobian(f, x, step / 2)
    return (4.0 * fine - coarse) / 3.0


def _rel_err(analytic, fd):
    analytic, fd = np.asarray(analytic), np.asarray(fd)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - fd) / np.maximum(np.abs(fd), 1.0)))


def check_gradients(spec, n_points=100, seed=0, scale=1.0, step=1e-3):
    """Compare every supplied analytic partial with Richardson-extrapolated
    central differences at ``n_points`` seeded random points."""
    rng = np.random.Generator(np.random.Philox(seed))
    r, d = spec.r, spec.group.dim
    reduced = isinstance(spec, ReducedSpec)
    f0, grad = (spec.ell, spec.ell_grad) if reduced else (spec.L, spec.L_grad)
    x = scale * rng.standard_normal((n_points, r))
    u = scale * rng.standard_normal((n_points, r))
    z = scale * rng.standard_normal((n_points, d))
    an = grad(x, u, z)
    errs = {
        "dL/dx": _rel_err(an[0], richardson_jacobian(lambda a: f0(a, u, z), x, step)),
        "dL/du": _rel_err(an[1], richardson_jacobian(lambda a: f0(x, a, z), u, step)),
        "dL/dzeta": _rel_err(an[2], richardson_jacobian(lambda a: f0(x, u, a), z, step)),
    }
    nz = spec.noise
    for label, analytic, fn in (
        ("dl_i/dx", nz.l_grad, nz.l),
        ("dV_i/dx", nz.V_jac, nz.V),
        ("dbeta_i/dx", nz.beta_jac, nz.beta),
    ):
        if analytic is not None:
            errs[label] = _rel_err(analytic(x), richardson_jacobian(fn, x, step))
    conn = getattr(spec, "conn", None)
    if conn is not None and conn.is_analytic:
        errs["dA/dx"] = _rel_err(conn.dA(x), richardson_jacobian(conn.A, x, step))
    return GradientReport(errs)


def check_legendre(spec, n_points=100, seed=1, scale=1.0):
    """Round trip ``(u, z) -> (y, mu) -> (u, z)`` for a reduced spec."""
    rng = np.random.Generator(np.random.Philox(seed))
    r, d = spec.r, spec.d
    x = scale * rng.standard_normal((n_points, r))
    u = scale * rng.standard_normal((n_points, r))
    z = scale * rng.standard_normal((n_points, d))
    y, mu = spec.momenta(x, u, z)
    u2, z2 = spec.velocities(x, y, mu)
    return float(max(np.max(np.abs(u2 - u), initial=0.0), np.max(np.abs(z2 - z), initial=0.0)))


def check_fiber(pair, path, cfg=StepperConfig(), form=CONSISTENT):
    traj = integrate_reduced(pair.reduced, pair.initial_state(path.batch_shape), path, cfg, form=form)
    return fiber_residual(pair.reduced, traj)


def check_action(pair, path, shifts=100, seed=0, cfg=StepperConfig()):
    """Return ``(invariance_error, consistency_error)`` for the discrete actions.

    Invariance: largest change of the unreduced action under random constant
    left translations.  Consistency: gap between the unreduced action and the
    reduced action of the projected trajectory.
    """
    G = pair.unreduced.group
    s0 = pair.initial_state(path.batch_shape)
    tu = integrate_unreduced(pair.unreduced, lift_state(pair.reduced, pair.unreduced, s0), path, cfg)
    base = action_unreduced(pair.unreduced, tu, path)
    rng = np.random.Generator(np.random.Philox(seed))
    inv = 0.0
    for _ in range(shifts):
        g0 = G.exp(np.pi * rng.uniform(-1.0, 1.0, G.dim))
        shifted = action_unreduced(pair.unreduced, left_shift(pair.unreduced, tu, g0), path)
        inv = max(inv, float(np.max(np.abs(shifted - base))))
    red = action_reduced(pair.reduced, project_trajectory(pair.reduced, tu), path)
    return inv, float(np.max(np.abs(red - base)))


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tol: float

    @property
    def passed(self):
        return bool(np.isfinite(self.value) and self.value <= self.tol)


def run_checks(pair, seed=0, h=1e-3, T=1.0, cfg=StepperConfig()):
    """Gradient, Legendre, Casimir, fiber and action suites for one system."""
    N = int(round(T / h))
    path = drivers.make_time_brownian(seed, h, N, pair.k)
    grads = check_gradients(pair.reduced, seed=seed)
    ugrads = check_gradients(pair.unreduced, seed=seed)
    ey, em = check_fiber(pair, path, cfg)
    inv, cons = check_action(pair, path, seed=seed, cfg=cfg)
    casimir_path = drivers.make_time_brownian(seed, h, int(round(5.0 / h)), pair.k)
    return [
        CheckResult(f"gradients reduced ({grads.worst_name})", grads.worst, 1e-6),
        CheckResult(f"gradients unreduced ({ugrads.worst_name})", ugrads.worst, 1e-6),
        CheckResult("legendre round trip", check_legendre(pair.reduced), 1e-10),
        CheckResult("casimir drift |mu|^2", check_casimir(pair, casimir_path, cfg), 1e-4),
        CheckResult("fiber |y - dl/du|", ey, 1e-9),
        CheckResult("fiber |mu - dl/dzeta|", em, 1e-9),
        CheckResult("action left-shift invariance", inv, 1e-12),
        CheckResult("action reduced vs unreduced", cons, 1e-8),
    ]


def format_checks(results):
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'value':>12}  {'tol':>8}  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.value:12.3e}  {r.tol:8.1e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
