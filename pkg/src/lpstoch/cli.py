"""Command-line front end: ``lpstoch {simulate,compare,mc,check}``.

Exit codes: 0 success/pass, 1 check failed, 2 usage or configuration error,
3 integrator failure.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import drivers, mechanics, systems, verify
from .integrators import SCHEMES, IntegrationError, StepperConfig
from .mechanics import FORMS, SpecError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    system: str = ""
    T: float = 1.0
    h: float = 1e-3
    seed: int = 0
    trials: int = 10000
    scheme: str = "euler_heun"
    out: str = ""
    model: str = "reduced"
    form: str = "consistent"
    levels: int = 4
    zero_noise: bool = False
    observable: str = ""
    params: dict = field(default_factory=dict)

    def validate(self):
        if not self.system:
            raise ConfigError("no system given (use --system or a [system] table)")
        if not self.T > 0 or not self.h > 0:
            raise ConfigError("T and h must be positive")
        if self.h > self.T:
            raise ConfigError("h must not exceed T")
        N = round(self.T / self.h)
        if abs(N * self.h - self.T) > 1e-9 * self.T:
            raise ConfigError(f"T={self.T} is not an integer multiple of h={self.h}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if self.model not in ("reduced", "unreduced"):
            raise ConfigError("model must be 'reduced' or 'unreduced'")
        if self.form not in FORMS:
            raise ConfigError(f"form must be one of {', '.join(FORMS)}")
        if self.trials < 2:
            raise ConfigError("trials must be at least 2")
        if self.levels < 2:
            raise ConfigError("levels must be at least 2")

    @property
    def N(self):
        return int(round(self.T / self.h))

    def stepper(self):
        return StepperConfig(self.scheme)

    def build(self):
        try:
            return systems.get_system(self.system, **self.params)
        except (SpecError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


RUN_KEYS = {f.name for f in fields(RunConfig)} - {"system", "params"}


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _parse_overrides(tokens):
    """``--table.key value`` / ``--table.key=value`` pairs into nested dicts."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognized argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"missing value for {tok}")
            i += 1
            value = tokens[i]
        table, _, name = key.partition(".")
        if table not in ("system", "run") or not name:
            raise ConfigError(f"override {tok!r} must be --system.<key> or --run.<key>")
        out.setdefault(table, {})[name.replace("-", "_")] = _parse_value(value)
        i += 1
    return out


def _coerce(key, value):
    kind = type(getattr(RunConfig(), key))
    if kind is bool:
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes", "on")
        return bool(value)
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r} for run.{key}") from None


def load_config(args, extra, command):
    """Merge defaults, TOML file, flags, and dotted overrides (in that order)."""
    run, params = {}, {}
    defaults = {"mc": {}, "compare": {"trials": 50, "h": 2e-3}}.get(command, {})
    run.update(defaults)
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                doc = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {args.config}: {exc}") from exc
        unknown = set(doc) - {"system", "run"}
        if unknown:
            raise ConfigError(f"unknown config table(s) {sorted(unknown)}")
        sys_table = dict(doc.get("system", {}))
        if "name" in sys_table:
            run["system"] = sys_table.pop("name")
        params.update(sys_table)
        run.update(doc.get("run", {}))
    for key in ("system", "T", "h", "seed", "trials", "scheme", "out"):
        val = getattr(args, key, None)
        if val is not None:
            run[key] = val
    over = _parse_overrides(extra)
    sys_over = dict(over.get("system", {}))
    if "name" in sys_over:
        run["system"] = sys_over.pop("name")
    params.update(sys_over)
    run.update(over.get("run", {}))
    unknown = set(run) - RUN_KEYS - {"system"}
    if unknown:
        raise ConfigError(f"unknown run key(s) {sorted(unknown)}")
    values = {k: (_coerce(k, v) if k in RUN_KEYS else v) for k, v in run.items()}
    cfg = replace(RunConfig(), params=params, **values)
    cfg.validate()
    return cfg


def _write(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _path(cfg, pair):
    path = drivers.make_time_brownian(cfg.seed, cfg.h, cfg.N, pair.k)
    return drivers.zero_noise(path) if cfg.zero_noise else path


# -------------------------------------------------------------- commands


def cmd_simulate(cfg):
    pair = cfg.build()
    path = _path(cfg, pair)
    s0 = pair.initial_state()
    if cfg.model == "reduced":
        traj = mechanics.integrate_reduced(pair.reduced, s0, path, cfg.stepper(), form=cfg.form)
        write = lambda fh: mechanics.write_reduced_csv(traj, fh)
    else:
        u0 = mechanics.lift_state(pair.reduced, pair.unreduced, s0)
        traj = mechanics.integrate_unreduced(pair.unreduced, u0, path, cfg.stepper())
        write = lambda fh: mechanics.write_unreduced_csv(pair.unreduced, traj, fh)
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            write(fh)
    else:
        write(sys.stdout)
    return EXIT_OK


def cmd_compare(cfg, min_order=0.75):
    pair = cfg.build()
    h_fine = cfg.h / 2 ** (cfg.levels - 1)
    N = int(round(cfg.T / h_fine))
    path = drivers.make_trial_paths(cfg.seed, cfg.trials, h_fine, N, pair.k)
    if cfg.zero_noise:
        path = drivers.zero_noise(path)
    report = verify.compare_reduced_unreduced(pair, path, cfg.levels, cfg.stepper(), cfg.form)
    print(report.summary())
    if cfg.out:
        _write(report.to_csv(), cfg.out)
    if report.passed(min_order):
        exact = np.max(report.errors) <= 1e-12
        print("PASS (agreement at roundoff level)" if exact else "PASS")
        return EXIT_OK
    print(
        f"FAIL: fitted order {report.fitted_order:.3f} < {min_order} "
        f"(errors {', '.join(f'{e:.2e}' for e in report.errors)}); "
        "the reduced and unreduced runs do not converge together at first order",
        file=sys.stderr,
    )
    return EXIT_FAIL


def _mc_observable(cfg, pair):
    """Return ``(name, observable, reference(times))`` for the system."""
    name = cfg.observable or {"rotor": "y", "charged-particle": "larmor"}.get(pair.name, "")
    if name == "y" and pair.name == "rotor":
        y0 = float(pair.initial_state().y[0])
        return name, lambda s: s.y[..., 0], lambda t: np.full((len(t), 1), y0)
    if name == "larmor" and pair.name == "charged-particle":
        p = pair.params

        def reference(t):
            x, u = systems.larmor(pair.x0, pair.u0, p.B, p.e_over_c, t)
            return np.concatenate([x, u], axis=-1)

        return name, lambda s: np.concatenate([s.x, s.u], axis=-1), reference
    raise ConfigError(f"no Monte Carlo criterion registered for system {pair.name!r} and observable {name!r}")


def cmd_mc(cfg):
    pair = cfg.build()
    name, obs, reference = _mc_observable(cfg, pair)
    labels = ("x_0", "x_1", "x_2", "u_0", "u_1", "u_2") if name == "larmor" else name
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = verify.monte_carlo(pair, obs, cfg.trials, cfg.h, cfg.T, cfg.seed, name=labels,
                                    slices=10, cfg=cfg.stepper(), form=cfg.form)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    ref = reference(report.times)
    print(report.summary(ref))
    if cfg.out:
        _write(report.to_csv(), cfg.out)
    ok = report.within(ref, 3.0)
    print("PASS" if ok else "FAIL: ensemble mean deviates by more than 3 standard errors")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_check(cfg, inject_fault=False):
    pair = cfg.build()
    if inject_fault:
        pair = _corrupt_gradient(pair)
    results = verify.run_checks(pair, seed=cfg.seed, h=cfg.h, T=cfg.T, cfg=cfg.stepper())
    print(verify.format_checks(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def _corrupt_gradient(pair):
    """Negative control: perturb dl/du by 1e-2 so the gradient check must fail."""
    grad = pair.reduced.ell_grad

    def bad(x, u, z):
        lx, lu, lz = grad(x, u, z)
        return lx, lu + 1e-2, lz

    return replace(pair, reduced=replace(pair.reduced, ell_grad=bad))


# ------------------------------------------------------------------ main


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--system", help=f"system name ({', '.join(sorted(systems.REGISTRY))}; "
                                         "rotor cases as rotor-case1..3)")
    common.add_argument("--T", type=float, help="final time")
    common.add_argument("--h", type=float, help="step size (coarsest level for compare)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--trials", type=int, help="Monte Carlo trials / coupled paths")
    common.add_argument("--scheme", choices=SCHEMES, help="time stepper")
    common.add_argument("--out", help="output CSV path (default: stdout for simulate)")
    common.add_argument("--config", help="TOML file with [system] and [run] tables")

    parser = argparse.ArgumentParser(
        prog="lpstoch",
        description="Stochastic Lagrange-Poincare simulation and verification.",
        epilog="Any config key can be overridden as --system.<key> VALUE or --run.<key> VALUE.",
    )
    sub = parser.add_subparsers(dest="command")
    sub.add_parser("simulate", parents=[common], help="integrate one path and write a trajectory CSV")
    sub.add_parser("compare", parents=[common], help="reduced vs unreduced convergence study")
    sub.add_parser("mc", parents=[common], help="Monte Carlo check of a registered mean-dynamics criterion")
    check = sub.add_parser("check", parents=[common], help="gradient, Casimir, fiber and action suites")
    check.add_argument("--inject-gradient-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


COMMANDS = {"simulate": cmd_simulate, "compare": cmd_compare, "mc": cmd_mc, "check": cmd_check}


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args, extra, args.command)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"lpstoch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "check":
            return cmd_check(cfg, args.inject_gradient_fault)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"lpstoch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, verify.MonteCarloError) as exc:
        print(f"lpstoch: integrator failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"lpstoch: integrator failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
