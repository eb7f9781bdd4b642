"""``odecheck`` command line: test, estimate, simulate, verify-local-alt, registry."""

from __future__ import annotations

import argparse
import importlib.util
import sys
from pathlib import Path

import numpy as np

from . import io, registry
from .errors import OdeCheckError
from .estimation import NlsConfig, TwoStepConfig, nls_estimate, trajectory_values, two_step_estimate
from .gof import GmConfig, ImConfig, default_h0, gm_test, im_test, tm_test
from .ode import OdeModel
from .simulation import PERTURBATIONS, LocalAlternativeSpec, StudySpec, run_study, verify_local_alt_equivalence
from .smoothing import local_linear

EXIT_OK, EXIT_USAGE, EXIT_COMPUTE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors print full help to stderr and exit with status 1."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"\n{self.prog}: error: {message}\n")


# -- argument types: range-checked before any computation ---------------------


def positive_float(text):
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not val > 0 or not np.isfinite(val):
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return val


def nonneg_float(text):
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not val >= 0 or not np.isfinite(val):
        raise argparse.ArgumentTypeError(f"must be non-negative: {text!r}")
    return val


def unit_open(text):
    val = positive_float(text)
    if val >= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1): {text!r}")
    return val


def fraction(text):
    val = nonneg_float(text)
    if val > 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1]: {text!r}")
    return val


def ramp_fraction(text):
    val = positive_float(text)
    if val >= 0.5:
        raise argparse.ArgumentTypeError(f"must lie in (0, 0.5): {text!r}")
    return val


def positive_int(text):
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return val


def seed_int(text):
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if val < 0:
        raise argparse.ArgumentTypeError(f"seed must be non-negative: {text!r}")
    return val


def finite_float(text):
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not np.isfinite(val):
        raise argparse.ArgumentTypeError(f"must be finite: {text!r}")
    return val


# -- model resolution -----------------------------------------------------------


class ResolvedModel:
    def __init__(self, model: OdeModel, x0=None, theta0=None, key=None):
        self.model = model
        self.x0 = None if x0 is None else np.asarray(x0, dtype=float)
        self.theta0 = None if theta0 is None else np.asarray(theta0, dtype=float)
        self.key = key


def resolve_model(spec: str) -> ResolvedModel:
    """Registry key, or a Python file defining ``MODEL`` (optionally ``X0``, ``THETA0``)."""
    path = Path(spec)
    if spec.endswith(".py"):
        if not path.is_file():
            raise UsageError(f"model file not found: {spec}")
        mod_spec = importlib.util.spec_from_file_location(f"odecheck_user_{path.stem}", path)
        module = importlib.util.module_from_spec(mod_spec)
        mod_spec.loader.exec_module(module)
        model = getattr(module, "MODEL", None)
        if not isinstance(model, OdeModel):
            raise UsageError(f"{spec} must define MODEL as an OdeModel")
        return ResolvedModel(model, getattr(module, "X0", None), getattr(module, "THETA0", None), key=str(path))
    try:
        entry = registry.get(spec)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    return ResolvedModel(entry.null_model(), entry.x0, entry.theta0, key=entry.key)


def _vector(values, size, what):
    if values is None:
        return None
    if len(values) != size:
        raise UsageError(f"{what} needs {size} values, got {len(values)}")
    return np.asarray(values, dtype=float)


def _components(arg, p):
    if arg is None:
        return list(range(p))
    if not 1 <= arg <= p:
        raise UsageError(f"--component must lie in 1..{p}")
    return [arg - 1]


# -- subcommands ----------------------------------------------------------------


def cmd_registry(args):
    for key in registry.keys():
        entry = registry.get(key)
        if args.list:
            print(key)
        else:
            print(f"{key}\t{entry.description}")
    return EXIT_OK


def _load_data(args, model):
    data = io.ingest_csv(args.data, min_n=args.min_n)
    if data.p != model.p:
        raise UsageError(f"{args.data} has {data.p} state columns, model {model.name} has {model.p}")
    return data


def _write(text, args):
    if args.output:
        try:
            Path(args.output).write_text(text)
        except OSError as exc:
            raise io.IoError(f"cannot write {args.output}: {exc}") from exc
    else:
        sys.stdout.write(text)


def cmd_test(args):
    if args.restrict and not args.restrict[0] < args.restrict[1]:
        raise UsageError("--restrict needs A < B")
    rm = resolve_model(args.model)
    model = rm.model
    data = _load_data(args, model)
    which = ["tm", "im", "gm"] if args.test == "all" else [args.test]
    if args.h is not None and len(which) > 1:
        raise UsageError("--h applies to a single test; choose one with --test")
    comps = _components(args.component, model.p)
    x0 = _vector(args.x0, model.p, "--x0")
    x0 = rm.x0 if x0 is None else x0
    theta_init = _vector(args.theta_init, model.q, "--theta-init")
    theta_init = rm.theta0 if theta_init is None else theta_init
    ts_cfg = TwoStepConfig(
        m=args.m,
        h_e=args.h_e,
        delta_w=args.delta_w,
        seed=args.seed,
    )
    reports = []
    tm_theta = None
    if "tm" in which:
        if x0 is None:
            raise UsageError("the trajectory-matching test needs --x0 for this model")
        nls_cfg = NlsConfig(multistart=args.multistart, seed=args.seed)
        rep = tm_test(data, model, x0, nls_cfg, h=args.h, theta_init=theta_init, level=args.level)
        tm_theta = rep.theta_hat
        reports.append(rep)
    for k in comps:
        if "im" in which:
            im_cfg = ImConfig(
                h=args.h,
                h0=args.h0,
                adjusted=not args.plain,
                n_l=args.n_l,
                restrict=tuple(args.restrict) if args.restrict else (None if args.plain else (0.1, 0.9)),
            )
            reports.append(im_test(data, model, k, im_cfg, two_step_config=ts_cfg, theta_init=theta_init, level=args.level))
        if "gm" in which:
            gm_cfg = GmConfig(c=args.c, h=args.h, h0=args.h0, h1=args.h1, split_seed=args.seed)
            reports.append(gm_test(data, model, k, gm_cfg, two_step_config=ts_cfg, theta_init=theta_init, level=args.level))
    if args.plot_data:
        grid = np.linspace(data.span[0], data.span[1], args.grid_size)
        xhat = local_linear(data, tuple(default_h0(data) if args.h0 is None else np.broadcast_to(args.h0, (data.p,))))(grid)
        cols = [np.asarray(xhat).reshape(grid.size, data.p)]
        names = [f"Xhat_{s}" for s in data.names]
        if tm_theta is not None:
            cols.append(trajectory_values(model, tm_theta, x0, grid, data.span))
            names += [f"F_{s}" for s in data.names]
        io.write_plot_data(args.plot_data, grid, np.hstack(cols), names)
    config = {
        "command": "test",
        "model": rm.key,
        "data": str(args.data),
        "tests": which,
        "components": [k + 1 for k in comps],
        "seed": args.seed,
        "level": args.level,
    }
    payload = reports[0] if len(reports) == 1 else reports
    _write(io.render(payload, args.format, config if args.format == "json" else None), args)
    return EXIT_OK


def cmd_estimate(args):
    rm = resolve_model(args.model)
    model = rm.model
    data = _load_data(args, model)
    x0 = _vector(args.x0, model.p, "--x0")
    x0 = rm.x0 if x0 is None else x0
    theta_init = _vector(args.theta_init, model.q, "--theta-init")
    theta_init = rm.theta0 if theta_init is None else theta_init
    if args.method == "nls":
        if x0 is None:
            raise UsageError("nonlinear least squares needs --x0 for this model")
        cfg = NlsConfig(multistart=args.multistart, seed=args.seed)
        result = nls_estimate(model, data, x0, cfg, theta_init=theta_init)
    else:
        k = _components(args.component if args.component is not None else 1, model.p)[0]
        cfg = TwoStepConfig(
            component=k, m=args.m, h_e=args.h_e, delta_w=args.delta_w, multistart=args.multistart, seed=args.seed
        )
        result = two_step_estimate(model, data, cfg, theta_init=theta_init)
    if args.plot_data:
        start = x0
        if start is None:
            start = np.asarray(local_linear(data, tuple(default_h0(data)))(data.span[0])).reshape(model.p)
        grid = np.linspace(data.span[0], data.span[1], args.grid_size)
        traj = trajectory_values(model, result.theta_hat, start, grid, data.span)
        io.write_plot_data(args.plot_data, grid, traj, [f"F_{s}" for s in model.state_names])
    doc = result.to_dict()
    doc["param_names"] = list(model.param_names)
    config = {"command": "estimate", "model": rm.key, "data": str(args.data), "method": args.method, "seed": args.seed}
    _write(io.render(doc, args.format, config if args.format == "json" else None), args)
    return EXIT_OK


def _study_spec(args):
    if args.model is not None and args.study is not None:
        raise UsageError("give either --study or --model, not both")
    key = registry.study_key(args.study) if args.study is not None else (args.model or "study1")
    entry = registry.get(key)
    p = entry.x0.size
    if args.tests:
        tests = tuple(t.strip().upper() for t in args.tests.split(",") if t.strip())
    else:
        tests = ("TM",) + tuple(f"IM{k + 1}" for k in range(p)) + tuple(f"GM{k + 1}" for k in range(p))
    local_alt = None
    if args.local_alt:
        local_alt = LocalAlternativeSpec(args.local_alt, args.delta, args.perturbation)
    im_cfg = ImConfig(h=args.h_im, h0=args.h0, n_l=args.n_l)
    gm_cfg = GmConfig(c=args.c, h=args.h_gm, h0=args.h0, h1=args.h1)
    return StudySpec(
        model=key,
        alpha=args.alpha,
        beta=args.beta,
        variant=args.variant if entry.key == "study1" else None,
        n=args.n,
        sigma_eps=args.sigma,
        tau=args.tau,
        replications=args.reps,
        level=args.level,
        seed=args.seed,
        tests=tests,
        oracle_theta=args.oracle_theta,
        x0=None if args.x0 is None else tuple(_vector(args.x0, p, "--x0")),
        local_alt=local_alt,
        im=im_cfg,
        gm=gm_cfg,
    )


def cmd_simulate(args):
    try:
        spec = _study_spec(args)
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    report = run_study(spec, threads=args.threads)
    print(
        f"{spec.replications} replications in {report.wall_clock:.1f} s, {report.threads} worker(s), {report.backend} kernels",
        file=sys.stderr,
    )
    _write(io.render(report, args.format), args)
    return EXIT_OK


def cmd_verify(args):
    rm = resolve_model(args.model)
    model = rm.model
    theta = _vector(args.theta, model.q, "--theta")
    theta = rm.theta0 if theta is None else theta
    x0 = _vector(args.x0, model.p, "--x0")
    x0 = rm.x0 if x0 is None else x0
    if theta is None or x0 is None:
        raise UsageError("--theta and --x0 are required for this model")
    base = PERTURBATIONS[args.perturbation]

    def L(t):
        # the two-column perturbations are cycled to fill p components
        v = base(t)
        return np.tile(v, (1, -(-model.p // 2)))[:, : model.p]
    diag = verify_local_alt_equivalence(model, theta, x0, L, deltas=tuple(args.deltas))
    _write(io.render(diag, args.format), args)
    return EXIT_OK if diag.passed else EXIT_COMPUTE


# -- parser ---------------------------------------------------------------------


def _common_output(p):
    p.add_argument("--format", choices=io.FORMATS, default="json")
    p.add_argument("--output", "-o", help="write the report here instead of stdout")


def _smoothing_overrides(p):
    p.add_argument("--h0", type=positive_float, help="state smoothing bandwidth (all components)")
    p.add_argument("--h1", type=positive_float, help="derivative smoothing bandwidth (gradient matching)")
    p.add_argument("--h-e", dest="h_e", type=positive_float, help="two-step smoothing bandwidth")
    p.add_argument("--m", type=positive_int, help="two-step pseudo-grid size")
    p.add_argument("--delta-w", dest="delta_w", type=ramp_fraction, default=0.1, help="weight ramp fraction")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="odecheck", description="Goodness-of-fit tests and estimators for ODE models.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("registry", help="list the built-in models")
    p.add_argument("--list", action="store_true", help="print keys only")
    p.set_defaults(func=cmd_registry)

    p = sub.add_parser("test", help="run goodness-of-fit tests on a CSV dataset")
    p.add_argument("--model", required=True, help="registry key or Python file defining MODEL")
    p.add_argument("--data", required=True, help="CSV with header t,y1,...,yp")
    p.add_argument("--test", choices=("tm", "im", "gm", "all"), default="all")
    p.add_argument("--component", type=positive_int, help="1-based component (default: all)")
    p.add_argument("--x0", type=finite_float, nargs="+", help="initial state at the first time point")
    p.add_argument("--theta-init", dest="theta_init", type=finite_float, nargs="+")
    p.add_argument("--h", type=positive_float, help="test bandwidth")
    _smoothing_overrides(p)
    p.add_argument("--c", type=positive_float, help="bias-term gain for gradient matching")
    p.add_argument("--n-l", dest="n_l", type=positive_int, default=8, help="sub-intervals for adjusted IM")
    p.add_argument("--restrict", type=fraction, nargs=2, metavar=("A", "B"), help="IM span restriction as fractions")
    p.add_argument("--plain", action="store_true", help="unadjusted integral-matching statistic")
    p.add_argument("--multistart", type=positive_int, default=8)
    p.add_argument("--level", type=unit_open, default=0.05)
    p.add_argument("--seed", type=seed_int, default=0)
    p.add_argument("--min-n", dest="min_n", type=positive_int, default=5)
    p.add_argument("--plot-data", dest="plot_data", help="write smoothed and fitted curves (TSV)")
    p.add_argument("--grid-size", dest="grid_size", type=positive_int, default=201)
    _common_output(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("estimate", help="estimate parameters from a CSV dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("nls", "twostep"), default="nls")
    p.add_argument("--component", type=positive_int, help="1-based component matched by the two-step method")
    p.add_argument("--x0", type=finite_float, nargs="+")
    p.add_argument("--theta-init", dest="theta_init", type=finite_float, nargs="+")
    _smoothing_overrides(p)
    p.add_argument("--multistart", type=positive_int, default=8)
    p.add_argument("--seed", type=seed_int, default=0)
    p.add_argument("--min-n", dest="min_n", type=positive_int, default=5)
    p.add_argument("--plot-data", dest="plot_data", help="write the fitted trajectory (TSV)")
    p.add_argument("--grid-size", dest="grid_size", type=positive_int, default=201)
    _common_output(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="Monte Carlo size and power study")
    p.add_argument("--study", type=int, choices=(1, 2, 3))
    p.add_argument("--model", help="registry key (alternative to --study)")
    p.add_argument("--alpha", type=finite_float, default=0.0)
    p.add_argument("--beta", type=finite_float, default=0.0)
    p.add_argument("--variant", choices=tuple(registry.LINEAR_VARIANTS), default="H11")
    p.add_argument("--n", type=positive_int, default=300)
    p.add_argument("--reps", type=positive_int, default=1000)
    p.add_argument("--sigma", type=positive_float, default=0.05)
    p.add_argument("--tau", type=positive_float, default=10.0)
    p.add_argument("--level", type=unit_open, default=0.05)
    p.add_argument("--seed", type=seed_int, default=0)
    p.add_argument("--threads", type=positive_int, default=1)
    p.add_argument("--tests", help="comma-separated subset, e.g. TM,IM1,GM2")
    p.add_argument("--x0", type=finite_float, nargs="+")
    p.add_argument("--oracle-theta", dest="oracle_theta", action="store_true", help="skip estimation, use true parameters")
    p.add_argument("--local-alt", dest="local_alt", choices=("trajectory", "derivative"))
    p.add_argument("--delta", type=nonneg_float, default=0.0)
    p.add_argument("--perturbation", choices=tuple(PERTURBATIONS), default="sin-cos")
    p.add_argument("--h-im", dest="h_im", type=positive_float)
    p.add_argument("--h-gm", dest="h_gm", type=positive_float)
    p.add_argument("--h0", type=positive_float)
    p.add_argument("--h1", type=positive_float)
    p.add_argument("--c", type=positive_float)
    p.add_argument("--n-l", dest="n_l", type=positive_int, default=8)
    _common_output(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-local-alt", help="check the trajectory/derivative local-alternative expansion")
    p.add_argument("--model", default="study1")
    p.add_argument("--theta", type=finite_float, nargs="+")
    p.add_argument("--x0", type=finite_float, nargs="+")
    p.add_argument("--perturbation", choices=tuple(PERTURBATIONS), default="sin-cos")
    p.add_argument("--deltas", type=positive_float, nargs="+", default=[1e-2, 1e-3, 1e-4])
    _common_output(p)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_help(sys.stderr)
        print(f"\nodecheck: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OdeCheckError as exc:
        print(f"odecheck: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
