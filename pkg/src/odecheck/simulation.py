"""Monte Carlo harness: data generation under null, fixed and local
alternatives, parallel replication and size/power aggregation."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import registry
from .errors import OdeCheckError
from .estimation import NlsConfig, TwoStepConfig, two_step_estimate
from .gof import GmConfig, ImConfig, gm_test, im_test, tm_test
from .ode import OdeModel, rk4_solve, solve_at
from .smoothing import ObservationSet

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


# ---------------------------------------------------------------------------
# Perturbations for local alternatives
# ---------------------------------------------------------------------------


def _sin_cos(t):
    t = np.asarray(t, dtype=float)
    return np.stack([np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)], axis=-1)


def _bump(t):
    t = np.asarray(t, dtype=float)
    b = np.exp(-(((t - 0.5) / 0.15) ** 2))
    return np.stack([b, -b], axis=-1)


def _const(t):
    t = np.asarray(t, dtype=float)
    return np.ones(t.shape + (2,))


# Named so that specs stay picklable for worker processes.
PERTURBATIONS = {"sin-cos": _sin_cos, "bump": _bump, "const": _const}


@dataclass(frozen=True)
class LocalAlternativeSpec:
    family: str = "trajectory"  # or "derivative"
    delta: float = 0.0
    perturbation: str = "sin-cos"

    def __post_init__(self):
        if self.family not in ("trajectory", "derivative"):
            raise ValueError("family must be 'trajectory' or 'derivative'")
        if not self.delta >= 0:
            raise ValueError("delta must be non-negative")
        if self.perturbation not in PERTURBATIONS:
            raise ValueError(f"unknown perturbation {self.perturbation!r}")

    def function(self) -> Callable:
        return PERTURBATIONS[self.perturbation]


@dataclass(frozen=True)
class StudySpec:
    model: str = "study1"
    alpha: float = 0.0
    beta: float = 0.0
    variant: Optional[str] = None  # H11/H12/H13 for the linear family
    n: int = 300
    sigma_eps: float = 0.05
    tau: float = 10.0
    replications: int = 1000
    level: float = 0.05
    seed: int = 0
    tests: tuple = ("TM", "IM1", "IM2", "GM1", "GM2")
    oracle_theta: bool = False
    nls_multistart: int = 1
    x0: Optional[tuple] = None  # overrides the registry initial state
    local_alt: Optional[LocalAlternativeSpec] = None
    im: ImConfig = field(default_factory=ImConfig)
    gm: GmConfig = field(default_factory=GmConfig)

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if not self.sigma_eps >= 0:
            raise ValueError("sigma_eps must be non-negative")
        if self.n < 20:
            raise ValueError("n must be >= 20")
        object.__setattr__(self, "model", registry.get(self.model).key)
        object.__setattr__(self, "tests", tuple(_normalize_test(t) for t in self.tests))
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        p = registry.get(self.model).x0.size
        for name in self.tests:
            if name != "TM" and int(name[2:]) > p:
                raise ValueError(f"{name}: model has only {p} components")

    def initial_state(self):
        entry = registry.get(self.model)
        return entry.x0 if self.x0 is None else np.asarray(self.x0, dtype=float)

    @property
    def hypothesis(self):
        if self.model == "study1":
            return self.variant or "H11"
        return self.model

    def to_dict(self):
        out = asdict(self)
        out["tests"] = list(self.tests)
        out["x0"] = [float(v) for v in self.initial_state()]
        return out


def _normalize_test(name):
    name = str(name).upper()
    if name == "TM" or (name[:2] in ("IM", "GM") and name[2:].isdigit() and int(name[2:]) >= 1):
        return name
    raise ValueError(f"unknown test {name!r}; use TM, IM<k> or GM<k>")


# ---------------------------------------------------------------------------
# Data generation
# ---------------------------------------------------------------------------


def _derivative_perturbed(model: OdeModel, delta, l_fun) -> OdeModel:
    base = model.rhs

    def rhs(t, x, theta, consts):
        return base(t, x, theta, consts) + delta * l_fun(t)

    return OdeModel(
        name=model.name + "-local",
        p=model.p,
        q=model.q,
        rhs=rhs,
        consts=model.consts,
        theta_bounds=model.theta_bounds,
        param_names=model.param_names,
        state_names=model.state_names,
    )


def rep_seeds(master_seed, rep):
    """Independent integer seeds (data, split) for one replication."""
    state = np.random.SeedSequence([int(master_seed), int(rep)]).generate_state(2, dtype=np.uint64)
    return int(state[0]), int(state[1])


def generate_dataset(spec: StudySpec, local_alt: Optional[LocalAlternativeSpec] = None, rep_seed=0) -> ObservationSet:
    """Uniform design on [0, 1], true trajectory by RK4, Gaussian noise."""
    entry = registry.get(spec.model)
    local_alt = local_alt if local_alt is not None else spec.local_alt
    truth = entry.truth(spec.alpha, spec.beta, spec.variant, spec.tau)
    rng = np.random.default_rng(rep_seed)
    t = np.sort(rng.uniform(0.0, 1.0, spec.n))
    eps = rng.normal(0.0, 1.0, (spec.n, truth.p)) * spec.sigma_eps
    if local_alt is not None and local_alt.family == "derivative" and local_alt.delta != 0.0:
        truth = _derivative_perturbed(truth, local_alt.delta, local_alt.function())
    x = solve_at(truth, entry.theta0, spec.initial_state(), t, t0=0.0, span=(0.0, 1.0))
    if local_alt is not None and local_alt.family == "trajectory":
        x = x + local_alt.delta * local_alt.function()(t)
    return ObservationSet(t, x + eps, span=(0.0, 1.0), names=entry.model.state_names)


# ---------------------------------------------------------------------------
# Replications
# ---------------------------------------------------------------------------


def run_replication(spec: StudySpec, rep: int) -> dict:
    """Statistic, decision or error kind for every configured test."""
    entry = registry.get(spec.model)
    model = entry.null_model(spec.tau)
    data_seed, split_seed = rep_seeds(spec.seed, rep)
    out = {}
    try:
        data = generate_dataset(spec, rep_seed=data_seed)
    except OdeCheckError as exc:
        return {name: {"error": type(exc).__name__} for name in spec.tests}
    theta_ts = {}
    for name in spec.tests:
        try:
            if name == "TM":
                report = tm_test(
                    data,
                    model,
                    spec.initial_state(),
                    NlsConfig(multistart=spec.nls_multistart, seed=data_seed % (2**32)),
                    theta_hat=entry.theta0 if spec.oracle_theta else None,
                    theta_init=entry.theta0,
                    level=spec.level,
                )
            else:
                k = int(name[2:]) - 1
                if k not in theta_ts:
                    if spec.oracle_theta:
                        theta_ts[k] = entry.theta0
                    else:
                        theta_ts[k] = two_step_estimate(
                            model, data, TwoStepConfig(component=k), theta_init=entry.theta0
                        ).theta_hat
                if name.startswith("IM"):
                    report = im_test(data, model, k, spec.im, theta_hat=theta_ts[k], level=spec.level)
                else:
                    gm_cfg = GmConfig(**{**asdict(spec.gm), "split_seed": split_seed})
                    report = gm_test(data, model, k, gm_cfg, theta_hat=theta_ts[k], level=spec.level)
            out[name] = {"statistic": float(report.statistic), "reject": bool(report.reject)}
        except OdeCheckError as exc:
            out[name] = {"error": type(exc).__name__}
            if name != "TM":
                theta_ts.setdefault(int(name[2:]) - 1, None)
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            out[name] = {"error": type(exc).__name__}
    return out


def _run_chunk(args):
    spec, reps = args
    return [(rep, run_replication(spec, rep)) for rep in reps]


@dataclass
class TestSummary:
    __test__ = False

    rate: float
    se: float
    rejections: int
    completed: int
    failed: int
    failures: dict
    mean: float
    quantiles: dict

    def to_dict(self):
        return asdict(self)


@dataclass
class MonteCarloReport:
    spec: StudySpec
    summaries: dict
    statistics: dict = field(repr=False, default_factory=dict)
    wall_clock: float = 0.0
    threads: int = 1
    backend: str = ""

    def rate(self, test):
        return self.summaries[test].rate

    def to_dict(self):
        # wall-clock and thread count are left out so the serialized report
        # depends on the seed alone
        return {
            "kind": "monte-carlo",
            "spec": self.spec.to_dict(),
            "hypothesis": self.spec.hypothesis,
            "tests": {name: s.to_dict() for name, s in self.summaries.items()},
        }


def summarize(name, results, replications) -> TestSummary:
    stats, rejects, failures = [], 0, {}
    for res in results:
        entry = res[name]
        if "error" in entry:
            failures[entry["error"]] = failures.get(entry["error"], 0) + 1
            continue
        stats.append(entry["statistic"])
        rejects += int(entry["reject"])
    done = len(stats)
    rate = rejects / done if done else float("nan")
    se = math.sqrt(rate * (1.0 - rate) / done) if done else float("nan")
    arr = np.asarray(stats)
    quant = {f"q{int(round(q * 100)):02d}": (float(np.quantile(arr, q)) if done else float("nan")) for q in QUANTILES}
    return TestSummary(
        rate=rate,
        se=se,
        rejections=rejects,
        completed=done,
        failed=replications - done,
        failures=dict(sorted(failures.items())),
        mean=float(arr.mean()) if done else float("nan"),
        quantiles=quant,
    )


def run_study(spec: StudySpec, threads: int = 1, progress: Optional[Callable] = None) -> MonteCarloReport:
    """Run all replications; per-rep seeds come from (master seed, rep index)."""
    from ._accel import backend_name

    start = time.perf_counter()
    reps = list(range(spec.replications))
    threads = max(1, int(threads))
    if threads == 1:
        pairs = []
        for rep in reps:
            pairs.append((rep, run_replication(spec, rep)))
            if progress is not None:
                progress(rep + 1, spec.replications)
    else:
        chunks = [reps[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            pairs = [pair for chunk in pool.map(_run_chunk, [(spec, c) for c in chunks]) for pair in chunk]
    pairs.sort(key=lambda pr: pr[0])
    results = [res for _, res in pairs]
    summaries = {name: summarize(name, results, spec.replications) for name in spec.tests}
    statistics = {
        name: np.array([res[name].get("statistic", np.nan) for res in results]) for name in spec.tests
    }
    return MonteCarloReport(
        spec=spec,
        summaries=summaries,
        statistics=statistics,
        wall_clock=time.perf_counter() - start,
        threads=threads,
        backend=backend_name(),
    )


# ---------------------------------------------------------------------------
# Local-alternative equivalence
# ---------------------------------------------------------------------------


@dataclass
class LocalAltRow:
    delta: float
    residual: float
    scaled: float  # residual / delta
    ratio: Optional[float]  # residual / residual at the previous (larger) delta


@dataclass
class LocalAltDiagnostic:
    rows: list
    passed: bool
    floor: float
    v1_max: float

    def to_dict(self):
        return {
            "kind": "local-alternative",
            "passed": self.passed,
            "floor": self.floor,
            "v1_max": self.v1_max,
            "rows": [asdict(r) for r in self.rows],
        }


def _state_jacobian(model, t, x, theta, rel_step=1e-6):
    p = model.p
    jac = np.empty((p, p))
    for j in range(p):
        step = rel_step * max(abs(x[j]), 1.0)
        up, dn = x.copy(), x.copy()
        up[j] += step
        dn[j] -= step
        jac[:, j] = (model.f(t, up, theta) - model.f(t, dn, theta)) / (2 * step)
    return jac


def _num_deriv(fun, t, step=1e-5):
    return (fun(t + step) - fun(t - step)) / (2 * step)


def verify_local_alt_equivalence(
    model: OdeModel,
    theta0,
    x0,
    L: Callable,
    L_prime: Optional[Callable] = None,
    deltas: Sequence[float] = (1e-2, 1e-3, 1e-4),
    grid=None,
    ratio_max: float = 0.15,
    floor_rel: float = 1e-6,
) -> LocalAltDiagnostic:
    """Check that X = F + delta L solves X' = f(X) + delta v1 + o(delta).

    With F' = f(F) from the solver and L' (numerical unless given), the
    residual r(delta) = max |f(F) + delta L' - f(F + delta L) - delta v1| with
    v1 = L' - (df/dX)(F) L must shrink faster than delta. Each decade step
    must cut r by ``ratio_max`` unless r/delta is already at roundoff level.
    """
    grid = np.linspace(0.0, 1.0, 201) if grid is None else np.asarray(grid, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    traj = rk4_solve(model, theta0, x0, grid)
    F = traj.states
    fF = traj.derivs
    Lv = np.asarray(L(grid), dtype=float).reshape(grid.size, model.p)
    if L_prime is None:
        Lp = np.asarray(_num_deriv(L, grid), dtype=float).reshape(grid.size, model.p)
    else:
        Lp = np.asarray(L_prime(grid), dtype=float).reshape(grid.size, model.p)
    v1 = np.empty_like(Lv)
    for i, ti in enumerate(grid):
        v1[i] = Lp[i] - _state_jacobian(model, ti, F[i], theta0) @ Lv[i]
    floor = floor_rel * (float(np.max(np.abs(fF))) + 1.0) * (float(np.max(np.abs(Lv))) + 1.0)
    rows = []
    prev = None
    passed = True
    for delta in sorted(deltas, reverse=True):
        X = F + delta * Lv
        fX = model.f_batch(grid, X, theta0)
        resid = float(np.max(np.abs(fF + delta * Lp - fX - delta * v1)))
        ratio = None if prev is None or prev == 0.0 else resid / prev
        scaled = resid / delta if delta > 0 else 0.0
        if ratio is not None and ratio > ratio_max and scaled > floor:
            passed = False
        rows.append(LocalAltRow(delta=float(delta), residual=resid, scaled=scaled, ratio=ratio))
        prev = resid
    return LocalAltDiagnostic(rows=rows, passed=passed, floor=floor, v1_max=float(np.max(np.abs(v1))))
