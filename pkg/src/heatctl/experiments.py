"""Ensembles, decay-rate estimates and checks against the certified bounds."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .certify import CertificationError, GainCertificate, Gammas, certify_gains, gamma_constants
from .dynamics import IncrementStream, path_seed, simulate_coupled
from .kernel import TransformPair, build_transform, solve_kernel, trapezoid_weights
from .scenario import Scenario, ScenarioError
from .spde import SimulationAbort, prepare, run_loop

A_REACTION = 4 * math.pi ** 2 + 1.005
MAX_ABORT_FRACTION = 1e-3
SE_SLACK = 3.0
SLOPE_SLACK = 0.1


class EnsembleAbort(SimulationAbort):
    """Too many paths of an ensemble blew up."""

    def __init__(self, count: int, n: int):
        self.count, self.n = count, n
        ArithmeticError.__init__(self, f"{count} of {n} paths aborted (limit {MAX_ABORT_FRACTION:.1%})")


def scenario_preset(name: str) -> Scenario:
    """Named scenarios.  Fields listed in ``defaults`` are toolkit choices."""
    common = dict(a=f"const {A_REACTION!r}", y0="cos 2", c=1.02, sigma=0.1,
                  A=((0.0, 2.0), (-2.0, 0.0)), C=(1.0, 0.0), L=(-5.0, -1.0))
    if name == "section4":
        return Scenario(name=name, mode="closed", xi0=(1.0, 0.0), m=129, dt=1e-4, T=3.0,
                        defaults=("xi0", "m", "dt", "T"), **common)
    if name == "remark2":
        return Scenario(name=name, mode="open", xi0=(0.0, 0.0), m=129, dt=1e-4, T=1.0,
                        defaults=("m", "dt"), **common)
    if name == "coupledZeta":
        return Scenario(name=name, mode="coupled", xi0=(1.0, 0.0), m=129, dt=1e-3, T=2.0,
                        defaults=("xi0", "m", "dt", "T"), **common)
    raise ScenarioError(f"unknown preset {name!r}; choose section4, remark2 or coupledZeta")


def coupled_initial(scenario: Scenario, tp: TransformPair | None = None) -> tuple[float, np.ndarray]:
    """(Z0, eta0) implied by the field initial condition and the observer/exogenous initial states."""
    if tp is None:
        tp = build_transform(solve_kernel(scenario.a_samples(), scenario.c))
    w = trapezoid_weights(scenario.m)
    z0 = tp.forward @ scenario.y0_samples()
    Z0 = float(np.sum(w * np.cos(np.pi * scenario.x) * z0))
    _, _, L = scenario.matrices()
    eta0 = scenario.theta0_vec() + L[:, 0] * Z0 - np.asarray(scenario.xi0, dtype=float)
    return Z0, eta0


def initial_moments(scenario: Scenario, tp: TransformPair) -> dict:
    """Moments entering the mean-square constants, for deterministic initial data."""
    Z0, eta0 = coupled_initial(scenario, tp)
    _, C, _ = scenario.matrices()
    x = scenario.x
    beta0 = tp.forward @ scenario.y0_samples() + x ** 2 / 2 * float(C[0] @ eta0)
    return {"EZ0sq": Z0 ** 2, "Eeta0sq": float(eta0 @ eta0),
            "Ebeta0sq": float(np.sum(trapezoid_weights(scenario.m) * beta0 ** 2)),
            "max_l_sq": tp.inverse_kernel_max_sq}


def scenario_gammas(scenario: Scenario, cert: GainCertificate | None = None,
                    tp: TransformPair | None = None) -> Gammas:
    if cert is None:
        cert = certify_gains(scenario.plant(), scenario.theta_frac)
    if tp is None:
        tp = build_transform(solve_kernel(scenario.a_samples(), scenario.c))
    return gamma_constants(cert, **initial_moments(scenario, tp))


def fit_decay(times, values, window=None) -> float:
    """Least-squares slope of log(values) against time, over ``window = (t0, t1)``."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise ValueError("times and values differ in shape")
    sel = np.ones(t.shape, dtype=bool) if window is None else (t >= window[0]) & (t <= window[1])
    if sel.sum() < 2:
        raise ValueError("need at least two samples in the window")
    if not np.all(v[sel] > 0):
        raise ValueError("values must be positive on the window")
    return float(np.polyfit(t[sel], np.log(v[sel]), 1)[0])


@dataclass
class Ensemble:
    """Per-time statistics of the squared state norm across paths.

    For field scenarios the norm is the trapezoid L2 norm of y; for the
    coupled scenario it is |Z|^2 + |eta|^2.  ``tail_slopes`` are per-path
    slopes of log of the (unsquared) norm over the last half of the horizon,
    NaN where the norm vanishes.
    """

    scenario: Scenario
    N: int
    master_seed: int
    t: np.ndarray
    mean_norm_sq: np.ndarray
    se: np.ndarray
    tail_slopes: np.ndarray
    aborted: int
    paths_norm_sq: np.ndarray = field(repr=False)
    w_err: np.ndarray | None = field(default=None, repr=False)

    @property
    def ratio(self) -> np.ndarray:
        return self.mean_norm_sq / self.mean_norm_sq[0]

    def to_csv(self, path, bound=None) -> None:
        b = np.full(self.t.shape, np.nan) if bound is None else np.asarray(bound, dtype=float)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,mean_norm_sq,se,bound_value\n")
            for row in zip(self.t, self.mean_norm_sq, self.se, b):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _tail_slopes(t, paths_norm_sq) -> np.ndarray:
    T = t[-1]
    sel = t >= T / 2
    out = np.full(paths_norm_sq.shape[1], np.nan)
    for i in range(out.size):
        v = paths_norm_sq[sel, i]
        if np.all(v > 0) and np.all(np.isfinite(v)):
            out[i] = 0.5 * fit_decay(t[sel], v)
    return out


def _threads() -> int:
    env = os.environ.get("HEATCTL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ScenarioError(f"HEATCTL_THREADS must be an integer, got {env!r}") from None
    return min(8, os.cpu_count() or 1)


def _field_batch(setup, mode, seeds):
    sc = setup.scenario
    stream = IncrementStream(seeds, sc.dt)
    tr = run_loop(setup, stream.draw, len(seeds), mode, sc.record_every, raise_on_abort=False)
    w_err = np.abs(tr.w_hat - tr.w) if mode == "closed" else None
    return tr.t, tr.norm_sq, tr.aborted, w_err


def _coupled_batch(sc, spec, Z0, eta0, seeds):
    stream = IncrementStream(seeds, sc.dt)
    n = len(seeds)
    dB = stream.draw(sc.steps)
    X = simulate_coupled(np.full(n, Z0), np.repeat(eta0[:, None], n, axis=1), spec, sc.dt, sc.T, dB)
    idx = list(range(0, sc.steps + 1, sc.record_every))
    if idx[-1] != sc.steps:
        idx.append(sc.steps)
    X = X[idx]
    ns = np.sum(X * X, axis=1)
    bad = ~np.all(np.isfinite(ns), axis=0)
    ns[:, bad] = np.nan
    return np.array(idx, dtype=float) * sc.dt, ns, bad, None


def run_ensemble(scenario: Scenario, N: int, master_seed: int = 0, batch: int = 250,
                 threads: int | None = None) -> Ensemble:
    """N independent paths seeded by (master_seed, i), aggregated in path order."""
    if int(N) != N or N < 2:
        raise ValueError(f"ensembles need N >= 2 paths, got {N}")
    scenario.validate()
    seeds = [path_seed(master_seed, i) for i in range(N)]
    blocks = [seeds[i:i + batch] for i in range(0, N, batch)]
    if scenario.mode == "coupled":
        spec = scenario.plant()
        Z0, eta0 = coupled_initial(scenario)
        work = lambda s: _coupled_batch(scenario, spec, Z0, eta0, s)  # noqa: E731
    else:
        setup = prepare(scenario)
        work = lambda s: _field_batch(setup, scenario.mode, s)  # noqa: E731
    nthreads = threads or _threads()
    if nthreads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]
    t = results[0][0]
    ns = np.concatenate([r[1] for r in results], axis=1)
    aborted = np.concatenate([r[2] for r in results])
    n_ab = int(aborted.sum())
    if n_ab > MAX_ABORT_FRACTION * N:
        raise EnsembleAbort(n_ab, N)
    good = ns[:, ~aborted]
    mean = good.mean(axis=1)
    se = good.std(axis=1, ddof=1) / math.sqrt(good.shape[1])
    w_err = None
    if results[0][3] is not None:
        w_err = np.concatenate([r[3] for r in results], axis=1)[:, ~aborted]
    return Ensemble(scenario=scenario, N=N, master_seed=master_seed, t=t, mean_norm_sq=mean, se=se,
                    tail_slopes=_tail_slopes(t, good), aborted=n_ab, paths_norm_sq=good, w_err=w_err)


@dataclass(frozen=True)
class BoundReport:
    kind: str
    verdict: str
    theta_star: float = math.nan
    gamma_star: float = math.nan
    max_margin: float = math.nan
    slope_threshold: float = math.nan
    as_fraction: float = math.nan
    bound: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_text(self) -> str:
        keys = ("kind", "verdict", "theta_star", "gamma_star", "max_margin", "slope_threshold",
                "as_fraction")
        lines = []
        for k in keys:
            v = getattr(self, k)
            lines.append(f"{k}={v if isinstance(v, str) else repr(float(v))}")
        return "\n".join(lines) + "\n"


def _margin(mean, bound, se) -> float:
    diff = mean - bound
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(se > 0, diff / np.where(se > 0, se, 1.0),
                     np.where(diff > 0, np.inf, -np.inf))
    return float(np.max(m))


def _matches(cert: GainCertificate, sc: Scenario) -> bool:
    A, C, L = sc.matrices()
    return (math.isclose(cert.c, sc.c, rel_tol=1e-12) and math.isclose(cert.sigma, sc.sigma, abs_tol=1e-15)
            and np.array_equal(cert.A, A) and np.array_equal(cert.C, C) and np.array_equal(cert.L, L))


def check_bound(ensemble: Ensemble, cert: GainCertificate | None = None,
                gammas: Gammas | None = None) -> BoundReport:
    """Compare an ensemble against its certified mean-square and almost-sure rates.

    Closed-loop field ensembles are checked against Gamma* exp(-theta* t) and
    the slope -theta*/2; coupled ensembles against the Lyapunov bound
    (lambda_max/lambda_min) E0 exp(-rate t) and the slope -rate/2.  Scenarios
    whose gains do not certify come back with verdict "uncertified".
    """
    sc = ensemble.scenario
    if sc.mode not in ("closed", "coupled"):
        return BoundReport(kind=sc.mode, verdict="unchecked")
    if cert is None:
        try:
            cert = certify_gains(sc.plant(), sc.theta_frac)
        except CertificationError:
            return BoundReport(kind=sc.mode, verdict="uncertified")
    elif not _matches(cert, sc):
        raise ValueError("certificate does not belong to the ensemble's scenario")
    t = ensemble.t
    if sc.mode == "closed":
        if gammas is None:
            gammas = scenario_gammas(sc, cert)
        rate, pref = cert.theta_star, gammas.gamma_star
    else:
        rate = cert.rate_Ze
        pref = cert.cond * ensemble.mean_norm_sq[0]
    bound = pref * np.exp(-rate * t)
    margin = _margin(ensemble.mean_norm_sq, bound, ensemble.se)
    thr = -rate / 2 + SLOPE_SLACK
    slopes = ensemble.tail_slopes
    defined = slopes[np.isfinite(slopes)]
    frac = 1.0 if defined.size == 0 else float(np.mean(defined <= thr))
    ok = margin <= SE_SLACK and frac >= 0.95
    return BoundReport(kind=sc.mode, verdict="pass" if ok else "fail", theta_star=rate,
                       gamma_star=pref, max_margin=margin, slope_threshold=thr, as_fraction=frac,
                       bound=bound)


def energy_envelope(z_ensemble: Ensemble, w_tilde_sq_mean, c: float, sigma: float,
                    eps: float = 0.5) -> np.ndarray:
    """(E|z0|^2 + (1/eps) int_0^t E w~^2) max(1, exp((sigma^2 - 2c + 2 eps) t)) on the ensemble grid.

    ``w_tilde_sq_mean`` is E w~^2 on the same grid; the time integral uses the trapezoid rule.
    """
    t = z_ensemble.t
    f = np.asarray(w_tilde_sq_mean, dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(np.diff(t) * (f[1:] + f[:-1]) / 2)])
    growth = np.maximum(1.0, np.exp((sigma ** 2 - 2 * c + 2 * eps) * t))
    return (z_ensemble.mean_norm_sq[0] + cum / eps) * growth


def compare_open_closed(scenario: Scenario, N: int, master_seed: int = 0,
                        T_open: float | None = None) -> tuple[Ensemble, Ensemble]:
    """Open and closed loop on common random numbers (same seeds, same increments)."""
    closed = run_ensemble(scenario.replace(mode="closed"), N, master_seed)
    op = scenario.replace(mode="open", T=T_open or scenario.T)
    return run_ensemble(op, N, master_seed), closed
