"""Stochastic heat equation with Neumann actuation, measurements and the DOBC loop.

Spatial discretization: uniform nodes x_i = i h, second differences with a
mirrored ghost node at both ends (y_x(0) = 0; y_x(1) = g adds 2 g / h to
the last row).  The default ``compact`` scheme adds the fourth-order mass
matrix (1, 10, 1)/12 on interior rows and (10, 2)/12 at the ends, which
keeps every solve tridiagonal; ``central`` uses the plain second
difference.  Time: diffusion and reaction implicit, noise explicit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct, idct
from scipy.linalg.lapack import dgttrf, dgttrs

from .certify import CertificationError, GainCertificate, certify_gains
from .dynamics import (BrownianPath, ObserverPropagators, exo_series, observer_propagators)
from .kernel import TransformPair, build_transform, solve_kernel, trapezoid_weights
from .scenario import Scenario, ScenarioError

PI = np.pi


class SimulationAbort(ArithmeticError):
    """A path produced non-finite values."""

    def __init__(self, step: int, t: float, detail: str = ""):
        self.step = step
        self.t = t
        super().__init__(f"non-finite state at step {step} (t = {t:.6g}){': ' + detail if detail else ''}")


@dataclass(frozen=True)
class FieldState:
    y: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.y)):
            raise ValueError("field contains non-finite values")


def _tri_matvec(lo, d, up, v):
    out = d[:, None] * v if v.ndim == 2 else d * v
    if v.ndim == 2:
        out[1:] += lo[:, None] * v[:-1]
        out[:-1] += up[:, None] * v[1:]
    else:
        out[1:] += lo * v[:-1]
        out[:-1] += up * v[1:]
    return out


class FieldStepper:
    """One implicit step (M - dt (D + M diag(a - c_shift))) y+ = M y (1 + sigma dB) + dt 2 g / h e_m."""

    def __init__(self, m: int, a_samples, c_shift: float, dt: float, scheme: str = "compact"):
        if m < 3:
            raise ValueError(f"need m >= 3 nodes, got {m}")
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        a = np.broadcast_to(np.asarray(a_samples, dtype=float), (m,))
        h = 1.0 / (m - 1)
        if scheme == "compact":
            Ml = np.full(m - 1, 1 / 12)
            Mu = np.full(m - 1, 1 / 12)
            Md = np.full(m, 10 / 12)
            Ml[-1] = Mu[0] = 2 / 12
        elif scheme == "central":
            Ml, Mu, Md = np.zeros(m - 1), np.zeros(m - 1), np.ones(m)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        Dl = np.ones(m - 1)
        Du = np.ones(m - 1)
        Dd = np.full(m, -2.0)
        Dl[-1] = Du[0] = 2.0
        r = a - c_shift
        lo = Ml - dt * (Dl / h**2 + Ml * r[:-1])
        di = Md - dt * (Dd / h**2 + Md * r)
        up = Mu - dt * (Du / h**2 + Mu * r[1:])
        self.m, self.h, self.dt, self.scheme = m, h, dt, scheme
        self.mass = (Ml, Md, Mu)
        self.lhs = (lo, di, up)
        dl, d, du, du2, ipiv, info = dgttrf(lo, di, up)
        if info != 0:
            raise np.linalg.LinAlgError(f"singular tridiagonal system (info={info})")
        self._lu = (dl, d, du, du2, ipiv)
        self.src = 2.0 * dt / h

    def step(self, y: np.ndarray, g, sigma: float, dB) -> np.ndarray:
        """Advance y of shape (m,) or (m, n_paths) one step."""
        v = y * (1.0 + sigma * np.asarray(dB))
        rhs = _tri_matvec(*self.mass, v)
        rhs[-1] += self.src * np.asarray(g)
        single = rhs.ndim == 1
        b = np.asfortranarray(rhs[:, None] if single else rhs)
        out, info = dgttrs(*self._lu, b)
        if info != 0:
            raise np.linalg.LinAlgError(f"dgttrs failed (info={info})")
        return out[:, 0] if single else out


class ModalStepper:
    """The same scheme for spatially constant a, advanced in its own eigenbasis.

    With constant a the ghost-node operators are diagonalized by the type-I
    discrete cosine transform, so the step acts on each coefficient
    separately.  Coefficients that start at zero stay exactly zero, which the
    tridiagonal solve cannot guarantee: there, rounding errors seed the
    growing low modes of an anti-stable plant.  State is the coefficient
    array ``dct(y, type=1)``.
    """

    def __init__(self, m: int, a_value: float, c_shift: float, dt: float, scheme: str = "compact"):
        if m < 3:
            raise ValueError(f"need m >= 3 nodes, got {m}")
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        h = 1.0 / (m - 1)
        cs = np.cos(PI * np.arange(m) / (m - 1))
        if scheme == "compact":
            mu = (10 + 2 * cs) / 12
        elif scheme == "central":
            mu = np.ones(m)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        d = (2 * cs - 2) / h**2
        self.m, self.h, self.dt, self.scheme = m, h, dt, scheme
        self.mu = mu
        self.denom = mu - dt * (d + mu * (a_value - c_shift))
        self.edge = (-1.0) ** np.arange(m)
        self.src = 2.0 * dt / h

    @staticmethod
    def to_modal(y: np.ndarray) -> np.ndarray:
        return dct(y, type=1, axis=0)

    @staticmethod
    def to_field(yh: np.ndarray) -> np.ndarray:
        return idct(yh, type=1, axis=0)

    def step(self, yh: np.ndarray, g, sigma: float, dB) -> np.ndarray:
        single = yh.ndim == 1
        mu, den, edge = (self.mu, self.denom, self.edge) if single else \
            (self.mu[:, None], self.denom[:, None], self.edge[:, None])
        rhs = mu * yh * (1.0 + sigma * np.asarray(dB)) + self.src * edge * np.asarray(g)
        return rhs / den


def step_field(state: FieldState, g: float, a_samples, c_shift: float, sigma: float, dB: float,
               dt: float, scheme: str = "compact") -> FieldState:
    """One step of the field equation; builds a fresh stepper, so prefer FieldStepper in loops."""
    stepper = FieldStepper(state.y.size, a_samples, c_shift, dt, scheme)
    return FieldState(stepper.step(state.y, g, sigma, dB), state.t + dt)


def norm_sq(y: np.ndarray) -> np.ndarray:
    """Trapezoid L2 norm squared along axis 0."""
    w = trapezoid_weights(y.shape[0])
    return np.tensordot(w, y * y, axes=(0, 0))


def measure(state: FieldState, tp: TransformPair) -> tuple[float, float, float]:
    """Pointwise value y(1), Z = int cos(pi x) (Lambda y) dx and int k_x(1, z) y dz."""
    y = np.asarray(state.y, dtype=float)
    if y.size != tp.n:
        raise ValueError(f"field has {y.size} nodes, transform has {tp.n}")
    w = trapezoid_weights(tp.n)
    x = np.linspace(0.0, 1.0, tp.n)
    z = tp.forward @ y
    return float(y[-1]), float(np.sum(w * np.cos(PI * x) * z)), float(np.sum(w * tp.kx1_trace * y))


def dobc_control(y1: float, avg_kx: float, k11: float, w_hat: float) -> float:
    return k11 * y1 + avg_kx - w_hat


class Measurements:
    """The three outputs as linear functionals, for batched fields."""

    def __init__(self, tp: TransformPair):
        w = trapezoid_weights(tp.n)
        x = np.linspace(0.0, 1.0, tp.n)
        self.vZ = tp.forward.T @ (w * np.cos(PI * x))
        self.vkx = w * tp.kx1_trace
        self.k11 = tp.k11

    def __call__(self, y):
        return y[-1], self.vZ @ y, self.vkx @ y


@dataclass
class Trajectory:
    """Per-record series; with ``record_every = 1`` there is one record per step plus the start."""

    t: np.ndarray
    norm_sq: np.ndarray
    y1: np.ndarray
    Z: np.ndarray
    w: np.ndarray
    w_hat: np.ndarray
    u: np.ndarray
    snapshots: list = field(default_factory=list, repr=False)
    x: np.ndarray | None = field(default=None, repr=False)
    path: BrownianPath | None = field(default=None, repr=False)
    aborted: np.ndarray | None = field(default=None, repr=False)
    final_y: np.ndarray | None = field(default=None, repr=False)
    eta: np.ndarray | None = field(default=None, repr=False)

    COLUMNS = ("t", "norm_sq", "y1", "Z", "w", "w_hat", "u")

    def to_csv(self, path) -> None:
        cols = [getattr(self, c) for c in self.COLUMNS]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for row in zip(*cols):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    def snapshots_to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,x,y\n")
            for t, y in self.snapshots:
                for xi, yi in zip(self.x, y):
                    fh.write(f"{float(t)!r},{float(xi)!r},{float(yi)!r}\n")


@dataclass(frozen=True)
class LoopSetup:
    """Everything a loop run needs that does not depend on the noise."""

    scenario: Scenario
    tp: TransformPair | None
    cert: GainCertificate | None
    stepper: FieldStepper
    props: ObserverPropagators | None
    exo: np.ndarray
    xi: np.ndarray
    y0: np.ndarray
    y0_modal: np.ndarray | None = None


def prepare(scenario: Scenario, mode: str | None = None, tp: TransformPair | None = None) -> LoopSetup:
    mode = mode or scenario.mode
    scenario.validate()
    A, C, L = scenario.matrices()
    cert = None
    if mode == "closed":
        cert = certify_gains(scenario.plant(), scenario.theta_frac)
    if mode in ("closed",) and tp is None:
        tp = build_transform(solve_kernel(scenario.a_samples(), scenario.c))
    a = scenario.a_samples()
    y0_modal = None
    if mode == "target":
        stepper = FieldStepper(scenario.m, 0.0, scenario.c, scenario.dt, scenario.scheme)
    elif mode == "open" and np.all(a == a[0]):
        stepper = ModalStepper(scenario.m, float(a[0]), 0.0, scenario.dt, scenario.scheme)
        y0_modal = scenario.y0_modal()
    else:
        stepper = FieldStepper(scenario.m, scenario.a_samples(), 0.0, scenario.dt, scenario.scheme)
    props = observer_propagators(A, C, L, scenario.c, scenario.dt) if mode == "closed" else None
    xi, w = exo_series(scenario.xi0, scenario.dt, scenario.steps, A, C)
    return LoopSetup(scenario=scenario, tp=tp, cert=cert, stepper=stepper, props=props,
                     exo=w, xi=xi, y0=scenario.y0_samples(), y0_modal=y0_modal)


def run_loop(setup: LoopSetup, draw, npaths: int, mode: str, record_every: int = 1,
             snapshot_every: int = 0, w_tilde=None, y0=None, chunk: int = 1000,
             raise_on_abort: bool = True) -> Trajectory:
    """Integrate ``npaths`` paths side by side.

    ``draw(k)`` returns the next k increments as an array (k, npaths).  In
    target mode ``w_tilde`` gives the boundary flux at every step.  Records
    are taken every ``record_every`` steps and at the final step.
    """
    # overflow on a diverging path is caught below as a non-finite norm
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_loop(setup, draw, npaths, mode, record_every, snapshot_every, w_tilde, y0, chunk,
                         raise_on_abort)


def _run_loop(setup, draw, npaths, mode, record_every, snapshot_every, w_tilde, y0, chunk,
              raise_on_abort):
    sc = setup.scenario
    K = sc.steps
    dt = sc.dt
    stepper = setup.stepper
    y = np.repeat((setup.y0 if y0 is None else np.asarray(y0, dtype=float))[:, None], npaths, axis=1)
    modal = isinstance(stepper, ModalStepper)
    if modal:
        y0h = setup.y0_modal if (y0 is None and setup.y0_modal is not None) else stepper.to_modal(y[:, 0])
        yh = np.repeat(y0h[:, None], npaths, axis=1)
    rec_idx = list(range(0, K + 1, record_every))
    if rec_idx[-1] != K:
        rec_idx.append(K)
    R = len(rec_idx)
    shape = (R, npaths)
    out = {name: np.full(shape, np.nan) for name in ("norm_sq", "y1", "Z", "w", "w_hat", "u")}
    aborted = np.zeros(npaths, dtype=bool)
    eta_rec = np.full((R, len(sc.xi0), npaths), np.nan) if mode == "closed" else None
    snaps = []

    closed = mode == "closed"
    if closed:
        meas = Measurements(setup.tp)
        props = setup.props
        theta = np.repeat(sc.theta0_vec()[:, None], npaths, axis=1)
        Lv = props.L[:, None]
        Cv = props.C
    elif mode == "target":
        if w_tilde is None:
            raise ValueError("target mode needs a w_tilde series")
        w_tilde = np.asarray(w_tilde, dtype=float)
        if w_tilde.shape[0] < K:
            raise ValueError(f"w_tilde has {w_tilde.shape[0]} entries, need {K}")
        cosw = trapezoid_weights(sc.m) * np.cos(PI * sc.x)
    exo = setup.exo
    sigma = sc.sigma
    nxt = 0
    buf = np.empty((0, npaths))
    pos = 0
    for k in range(K + 1):
        if closed:
            y1, Z, avg_kx = meas(y)
            w_hat = Cv @ (theta + Lv * Z)
            u = meas.k11 * y1 + avg_kx - w_hat
            g = u + exo[k]
        elif mode == "target":
            y1, Z, w_hat, u = y[-1], cosw @ y, np.nan, np.nan
            g = w_tilde[k] if k < K else np.nan
        else:
            y1, Z, w_hat, u = y[-1], np.nan, np.nan, 0.0
            g = exo[k]
        if nxt < R and rec_idx[nxt] == k:
            ns = norm_sq(y)
            bad = ~np.isfinite(ns) & ~aborted
            if bad.any():
                if raise_on_abort:
                    raise SimulationAbort(k, k * dt)
                aborted |= bad
            out["norm_sq"][nxt] = ns
            out["y1"][nxt] = y1
            out["Z"][nxt] = Z
            out["w"][nxt] = w_tilde[k] if (mode == "target" and k < K) else exo[k]
            out["w_hat"][nxt] = w_hat
            out["u"][nxt] = u
            if closed:
                eta_rec[nxt] = theta + Lv * Z - setup.xi[k][:, None]
            nxt += 1
        if snapshot_every and k % snapshot_every == 0:
            snaps.append((k * dt, y[:, 0].copy()))
        if k == K:
            break
        if pos == buf.shape[0]:
            buf = draw(min(chunk, K - k))
            pos = 0
        dB = buf[pos]
        pos += 1
        if modal:
            yh = stepper.step(yh, g, sigma, dB)
            if aborted.any():
                yh[:, aborted] = 0.0
            y_new = stepper.to_field(yh)
        else:
            y_new = stepper.step(y, g, sigma, dB)
        if closed:
            theta = props.Phi @ theta + props.Psi @ (props.bZ[:, None] * Z + Lv * (-w_hat))
        if aborted.any():
            y_new[:, aborted] = 0.0
        y = y_new
    t = np.array(rec_idx, dtype=float) * dt
    if npaths == 1:
        out = {k_: v[:, 0] for k_, v in out.items()}
        if eta_rec is not None:
            eta_rec = eta_rec[..., 0]
    return Trajectory(t=t, snapshots=snaps, x=sc.x, aborted=aborted, final_y=y, eta=eta_rec, **out)


def _single(scenario: Scenario, seed, mode: str, record_every=1, snapshot_every=0,
            w_tilde=None, path: BrownianPath | None = None, tp=None, y0=None) -> Trajectory:
    from .dynamics import brownian_path
    if path is None:
        path = brownian_path(seed, scenario.dt, scenario.steps)
    if path.steps < scenario.steps:
        raise ScenarioError(f"path has {path.steps} steps, horizon needs {scenario.steps}")
    setup = prepare(scenario, mode, tp=tp)
    inc = path.increments
    state = {"pos": 0}

    def draw(k):
        p = state["pos"]
        state["pos"] = p + k
        return inc[p:p + k, None]

    traj = run_loop(setup, draw, 1, mode, record_every, snapshot_every, w_tilde, y0=y0)
    traj.path = path
    traj.final_y = traj.final_y[:, 0]
    return traj


def simulate_closed_loop(scenario: Scenario, seed=0, **kw) -> Trajectory:
    """One closed-loop path; raises CertificationError if the gains are not certified."""
    if scenario.mode != "closed":
        raise ScenarioError(f"scenario mode is {scenario.mode!r}, expected 'closed'")
    return _single(scenario, seed, "closed", **kw)


def simulate_open_loop(scenario: Scenario, seed=0, **kw) -> Trajectory:
    """Plant with no control; the boundary flux is the exogenous w (zero if xi0 = 0)."""
    if scenario.mode != "open":
        raise ScenarioError(f"scenario mode is {scenario.mode!r}, expected 'open'")
    return _single(scenario, seed, "open", **kw)


def simulate_target(scenario: Scenario, seed=0, w_tilde_series=None, z0=None, **kw) -> Trajectory:
    """Target system dz = (z_xx - c z) dt + sigma z dB, z_x(1) = w_tilde."""
    if scenario.mode != "target":
        raise ScenarioError(f"scenario mode is {scenario.mode!r}, expected 'target'")
    if w_tilde_series is None:
        w_tilde_series = np.zeros(scenario.steps)
    return _single(scenario, seed, "target", w_tilde=w_tilde_series, y0=z0, **kw)
