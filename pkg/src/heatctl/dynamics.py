"""Finite-dimensional pieces of the loop: noise, exogenous signal, observer, (Z, eta) system."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .certify import PlantSpec, build_M

PI2 = np.pi ** 2


@dataclass(frozen=True)
class BrownianPath:
    seed: int | tuple
    dt: float
    increments: np.ndarray = field(repr=False)

    @property
    def steps(self) -> int:
        return self.increments.size

    def B(self) -> np.ndarray:
        """Brownian motion at t_0 = 0, t_1, ..., t_steps."""
        return np.concatenate([[0.0], np.cumsum(self.increments)])


def path_seed(master_seed: int, index: int) -> tuple[int, int]:
    """Seed of path ``index`` in an ensemble; independent of execution order."""
    return (int(master_seed), int(index))


def rng_for(seed) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def brownian_path(seed, dt: float, steps: int) -> BrownianPath:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    inc = np.sqrt(dt) * rng_for(seed).standard_normal(steps)
    inc.setflags(write=False)
    return BrownianPath(seed=seed, dt=float(dt), increments=inc)


class IncrementStream:
    """Draw increments for a block of ensemble paths a chunk of steps at a time.

    Each path owns its own generator, so the values a path sees do not
    depend on chunk size or on which other paths share the block.
    """

    def __init__(self, seeds, dt: float):
        self.gens = [rng_for(s) for s in seeds]
        self.sqdt = np.sqrt(dt)

    def draw(self, steps: int) -> np.ndarray:
        """Array of shape (steps, n_paths)."""
        return self.sqdt * np.stack([g.standard_normal(steps) for g in self.gens], axis=1)


def _as_matrices(A, C, L=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.asarray(C, dtype=float).reshape(1, -1)
    n = A.shape[0]
    if A.shape != (n, n) or C.shape[1] != n:
        raise ValueError(f"inconsistent exogenous dimensions A{A.shape}, C{C.shape}")
    if L is None:
        return A, C
    L = np.asarray(L, dtype=float).reshape(-1, 1)
    if L.shape[0] != n:
        raise ValueError(f"L has {L.shape[0]} rows, expected {n}")
    return A, C, L


def exo_series(xi0, dt: float, steps: int, A, C):
    """Exact samples of xi' = A xi, w = C xi on t_k = k dt, k = 0..steps."""
    A, C = _as_matrices(A, C)
    xi0 = np.asarray(xi0, dtype=float).reshape(-1)
    if xi0.size != A.shape[0]:
        raise ValueError(f"xi0 has {xi0.size} entries, expected {A.shape[0]}")
    E = expm(A * dt)
    xi = np.empty((steps + 1, xi0.size))
    xi[0] = xi0
    for k in range(steps):
        xi[k + 1] = E @ xi[k]
    return xi, xi @ C[0]


@dataclass(frozen=True)
class ObserverState:
    theta: np.ndarray
    xi_hat: np.ndarray
    w_hat: float

    @classmethod
    def from_theta(cls, theta, Z: float, L, C) -> "ObserverState":
        theta = np.asarray(theta, dtype=float).reshape(-1)
        xi_hat = theta + np.asarray(L, dtype=float).reshape(-1) * Z
        return cls(theta=theta, xi_hat=xi_hat, w_hat=float(np.asarray(C).reshape(-1) @ xi_hat))


@dataclass(frozen=True)
class ObserverPropagators:
    """Zero-order-hold maps for theta' = F theta + bZ Z + L u0, F = A + LC."""

    Phi: np.ndarray
    Psi: np.ndarray
    bZ: np.ndarray
    L: np.ndarray
    C: np.ndarray
    dt: float


def observer_propagators(A, C, L, c: float, dt: float) -> ObserverPropagators:
    A, C, L = _as_matrices(A, C, L)
    n = A.shape[0]
    F = A + L @ C
    # expm([[F, I], [0, 0]] dt) = [[Phi, Psi], [0, I]]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = F
    aug[:n, n:] = np.eye(n)
    E = expm(aug * dt)
    bZ = (F @ L + (c + PI2) * L).reshape(-1)
    return ObserverPropagators(Phi=E[:n, :n], Psi=E[:n, n:], bZ=bZ, L=L.reshape(-1),
                               C=C.reshape(-1), dt=float(dt))


def observer_step(obs: ObserverState, Z: float, u0: float, props: ObserverPropagators,
                  Z_next: float | None = None) -> ObserverState:
    """Advance the observer one step with Z and u0 held over the step.

    ``Z_next`` is the measurement at the end of the step, used only to
    refresh xi_hat and w_hat; it defaults to ``Z``.
    """
    theta = props.Phi @ obs.theta + props.Psi @ (props.bZ * Z + props.L * u0)
    return ObserverState.from_theta(theta, Z if Z_next is None else Z_next, props.L, props.C)


def simulate_coupled(Z0, eta0, spec: PlantSpec, dt: float, T: float, path) -> np.ndarray:
    """Euler-Maruyama for d(Z, eta) = M (Z, eta) dt + sigma (Z, L Z) dB.

    ``path`` is a BrownianPath (one path) or an increment array of shape
    (steps, n_paths) with ``Z0`` of shape (n_paths,) and ``eta0`` of shape
    (n, n_paths).  Returns (steps + 1, n + 1) or (steps + 1, n + 1, n_paths).
    """
    M = build_M(spec.c, spec.A, spec.L, spec.C)
    single = isinstance(path, BrownianPath)
    dB = path.increments[:, None] if single else np.asarray(path, dtype=float)
    steps = int(round(T / dt))
    if dB.shape[0] != steps:
        raise ValueError(f"path has {dB.shape[0]} increments, horizon T/dt needs {steps}")
    x = np.vstack([np.reshape(Z0, (1, -1)), np.reshape(eta0, (spec.exo_dim, -1))])
    X = np.empty((steps + 1,) + x.shape)
    X[0] = x
    diff = np.concatenate([[1.0], spec.L.reshape(-1)])[:, None]
    for k in range(steps):
        x = X[k]
        X[k + 1] = x + dt * (M @ x) + spec.sigma * diff * (x[0] * dB[k])
    return X[..., 0] if single else X


def simulate_scalar_Z(Z0: float, u0_series, w_series, c: float, sigma: float,
                      path: BrownianPath) -> np.ndarray:
    """Euler-Maruyama for dZ = -[(c + pi^2) Z + u0 + w] dt + sigma Z dB.

    ``u0_series`` and ``w_series`` are sampled at the left end of each step
    and must have at least ``path.steps`` entries.
    """
    dB = path.increments
    u0 = np.asarray(u0_series, dtype=float)
    w = np.asarray(w_series, dtype=float)
    steps = dB.size
    if u0.size < steps or w.size < steps:
        raise ValueError(f"u0/w series have {u0.size}/{w.size} entries, path has {steps} steps")
    dt = path.dt
    decay = c + PI2
    Z = np.empty(steps + 1)
    Z[0] = Z0
    for k in range(steps):
        Z[k + 1] = Z[k] - dt * (decay * Z[k] + u0[k] + w[k]) + sigma * Z[k] * dB[k]
    return Z
