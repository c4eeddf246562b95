"""Backstepping kernel on the triangle 0 <= zeta <= x <= 1 and its Volterra transform.

The kernel solves

    k_xx - k_zz = (c + a(z)) k,   k_z(x, 0) = 0,   k(x, x) = -1/2 int_0^x a - c x / 2

and is computed by successive approximation of the equivalent integral
equation in characteristic coordinates xi = x + z, eta = x - z, where the
PDE becomes G_{xi eta} = (c + a) G / 4.  Integrating once in eta from the
diagonal and once in xi from the z = 0 line (using k_z(x, 0) = 0 to fix
the values there) gives

    G(xi, eta) = g(xi) + g(eta)
                 + 1/2 int_0^eta int_0^s F(s, r) dr ds
                 + 1/4 int_eta^xi int_0^eta F(t, r) dr dt,

with F = (c + a((xi - eta)/2)) G and g(xi) = k(xi/2, xi/2).  All integrals
use the trapezoid rule on the lattice of spacing h in both characteristic
directions; lattice points with xi/h - eta/h even are exactly the nodes of
the (x, z) grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular


class KernelError(RuntimeError):
    """Kernel iteration failed or a transform is ill-formed."""


@dataclass(frozen=True)
class TriGrid:
    """Samples on the lower triangle {(i, j): 0 <= j <= i <= n - 1} of a uniform grid."""

    n: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"need n >= 3 nodes, got {self.n}")
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.n, self.n):
            raise ValueError(f"values must be {self.n}x{self.n}, got {vals.shape}")
        vals = np.tril(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    def __getitem__(self, ij):
        i, j = ij
        if not (0 <= j <= i < self.n):
            raise IndexError(f"({i}, {j}) is outside the lower triangle of an n={self.n} grid")
        return float(self.values[i, j])


@dataclass(frozen=True)
class Kernel:
    grid: TriGrid
    c: float
    a_samples: np.ndarray = field(repr=False)
    diag_trace: np.ndarray = field(repr=False)
    kx1_trace: np.ndarray = field(repr=False)
    k11: float
    iterations: int = 0

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def values(self) -> np.ndarray:
        return self.grid.values


@dataclass(frozen=True)
class TransformPair:
    """Discrete forward transform T and the data needed to invert it.

    Row i of T integrates over [0, x_i] with trapezoid weights: h/2 at
    zeta = 0 and zeta = x_i, h in between.  The endpoint weight at zeta = x_i
    lands on the diagonal, ``T[i, i] = 1 - h k(x_i, x_i) / 2``; row 0 is the
    identity row since the integral over [0, 0] vanishes.
    """

    forward: np.ndarray = field(repr=False)
    inverse_kernel_max_sq: float
    kx1_trace: np.ndarray = field(repr=False)
    k11: float

    @property
    def n(self) -> int:
        return self.forward.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)


def trapezoid_weights(n: int) -> np.ndarray:
    """Weights of the composite trapezoid rule on n uniform nodes of [0, 1]."""
    w = np.full(n, 1.0 / (n - 1))
    w[0] = w[-1] = 0.5 / (n - 1)
    return w


def volterra_weights(n: int) -> np.ndarray:
    """Lower-triangular matrix W with W[i, j] the trapezoid weight of node j on [0, x_i]."""
    h = 1.0 / (n - 1)
    W = np.tril(np.full((n, n), h))
    W[:, 0] *= 0.5
    W[np.diag_indices(n)] = 0.5 * h
    W[0, 0] = 0.0
    return W


def _cumtrapz(f: np.ndarray, dx: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    out = np.zeros_like(f)
    out[1:] = np.cumsum(0.5 * dx * (f[1:] + f[:-1]), axis=0)
    return np.moveaxis(out, 0, axis)


def solve_kernel(a_samples, c: float, n: int | None = None, *, tol: float = 1e-12,
                 max_iter: int = 1000) -> Kernel:
    """Solve the kernel PDE on an n-node grid.

    Parameters
    ----------
    a_samples : array_like
        Reaction coefficient a(x) at the n nodes x_i = i/(n-1).
    c : float
        Target damping.
    n : int, optional
        Node count; defaults to ``len(a_samples)``.
    tol : float
        Stop once the max-norm change between iterates is below
        ``tol * max(1, max|k|)``.
    """
    a = np.asarray(a_samples, dtype=float)
    if n is None:
        n = a.size
    if n < 3:
        raise ValueError(f"need n >= 3 nodes, got {n}")
    if a.shape != (n,):
        raise ValueError(f"a_samples must have {n} entries, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("a_samples contains non-finite values")

    N = n - 1
    h = 1.0 / N
    x = np.linspace(0.0, 1.0, n)
    # a on the half grid zeta = k h / 2, k = 0..2N
    a_half = np.interp(np.arange(2 * N + 1) / (2 * N), x, a)
    int_a = _cumtrapz(a_half, 0.5 * h, axis=0)
    p_idx = np.arange(2 * N + 1)
    g = -0.5 * int_a - 0.25 * c * p_idx * h
    dg = -0.25 * a_half - 0.25 * c

    P, Qi = np.meshgrid(p_idx, np.arange(N + 1), indexing="ij")
    mask = (Qi <= P) & (P + Qi <= 2 * N)
    lam = np.where(mask, c + a_half[np.clip(P - Qi, 0, 2 * N)], 0.0)
    base = np.where(mask, g[P] + g[Qi], 0.0)
    diag_q = np.arange(N + 1)

    def sweep(G):
        F = lam * G
        inner = _cumtrapz(F, h, axis=1)  # int_0^eta F(xi, r) dr
        H = inner[diag_q, diag_q]
        outer = _cumtrapz(inner, h, axis=0)
        term1 = 0.5 * _cumtrapz(H, h, axis=0)
        term2 = 0.25 * (outer - outer[diag_q, diag_q][None, :])
        return np.where(mask, base + term1[None, :] + term2, 0.0), F, inner, H

    G = base
    for it in range(1, max_iter + 1):
        G_new, F, inner, H = sweep(G)
        change = np.max(np.abs(G_new - G))
        G = G_new
        if change <= tol * max(1.0, np.max(np.abs(G))):
            break
    else:
        raise KernelError(f"kernel iteration did not converge in {max_iter} sweeps "
                          f"(last change {change:.3e})")

    I, J = np.tril_indices(n)
    k = np.zeros((n, n))
    k[I, J] = G[I + J, I - J]

    # k_x = G_xi + G_eta along x = 1, i.e. lattice points (N + j, N - j)
    F = lam * G
    inner = _cumtrapz(F, h, axis=1)
    H = inner[diag_q, diag_q]
    along = _cumtrapz(F, h, axis=0)
    j = np.arange(n)
    pp, qq = N + j, N - j
    kx1 = dg[pp] + dg[qq] + 0.25 * (inner[pp, qq] + H[qq] + along[pp, qq] - along[qq, qq])

    grid = TriGrid(n, k)
    return Kernel(grid=grid, c=float(c), a_samples=a.copy(), diag_trace=np.diag(k).copy(),
                  kx1_trace=kx1, k11=float(k[N, N]), iterations=it)


def _bessel_i1_over_s(u: float) -> float:
    """I_1(s)/s as a series in u = s^2/4 (valid for negative u as J_1/s)."""
    term = 0.5
    total = term
    i = 0
    while True:
        term *= u / ((i + 1) * (i + 2))
        i += 1
        total += term
        if abs(term) < 1e-16 * abs(total):
            return total


def bessel_kernel_value(c: float, x: float, zeta: float) -> float:
    """Closed-form kernel for a == 0: -c x I_1(s)/s with s = sqrt(c (x^2 - zeta^2)).

    With a constant reaction coefficient a0 the same formula holds with c
    replaced by c + a0.
    """
    if not (0.0 <= zeta <= x <= 1.0):
        raise ValueError(f"(x, zeta) = ({x}, {zeta}) is outside 0 <= zeta <= x <= 1")
    if c == 0:
        return 0.0
    return -c * x * _bessel_i1_over_s(c * (x * x - zeta * zeta) / 4.0)


def inverse_kernel(kernel: Kernel) -> np.ndarray:
    """Kernel l of the inverse transform y = z + int_0^x l(x, zeta) z(zeta) dzeta.

    Solves l(x, zeta) = k(x, zeta) + int_zeta^x k(x, s) l(s, zeta) ds row by
    row with the trapezoid rule on [zeta, x]; l(x, x) = k(x, x).
    """
    k = kernel.values
    n = kernel.n
    h = kernel.grid.h
    l = np.zeros((n, n))
    l[0, 0] = k[0, 0]
    for i in range(1, n):
        # h * sum_{s=j}^{i-1} k_is l_sj with half weight at s = j
        acc = h * (k[i, :i] @ l[:i, :i]) - 0.5 * h * k[i, :i] * np.diag(l)[:i]
        l[i, :i] = (k[i, :i] + acc) / (1.0 - 0.5 * h * k[i, i])
        l[i, i] = k[i, i]
    return l


def bessel_inverse_value(c: float, x: float, zeta: float) -> float:
    """Closed-form inverse kernel for a == 0: -c x J_1(s)/s, s = sqrt(c (x^2 - zeta^2))."""
    if not (0.0 <= zeta <= x <= 1.0):
        raise ValueError(f"(x, zeta) = ({x}, {zeta}) is outside 0 <= zeta <= x <= 1")
    if c == 0:
        return 0.0
    return -c * x * _bessel_i1_over_s(-c * (x * x - zeta * zeta) / 4.0)


def build_transform(kernel: Kernel) -> TransformPair:
    n = kernel.n
    W = volterra_weights(n)
    T = np.eye(n) - W * kernel.values
    d = np.diag(T)
    if np.any(np.abs(d) < 1e-12):
        raise KernelError("singular diagonal entry in forward transform")
    l = inverse_kernel(kernel)
    T.setflags(write=False)
    return TransformPair(forward=T, inverse_kernel_max_sq=float(np.max(l * l)),
                         kx1_trace=kernel.kx1_trace.copy(), k11=kernel.k11)


def identity_transform(n: int) -> TransformPair:
    T = np.eye(n)
    T.setflags(write=False)
    return TransformPair(forward=T, inverse_kernel_max_sq=0.0, kx1_trace=np.zeros(n), k11=0.0)


def _check_len(tp: TransformPair, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != tp.n:
        raise ValueError(f"field has {v.shape[0]} nodes, transform expects {tp.n}")
    return v


def apply_forward(tp: TransformPair, y) -> np.ndarray:
    return tp.forward @ _check_len(tp, y)


def apply_inverse(tp: TransformPair, z) -> np.ndarray:
    return solve_triangular(tp.forward, _check_len(tp, z), lower=True)


def kx1_one_sided(kernel: Kernel) -> np.ndarray:
    """Three-point backward difference of k in x at x = 1.

    Only defined for zeta_j <= x_{n-3}; the last two entries are NaN.
    """
    k = kernel.values
    h = kernel.grid.h
    n = kernel.n
    out = np.full(n, np.nan)
    j = np.arange(n - 2)
    out[j] = (3 * k[n - 1, j] - 4 * k[n - 2, j] + k[n - 3, j]) / (2 * h)
    return out


# -- CSV cache -------------------------------------------------------------

def _fmt_list(v) -> str:
    return ";".join(repr(float(t)) for t in v)


def save_kernel_csv(kernel: Kernel, path) -> None:
    """Write ``i,j,k_value`` rows after a ``# key=value`` metadata header."""
    path = Path(path)
    lines = [
        f"# n={kernel.n}",
        f"# c={kernel.c!r}",
        f"# k11={kernel.k11!r}",
        f"# iterations={kernel.iterations}",
        f"# a_samples={_fmt_list(kernel.a_samples)}",
        f"# kx1_trace={_fmt_list(kernel.kx1_trace)}",
        "i,j,k_value",
    ]
    I, J = np.tril_indices(kernel.n)
    vals = kernel.values[I, J]
    lines.extend(f"{i},{j},{float(v)!r}" for i, j, v in zip(I, J, vals))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_kernel_csv(path) -> Kernel:
    meta = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
            elif line.startswith("i,"):
                continue
            else:
                i, j, v = line.split(",")
                rows.append((int(i), int(j), float(v)))
    n = int(meta["n"])
    k = np.zeros((n, n))
    for i, j, v in rows:
        if j > i:
            raise KernelError(f"row ({i}, {j}) lies above the diagonal")
        k[i, j] = v
    parse = lambda s: np.array([float(t) for t in s.split(";")])
    return Kernel(grid=TriGrid(n, k), c=float(meta["c"]), a_samples=parse(meta["a_samples"]),
                  diag_trace=np.diag(k).copy(), kx1_trace=parse(meta["kx1_trace"]),
                  k11=float(meta["k11"]), iterations=int(meta.get("iterations", 0)))
