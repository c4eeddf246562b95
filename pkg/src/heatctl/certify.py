"""Gain certification for the coupled (Z, eta) system and the closed-loop decay constants."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PI2 = math.pi ** 2
HURWITZ_MARGIN = 1e-9


class CertificationError(ValueError):
    """A hypothesis of the stability results does not hold."""


@dataclass(frozen=True)
class PlantSpec:
    c: float
    sigma: float
    A: np.ndarray
    C: np.ndarray
    L: np.ndarray
    a_samples: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        C = np.asarray(self.C, dtype=float).reshape(1, -1)
        L = np.asarray(self.L, dtype=float).reshape(-1, 1)
        if A.shape != (n, n) or C.shape[1] != n or L.shape[0] != n:
            raise ValueError(f"inconsistent dimensions A{A.shape}, C{C.shape}, L{L.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "L", L)

    @property
    def exo_dim(self) -> int:
        return self.A.shape[0]

    def validate(self) -> None:
        """Raise CertificationError unless (A, C) observable, A + LC Hurwitz and c > 1."""
        if not is_observable(self.A, self.C):
            raise CertificationError("(A, C) is not observable")
        eig = np.linalg.eigvals(self.A + self.L @ self.C)
        if self.exo_dim and np.max(eig.real) >= -HURWITZ_MARGIN:
            raise CertificationError(f"A + LC is not Hurwitz: eigenvalues {eig}")
        if not self.c > 1:
            raise CertificationError(f"c must exceed 1, got {self.c}")


def is_observable(A, C, rtol: float = 1e-10) -> bool:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.asarray(C, dtype=float).reshape(1, -1)
    n = A.shape[0]
    if n == 0:
        return True
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    s = np.linalg.svd(np.vstack(blocks), compute_uv=False)
    return bool(s[-1] > rtol * max(s[0], 1e-300))


def build_M(c: float, A, L, C) -> np.ndarray:
    """Drift matrix [[-(c + pi^2), C], [0, A + LC]] of the (Z, eta) system."""
    A = np.asarray(A, dtype=float)
    n = 0 if A.size == 0 else np.atleast_2d(A).shape[0]
    M = np.zeros((n + 1, n + 1))
    M[0, 0] = -(c + PI2)
    if n:
        A = np.atleast_2d(A)
        C = np.asarray(C, dtype=float).reshape(1, -1)
        L = np.asarray(L, dtype=float).reshape(-1, 1)
        if A.shape != (n, n) or C.shape != (1, n) or L.shape != (n, 1):
            raise ValueError(f"inconsistent dimensions A{A.shape}, C{C.shape}, L{L.shape}")
        M[0, 1:] = C[0]
        M[1:, 1:] = A + L @ C
    return M


def lyapunov_solve(M) -> np.ndarray:
    """Solve M^T Q + Q M = -I through the Kronecker-vectorized linear system.

    With column-major vec, vec(M^T Q) = (I kron M^T) vec Q and
    vec(Q M) = (M^T kron I) vec Q.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValueError(f"M must be square, got {M.shape}")
    eig = np.linalg.eigvals(M)
    if np.max(eig.real) >= -HURWITZ_MARGIN:
        raise CertificationError(f"M is not Hurwitz: eigenvalues {eig}")
    I = np.eye(n)
    K = np.kron(I, M.T) + np.kron(M.T, I)
    try:
        q = np.linalg.solve(K, -I.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise CertificationError(f"singular Lyapunov system: {exc}") from exc
    Q = q.reshape(n, n, order="F")
    Q = 0.5 * (Q + Q.T)
    # one step of iterative refinement keeps the residual near machine precision
    R = M.T @ Q + Q @ M + I
    if np.max(np.abs(R)) > 0:
        dq = np.linalg.solve(K, -R.reshape(-1, order="F")).reshape(n, n, order="F")
        Q = Q + 0.5 * (dq + dq.T)
    try:
        np.linalg.cholesky(Q)
    except np.linalg.LinAlgError as exc:
        raise CertificationError("Lyapunov solution is not positive definite") from exc
    return Q


def lyapunov_residual(M, Q) -> float:
    M = np.asarray(M, dtype=float)
    return float(np.max(np.abs(M.T @ Q + Q @ M + np.eye(M.shape[0]))))


def mu_from_Q(Q, L) -> float:
    """Noise amplification constant: largest eigenvalue of S^T Q S, S = [[1, 0], [L, 0]].

    Computed both from the eigenvalues of the sandwich and from the block
    expansion Q1 + Q2 L + L^T Q3 + L^T Q4 L; the two must agree.
    """
    Q = np.asarray(Q, dtype=float)
    L = np.asarray(L, dtype=float).reshape(-1)
    m = Q.shape[0]
    if Q.shape != (m, m) or L.size != m - 1:
        raise ValueError(f"Q is {Q.shape} but L has {L.size} entries")
    if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) <= 0:
        raise ValueError("Q is not positive definite")
    S = np.zeros((m, m))
    S[0, 0] = 1.0
    S[1:, 0] = L
    via_eig = float(np.max(np.linalg.eigvalsh(S.T @ Q @ S)))
    Q1, Q2, Q3, Q4 = Q[0, 0], Q[0, 1:], Q[1:, 0], Q[1:, 1:]
    via_blocks = float(Q1 + Q2 @ L + L @ Q3 + L @ Q4 @ L)
    if abs(via_eig - via_blocks) > 1e-10 * max(1.0, abs(via_blocks)):
        raise ArithmeticError(f"mu paths disagree: {via_eig} vs {via_blocks}")
    return via_blocks


def mu_closed_form_n2(c: float, l1: float, l2: float) -> float:
    """Closed-form mu for A = [[0, 2], [-2, 0]], C = [1, 0], L = [l1, l2]^T.

    Evaluated term by term as written; it disagrees with the Lyapunov solve
    (see scripts/closed_form_sweep.py) and is kept only as a diagnostic.
    """
    cp = c + PI2
    lam = lambda_star(c, l1, l2)
    if l1 == 0 or l2 == 2 or lam == 0:
        raise ZeroDivisionError("closed form undefined for l1 = 0, l2 = 2 or lambda* = 0")
    inner = l2 - 3 + 2 * cp / lam
    return (1 / (2 * cp) + (-l1 * cp - l2) / (cp * lam) + inner * l1 / 2 - l1 * l2 / 2
            + (l2 ** 2 / lam + l1 * l2 ** 2 / 2 - inner * l2 ** 2 / l1) / (l2 - 2))


def lambda_star(c: float, l1: float, l2: float) -> float:
    return (l1 - c - PI2) * (c + PI2) + l2 - 1


@dataclass(frozen=True)
class GainCertificate:
    c: float
    sigma: float
    M: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)
    lambda_min: float
    lambda_max: float
    mu_c: float
    sigma_max: float
    rate_Ze: float
    rate_target: float
    theta_star: float
    theta_frac: float
    degenerate: bool
    residual: float
    C: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)

    @property
    def cond(self) -> float:
        return self.lambda_max / self.lambda_min

    def report(self) -> dict:
        return {
            "c": self.c,
            "sigma": self.sigma,
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "mu_c": self.mu_c,
            "sigma_max": self.sigma_max,
            "rate_Ze": self.rate_Ze,
            "rate_target": self.rate_target,
            "theta_star": self.theta_star,
            "theta_frac": self.theta_frac,
            "degenerate_branch": self.degenerate,
            "lyapunov_residual": self.residual,
            "Q": self.Q.tolist(),
        }


def noise_tolerance(c: float, mu_c: float) -> float:
    return min(1.0 / math.sqrt(mu_c), math.sqrt(2.0 * (c - 1.0) / 3.0))


def certify_gains(spec: PlantSpec, theta_frac: float = 0.9) -> GainCertificate:
    """Check every hypothesis of the closed-loop stability results and compute the rates.

    Fails closed: raises CertificationError when |sigma| >= sigma_max.
    """
    if not 0 < theta_frac < 1:
        raise ValueError(f"theta_frac must lie in (0, 1), got {theta_frac}")
    spec.validate()
    M = build_M(spec.c, spec.A, spec.L, spec.C)
    Q = lyapunov_solve(M)
    eig = np.linalg.eigvalsh(Q)
    lmin, lmax = float(eig[0]), float(eig[-1])
    mu = mu_from_Q(Q, spec.L)
    smax = noise_tolerance(spec.c, mu)
    s2 = spec.sigma ** 2
    if abs(spec.sigma) >= smax:
        raise CertificationError(f"|sigma| = {abs(spec.sigma)} is not below sigma_max = {smax:.6g}")
    rate_Ze = (1 - mu * s2) / lmax
    rate_target = 2 * spec.c - 2 - 3 * s2
    degenerate = math.isclose(rate_target, rate_Ze, rel_tol=1e-12, abs_tol=0.0)
    theta = theta_frac * rate_target if degenerate else min(rate_target, rate_Ze)
    return GainCertificate(c=spec.c, sigma=spec.sigma, M=M, Q=Q, lambda_min=lmin, lambda_max=lmax,
                           mu_c=mu, sigma_max=smax, rate_Ze=rate_Ze, rate_target=rate_target,
                           theta_star=theta, theta_frac=theta_frac, degenerate=degenerate,
                           residual=lyapunov_residual(M, Q), C=spec.C, L=spec.L, A=spec.A)


@dataclass(frozen=True)
class Gammas:
    gamma1: float
    gamma2: float
    gamma: float
    gamma_star: float


def gamma_constants(cert: GainCertificate, EZ0sq: float, Eeta0sq: float, Ebeta0sq: float,
                    max_l_sq: float) -> Gammas:
    """Constants of the mean-square bounds for z and y.

    ``Ebeta0sq`` is E int_0^1 (z0 + x^2/2 C eta0)^2 dx; ``max_l_sq`` is the
    largest squared inverse-kernel value.
    """
    for name, v in (("EZ0sq", EZ0sq), ("Eeta0sq", Eeta0sq), ("Ebeta0sq", Ebeta0sq),
                    ("max_l_sq", max_l_sq)):
        if v < 0 or not math.isfinite(v):
            raise ValueError(f"{name} must be finite and >= 0, got {v}")
    if not cert.theta_star > 0:
        raise CertificationError("certificate has no positive decay rate")
    C, L, A = cert.C, cert.L, cert.A
    c, s2 = cert.c, cert.sigma ** 2
    F = A + L @ C
    nC2 = float(np.sum(C ** 2))
    g1 = max((1 + c / 2) ** 2 * nC2 + float(np.sum((C @ F / 2) ** 2)) + 3 * s2 * nC2 / 4,
             3 * s2 * float((C @ L).item()) ** 2 / 4)
    E0 = EZ0sq + Eeta0sq
    r1, r2 = cert.rate_target, cert.rate_Ze
    if cert.degenerate:
        # sup_t t exp(-(r1 - theta) t) = 1 / (e (r1 - theta))
        factor = 1.0 / (math.e * (r1 - cert.theta_star))
    else:
        factor = 1.0 / abs(r1 - r2)
    g2 = Ebeta0sq + g1 * factor * cert.cond * E0
    g = 2 * g2 + nC2 / 2 * cert.cond * E0
    return Gammas(gamma1=g1, gamma2=g2, gamma=g, gamma_star=2 * (1 + max_l_sq) * g)
