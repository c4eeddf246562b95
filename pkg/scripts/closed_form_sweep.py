"""Closed-form mu against the Lyapunov mu over a sweep of (c, l1, l2).

The closed form is evaluated term by term; the table shows where the two
disagree, and the resulting noise tolerances.
"""
import itertools

import numpy as np

from heatctl.certify import (CertificationError, build_M, lyapunov_solve, mu_closed_form_n2, mu_from_Q,
                             noise_tolerance)

A = np.array([[0.0, 2.0], [-2.0, 0.0]])
C = np.array([[1.0, 0.0]])


def main():
    print(f"{'c':>7} {'l1':>6} {'l2':>6} {'mu_closed':>10} {'mu_lyap':>9} {'sigma_max':>9}")
    for c, l1, l2 in itertools.product((1.02, 2.0, 10.0), (-1.0, -5.0, -20.0), (-1.0, 0.5)):
        L = np.array([[l1], [l2]])
        if np.max(np.linalg.eigvals(A + L @ C).real) >= 0:
            continue
        try:
            mu = mu_from_Q(lyapunov_solve(build_M(c, A, L, C)), L)
        except CertificationError:
            continue
        try:
            closed = mu_closed_form_n2(c, l1, l2)
        except ZeroDivisionError:
            closed = float("nan")
        print(f"{c:7.2f} {l1:6.1f} {l2:6.1f} {closed:10.4f} {mu:9.4f} {noise_tolerance(c, mu):9.5f}")


if __name__ == "__main__":
    main()
