"""Command-line entry point: ``python -m heatctl <command> [flags]``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .certify import CertificationError, certify_gains
from .dynamics import brownian_path, exo_series, simulate_coupled
from .experiments import (check_bound, compare_open_closed, coupled_initial, run_ensemble,
                          scenario_gammas, scenario_preset)
from .kernel import KernelError, build_transform, load_kernel_csv, save_kernel_csv, solve_kernel
from .scenario import Scenario, ScenarioError, read_config
from .spde import SimulationAbort, _single

EXIT_OK, EXIT_INVALID, EXIT_UNCERTIFIED, EXIT_ABORT, EXIT_USAGE = 0, 1, 2, 3, 64
COMMANDS = ("kernel", "certify", "simulate", "mc", "compare", "scenario")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=("section4", "remark2", "coupledZeta"))
    common.add_argument("--config", help="key = value scenario file (e.g. a manifest)")
    common.add_argument("--seed", type=int)
    common.add_argument("--paths", type=int)
    common.add_argument("--dt", type=float)
    common.add_argument("--nodes", type=int)
    common.add_argument("--T", type=float)
    common.add_argument("--sigma", type=float)
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument("--snapshots", type=int, help="field snapshot stride in steps")
    common.add_argument("--json", action="store_true", help="certify: also write certificate.json")
    p = _Parser(prog="heatctl", description="Boundary stabilization of a stochastic heat equation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "kernel": "solve the transform kernel and write it with its traces",
        "certify": "check the gain hypotheses and print the certificate",
        "simulate": "one sample path, written as a trajectory CSV",
        "mc": "Monte Carlo ensemble with a bound report",
        "compare": "open and closed loop on common random numbers",
        "scenario": "print a resolved scenario",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return p


def _resolve(args) -> tuple[Scenario, dict]:
    """Scenario and run options from preset, config and flags, in that order of precedence."""
    run = {}
    if args.config:
        sc, rest = read_config(args.config)
        run = rest.get("run", {})
        if args.preset:
            raise ScenarioError("give either --preset or --config, not both")
    else:
        sc = scenario_preset(args.preset or "section4")
    changes = {}
    for flag, key in (("dt", "dt"), ("nodes", "m"), ("T", "T"), ("sigma", "sigma")):
        v = getattr(args, flag)
        if v is not None:
            if not math.isfinite(v):
                raise ScenarioError(f"--{flag} must be finite")
            changes[key] = v
    if changes:
        sc = sc.replace(**changes)
    sc.validate()
    opts = {
        "seed": args.seed if args.seed is not None else int(run.get("seed", 0)),
        "paths": args.paths if args.paths is not None else int(run.get("paths", 1000)),
        "snapshots": args.snapshots if args.snapshots is not None else int(run.get("snapshots", 0)),
    }
    if opts["paths"] < 2:
        raise ScenarioError(f"--paths must be at least 2, got {opts['paths']}")
    if opts["snapshots"] < 0:
        raise ScenarioError("--snapshots must be >= 0")
    if opts["seed"] < 0:
        raise ScenarioError("--seed must be >= 0")
    return sc, opts


def _write_manifest(out: Path, sc: Scenario, command: str, opts: dict) -> None:
    run = {"command": command, **opts}
    (out / "manifest.ini").write_text(sc.to_ini({"run": run}), encoding="utf-8")


def _kv(d: dict) -> str:
    lines = []
    for k, v in d.items():
        if isinstance(v, float):
            v = f"{v:.5f}" if k in ("sigma_max", "theta_star") else repr(v)
        lines.append(f"{k}={v}")
    return "\n".join(lines)


def _cmd_kernel(sc, opts, out):
    path = out / "kernel.csv"
    a = sc.a_samples()
    kern = None
    if path.is_file():
        try:
            cached = load_kernel_csv(path)
            if cached.c == sc.c and cached.n == sc.m and np.array_equal(cached.a_samples, a):
                kern = cached
        except (KernelError, KeyError, ValueError):
            kern = None
    cached = kern is not None
    if kern is None:
        kern = solve_kernel(a, sc.c)
        save_kernel_csv(kern, path)
    tp = build_transform(kern)
    with open(out / "traces.csv", "w", encoding="utf-8") as fh:
        fh.write("x,k_diag,kx1\n")
        for row in zip(kern.grid.x, kern.diag_trace, kern.kx1_trace):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(_kv({"n": kern.n, "c": kern.c, "k11": kern.k11, "k10": float(kern.values[-1, 0]),
               "iterations": kern.iterations, "max_l_sq": tp.inverse_kernel_max_sq,
               "cached": str(cached).lower()}))
    return EXIT_OK


def _cmd_certify(sc, opts, out, as_json):
    cert = certify_gains(sc.plant(), sc.theta_frac)
    rep = cert.report()
    gam = scenario_gammas(sc, cert)
    rep.update(gamma1=gam.gamma1, gamma2=gam.gamma2, gamma=gam.gamma, gamma_star=gam.gamma_star)
    flat = {k: v for k, v in rep.items() if k != "Q"}
    for i, row in enumerate(cert.Q):
        for j, v in enumerate(row):
            flat[f"Q_{i}{j}"] = float(v)
    print(_kv(flat))
    if as_json:
        (out / "certificate.json").write_text(json.dumps(rep, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_simulate(sc, opts, out):
    seed = opts["seed"]
    if sc.mode == "coupled":
        Z0, eta0 = coupled_initial(sc)
        path = brownian_path(seed, sc.dt, sc.steps)
        X = simulate_coupled(Z0, eta0, sc.plant(), sc.dt, sc.T, path)
        if not np.all(np.isfinite(X)):
            bad = int(np.argmax(~np.all(np.isfinite(X), axis=1)))
            raise SimulationAbort(bad, bad * sc.dt)
        A, C, _ = sc.matrices()
        _, w = exo_series(sc.xi0, sc.dt, sc.steps, A, C)
        w_hat = w + X[:, 1:] @ C[0]
        n = X.shape[1] - 1
        with open(out / "coupled.csv", "w", encoding="utf-8") as fh:
            fh.write(",".join(["t", "Z"] + [f"eta_{i + 1}" for i in range(n)] + ["w", "w_hat"]) + "\n")
            for k in range(0, sc.steps + 1, sc.record_every):
                row = [k * sc.dt, *X[k], w[k], w_hat[k]]
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        print(f"wrote {out / 'coupled.csv'}")
        return EXIT_OK
    tr = _single(sc, seed, sc.mode, record_every=1, snapshot_every=opts["snapshots"])
    tr.to_csv(out / "trajectory.csv")
    if opts["snapshots"]:
        tr.snapshots_to_csv(out / "snapshots.csv")
    print(_kv({"final_norm_sq": float(tr.norm_sq[-1]), "initial_norm_sq": float(tr.norm_sq[0])}))
    return EXIT_OK


def _cmd_mc(sc, opts, out):
    ens = run_ensemble(sc, opts["paths"], opts["seed"])
    rep = check_bound(ens)
    ens.to_csv(out / "ensemble.csv", rep.bound)
    text = rep.to_text() + _kv({"N": ens.N, "aborted": ens.aborted,
                                "final_ratio": float(ens.ratio[-1]),
                                "final_se_ratio": float(ens.se[-1] / ens.mean_norm_sq[0])}) + "\n"
    (out / "bound_report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    if rep.verdict == "uncertified":
        return EXIT_UNCERTIFIED
    return EXIT_INVALID if rep.verdict == "fail" else EXIT_OK


def _cmd_compare(sc, opts, out):
    if sc.mode not in ("closed", "open"):
        raise ScenarioError("compare needs a field scenario (closed or open mode)")
    op, cl = compare_open_closed(sc, opts["paths"], opts["seed"])
    op.to_csv(out / "open.csv")
    cl.to_csv(out / "closed.csv")
    print(_kv({"open_final_ratio": float(op.ratio[-1]), "closed_final_ratio": float(cl.ratio[-1])}))
    return EXIT_OK


def dispatch(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        sc, opts = _resolve(args)
        if args.command == "scenario":
            print(sc.to_ini({"run": opts}), end="")
            return EXIT_OK
        out = Path(args.out or "out")
        out.mkdir(parents=True, exist_ok=True)
        _write_manifest(out, sc, args.command, opts)
        if args.command == "kernel":
            return _cmd_kernel(sc, opts, out)
        if args.command == "certify":
            return _cmd_certify(sc, opts, out, args.json)
        if args.command == "simulate":
            return _cmd_simulate(sc, opts, out)
        if args.command == "mc":
            return _cmd_mc(sc, opts, out)
        return _cmd_compare(sc, opts, out)
    except CertificationError as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_UNCERTIFIED
    except SimulationAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(dispatch())
