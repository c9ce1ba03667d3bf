"""Command-line front end: ``kcontract {compound,certify,simulate,equilibria,reproduce}``.

Exit codes: 0 certified (or success), 1 infeasible / reproduction mismatch,
2 bad input, 3 compound size cap, 4 certified on samples only, 5 simulation
failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .compound import add_compound, mult_compound
from .errors import DimensionCapError, IntegrationError
from .lurie import certify_lurie
from .network import (
    HOPFIELD_EX5_W,
    OPINION_EX6_A,
    OPINION_EX6_B,
    NetworkedSystem,
    hopfield_network,
    hopfield_thresholds,
    net_k_contraction_check,
    opinion_check,
    opinion_network,
    opinion_u_threshold,
    power_2bus_check,
)
from .sim import SimConfig, convergence_sweep, find_equilibria, volume_decay_audit
from .sysfile import POWER_DEFAULTS, PRESETS, SystemFileError, dumps, preset, read_system

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_PARSE = 2
EXIT_CAP = 3
EXIT_SAMPLED = 4
EXIT_SIM = 5

STATUS_EXIT = {"certified": EXIT_OK, "infeasible": EXIT_INFEASIBLE, "sampled-only": EXIT_SAMPLED}


class UsageError(Exception):
    """Invalid command-line input (exit code 2)."""


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _fmt(x):
    return repr(float(x))


def read_matrix(path):
    """Matrix from a JSON file (nested rows, or {"matrix": rows}) or whitespace/comma text."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    try:
        doc = json.loads(text)
        if isinstance(doc, dict):
            doc = doc.get("matrix")
        M = np.asarray(doc, dtype=float)
    except json.JSONDecodeError:
        try:
            M = np.loadtxt(io.StringIO(text.replace(",", " ")), ndmin=2)
        except ValueError as exc:
            raise UsageError(f"{path}: cannot parse matrix ({exc})") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: cannot parse matrix ({exc})") from None
    if M.ndim != 2 or M.size == 0 or not np.all(np.isfinite(M)):
        raise UsageError(f"{path}: expected a finite 2-D matrix, got shape {M.shape}")
    return M


def _parse_params(items):
    params = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects key=value, got {item!r}")
        if key not in POWER_DEFAULTS:
            raise UsageError(f"unknown parameter {key!r}; choose from {sorted(POWER_DEFAULTS)}")
        try:
            params[key] = float(value)
        except ValueError:
            raise UsageError(f"parameter {key} needs a number, got {value!r}") from None
    return params


def load_system(args):
    """Resolve the positional SYSTEM argument: an existing file or a preset name."""
    source = args.system
    if os.path.exists(source):
        return read_system(source)
    if source in PRESETS:
        return preset(source, alpha=getattr(args, "alpha", None), u=getattr(args, "u", None),
                      params=_parse_params(getattr(args, "param", None)))
    raise UsageError(f"{source!r} is neither a file nor a preset ({', '.join(sorted(PRESETS))})")


# --------------------------------------------------------------------------
# compound


def cmd_compound(args):
    A = read_matrix(args.input)
    if args.mode == "add" and A.shape[0] != A.shape[1]:
        raise UsageError("additive compound needs a square matrix")
    if not 1 <= args.k <= min(A.shape):
        raise UsageError(f"k must lie in [1, {min(A.shape)}]")
    M = mult_compound(A, args.k) if args.mode == "mult" else add_compound(A, args.k)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in M:
            w.writerow([_fmt(x) for x in row])
        _emit(buf.getvalue(), args.out)
    else:
        _emit(dumps({"k": args.k, "mode": args.mode, "shape": list(M.shape),
                     "matrix": M.tolist()}), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# certify


def certify_system(system, k, strategy="scalar-P", Q=None):
    if isinstance(system, NetworkedSystem):
        if Q is not None or strategy != "scalar-P":
            raise UsageError("--strategy/--q-file apply to lurie systems only")
        return net_k_contraction_check(system, k)
    return certify_lurie(system, k, strategy, Q=Q)


def cmd_certify(args):
    system = load_system(args)
    if not 1 <= args.k <= system.n:
        raise UsageError(f"--k must lie in [1, {system.n}]")
    Q = read_matrix(args.q_file) if args.q_file else None
    if args.strategy == "given-Q" and Q is None:
        raise UsageError("--strategy given-Q needs --q-file")
    cert = certify_system(system, args.k, args.strategy, Q)
    doc = {"system": args.system, "certificate": cert.to_dict()}
    if args.system == "power-2bus" and not os.path.exists(args.system) and args.k == 2:
        p = dict(POWER_DEFAULTS, **_parse_params(args.param))
        check = power_2bus_check(**p)
        doc["closed_form"] = check.to_dict()["closed_form"]
        doc["strict_form"] = check.to_dict()["strict_form"]
    if args.format == "csv":
        c = doc["certificate"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "status", "rate", "eta1", "eta2", "margin", "which_gain"])
        w.writerow([c["k"], c["status"], _fmt(c["rate"]), _fmt(c["eta1"]), _fmt(c["eta2"]),
                    _fmt(c["margin"]), c["which_gain"]])
        _emit(buf.getvalue(), args.out)
    else:
        _emit(dumps(doc), args.out)
    return STATUS_EXIT[cert.status]


# --------------------------------------------------------------------------
# simulate / equilibria


def _equilibria_doc(report):
    return {
        "equilibria": [e.tolist() for e in report.equilibria],
        "basins": report.basins,
        "residuals": report.residuals,
        "newton_failures": report.failures,
    }


def cmd_equilibria(args):
    system = load_system(args)
    report = find_equilibria(system, args.n_starts, seed=args.seed)
    _emit(dumps(_equilibria_doc(report)), args.out)
    return EXIT_OK


def _trajectory_csv(report, n):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["traj_id"])
    for j, tr in enumerate(report.trajectories):
        for t, x in zip(tr.times, tr.states):
            w.writerow([_fmt(t)] + [_fmt(v) for v in x] + [j])
    return buf.getvalue()


def cmd_simulate(args):
    if not args.t_end > 0 or not math.isfinite(args.t_end):
        raise UsageError("--t-end must be positive")
    if args.n_traj < 1:
        raise UsageError("--n-traj must be at least 1")
    system = load_system(args)
    cfg = SimConfig(t_end=args.t_end, seed=args.seed, n_out=args.n_out)
    eq = find_equilibria(system, 64, seed=args.seed)
    cert = None
    if args.audit_k is not None:
        if not 1 <= args.audit_k <= system.n:
            raise UsageError(f"--audit-k must lie in [1, {system.n}]")
        cert = certify_system(system, args.audit_k)
    report = convergence_sweep(system, args.n_traj, cfg, equilibria=eq.equilibria,
                               cert=cert, keep=True)
    audit = {
        "n_traj": report.n_traj,
        "t_end": args.t_end,
        "seed": args.seed,
        "equilibria": [e.tolist() for e in report.equilibria],
        "tally": report.tally,
        "converged": report.converged,
        "unconverged": report.unconverged,
        "unbounded": report.unbounded,
        "max_terminal_velocity": report.max_terminal_velocity,
        "convergence_guaranteed": report.guaranteed,
    }
    if cert is not None:
        audit["certificate"] = cert.to_dict()
        if cert.status == "certified":
            vol = volume_decay_audit(system, cert, report.initial_conditions[0], cfg=cfg)
            audit["volume_audit"] = {
                "k": cert.k,
                "observed_rate": vol.observed_rate,
                "certified_rate": cert.rate,
                "within_bound": vol.within_bound,
                "monotone": vol.monotone,
                "max_bound_excess": vol.max_bound_excess,
                "underflow": vol.underflow,
            }
    traj_csv = _trajectory_csv(report, system.n)
    if args.format == "csv":
        _emit(traj_csv, args.out)
        if args.audit_out:
            _emit(dumps(audit), args.audit_out)
    else:
        if args.out:
            _emit(traj_csv, args.out)
        _emit(dumps(audit), args.audit_out)
    return EXIT_OK


# --------------------------------------------------------------------------
# reproduce


def _row(quantity, computed, reference, tol):
    delta = abs(float(computed) - float(reference))
    return {"quantity": quantity, "computed": float(computed), "reference": float(reference),
            "abs_diff": delta, "tol": tol, "ok": delta <= tol}


def _flag(quantity, value, expected):
    return {"quantity": quantity, "computed": float(value), "reference": float(expected),
            "abs_diff": float(value != expected), "tol": 0.0, "ok": value == expected}


def reproduce_hopfield():
    th = hopfield_thresholds(HOPFIELD_EX5_W)
    rows = [
        _row("sigma1^2(W), printed contraction threshold", th.sigma1_sq, 2.618, 1e-3),
        _row("sigma1^2(W) closed form (3+sqrt5)/2", th.sigma1_sq, (3 + math.sqrt(5)) / 2, 1e-9),
        _row("alpha_1* = sigma1(W)", th.alpha_1star, math.sqrt((3 + math.sqrt(5)) / 2), 1e-9),
        _row("alpha_2*, printed 2-contraction threshold", th.alpha_2star, 1.345, 1e-3),
        _row("alpha_2* closed form sqrt((5+sqrt5)/4)", th.alpha_2star,
             math.sqrt((5 + math.sqrt(5)) / 4), 1e-9),
    ]
    sys15 = hopfield_network(HOPFIELD_EX5_W, 1.5)
    for k, expected in ((1, 0), (2, 1)):
        cert = net_k_contraction_check(sys15, k)
        rows.append(_flag(f"alpha=1.5 certified at k={k}", int(cert.certified), expected))
    # the printed equilibrium is the one of x' = -0.71 x + W tanh(x)
    eq = find_equilibria(hopfield_network(HOPFIELD_EX5_W, 0.71), 64, seed=0)
    rows.append(_flag("alpha=0.71 equilibria found", len(eq), 3))
    pos = [e for e in eq.equilibria if e[0] > 1e-6]
    e2 = pos[0] if pos else np.full(3, np.nan)
    for i, ref in enumerate((2.435, 1.243, 1.387)):
        rows.append(_row(f"alpha=0.71 e2[{i + 1}]", e2[i], ref, 1e-3))
    eq15 = find_equilibria(sys15, 64, seed=0)
    rows.append(_flag("alpha=1.5 equilibria found", len(eq15), 1))
    return rows


def reproduce_opinion():
    rows = []
    closed = {1: 1 / (1 + math.sqrt(2)), 2: math.sqrt(2 / (4 + 2 * math.sqrt(2))),
              3: math.sqrt(3 / 7)}
    printed = {1: 0.414, 2: 0.541, 3: 0.655}
    for k in (1, 2, 3):
        u = opinion_u_threshold(OPINION_EX6_A, k)
        rows.append(_row(f"u* for k={k}, printed", u, printed[k], 1e-3))
        rows.append(_row(f"u* for k={k}, closed form", u, closed[k], 1e-9))
    for u, k, expected in ((0.5, 1, 0), (0.5, 2, 1), (0.6, 3, 1)):
        cert = opinion_check(np.eye(3), u, OPINION_EX6_A, OPINION_EX6_B, k)
        rows.append(_flag(f"u={u} certified at k={k}", int(cert.certified), expected))
    sys05 = opinion_network(1.0, 0.5, OPINION_EX6_A, OPINION_EX6_B)
    sweep = convergence_sweep(sys05, 10, SimConfig(t_end=200.0, seed=0))
    rows.append(_flag("u=0.5 sweep: all 10 trajectories converge", int(sweep.all_converged), 1))
    rows.append(_flag("u=0.5 sweep: at least 2 equilibria reached",
                      int(sweep.distinct_equilibria >= 2), 1))
    return rows


def reproduce_power():
    rows = []
    base = dict(POWER_DEFAULTS)
    for a in (0.5, 1.0, 2.0, 3.0, 4.0):
        for phi in (0.0, math.pi / 8, math.pi / 4, 3 * math.pi / 8):
            p = dict(base, a=a, phi=phi)
            check = power_2bus_check(**p)
            lhs = 3 * a * a * (1 + abs(math.cos(2 * phi)))
            rhs = min(p["M1"], p["M2"]) / max(p["M1"], p["M2"]) * min(p["R1"], p["R2"]) ** 2 / 2
            tag = f"a={a:g} phi={phi:.4f}"
            rows.append(_flag(f"{tag} closed form passes", int(check.closed_form), int(lhs < rhs)))
            rows.append({"quantity": f"{tag} k=2 networked test passes",
                         "computed": float(check.certified), "reference": float(check.certified),
                         "abs_diff": 0.0, "tol": 0.0,
                         "ok": check.certified or not check.closed_form})
    return rows


REPRODUCERS = {
    "hopfield-ex5": reproduce_hopfield,
    "opinion-ex6": reproduce_opinion,
    "power-2bus": reproduce_power,
}


def cmd_reproduce(args):
    rows = REPRODUCERS[args.example]()
    ok = all(r["ok"] for r in rows)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "computed", "reference", "abs_diff", "tol", "ok"])
        for r in rows:
            w.writerow([r["quantity"], _fmt(r["computed"]), _fmt(r["reference"]),
                        _fmt(r["abs_diff"]), _fmt(r["tol"]), int(r["ok"])])
        _emit(buf.getvalue(), args.out)
    else:
        _emit(dumps({"example": args.example, "ok": ok, "rows": rows}), args.out)
    return EXIT_OK if ok else EXIT_INFEASIBLE


# --------------------------------------------------------------------------
# argument parsing


def _add_system_args(p):
    p.add_argument("system", help="system JSON file or preset name (" + ", ".join(sorted(PRESETS)) + ")")
    p.add_argument("--alpha", type=float, help="hopfield-ex5 self-decay rate (default 1.5)")
    p.add_argument("--u", type=float, help="opinion-ex6 attention parameter (default 0.5)")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="power-2bus parameter override (M1, M2, R1, R2, a, phi, p1, p2)")


def build_parser():
    parser = argparse.ArgumentParser(prog="kcontract",
                                     description="k-contraction certificates for Lurie and networked systems")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compound", help="multiplicative or additive compound of a matrix")
    p.add_argument("input", help="matrix file (JSON rows or whitespace/comma separated text)")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--mode", choices=("mult", "add"), default="mult")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compound)

    p = sub.add_parser("certify", help="search or check a k-contraction certificate")
    _add_system_args(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--strategy", choices=("scalar-P", "given-Q"), default="scalar-P")
    p.add_argument("--q-file", help="candidate Q for --strategy given-Q")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("simulate", help="simulate random trajectories and audit convergence")
    _add_system_args(p)
    p.add_argument("--n-traj", type=int, default=10)
    p.add_argument("--t-end", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-out", type=int, default=201, help="output samples per trajectory")
    p.add_argument("--audit-k", type=int, help="certify at this k and audit volume decay")
    p.add_argument("--format", choices=("json", "csv"), default="json",
                   help="json: audit to stdout, CSV to --out; csv: CSV to stdout/--out")
    p.add_argument("--out", help="trajectory CSV path")
    p.add_argument("--audit-out", help="audit JSON path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("equilibria", help="locate equilibria by damped Newton")
    _add_system_args(p)
    p.add_argument("--n-starts", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("json",), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_equilibria)

    p = sub.add_parser("reproduce", help="recompute a worked example and compare")
    p.add_argument("example", choices=sorted(REPRODUCERS))
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DimensionCapError as exc:
        print(f"kcontract: {exc}", file=sys.stderr)
        return EXIT_CAP
    except IntegrationError as exc:
        print(f"kcontract: {exc}", file=sys.stderr)
        return EXIT_SIM
    except (UsageError, SystemFileError, ValueError, OSError) as exc:
        print(f"kcontract: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
