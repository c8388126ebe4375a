"""Command-line front end: ``smp-perturb {validate,moments,expand,root,verify}``.

Every command prints one JSON report on stdout.  Floats are written with 17
significant digits so that identical invocations give byte-identical output.

Exit status: 0 all checks pass, 1 usage or parse error, 2 validation or check
failure, 3 infinite functional / no root / singular expansion.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import verify as vf
from .catalog import random_models
from .expansions import (
    SingularAtZero,
    inverse_expansion,
    inverse_identity_residual,
    omega_expansion,
    p_expansion,
    phi_expansion,
    system_residual,
    taboo_series,
)
from .hitting import NotFinite, finiteness_check, solve_omega, solve_phi
from .model import ModelParseError, ModelValidationError, load_model, model_to_dict, validate_conditions
from .root import NoRoot, characteristic_root, root_convergence_scan

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_SEMANTIC = 0, 1, 2, 3
INDEX_FIELDS = ("quantity", "eps", "rho", "r", "n", "i", "j", "s", "value")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# deterministic output


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def dumps(obj, indent: int = 0) -> str:
    """JSON text with 17-significant-digit floats; keys keep insertion order."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def record(quantity, value, **index) -> dict:
    rec = {f: None for f in INDEX_FIELDS}
    rec.update(index)
    rec["quantity"] = quantity
    rec["value"] = float(value)
    return rec


def write_csv(records: list[dict], out_dir: Path) -> list[str]:
    """One file per (quantity, r); rows in emission order."""
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        groups.setdefault((rec["quantity"], rec["r"]), []).append(rec)
    written = []
    for (q, r), rows in groups.items():
        name = f"{q}.csv" if r is None else f"{q}_r{r}.csv"
        with open(out_dir / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(INDEX_FIELDS)
            for rec in rows:
                w.writerow(["" if rec[f] is None else _fmt_float(rec[f]) if isinstance(rec[f], float) else rec[f] for f in INDEX_FIELDS])
        written.append(name)
    return written


def _check_dict(c: vf.Check) -> dict:
    return {"name": c.name, "passed": c.passed, "residual": c.residual, "tol": c.tol, "detail": c.detail}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SMP_PERTURB_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    """Ordered map over a worker pool capped by ``SMP_PERTURB_THREADS``."""
    n = _threads()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> tuple[dict, int]:
    model = load_model(args.model, n_grid=args.eps_grid)
    rep = validate_conditions(model)
    checks = [
        {"name": "A", "passed": rep.a_holds, "residual": 0.0, "tol": 0.0, "detail": "kernel continuous at eps=0"},
        {"name": "B", "passed": rep.b_holds, "residual": 0.0, "tol": 0.0, "detail": "eps=0 embedded chain irreducible on 1..N"},
        {"name": "C", "passed": rep.c_holds, "residual": 0.0, "tol": 0.0, "detail": "phi_ii(beta) > 1 for some beta <= 64"},
    ]
    out = {"model": model_to_dict(model), "eps_grid": model.validation_grid(args.eps_grid), "witnesses": rep.witnesses}
    return {"outputs": out, "checks": checks}, EXIT_OK if rep.all_hold else EXIT_CHECK


def cmd_moments(args) -> tuple[dict, int]:
    model = load_model(args.model)
    N = model.n_states
    targets = [args.j] if args.j else list(range(1, N + 1))

    def work(j):
        fin = finiteness_check(model, args.eps, args.rho, j)
        hm = solve_phi(model, args.eps, args.rho, j, args.r)
        if args.s:
            hm.omega = solve_omega(model, args.eps, args.rho, j, args.s, args.r).omega
        return j, fin, hm

    records, diag = [], []
    for j, fin, hm in _pmap(work, targets):
        diag.append({"j": j, "spectral_radius_proxy": fin.spectral_radius_proxy, "min_pivot": fin.min_pivot,
                     "lu_residual": fin.lu_residual, "neumann_terms": fin.neumann_terms})
        for r in range(args.r + 1):
            for i in range(1, N + 1):
                records.append(record("phi", hm.phi[r, i - 1], eps=args.eps, rho=args.rho, r=r, i=i, j=j))
        for s in args.s or []:
            for r in range(args.r + 1):
                for i in range(1, N + 1):
                    records.append(record("omega", hm.omega[s][r, i - 1], eps=args.eps, rho=args.rho, r=r, i=i, j=j, s=s))
    return {"outputs": {"records": records, "finiteness": diag}, "checks": []}, EXIT_OK


def cmd_expand(args) -> tuple[dict, int]:
    model = load_model(args.model)
    N = model.n_states
    pt = phi_expansion(model, args.rho, args.j, args.k)
    tables = [("phi", pt, None)]
    if args.s:
        tables += [("omega", omega_expansion(model, args.rho, args.j, s, args.k), s) for s in args.s]

    records = []
    for r in range(args.k + 1):
        for n in range(args.k - r + 1):
            for i in range(1, N + 1):
                records.append(record("phi", pt.phi[r].coeffs[n, i - 1], rho=args.rho, r=r, n=n, i=i, j=args.j))
    for _, tab, s in tables[1:]:
        for r in range(args.k + 1):
            for n in range(args.k - r + 1):
                for i in range(1, N + 1):
                    records.append(record("omega", tab.omega[r].coeffs[n, i - 1], rho=args.rho, r=r, n=n, i=i, j=args.j, s=s))

    checks = []
    for name, tab, s in tables:
        worst = max(float(np.max(np.abs(c))) for c in system_residual(model, tab))
        tag = name if s is None else f"{name} s={s}"
        checks.append(vf.Check(f"order-by-order residual ({tag})", worst <= 1e-9, worst, 1e-9))
    P = taboo_series(p_expansion(model, args.rho, 0, args.k), {args.j})
    ident = max(float(np.max(np.abs(x))) for x in inverse_identity_residual(P, inverse_expansion(P, args.k)))
    checks.append(vf.Check("inverse-expansion identity", ident <= 1e-10, ident, 1e-10))
    code = EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK
    return {"outputs": {"records": records}, "checks": [_check_dict(c) for c in checks]}, code


def cmd_root(args) -> tuple[dict, int]:
    model = load_model(args.model)
    if args.scan is not None:
        eps_values = [model.eps_max / 2**m for m in range(args.scan + 1)] + [0.0]
    elif args.eps:
        eps_values = args.eps
    else:
        raise UsageError("root needs --eps or --scan")

    records, checks = [], []
    if len(eps_values) == 1:
        res = characteristic_root(model, eps_values[0], args.i)
        points = [(eps_values[0], res, None)]
    else:
        points = [(p.eps, p.result, p) for p in root_convergence_scan(model, eps_values, args.i)]
    failed = []
    for eps, res, p in points:
        if res is None:
            failed.append({"eps": eps, "error": p.error})
            continue
        records.append(record("rho_root", res.rho_root, eps=eps, i=args.i))
        records.append(record("root_residual", res.residual, eps=eps, i=args.i))
        for t, v in enumerate(res.per_state_roots, start=1):
            records.append(record("state_root", v, eps=eps, i=t))
        if p is not None:
            records.append(record("root_gap", p.gap, eps=eps, i=args.i))
        spread = float(np.max(np.abs(res.per_state_roots - res.rho_root)))
        checks.append(vf.Check(f"per-state roots agree eps={eps!r}", spread <= 1e-10, spread, 1e-10))
    out = {"records": records}
    if failed:
        out["failures"] = failed
    if failed and not records:
        return {"outputs": out, "checks": [_check_dict(c) for c in checks]}, EXIT_SEMANTIC
    code = EXIT_OK if all(c.passed for c in checks) and not failed else EXIT_CHECK
    return {"outputs": out, "checks": [_check_dict(c) for c in checks]}, code


def cmd_verify(args) -> tuple[dict, int]:
    if args.random is not None:
        seed, count = args.random
        models = random_models(seed, count)
        names = [f"random[{seed}:{m}]" for m in range(count)]
    elif args.model:
        models = [load_model(args.model)]
        names = [args.model]
    else:
        raise UsageError("verify needs a model path or --random SEED COUNT")

    def work(model):
        return vf.run_suite(model, eps=args.eps, k=args.k, fit=not args.no_fit, oracle=not args.no_oracle)

    results = _pmap(work, models)
    checks, per_model = [], []
    for name, cs in zip(names, results):
        per_model.append({"model": name, "passed": all(c.passed for c in cs)})
        for c in cs:
            d = _check_dict(c)
            d["name"] = f"{name}: {c.name}"
            checks.append(d)
    ok = all(c["passed"] for c in checks)
    return {"outputs": {"models": per_model}, "checks": checks}, EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------------------
# argument parsing


def _states(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"state index must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="smp-perturb", description="Moment functionals and characteristic roots of perturbed semi-Markov processes.")
    ap.add_argument("--csv", metavar="DIR", help="also write one CSV table per (quantity, r) into DIR")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check kernel invariants and conditions A-C")
    p.add_argument("model")
    p.add_argument("--eps-grid", type=int, default=5, help="number of eps points for the invariant checks (>= 5)")

    p = sub.add_parser("moments", help="phi (and omega with --s) at one eps")
    p.add_argument("model")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--r", type=int, default=0, help="highest rho-derivative order")
    p.add_argument("--j", type=_states, help="target state (default: all)")
    p.add_argument("--s", type=_states, nargs="+", help="occupation state(s)")

    p = sub.add_parser("expand", help="eps-expansion coefficients of phi (and omega with --s)")
    p.add_argument("model")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--j", type=_states, required=True)
    p.add_argument("--s", type=_states, nargs="+")
    p.add_argument("--k", type=int, required=True)

    p = sub.add_parser("root", help="root of phi_ii(rho) = 1")
    p.add_argument("model")
    p.add_argument("--eps", type=float, nargs="+")
    p.add_argument("--scan", type=int, metavar="HALVINGS", help="eps_max halved HALVINGS times, plus eps=0")
    p.add_argument("--i", type=_states, default=1, help="reference state")

    p = sub.add_parser("verify", help="run the property checks")
    p.add_argument("model", nargs="?")
    p.add_argument("--random", type=int, nargs=2, metavar=("SEED", "COUNT"))
    p.add_argument("--eps", type=float, help="evaluation eps (default eps_max / 2)")
    p.add_argument("--k", type=int, default=2, help="expansion order")
    p.add_argument("--no-fit", action="store_true", help="skip the polynomial-fit oracle")
    p.add_argument("--no-oracle", action="store_true", help="skip the truncated-series oracle")
    return ap


COMMANDS = {"validate": cmd_validate, "moments": cmd_moments, "expand": cmd_expand, "root": cmd_root, "verify": cmd_verify}


def _inputs(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "command"}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"smp-perturb: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    report = {"command": args.command, "inputs": _inputs(args)}
    try:
        body, code = COMMANDS[args.command](args)
        report.update(body)
    except UsageError as exc:
        print(f"smp-perturb: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelParseError, OSError) as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        code = EXIT_USAGE
    except ModelValidationError as exc:
        report["error"] = {"type": "ModelValidationError", "message": str(exc), "invariant": exc.invariant, "location": exc.location}
        code = EXIT_CHECK
    except ValueError as exc:
        report["error"] = {"type": "ValueError", "message": str(exc)}
        code = EXIT_USAGE
    except NotFinite as exc:
        err = {"type": "NotFinite", "message": str(exc)}
        if exc.report is not None:
            err["spectral_radius_proxy"] = exc.report.spectral_radius_proxy
            err["min_pivot"] = exc.report.min_pivot
        report["error"] = err
        code = EXIT_SEMANTIC
    except NoRoot as exc:
        report["error"] = {"type": "NoRoot", "message": str(exc), "delta_proxy": exc.delta_proxy}
        code = EXIT_SEMANTIC
    except SingularAtZero as exc:
        report["error"] = {"type": "SingularAtZero", "message": str(exc)}
        code = EXIT_SEMANTIC

    if args.csv and report.get("outputs", {}).get("records"):
        report["csv"] = write_csv(report["outputs"]["records"], Path(args.csv))
    report["exit_status"] = code
    print(dumps(report))
    if "error" in report:
        print(f"smp-perturb: {report['error']['type']}: {report['error']['message']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
