"""Command-line front end.

Verbs:

  simulate        run the dissipative active-scalar solver from a corpus
                  member, writing snapshots, a diagnostics table, and a
                  hash manifest
  picard          print the contraction table of the successive linear
                  solves from small data
  besov           tabulate dyadic against finite-difference norms over
                  the synthesis corpus
  verify NAME     run one verification suite (or all of them) and write
                  the report artifacts
  moc certify     scan the modulus functionals and certify negativity
  moc monitor     replay saved snapshots against a rescaled modulus
  field dump      synthesize one corpus member into a snapshot file
  field load      print the header and norms of a snapshot file

Exit status: 0 when every requested check passes, 1 when a verification
fails, 2 for configuration or input errors.  All file output lands under
--out next to a manifest.json of content hashes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, ScenarioConfig, SuiteEntry, load_config
from .corpus import generate_corpus
from .dyadic import besov_norm, besov_norm_fd
from .moc import (
    ModulusOfContinuity,
    certify_negativity,
    choose_lambda,
    moc_breach_monitor,
)
from .snapshot import SnapshotFormatError, dump_field, load_field
from .solver import Trajectory, picard_iterate, run
from .spectral import Field, Grid2D, grad_inf_norm, lp_norm
from .suites import (
    available_suites,
    default_suite,
    run_suite,
    write_artifacts,
)

_KINDS = ("single_mode", "random_band", "bump", "steep_front")


def _load_scenario(path: str | None) -> ScenarioConfig:
    return load_config(path) if path else ScenarioConfig()


def _rescale(field: Field, amplitude: float) -> Field:
    sup = float(np.abs(field.physical).max())
    if sup == 0.0:
        return field
    return field * (amplitude / sup)


def _member(cfg: ScenarioConfig, kind: str, index: int,
            amplitude: float | None) -> Field:
    grid = Grid2D(cfg.n, cfg.L)
    members = generate_corpus(cfg.seed, grid, kind)
    if not 0 <= index < len(members):
        raise ConfigError(
            f"member index {index} out of range for kind '{kind}' "
            f"(corpus has {len(members)})")
    theta0 = members[index]
    if amplitude is not None:
        theta0 = _rescale(theta0, amplitude)
    return theta0


def _write_manifest(out_dir: str, names: list[str]) -> None:
    manifest = {"files": {}}
    for name in sorted(names):
        with open(os.path.join(out_dir, name), "rb") as fh:
            manifest["files"][name] = hashlib.sha256(fh.read()).hexdigest()
    with open(os.path.join(out_dir, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(out_dir: str, name: str, payload) -> None:
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- simulate ---------------------------------------------------------------


def _cmd_simulate(args) -> int:
    cfg = _load_scenario(args.config)
    theta0 = _member(cfg, args.kind, args.member, args.amplitude)
    traj = run(theta0, cfg.evolution)

    out = args.out or cfg.output_dir
    snap_dir = os.path.join(out, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)
    names = []
    for i, (t, state) in enumerate(zip(traj.times, traj.states)):
        rel = os.path.join("snapshots", f"snap_{i:06d}.sqgf")
        dump_field(state, float(t), os.path.join(out, rel))
        names.append(rel)

    keys = ("l2", "l4", "linf", "grad_inf", "besov0", "besov1")
    with open(os.path.join(out, "diagnostics.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("t",) + keys)
        for t, diag in zip(traj.times, traj.diagnostics):
            writer.writerow([repr(float(t))] + [repr(float(diag[k]))
                                                for k in keys])
    names.append("diagnostics.csv")

    _write_json(out, "summary.json", {
        "kind": args.kind,
        "member": args.member,
        "snapshots": len(traj.states),
        "t_final": float(traj.times[-1]),
        "blown_up": traj.blown_up,
        "aborted": traj.aborted,
    })
    names.append("summary.json")
    _write_manifest(out, names)

    note = " (gradient ceiling hit)" if traj.blown_up else ""
    print(f"simulate: {len(traj.states)} snapshots to t="
          f"{float(traj.times[-1]):.6g} in {out}{note}")
    return 0


# --- picard -----------------------------------------------------------------


def _cmd_picard(args) -> int:
    cfg = _load_scenario(args.config)
    theta0 = _member(cfg, "random_band", 0, args.amplitude)
    try:
        states = picard_iterate(theta0, cfg.evolution, n_max=args.n_max,
                                eps0=args.eps0, steps=args.steps,
                                horizon=args.horizon)
    except ValueError as exc:
        print(f"picard: {exc}", file=sys.stderr)
        return 2

    rows = []
    print(f"{'n':>3} {'small-data lhs':>15} {'cauchy':>12} "
          f"{'ratio':>9} {'iterate bound':>14}")
    prev = None
    for st in states:
        ratio = (st.cauchy_norm / prev if prev not in (None, 0.0)
                 and np.isfinite(st.cauchy_norm) else float("nan"))
        print(f"{st.n:>3} {st.small_data_lhs:>15.6g} "
              f"{st.cauchy_norm:>12.4g} {ratio:>9.4g} "
              f"{st.iterate_bound:>14.6g}")
        rows.append({"n": st.n, "cauchy": st.cauchy_norm, "ratio": ratio,
                     "small_data_lhs": st.small_data_lhs,
                     "iterate_bound": st.iterate_bound})
        if np.isfinite(st.cauchy_norm):
            prev = st.cauchy_norm

    ratios = [r["ratio"] for r in rows if np.isfinite(r["ratio"])]
    contracted = len(ratios) >= 2 and all(r < 0.9 for r in ratios[-2:])
    bounded = all(r["iterate_bound"] <= 2.0 * args.eps0 for r in rows)
    ok = contracted and bounded
    print(f"picard: {'contraction verified' if ok else 'NOT contracting'} "
          f"(eps0={args.eps0})")

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(args.out, "picard.json",
                    {"rows": rows, "contracted": contracted,
                     "bounded": bounded, "ok": ok})
        _write_manifest(args.out, ["picard.json"])
    return 0 if ok else 1


# --- besov ------------------------------------------------------------------


def _cmd_besov(args) -> int:
    cfg = _load_scenario(args.config)
    grid = Grid2D(cfg.n, cfg.L)
    exponents = args.s or [0.3, 0.5, 0.8]

    rows = []
    print(f"{'member':<16} {'s':>5} {'dyadic':>12} {'lattice':>12} {'ratio':>9}")
    for kind in _KINDS:
        for i, fld in enumerate(generate_corpus(cfg.seed, grid, kind)):
            for s in exponents:
                dy = besov_norm(fld, s).value
                fd = besov_norm_fd(fld, s)
                ratio = dy / fd if fd > 0 else float("inf")
                rows.append(ratio)
                print(f"{kind + '-' + str(i):<16} {s:>5.2g} {dy:>12.5g} "
                      f"{fd:>12.5g} {ratio:>9.4g}")

    worst = max(max(rows), 1.0 / min(rows))
    ok = worst <= 10.0
    print(f"besov: worst two-sided ratio {worst:.4g} "
          f"({'within' if ok else 'OUTSIDE'} [1/10, 10])")
    return 0 if ok else 1


# --- verify -----------------------------------------------------------------


def _cmd_verify(args) -> int:
    cfg = _load_scenario(args.config)
    if args.name == "all":
        entries = cfg.suite if cfg.suite else default_suite()
    else:
        matched = tuple(e for e in cfg.suite if e.name == args.name)
        entries = matched if matched else (SuiteEntry(args.name),)
    scenario = replace(cfg, suite=entries)

    out = args.out or cfg.output_dir
    result = run_suite(scenario, out_dir=out)
    for rep in result.reports:
        verdict = "pass" if rep.passed else "FAIL"
        print(f"{rep.name:<32} {verdict:>5}  lhs={rep.lhs:<12.6g} "
              f"rhs={rep.rhs:<12.6g}")
    for key, trace in result.failures.items():
        last = trace.strip().splitlines()[-1]
        print(f"{key:<32} CRASH  {last}")
    print(f"verify: {'ALL PASS' if result.ok else 'FAILURES PRESENT'} "
          f"({len(result.reports)} checks, {len(result.failures)} crashes), "
          f"artifacts in {out}")
    return 0 if result.ok else 1


# --- moc --------------------------------------------------------------------


def _cmd_moc_certify(args) -> int:
    try:
        moc = ModulusOfContinuity(delta=args.delta, gamma=args.gamma)
    except ValueError as exc:
        print(f"moc certify: {exc}", file=sys.stderr)
        return 2
    report = certify_negativity(moc, xi_range=(args.lo, args.hi),
                                points=args.points, C=args.C)

    out = args.out
    os.makedirs(out, exist_ok=True)
    _write_json(out, "moc_report.json", report.to_dict())
    with open(os.path.join(out, "moc_scan.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("xi", "omega", "Omega", "I", "criterion"))
        for row in zip(report.xi_grid, report.omega_vals, report.Omega_vals,
                       report.I_vals, report.criterion):
            writer.writerow([repr(float(v)) for v in row])
    _write_manifest(out, ["moc_report.json", "moc_scan.csv"])

    verdict = "certified" if report.certified else "NOT certified"
    print(f"moc certify: negativity {verdict} on [{args.lo:g}, {args.hi:g}] "
          f"({args.points} points, margin {report.margin:.4g}), "
          f"artifacts in {out}")
    return 0 if report.certified else 1


def _load_trajectory(traj_dir: str) -> Trajectory:
    paths = sorted(
        os.path.join(traj_dir, name) for name in os.listdir(traj_dir)
        if name.endswith(".sqgf"))
    if not paths:
        raise SnapshotFormatError(f"no .sqgf snapshots in {traj_dir}")
    loaded = sorted((load_field(p) for p in paths), key=lambda pair: pair[1])
    states = [fld for fld, _ in loaded]
    times = [t for _, t in loaded]
    return Trajectory(times=np.asarray(times), states=states,
                      diagnostics=[{} for _ in states])


def _cmd_moc_monitor(args) -> int:
    try:
        moc = ModulusOfContinuity(delta=args.delta, gamma=args.gamma)
        traj = _load_trajectory(args.traj)
    except (ValueError, OSError) as exc:
        print(f"moc monitor: {exc}", file=sys.stderr)
        return 2

    if args.lam is not None:
        lam, c0 = args.lam, args.c0
    else:
        first = traj.states[0]
        sup = float(np.abs(first.physical).max())
        grad = grad_inf_norm(first)
        if sup == 0.0 or grad == 0.0:
            print("moc monitor: first snapshot is flat; pass --lam",
                  file=sys.stderr)
            return 2
        try:
            lam, c0 = choose_lambda(moc, sup, grad)
        except ValueError:
            print(f"moc monitor: snapshot sup {sup:.3g} is outside the "
                  f"modulus range for delta={args.delta:g}, "
                  f"gamma={args.gamma:g}; pass --lam or widen the modulus",
                  file=sys.stderr)
            return 2

    result = moc_breach_monitor(traj, moc, lam, c0=c0,
                                long_pairs=args.long_pairs, seed=args.seed)

    out = args.out
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "monitor.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("t", "B"))
        for t, b in zip(result["times"], result["B"]):
            writer.writerow([repr(float(t)), repr(float(b))])
    _write_json(out, "monitor.json", {
        "lam": lam,
        "c0": c0,
        "short_radius": result["short_radius"],
        "preserved": result["preserved"],
        "worst_time": result["worst_time"],
        "worst_B": result["worst_B"],
        "snapshots": len(traj.states),
    })
    _write_manifest(out, ["monitor.csv", "monitor.json"])

    verdict = "preserved" if result["preserved"] else "BREACHED"
    print(f"moc monitor: modulus {verdict} over {len(traj.states)} snapshots "
          f"(worst B={result['worst_B']:.4g} at t={result['worst_time']:.6g}), "
          f"artifacts in {out}")
    return 0 if result["preserved"] else 1


# --- field ------------------------------------------------------------------


def _cmd_field_dump(args) -> int:
    cfg = _load_scenario(args.config)
    theta = _member(cfg, args.kind, args.member, args.amplitude)
    parent = os.path.dirname(os.path.abspath(args.path))
    os.makedirs(parent, exist_ok=True)
    dump_field(theta, args.t, args.path)
    print(f"field dump: {args.kind}-{args.member} (n={cfg.n}) to {args.path}")
    return 0


def _cmd_field_load(args) -> int:
    fld, t = load_field(args.path)
    print(f"n = {fld.grid.n}")
    print(f"L = {fld.grid.L!r}")
    print(f"t = {t!r}")
    print(f"sup = {lp_norm(fld, np.inf):.8g}")
    print(f"l2 = {lp_norm(fld, 2):.8g}")
    print(f"grad_inf = {grad_inf_norm(fld):.8g}")
    return 0


# --- parser -----------------------------------------------------------------


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="scenario file; defaults apply when omitted")


def _add_member(p: argparse.ArgumentParser, default_amp: float | None) -> None:
    p.add_argument("--kind", choices=_KINDS, default="random_band")
    p.add_argument("--member", type=int, default=0,
                   help="index within the corpus of that kind")
    p.add_argument("--amplitude", type=float, default=default_amp,
                   help="rescale the member to this sup norm")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqg-lab",
        description="numerical laboratory for critical dissipative "
                    "active-scalar transport")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the solver, saving snapshots")
    _add_config(p)
    _add_member(p, default_amp=0.5)
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("picard", help="contraction table from small data")
    _add_config(p)
    p.add_argument("--amplitude", type=float, default=0.05)
    p.add_argument("--n-max", type=int, default=6)
    p.add_argument("--eps0", type=float, default=0.1)
    p.add_argument("--steps", type=int, default=24)
    p.add_argument("--horizon", type=float,
                   help="existence horizon; found from the smallness "
                        "functional when omitted")
    p.add_argument("--out", help="also write picard.json here")
    p.set_defaults(func=_cmd_picard)

    p = sub.add_parser("besov", help="dyadic vs lattice norm table")
    _add_config(p)
    p.add_argument("--s", type=float, action="append",
                   help="regularity exponent in (0, 1); repeatable")
    p.set_defaults(func=_cmd_besov)

    p = sub.add_parser("verify", help="run verification suites")
    p.add_argument("name", choices=available_suites() + ("all",))
    _add_config(p)
    p.add_argument("--out", help="artifact directory (default: config output_dir)")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("moc", help="modulus-of-continuity tools")
    moc_sub = p.add_subparsers(dest="moc_command", required=True)

    q = moc_sub.add_parser("certify", help="scan and certify negativity")
    q.add_argument("--delta", type=float, default=1e-2)
    q.add_argument("--gamma", type=float, default=1e-4)
    q.add_argument("--C", type=float, default=1.0,
                   help="prefactor on the advective functional")
    q.add_argument("--points", type=int, default=2000)
    q.add_argument("--lo", type=float, default=1e-6)
    q.add_argument("--hi", type=float, default=1e6)
    q.add_argument("--out", default="out")
    q.set_defaults(func=_cmd_moc_certify)

    q = moc_sub.add_parser("monitor", help="breach statistic over snapshots")
    q.add_argument("--traj", required=True,
                   help="directory of .sqgf snapshot files")
    q.add_argument("--delta", type=float, default=1e-2)
    q.add_argument("--gamma", type=float, default=1e-4)
    q.add_argument("--lam", type=float,
                   help="rescaling slope; chosen from the first snapshot "
                        "when omitted")
    q.add_argument("--c0", type=float,
                   help="long-range safety scale (with --lam)")
    q.add_argument("--long-pairs", type=int, default=100_000)
    q.add_argument("--seed", type=int, default=7)
    q.add_argument("--out", default="out")
    q.set_defaults(func=_cmd_moc_monitor)

    p = sub.add_parser("field", help="snapshot file utilities")
    field_sub = p.add_subparsers(dest="field_command", required=True)

    q = field_sub.add_parser("dump", help="synthesize a member to a file")
    _add_config(q)
    _add_member(q, default_amp=None)
    q.add_argument("--t", type=float, default=0.0,
                   help="time stamp for the header")
    q.add_argument("--path", required=True)
    q.set_defaults(func=_cmd_field_dump)

    q = field_sub.add_parser("load", help="print header and norms")
    q.add_argument("path")
    q.set_defaults(func=_cmd_field_load)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SnapshotFormatError, FileNotFoundError,
            ValueError) as exc:
        print(f"sqg-lab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
