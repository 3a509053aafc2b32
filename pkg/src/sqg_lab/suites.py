"""Verification suites over the deterministic corpus, and their runner.

Each suite builds its own fields from the scenario seed, measures one family
of inequalities, and emits VerificationReports. run_suite executes the
requested suites in a worker pool (size capped by SQG_THREADS), aggregates
reports in request order, and writes reports.json, a summary table, and a
manifest of artifact hashes. Nothing here depends on wall-clock time, so a
fixed config and seed reproduce the artifacts byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig, SuiteEntry
from .corpus import bump, random_band, single_mode, standard_corpus, steep_front
from .dyadic import besov_norm, besov_norm_fd, build_partition
from .flows import (
    CLAIM_COMMUTATOR,
    CLAIM_FLOWCOMM,
    CLAIM_VISHIK,
    commutator_estimate_sweep,
    commutator_sum_ratio,
    flow_commutator_q_sweep,
    flow_commutator_v_sweep,
    integrate_flow,
    shear_velocity,
    telegraph_velocity,
    vishik_sweep,
    windowed_rotation,
)
from .moc import ModulusOfContinuity, certify_negativity
from .reports import VerificationReport, register_claim
from .solver import (
    EvolutionConfig,
    Trajectory,
    blowup_proxy,
    contraction_ratios,
    fit_transport_constant,
    picard_contracted,
    picard_iterate,
    run,
    run_td,
    smoothing_monitor,
    transport_ratio,
)
from .spectral import Field, Grid2D, semigroup_apply, velocity_from_theta

CLAIM_PICARD = register_claim(
    "under certified small data the successive linear iterates contract "
    "geometrically and stay inside twice the smallness budget")
CLAIM_TRANSPORT = register_claim(
    "transported scalars obey the mixed-norm bound with exponential "
    "advective growth and one constant across the scenario suite")
CLAIM_SMOOTHING = register_claim(
    "critical runs gain derivatives at the self-similar rate with a "
    "suite-stable constant")
CLAIM_BLOWUP = register_claim(
    "the time-weighted gradient proxy of a regular run decays to zero")
CLAIM_DECAY = register_claim(
    "ring-supported data decays under the semigroup at its octave rate")
CLAIM_BESOV = register_claim(
    "difference and block formulations of the smoothness norms agree "
    "within fixed factors")
CLAIM_MAXP = register_claim(
    "unforced runs never increase their Lebesgue norms")
CLAIM_MOC = register_claim(
    "the modulus family certifies strict negativity of the contraction "
    "criterion over the scan range")


def _grid(cfg: ScenarioConfig) -> Grid2D:
    return Grid2D(cfg.n, cfg.L)


def _leray(v1: Field, v2: Field) -> tuple[Field, Field]:
    """Project a velocity onto its divergence-free part spectrally."""
    g = v1.grid
    ksq = g.kabs ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        div_part = np.where(
            ksq > 0.0, (g.k1 * v1.spectral + g.k2 * v2.spectral) / ksq, 0.0)
    return (Field.from_spectral(g, v1.spectral - g.k1 * div_part),
            Field.from_spectral(g, v2.spectral - g.k2 * div_part))


def _scaled(fld: Field, amp: float) -> Field:
    sup = float(np.abs(fld.physical).max())
    return fld * (amp / sup) if sup > 0 else fld


def _report(name, claim, lhs, rhs, passed, **metadata) -> VerificationReport:
    lhs, rhs = float(lhs), float(rhs)
    if rhs != 0.0:
        ratio = lhs / rhs
    else:
        ratio = 0.0 if lhs <= 0.0 else math.inf
    return VerificationReport(name=name, claim=claim, lhs=lhs, rhs=rhs,
                              ratio=ratio, passed=bool(passed),
                              metadata=metadata)


# --- individual suites ------------------------------------------------------


def _suite_picard(cfg: ScenarioConfig, params: dict) -> list[VerificationReport]:
    grid = _grid(cfg)
    members = int(params.get("members", 3))
    amp = float(params.get("amplitude", 0.05))
    eta = float(params.get("eta", 0.9))
    eps0 = float(params.get("eps0", 0.1))
    out = []
    for i in range(members):
        theta0 = _scaled(random_band(grid, cfg.seed * 31 + i), amp)
        states = picard_iterate(theta0, n_max=int(params.get("n_max", 6)),
                                eps0=eps0, steps=int(params.get("steps", 24)))
        ratios = contraction_ratios(states)
        contracted = picard_contracted(states, eta=eta)
        bound = max(s.iterate_bound for s in states[1:])
        ok = contracted and bound <= 2.0 * eps0
        out.append(_report(
            f"picard-{i}", CLAIM_PICARD,
            lhs=ratios[-1] if ratios else math.inf, rhs=eta, passed=ok,
            small_data_lhs=states[0].small_data_lhs,
            iterate_bound=bound,
            horizon=float(states[0].trajectory.times[-1]),
            ratios=ratios, seed=cfg.seed * 31 + i, n=grid.n))
    return out


def build_transport_scenarios(grid: Grid2D, seed: int, count: int,
                              t_end: float = 0.4):
    """Frozen-velocity runs cycling through shear, Riesz, rotation, and
    force-only scenarios with varied magnitudes and data. Returns parallel
    lists of labels and trajectories."""
    cfg = EvolutionConfig(t_end=t_end, dt=t_end / 32.0, snapshot_every=1)
    labels, trajs = [], []
    for i in range(count):
        theta0 = _scaled(random_band(grid, seed * 101 + i), 0.5)
        forcing = None
        kind = i % 4
        if kind == 0:
            v_fn = shear_velocity(grid, amplitude=0.25 * (1 + i // 4), k=1)
            label = "shear"
        elif kind == 1:
            vel = velocity_from_theta(
                _scaled(random_band(grid, seed * 211 + i), 0.5 + 0.1 * i))
            v_fn = lambda t, vel=vel: vel
            label = "riesz"
        elif kind == 2:
            # the tapered rotation is divergence-free analytically but its
            # grid sampling carries aliasing; project before transporting
            rot = _leray(*windowed_rotation(grid, omega=0.4 + 0.15 * (i // 4))(0.0))
            v_fn = lambda t, rot=rot: rot
            label = "rotation"
        else:
            zero = Field.from_physical(grid, np.zeros((grid.n, grid.n)))
            v_fn = lambda t, z=zero: (z, z)
            f0 = _scaled(random_band(grid, seed * 307 + i), 0.3)
            forcing = lambda t, f0=f0: f0
            label = "force-only"
        labels.append(label)
        trajs.append(run_td(theta0, v_fn, cfg, forcing=forcing))
    return labels, trajs


def _suite_transport(cfg: ScenarioConfig, params: dict) -> list[VerificationReport]:
    grid = _grid(cfg)
    count = int(params.get("scenarios", 8))
    s = float(params.get("s", 0.0))
    r = params.get("r", 1)
    rbar = params.get("rbar", 1)
    labels, trajs = build_transport_scenarios(
        grid, cfg.seed, count, t_end=float(params.get("t_end", 0.4)))
    fitted = fit_transport_constant(trajs, s, r, rbar)
    out = [_report("transport-fit", CLAIM_TRANSPORT, lhs=fitted, rhs=1e4,
                   passed=math.isfinite(fitted), s=s, r=r, rbar=rbar,
                   scenarios=count, n=grid.n)]
    for i, (label, traj) in enumerate(zip(labels, trajs)):
        rep = transport_ratio(traj, s, r, rbar, fitted)
        out.append(_report(
            f"transport-{i}", CLAIM_TRANSPORT, lhs=rep["ratio"], rhs=1.0,
            passed=rep["ratio"] <= 1.0 + 1e-9, kind=label,
            constant=fitted))
    return out


_SMOOTHING_BETAS = (0.5, 1.0)


def _smoothing_members(cfg: ScenarioConfig) -> list[Field]:
    grid = _grid(cfg)
    return [
        _scaled(random_band(grid, cfg.seed * 17 + 1), 0.5),
        _scaled(bump(grid), 0.8),
        _scaled(steep_front(grid), 0.6),
        single_mode(grid, (2, 1), amplitude=0.5),
    ]


def _fit_growth_rate(monitors, beta: float) -> float:
    """Least-squares growth rate collapsing the member constants.

    The envelope carries exp(c (beta+1) |history|) with c unknown; in log
    space the member constants are affine in c, so the variance-minimizing
    rate is a regression slope. Clamped below at zero, growth only.
    """
    a = np.log([m["value"] / m["sup_besov0"] for m in monitors])
    x = (beta + 1.0) * np.asarray([m["l1_besov1"] for m in monitors])
    dx = x - x.mean()
    denom = float(dx @ dx)
    c = float(dx @ (a - a.mean()) / denom) if denom > 0 else 0.0
    return max(c, 0.0)


def _suite_smoothing(cfg: ScenarioConfig, params: dict) -> list[VerificationReport]:
    t_end = float(params.get("t_end", 1.0))
    run_cfg = EvolutionConfig(t_end=t_end, dt=t_end / 16.0, snapshot_every=1)
    trajs = [run(m, run_cfg) for m in _smoothing_members(cfg)]
    out = []
    for beta in _SMOOTHING_BETAS:
        monitors = [smoothing_monitor(tr, beta) for tr in trajs]
        c = _fit_growth_rate(monitors, beta)
        consts = [
            m["value"] / (math.exp(c * (beta + 1.0) * m["l1_besov1"])
                          * m["sup_besov0"])
            for m in monitors]
        spread = max(consts) / min(consts)
        finite = all(math.isfinite(m["value"]) for m in monitors)
        out.append(_report(
            f"smoothing-beta-{beta}", CLAIM_SMOOTHING, lhs=spread, rhs=2.0,
            passed=finite and spread <= 2.0, growth_rate=c,
            values=[m["value"] for m in monitors], constants=consts))
    # at beta = 0 the weighted sup is exactly the sup-over-time block norm,
    # and it sits below the tilde variant that swaps sup and block sum
    drift = 0.0
    dominated = True
    for tr in trajs:
        m = smoothing_monitor(tr, 0.0)
        plain = max(d["besov0"] for t, d in zip(tr.times, tr.diagnostics)
                    if t > 0.0)
        drift = max(drift, abs(m["value"] - plain) / plain)
        dominated = dominated and m["value"] <= m["sup_besov0"] * (1 + 1e-12)
    out.append(_report("smoothing-beta-0", CLAIM_SMOOTHING, lhs=drift,
                       rhs=1e-12, passed=drift <= 1e-12 and dominated))
    return out


def _suite_blowup(cfg: ScenarioConfig, params: dict) -> list[VerificationReport]:
    grid = _grid(cfg)
    t_end = float(params.get("t_end", 1.0))
    theta0 = _scaled(random_band(grid, cfg.seed * 13 + 5), 0.5)
    traj = run(theta0, EvolutionConfig(t_end=t_end, dt=t_end / 32.0,
                                       snapshot_every=1))
    proxy = blowup_proxy(traj)
    scale = t_end * max(d["grad_inf"] for d in traj.diagnostics)
    return [_report("blowup-proxy", CLAIM_BLOWUP, lhs=proxy,
                    rhs=0.2 * scale, passed=proxy <= 0.2 * scale,
                    grad_final=traj.diagnostics[-1]["grad_inf"],
                    blown_up=traj.blown_up)]


def _suite_decay(cfg: ScenarioConfig, params: dict) -> list[VerificationReport]:
    grid = _grid(cfg)
    part = build_partition(grid)
    octaves = int(params.get("octaves", 4))
    # the top block straddles the dealias corner; ring synthesis there is
    # degenerate on coarse grids, so sweep the highest fully reliable octaves
    q_hi = min(part.q_min + 1 + octaves, part.q_max - 1)
    q0 = int(params.get("q_lo", q_hi - octaves + 1))
    out = []
    for q in range(q0, q0 + octaves):
        # offset by the window bottom so the derived seed stays non-negative
        f = random_band(grid, cfg.seed * 7 + (q - part.q_min), q_lo=q, q_hi=q)
        s0 = float(np.abs(f.physical).max())
        ts = np.linspace(0.0, 0.3 * 2.0 ** -q, 5)[1:]
        sups = [float(np.abs(semigroup_apply(f, t).physical).max())
                for t in ts]
        slope = np.polyfit(ts, np.log(np.array(sups) / s0), 1)[0]
        rate = -float(slope)
        out.append(_report(
            f"decay-q{q}", CLAIM_DECAY, lhs=rate, rhs=0.7 * 2.0 ** q,
            passed=rate >= 0.7 * 2.0 ** q, q=q, sup0=s0))
    return out


_BESOV_EXPONENTS = (0.3, 0.5, 0.8)


def _suite_besov(cfg: ScenarioConfig, params: dict) -> list[VerificationReport]:
    grid = _grid(cfg)
    members = standard_corpus(grid, cfg.seed)
    out = []
    for s in _BESOV_EXPONENTS:
        ratios = []
        for m in members:
            dyadic = besov_norm(m, s, np.inf, 1).value
            fd = besov_norm_fd(m, s, np.inf, 1)
            ratios.append(fd / dyadic)
        worst = max(max(ratios), 1.0 / min(ratios))
        out.append(_report(
            f"besov-s{s}", CLAIM_BESOV, lhs=worst, rhs=10.0,
            passed=worst <= 10.0, ratio_min=min(ratios),
            ratio_max=max(ratios), members=len(members)))
    return out


def _suite_maxprinciple(cfg: ScenarioConfig, params: dict) -> list[VerificationReport]:
    grid = _grid(cfg)
    t_end = float(params.get("t_end", 1.0))
    run_cfg = EvolutionConfig(t_end=t_end, snapshot_every=1)
    members = [
        _scaled(random_band(grid, cfg.seed * 41 + 1), 0.4),
        _scaled(random_band(grid, cfg.seed * 41 + 2), 0.8),
        _scaled(bump(grid), 0.7),
        _scaled(steep_front(grid), 0.5),
        single_mode(grid, (3, -2), amplitude=0.6),
    ]
    out = []
    for i, m in enumerate(members):
        traj = run(m, run_cfg)
        drift = 0.0
        for key in ("l2", "l4", "linf"):
            vals = np.array([d[key] for d in traj.diagnostics])
            rise = np.diff(vals) / np.diff(traj.times)
            drift = max(drift, float(rise.max(initial=0.0)) / vals[0])
        out.append(_report(
            f"maxprinciple-{i}", CLAIM_MAXP, lhs=drift, rhs=1e-8,
            passed=drift <= 1e-8, member=i, steps=len(traj.times) - 1))
    return out


def _suite_commutator(cfg: ScenarioConfig, params: dict) -> list[VerificationReport]:
    grid = _grid(cfg)
    bound = float(params.get("bound", 50.0))
    members = [
        _scaled(random_band(grid, cfg.seed * 53 + 1), 1.0),
        _scaled(random_band(grid, cfg.seed * 53 + 2), 1.0),
        _scaled(bump(grid), 1.0),
        _scaled(steep_front(grid), 1.0),
    ]
    out = []
    for i, m in enumerate(members):
        v = velocity_from_theta(m)
        total = commutator_sum_ratio(
            commutator_estimate_sweep(v, m, s=float(params.get("s", 0.0))))
        out.append(_report(
            f"commutator-{i}", CLAIM_COMMUTATOR, lhs=total, rhs=bound,
            passed=math.isfinite(total) and total <= bound, member=i))
    return out


def _standard_flows(grid: Grid2D, t: float, q: int):
    return [
        integrate_flow(shear_velocity(grid, amplitude=0.6, k=1), q, t),
        integrate_flow(windowed_rotation(grid, omega=0.8), q, t),
    ]


def _suite_vishik(cfg: ScenarioConfig, params: dict) -> list[VerificationReport]:
    grid = _grid(cfg)
    part = build_partition(grid)
    q_mid = (part.q_min + part.q_max) // 2
    f = random_band(grid, cfg.seed * 61 + 3)
    flows = _standard_flows(grid, float(params.get("t", 0.15)), q_mid)
    sweep = vishik_sweep(f, flows)
    return [_report(
        "vishik-sweep", CLAIM_VISHIK, lhs=sweep["constant"], rhs=10.0,
        passed=sweep["monotone"] and math.isfinite(sweep["constant"]),
        monotone=sweep["monotone"], q_mid=sweep["q_mid"])]


def _suite_flowcomm(cfg: ScenarioConfig, params: dict) -> list[VerificationReport]:
    grid = _grid(cfg)
    part = build_partition(grid)
    f = random_band(grid, cfg.seed * 71 + 9)
    v_fn = shear_velocity(grid, amplitude=0.6, k=1)
    qs = list(range(part.q_min + 2, part.q_min + 6))
    qsweep = flow_commutator_q_sweep(v_fn, f, qs, float(params.get("t", 0.15)))
    out = [_report(
        "flowcomm-q", CLAIM_FLOWCOMM, lhs=qsweep["slope"], rhs=1.0,
        passed=abs(qsweep["slope"] - 1.0) <= 0.2, qs=qs)]
    # the sqrt(V) envelope is saturated by sign-flipping histories whose
    # displacement diffuses; average the defect over a few realizations
    amp = float(params.get("amplitude", 0.6))
    gmax = amp * grid.k0
    v_targets = np.geomspace(1e-3, 1e-1, int(params.get("v_points", 7)))
    times = list(v_targets / gmax)
    tau = times[0] / 6.0
    seeds = int(params.get("v_seeds", 4))
    lhs_rows = []
    for j in range(seeds):
        tele = telegraph_velocity(grid, amplitude=amp, k=1, flip_every=tau,
                                  seed=cfg.seed * 977 + j)
        sweep = flow_commutator_v_sweep(tele, f, qs[-1], times,
                                        dt_max=tau / 2.0)
        lhs_rows.append([rep.lhs for rep in sweep["reports"]])
    mean_lhs = np.mean(np.asarray(lhs_rows), axis=0)
    slope = float(np.polyfit(np.log(v_targets), np.log(mean_lhs), 1)[0])
    out.append(_report(
        "flowcomm-v", CLAIM_FLOWCOMM, lhs=slope, rhs=0.5,
        passed=abs(slope - 0.5) <= 0.15,
        v_values=list(v_targets), seeds=seeds, mean_lhs=list(mean_lhs)))
    return out


def _suite_moc(cfg: ScenarioConfig, params: dict) -> list[VerificationReport]:
    moc = ModulusOfContinuity(delta=float(params.get("delta", 1e-2)),
                              gamma=float(params.get("gamma", 1e-4)))
    report = certify_negativity(moc, points=int(params.get("points", 400)),
                                C=float(params.get("C", 1.0)))
    return [_report(
        "moc-negativity", CLAIM_MOC, lhs=report.margin, rhs=0.0,
        passed=report.certified, points=int(report.xi_grid.size),
        offending=list(report.offending_xi))]


_SUITES = {
    "picard": _suite_picard,
    "transport": _suite_transport,
    "smoothing": _suite_smoothing,
    "blowup": _suite_blowup,
    "decay": _suite_decay,
    "besov": _suite_besov,
    "maxprinciple": _suite_maxprinciple,
    "commutator": _suite_commutator,
    "vishik": _suite_vishik,
    "flowcomm": _suite_flowcomm,
    "moc": _suite_moc,
}


def available_suites() -> tuple[str, ...]:
    return tuple(sorted(_SUITES))


def default_suite() -> tuple[SuiteEntry, ...]:
    return tuple(SuiteEntry(name=n) for n in _SUITES)


# --- runner and artifacts ---------------------------------------------------


@dataclass
class SuiteResult:
    reports: list[VerificationReport] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures and all(r.passed for r in self.reports)


def _worker_count() -> int:
    env = os.environ.get("SQG_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def run_suite(cfg: ScenarioConfig, out_dir=None) -> SuiteResult:
    """Execute the configured suites and aggregate their reports.

    Suites run in a worker pool but reports are merged in request order, so
    the output is independent of scheduling. A crashing suite is recorded in
    failures and the rest still complete.
    """
    result = SuiteResult()
    jobs = []
    for i, entry in enumerate(cfg.suite):
        if entry.name not in _SUITES:
            raise ValueError(
                f"unknown suite {entry.name!r}; available: "
                f"{', '.join(sorted(_SUITES))}")
        jobs.append((i, entry))
    slots: list[list[VerificationReport] | None] = [None] * len(jobs)
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        futures = {
            pool.submit(_SUITES[entry.name], cfg, dict(entry.params)): (i, entry)
            for i, entry in jobs
        }
        for fut, (i, entry) in futures.items():
            label = f"{entry.name}[{i}]"
            try:
                slots[i] = fut.result()
            except Exception:
                result.failures[label] = traceback.format_exc()
    for got in slots:
        if got:
            result.reports.extend(got)
    if out_dir is not None:
        write_artifacts(result, out_dir)
    return result


def _plain(value):
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _summary_table(result: SuiteResult) -> str:
    lines = [f"{'check':32} {'verdict':8} {'lhs':>12} {'rhs':>12} {'ratio':>10}"]
    lines.append("-" * 78)
    for r in result.reports:
        lines.append(
            f"{r.name:32} {'pass' if r.passed else 'FAIL':8} "
            f"{r.lhs:12.4g} {r.rhs:12.4g} {r.ratio:10.3g}")
    for label, tb in result.failures.items():
        lines.append(f"\ncrashed: {label}\n{tb}")
    verdict = "ALL PASS" if result.ok else "FAILURES PRESENT"
    lines.append("-" * 78)
    lines.append(verdict)
    return "\n".join(lines) + "\n"


def write_artifacts(result: SuiteResult, out_dir) -> dict:
    """Write reports.json, summary.txt, and a manifest of content hashes."""
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "reports": [_plain(r.to_dict()) for r in result.reports],
        "failures": dict(result.failures),
        "ok": result.ok,
    }
    artifacts = {
        "reports.json": json.dumps(payload, indent=2, sort_keys=True) + "\n",
        "summary.txt": _summary_table(result),
    }
    manifest = {"files": {}}
    for name, text in artifacts.items():
        data = text.encode("utf-8")
        with open(os.path.join(out_dir, name), "wb") as fh:
            fh.write(data)
        manifest["files"][name] = hashlib.sha256(data).hexdigest()
    with open(os.path.join(out_dir, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
