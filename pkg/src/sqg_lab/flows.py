"""Transport commutators and regularized flow maps.

Three families of measurements live here. Block commutators [Delta_q, v.grad]
against the gradient-of-velocity bound; particle flow maps of a low-pass
velocity with their measure, inverse, and gradient invariants; and the two
composition probes, block decay under a measure-preserving change of
variables and the near-commutation of the dissipative symbol with the
regularized flow.

Flow maps are integrated with RK4 from every grid node at once; velocities at
off-grid positions come from cubic spline sampling with periodic wrap.
Compositions with a flow sample the same way and re-project under the 2/3
cutoff, recording how much energy the composition pushed above it.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dyadic import (
    BlockRangeError,
    _soft_step,
    besov_norm,
    build_partition,
    low_pass,
    project,
)
from .reports import VerificationReport, register_claim
from .solver import sup_operator_norm, velocity_grad_inf
from .spectral import (
    Field,
    Grid2D,
    apply_multiplier,
    dealiased_product,
    divergence,
    frac_lap,
    gradient,
    lp_norm,
)

CLAIM_VISHIK = register_claim(
    "blocks of a field composed with a measure-preserving flow decay "
    "off-diagonally in the block separation")
CLAIM_FLOWCOMM = register_claim(
    "the half-derivative symbol nearly commutes with composition by the "
    "flow of a velocity regularized at the block scale")
CLAIM_COMMUTATOR = register_claim(
    "transport commutators on dyadic blocks are controlled by the velocity "
    "gradient times the weighted block sum")


class FlowAbort(RuntimeError):
    """Raised when step refinement cannot keep the flow measure-preserving."""


# --- block commutators ------------------------------------------------------


def _advect(v: tuple[Field, Field], theta: Field) -> Field:
    g1, g2 = gradient(theta)
    return dealiased_product(v[0], g1) + dealiased_product(v[1], g2)


def _check_block(part, q: int):
    if q < part.q_min or q > part.q_max:
        raise BlockRangeError(
            f"block {q} outside window [{part.q_min}, {part.q_max}]")


def _block_field(u: Field, q: int, part) -> Field:
    return Field.from_spectral(u.grid, part.phi(q) * u.spectral)


def commutator_block(v: tuple[Field, Field], theta: Field, q: int) -> Field:
    """[Delta_q, v.grad] theta with dealiased products throughout."""
    part = build_partition(theta.grid)
    _check_block(part, q)
    first = _block_field(_advect(v, theta), q, part)
    second = _advect(v, _block_field(theta, q, part))
    return first - second


@dataclass(frozen=True)
class CommutatorReport:
    """One block's commutator measurement against the estimate's pieces."""

    q: int
    lhs: float
    rhs_factors: tuple[float, ...]
    ratio: float


def _velocity_grad_inf(v: tuple[Field, Field]) -> float:
    return velocity_grad_inf(v[0], v[1])


def commutator_estimate_sweep(v: tuple[Field, Field], theta: Field,
                              s: float) -> list[CommutatorReport]:
    """Per-block weighted commutator sizes against grad-v times the block sum.

    The aggregate statistic of the estimate is the sum of the returned
    ratios, since every report shares the same right-hand factors.
    """
    if not (-1.0 < s < 1.0):
        raise ValueError(f"weight index must be in (-1, 1), got {s}")
    div = divergence(v[0], v[1])
    scale = max(_velocity_grad_inf(v), 1e-300)
    if np.abs(div.physical).max() > 1e-8 * scale:
        raise ValueError("velocity must be divergence-free")
    part = build_partition(theta.grid)
    grad_v = _velocity_grad_inf(v)
    bnorm = besov_norm(theta.project_mean_free(), s, np.inf, 1).value
    out = []
    for q in part.q_range:
        comm = commutator_block(v, theta, q)
        lhs = 2.0 ** (q * s) * lp_norm(comm, np.inf)
        denom = grad_v * bnorm
        out.append(CommutatorReport(
            q, lhs, (grad_v, bnorm),
            lhs / denom if denom > 0 else float("inf")))
    return out


def commutator_sum_ratio(reports: list[CommutatorReport]) -> float:
    return float(sum(r.ratio for r in reports))


# --- flow maps --------------------------------------------------------------


_SPLINE_CACHE: OrderedDict = OrderedDict()
_SPLINE_LOCK = threading.Lock()


def _spline_table(field: Field) -> np.ndarray:
    """Periodic cubic-spline coefficients, cached by field identity."""
    key = id(field)
    with _SPLINE_LOCK:
        hit = _SPLINE_CACHE.get(key)
        if hit is not None and hit[0] is field:
            _SPLINE_CACHE.move_to_end(key)
            return hit[1]
    table = ndimage.spline_filter(field.physical, order=3, mode="grid-wrap")
    with _SPLINE_LOCK:
        _SPLINE_CACHE[key] = (field, table)
        while len(_SPLINE_CACHE) > 16:
            _SPLINE_CACHE.popitem(last=False)
    return table


def _sample(field: Field, pos1: np.ndarray, pos2: np.ndarray) -> np.ndarray:
    """Cubic sampling of a field at arbitrary positions, periodic wrap."""
    g = field.grid
    coords = np.stack([pos1 / g.dx, pos2 / g.dx])
    return ndimage.map_coordinates(_spline_table(field), coords, order=3,
                                   mode="grid-wrap", prefilter=False)


@dataclass(frozen=True)
class FlowMap:
    """Particle flow of a divergence-free velocity, stored as displacements.

    forward[i] and inverse[i] are the two displacement components on the
    grid; the map itself is x + displacement. V_t accumulates the sup of the
    regularized velocity gradient over the integration window.
    """

    grid: Grid2D
    forward: np.ndarray
    inverse: np.ndarray
    t: float
    V_t: float
    hess_inf: float = float("nan")

    @classmethod
    def identity(cls, grid: Grid2D) -> "FlowMap":
        zero = np.zeros((2, grid.n, grid.n))
        return cls(grid, zero, zero.copy(), 0.0, 0.0, 0.0)

    def _positions(self, direction: str) -> tuple[np.ndarray, np.ndarray]:
        disp = self.forward if direction == "forward" else self.inverse
        x1 = self.grid.x1 + disp[0]
        x2 = self.grid.x2 + disp[1]
        return x1, x2

    def jacobian(self, direction: str = "forward") -> np.ndarray:
        """Pointwise determinant of the map's Jacobian, by spectral
        differentiation of the periodic displacement."""
        disp = self.forward if direction == "forward" else self.inverse
        d1 = Field.from_physical(self.grid, disp[0])
        d2 = Field.from_physical(self.grid, disp[1])
        a11, a12 = (g.physical for g in gradient(d1))
        a21, a22 = (g.physical for g in gradient(d2))
        return (1.0 + a11) * (1.0 + a22) - a12 * a21

    def grad_inf(self, direction: str = "forward") -> float:
        disp = self.forward if direction == "forward" else self.inverse
        d1 = Field.from_physical(self.grid, disp[0])
        d2 = Field.from_physical(self.grid, disp[1])
        a11, a12 = (g.physical for g in gradient(d1))
        a21, a22 = (g.physical for g in gradient(d2))
        return sup_operator_norm(1.0 + a11, a12, a21, 1.0 + a22)

    def roundtrip_error(self) -> float:
        """Sup distance of inverse-after-forward from the identity."""
        x1, x2 = self._positions("forward")
        b1 = x1 + _sample(Field.from_physical(self.grid, self.inverse[0]),
                          x1, x2)
        b2 = x2 + _sample(Field.from_physical(self.grid, self.inverse[1]),
                          x1, x2)
        L = self.grid.L
        e1 = np.abs((b1 - self.grid.x1 + 0.5 * L) % L - 0.5 * L)
        e2 = np.abs((b2 - self.grid.x2 + 0.5 * L) % L - 0.5 * L)
        return float(np.maximum(e1, e2).max())

    def compose(self, f: Field, direction: str = "forward") -> tuple[Field, float]:
        """f after the map, re-projected under the 2/3 cutoff.

        Returns the composed field and the fraction of its energy the
        composition pushed above the cutoff (removed by the projection).
        """
        if f.grid != self.grid:
            raise ValueError("field and flow live on different grids")
        x1, x2 = self._positions(direction)
        samples = _sample(f, x1, x2)
        raw = Field.from_physical(self.grid, samples)
        total = float(np.sum(np.abs(raw.spectral) ** 2))
        kept = float(np.sum(np.abs(raw.spectral[self.grid.dealias_mask]) ** 2))
        leak = 0.0 if total == 0.0 else 1.0 - kept / total
        return raw.dealiased(), leak


def _hessian_inf(grid: Grid2D, disp: np.ndarray) -> float:
    worst = 0.0
    for comp in disp:
        f = Field.from_physical(grid, comp)
        for axis in (1, 2):
            gax = gradient(f)[axis - 1]
            h1, h2 = gradient(gax)
            worst = max(worst, float(np.abs(h1.physical).max()),
                        float(np.abs(h2.physical).max()))
    return worst


def _integrate_displacement(grid, velocity_at, t, n_steps):
    """RK4 for all grid nodes at once; returns displacement components."""
    x1 = grid.x1.copy()
    x2 = grid.x2.copy()
    p1, p2 = x1.copy(), x2.copy()
    h = t / n_steps
    for i in range(n_steps):
        ti = i * h
        a1, a2 = velocity_at(ti, p1, p2)
        b1, b2 = velocity_at(ti + 0.5 * h, p1 + 0.5 * h * a1, p2 + 0.5 * h * a2)
        c1, c2 = velocity_at(ti + 0.5 * h, p1 + 0.5 * h * b1, p2 + 0.5 * h * b2)
        d1, d2 = velocity_at(ti + h, p1 + h * c1, p2 + h * c2)
        p1 = p1 + (h / 6.0) * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
        p2 = p2 + (h / 6.0) * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
    return p1 - x1, p2 - x2


def integrate_flow(v_fn, q: int, t: float, n_steps: int | None = None,
                   max_refines: int = 3,
                   jac_target: float = 1e-4,
                   jac_abort: float = 1e-3) -> FlowMap:
    """Flow map of the velocity low-passed strictly below block q.

    Integrates forward and backward with RK4 from every grid node. When the
    Jacobian determinant drifts from one beyond jac_target the step count is
    doubled; if it stays beyond jac_abort after the refinement budget the
    integration is abandoned.
    """
    if t < 0.0:
        raise ValueError("flow horizon must be nonnegative")
    v1_0, v2_0 = v_fn(0.0)
    grid = v1_0.grid
    part = build_partition(grid)
    probe1, probe2 = v_fn(0.0)
    static = probe1 is v1_0 and probe2 is v2_0
    frozen = (low_pass(v1_0, q, part), low_pass(v2_0, q, part)) if static else None

    def regularized(time):
        if frozen is not None:
            return frozen
        w1, w2 = v_fn(time)
        return low_pass(w1, q, part), low_pass(w2, q, part)

    def velocity_at(time, p1, p2):
        w1, w2 = regularized(time)
        return _sample(w1, p1, p2), _sample(w2, p1, p2)

    def backward_at(time, p1, p2):
        w1, w2 = velocity_at(t - time, p1, p2)
        return -w1, -w2

    r1, r2 = regularized(0.0)
    gmax = _velocity_grad_inf((r1, r2))
    if t == 0.0:
        return FlowMap.identity(grid)
    if n_steps is None:
        n_steps = max(16, int(math.ceil(t * max(gmax, 1e-12) / 0.02)))
    # accumulate the regularized gradient history on the step grid
    for _ in range(max_refines + 1):
        fwd = _integrate_displacement(grid, velocity_at, t, n_steps)
        inv = _integrate_displacement(grid, backward_at, t, n_steps)
        flow = FlowMap(grid, np.stack(fwd), np.stack(inv), t,
                       _accumulate_v(regularized, t, n_steps),
                       _hessian_inf(grid, np.stack(fwd)))
        drift = float(np.abs(flow.jacobian("forward") - 1.0).max())
        if drift <= jac_target:
            return flow
        n_steps *= 2
    if drift > jac_abort:
        raise FlowAbort(
            f"Jacobian drift {drift:.3e} after refinement budget")
    return flow


def _accumulate_v(regularized, t, n_steps) -> float:
    h = t / n_steps
    times = np.linspace(0.0, t, n_steps + 1)
    vals = [_velocity_grad_inf(regularized(ti)) for ti in times]
    return float(np.trapezoid(vals, dx=h))


# --- composition probes -----------------------------------------------------


def vishik_probe(f: Field, psi: FlowMap, j: int, q: int) -> VerificationReport:
    """Block j content of (block q of f) composed with the flow.

    The headline ratio uses the sup norm; the L2 route and the raw
    (uncompensated) ratios ride along in the metadata.
    """
    part = build_partition(f.grid)
    _check_block(part, j)
    block = project(f, q, part)
    composed, leak = psi.compose(_block_field(f, q, part))
    sep = abs(j - q)
    grad_used = psi.grad_inf("forward" if j >= q else "inverse")
    numer = {}
    denom = {}
    for p, labelled in ((2, "p2"), (np.inf, "pinf")):
        num = lp_norm(_block_field(composed, j, part), p)
        base = block.norm(p)
        numer[labelled] = num
        denom[labelled] = 2.0 ** (-sep) * grad_used * base
    ratio = (numer["pinf"] / denom["pinf"]) if denom["pinf"] > 0 else 0.0
    return VerificationReport(
        name=f"vishik j={j} q={q}",
        claim=CLAIM_VISHIK,
        lhs=numer["pinf"],
        rhs=denom["pinf"],
        ratio=ratio,
        passed=bool(np.isfinite(ratio)),
        metadata={
            "j": j, "q": q, "band_leak": leak,
            "warning": leak > 0.01,
            "l2": {"lhs": numer["p2"], "rhs": denom["p2"]},
            "raw_ratio": (numer["pinf"] / block.norm(np.inf)
                          if block.norm(np.inf) > 0 else 0.0),
        })


def vishik_sweep(f: Field, flows: list[FlowMap], max_sep: int = 4) -> dict:
    """Probes over |j - q| <= max_sep for several flows around a mid block.

    Returns the fitted uniform constant, the per-separation raw decay
    profiles, and whether every profile is non-increasing in the separation.
    """
    part = build_partition(f.grid)
    q_mid = (part.q_min + part.q_max) // 2
    reports = []
    profiles = []
    for psi in flows:
        row = {}
        for j in range(max(part.q_min, q_mid - max_sep),
                       min(part.q_max, q_mid + max_sep) + 1):
            rep = vishik_probe(f, psi, j, q_mid)
            reports.append(rep)
            row[j - q_mid] = rep.metadata["raw_ratio"]
        profiles.append(row)
    monotone = all(_decays_from_center(row) for row in profiles)
    constant = max(r.ratio for r in reports)
    return {
        "constant": constant,
        "monotone": monotone,
        "profiles": profiles,
        "reports": reports,
        "q_mid": q_mid,
    }


def _decays_from_center(row: dict[int, float]) -> bool:
    ups = sorted(k for k in row if k >= 0)
    downs = sorted((k for k in row if k <= 0), reverse=True)
    floor = 1e-9 * max(row.values(), default=0.0)
    for seq in (ups, downs):
        vals = [row[k] for k in seq]
        for a, b in zip(vals, vals[1:]):
            if b > 1.05 * a + floor:
                return False
    return True


def flow_commutator(f: Field, psi_q: FlowMap, q: int) -> VerificationReport:
    """Defect of moving the half-derivative symbol across the composition.

    lhs = || |D|(block f o psi) - (|D| block f) o psi ||_inf measured
    spectrally on the re-projected compositions; rhs is the constant-free
    envelope sqrt(V) 2^q times the block's sup.
    """
    part = build_partition(f.grid)
    _check_block(part, q)
    block_field = _block_field(f, q, part)
    sym = frac_lap(f.grid, 1.0)
    composed, leak1 = psi_q.compose(block_field)
    lhs_a = apply_multiplier(composed, sym)
    lhs_b, leak2 = psi_q.compose(apply_multiplier(block_field, sym))
    defect = lp_norm(lhs_a - lhs_b, np.inf)
    base = lp_norm(block_field, np.inf)
    envelope = math.sqrt(max(psi_q.V_t, 0.0)) * 2.0 ** q * base
    ratio = defect / envelope if envelope > 0 else float("inf")
    leak = max(leak1, leak2)
    return VerificationReport(
        name=f"flow commutator q={q}",
        claim=CLAIM_FLOWCOMM,
        lhs=defect,
        rhs=envelope,
        ratio=ratio,
        passed=bool(np.isfinite(defect)),
        metadata={
            "q": q, "V": psi_q.V_t, "t": psi_q.t,
            "band_leak": leak, "warning": leak > 0.01,
            "block_sup": base,
        })


def _fit_slope(xs: np.ndarray, ys: np.ndarray) -> float:
    return float(np.polyfit(xs, ys, 1)[0])


def flow_commutator_q_sweep(v_fn, f: Field, qs: list[int], t: float) -> dict:
    """Scale sweep at fixed horizon: defect per unit block sup against 2^q."""
    lhs_per_sup = []
    reports = []
    for q in qs:
        psi = integrate_flow(v_fn, q, t)
        rep = flow_commutator(f, psi, q)
        reports.append(rep)
        lhs_per_sup.append(rep.lhs / max(rep.metadata["block_sup"], 1e-300))
    slope = _fit_slope(np.asarray(qs, dtype=float),
                       np.log2(np.asarray(lhs_per_sup)))
    return {"qs": list(qs), "lhs_per_sup": lhs_per_sup, "slope": slope,
            "reports": reports}


def flow_commutator_v_sweep(v_fn, f: Field, q: int, times: list[float],
                            dt_max: float | None = None) -> dict:
    """Horizon sweep at fixed scale: defect against the accumulated V.

    dt_max caps the integrator step, which matters for velocity laws with
    internal time structure finer than the default step choice.
    """
    vs, lhss, reports = [], [], []
    for t in times:
        n_steps = None if dt_max is None else max(16, math.ceil(t / dt_max))
        psi = integrate_flow(v_fn, q, t, n_steps=n_steps)
        rep = flow_commutator(f, psi, q)
        if rep.metadata["V"] > 0.0 and rep.lhs > 0.0:
            vs.append(rep.metadata["V"])
            lhss.append(rep.lhs)
        reports.append(rep)
    if len(vs) < 3:
        raise ValueError("horizon sweep produced too few usable points")
    slope = _fit_slope(np.log(np.asarray(vs)), np.log(np.asarray(lhss)))
    return {"V": vs, "lhs": lhss, "slope": slope, "reports": reports}


# --- prescribed velocity laws for probes ------------------------------------


def shear_velocity(grid: Grid2D, amplitude: float = 1.0, k: int = 1):
    """Steady unidirectional shear (a(x2), 0); divergence-free by form."""
    profile = amplitude * np.sin(k * grid.k0 * grid.x2)
    v1 = Field.from_physical(grid, profile)
    zero = Field.from_physical(grid, np.zeros((grid.n, grid.n)))

    def v_fn(t):
        return v1, zero

    return v_fn


def telegraph_velocity(grid: Grid2D, amplitude: float = 1.0, k: int = 1,
                       flip_every: float = 0.05, seed: int = 0):
    """Unidirectional shear whose sign flips at random on a fixed time
    lattice.

    The gradient magnitude is constant, so the accumulated V grows linearly
    in the horizon, while the displacement performs a random walk of step
    amplitude * flip_every. This is the velocity-history regime that
    saturates the sqrt(V) defect envelope; a coherent shear sits well below
    it.
    """
    if flip_every <= 0.0:
        raise ValueError("flip interval must be positive")
    profile = amplitude * np.sin(k * grid.k0 * grid.x2)
    base = Field.from_physical(grid, profile)
    zero = Field.from_physical(grid, np.zeros((grid.n, grid.n)))
    rng = np.random.default_rng((seed, 7177))
    signs = rng.integers(0, 2, size=1 << 16) * 2.0 - 1.0

    def v_fn(t):
        j = min(int(t / flip_every), signs.size - 1)
        # fresh field objects each call mark the law as time-dependent
        return float(signs[j]) * base, 1.0 * zero

    return v_fn


def windowed_rotation(grid: Grid2D, omega: float = 1.0,
                      r_flat: float | None = None,
                      r_zero: float | None = None):
    """Rigid rotation about the box center, tapered to zero by a radial
    window so the field extends periodically; divergence-free for any
    radial taper."""
    L = grid.L
    r_flat = L / 8.0 if r_flat is None else r_flat
    r_zero = 3.0 * L / 8.0 if r_zero is None else r_zero
    if not (0.0 < r_flat < r_zero < 0.5 * L):
        raise ValueError("window radii must satisfy 0 < flat < zero < L/2")
    c = 0.5 * L
    y1 = grid.x1 - c
    y2 = grid.x2 - c
    r = np.hypot(y1, y2)
    # flat-ended smooth taper: all derivatives vanish at both radii, so
    # spectral differentiation of the resulting flow stays accurate
    w = 1.0 - _soft_step((r - r_flat) / (r_zero - r_flat))
    v1 = Field.from_physical(grid, -omega * w * y2)
    v2 = Field.from_physical(grid, omega * w * y1)

    def v_fn(t):
        return v1, v2

    return v_fn
