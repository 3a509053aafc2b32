"""Commutator and flow-map machinery against analytic and fine-grid oracles."""

import numpy as np
import pytest

from conftest import random_band_limited

from sqg_lab.corpus import random_band
from sqg_lab.dyadic import BlockRangeError, build_partition, project
from sqg_lab.flows import (
    CommutatorReport,
    FlowAbort,
    FlowMap,
    commutator_block,
    commutator_estimate_sweep,
    commutator_sum_ratio,
    flow_commutator,
    flow_commutator_q_sweep,
    flow_commutator_v_sweep,
    integrate_flow,
    shear_velocity,
    vishik_probe,
    vishik_sweep,
    windowed_rotation,
)
from sqg_lab.spectral import (
    Field,
    Grid2D,
    embed,
    lp_norm,
    restrict,
    velocity_from_theta,
)


@pytest.fixture(scope="module")
def g64():
    return Grid2D(64, 2.0 * np.pi)


@pytest.fixture(scope="module")
def g128():
    return Grid2D(128, 2.0 * np.pi)


def unit_band_field(grid, seed, kmax_frac=1.0):
    f = random_band_limited(grid, seed, kmax_frac=kmax_frac)
    return f * (1.0 / lp_norm(f, np.inf))


def shear_pair(grid, amplitude=1.0, k=1):
    return shear_velocity(grid, amplitude, k)(0.0)


def single_mode(grid, kvec, amplitude=1.0):
    coeffs = np.zeros((grid.n, grid.n), dtype=complex)
    coeffs[kvec] = 0.5 * amplitude
    coeffs[tuple(-np.array(kvec))] = 0.5 * amplitude
    return Field.from_spectral(grid, coeffs, mean_free=True)


class TestCommutatorBlock:
    def test_zero_velocity_gives_zero(self, g64):
        theta = unit_band_field(g64, 1)
        zero = Field.from_physical(g64, np.zeros((64, 64)))
        comm = commutator_block((zero, zero), theta, 1)
        assert lp_norm(comm, np.inf) == 0.0

    def test_constant_drift_commutes(self, g64):
        # uniform translation: the block multiplier commutes with a
        # constant-coefficient derivative, so the commutator vanishes
        theta = unit_band_field(g64, 2)
        c1 = Field.from_physical(g64, np.full((64, 64), 0.7))
        c2 = Field.from_physical(g64, np.full((64, 64), -1.3))
        comm = commutator_block((c1, c2), theta, 2)
        scale = lp_norm(theta, np.inf)
        assert lp_norm(comm, np.inf) <= 1e-12 * scale

    def test_fine_grid_oracle(self, g64, g128):
        v = shear_pair(g64, amplitude=0.8, k=2)
        theta = single_mode(g64, (5, 3), amplitude=1.1)
        q = 2
        coarse = commutator_block(v, theta, q)
        v_f = tuple(embed(c, g128) for c in v)
        theta_f = embed(theta, g128)
        fine = commutator_block(v_f, theta_f, q)
        back = restrict(fine, g64)
        err = lp_norm(coarse - back, np.inf)
        assert err <= 1e-8 * max(lp_norm(coarse, np.inf), 1e-12)

    def test_bilinear_in_scalar(self, g64):
        v = shear_pair(g64, amplitude=0.5)
        t1 = unit_band_field(g64, 3)
        t2 = unit_band_field(g64, 4)
        lhs = commutator_block(v, t1 * 2.0 + t2 * (-0.5), 1)
        rhs = commutator_block(v, t1, 1) * 2.0 + commutator_block(v, t2, 1) * (-0.5)
        assert lp_norm(lhs - rhs, np.inf) <= 1e-12 * lp_norm(rhs, np.inf)

    def test_bilinear_in_velocity(self, g64):
        theta = unit_band_field(g64, 5)
        va = shear_pair(g64, amplitude=1.0, k=1)
        vb = shear_pair(g64, amplitude=1.0, k=3)
        scaled = (va[0] * 0.3 + vb[0] * 1.7, va[1] * 0.3 + vb[1] * 1.7)
        lhs = commutator_block(scaled, theta, 2)
        rhs = (commutator_block(va, theta, 2) * 0.3
               + commutator_block(vb, theta, 2) * 1.7)
        assert lp_norm(lhs - rhs, np.inf) <= 1e-12 * lp_norm(rhs, np.inf)

    def test_out_of_window_block_rejected(self, g64):
        theta = unit_band_field(g64, 6)
        v = shear_pair(g64)
        with pytest.raises(BlockRangeError):
            commutator_block(v, theta, 40)


class TestCommutatorSweep:
    def test_zero_velocity_all_ratios_zero(self, g64):
        theta = unit_band_field(g64, 7)
        zero = Field.from_physical(g64, np.zeros((64, 64)))
        reports = commutator_estimate_sweep((zero, zero), theta, 0.0)
        assert all(r.lhs == 0.0 for r in reports)

    def test_random_field_ratio_bounded(self, g64):
        theta = unit_band_field(g64, 8, kmax_frac=0.8)
        v = velocity_from_theta(unit_band_field(g64, 9, kmax_frac=0.5))
        total = commutator_sum_ratio(commutator_estimate_sweep(v, theta, 0.0))
        assert 0.0 < total < 50.0

    def test_edge_weights_bounded(self, g64):
        theta = unit_band_field(g64, 10, kmax_frac=0.8)
        v = velocity_from_theta(unit_band_field(g64, 11, kmax_frac=0.5))
        for s in (0.9, -0.9):
            total = commutator_sum_ratio(commutator_estimate_sweep(v, theta, s))
            assert np.isfinite(total) and total < 200.0

    def test_ratio_stable_under_refinement(self, g64, g128):
        theta = unit_band_field(g64, 12, kmax_frac=0.7)
        v = shear_pair(g64, amplitude=0.9, k=2)
        r_coarse = commutator_sum_ratio(commutator_estimate_sweep(v, theta, 0.0))
        theta_f = embed(theta, g128)
        v_f = tuple(embed(c, g128) for c in v)
        r_fine = commutator_sum_ratio(commutator_estimate_sweep(v_f, theta_f, 0.0))
        assert 0.5 <= r_fine / r_coarse <= 2.0

    def test_rejects_compressible_velocity(self, g64):
        theta = unit_band_field(g64, 13)
        bad = unit_band_field(g64, 14)
        with pytest.raises(ValueError, match="divergence"):
            commutator_estimate_sweep((bad, bad), theta, 0.0)

    def test_rejects_weight_outside_range(self, g64):
        theta = unit_band_field(g64, 15)
        v = shear_pair(g64)
        with pytest.raises(ValueError):
            commutator_estimate_sweep(v, theta, 1.0)

    def test_report_ratio_recomputable(self, g64):
        theta = unit_band_field(g64, 16, kmax_frac=0.6)
        v = shear_pair(g64, amplitude=0.7)
        for r in commutator_estimate_sweep(v, theta, 0.3):
            denom = r.rhs_factors[0] * r.rhs_factors[1]
            assert abs(r.ratio - r.lhs / denom) <= 1e-12 * max(r.ratio, 1e-30)


class TestFlowMap:
    def test_zero_velocity_identity(self, g64):
        zero = Field.from_physical(g64, np.zeros((64, 64)))

        def v_fn(t):
            return zero, zero

        psi = integrate_flow(v_fn, 2, 0.3)
        assert np.abs(psi.forward).max() == 0.0
        assert np.abs(psi.jacobian() - 1.0).max() <= 1e-12
        assert psi.roundtrip_error() <= 1e-12
        f = unit_band_field(g64, 20)
        composed, leak = psi.compose(f)
        assert lp_norm(composed - f, np.inf) <= 1e-10
        assert leak <= 1e-12

    def test_shear_flow_is_exact(self, g64):
        part = build_partition(g64)
        a, k, t = 0.8, 1, 0.4
        v_fn = shear_velocity(g64, a, k)
        psi = integrate_flow(v_fn, part.q_max + 1, t)
        expected = t * a * np.sin(k * g64.k0 * g64.x2)
        got = psi.forward[0]
        assert np.abs(got - expected).max() <= 1e-10
        assert np.abs(psi.forward[1]).max() <= 1e-12
        # velocity gradient is a k cos, so V accumulates t a k
        assert abs(psi.V_t - t * a * k * g64.k0) <= 1e-6
        hess_expected = t * a * (k * g64.k0) ** 2
        assert abs(psi.hess_inf - hess_expected) <= 0.2 * hess_expected

    def test_rotation_matches_analytic_center(self, g64):
        part = build_partition(g64)
        omega, t = 1.0, 0.5
        v_fn = windowed_rotation(g64, omega)
        psi = integrate_flow(v_fn, part.q_max + 1, t)
        c = 0.5 * g64.L
        y1 = g64.x1 - c
        y2 = g64.x2 - c
        r = np.hypot(y1, y2)
        cth, sth = np.cos(omega * t), np.sin(omega * t)
        exp1 = (cth * y1 - sth * y2) - y1
        exp2 = (sth * y1 + cth * y2) - y2
        inner = r <= 0.8 * (g64.L / 8.0)
        err = np.maximum(np.abs(psi.forward[0] - exp1),
                         np.abs(psi.forward[1] - exp2))
        assert err[inner].max() <= 1e-6 * g64.L

    def test_measure_and_inverse_invariants_shear(self, g64):
        part = build_partition(g64)
        v_fn = shear_velocity(g64, 1.1, 2)
        psi = integrate_flow(v_fn, part.q_max + 1, 0.4)
        assert np.abs(psi.jacobian("forward") - 1.0).max() <= 1e-4
        assert np.abs(psi.jacobian("inverse") - 1.0).max() <= 1e-4
        assert psi.roundtrip_error() <= 1e-4 * g64.L

    def test_measure_and_inverse_invariants_rotation(self, g128):
        # curved trajectories exercise the interpolation; needs the finer
        # grid for the cubic sampling error to clear the 1e-4 bar
        part = build_partition(g128)
        v_fn = windowed_rotation(g128, 1.0)
        psi = integrate_flow(v_fn, part.q_max + 1, 0.3)
        assert np.abs(psi.jacobian("forward") - 1.0).max() <= 1e-4
        assert np.abs(psi.jacobian("inverse") - 1.0).max() <= 1e-4
        assert psi.roundtrip_error() <= 1e-4 * g128.L

    def test_gradient_bounds_with_small_constant(self, g64):
        part = build_partition(g64)
        v_fn = shear_velocity(g64, 1.0, 2)
        psi = integrate_flow(v_fn, part.q_max + 1, 0.3)
        assert psi.V_t > 0.0
        for direction in ("forward", "inverse"):
            gnorm = psi.grad_inf(direction)
            assert gnorm >= 1.0 - 1e-9
            c_fit = np.log(gnorm) / psi.V_t
            assert 0.0 <= c_fit <= 3.0

    def test_unresolvable_jacobian_aborts(self, g64):
        part = build_partition(g64)
        v_fn = windowed_rotation(g64, 40.0)
        with pytest.raises(FlowAbort):
            integrate_flow(v_fn, part.q_max + 1, 1.0, n_steps=1,
                           max_refines=0, jac_target=1e-14, jac_abort=1e-10)


class TestVishik:
    def test_identity_diagonal_ratio_near_one(self, g64):
        f = unit_band_field(g64, 30, kmax_frac=0.8)
        part = build_partition(g64)
        q = (part.q_min + part.q_max) // 2
        rep = vishik_probe(f, FlowMap.identity(g64), q, q)
        raw = rep.metadata["raw_ratio"]
        assert 0.5 <= raw <= 1.2

    def test_identity_far_blocks_vanish(self, g64):
        f = unit_band_field(g64, 31, kmax_frac=0.8)
        part = build_partition(g64)
        q = (part.q_min + part.q_max) // 2
        for j in (q - 2, q + 2):
            if part.q_min <= j <= part.q_max:
                rep = vishik_probe(f, FlowMap.identity(g64), j, q)
                assert rep.lhs <= 1e-12 * project(f, q, part).norm_linf

    def test_shear_two_block_separation_decays(self, g64):
        part = build_partition(g64)
        f = unit_band_field(g64, 32, kmax_frac=0.8)
        psi = integrate_flow(shear_velocity(g64, 1.2, 2), part.q_max + 1, 0.35)
        q = (part.q_min + part.q_max) // 2
        center = vishik_probe(f, psi, q, q).metadata["raw_ratio"]
        far = vishik_probe(f, psi, q + 2, q).metadata["raw_ratio"]
        decay = far / center
        assert decay <= 4.0 * 2.0 ** -2
        # two full octaves of separation must actually bite
        assert decay <= 0.5

    def test_sweep_monotone_and_fitted(self, g64):
        part = build_partition(g64)
        f = unit_band_field(g64, 33, kmax_frac=0.8)
        flows = [
            integrate_flow(shear_velocity(g64, 1.0, 1), part.q_max + 1, 0.3),
            integrate_flow(windowed_rotation(g64, 1.0), part.q_max + 1, 0.3),
        ]
        out = vishik_sweep(f, flows, max_sep=4)
        assert out["monotone"]
        assert np.isfinite(out["constant"]) and out["constant"] > 0.0

    def test_warning_flag_tracks_leak(self, g64):
        f = unit_band_field(g64, 34)
        part = build_partition(g64)
        q = part.q_max
        rep = vishik_probe(f, FlowMap.identity(g64), q, q)
        assert rep.metadata["warning"] == (rep.metadata["band_leak"] > 0.01)


class TestFlowCommutator:
    def test_identity_flow_vanishes(self, g64):
        f = unit_band_field(g64, 40, kmax_frac=0.8)
        part = build_partition(g64)
        q = (part.q_min + part.q_max) // 2
        rep = flow_commutator(f, FlowMap.identity(g64), q)
        base = rep.metadata["block_sup"]
        assert rep.lhs <= 1e-10 * max(2.0 ** q * base, 1e-30)

    def test_report_ratio_recomputable(self, g64):
        part = build_partition(g64)
        f = unit_band_field(g64, 41, kmax_frac=0.8)
        psi = integrate_flow(shear_velocity(g64, 0.8, 1), 2, 0.2)
        rep = flow_commutator(f, psi, 2)
        assert abs(rep.ratio - rep.lhs / rep.rhs) <= 1e-12 * rep.ratio

    def test_scale_sweep_slope_near_one(self, g128):
        f = random_band(g128, seed=42)
        v_fn = shear_velocity(g128, 0.6, 1)
        out = flow_commutator_q_sweep(v_fn, f, [1, 2, 3, 4, 5], t=0.15)
        assert 0.8 <= out["slope"] <= 1.2

    def test_horizon_sweep_grows_with_v(self, g64):
        part = build_partition(g64)
        f = unit_band_field(g64, 43, kmax_frac=0.8)
        q = (part.q_min + part.q_max) // 2
        v_fn = shear_velocity(g64, 1.0, 1)
        times = [0.002, 0.005, 0.01, 0.02, 0.05, 0.1]
        out = flow_commutator_v_sweep(v_fn, f, q, times)
        lhs = np.asarray(out["lhs"])
        assert np.all(np.diff(lhs) > 0.0)
        assert out["slope"] >= 0.25

    def test_horizon_sweep_needs_points(self, g64):
        f = unit_band_field(g64, 44)
        v_fn = shear_velocity(g64, 1.0, 1)
        with pytest.raises(ValueError, match="few"):
            flow_commutator_v_sweep(v_fn, f, 1, [0.0])
