import numpy as np
import pytest

from sqg_lab.dyadic import (
    BlockRangeError,
    bernstein_probe,
    bernstein_sweep,
    besov_norm,
    besov_norm_fd,
    build_partition,
    chi_profile,
    decompose,
    low_pass,
    mixed_norm,
    phi_profile,
    project,
)
from sqg_lab.spectral import (
    Field,
    Grid2D,
    ZeroModeError,
    apply_multiplier,
    dealiased_product,
    frac_lap,
    lp_norm,
    semigroup_apply,
)

from conftest import random_band_limited


@pytest.fixture(scope="module")
def grid2pi():
    return Grid2D(128, L=2.0 * np.pi)


def test_profile_hard_support():
    r = np.array([0.0, 0.5, 0.75, 1.0, 4.0 / 3.0, 2.0, 8.0 / 3.0, 5.0])
    chi = chi_profile(r)
    assert chi[0] == 1.0 and chi[2] == 1.0
    assert chi[4] == 0.0 and chi[-1] == 0.0
    assert 0.0 < chi[3] < 1.0
    phi = phi_profile(r)
    assert phi[1] == 0.0 and phi[2] == 0.0  # at and below 3/4
    assert phi[6] == 0.0 and phi[7] == 0.0  # at and above 8/3
    assert phi[3] > 0.0 and phi[5] > 0.0


def test_profile_monotone():
    r = np.linspace(0.7, 1.4, 500)
    chi = chi_profile(r)
    assert np.all(np.diff(chi) <= 1e-15)


def test_partition_window(grid2pi):
    part = build_partition(grid2pi)
    assert part.q_min == -1
    assert part.q_max == 6
    big = build_partition(Grid2D(256, L=2.0 * np.pi))
    assert big.q_min == -1
    assert big.q_max == 7


def test_partition_residual(grid2pi, grid128):
    assert build_partition(grid2pi).residual() <= 1e-12
    assert build_partition(grid128).residual() <= 1e-12


def test_partition_covers_smallest_grid():
    part = build_partition(Grid2D(8, L=2.0 * np.pi))
    assert len(part.q_range) >= 3
    assert part.residual() <= 1e-12


def test_project_rejects_out_of_window(grid2pi):
    u = random_band_limited(grid2pi, seed=50)
    part = build_partition(grid2pi)
    with pytest.raises(BlockRangeError):
        project(u, part.q_max + 1)
    with pytest.raises(BlockRangeError):
        project(u, part.q_min - 1)
    with pytest.raises(BlockRangeError):
        low_pass(u, part.q_max + 2)


def test_block_support_is_declared_ring(grid2pi):
    u = random_band_limited(grid2pi, seed=51)
    blk = project(u, 3)
    mags = np.abs(blk.data.spectral)
    outside = (grid2pi.kabs < 0.75 * 8.0) | (grid2pi.kabs > (8.0 / 3.0) * 8.0)
    assert np.abs(mags[outside]).max() == 0.0


def test_reconstruction(grid2pi):
    u = random_band_limited(grid2pi, seed=52)
    total = None
    for blk in decompose(u):
        total = blk.data if total is None else total + blk.data
    err = np.abs((total - u).physical).max()
    assert err <= 1e-12 * np.abs(u.physical).max()


def test_single_wave_splits_between_neighbors(grid2pi):
    g = grid2pi
    # |k| = 3 sits inside the overlap of blocks 0 and 1
    u = Field.from_physical(g, np.cos(3.0 * g.x1), mean_free=True)
    b0 = project(u, 0).data
    b1 = project(u, 1).data
    err = np.abs((b0 + b1 - u).physical).max()
    assert err <= 1e-12
    for q in (-1, 2, 3):
        assert project(u, q).norm_linf <= 1e-13


def test_blocks_far_apart_vanish(grid2pi):
    u = random_band_limited(grid2pi, seed=53)
    for q, k in [(2, 0), (2, 4), (3, 0), (-1, 1)]:
        inner = project(u, q).data
        again = project(inner, k).data
        assert np.abs(again.physical).max() <= 1e-12 * max(
            1.0, np.abs(inner.physical).max())


def test_idempotence_with_neighbors(grid2pi):
    u = random_band_limited(grid2pi, seed=54)
    part = build_partition(grid2pi)
    for q in range(part.q_min + 1, part.q_max):
        blk = project(u, q).data
        back = (project(blk, q - 1).data + project(blk, q).data
                + project(blk, q + 1).data)
        assert np.abs((back - blk).physical).max() <= 1e-12 * max(
            1.0, np.abs(blk.physical).max())


def test_paraproduct_remainder_vanishes_far_away(grid2pi):
    # Delta_k of (S_{q-1} u Delta_q u) carries no content once k is five
    # octaves below q
    u = random_band_limited(grid2pi, seed=55)
    for q, k in [(4, -1), (5, 0)]:
        prod = dealiased_product(low_pass(u, q - 1), project(u, q).data)
        scale = np.abs(prod.physical).max()
        got = project(prod, k).data
        assert np.abs(got.physical).max() <= 1e-10 * scale


def test_low_pass_equals_block_sum(grid2pi):
    u = random_band_limited(grid2pi, seed=56)
    part = build_partition(grid2pi)
    q = 3
    total = None
    for j in range(part.q_min, q):
        blk = project(u, j, part).data
        total = blk if total is None else total + blk
    direct = low_pass(u, q, part)
    assert np.abs((direct - total).physical).max() <= 1e-12 * np.abs(
        u.physical).max()


def test_low_pass_keeps_mean(grid2pi):
    samples = np.ones((128, 128)) * 2.0
    u = Field.from_physical(grid2pi, samples)
    out = low_pass(u, 0)
    assert out.spectral[0, 0] == pytest.approx(2.0, rel=1e-14)


def test_besov_requires_mean_free(grid2pi):
    u = Field.from_physical(grid2pi, np.ones((128, 128)))
    with pytest.raises(ZeroModeError):
        besov_norm(u, 0.5)


def test_besov_single_wave(grid2pi):
    g = grid2pi
    # |k| = 11/8 * 2^3 = 11 lands where only block 3 responds
    amp = 1.7
    u = Field.from_physical(g, amp * np.cos(11.0 * g.x1), mean_free=True)
    for s in (0.0, 0.5, 1.0):
        bn = besov_norm(u, s, np.inf, 1)
        assert bn.value == pytest.approx(2.0 ** (3 * s) * amp, rel=1e-10)
        nonzero = [q for q, v in bn.per_block if v > 1e-12]
        assert nonzero == [3]


def test_besov_homogeneous_in_amplitude(grid2pi):
    u = random_band_limited(grid2pi, seed=57)
    a = besov_norm(u, 0.5).value
    b = besov_norm(2.0 * u, 0.5).value
    assert b == pytest.approx(2.0 * a, rel=1e-12)


def test_besov_value_recomputable(grid2pi):
    u = random_band_limited(grid2pi, seed=58)
    for m in (1, 2, np.inf):
        bn = besov_norm(u, 0.3, np.inf, m)
        assert bn.recompute() == pytest.approx(bn.value, rel=1e-12)


def test_besov_interpolation(grid2pi):
    # midpoint norm controlled by the geometric mean of the endpoint norms
    for seed in (59, 60, 61):
        u = random_band_limited(grid2pi, seed=seed)
        mid = besov_norm(u, 0.5, np.inf, 1).value
        lo = besov_norm(u, 0.0, np.inf, np.inf).value
        hi = besov_norm(u, 1.0, np.inf, np.inf).value
        assert mid <= 20.0 * np.sqrt(lo * hi)


def test_besov_shift_isomorphism(grid2pi):
    u = random_band_limited(grid2pi, seed=62)
    shifted = apply_multiplier(u, frac_lap(grid2pi, 0.5))
    a = besov_norm(shifted, 0.0).value
    b = besov_norm(u, 0.5).value
    assert a / b <= 4.0 and b / a <= 4.0


def test_besov_controls_sup_norm(grid2pi):
    for seed in (63, 64):
        u = random_band_limited(grid2pi, seed=seed)
        assert lp_norm(u, np.inf) <= besov_norm(u, 0.0, np.inf, 1).value * (
            1 + 1e-12)


def test_besov_algebra(grid2pi):
    u = random_band_limited(grid2pi, seed=65)
    w = random_band_limited(grid2pi, seed=66)
    s = 0.5
    prod = dealiased_product(u, w).project_mean_free()
    lhs = besov_norm(prod, s).value
    rhs = (lp_norm(u, np.inf) * besov_norm(w, s).value
           + lp_norm(w, np.inf) * besov_norm(u, s).value)
    assert lhs <= 8.0 * rhs


def test_fd_norm_zero_field(grid2pi):
    u = Field.from_physical(grid2pi, np.zeros((128, 128)), mean_free=True)
    assert besov_norm_fd(u, 0.5) == 0.0


def test_fd_norm_rejects_bad_regularity(grid2pi):
    u = random_band_limited(grid2pi, seed=67)
    for s in (0.0, 1.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            besov_norm_fd(u, s)


def test_fd_norm_translation_invariant(grid2pi):
    u = random_band_limited(grid2pi, seed=68)
    rolled = Field.from_physical(
        grid2pi, np.roll(u.physical, (5, 11), axis=(0, 1)), mean_free=True)
    a = besov_norm_fd(u, 0.5)
    b = besov_norm_fd(rolled, 0.5)
    assert b == pytest.approx(a, rel=1e-10)


def test_fd_norm_tracks_dyadic(grid2pi):
    for s in (0.3, 0.5, 0.8):
        u = random_band_limited(grid2pi, seed=69)
        fd = besov_norm_fd(u, s)
        dy = besov_norm(u, s).value
        assert 0.1 <= fd / dy <= 10.0


def test_mixed_norm_constant_trajectory(grid2pi):
    u = random_band_limited(grid2pi, seed=70)
    times = np.linspace(0.0, 1.0, 5)
    fields = [u] * 5
    ref = besov_norm(u, 0.5).value
    for variant in ("plain", "tilde"):
        got = mixed_norm(fields, times, np.inf, 0.5, variant=variant)
        assert got == pytest.approx(ref, rel=1e-12)


def test_mixed_norm_single_block_variants_agree(grid2pi):
    g = grid2pi
    base = Field.from_physical(g, np.cos(11.0 * g.x1), mean_free=True)
    times = np.linspace(0.0, 1.0, 4)
    fields = [semigroup_apply(base, t) for t in times]
    for r in (1, 2):
        a = mixed_norm(fields, times, r, 0.5, variant="plain")
        b = mixed_norm(fields, times, r, 0.5, variant="tilde")
        assert a == pytest.approx(b, rel=1e-10)


def test_mixed_norm_summation_order(grid2pi):
    rng = np.random.default_rng(71)
    g = grid2pi
    times = np.linspace(0.0, 1.0, 6)
    fields = []
    for _ in times:
        f = (rng.normal() * Field.from_physical(g, np.cos(11.0 * g.x1))
             + rng.normal() * Field.from_physical(g, np.sin(23.0 * g.x2)))
        fields.append(f.project_mean_free())
    # exchanging time integral and block sum loses to the aligned order
    plain = mixed_norm(fields, times, 1, 0.0, m=np.inf, variant="plain")
    tilde = mixed_norm(fields, times, 1, 0.0, m=np.inf, variant="tilde")
    assert tilde <= plain * (1 + 1e-12)
    plain2 = mixed_norm(fields, times, np.inf, 0.0, m=1, variant="plain")
    tilde2 = mixed_norm(fields, times, np.inf, 0.0, m=1, variant="tilde")
    assert plain2 <= tilde2 * (1 + 1e-12)


def test_mixed_norm_rejects_bad_input(grid2pi):
    u = random_band_limited(grid2pi, seed=72)
    with pytest.raises(ValueError):
        mixed_norm([], [], 1, 0.5)
    with pytest.raises(ValueError):
        mixed_norm([u], [0.0], 1, 0.5)
    with pytest.raises(ValueError):
        mixed_norm([u, u, u], [0.0, 0.1, 0.3], 1, 0.5)


def test_bernstein_plane_wave_exact(grid2pi):
    g = grid2pi
    u = Field.from_physical(g, np.cos(8.0 * g.x1), mean_free=True)
    rep = bernstein_probe(u, k=1)
    assert rep.ratio == pytest.approx(1.0, rel=1e-12)
    assert rep.metadata["lambda"] == pytest.approx(8.0, rel=1e-12)


def test_bernstein_ring_two_sided(grid2pi):
    part_seeds = (73, 74)
    for seed in part_seeds:
        u = random_band_limited(grid2pi, seed=seed)
        blk = project(u, 3).data
        rep = bernstein_probe(blk, k=1, kind="ring")
        assert 0.25 <= rep.ratio <= 4.0


def test_bernstein_rejects_wrong_support(grid2pi):
    u = random_band_limited(grid2pi, seed=75)  # full band, not a ring
    with pytest.raises(ValueError):
        bernstein_probe(u, kind="ring")


def test_bernstein_sweep_uniform(grid2pi):
    ring = bernstein_sweep(grid2pi, "ring", k=1, seed=1)
    assert ring.passed
    ball = bernstein_sweep(grid2pi, "ball", k=0, p=2, q=np.inf, seed=2)
    assert ball.passed
