"""Deterministic test-field synthesis.

Four families cover the regimes the verification suites need: single plane
waves (exact spectral bookkeeping), multi-octave random fields with a flat
per-block profile (norm equivalences and estimate sweeps), concentrated
bumps (localized data on the big box), and smoothed fronts (gradient stress).

Fields are reproducible from (seed, kind) and resolution-consistent: when a
finer grid than the base resolution is requested, synthesis happens at the
base resolution and the result is embedded spectrally, so the same member of
the corpus carries identical spectral content at every resolution.
"""

from __future__ import annotations

import numpy as np

from .dyadic import build_partition, decompose
from .spectral import Field, Grid2D, embed

_BASE_N = 128


def _synthesis_grid(grid: Grid2D) -> Grid2D:
    if grid.n <= _BASE_N:
        return grid
    return Grid2D(_BASE_N, grid.L)


def _lift(field: Field, grid: Grid2D) -> Field:
    if field.grid == grid:
        return field
    return embed(field, grid)


def single_mode(grid: Grid2D, k=(2, 1), amplitude: float = 1.0,
                phase: float = 0.0) -> Field:
    """One conjugate pair of modes: amplitude * cos(k0 k . x + phase)."""
    i1, i2 = int(k[0]), int(k[1])
    if (i1, i2) == (0, 0):
        raise ValueError("mode index must be nonzero")
    coeffs = np.zeros((grid.n, grid.n), dtype=np.complex128)
    half = 0.5 * amplitude * np.exp(1j * phase)
    coeffs[i1 % grid.n, i2 % grid.n] = half
    coeffs[-i1 % grid.n, -i2 % grid.n] = np.conj(half)
    return Field.from_spectral(grid, coeffs, mean_free=True).dealiased()


def random_band(grid: Grid2D, seed: int, q_lo: int | None = None,
                q_hi: int | None = None, block_target: float = 1.0) -> Field:
    """Random phases, flat dyadic profile: each block's sup norm lands on
    block_target up to the leakage between neighboring rings.

    Blocks are synthesized on the core of each ring and rescaled one by one
    against the measured block norm, so the profile is flat by construction
    rather than by luck.
    """
    base = _synthesis_grid(grid)
    part = build_partition(base)
    q_lo = part.q_min + 1 if q_lo is None else q_lo
    q_hi = part.q_max - 1 if q_hi is None else q_hi
    if q_lo < part.q_min or q_hi > part.q_max or q_lo > q_hi:
        raise ValueError(
            f"band [{q_lo}, {q_hi}] outside window [{part.q_min}, {part.q_max}]")
    total = np.zeros((base.n, base.n), dtype=np.complex128)
    for q in range(q_lo, q_hi + 1):
        core = part.phi(q) > 0.5
        count = int(core.sum())
        if count == 0:
            continue
        rng = np.random.default_rng((seed, q + 64))
        coeffs = np.zeros_like(total)
        coeffs[core] = rng.normal(size=count) + 1j * rng.normal(size=count)
        blk = Field.from_spectral(base, coeffs, mean_free=True)
        sup = np.abs(blk.physical).max()
        if sup > 0.0:
            total += blk.spectral * (block_target / sup)
    out = Field.from_spectral(base, total, mean_free=True).dealiased()
    return _lift(out, grid)


def bump(grid: Grid2D, width: float | None = None, amplitude: float = 1.0,
         center=None) -> Field:
    """Concentrated Gaussian profile, wrapped periodically and band-limited."""
    base = _synthesis_grid(grid)
    width = base.L / 16.0 if width is None else float(width)
    cx, cy = (base.L / 2.0, base.L / 2.0) if center is None else center
    d1 = (base.x1 - cx + base.L / 2.0) % base.L - base.L / 2.0
    d2 = (base.x2 - cy + base.L / 2.0) % base.L - base.L / 2.0
    prof = amplitude * np.exp(-(d1 ** 2 + d2 ** 2) / (2.0 * width ** 2))
    out = Field.from_physical(base, prof, mean_free=True).dealiased()
    return _lift(out, grid)


def steep_front(grid: Grid2D, width: float | None = None,
                amplitude: float = 1.0) -> Field:
    """Smoothed sign profile: two opposing fronts of slope amplitude/width."""
    base = _synthesis_grid(grid)
    width = 4.0 * base.dx if width is None else float(width)
    sharp = 1.0 / (base.k0 * width)
    prof = amplitude * np.tanh(np.sin(base.k0 * base.x2) * sharp)
    out = Field.from_physical(base, prof, mean_free=True).dealiased()
    return _lift(out, grid)


def generate_corpus(seed: int, grid: Grid2D, kind: str) -> list[Field]:
    """The standard members of one synthesis family."""
    if kind == "single_mode":
        return [
            single_mode(grid, (2, 1)),
            single_mode(grid, (5, -3), amplitude=0.8, phase=0.7),
            single_mode(grid, (11, 7), amplitude=1.3, phase=2.1),
        ]
    if kind == "random_band":
        return [random_band(grid, seed + i) for i in range(4)]
    if kind == "bump":
        return [
            bump(grid),
            bump(grid, width=grid.L / 40.0, amplitude=0.6,
                 center=(0.3 * grid.L, 0.62 * grid.L)),
        ]
    if kind == "steep_front":
        base = _synthesis_grid(grid)
        return [
            steep_front(grid),
            steep_front(grid, width=8.0 * base.dx, amplitude=0.75),
            steep_front(grid, width=16.0 * base.dx, amplitude=1.2),
        ]
    raise ValueError(f"unknown corpus kind {kind!r}")


_KINDS = ("single_mode", "random_band", "bump", "steep_front")


def standard_corpus(grid: Grid2D, seed: int = 0) -> list[Field]:
    """The twelve-member corpus used by the acceptance sweeps."""
    out = []
    for kind in _KINDS:
        out.extend(generate_corpus(seed, grid, kind))
    return out


def block_profile(field: Field) -> dict[int, float]:
    """Measured per-block sup norms, for profile checks."""
    return {b.q: b.norm_linf for b in decompose(field)}
