import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from nrulesim.decoherence import (
    BatchPartition,
    GaussianKernel,
    build_batch_channels,
    build_indicator_channels,
    gaussian_occupancy,
    merge_channels,
    partition_batches,
    uniform_occupancy,
)
from nrulesim.errors import ArgumentError
from nrulesim.wave_dynamics import Grid1D, channel_current, gaussian_packet


@pytest.fixture
def grid():
    return Grid1D.from_spacing(-8, 8, 0.04)


def test_uniform_partition_of_three():
    assert partition_batches((0, 3), 3).boundaries == (0.0, 1.0, 2.0, 3.0)


def test_single_batch():
    part = partition_batches((-4, 4), 1)
    assert part.n_batches == 1 and part.intervals() == [(-4.0, 4.0)]


def test_bad_partitions():
    with pytest.raises(ArgumentError):
        partition_batches((0, 3), [0, 2, 1, 3])
    with pytest.raises(ArgumentError):
        partition_batches((0, 3), [0, 1, 2])
    with pytest.raises(ArgumentError):
        partition_batches((1, 1), 2)
    with pytest.raises(ArgumentError):
        BatchPartition((0.0,))


def test_explicit_boundaries_match_quadrature(grid):
    part = partition_batches((0, 3), [0, 0.5, 3])
    kernel = GaussianKernel(0.5, 0.3)
    occ = gaussian_occupancy(1.0, 2.0)
    bcs = build_batch_channels(part, kernel, occ, grid)
    assert len(bcs.channels) == 2
    for x0 in (-0.5, 0.2, 0.5, 1.7, 3.1):
        i = int(np.argmin(abs(grid.x - x0)))
        x = grid.x[i]
        for ch, (lo, hi) in zip(bcs.channels, part.intervals()):
            ref = quad(lambda u: kernel(np.array(x), np.array(u)) * occ(np.array(u)), lo, hi,
                       points=[x - kernel.reach, x, x + kernel.reach], limit=200)[0]
            # linear interpolation across the 3-lambda cutoff costs O(h) near the tails
            assert ch.gamma[i] == pytest.approx(ref, rel=2e-3, abs=1e-3 * kernel.rate)


def test_narrow_kernel_keeps_batches_apart(grid):
    part = partition_batches((-3, 3), 3)
    bcs = build_batch_channels(part, GaussianKernel(1.0, 0.02), uniform_occupancy, grid)
    psi = gaussian_packet(grid, -2.0, 0.2)  # inside batch 1
    j = np.array([channel_current(ch, psi) for ch in bcs.channels])
    assert j[0] / j.sum() > 0.999


def test_uniform_kernel_equal_gammas(grid):
    part = partition_batches((-3, 3), 3)
    bcs = build_batch_channels(part, lambda x, u: 0.4 * np.ones(np.broadcast(x, u).shape), uniform_occupancy, grid)
    g = [ch.gamma for ch in bcs.channels]
    assert np.allclose(g[0], 0.8, rtol=1e-12) and np.allclose(g[1], g[0], rtol=1e-12)
    assert np.allclose(g[2], g[0], rtol=1e-12)


def test_merge_is_linear(grid):
    part = partition_batches((-3, 3), 3)
    bcs = build_batch_channels(part, GaussianKernel(0.5, 0.1), uniform_occupancy, grid)
    psi = gaussian_packet(grid, 0.3, 1.5)
    m = merge_channels(bcs.channels[0], bcs.channels[1], "merged")
    direct = channel_current(bcs.channels[0], psi) + channel_current(bcs.channels[1], psi)
    assert channel_current(m, psi) == pytest.approx(direct, rel=1e-14)


@given(cuts=st.lists(st.floats(-3.9, 3.9), min_size=0, max_size=6, unique=True),
       center=st.floats(-3, 3), width=st.floats(0.05, 1.0))
def test_refinement_consistency(cuts, center, width):
    grid = Grid1D.from_spacing(-8, 8, 0.05)
    kernel = GaussianKernel(0.5, width)
    occ = gaussian_occupancy(0.0, 4.0)
    bounds = [-4.0] + sorted(c for c in cuts if abs(c) < 3.9 and all(abs(c - d) > 1e-6 for d in (-4, 4))) + [4.0]
    if any(b - a < 1e-9 for a, b in zip(bounds, bounds[1:])):
        return
    fine = build_batch_channels(partition_batches((-4, 4), bounds), kernel, occ, grid)
    whole = build_batch_channels(partition_batches((-4, 4), 1), kernel, occ, grid)
    psi = gaussian_packet(grid, center, 1.0)
    total = sum(channel_current(ch, psi) for ch in fine.channels)
    assert total == pytest.approx(channel_current(whole.channels[0], psi), rel=1e-12)
    assert np.allclose(sum(ch.gamma for ch in fine.channels), whole.full_gamma, rtol=1e-12, atol=1e-15)


def test_kernel_normalized_and_truncated():
    k = GaussianKernel(2.0, 0.1)
    u = np.linspace(-1, 1, 200001)
    vals = k(np.array(0.0), u)
    assert np.trapezoid(vals, u) == pytest.approx(2.0, rel=1e-6)
    assert np.all(vals[np.abs(u) > k.reach] == 0)


def test_indicator_channels_cover_extent(grid):
    part = partition_batches((-4, 4), 4)
    chs = build_indicator_channels(part, 0.5, grid)
    total = sum(ch.gamma for ch in chs)
    inside = (grid.x >= -4 - 1e-9) & (grid.x <= 4 + 1e-9)
    assert np.array_equal(total > 0, inside)
    assert np.allclose(total[inside], 0.5)
