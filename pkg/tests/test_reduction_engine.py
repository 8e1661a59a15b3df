from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import binomial_z
from nrulesim.acceptance import constant_rate_scenario, freeze_fixtures
from nrulesim.analysis import compute_prefix, run_ensemble, run_trajectory
from nrulesim.component_graph import ComponentKind, UniverseState, blank_component, mark_ready, realized_component
from nrulesim.errors import RuleViolation, StepTooLargeError
from nrulesim.reduction_engine import (
    CollapseEvent,
    RngStream,
    assert_freeze,
    choose,
    collapse,
    run_step,
    sample_trigger,
    step_probabilities,
)
from nrulesim.scenarios import build_scenario, default_config
from nrulesim.wave_dynamics import (
    CaptureChannel,
    CurrentLedger,
    GridWavefunction,
    drain_and_fill,
    gaussian_packet,
    position_variance,
    step_unitary,
)


def filled_state(grid, psi, gammas, dt=0.05):
    ids = [f"N{i + 1}" for i in range(len(gammas))]
    state = UniverseState(tuple([realized_component("R", psi)] + [blank_component(i, psi) for i in ids]), 0.0)
    for i in ids:
        state = mark_ready(state, i)
    chs = [CaptureChannel(i, g, grid) for i, g in zip(ids, gammas)]
    return drain_and_fill(state, chs, dt), chs


def test_no_current_never_triggers(small_grid, packet):
    zero = CaptureChannel("N1", np.zeros(small_grid.n_points), small_grid)
    state, _ = filled_state(small_grid, packet, [zero.gamma])
    led = CurrentLedger.empty([zero])
    rng = RngStream(1).generator()
    assert all(sample_trigger(led, state, 0.01, rng) is None for _ in range(1000))


def test_choose_thinning():
    p = np.array([0.02, 0.03])
    assert choose(p, 0.01) == (0, pytest.approx(0.5))
    n, frac = choose(p, 0.035)
    assert n == 1 and frac == pytest.approx(0.5)
    assert choose(p, 0.05) is None
    assert choose(np.zeros(0), 0.0) is None


def test_step_guard():
    led = replace(CurrentLedger.empty([]), targets=("N1",), rates=np.array([20.0]), H=np.zeros(1))
    with pytest.raises(StepTooLargeError):
        step_probabilities(led, 0.01)


def test_collapse_three_ready(small_grid, packet):
    x = small_grid.x
    state, _ = filled_state(small_grid, packet, [0.5 * (x < -1), 0.5 * (abs(x) <= 1), 0.5 * (x > 1)])
    out = collapse(state, "N2")
    assert len(out.components) == 1
    comp = out.realized
    assert comp.kind is ComponentKind.REALIZED and comp.id == "N2"
    assert comp.norm2 == pytest.approx(1.0, abs=1e-12)


def test_collapse_support_in_window():
    from nrulesim.wave_dynamics import Grid1D

    grid = Grid1D.from_spacing(-20, 20, 0.04)
    psi = gaussian_packet(grid, 0.0, 3.0)
    state, _ = filled_state(grid, psi, [0.5 * grid.mask(1.0, 2.0)])
    rho = collapse(state, "N1").realized.psi.density()
    support = grid.x[rho > 1e-12 * rho.max()]
    assert support.min() >= 1.0 - 1e-9 and support.max() <= 2.0 + 1e-9


@given(lo=st.floats(-3, 2), width=st.floats(0.2, 3))
def test_post_variance_equals_truncated_density_and_shrinks(small_grid, packet, lo, width):
    gamma = 0.5 * small_grid.mask(lo, lo + width)
    if not gamma.any():
        return
    state, _ = filled_state(small_grid, packet, [gamma])
    post = position_variance(collapse(state, "N1").realized.psi)
    # direct-sum oracle on the truncated density gamma |psi|^2
    w = gamma * packet.density()
    mean = np.sum(w * small_grid.x) / w.sum()
    oracle = np.sum(w * (small_grid.x - mean) ** 2) / w.sum()
    assert post == pytest.approx(oracle, rel=1e-9, abs=1e-15)
    assert post < position_variance(packet)


def test_collapse_on_non_ready_rejected(small_grid, packet):
    state, _ = filled_state(small_grid, packet, [np.full(small_grid.n_points, 0.1)])
    with pytest.raises(RuleViolation):
        collapse(state, "R")


def test_freeze_clean_on_engine_states():
    sc = build_scenario(default_config("case2"))
    assert assert_freeze(sc.state, sc.channels) == []
    state, led = sc.state, CurrentLedger.empty(sc.channels)
    rng = RngStream(0).generator()
    for _ in range(50):
        nxt, led, ev = run_step(state, led, sc.channels, sc.hamiltonian, sc.dt, rng)
        if ev is not None:
            break
        assert assert_freeze(nxt, sc.channels, previous=state) == []
        state = nxt


def test_freeze_fixtures_detected():
    sourced, evolved = freeze_fixtures()
    assert sourced and evolved


def test_ready_sourced_channel_named(small_grid, packet):
    g = np.full(small_grid.n_points, 0.1)
    state, chs = filled_state(small_grid, packet, [g, g])
    bad = CaptureChannel("N2", g, small_grid, label="bad-link", source="N1")
    report = assert_freeze(state, [chs[0], bad])
    assert len(report) == 1 and "bad-link" in report[0]


def test_zero_channel_run_matches_unitary(small_grid, packet, free_h):
    state = UniverseState((realized_component("R", packet),), 0.0)
    led = CurrentLedger.empty([])
    rng = RngStream(3).generator()
    psi = packet
    for _ in range(20):
        state, led, ev = run_step(state, led, (), free_h, 0.05, rng)
        psi = step_unitary(psi, free_h, 0.05)
        assert ev is None
        assert np.array_equal(state.realized.psi.amps, psi.amps)


def test_large_hazard_collapses_nearly_always():
    # H(T) = 6 for a constant rate: P(no hit) = e^-6 < 0.3%
    sc = constant_rate_scenario((1.0,), dt=0.01, t_max=6.0)
    summ = run_ensemble(sc, 5000, 11, oracle=False)
    assert compute_prefix(sc).H[-1].sum() >= 5
    assert summ.n_collapsed / 5000 >= 0.99


def test_replay_same_stream_same_event():
    sc = build_scenario(default_config("case1", capture={"rate": 3.0}))
    collapsed = 0
    for stream in range(6):
        a = run_trajectory(sc, RngStream(9, stream))
        b = run_trajectory(sc, RngStream(9, stream))
        assert a.events == b.events and a == b
        collapsed += bool(a.events)
        assert all(isinstance(ev, CollapseEvent) for ev in a.events)
    assert collapsed >= 1


def test_trigger_fraction_two_constant_rates():
    sc = constant_rate_scenario((0.2, 0.6), dt=0.01, t_max=20.0)
    summ = run_ensemble(sc, 20000, 4, oracle=False)
    assert binomial_z(summ.hits[0], summ.n_collapsed, 0.25) <= 3


def test_hazard_monotone_and_ready_never_chosen_realized():
    sc = build_scenario(default_config("case3"))
    pre = compute_prefix(sc)
    assert np.all(np.diff(pre.H, axis=0) >= 0)
    summ = run_ensemble(sc, 2000, 1, prefix=pre, oracle=False)
    assert all(ev.chosen != "R" for rec in summ.records for ev in rec.events)


def test_hit_fractions_match_quadrature_oracle():
    sc = build_scenario(default_config("scattering"))
    summ = run_ensemble(sc, 20000, 12, oracle=True)
    for k, q in zip(summ.hits, summ.oracle_hit_fractions):
        assert binomial_z(k, summ.n_collapsed, q) <= 3


def test_wavefunction_from_snapshot_not_from_ready_amps(small_grid, packet):
    # reduced state follows sqrt(gamma) psi including its phase
    psi = gaussian_packet(small_grid, 0.0, 1.0, momentum=2.0)
    state, _ = filled_state(small_grid, psi, [np.full(small_grid.n_points, 0.3)])
    out = collapse(state, "N1").realized.psi
    assert np.allclose(out.amps, psi.amps / np.sqrt(psi.norm2()), atol=1e-12)
    assert isinstance(out, GridWavefunction)
