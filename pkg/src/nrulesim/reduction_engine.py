"""Stochastic trigger, collapse and freeze checks, composed into one engine step."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .component_graph import ComponentKind, UniverseState, check_invariants
from .errors import InvariantViolation, RuleViolation, StepTooLargeError
from .wave_dynamics import (
    HAZARD_GUARD,
    CaptureChannel,
    CurrentLedger,
    GridWavefunction,
    Hamiltonian1D,
    _transfer,
    position_variance,
    step_unitary,
    update_ledger,
)


@dataclass(frozen=True)
class RngStream:
    """Identifies one reproducible random stream: PCG64 seeded by (seed, stream)."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class Hit:
    target: str
    channel: int
    # position of the hit inside the step, uniform on [0, 1)
    fraction: float


@dataclass(frozen=True, eq=False)
class CollapseEvent:
    t_sc: float
    chosen: str
    pre_variance: float
    post_variance: float
    hazard_at_hit: np.ndarray
    labels: dict

    def __eq__(self, other):
        if not isinstance(other, CollapseEvent):
            return NotImplemented
        return (self.t_sc == other.t_sc and self.chosen == other.chosen
                and self.pre_variance == other.pre_variance and self.post_variance == other.post_variance
                and np.array_equal(self.hazard_at_hit, other.hazard_at_hit) and self.labels == other.labels)


def step_probabilities(ledger: CurrentLedger, dt: float) -> np.ndarray:
    p = ledger.rates * dt
    total = p.sum()
    if total > HAZARD_GUARD * (1 + 1e-12):
        raise StepTooLargeError(f"total hazard per step {total:.4g} exceeds {HAZARD_GUARD}")
    return p


def choose(p: np.ndarray, u: float) -> tuple[int, float] | None:
    """Multinomial thinning of one uniform against cumulative p in channel order."""
    cum = np.cumsum(p)
    if not cum.size or u >= cum[-1]:
        return None
    n = int(np.searchsorted(cum, u, side="right"))
    lo = cum[n - 1] if n else 0.0
    return n, float((u - lo) / p[n])


def sample_trigger(ledger: CurrentLedger, state: UniverseState, dt: float, rng: np.random.Generator) -> Hit | None:
    """Draw one uniform and return the struck ready component, if any.

    The per-step probability of striking channel n is J_n dt / s_R: the
    unconditional strike rate J_n/s divided by the probability s_R/s that no
    strike has happened yet.
    """
    p = step_probabilities(ledger, dt)
    picked = choose(p, rng.random())
    if picked is None:
        return None
    n, frac = picked
    target = ledger.targets[n]
    if not state.get(target).is_ready:
        raise RuleViolation(f"trigger selected non-ready component {target!r}")
    return Hit(target, n, frac)


def collapsed_wavefunction(snapshot: GridWavefunction) -> GridWavefunction:
    return snapshot.normalized()


def collapse(state: UniverseState, chosen: str) -> UniverseState:
    """The chosen ready branch becomes the only, realized, unit-norm component."""
    comp = state.get(chosen)
    if not comp.is_ready:
        raise RuleViolation(f"component {chosen!r} is not ready and cannot be stochastically chosen")
    if comp.snapshot is None or comp.snapshot.norm2() <= 0:
        raise RuleViolation(f"ready component {chosen!r} has received no current")
    realized = replace(comp, kind=ComponentKind.REALIZED, psi=collapsed_wavefunction(comp.snapshot),
                       snapshot=None, last_inflow=None)
    new = UniverseState((realized,), state.t)
    if len(new.components) != 1 or abs(realized.norm2 - 1.0) > 1e-12:
        raise InvariantViolation(f"collapse left norm {realized.norm2!r}")
    return new


def assert_freeze(state: UniverseState, channels: Sequence[CaptureChannel],
                  previous: UniverseState | None = None) -> list[str]:
    """Report freeze violations; an empty list means the state is clean.

    Checks that no channel draws from a ready component and, given the
    previous state, that each ready branch changed only by its recorded inflow.
    """
    report = []
    for ch in channels:
        if ch.source is None:
            continue
        if ch.source not in state:
            report.append(f"channel {ch.label}: unknown source {ch.source!r}")
        elif state.get(ch.source).is_ready:
            report.append(f"channel {ch.label}: sourced from ready component {ch.source!r}")
    if previous is None:
        return report
    for comp in state.ready:
        if comp.id not in previous:
            continue
        before = previous.get(comp.id)
        if not before.is_ready:
            continue
        steps = comp.inflow_count - before.inflow_count
        if steps == 0:
            expected = before.psi.amps
        elif steps == 1 and comp.last_inflow is not None:
            expected = np.sqrt(before.psi.density() + comp.last_inflow)
        else:
            report.append(f"ready component {comp.id!r}: inconsistent inflow count")
            continue
        diff = np.sqrt(np.sum(np.abs(comp.psi.amps - expected) ** 2) * comp.psi.grid.dx)
        if not diff < 1e-12:
            report.append(f"ready component {comp.id!r}: self-evolution detected (|diff| = {diff:.3g})")
    return report


def advance(state: UniverseState, ledger: CurrentLedger, channels: Sequence[CaptureChannel],
            hamiltonian: Hamiltonian1D, dt: float, check_freeze: bool = True):
    """Deterministic part of a step: unitary -> currents -> drain/fill -> ledger.

    Only the realized branch is propagated; ready branches change only through
    their inflow.  Returns (state, ledger, realized wavefunction before the drain).
    """
    realized = state.realized
    evolved = step_unitary(realized.psi, hamiltonian, dt)
    moved = state.with_components([replace(realized, psi=evolved)]).at_time(state.t + dt)
    after, currents, s_r = _transfer(moved, channels, dt)
    ledger = update_ledger(ledger, after, channels, dt, currents=currents, realized_norm2=s_r)
    if check_freeze:
        report = assert_freeze(after, channels, previous=state)
        if report:
            raise RuleViolation("; ".join(report))
        check_invariants(after, previous=state)
    return after, ledger, evolved


def make_event(state: UniverseState, ledger: CurrentLedger, evolved: GridWavefunction, hit: Hit,
               t_start: float, dt: float):
    """Collapse ``state`` onto the struck branch; returns (collapsed state, event)."""
    chosen = state.get(hit.target)
    collapsed = collapse(state, hit.target)
    event = CollapseEvent(
        t_sc=t_start + hit.fraction * dt,
        chosen=hit.target,
        pre_variance=position_variance(evolved),
        post_variance=position_variance(collapsed.realized.psi),
        hazard_at_hit=ledger.H.copy(),
        labels=dict(chosen.labels),
    )
    return collapsed, event


def run_step(state: UniverseState, ledger: CurrentLedger, channels: Sequence[CaptureChannel],
             hamiltonian: Hamiltonian1D, dt: float, rng: np.random.Generator,
             check_freeze: bool = True):
    """One engine step: unitary -> currents -> drain/fill -> ledger -> trigger -> collapse.

    Exactly one uniform is drawn per step.  Returns (state, ledger, event or None).
    """
    t_start = state.t
    after, ledger, evolved = advance(state, ledger, channels, hamiltonian, dt, check_freeze)
    hit = sample_trigger(ledger, after, dt, rng)
    if hit is None:
        return after, ledger, None
    collapsed, event = make_event(after, ledger, evolved, hit, t_start, dt)
    return collapsed, ledger, event
