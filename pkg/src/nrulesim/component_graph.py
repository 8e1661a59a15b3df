"""Universal state: one realized component plus any number of ready ones."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Mapping

import numpy as np

from .errors import InvariantViolation, StructureError

if TYPE_CHECKING:
    from .wave_dynamics import GridWavefunction

# relative tolerance on the square-modulus ledger
S_TOLERANCE = 1e-10


class ComponentKind(enum.Enum):
    REALIZED = "realized"
    READY = "ready"


@dataclass(frozen=True, eq=False)
class Component:
    id: str
    kind: ComponentKind
    psi: GridWavefunction
    labels: Mapping[str, object] = field(default_factory=dict)
    born_at: float = 0.0
    # Ready bookkeeping written by drain_and_fill.
    snapshot: GridWavefunction | None = None
    last_inflow: np.ndarray | None = None
    inflow_count: int = 0

    @property
    def norm2(self) -> float:
        return self.psi.norm2()

    @property
    def is_ready(self) -> bool:
        return self.kind is ComponentKind.READY


@dataclass(frozen=True, eq=False)
class UniverseState:
    components: tuple[Component, ...]
    t: float = 0.0

    def __post_init__(self):
        ids = [c.id for c in self.components]
        if len(set(ids)) != len(ids):
            raise StructureError(f"duplicate component ids in {ids}")

    @property
    def s(self) -> float:
        return total_square_modulus(self)

    def ids(self) -> list[str]:
        return [c.id for c in self.components]

    def get(self, cid: str) -> Component:
        for c in self.components:
            if c.id == cid:
                return c
        raise StructureError(f"unknown component id {cid!r}")

    def __contains__(self, cid: str) -> bool:
        return any(c.id == cid for c in self.components)

    @property
    def realized(self) -> Component:
        found = [c for c in self.components if c.kind is ComponentKind.REALIZED]
        if len(found) != 1:
            raise InvariantViolation(f"expected exactly one realized component, found {len(found)}")
        return found[0]

    @property
    def ready(self) -> list[Component]:
        return [c for c in self.components if c.is_ready]

    def with_components(self, updated: Iterable[Component]) -> UniverseState:
        """Replace components by id, keeping order."""
        by_id = {c.id: c for c in updated}
        unknown = set(by_id) - set(self.ids())
        if unknown:
            raise StructureError(f"unknown component ids {sorted(unknown)}")
        return replace(self, components=tuple(by_id.get(c.id, c) for c in self.components))

    def at_time(self, t: float) -> UniverseState:
        return replace(self, t=t)


def realized_component(cid: str, psi: GridWavefunction, labels=None, born_at: float = 0.0) -> Component:
    return Component(cid, ComponentKind.REALIZED, psi, dict(labels or {}), born_at)


def blank_component(cid: str, like: GridWavefunction, labels=None) -> Component:
    """A zero-amplitude branch, the raw material for mark_ready."""
    return Component(cid, ComponentKind.REALIZED, like.zeros_like(), dict(labels or {}))


def mark_ready(state: UniverseState, cid: str, at: float | None = None) -> UniverseState:
    """Tag a freshly built, still empty branch as ready.

    Scenario builders call this at construction time; it is not a runtime
    transition for a component that already carries amplitude.
    """
    comp = state.get(cid)
    n2 = comp.norm2
    if n2 != 0.0:
        raise InvariantViolation(f"component {cid!r} has square modulus {n2!r}; ready components are born empty")
    marked = replace(comp, kind=ComponentKind.READY, born_at=state.t if at is None else at)
    return state.with_components([marked])


def total_square_modulus(state: UniverseState) -> float:
    return float(sum(c.norm2 for c in state.components))


def check_invariants(state: UniverseState, previous: UniverseState | None = None) -> None:
    """Raise InvariantViolation if the kind partition or ready monotonicity fails."""
    n_realized = sum(1 for c in state.components if c.kind is ComponentKind.REALIZED)
    if n_realized != 1:
        raise InvariantViolation(f"{n_realized} realized components; exactly one required")
    for c in state.components:
        n2 = c.norm2
        if not np.isfinite(n2) or n2 < 0:
            raise InvariantViolation(f"component {c.id!r} has invalid square modulus {n2!r}")
    if previous is None:
        return
    s_prev, s_now = previous.s, state.s
    if abs(s_now - s_prev) > S_TOLERANCE * max(s_prev, 1e-300):
        raise InvariantViolation(f"square modulus drifted from {s_prev!r} to {s_now!r}")
    for c in state.ready:
        if c.id in previous:
            before = previous.get(c.id)
            if before.is_ready and c.norm2 < before.norm2 * (1 - 1e-14):
                raise InvariantViolation(f"ready component {c.id!r} lost square modulus")
