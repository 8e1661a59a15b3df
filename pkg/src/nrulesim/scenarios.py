"""Builders for the no-collapse baseline and the four localization scenarios."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .component_graph import UniverseState, blank_component, mark_ready, realized_component
from .config import ScenarioConfig
from .decoherence import (
    GaussianKernel,
    build_batch_channels,
    build_indicator_channels,
    gaussian_occupancy,
    partition_batches,
    uniform_occupancy,
)
from .errors import ArgumentError
from .reduction_engine import assert_freeze
from .wave_dynamics import CaptureChannel, Grid1D, GridWavefunction, Hamiltonian1D, gaussian_packet

REALIZED_ID = "R"


@dataclass(eq=False)
class Scenario:
    scenario_id: str
    case: str
    hamiltonian: Hamiltonian1D
    state: UniverseState
    channels: tuple[CaptureChannel, ...]
    dt: float
    t_max: float
    t_on: float = 0.0
    continue_after_collapse: bool = False
    check_freeze: bool = True
    series_rows: int = 2000
    config: ScenarioConfig | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0 or not self.t_max >= self.dt:
            raise ArgumentError("need 0 < dt <= t_max")
        for ch in self.channels:
            if not self.state.get(ch.target).is_ready:
                raise ArgumentError(f"channel {ch.label} must target a ready component")

    @property
    def grid(self) -> Grid1D:
        return self.hamiltonian.grid

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def onset_step(self) -> int:
        return int(round(self.t_on / self.dt))

    @property
    def channel_labels(self) -> list[str]:
        return [ch.label for ch in self.channels]

    def without_channels(self) -> Scenario:
        """Same object and dynamics with every ready branch and channel removed."""
        realized = self.state.realized
        return replace(self, scenario_id=f"{self.scenario_id}:baseline", case="baseline",
                       state=UniverseState((realized,), self.state.t), channels=())

    def with_rates_scaled(self, factor: float, dt: float | None = None) -> Scenario:
        return replace(self, scenario_id=f"{self.scenario_id}:x{factor:g}",
                       channels=tuple(ch.scaled(factor) for ch in self.channels), dt=dt or self.dt)

    def with_dt(self, dt: float) -> Scenario:
        return replace(self, dt=dt)


def assemble(scenario_id: str, case: str, hamiltonian: Hamiltonian1D, psi: GridWavefunction,
             ready: Sequence[tuple[str, np.ndarray, dict]], *, dt: float, t_max: float, t_on: float = 0.0,
             realized_labels: dict | None = None, **kwargs) -> Scenario:
    """Realized object state plus one empty ready branch and capture channel per entry.

    ``ready`` holds (id, gamma, labels) triples.
    """
    comps = [realized_component(REALIZED_ID, psi, realized_labels)]
    comps += [blank_component(cid, psi, labels) for cid, _, labels in ready]
    state = UniverseState(tuple(comps), 0.0)
    for cid, _, _ in ready:
        state = mark_ready(state, cid, at=t_on)
    channels = tuple(CaptureChannel(cid, gamma, psi.grid, labels.get("label", cid)) for cid, gamma, labels in ready)
    scen = Scenario(scenario_id, case, hamiltonian, state, channels, dt, t_max, t_on, **kwargs)
    report = assert_freeze(scen.state, scen.channels)
    if report:
        raise ArgumentError("; ".join(report))
    return scen


def _hamiltonian(cfg: ScenarioConfig, grid: Grid1D) -> Hamiltonian1D:
    pot = cfg.potential
    if pot.kind == "harmonic":
        return Hamiltonian1D.harmonic(grid, pot.omega, pot.center, pot.mass, pot.boundary)
    return Hamiltonian1D.free(grid, pot.mass, pot.boundary)


def _common(cfg: ScenarioConfig):
    grid = Grid1D.from_spacing(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.dx)
    h = _hamiltonian(cfg, grid)
    psi = gaussian_packet(grid, cfg.object.center, cfg.object.sigma, cfg.object.momentum)
    kwargs = dict(dt=cfg.dt, t_max=cfg.t_max, t_on=cfg.capture_onset,
                  continue_after_collapse=cfg.engine.continue_after_collapse,
                  check_freeze=cfg.engine.check_freeze, series_rows=cfg.engine.series_rows, config=cfg)
    return grid, h, psi, kwargs


def build_baseline(cfg: ScenarioConfig) -> Scenario:
    grid, h, psi, kw = _common(cfg)
    return assemble(cfg.scenario_id, "baseline", h, psi, [], **kw)


def build_case1(cfg: ScenarioConfig) -> Scenario:
    """Localized camera: one ready branch per crystal window fixed in the lab frame."""
    grid, h, psi, kw = _common(cfg)
    windows = [tuple(map(float, w)) for w in cfg.case1.windows]
    s = sorted(windows)
    if any(b[0] < a[1] for a, b in zip(s, s[1:])):
        raise ArgumentError("crystal windows overlap")
    g = cfg.capture.rate
    ready = [(f"N{i + 1}", g * grid.mask(lo, hi), {"crystal": i + 1, "window": [lo, hi], "label": f"N{i + 1}"})
             for i, (lo, hi) in enumerate(windows)]
    return assemble(cfg.scenario_id, "case1", h, psi, ready, meta={"windows": windows}, **kw)


def build_case2(cfg: ScenarioConfig) -> Scenario:
    """Camera in two superposed branches A and B; 2N ready (branch, crystal) components."""
    grid, h, psi, kw = _common(cfg)
    c2 = cfg.case2
    g = cfg.capture.rate
    ready = []
    for branch in ("A", "B"):
        off, weight = c2.offsets[branch], c2.weights[branch]
        for i, (lo, hi) in enumerate(c2.windows):
            cid = f"{branch}{i + 1}"
            ready.append((cid, weight * g * grid.mask(lo + off, hi + off),
                          {"branch": branch, "crystal": i + 1, "window": [lo + off, hi + off], "label": cid}))
    return assemble(cfg.scenario_id, "case2", h, psi, ready,
                    realized_labels={"branches": "A+B", "weights": dict(c2.weights)},
                    meta={"offsets": dict(c2.offsets), "weights": dict(c2.weights)}, **kw)


def _partition(extent, section, axis):
    spec = section.boundaries if section.boundaries is not None else section.batches
    return partition_batches(tuple(extent), spec, axis)


def build_case3(cfg: ScenarioConfig) -> Scenario:
    """Continuously uncertain film split into decoherent batches of camera positions."""
    grid, h, psi, kw = _common(cfg)
    c3 = cfg.case3
    part = _partition(c3.extent, c3, "detector")
    det = c3.detector
    density = uniform_occupancy if det.shape == "uniform" else gaussian_occupancy(det.center, det.width)
    kernel = GaussianKernel(cfg.capture.rate, c3.kernel_width)
    bcs = build_batch_channels(part, kernel, density, grid)
    ready = [(ch.target, ch.gamma, {"batch": a + 1, "camera_interval": [lo, hi], "label": ch.target})
             for a, (ch, (lo, hi)) in enumerate(zip(bcs.channels, part.intervals()))]
    return assemble(cfg.scenario_id, "case3", h, psi, ready,
                    meta={"boundaries": list(part.boundaries), "kernel_reach": kernel.reach}, **kw)


def build_scattering(cfg: ScenarioConfig) -> Scenario:
    """Spread-out atom broken into decoherent batches, each a possible emitter."""
    grid, h, psi, kw = _common(cfg)
    sc = cfg.scattering
    part = _partition(sc.extent, sc, "atom")
    channels = build_indicator_channels(part, cfg.capture.rate, grid)
    ready = [(ch.target, ch.gamma, {"batch": a + 1, "atom_interval": [lo, hi], "photon": f"gamma_{a + 1}",
                                    "label": ch.target})
             for a, (ch, (lo, hi)) in enumerate(zip(channels, part.intervals()))]
    return assemble(cfg.scenario_id, "scattering", h, psi, ready,
                    meta={"boundaries": list(part.boundaries)}, **kw)


BUILDERS = {
    "baseline": build_baseline,
    "case1": build_case1,
    "case2": build_case2,
    "case3": build_case3,
    "scattering": build_scattering,
}


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    return BUILDERS[cfg.case](cfg)


def default_config(case: str, **overrides) -> ScenarioConfig:
    from .config import config_from_dict

    return config_from_dict({"case": case, **overrides})
