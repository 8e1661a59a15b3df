"""Grid wavefunctions, Crank-Nicolson propagation and capture-current bookkeeping.

Natural units (hbar = 1, default mass 1).  The realized branch feeds each
ready branch through a capture channel with rate density gamma(x); the
square-modulus current is J = sum(gamma |psi|^2) dx.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .component_graph import Component, ComponentKind, UniverseState
from .errors import ArgumentError, NumericalError, StepTooLargeError, StructureError

HAZARD_GUARD = 0.1


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 8:
            raise ArgumentError(f"n_points must be >= 8, got {self.n_points}")
        if not self.x_max > self.x_min:
            raise ArgumentError(f"empty grid [{self.x_min}, {self.x_max}]")

    @classmethod
    def from_spacing(cls, x_min: float, x_max: float, dx: float) -> Grid1D:
        n = int(round((x_max - x_min) / dx)) + 1
        return cls(float(x_min), float(x_max), n)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    def mask(self, lo: float, hi: float) -> np.ndarray:
        """Grid points in the half-open interval [lo, hi), robust to rounding of x."""
        eps = 1e-9 * self.dx
        x = self.x
        return (x >= lo - eps) & (x < hi - eps)


@dataclass(frozen=True, eq=False)
class GridWavefunction:
    grid: Grid1D
    amps: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amps, dtype=complex)
        if amps.shape != (self.grid.n_points,):
            raise StructureError(f"amplitude shape {amps.shape} does not match grid of {self.grid.n_points} points")
        object.__setattr__(self, "amps", amps)

    def density(self) -> np.ndarray:
        return self.amps.real**2 + self.amps.imag**2

    def norm2(self) -> float:
        return float(np.sum(self.density()) * self.grid.dx)

    def zeros_like(self) -> GridWavefunction:
        return GridWavefunction(self.grid, np.zeros_like(self.amps))

    def normalized(self) -> GridWavefunction:
        n2 = self.norm2()
        if n2 <= 0:
            raise NumericalError("cannot normalize a zero wavefunction")
        return GridWavefunction(self.grid, self.amps / np.sqrt(n2))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.amps)))


def gaussian_packet(grid: Grid1D, center: float = 0.0, sigma: float = 1.0, momentum: float = 0.0) -> GridWavefunction:
    """Normalized Gaussian whose density has standard deviation ``sigma``."""
    if sigma <= 0:
        raise ArgumentError("sigma must be positive")
    x = grid.x
    amps = np.exp(-((x - center) ** 2) / (4 * sigma**2) + 1j * momentum * x)
    return GridWavefunction(grid, amps).normalized()


class Boundary(enum.Enum):
    REFLECTING = "reflecting"
    PERIODIC = "periodic"


class _CrankNicolson:
    """(1 + i dt H/2) psi' = (1 - i dt H/2) psi for the 3-point Hamiltonian."""

    def __init__(self, diag: np.ndarray, off: float, boundary: Boundary, dt: float):
        self.boundary = boundary
        half = 0.5j * dt
        self._b_diag = 1 - half * diag
        self._b_off = -half * off
        a_diag = (1 + half * diag).astype(complex)
        a_off = complex(half * off)
        n = diag.size
        if boundary is Boundary.REFLECTING:
            e = np.full(n - 1, a_off)
            self._lu = lapack.zgttrf(e.copy(), a_diag.copy(), e.copy())
            if self._lu[-1] != 0:
                raise NumericalError("tridiagonal factorization failed")
        else:
            mat = sp.diags([a_diag, np.full(n - 1, a_off), np.full(n - 1, a_off)], [0, 1, -1], format="lil")
            mat[0, n - 1] = a_off
            mat[n - 1, 0] = a_off
            self._splu = spla.splu(mat.tocsc())

    def __call__(self, amps: np.ndarray) -> np.ndarray:
        rhs = self._b_diag * amps
        rhs[1:] += self._b_off * amps[:-1]
        rhs[:-1] += self._b_off * amps[1:]
        if self.boundary is Boundary.REFLECTING:
            dl, d, du, du2, ipiv, _ = self._lu
            out, info = lapack.zgttrs(dl, d, du, du2, ipiv, rhs)
            if info != 0:
                raise NumericalError("tridiagonal solve failed")
            return out
        rhs[0] += self._b_off * amps[-1]
        rhs[-1] += self._b_off * amps[0]
        return self._splu.solve(rhs)


@dataclass(eq=False)
class Hamiltonian1D:
    grid: Grid1D
    potential: np.ndarray
    mass: float = 1.0
    boundary: Boundary = Boundary.REFLECTING
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.potential = np.asarray(self.potential, dtype=float)
        if self.potential.shape != (self.grid.n_points,):
            raise StructureError("potential does not match grid")
        if not np.all(np.isfinite(self.potential)):
            raise ArgumentError("potential must be finite everywhere")
        if self.mass <= 0:
            raise ArgumentError("mass must be positive")
        self.boundary = Boundary(self.boundary)

    @classmethod
    def free(cls, grid: Grid1D, mass: float = 1.0, boundary=Boundary.REFLECTING) -> Hamiltonian1D:
        return cls(grid, np.zeros(grid.n_points), mass, boundary)

    @classmethod
    def harmonic(cls, grid: Grid1D, omega: float, center: float = 0.0, mass: float = 1.0,
                 boundary=Boundary.REFLECTING) -> Hamiltonian1D:
        return cls(grid, 0.5 * mass * omega**2 * (grid.x - center) ** 2, mass, boundary)

    @property
    def _kinetic(self) -> tuple[np.ndarray, float]:
        k = 1.0 / (2 * self.mass * self.grid.dx**2)
        return 2 * k + self.potential, -k

    def matrix(self) -> np.ndarray:
        """Dense Hamiltonian; meant for small grids and tests."""
        diag, off = self._kinetic
        n = self.grid.n_points
        h = np.diag(diag) + off * (np.eye(n, k=1) + np.eye(n, k=-1))
        if self.boundary is Boundary.PERIODIC:
            h[0, -1] = h[-1, 0] = off
        return h

    def propagator(self, dt: float) -> _CrankNicolson:
        key = float(dt)
        prop = self._cache.get(key)
        if prop is None:
            diag, off = self._kinetic
            prop = self._cache[key] = _CrankNicolson(diag, off, self.boundary, key)
        return prop

    def __getstate__(self):
        # factorizations are not picklable; rebuild lazily
        state = self.__dict__.copy()
        state["_cache"] = {}
        return state


def step_unitary(psi: GridWavefunction, h: Hamiltonian1D, dt: float) -> GridWavefunction:
    if dt < 0 or not np.isfinite(dt):
        raise ArgumentError(f"dt must be a non-negative finite time, got {dt!r}")
    if not psi.is_finite():
        raise NumericalError("non-finite amplitudes")
    if dt == 0:
        return psi
    if psi.grid != h.grid:
        raise StructureError("wavefunction and Hamiltonian live on different grids")
    return GridWavefunction(psi.grid, h.propagator(dt)(psi.amps))


def position_variance(psi: GridWavefunction) -> float:
    rho = psi.density()
    total = rho.sum()
    if not total > 0:
        raise NumericalError("position variance of a zero-norm state is undefined")
    x = psi.grid.x
    mean = np.dot(rho, x) / total
    return float(np.dot(rho, (x - mean) ** 2) / total)


@dataclass(frozen=True, eq=False)
class CaptureChannel:
    """Irreversible coupling that feeds current from the realized branch into ``target``.

    ``source`` names the feeding component; None means "whichever component is
    realized", which is the only configuration the engine builds.
    """

    target: str
    gamma: np.ndarray
    grid: Grid1D
    label: str = ""
    source: str | None = None

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.shape != (self.grid.n_points,):
            raise StructureError("gamma does not match grid")
        if not np.all(np.isfinite(gamma)) or np.any(gamma < 0):
            raise ArgumentError(f"channel {self.label or self.target}: gamma must be finite and >= 0")
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        if not self.label:
            object.__setattr__(self, "label", self.target)

    def scaled(self, factor: float) -> CaptureChannel:
        return replace(self, gamma=self.gamma * factor)


def channel_current(channel: CaptureChannel, realized_psi: GridWavefunction) -> float:
    if channel.grid != realized_psi.grid:
        raise StructureError(f"channel {channel.label} defined on a different grid")
    return float(np.dot(channel.gamma, realized_psi.density()) * realized_psi.grid.dx)


def _transfer(state: UniverseState, channels: Sequence[CaptureChannel], dt: float):
    """Drain the realized branch into each channel target.

    Returns (new_state, currents, realized square modulus before the drain).
    """
    realized = state.realized
    psi = realized.psi
    s_r = psi.norm2()
    if not channels:
        return state, np.zeros(0), s_r
    targets = [ch.target for ch in channels]
    if len(set(targets)) != len(targets):
        raise StructureError("two channels feed the same ready component")
    comps = [state.get(t) for t in targets]
    for ch, comp in zip(channels, comps):
        if not comp.is_ready:
            raise StructureError(f"channel {ch.label} targets non-ready component {comp.id!r}")
        if ch.grid != psi.grid:
            raise StructureError(f"channel {ch.label} defined on a different grid")
    rho = psi.density()
    dx = psi.grid.dx
    currents = np.array([np.dot(ch.gamma, rho) * dx for ch in channels])
    if s_r > 0 and currents.sum() * dt / s_r > HAZARD_GUARD:
        raise StepTooLargeError(f"total hazard per step {currents.sum() * dt / s_r:.4g} exceeds {HAZARD_GUARD}")
    gamma_tot = np.sum([ch.gamma for ch in channels], axis=0)
    depletion = 1.0 - dt * gamma_tot
    if np.any(depletion < 0):
        raise StepTooLargeError("dt * gamma exceeds 1 at some grid point")
    updated = [replace(realized, psi=GridWavefunction(psi.grid, psi.amps * np.sqrt(depletion)))]
    for ch, comp in zip(channels, comps):
        inflow = dt * ch.gamma * rho
        filled = np.sqrt(comp.psi.density() + inflow)
        updated.append(replace(
            comp,
            psi=GridWavefunction(psi.grid, filled),
            snapshot=GridWavefunction(psi.grid, np.sqrt(ch.gamma) * psi.amps),
            last_inflow=inflow,
            inflow_count=comp.inflow_count + 1,
        ))
    return state.with_components(updated), currents, s_r


def drain_and_fill(state: UniverseState, channels: Sequence[CaptureChannel], dt: float) -> UniverseState:
    """First-order transfer of square modulus from the realized branch to ready targets.

    Each target gains J_n dt; the realized branch loses gamma_n(x)|psi(x)|^2 dt
    pointwise, so the total square modulus is unchanged.
    """
    return _transfer(state, channels, dt)[0]


@dataclass(frozen=True, eq=False)
class CurrentLedger:
    """Per-channel currents and cumulative hazards.

    ``rates`` holds the conditional hazard J_n / s_R (s_R is the realized
    square modulus), so survival to time t is exp(-sum(H)).
    """

    targets: tuple[str, ...]
    currents: np.ndarray
    rates: np.ndarray
    H: np.ndarray
    s: float = 1.0
    s_realized: float = 1.0
    t: float = 0.0
    history: deque = field(default_factory=lambda: deque(maxlen=4096), repr=False)

    @classmethod
    def empty(cls, channels: Sequence[CaptureChannel], s: float = 1.0, t: float = 0.0) -> CurrentLedger:
        z = np.zeros(len(channels))
        return cls(tuple(ch.target for ch in channels), z, z.copy(), z.copy(), s, s, t)

    @property
    def H_total(self) -> float:
        return float(self.H.sum())


def update_ledger(ledger: CurrentLedger, state: UniverseState, channels: Sequence[CaptureChannel], dt: float,
                  *, currents: np.ndarray | None = None, realized_norm2: float | None = None) -> CurrentLedger:
    """Advance the cumulative hazards by one step.

    ``currents`` / ``realized_norm2`` let the engine pass the values it used
    for the drain; otherwise they are recomputed from ``state``.
    """
    if not dt > 0:
        raise ArgumentError("dt must be positive")
    if realized_norm2 is None:
        realized_norm2 = state.realized.norm2
    j = np.zeros(len(ledger.targets))
    if channels:
        if currents is None:
            currents = [channel_current(ch, state.realized.psi) for ch in channels]
        index = {t: i for i, t in enumerate(ledger.targets)}
        for ch, c in zip(channels, currents):
            j[index[ch.target]] = c
    rates = j / realized_norm2 if realized_norm2 > 0 else np.zeros_like(j)
    H = ledger.H + rates * dt
    history = ledger.history
    history.append((ledger.t + dt, j.copy(), H.copy()))
    return replace(ledger, currents=j, rates=rates, H=H, s=state.s, s_realized=realized_norm2,
                   t=ledger.t + dt, history=history)
