"""Scenario configuration: strict TOML schema, defaults and cross-field checks."""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError
from .wave_dynamics import HAZARD_GUARD

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CASES = ("baseline", "case1", "case2", "case3", "scattering")
Interval = tuple[float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Strict):
    x_min: float = -20.0
    x_max: float = 20.0
    dx: float = Field(0.04, gt=0)


class ObjectConfig(_Strict):
    center: float = 0.0
    sigma: float = Field(1.0, gt=0)
    momentum: float = 0.0


class PotentialConfig(_Strict):
    kind: Literal["free", "harmonic"] = "free"
    omega: float = Field(1.0, gt=0)
    center: float = 0.0
    mass: float = Field(1.0, gt=0)
    boundary: Literal["reflecting", "periodic"] = "reflecting"


class CaptureConfig(_Strict):
    rate: float = Field(0.5, ge=0)


class Case1Config(_Strict):
    windows: list[Interval] = [(1.0, 2.0)]


class Case2Config(_Strict):
    windows: list[Interval] = [(-2.0, -1.0), (1.0, 2.0)]
    offsets: dict[Literal["A", "B"], float] = {"A": 0.25, "B": -0.25}
    weights: dict[Literal["A", "B"], float] = {"A": 0.5, "B": 0.5}


class DetectorConfig(_Strict):
    shape: Literal["gaussian", "uniform"] = "gaussian"
    center: float = 0.0
    width: float = Field(4.0, gt=0)


class Case3Config(_Strict):
    extent: Interval = (-4.0, 4.0)
    batches: int = Field(3, ge=1)
    boundaries: Optional[list[float]] = None
    kernel_width: float = Field(0.1, gt=0)
    detector: DetectorConfig = DetectorConfig()


class ScatteringConfig(_Strict):
    extent: Interval = (-4.0, 4.0)
    batches: int = Field(4, ge=1)
    boundaries: Optional[list[float]] = None


class EngineConfig(_Strict):
    continue_after_collapse: bool = False
    check_freeze: bool = True
    series_rows: int = Field(2000, ge=2)


class ScenarioConfig(_Strict):
    case: Literal["baseline", "case1", "case2", "case3", "scattering"]
    name: Optional[str] = None
    t_max: float = Field(10.0, gt=0)
    dt: float = Field(0.01, gt=0)
    t_on: Optional[float] = Field(None, ge=0)
    grid: GridConfig = GridConfig()
    object: ObjectConfig = ObjectConfig()
    potential: PotentialConfig = PotentialConfig()
    capture: CaptureConfig = CaptureConfig()
    case1: Case1Config = Case1Config()
    case2: Case2Config = Case2Config()
    case3: Case3Config = Case3Config()
    scattering: ScatteringConfig = ScatteringConfig()
    engine: EngineConfig = EngineConfig()

    @property
    def scenario_id(self) -> str:
        return self.name or self.case

    @property
    def capture_onset(self) -> float:
        if self.t_on is not None:
            return self.t_on
        return 5.0 if self.case == "scattering" else 0.0

    def max_rate(self) -> float:
        """Upper bound on the total capture rate anywhere on the grid."""
        g = self.capture.rate
        if self.case == "baseline":
            return 0.0
        if self.case == "case2":
            return g * sum(abs(w) for w in self.case2.weights.values())
        return g

    def canonical(self) -> dict:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def updated(self, dotted: str, value) -> ScenarioConfig:
        """Copy with one dotted key replaced, re-validated."""
        data = self.canonical()
        node = data
        parts = dotted.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError([f"{dotted}: unknown key"])
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError([f"{dotted}: unknown key"])
        node[parts[-1]] = value
        return config_from_dict(data)


def _intervals_overlap(intervals) -> bool:
    s = sorted(intervals)
    return any(b[0] < a[1] for a, b in zip(s, s[1:]))


def cross_field_errors(cfg: ScenarioConfig) -> list[str]:
    errs = []
    if cfg.grid.x_max <= cfg.grid.x_min:
        errs.append("grid.x_max: must exceed grid.x_min")
    elif (cfg.grid.x_max - cfg.grid.x_min) / cfg.grid.dx < 7:
        errs.append("grid.dx: grid needs at least 8 points")
    if cfg.dt > cfg.t_max:
        errs.append("dt: must not exceed t_max")
    if cfg.capture_onset >= cfg.t_max:
        errs.append("t_on: capture onset must precede t_max")
    if cfg.dt * cfg.max_rate() > HAZARD_GUARD:
        errs.append(f"dt: violates the step guard 'total hazard per step <= {HAZARD_GUARD}' "
                    f"(dt * max rate = {cfg.dt * cfg.max_rate():.4g})")
    if cfg.case == "case1":
        if not cfg.case1.windows:
            errs.append("case1.windows: at least one crystal window required")
        for i, (lo, hi) in enumerate(cfg.case1.windows):
            if hi <= lo:
                errs.append(f"case1.windows[{i}]: empty interval")
        if _intervals_overlap(cfg.case1.windows):
            errs.append("case1.windows: crystal windows overlap")
    if cfg.case == "case2":
        c2 = cfg.case2
        if set(c2.offsets) != {"A", "B"}:
            errs.append("case2.offsets: need entries for A and B")
        if set(c2.weights) != {"A", "B"}:
            errs.append("case2.weights: need entries for A and B")
        elif any(w < 0 for w in c2.weights.values()) or abs(sum(c2.weights.values()) - 1) > 1e-9:
            errs.append("case2.weights: must be >= 0 and sum to 1")
        if not c2.windows:
            errs.append("case2.windows: at least one crystal window required")
        for i, (lo, hi) in enumerate(c2.windows):
            if hi <= lo:
                errs.append(f"case2.windows[{i}]: empty interval")
        if _intervals_overlap(c2.windows):
            errs.append("case2.windows: crystal windows overlap")
    for key, sect in (("case3", cfg.case3), ("scattering", cfg.scattering)):
        if cfg.case != key:
            continue
        lo, hi = sect.extent
        if hi <= lo:
            errs.append(f"{key}.extent: empty extent")
        b = sect.boundaries
        if b is not None:
            if len(b) < 2 or any(y <= x for x, y in zip(b, b[1:])):
                errs.append(f"{key}.boundaries: must be strictly increasing")
            elif (b[0], b[-1]) != (lo, hi):
                errs.append(f"{key}.boundaries: must start and end at the extent")
    return errs


def _format_pydantic(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = "unknown key" if e["type"] == "extra_forbidden" else e["msg"]
        out.append(f"{path}: {msg}")
    return out


def _without(data: dict, locs) -> dict:
    """Deep copy of ``data`` with the offending keys dropped, so defaults fill in."""
    out = json.loads(json.dumps(data))
    for loc in locs:
        node = out
        for key in loc[:-1]:
            node = node.get(key) if isinstance(node, dict) else None
            if node is None:
                break
        if isinstance(node, dict):
            node.pop(loc[-1], None)
    return out


def config_from_dict(data: dict) -> ScenarioConfig:
    """Validated config, or ConfigError listing every schema and cross-field problem found."""
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        errs = _format_pydantic(exc)
        # cross-field checks on what remains valid, so one pass reports everything
        try:
            rest = ScenarioConfig.model_validate(_without(data, [e["loc"] for e in exc.errors() if e["loc"]]))
            errs += [e for e in cross_field_errors(rest) if e.split(":")[0] not in {x.split(":")[0] for x in errs}]
        except (ValidationError, TypeError, ValueError):
            pass
        raise ConfigError(errs) from None
    errs = cross_field_errors(cfg)
    if errs:
        raise ConfigError(errs)
    return cfg


def parse_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"]) from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    return config_from_dict(data)
