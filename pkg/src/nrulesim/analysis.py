"""Trajectories, ensembles, quadrature oracles and the localization report.

Before the first reduction a scenario is deterministic: randomness enters only
through the trigger.  An ensemble therefore computes the engine path once
(``compute_prefix``) and replays each stream's uniforms against the stored
per-step strike probabilities.  ``run_trajectory`` without a prefix runs the
step-by-step engine; both routes give bit-identical records.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .component_graph import UniverseState
from .errors import ArgumentError, NRulesError
from .reduction_engine import (
    CollapseEvent,
    Hit,
    RngStream,
    advance,
    choose,
    make_event,
    run_step,
    step_probabilities,
)
from .scenarios import Scenario
from .wave_dynamics import CurrentLedger, position_variance, step_unitary

CURVE_POINTS = 101
HIST_BINS = 40
_CHUNK = 256


@dataclass(frozen=True, eq=False)
class Series:
    t: np.ndarray
    variance: np.ndarray
    s: np.ndarray
    H: np.ndarray  # rows x channels

    def __eq__(self, other):
        if not isinstance(other, Series):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("t", "variance", "s", "H"))

    def __len__(self):
        return self.t.size


@dataclass(eq=False)
class TrajectoryRecord:
    seed: int
    stream: int
    scenario_id: str
    events: list[CollapseEvent]
    series: Series | None
    final: dict

    def __eq__(self, other):
        if not isinstance(other, TrajectoryRecord):
            return NotImplemented
        return (self.seed == other.seed and self.stream == other.stream and self.scenario_id == other.scenario_id
                and self.events == other.events and self.series == other.series and self.final == other.final)

    @property
    def collapsed(self) -> bool:
        return bool(self.events)


def decimate(n_rows: int, max_rows: int) -> np.ndarray:
    if n_rows <= max_rows:
        return np.arange(n_rows)
    stride = math.ceil((n_rows - 1) / (max_rows - 1))
    return np.append(np.arange(0, n_rows - 1, stride), n_rows - 1)


def _final(state: UniverseState) -> dict:
    r = state.realized
    return {
        "t": state.t,
        "n_components": len(state.components),
        "realized": r.id,
        "labels": dict(r.labels),
        "realized_norm2": r.norm2,
        "variance": position_variance(r.psi),
    }


def _engine_trajectory(scenario: Scenario, stream: RngStream) -> TrajectoryRecord:
    rng = stream.generator()
    h, dt = scenario.hamiltonian, scenario.dt
    state = scenario.state
    ledger = CurrentLedger.empty(scenario.channels, s=state.s)
    rows = [(state.t, position_variance(state.realized.psi), state.s, ledger.H.copy())]
    events = []
    for k in range(scenario.n_steps):
        active = scenario.channels if (k >= scenario.onset_step and not events) else ()
        state, ledger, event = run_step(state, ledger, active, h, dt, rng, scenario.check_freeze)
        rows.append((state.t, position_variance(state.realized.psi), state.s, ledger.H.copy()))
        if event is not None:
            events.append(event)
            if not scenario.continue_after_collapse:
                break
    idx = decimate(len(rows), scenario.series_rows)
    series = Series(np.array([rows[i][0] for i in idx]), np.array([rows[i][1] for i in idx]),
                    np.array([rows[i][2] for i in idx]),
                    np.array([rows[i][3] for i in idx]).reshape(idx.size, len(scenario.channels)))
    return TrajectoryRecord(stream.seed, stream.stream, scenario.scenario_id, events, series, _final(state))


@dataclass(eq=False)
class Prefix:
    """Deterministic pre-collapse path of a scenario, one entry per engine step.

    Row k of the step arrays describes the step from t[k] to t[k+1].
    """

    scenario: Scenario
    t: np.ndarray            # n_steps + 1
    variance: np.ndarray     # n_steps + 1, realized after the step
    s: np.ndarray            # n_steps + 1
    H: np.ndarray            # (n_steps + 1, n_ch)
    realized_norm2: np.ndarray
    p: np.ndarray            # (n_steps, n_ch) strike probabilities
    pre_variance: np.ndarray  # (n_steps,) realized before the drain
    post_variance: np.ndarray  # (n_steps, n_ch) reduced state if channel n strikes
    post_s: np.ndarray       # (n_steps, n_ch)
    labels: list[dict]
    final_labels: dict

    @property
    def survival(self) -> np.ndarray:
        """Probability that no strike happened by t[k]."""
        return np.concatenate([[1.0], np.cumprod(1.0 - self.p.sum(axis=1))])

    @property
    def n_channels(self) -> int:
        return self.p.shape[1]


def compute_prefix(scenario: Scenario, on_collapse=None) -> Prefix:
    """Run the engine without triggers, executing every possible collapse along the way.

    ``on_collapse(k, n, state)`` is called with each reduced state when given.
    """
    h, dt = scenario.hamiltonian, scenario.dt
    n_ch, n_steps = len(scenario.channels), scenario.n_steps
    state = scenario.state
    ledger = CurrentLedger.empty(scenario.channels, s=state.s)
    t = np.empty(n_steps + 1)
    var = np.empty(n_steps + 1)
    s = np.empty(n_steps + 1)
    H = np.zeros((n_steps + 1, n_ch))
    rn = np.empty(n_steps + 1)
    p = np.zeros((n_steps, n_ch))
    pre = np.full(n_steps, np.nan)
    post = np.full((n_steps, n_ch), np.nan)
    post_s = np.full((n_steps, n_ch), np.nan)
    t[0], var[0], s[0], rn[0] = state.t, position_variance(state.realized.psi), state.s, state.realized.norm2
    for k in range(n_steps):
        active = scenario.channels if k >= scenario.onset_step else ()
        t_start = state.t
        state, ledger, evolved = advance(state, ledger, active, h, dt, scenario.check_freeze)
        pk = step_probabilities(ledger, dt)
        p[k] = pk
        for n in np.flatnonzero(pk > 0):
            collapsed, event = make_event(state, ledger, evolved, Hit(ledger.targets[n], int(n), 0.0), t_start, dt)
            pre[k] = event.pre_variance
            post[k, n] = event.post_variance
            post_s[k, n] = collapsed.s
            if on_collapse is not None:
                on_collapse(k, int(n), collapsed)
        t[k + 1], var[k + 1], s[k + 1], rn[k + 1] = (state.t, position_variance(state.realized.psi), state.s,
                                                     state.realized.norm2)
        H[k + 1] = ledger.H
    labels = [dict(scenario.state.get(ch.target).labels) for ch in scenario.channels]
    return Prefix(scenario, t, var, s, H, rn, p, pre, post, post_s, labels, dict(state.realized.labels))


def _first_hit(p: np.ndarray, stream: RngStream) -> tuple[int, int, float] | None:
    """(step, channel, fraction) of the first strike, drawing one uniform per step."""
    rng = stream.generator()
    n_steps = p.shape[0]
    cum_total = np.cumsum(p, axis=1)[:, -1] if p.shape[1] else np.zeros(n_steps)
    for start in range(0, n_steps, _CHUNK):
        stop = min(start + _CHUNK, n_steps)
        u = rng.random(stop - start)
        hits = np.flatnonzero(u < cum_total[start:stop])
        if hits.size:
            k = start + int(hits[0])
            n, frac = choose(p[k], u[hits[0]])
            return k, n, frac
    return None


def _replay_streams(p: np.ndarray, seed: int, streams: Sequence[int]):
    out = []
    for st in streams:
        try:
            out.append((st, _first_hit(p, RngStream(seed, st)), None))
        except Exception as exc:  # reported per trajectory
            out.append((st, None, f"{type(exc).__name__}: {exc}"))
    return out


def _record_from_hit(prefix: Prefix, stream: RngStream, hit, with_series: bool) -> TrajectoryRecord:
    scen = prefix.scenario
    if hit is None:
        last = prefix.t.size - 1
        rows = np.arange(prefix.t.size)
        events = []
        final = {"t": prefix.t[last], "n_components": len(scen.state.components), "realized": "R",
                 "labels": dict(prefix.final_labels), "realized_norm2": prefix.realized_norm2[last],
                 "variance": prefix.variance[last]}
    else:
        k, n, frac = hit
        rows = np.arange(k + 2)
        ch = scen.channels[n]
        ev = CollapseEvent(prefix.t[k] + frac * scen.dt, ch.target, prefix.pre_variance[k], prefix.post_variance[k, n],
                           prefix.H[k + 1].copy(), dict(prefix.labels[n]))
        events = [ev]
        final = {"t": prefix.t[k + 1], "n_components": 1, "realized": ch.target, "labels": dict(prefix.labels[n]),
                 "realized_norm2": prefix.post_s[k, n], "variance": prefix.post_variance[k, n]}
    series = None
    if with_series:
        var = prefix.variance[rows].copy()
        s = prefix.s[rows].copy()
        if hit is not None:
            var[-1] = prefix.post_variance[hit[0], hit[1]]
            s[-1] = prefix.post_s[hit[0], hit[1]]
        idx = decimate(rows.size, scen.series_rows)
        series = Series(prefix.t[rows][idx], var[idx], s[idx], prefix.H[rows][idx])
    return TrajectoryRecord(stream.seed, stream.stream, scen.scenario_id, events, series, final)


def run_trajectory(scenario: Scenario, stream: RngStream, prefix: Prefix | None = None,
                   with_series: bool = True) -> TrajectoryRecord:
    """One trajectory, deterministic in (seed, stream).

    With ``prefix`` the stored pre-collapse path is replayed; otherwise every
    step runs through the engine.
    """
    try:
        if prefix is None or scenario.continue_after_collapse:
            return _engine_trajectory(scenario, stream)
        return _record_from_hit(prefix, stream, _first_hit(prefix.p, stream), with_series)
    except NRulesError as exc:
        raise type(exc)(f"trajectory (seed={stream.seed}, stream={stream.stream}): {exc}") from exc


# ---------------------------------------------------------------- oracle


@dataclass(eq=False)
class OracleTable:
    """Fine-step quadrature of the pre-collapse hazard, from the capture onset on."""

    t: np.ndarray
    rates: np.ndarray        # (m, n_ch) conditional hazard J_n / s_R
    H_total: np.ndarray
    cdf_total: np.ndarray    # 1 - exp(-H)
    cdf_channel: np.ndarray  # (m, n_ch) probability of first hit on n by t
    post_variance: np.ndarray  # (m, n_ch) variance of gamma_n |psi|^2

    def cdf(self, t) -> np.ndarray:
        return np.interp(t, self.t, self.cdf_total, left=0.0)

    @property
    def hit_fractions(self) -> np.ndarray:
        last = self.cdf_channel[-1]
        return last / last.sum()

    def expected_post_variance(self) -> float:
        """Mean variance of the reduced state, conditional on a reduction by t_max."""
        dens = self.rates * np.exp(-self.H_total)[:, None]
        v = np.where(dens > 0, self.post_variance, 0.0)
        num = np.trapezoid(dens * v, self.t, axis=0).sum()
        return float(num / self.cdf_channel[-1].sum())


def _cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    inc = 0.5 * (y[1:] + y[:-1]) * np.diff(t)[:, None] if y.ndim == 2 else 0.5 * (y[1:] + y[:-1]) * np.diff(t)
    return np.concatenate([np.zeros((1,) + y.shape[1:]), np.cumsum(inc, axis=0)])


def oracle_first_hit_cdf(scenario: Scenario, refine: int = 100) -> OracleTable:
    """Independent reference for first-hit statistics.

    Evolves the no-hit branch at dt/refine with Strang splitting (exact
    exponential decay exp(-gamma dt/2) around each Crank-Nicolson step),
    integrates the hazards by the trapezoid rule and evaluates the reduced-state
    variance from raw moments of gamma_n |psi|^2.
    """
    h = scenario.hamiltonian
    dt_f = scenario.dt / refine
    x = scenario.grid.x
    psi = scenario.state.realized.psi
    G = np.array([ch.gamma for ch in scenario.channels]).reshape(len(scenario.channels), x.size)
    half_decay = np.exp(-0.25 * dt_f * G.sum(axis=0))
    for _ in range(scenario.onset_step * refine):
        psi = step_unitary(psi, h, dt_f)
    t0 = scenario.onset_step * scenario.dt
    m = (scenario.n_steps - scenario.onset_step) * refine + 1
    t = t0 + dt_f * np.arange(m)
    rates = np.empty((m, G.shape[0]))
    pv = np.empty((m, G.shape[0]))
    amps = psi.amps
    prop = h.propagator(dt_f)
    for i in range(m):
        if i:
            amps = half_decay * prop(half_decay * amps)
        rho = amps.real**2 + amps.imag**2
        m0, m1, m2 = G @ rho, G @ (rho * x), G @ (rho * x * x)
        rates[i] = m0 / rho.sum()
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = m1 / m0
            pv[i] = m2 / m0 - mean * mean
    H_total = _cumtrapz(rates.sum(axis=1), t)
    cdf_channel = _cumtrapz(rates * np.exp(-H_total)[:, None], t)
    return OracleTable(t, rates, H_total, 1.0 - np.exp(-H_total), cdf_channel, pv)


def censored_ks(samples: np.ndarray, n_total: int, cdf, t_end: float) -> float:
    """Sup distance between the unconditional empirical first-hit CDF and ``cdf``.

    Trajectories with no hit by ``t_end`` count in ``n_total`` only.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    if n_total <= 0:
        raise ArgumentError("n_total must be positive")
    i = np.arange(1, x.size + 1)
    f = cdf(x)
    d = max(np.max(np.abs(i / n_total - f), initial=0.0), np.max(np.abs((i - 1) / n_total - f), initial=0.0))
    return float(max(d, abs(x.size / n_total - float(cdf(np.array([t_end]))[0]))))


def ks_critical(n: int, alpha: float = 0.01) -> float:
    return float(stats.kstwo.ppf(1 - alpha, n))


# ---------------------------------------------------------------- ensembles


@dataclass(eq=False)
class EnsembleSummary:
    scenario_id: str
    n_traj: int
    n_collapsed: int
    channel_labels: list[str]
    hits: list[int]
    t_sc_p05: float | None
    t_sc_p50: float | None
    t_sc_p95: float | None
    mean_pre_variance: float | None
    mean_post_variance: float | None
    ci95_pre_variance: list[float] | None
    ci95_post_variance: list[float] | None
    ks_statistic: float | None
    ks_critical_1pct: float | None
    oracle_hit_fractions: list[float] | None
    oracle_post_variance: float | None
    t_on: float
    t_max: float
    grid: list
    baseline_variance_t_max: float
    reduction_factor: float
    hist_edges: list[float]
    hist_counts: list[int]
    curve_t: list[float]
    curve_variance: list[float]
    failures: list[str] = field(default_factory=list)
    records: list[TrajectoryRecord] = field(default_factory=list, repr=False)

    FIELDS = ("scenario_id", "n_traj", "n_collapsed", "channel_labels", "hits", "t_sc_p05", "t_sc_p50", "t_sc_p95",
              "mean_pre_variance", "mean_post_variance", "ci95_pre_variance", "ci95_post_variance", "ks_statistic",
              "ks_critical_1pct", "oracle_hit_fractions", "oracle_post_variance", "t_on", "t_max", "grid",
              "baseline_variance_t_max", "reduction_factor", "hist_edges", "hist_counts", "curve_t",
              "curve_variance", "failures")

    def to_record(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}

    @classmethod
    def from_record(cls, rec: dict) -> EnsembleSummary:
        return cls(**{k: rec[k] for k in cls.FIELDS})

    @property
    def hit_fractions(self) -> np.ndarray:
        return np.asarray(self.hits, dtype=float) / self.n_traj

    @property
    def localized_variance(self) -> float:
        """Mean reduced-state variance, or the mean variance at t_max if nothing collapsed."""
        if self.n_collapsed:
            return float(self.mean_post_variance)
        return float(self.curve_variance[-1])


def _mean_ci(values: np.ndarray):
    if not values.size:
        return None, None
    mean = float(values.mean())
    if values.size < 2:
        return mean, [mean, mean]
    half = 1.959963984540054 * float(values.std(ddof=1)) / math.sqrt(values.size)
    return mean, [mean - half, mean + half]


def _curve_indices(n_rows: int) -> np.ndarray:
    return np.unique(np.linspace(0, n_rows - 1, min(CURVE_POINTS, n_rows)).round().astype(int))


def baseline_prefix(scenario: Scenario) -> Prefix:
    return compute_prefix(scenario.without_channels())


def summarize(prefix: Prefix, records: Sequence[TrajectoryRecord], n_traj: int, failures: Sequence[str] = (),
              oracle: OracleTable | None = None, baseline: Prefix | None = None) -> EnsembleSummary:
    scen = prefix.scenario
    labels = scen.channel_labels
    index = {ch.target: i for i, ch in enumerate(scen.channels)}
    hits = [0] * len(labels)
    t_sc, pre, post = [], [], []
    hit_rows = np.full(len(records), prefix.t.size)
    post_aligned = np.zeros(len(records))
    for i, rec in enumerate(records):
        if rec.events:
            ev = rec.events[0]
            hits[index[ev.chosen]] += 1
            t_sc.append(ev.t_sc)
            pre.append(ev.pre_variance)
            post.append(ev.post_variance)
            post_aligned[i] = ev.post_variance
            # first series row showing the reduced state
            hit_rows[i] = min(int(np.searchsorted(prefix.t, ev.t_sc, side="right")), prefix.t.size - 1)
    t_sc, pre, post = np.array(t_sc), np.array(pre), np.array(post)
    q = [float(v) for v in np.quantile(t_sc, [0.05, 0.5, 0.95])] if t_sc.size else [None] * 3
    mean_pre, ci_pre = _mean_ci(pre)
    mean_post, ci_post = _mean_ci(post)
    ks = crit = None
    oracle_frac = oracle_post = None
    n_done = len(records)
    if oracle is not None and n_done and labels:
        ks = censored_ks(t_sc, n_done, oracle.cdf, scen.t_max)
        crit = ks_critical(n_done)
        oracle_frac = [float(v) for v in oracle.hit_fractions]
        oracle_post = oracle.expected_post_variance()
    edges = np.linspace(scen.t_on, scen.t_max, HIST_BINS + 1)
    counts = np.histogram(t_sc, bins=edges)[0] if t_sc.size else np.zeros(HIST_BINS, dtype=int)
    rows = _curve_indices(prefix.t.size)
    order = np.argsort(hit_rows, kind="stable")
    sorted_rows = hit_rows[order]
    post_by_row = post_aligned[order]
    cum_post = np.concatenate([[0.0], np.cumsum(post_by_row)])
    curve = []
    for r in rows:
        c = int(np.searchsorted(sorted_rows, r, side="right"))
        curve.append(float((cum_post[c] + (n_done - c) * prefix.variance[r]) / n_done) if n_done else float("nan"))
    base = baseline if baseline is not None else baseline_prefix(scen)
    base_var = float(base.variance[-1])
    summary = EnsembleSummary(
        scenario_id=scen.scenario_id, n_traj=n_traj, n_collapsed=int(t_sc.size), channel_labels=labels, hits=hits,
        t_sc_p05=q[0], t_sc_p50=q[1], t_sc_p95=q[2], mean_pre_variance=mean_pre, mean_post_variance=mean_post,
        ci95_pre_variance=ci_pre, ci95_post_variance=ci_post, ks_statistic=ks, ks_critical_1pct=crit,
        oracle_hit_fractions=oracle_frac, oracle_post_variance=oracle_post, t_on=scen.t_on, t_max=scen.t_max,
        grid=[scen.grid.x_min, scen.grid.x_max, scen.grid.n_points], baseline_variance_t_max=base_var,
        reduction_factor=float("nan"), hist_edges=[float(e) for e in edges], hist_counts=[int(c) for c in counts],
        curve_t=[float(prefix.t[r]) for r in rows], curve_variance=curve, failures=list(failures),
        records=list(records),
    )
    summary.reduction_factor = base_var / summary.localized_variance if n_done else float("nan")
    return summary


def run_ensemble(scenario: Scenario, n_traj: int, seed: int, *, workers: int = 1, oracle: bool = True,
                 oracle_refine: int = 100, streams: Sequence[int] | None = None,
                 prefix: Prefix | None = None) -> EnsembleSummary:
    """Aggregate ``n_traj`` independent streams of one scenario.

    The summary depends only on the set of (seed, stream) pairs, never on the
    order in which trajectories complete.
    """
    if n_traj < 1:
        raise ArgumentError("n_traj must be >= 1")
    streams = list(range(n_traj)) if streams is None else list(streams)
    if len(streams) != n_traj or len(set(streams)) != n_traj:
        raise ArgumentError("streams must be n_traj distinct ids")
    if scenario.continue_after_collapse:
        raw = []
        for st in streams:
            try:
                raw.append((st, run_trajectory(scenario, RngStream(seed, st), with_series=False), None))
            except NRulesError as exc:
                raw.append((st, None, str(exc)))
        prefix = prefix or compute_prefix(scenario)
        results = sorted(raw, key=lambda r: r[0])
        records = [r for _, r, err in results if err is None]
        failures = [f"stream {st}: {err}" for st, _, err in results if err is not None]
    else:
        prefix = prefix or compute_prefix(scenario)
        if workers > 1 and n_traj > 1:
            chunks = [streams[i::workers] for i in range(workers)]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = pool.map(_replay_streams, [prefix.p] * workers, [seed] * workers, chunks)
                raw = [item for part in parts for item in part]
        else:
            raw = _replay_streams(prefix.p, seed, streams)
        raw.sort(key=lambda r: r[0])
        records = [_record_from_hit(prefix, RngStream(seed, st), hit, False) for st, hit, err in raw if err is None]
        failures = [f"stream {st}: {err}" for st, _, err in raw if err is not None]
    table = oracle_first_hit_cdf(scenario, oracle_refine) if (oracle and scenario.channels) else None
    return summarize(prefix, records, n_traj, failures, table)


# ---------------------------------------------------------------- report


@dataclass
class LocalizationReport:
    t: list[float]
    baseline_variance: list[float]
    ensemble_variance: list[float]
    baseline_variance_t_max: float
    localized_variance: float
    collapsed_fraction: float
    reduction_factor: float

    def format_table(self) -> str:
        lines = [f"{'t':>10} {'baseline Var':>16} {'ensemble Var':>16}"]
        for t, b, e in zip(self.t, self.baseline_variance, self.ensemble_variance):
            lines.append(f"{t:10.4f} {b:16.6g} {e:16.6g}")
        lines.append(f"baseline Var(t_max)            {self.baseline_variance_t_max:.6g}")
        lines.append(f"mean post-collapse Var         {self.localized_variance:.6g}")
        lines.append(f"collapsed fraction             {self.collapsed_fraction:.4f}")
        lines.append(f"reduction factor               {self.reduction_factor:.6g}")
        return "\n".join(lines)


def localization_report(ensemble: EnsembleSummary, baseline: EnsembleSummary) -> LocalizationReport:
    """Compare a collapsing ensemble against the no-collapse baseline on the same grid."""
    if list(ensemble.grid) != list(baseline.grid) or ensemble.t_max != baseline.t_max:
        raise ArgumentError("ensemble and baseline differ in grid or t_max")
    if list(ensemble.curve_t) != list(baseline.curve_t):
        raise ArgumentError("ensemble and baseline sampled at different times")
    base_t_max = float(baseline.curve_variance[-1])
    loc = ensemble.localized_variance
    return LocalizationReport(list(ensemble.curve_t), list(baseline.curve_variance), list(ensemble.curve_variance),
                              base_t_max, loc, ensemble.n_collapsed / ensemble.n_traj, base_t_max / loc)
