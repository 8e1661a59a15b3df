"""Acceptance checks with their tolerances; shared by ``nrulesim selftest`` and the test suite.

Each ``criterion_N`` returns a CriterionResult.  Statistical checks compare
against closed forms or the fine-step quadrature oracle, with tolerances
stated as multiples of the sampling error.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .analysis import (
    censored_ks,
    compute_prefix,
    ks_critical,
    oracle_first_hit_cdf,
    run_ensemble,
    run_trajectory,
)
from .component_graph import ComponentKind, UniverseState
from .reduction_engine import RngStream, advance, assert_freeze, collapse, step_probabilities
from .scenarios import Scenario, assemble, build_scenario, default_config
from .wave_dynamics import CaptureChannel, CurrentLedger, Grid1D, Hamiltonian1D, gaussian_packet, step_unitary

N_TRAJ = 20000
QUICK_TRAJ = 4000


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"criterion {self.number} [{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(number: int, name: str, fn: Callable[[], tuple[bool, str]]) -> CriterionResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    return CriterionResult(number, name, bool(ok), detail, time.perf_counter() - t0)


def constant_rate_scenario(rates=(1.0,), dt: float = 0.002, t_max: float = 15.0) -> Scenario:
    """Object on a small grid with capture rate density constant everywhere, so J_n/s_R = r_n."""
    grid = Grid1D(-10.0, 10.0, 201)
    psi = gaussian_packet(grid, 0.0, 1.0)
    ready = [(f"C{i + 1}", np.full(grid.n_points, float(r)), {"label": f"C{i + 1}", "rate": float(r)})
             for i, r in enumerate(rates)]
    return assemble("constant-rate", "constant", Hamiltonian1D.free(grid), psi, ready, dt=dt, t_max=t_max)


def suite_scenarios() -> list[Scenario]:
    out = [build_scenario(default_config(c)) for c in ("baseline", "case1", "case2", "case3", "scattering")]
    out.append(constant_rate_scenario((0.3, 0.7), dt=0.01, t_max=5.0))
    return out


def criterion_1() -> tuple[bool, str]:
    """Free Gaussian sigma0 = 1 spreads as 1 + (t/2)^2 up to t = 4."""
    sc = build_scenario(default_config("baseline", t_max=4.0))
    pre = compute_prefix(sc)
    exact = 1.0 + (pre.t / 2) ** 2
    err = float(np.max(np.abs(pre.variance / exact - 1)))
    return err <= 0.01, f"max relative error {err:.2e} (tol 1e-2)"


def criterion_2(n_traj: int = N_TRAJ, seed: int = 2) -> tuple[bool, str]:
    """First-hit times are exponential at constant rate; two-channel fractions follow the rates."""
    r = 1.0
    one = constant_rate_scenario((r,))
    s1 = run_ensemble(one, n_traj, seed, oracle=False)
    t_sc = np.array([rec.events[0].t_sc for rec in s1.records if rec.events])
    d = censored_ks(t_sc, n_traj, lambda t: 1 - np.exp(-r * np.asarray(t)), one.t_max)
    crit = ks_critical(n_traj)
    r1, r2 = 0.3, 0.7
    two = constant_rate_scenario((r1, r2), dt=0.01, t_max=25.0)
    s2 = run_ensemble(two, n_traj, seed + 1, oracle=False)
    n_hit = s2.n_collapsed
    q = r1 / (r1 + r2)
    sigma = math.sqrt(q * (1 - q) / n_hit)
    z = abs(s2.hits[0] / n_hit - q) / sigma
    ok = d < crit and z <= 3
    return ok, f"KS D={d:.4f} < crit {crit:.4f}; fraction z={z:.2f} (<= 3)"


def _walk(scenario: Scenario, on_step=None, on_collapse=None) -> int:
    """Engine pre-collapse path with an audit hook per step and per possible collapse."""
    state = scenario.state
    ledger = CurrentLedger.empty(scenario.channels, s=state.s)
    for k in range(scenario.n_steps):
        active = scenario.channels if k >= scenario.onset_step else ()
        after, ledger, _ = advance(state, ledger, active, scenario.hamiltonian, scenario.dt, check_freeze=False)
        if on_step is not None:
            on_step(k, state, after, active)
        if on_collapse is not None:
            p = step_probabilities(ledger, scenario.dt)
            for n in np.flatnonzero(p > 0):
                on_collapse(scenario, after, scenario.channels[n], collapse(after, scenario.channels[n].target))
        state = after
    return scenario.n_steps


def _collapse_violations(scenario: Scenario, before: UniverseState, channel: CaptureChannel,
                         after: UniverseState) -> list[str]:
    bad = []
    comps = after.components
    if len(comps) != 1 or comps[0].kind is not ComponentKind.REALIZED or comps[0].id != channel.target:
        bad.append(f"{scenario.scenario_id}: component set {[c.id for c in comps]}")
    elif abs(comps[0].norm2 - 1.0) > 1e-12:
        bad.append(f"{scenario.scenario_id}: norm {comps[0].norm2}")
    if scenario.case == "case1" and not bad:
        lo, hi = before.get(channel.target).labels["window"]
        rho = comps[0].psi.density()
        x = scenario.grid.x[rho > 1e-12 * rho.max()]
        if x.size and (x.min() < lo - 1e-9 or x.max() > hi + 1e-9):
            bad.append(f"{scenario.scenario_id}: support [{x.min()}, {x.max()}] outside [{lo}, {hi}]")
    return bad


def criterion_3(engine_streams: int = 16) -> tuple[bool, str]:
    """Every collapse leaves exactly one realized, unit-norm component; a windowed reduction stays inside its window."""
    violations: list[str] = []
    count = 0

    def check(sc, before, ch, after):
        nonlocal count
        count += 1
        violations.extend(_collapse_violations(sc, before, ch, after))

    for sc in suite_scenarios():
        if sc.channels:
            _walk(sc, on_collapse=check)
    # engine route, trajectories with their own collapses
    fast = build_scenario(default_config("case1", capture={"rate": 5.0}))
    for st in range(engine_streams):
        rec = run_trajectory(fast, RngStream(3, st))
        for ev in rec.events:
            count += 1
            if rec.final["n_components"] != 1 or abs(rec.final["realized_norm2"] - 1) > 1e-12:
                violations.append(f"engine stream {st}: {rec.final}")
    return not violations, f"{count} collapses checked, {len(violations)} violations"


def freeze_fixtures() -> tuple[bool, bool]:
    """The two deliberate violations: a ready-sourced channel and a self-evolved ready branch."""
    sc = build_scenario(default_config("case1"))
    state = sc.state
    ledger = CurrentLedger.empty(sc.channels, s=state.s)
    for _ in range(5):
        state, ledger, _ = advance(state, ledger, sc.channels, sc.hamiltonian, sc.dt)
    ready = sc.channels[0].target
    bad_channel = replace(sc.channels[0], source=ready, label="leak")
    sourced = any("leak" in m for m in assert_freeze(state, [bad_channel]))
    after, _, _ = advance(state, ledger, sc.channels, sc.hamiltonian, sc.dt)
    comp = after.get(ready)
    broken = after.with_components([replace(comp, psi=step_unitary(comp.psi, sc.hamiltonian, sc.dt))])
    evolved = any("self-evolution" in m for m in assert_freeze(broken, sc.channels, previous=state))
    return sourced, evolved


def criterion_4() -> tuple[bool, str]:
    """assert_freeze is clean on every engine step and flags both broken fixtures."""
    misses: list[str] = []
    steps = 0

    def check(k, before, after, active):
        nonlocal steps
        steps += 1
        misses.extend(assert_freeze(after, active, previous=before))

    for sc in suite_scenarios():
        _walk(sc, on_step=check)
    sourced, evolved = freeze_fixtures()
    ok = not misses and sourced and evolved
    return ok, (f"{steps} steps clean={not misses}; ready-sourced fixture detected={sourced}; "
                f"self-evolution fixture detected={evolved}")


def criterion_5(n_traj: int = N_TRAJ, seed: int = 5, workers: int = 1) -> tuple[bool, str]:
    """Collapse localizes: variance reduction >= 5 vs baseline, within 20% of the truncated-density oracle."""
    parts, ok = [], True
    for case in ("case1", "case3", "scattering"):
        summ = run_ensemble(build_scenario(default_config(case)), n_traj, seed, workers=workers)
        rel = abs(summ.mean_post_variance / summ.oracle_post_variance - 1)
        good = summ.reduction_factor >= 5 and rel <= 0.2
        ok &= good
        parts.append(f"{case} factor {summ.reduction_factor:.1f} oracle dev {rel:.1%}")
    return ok, "; ".join(parts)


def criterion_6() -> tuple[bool, str]:
    """Refining a detector partition leaves the total first-hit CDF unchanged."""
    engine, oracle = {}, {}
    for n in (1, 3, 6):
        sc = build_scenario(default_config("case3", case3={"batches": n}))
        engine[n] = 1 - compute_prefix(sc).survival
        oracle[n] = oracle_first_hit_cdf(sc, refine=10).cdf_total

    def rel(a, b):
        scale = np.maximum(np.abs(a), np.abs(b))
        mask = scale > 0
        return float(np.max(np.abs(a - b)[mask] / scale[mask]))

    dev = max(rel(engine[1], engine[n]) for n in (3, 6))
    dev_o = max(rel(oracle[1], oracle[n]) for n in (3, 6))
    return max(dev, dev_o) <= 1e-9, f"max relative CDF difference engine {dev:.1e}, oracle {dev_o:.1e} (tol 1e-9)"


def unconditional_median(summary) -> float:
    """Median first-hit time counting unhit trajectories as never hit."""
    t = [rec.events[0].t_sc if rec.events else math.inf for rec in summary.records]
    return float(np.median(t))


def criterion_7(n_traj: int = N_TRAJ, seed: int = 7) -> tuple[bool, str]:
    """Rates x100 (with dt/100) shrink the median reduction time by 100 within 10%."""
    base = build_scenario(default_config("case3"))
    fast = replace(base.with_rates_scaled(100.0, base.dt / 100), t_max=0.2)
    m0 = unconditional_median(run_ensemble(base, n_traj, seed, oracle=False))
    m1 = unconditional_median(run_ensemble(fast, n_traj, seed + 1, oracle=False))
    ratio = m1 / m0 * 100
    return abs(ratio - 1) <= 0.1, f"median {m0:.4f} -> {m1:.6f}, ratio x100 = {ratio:.3f} (tol 10%)"


def criterion_8(n_traj: int = 500, seed: int = 8) -> tuple[bool, str]:
    """Same (seed, stream) gives byte-identical output; execution order does not matter."""
    from .io_cli import summary_line

    sc = build_scenario(default_config("case2"))
    pre = compute_prefix(sc)
    a = summary_line(run_ensemble(sc, n_traj, seed, prefix=pre, oracle=False))
    b = summary_line(run_ensemble(sc, n_traj, seed, prefix=compute_prefix(sc), oracle=False))
    rev = list(range(n_traj))[::-1]
    c = summary_line(run_ensemble(sc, n_traj, seed, prefix=pre, oracle=False, streams=rev))
    d = summary_line(run_ensemble(sc, n_traj, seed, prefix=pre, oracle=False, workers=2))
    same_rec = all(run_trajectory(sc, RngStream(seed, st)) == run_trajectory(sc, RngStream(seed, st), prefix=pre)
                   for st in range(3))
    ok = a == b == c == d and same_rec
    return ok, (f"rerun identical={a == b}; reversed order identical={a == c}; 2 workers identical={a == d}; "
                f"engine vs replay records identical={same_rec}")


def convergence_order(dts=(0.01, 0.005, 0.0025)) -> tuple[float, list[float]]:
    H = [float(compute_prefix(build_scenario(default_config("case1", dt=dt))).H[-1].sum()) for dt in dts]
    return math.log2(abs(H[0] - H[1]) / abs(H[1] - H[2])), H


def criterion_9() -> tuple[bool, str]:
    """Halving dt changes H_n(t_max) at first order."""
    order, H = convergence_order()
    return 0.8 <= order <= 1.2, f"H_1(t_max) = {', '.join(f'{h:.8f}' for h in H)}; order {order:.3f}"


NAMES = {
    1: "spreading baseline",
    2: "trigger law",
    3: "collapse law",
    4: "freeze law",
    5: "localization",
    6: "refinement consistency",
    7: "many-photon limit",
    8: "determinism",
    9: "convergence",
}


def run_criterion(number: int, quick: bool = False, workers: int = 1) -> CriterionResult:
    n = QUICK_TRAJ if quick else N_TRAJ
    fns = {
        1: criterion_1,
        2: lambda: criterion_2(n),
        3: criterion_3,
        4: criterion_4,
        5: lambda: criterion_5(n, workers=workers),
        6: criterion_6,
        7: lambda: criterion_7(n),
        8: criterion_8,
        9: criterion_9,
    }
    return _timed(number, NAMES[number], fns[number])


def run_all(quick: bool = False, workers: int = 1) -> list[CriterionResult]:
    return [run_criterion(k, quick, workers) for k in sorted(NAMES)]
