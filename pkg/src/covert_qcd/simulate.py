"""Monte-Carlo estimation of ADD, PFA and ECB.

Replication ``i`` of a run seeded with ``seed`` draws from its own stream
``PCG64(SeedSequence(seed, spawn_key=(i,)))``, so results do not depend on
chunking or thread scheduling. Each stream yields the changepoint first (unless
it is fixed), then uniforms in blocks of ``(UNIFORM_BLOCK, 2)``: column 0 drives
the action, column 1 the observation.

Per step ``t``: draw the action, draw ``(y, z)``, accrue
``chi2_{theta_t} beta_t^2``, update the statistic, then stop if the rule fires.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import Scenario, observation_index
from .policy import (
    ConstantBetaShiryaev,
    DpPolicy,
    Innocent,
    Policy,
    ShiryaevState,
    initial_state,
    sensing_rate,
    should_stop,
    shiryaev_update,
    next_log_odds,
)

T_MAX = 10**6
UNIFORM_BLOCK = 256
CHUNK = 2048


class RunawayRunError(RuntimeError):
    """A run exceeded the step cap without stopping."""


@dataclass(frozen=True)
class PolicyTrace:
    gamma: int
    tau: int
    delay: int
    false_alarm: bool
    ecb_cost: float
    actions_taken: int


@dataclass(frozen=True)
class McSummary:
    """Sample means with standard errors ``std(ddof=1) / sqrt(n)``.

    Runs that hit the step cap are counted in ``n_capped`` and left out of the
    means.
    """

    n_runs: int
    add_mean: float
    add_stderr: float
    pfa_mean: float
    pfa_stderr: float
    ecb_mean: float
    ecb_stderr: float
    tau_mean: float
    pre_change_mean: float
    seed: int
    n_capped: int = 0
    wall_time_s: float = field(default=0.0, compare=False)


def replication_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def default_workers() -> int:
    env = os.environ.get("COVERT_QCD_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"COVERT_QCD_THREADS must be >= 1, got {env!r}")
        return n
    return min(4, os.cpu_count() or 1)


class _Uniforms:
    def __init__(self, rng: np.random.Generator) -> None:
        self._rng = rng
        self._buf = np.empty((0, 2))
        self._pos = 0

    def next_pair(self) -> tuple[float, float]:
        if self._pos == self._buf.shape[0]:
            self._buf = self._rng.random((UNIFORM_BLOCK, 2))
            self._pos = 0
        row = self._buf[self._pos]
        self._pos += 1
        return float(row[0]), float(row[1])


def run_one(
    scenario: Scenario,
    policy: Policy,
    rng: np.random.Generator,
    changepoint: int | None = None,
    t_max: int = T_MAX,
) -> PolicyTrace:
    """Simulate one run step by step. Reference implementation for :func:`estimate`."""
    ch = scenario.channel
    gamma = int(rng.geometric(scenario.prior.rho)) if changepoint is None else int(changepoint)
    if gamma < 1:
        raise ValueError(f"changepoint must be >= 1, got {gamma}")
    chis = (ch.chi2_pre, ch.chi2_post)
    uniforms = _Uniforms(rng)
    state: ShiryaevState = initial_state()
    cost = 0.0
    probes = 0
    while True:
        if state.t >= t_max:
            raise RunawayRunError(f"no stop within {t_max} steps (gamma = {gamma})")
        t = state.t + 1
        theta = int(t > gamma)
        beta = sensing_rate(policy, state)
        u_act, u_obs = uniforms.next_pair()
        x = int(u_act < beta)
        y, _z = divmod(int(observation_index(ch, x, theta, u_obs)), ch.n_z)
        cost += chis[theta] * beta * beta
        probes += x
        state = shiryaev_update(state, x, y, scenario.prior, ch)
        if should_stop(policy, state, scenario):
            break
    tau = state.t
    return PolicyTrace(
        gamma=gamma,
        tau=tau,
        delay=max(tau - gamma, 0),
        false_alarm=tau < gamma,
        ecb_cost=cost,
        actions_taken=probes,
    )


def _rates(policy: Policy, log_odds: np.ndarray, empty: bool) -> np.ndarray:
    if isinstance(policy, Innocent):
        return np.zeros_like(log_odds)
    if isinstance(policy, ConstantBetaShiryaev):
        return np.full_like(log_odds, policy.beta)
    if isinstance(policy, DpPolicy):
        return np.asarray(policy.table.beta_for(log_odds, empty), dtype=np.float64)
    raise TypeError(f"unknown policy {policy!r}")


def _stops(policy: Policy, log_odds: np.ndarray, t: int, scenario: Scenario) -> np.ndarray:
    if isinstance(policy, Innocent):
        return np.full(log_odds.shape, t >= policy.stop_at)
    if isinstance(policy, ConstantBetaShiryaev):
        return log_odds >= scenario.b_alpha
    if isinstance(policy, DpPolicy):
        return np.asarray(policy.table.stop_for(log_odds), dtype=bool)
    raise TypeError(f"unknown policy {policy!r}")


def _run_chunk(scenario, policy, seed, start, stop, changepoint, t_max):
    """Vectorized simulation of replications ``start..stop-1``."""
    ch, prior = scenario.channel, scenario.prior
    n = stop - start
    rngs = [replication_rng(seed, i) for i in range(start, stop)]
    if changepoint is None:
        gamma = np.array([r.geometric(prior.rho) for r in rngs], dtype=np.int64)
    else:
        gamma = np.full(n, int(changepoint), dtype=np.int64)
    chis = np.array([ch.chi2_pre, ch.chi2_post])
    cdf = ch.joint_cdf[..., :-1]
    llr = ch.llr_table

    tau = np.zeros(n, dtype=np.int64)
    cost = np.zeros(n)
    probes = np.zeros(n, dtype=np.int64)
    capped = np.zeros(n, dtype=bool)

    active = np.arange(n)
    s = np.zeros(n)
    buf = np.empty((n, UNIFORM_BLOCK, 2))
    t = 0
    while active.size:
        if t >= t_max:
            capped[active] = True
            tau[active] = t
            break
        if t % UNIFORM_BLOCK == 0:
            for j in active:
                buf[j] = rngs[j].random((UNIFORM_BLOCK, 2))
        col = t % UNIFORM_BLOCK
        t += 1
        u = buf[active, col]
        theta = (t > gamma[active]).astype(np.int64)
        s_act = s[active]
        beta = _rates(policy, s_act, t == 1)
        x = (u[:, 0] < beta).astype(np.int64)
        idx = np.sum(cdf[x, theta] <= u[:, 1:2], axis=-1)
        y = idx // ch.n_z
        cost[active] += chis[theta] * beta * beta
        probes[active] += x
        if t == 1:
            s_new = np.full(active.size, -prior.c_rho)
        else:
            step_llr = np.where(x == 1, llr[y], 0.0)
            s_new = next_log_odds(s_act, step_llr, prior)
        s[active] = s_new
        done = _stops(policy, s_new, t, scenario)
        if np.any(done):
            tau[active[done]] = t
            active = active[~done]
    return gamma, tau, cost, probes, capped


def _mean_stderr(v: np.ndarray) -> tuple[float, float]:
    if v.size == 0:
        return math.nan, math.nan
    mean = float(np.mean(v))
    if v.size < 2:
        return mean, math.nan
    return mean, float(np.std(v, ddof=1) / math.sqrt(v.size))


def simulate_arrays(
    scenario: Scenario,
    policy: Policy,
    n_runs: int,
    seed: int,
    changepoint: int | None = None,
    t_max: int = T_MAX,
    workers: int | None = None,
):
    """Per-replication ``(gamma, tau, cost, probes, capped)`` arrays in replication order."""
    if n_runs < 1:
        raise ValueError(f"n_runs must be >= 1, got {n_runs}")
    workers = default_workers() if workers is None else workers
    bounds = [(a, min(a + CHUNK, n_runs)) for a in range(0, n_runs, CHUNK)]

    def job(b):
        return _run_chunk(scenario, policy, seed, b[0], b[1], changepoint, t_max)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(5))


def estimate(
    scenario: Scenario,
    policy: Policy,
    n_runs: int,
    seed: int,
    changepoint: int | None = None,
    t_max: int = T_MAX,
    workers: int | None = None,
) -> McSummary:
    """Aggregate ``n_runs`` independent replications into an :class:`McSummary`."""
    t0 = time.perf_counter()
    gamma, tau, cost, _probes, capped = simulate_arrays(
        scenario, policy, n_runs, seed, changepoint, t_max, workers
    )
    ok = ~capped
    g, tt, c = gamma[ok], tau[ok], cost[ok]
    add = _mean_stderr(np.maximum(tt - g, 0).astype(np.float64))
    pfa = _mean_stderr((tt < g).astype(np.float64))
    ecb = _mean_stderr(c)
    return McSummary(
        n_runs=n_runs,
        add_mean=add[0],
        add_stderr=add[1],
        pfa_mean=pfa[0],
        pfa_stderr=pfa[1],
        ecb_mean=ecb[0],
        ecb_stderr=ecb[1],
        tau_mean=float(np.mean(tt)) if tt.size else math.nan,
        pre_change_mean=float(np.mean(np.minimum(tt, g))) if tt.size else math.nan,
        seed=seed,
        n_capped=int(capped.sum()),
        wall_time_s=time.perf_counter() - t0,
    )


def innocent_add(scenario: Scenario, stop_at: int | None = None) -> float:
    """Exact ``E[(N - Gamma)^+]`` for the innocent rule stopping at ``N``."""
    n = scenario.n_alpha if stop_at is None else stop_at
    rho = scenario.prior.rho
    return n - (1.0 - (1.0 - rho) ** n) / rho


def innocent_pfa(scenario: Scenario, stop_at: int | None = None) -> float:
    """``P{Gamma > N} = (1 - rho)^N``."""
    n = scenario.n_alpha if stop_at is None else stop_at
    return scenario.prior.tail(n)
