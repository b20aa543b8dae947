"""Causal sensing policies and the Shiryaev posterior-odds statistic.

Posterior odds are tracked in the log domain. After ``n`` observations the
odds are ``Lambda_n = P{Gamma <= n | data} / P{Gamma > n | data}``, which obey

    Lambda_{n+1} = exp(L_{n+1}) Lambda_n / (1 - rho) + rho / (1 - rho),

with ``Lambda_0 = 0`` and ``L = x * llr(y)``. In logs, with ``d = -ln(1 - rho)``
and ``C_rho = ln((1 - rho) / rho)``::

    s_{n+1} = logaddexp(s_n + L_{n+1} + d, -C_rho).

The rule stops at the first ``n`` with ``s_n >= ln((1 - alpha) / alpha)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np

from .bounds import ecb_coefficient
from .model import ChannelSpec, Prior, Scenario

if TYPE_CHECKING:
    from .dp import BeliefGridPolicy


@dataclass(frozen=True)
class Innocent:
    """Never probe; stop at the fixed time ``stop_at``."""

    stop_at: int

    def __post_init__(self) -> None:
        if self.stop_at < 1:
            raise ValueError(f"stop_at must be >= 1, got {self.stop_at}")


@dataclass(frozen=True)
class ConstantBetaShiryaev:
    """Probe with probability ``beta`` every step until the Shiryaev rule fires.

    ``beta = 0`` is accepted: the rule then stops at exactly ``N_alpha``.
    """

    beta: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")


@dataclass(frozen=True)
class DpPolicy:
    """Sensing rate and stopping read off a solved belief-grid table."""

    table: "BeliefGridPolicy"


Policy = Union[Innocent, ConstantBetaShiryaev, DpPolicy]


@dataclass(frozen=True)
class ShiryaevState:
    """Log posterior odds after ``t`` observations.

    ``empty`` marks ``t = 0`` where the odds are exactly zero; ``log_odds`` is
    meaningless there.
    """

    log_odds: float = 0.0
    t: int = 0
    stopped: bool = False
    empty: bool = True

    @property
    def belief(self) -> float:
        """Posterior probability that the change has already happened."""
        if self.empty:
            return 0.0
        return 1.0 / (1.0 + math.exp(-self.log_odds))


def initial_state() -> ShiryaevState:
    return ShiryaevState()


def next_log_odds(log_odds, llr, prior: Prior):
    """One step of the log-odds recursion; vectorizes over numpy arrays."""
    return np.logaddexp(log_odds + llr + prior.d, -prior.c_rho)


def shiryaev_update(
    state: ShiryaevState, x: int, y: int, prior: Prior, channel: ChannelSpec
) -> ShiryaevState:
    if state.stopped:
        raise ValueError("cannot update a stopped Shiryaev state")
    if x not in (0, 1):
        raise ValueError(f"action must be 0 or 1, got {x}")
    if not 0 <= y < channel.n_y:
        raise ValueError(f"observation symbol {y} outside [0, {channel.n_y})")
    if state.empty:
        # Lambda_1 = rho / (1 - rho) whatever was observed.
        s = -prior.c_rho
    else:
        s = float(next_log_odds(state.log_odds, channel.modulated_llr(x, y), prior))
    return ShiryaevState(log_odds=s, t=state.t + 1, stopped=False, empty=False)


def shiryaev_should_stop(state: ShiryaevState, b_alpha: float) -> bool:
    if state.empty:
        return False
    return state.log_odds >= b_alpha


def sum_form_log_odds(llrs, prior: Prior) -> float:
    """``ln Lambda_n`` evaluated from the mixture sum over changepoints.

    ``Lambda_n = T_n^{-1} sum_{m=1}^n pi_m exp(sum_{t=m+1}^n L_t)``, computed
    with a single log-sum-exp. Independent of the one-step recursion.
    """
    L = np.asarray(llrs, dtype=np.float64)
    n = L.size
    if n == 0:
        return -math.inf
    # suffix[m] = sum_{t=m+1}^{n} L_t for m = 1..n (1-based m)
    suffix = np.concatenate([np.cumsum(L[::-1])[::-1][1:], [0.0]])
    m = np.arange(1, n + 1)
    log_pi = math.log(prior.rho) + (m - 1) * math.log1p(-prior.rho)
    log_tail = n * math.log1p(-prior.rho)
    terms = log_pi + suffix - log_tail
    top = np.max(terms)
    if not np.isfinite(top):
        return float(top)
    return float(top + math.log(math.fsum(np.exp(terms - top))))


def proposed_sensing_rate(scenario: Scenario) -> float:
    """Largest constant rate whose relaxed ECB bound meets the budget, capped at 1."""
    coef = ecb_coefficient(scenario)
    return min(1.0, math.sqrt(scenario.delta / coef))


def sensing_rate(policy: Policy, state: ShiryaevState) -> float:
    """Probability of probing at the next step given the current state."""
    if state.stopped:
        return 0.0
    if isinstance(policy, Innocent):
        return 0.0
    if isinstance(policy, ConstantBetaShiryaev):
        return policy.beta
    if isinstance(policy, DpPolicy):
        return float(policy.table.beta_for(state.log_odds, state.empty))
    raise TypeError(f"unknown policy {policy!r}")


def act(policy: Policy, state: ShiryaevState, rng: np.random.Generator) -> int:
    """Draw the next action. Always consumes exactly one uniform from ``rng``."""
    u = rng.random()
    return int(u < sensing_rate(policy, state))


def should_stop(policy: Policy, state: ShiryaevState, scenario: Scenario) -> bool:
    """Stopping decision of ``policy`` after ``state.t`` observations."""
    if state.empty:
        return False
    if isinstance(policy, Innocent):
        return state.t >= policy.stop_at
    if isinstance(policy, ConstantBetaShiryaev):
        return shiryaev_should_stop(state, scenario.b_alpha)
    if isinstance(policy, DpPolicy):
        return bool(policy.table.stop_for(state.log_odds))
    raise TypeError(f"unknown policy {policy!r}")
