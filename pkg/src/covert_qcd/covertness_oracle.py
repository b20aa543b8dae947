"""Exact small-horizon check of the covertness surrogate.

Eve's output sequence ``z^N`` is enumerated under the active policy and under
the innocent policy, and the true relative entropy between the two laws is
compared against the truncated expected covertness budget

    ECB_N = E[ sum_{i <= min(tau, N)} chi2_{theta_i} beta_i^2 ].

The changepoint is truncated at ``N``: every ``Gamma >= N`` leaves all ``N``
observations pre-change, so those values are lumped into one class with weight
``(1 - rho)^(N - 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Scenario
from .policy import ConstantBetaShiryaev, Innocent, Policy, next_log_odds

MAX_HORIZON = 8
MAX_PATHS = 1 << 24


class InfeasibleEnumerationError(ValueError):
    """The requested horizon would enumerate too many paths."""


@dataclass(frozen=True)
class TruncatedDistributions:
    """Eve's laws over ``Z^N`` and the quantities compared on them.

    ``per_k_*`` and ``weights`` are indexed by changepoint class: entry ``j``
    is ``Gamma = j + 1`` for ``j < N - 1`` and the last entry is ``Gamma >= N``.
    """

    horizon: int
    p_active: np.ndarray
    p_innocent: np.ndarray
    true_kl: float
    ecb_truncated: float
    weights: np.ndarray
    per_k_kl: np.ndarray
    per_k_ecb: np.ndarray

    @property
    def margin(self) -> float:
        return self.ecb_truncated - self.true_kl

    @property
    def mixture_kl_bound(self) -> float:
        """``sum_k pi_k KL_k``, the joint-convexity upper bound on ``true_kl``."""
        return math.fsum(self.weights * self.per_k_kl)

    @property
    def pinsker_complement(self) -> float:
        """``1 - sqrt(KL / 2)``; informational only."""
        return 1.0 - math.sqrt(self.true_kl / 2.0)


def changepoint_classes(scenario: Scenario, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Changepoint values ``1..N-1`` plus the lumped class ``N`` and their weights."""
    prior = scenario.prior
    ks = np.arange(1, horizon + 1)
    w = np.array([prior.pmf(int(k)) for k in ks[:-1]] + [prior.tail(horizon - 1)])
    return ks, w


def _beta_of(policy: Policy) -> float:
    if isinstance(policy, Innocent):
        return 0.0
    if isinstance(policy, ConstantBetaShiryaev):
        return policy.beta
    raise TypeError(f"the oracle supports Innocent and ConstantBetaShiryaev, got {policy!r}")


def _check_feasible(scenario: Scenario, horizon: int) -> None:
    if not 1 <= horizon <= MAX_HORIZON:
        raise InfeasibleEnumerationError(f"horizon must lie in [1, {MAX_HORIZON}], got {horizon}")
    ch = scenario.channel
    # x = 0 branches merge over y (the policy ignores y when x = 0).
    branching = ch.n_z + ch.n_y * ch.n_z
    if branching ** horizon > MAX_PATHS:
        raise InfeasibleEnumerationError(
            f"{branching}^{horizon} paths exceed the enumeration cap {MAX_PATHS}"
        )


def _conditional_law(scenario: Scenario, policy: Policy, horizon: int, k: int):
    """Law of ``Z^N`` and the expected covert cost given ``Gamma = k``."""
    ch, prior = scenario.channel, scenario.prior
    beta = _beta_of(policy)
    b_alpha = scenario.b_alpha
    shiryaev = isinstance(policy, ConstantBetaShiryaev)
    n_y, n_z = ch.n_y, ch.n_z
    chis = (ch.chi2_pre, ch.chi2_post)
    # Joint of (y, z) per (x, theta) and Eve's marginal for the merged x = 0 branch.
    w1 = ch.joint[1]
    q0 = np.array([ch.eve[0][th].mass for th in (0, 1)])

    prob = np.ones(1)
    code = np.zeros(1, dtype=np.int64)
    log_odds = np.zeros(1)
    stopped = np.zeros(1, dtype=bool)
    cost_terms = []
    for t in range(1, horizon + 1):
        theta = int(t > k)
        b_t = np.where(stopped, 0.0, beta)
        cost_terms.append(chis[theta] * float(np.sum(prob * b_t * b_t)))
        if t == 1:
            s_new_0 = np.full_like(log_odds, -prior.c_rho)
        else:
            s_new_0 = next_log_odds(log_odds, 0.0, prior)

        # Innocent branch: z ~ Q^0_theta, statistic moves by the prior drift only.
        p0 = (prob * (1.0 - b_t))[:, None] * q0[theta][None, :]
        c0 = code[:, None] * n_z + np.arange(n_z)[None, :]
        s0 = np.broadcast_to(s_new_0[:, None], p0.shape)
        st0 = np.broadcast_to(stopped[:, None], p0.shape)

        # Probe branch: (y, z) ~ W(., . | 1, theta).
        p1 = (prob * b_t)[:, None, None] * w1[theta][None, :, :]
        c1 = np.broadcast_to(code[:, None, None] * n_z + np.arange(n_z)[None, None, :], p1.shape)
        if t == 1:
            s1 = np.full(p1.shape, -prior.c_rho)
        else:
            llr = np.where(p1 > 0.0, ch.llr_table[None, :, None], 0.0)
            s1 = next_log_odds(log_odds[:, None, None], llr, prior)
            s1 = np.broadcast_to(s1, p1.shape)
        st1 = np.broadcast_to(stopped[:, None, None], p1.shape)

        prob = np.concatenate([p0.ravel(), p1.ravel()])
        code = np.concatenate([c0.ravel(), c1.ravel()])
        was_stopped = np.concatenate([st0.ravel(), st1.ravel()])
        log_odds = np.concatenate([s0.ravel(), s1.ravel()])
        keep = prob > 0.0
        prob, code, was_stopped, log_odds = prob[keep], code[keep], was_stopped[keep], log_odds[keep]
        if shiryaev:
            stopped = was_stopped | (log_odds >= b_alpha)
        else:
            stopped = was_stopped

    law = np.bincount(code, weights=prob, minlength=n_z ** horizon)
    return law, math.fsum(cost_terms)


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    live = p > 0.0
    if np.any(live & (q <= 0.0)):
        return math.inf
    return max(math.fsum(p[live] * np.log(p[live] / q[live])), 0.0)


def innocent_conditional_law(scenario: Scenario, horizon: int, k: int) -> np.ndarray:
    """Product law ``prod_t Q^0_{theta_t(k)}`` over ``Z^N``, flattened with ``z_1`` most significant."""
    ch = scenario.channel
    law = np.ones(1)
    for t in range(1, horizon + 1):
        law = np.outer(law, ch.eve[0][int(t > k)].mass).ravel()
    return law


def enumerate_eve_distribution(scenario: Scenario, policy: Policy, horizon: int) -> np.ndarray:
    """Exact law of Eve's ``Z^N`` under ``policy``, mixed over the changepoint."""
    _check_feasible(scenario, horizon)
    ks, w = changepoint_classes(scenario, horizon)
    laws = [_conditional_law(scenario, policy, horizon, int(k))[0] for k in ks]
    return np.einsum("k,kz->z", w, np.array(laws))


def truncated_kl_vs_ecb(scenario: Scenario, policy: Policy, horizon: int) -> TruncatedDistributions:
    """True KL between Eve's active and innocent laws against the truncated ECB."""
    _check_feasible(scenario, horizon)
    ks, w = changepoint_classes(scenario, horizon)
    active, inno, kls, costs = [], [], [], []
    for k in ks:
        law, cost = _conditional_law(scenario, policy, horizon, int(k))
        ref = innocent_conditional_law(scenario, horizon, int(k))
        active.append(law)
        inno.append(ref)
        kls.append(_kl(law, ref))
        costs.append(cost)
    p_active = np.einsum("k,kz->z", w, np.array(active))
    p_innocent = np.einsum("k,kz->z", w, np.array(inno))
    per_k_ecb = np.array(costs)
    return TruncatedDistributions(
        horizon=horizon,
        p_active=p_active,
        p_innocent=p_innocent,
        true_kl=_kl(p_active, p_innocent),
        ecb_truncated=math.fsum(w * per_k_ecb),
        weights=w,
        per_k_kl=np.array(kls),
        per_k_ecb=per_k_ecb,
    )
