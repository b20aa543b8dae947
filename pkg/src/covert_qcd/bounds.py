"""Closed-form delay bounds, asymptotes and the sensing-rate budget.

Every function takes a :class:`~covert_qcd.model.Scenario`, whose primary PFA
parameter is ``|ln alpha|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import ChannelSpec, Prior, Scenario


class BoundVacuousError(ValueError):
    """The non-asymptotic converse gives nothing: ``|ln alpha| <= d / rho``."""


def _check_relaxed_range(scenario: Scenario) -> None:
    upper = min(0.5, 1.0 - scenario.prior.rho)
    if not scenario.abs_ln_alpha > -math.log(upper):
        raise ValueError(
            f"alpha = {scenario.alpha:.6g} is outside ]0, min(1/2, 1 - rho)[ = ]0, {upper:.6g}["
        )


def _check_beta(beta: float) -> None:
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")


def threshold_numerator(scenario: Scenario) -> float:
    """``|ln alpha| - |ln(1 - alpha)| + C_rho``, i.e. ``b_alpha + C_rho``."""
    return scenario.b_alpha + scenario.prior.c_rho


def add_upper(scenario: Scenario, beta: float) -> float:
    """Renewal-theoretic ADD upper bound for the constant-rate Shiryaev rule."""
    _check_beta(beta)
    ch, d = scenario.channel, scenario.prior.d
    drift = beta * ch.D + d
    second = beta * ch.V + 2.0 * d * beta * ch.D + d * d
    return threshold_numerator(scenario) / drift + second / (drift * drift)


def m_over(channel: ChannelSpec, prior: Prior) -> float:
    """Uniform bound on the overshoot term, ``(V + 2dD + d^2) / d^2``."""
    d = prior.d
    return (channel.V + 2.0 * d * channel.D + d * d) / (d * d)


def add_relaxed(scenario: Scenario) -> float:
    """ADD bound valid for every sensing rate in [0, 1]."""
    _check_relaxed_range(scenario)
    return threshold_numerator(scenario) / scenario.prior.d + m_over(scenario.channel, scenario.prior)


def ecb_coefficient(scenario: Scenario) -> float:
    """``chi2_pre / rho + chi2_post * ADD_relaxed``; the ECB bound is beta^2 times this."""
    ch = scenario.channel
    return ch.chi2_pre / scenario.prior.rho + ch.chi2_post * add_relaxed(scenario)


def ecb_upper(scenario: Scenario, beta: float) -> float:
    _check_beta(beta)
    return beta * beta * ecb_coefficient(scenario)


def k_const(scenario: Scenario) -> float:
    """``K = D sqrt(delta / chi2_post)``."""
    ch = scenario.channel
    return ch.D * math.sqrt(scenario.delta / ch.chi2_post)


def second_order_coefficient(scenario: Scenario) -> float:
    """Coefficient of ``sqrt|ln alpha|`` in the converse: ``D sqrt(delta) / (d^1.5 sqrt(chi2_post))``."""
    return k_const(scenario) / scenario.prior.d ** 1.5


def first_order(scenario: Scenario) -> float:
    """``|ln alpha| / d``, the delay of never probing to first order."""
    return scenario.abs_ln_alpha / scenario.prior.d


def converse_lower(scenario: Scenario) -> float:
    """Two leading terms of the converse; the O(1) remainder is not included."""
    L = scenario.abs_ln_alpha
    return L / scenario.prior.d - second_order_coefficient(scenario) * math.sqrt(L)


def second_order_achievable(scenario: Scenario) -> float:
    """Achievability asymptote; shares both leading terms with the converse."""
    L = scenario.abs_ln_alpha
    d = scenario.prior.d
    ch = scenario.channel
    coef = ch.D * math.sqrt(scenario.delta) / (d ** 1.5 * math.sqrt(ch.chi2_post))
    return L / d - coef * math.sqrt(L)


def exact_quadratic_root_lower(scenario: Scenario) -> float:
    """Non-asymptotic converse: ``ADD >= r_+^2``.

    ``r_+`` is the positive root of ``d x^2 + K x - (|ln alpha| - d/rho)``.
    """
    d = scenario.prior.d
    c1 = d / scenario.prior.rho
    L = scenario.abs_ln_alpha
    if L <= c1:
        raise BoundVacuousError(f"|ln alpha| = {L:.6g} does not exceed d/rho = {c1:.6g}")
    K = k_const(scenario)
    # Rationalized form of (-K + sqrt(K^2 + 4 d c)) / (2 d); avoids cancellation.
    c = L - c1
    root = 2.0 * c / (K + math.sqrt(K * K + 4.0 * d * c))
    return root * root


def sqrt_taylor_lower(x: float, r: float) -> float:
    """Quadratic lower bound ``1 + x/2 - A_r x^2 <= sqrt(1 + x)`` on ``|x| <= r``."""
    if not 0.0 < r < 1.0:
        raise ValueError(f"r must lie in ]0, 1[, got {r}")
    if abs(x) > r:
        raise ValueError(f"|x| = {abs(x)} exceeds r = {r}")
    a_r = 0.125 * (1.0 - r) ** -1.5
    return 1.0 + 0.5 * x - a_r * x * x


@dataclass(frozen=True)
class BoundsReport:
    add_upper: float
    add_relaxed: float
    m_over: float
    ecb_upper: float
    beta_star: float
    converse_lower_second_order: float
    first_order: float
    second_order_achievable: float
    k_const: float


def bounds_report(scenario: Scenario) -> BoundsReport:
    from .policy import proposed_sensing_rate

    beta = proposed_sensing_rate(scenario)
    return BoundsReport(
        add_upper=add_upper(scenario, beta),
        add_relaxed=add_relaxed(scenario),
        m_over=m_over(scenario.channel, scenario.prior),
        ecb_upper=ecb_upper(scenario, beta),
        beta_star=beta,
        converse_lower_second_order=converse_lower(scenario),
        first_order=first_order(scenario),
        second_order_achievable=second_order_achievable(scenario),
        k_const=k_const(scenario),
    )
