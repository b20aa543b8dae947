"""Channel, changepoint prior, and scenario constants.

The channel is a DMC with input ``x`` in {0, 1} (innocent / probe) and state
``theta`` in {0, 1} (pre / post change). Each ``(x, theta)`` slice is a joint
PMF over Alice's output ``y`` and Eve's output ``z``. Time is indexed from 1
and ``theta_t = 1{t > Gamma}``: the observation at the changepoint itself is
still pre-change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .probability import (
    AbsoluteContinuityError,
    Pmf,
    chi2_divergence,
    kl_divergence,
    llr_second_moment,
)

MAX_ALPHABET = 16
MARGINAL_TOL = 1e-12


class ChannelAssumptionError(ValueError):
    """A channel that violates one of the modelling assumptions.

    ``assumption`` carries a short machine-readable name of what failed.
    """

    def __init__(self, assumption: str, message: str) -> None:
        super().__init__(f"{assumption}: {message}")
        self.assumption = assumption


@dataclass(frozen=True, eq=False)
class ChannelSpec:
    """Validated DMC with Alice's and Eve's marginals and divergence constants.

    ``joint[x, theta, y, z]`` is ``W(y, z | x, theta)``. ``alice[x][theta]`` is
    the PMF of ``y``, ``eve[x][theta]`` the PMF of ``z``.
    """

    joint: np.ndarray
    alice: tuple[tuple[Pmf, Pmf], tuple[Pmf, Pmf]]
    eve: tuple[tuple[Pmf, Pmf], tuple[Pmf, Pmf]]
    D: float
    V: float
    chi2_pre: float
    chi2_post: float
    # ln(P^1_1(y) / P^1_0(y)) per symbol; finite wherever P^1_1(y) > 0.
    llr_table: np.ndarray = field(repr=False)
    # Cumulative distribution of the flattened (y, z) index per (x, theta).
    joint_cdf: np.ndarray = field(repr=False)

    @property
    def n_y(self) -> int:
        return int(self.joint.shape[2])

    @property
    def n_z(self) -> int:
        return int(self.joint.shape[3])

    def llr(self, y: int) -> float:
        """Unmodulated LLR of Alice's observation."""
        return float(self.llr_table[y])

    def modulated_llr(self, x: int, y: int) -> float:
        """LLR of ``y`` under action ``x``; zero for the innocent action."""
        if x == 0:
            return 0.0
        return float(self.llr_table[y])


def _as_tables(joint_tables) -> np.ndarray:
    arr = np.asarray(joint_tables, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[0] != 2 or arr.shape[1] != 2:
        raise ValueError(
            "joint tables must be indexed [x][theta][y][z] with x, theta in {0, 1}; "
            f"got shape {arr.shape}"
        )
    n_y, n_z = arr.shape[2], arr.shape[3]
    if not (1 <= n_y <= MAX_ALPHABET and 1 <= n_z <= MAX_ALPHABET):
        raise ValueError(f"alphabet sizes must be in [1, {MAX_ALPHABET}], got {n_y}x{n_z}")
    return arr


def build_channel(joint_tables) -> ChannelSpec:
    """Validate four joint tables and derive every channel constant.

    Raises :class:`ChannelAssumptionError` naming the violated assumption:
    ``no free passive sensing``, ``active sensing gain`` (D must be positive
    and finite), ``eve absolute continuity`` or ``eve distinguishability``.
    """
    arr = _as_tables(joint_tables)
    joint = arr.copy()
    pmfs = [[None, None], [None, None]]
    for x in (0, 1):
        for th in (0, 1):
            try:
                flat = Pmf(arr[x, th].reshape(-1))
            except ValueError as exc:
                raise ValueError(f"joint slice (x={x}, theta={th}) is not a PMF: {exc}") from None
            joint[x, th] = flat.mass.reshape(arr.shape[2:])
            pmfs[x][th] = flat
    joint.setflags(write=False)

    alice = tuple(
        tuple(Pmf(joint[x, th].sum(axis=1)) for th in (0, 1)) for x in (0, 1)
    )
    eve = tuple(tuple(Pmf(joint[x, th].sum(axis=0)) for th in (0, 1)) for x in (0, 1))

    if not alice[0][1].allclose(alice[0][0], atol=MARGINAL_TOL):
        raise ChannelAssumptionError(
            "no free passive sensing",
            f"P^0_1 = {alice[0][1].mass.tolist()} differs from P^0_0 = {alice[0][0].mass.tolist()}",
        )
    try:
        D = kl_divergence(alice[1][1], alice[1][0])
        V = llr_second_moment(alice[1][1], alice[1][0])
    except AbsoluteContinuityError as exc:
        raise ChannelAssumptionError(
            "active sensing gain", f"D(P^1_1 || P^1_0) is infinite ({exc})"
        ) from None
    if not D > 0.0 or alice[1][1].allclose(alice[1][0], atol=MARGINAL_TOL):
        raise ChannelAssumptionError(
            "active sensing gain", "D(P^1_1 || P^1_0) = 0, probing carries no information"
        )

    chis = []
    for th in (0, 1):
        try:
            c = chi2_divergence(eve[1][th], eve[0][th])
        except AbsoluteContinuityError as exc:
            raise ChannelAssumptionError(
                "eve absolute continuity", f"Q^1_{th} is not absolutely continuous w.r.t. Q^0_{th} ({exc})"
            ) from None
        if not c > 0.0 or eve[1][th].allclose(eve[0][th], atol=MARGINAL_TOL):
            raise ChannelAssumptionError(
                "eve distinguishability", f"Q^1_{th} = Q^0_{th}, chi-square is zero"
            )
        chis.append(c)

    p11, p10 = alice[1][1].mass, alice[1][0].mass
    # p11 > 0 implies p10 > 0 (D is finite); symbols impossible under both get 0.
    with np.errstate(divide="ignore", invalid="ignore"):
        llr = np.log(p11) - np.log(p10)
    llr[(p11 == 0.0) & (p10 == 0.0)] = 0.0
    llr.setflags(write=False)

    cdf = np.cumsum(joint.reshape(2, 2, -1), axis=-1)
    cdf.setflags(write=False)

    return ChannelSpec(
        joint=joint,
        alice=alice,
        eve=eve,
        D=D,
        V=V,
        chi2_pre=chis[0],
        chi2_post=chis[1],
        llr_table=llr,
        joint_cdf=cdf,
    )


def product_channel(alice, eve) -> ChannelSpec:
    """Channel whose ``(y, z)`` outputs are independent given ``(x, theta)``.

    ``alice[x][theta]`` and ``eve[x][theta]`` are probability vectors.
    """
    tables = [
        [np.outer(np.asarray(alice[x][th], float), np.asarray(eve[x][th], float)) for th in (0, 1)]
        for x in (0, 1)
    ]
    return build_channel(tables)


def reference_channel() -> ChannelSpec:
    """The binary example channel used throughout the experiments.

    Alice: P^1_0 = Ber(0.2), P^1_1 = Ber(0.8), P^0_0 = P^0_1 = Ber(0.5).
    Eve: Q^1_0 = Ber(0.6), Q^0_0 = Ber(0.4), Q^1_1 = Ber(0.7), Q^0_1 = Ber(0.3).
    """

    def ber(p):
        return [1.0 - p, p]

    alice = [[ber(0.5), ber(0.5)], [ber(0.2), ber(0.8)]]
    eve = [[ber(0.4), ber(0.3)], [ber(0.6), ber(0.7)]]
    return product_channel(alice, eve)


@dataclass(frozen=True)
class Prior:
    """Geometric changepoint prior ``P{Gamma = k} = rho (1 - rho)^(k-1)``."""

    rho: float

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in ]0, 1[, got {self.rho}")

    @property
    def d(self) -> float:
        """Exponent of the prior tail, ``|ln(1 - rho)|``."""
        return -math.log1p(-self.rho)

    @property
    def c_rho(self) -> float:
        return math.log((1.0 - self.rho) / self.rho)

    @property
    def mean(self) -> float:
        return 1.0 / self.rho

    def pmf(self, k: int) -> float:
        if k < 1:
            return 0.0
        return self.rho * (1.0 - self.rho) ** (k - 1)

    def tail(self, n: int) -> float:
        """``P{Gamma > n} = (1 - rho)^n``."""
        return math.exp(-self.d * n)


@dataclass(frozen=True)
class Scenario:
    """Channel, prior, covertness budget ``delta`` and PFA target.

    The PFA target is stored as ``abs_ln_alpha = |ln alpha|`` so that bounds
    stay computable far beyond the range where ``alpha`` itself underflows.
    """

    channel: ChannelSpec
    prior: Prior
    delta: float
    abs_ln_alpha: float

    def __post_init__(self) -> None:
        if not self.delta >= 0.0:
            raise ValueError(f"delta must be non-negative, got {self.delta}")
        if not self.abs_ln_alpha > math.log(2.0):
            raise ValueError(
                f"alpha must lie in ]0, 1/2[, got |ln alpha| = {self.abs_ln_alpha}"
            )

    @classmethod
    def at(cls, channel: ChannelSpec, rho: float, delta: float, abs_ln_alpha: float) -> "Scenario":
        return cls(channel, Prior(rho), delta, float(abs_ln_alpha))

    @classmethod
    def from_alpha(cls, channel: ChannelSpec, prior: Prior, delta: float, alpha: float) -> "Scenario":
        if not 0.0 < alpha < 0.5:
            raise ValueError(f"alpha must lie in ]0, 1/2[, got {alpha}")
        return cls(channel, prior, delta, -math.log(alpha))

    def with_abs_ln_alpha(self, abs_ln_alpha: float) -> "Scenario":
        return Scenario(self.channel, self.prior, self.delta, float(abs_ln_alpha))

    def with_delta(self, delta: float) -> "Scenario":
        return Scenario(self.channel, self.prior, float(delta), self.abs_ln_alpha)

    @property
    def alpha(self) -> float:
        return math.exp(-self.abs_ln_alpha)

    @property
    def n_alpha(self) -> int:
        """Stopping time of the innocent baseline, ``ceil(|ln alpha| / d)``."""
        return max(1, math.ceil(self.abs_ln_alpha / self.prior.d))

    @property
    def b_alpha(self) -> float:
        """Log posterior-odds threshold ``ln((1 - alpha) / alpha)``."""
        return self.abs_ln_alpha + math.log1p(-self.alpha)


def reference_scenario(abs_ln_alpha: float) -> Scenario:
    """Reference channel with rho = 1/20 and delta = 1/24."""
    return Scenario.at(reference_channel(), 1.0 / 20.0, 1.0 / 24.0, abs_ln_alpha)


def sample_changepoint(prior: Prior, rng: np.random.Generator) -> int:
    """Draw ``Gamma`` from the geometric prior on {1, 2, ...}."""
    return int(rng.geometric(prior.rho))


def observation_index(channel: ChannelSpec, x, theta, u):
    """Map uniforms ``u`` to flattened ``(y, z)`` indices of slice ``(x, theta)``.

    Works elementwise on arrays. The index is the number of CDF entries at or
    below ``u``, excluding the final entry.
    """
    cdf = channel.joint_cdf[x, theta]
    u = np.asarray(u)
    idx = np.sum(cdf[..., :-1] <= u[..., None], axis=-1)
    return idx


def sample_observation(channel: ChannelSpec, x: int, theta: int, rng: np.random.Generator):
    """Draw ``(y, z)`` from ``W(., . | x, theta)`` using one uniform."""
    idx = int(observation_index(channel, x, theta, rng.random()))
    return divmod(idx, channel.n_z)
