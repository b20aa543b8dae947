"""Finite probability mass functions and the divergence functionals built on them.

All logarithms are natural. Terms with ``p_i = 0`` contribute nothing, whatever
the value of ``q_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORMALIZATION_TOL = 1e-12


class SupportMismatchError(ValueError):
    """The two PMFs live on alphabets of different sizes."""


class AbsoluteContinuityError(ValueError):
    """``p`` puts mass on a symbol where ``q`` has none."""


class Pmf:
    """An immutable probability mass function over ``{0, ..., n-1}``.

    The mass vector is checked to sum to one within ``1e-12`` and then
    renormalized exactly, so long chains of products stay stable.
    """

    __slots__ = ("_mass",)

    def __init__(self, mass) -> None:
        arr = np.array(mass, dtype=np.float64).reshape(-1)
        if arr.size < 1:
            raise ValueError("a PMF needs at least one symbol")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
            raise ValueError(f"PMF entries must be finite and non-negative, got {arr}")
        total = float(arr.sum())
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"PMF entries sum to {total!r}, not 1")
        arr = arr / total
        arr.setflags(write=False)
        self._mass = arr

    @classmethod
    def bernoulli(cls, p: float) -> "Pmf":
        """Ber(p) as the two-point PMF ``[1 - p, p]``."""
        return cls([1.0 - p, p])

    @property
    def mass(self) -> np.ndarray:
        return self._mass

    @property
    def support_size(self) -> int:
        return int(self._mass.size)

    def __len__(self) -> int:
        return self.support_size

    def __getitem__(self, i):
        return self._mass[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pmf):
            return NotImplemented
        return self.support_size == other.support_size and bool(
            np.all(self._mass == other._mass)
        )

    def __hash__(self) -> int:
        return hash(self._mass.tobytes())

    def allclose(self, other: "Pmf", atol: float = 1e-12) -> bool:
        return self.support_size == other.support_size and bool(
            np.allclose(self._mass, other._mass, rtol=0.0, atol=atol)
        )

    def __repr__(self) -> str:
        return f"Pmf({self._mass.tolist()})"


@dataclass(frozen=True)
class DivergencePair:
    """KL divergence, second moment of the log-likelihood ratio, and chi-square."""

    kl: float
    second_moment: float
    chi2: float


def _aligned(p: Pmf, q: Pmf) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if p.support_size != q.support_size:
        raise SupportMismatchError(
            f"support sizes differ: {p.support_size} vs {q.support_size}"
        )
    pm, qm = p.mass, q.mass
    live = pm > 0.0
    bad = live & (qm <= 0.0)
    if np.any(bad):
        raise AbsoluteContinuityError(
            f"p is not absolutely continuous w.r.t. q at symbols {np.flatnonzero(bad).tolist()}"
        )
    return pm, qm, live


def kl_divergence(p: Pmf, q: Pmf) -> float:
    """Relative entropy ``sum_i p_i ln(p_i / q_i)`` in nats."""
    pm, qm, live = _aligned(p, q)
    terms = pm[live] * np.log(pm[live] / qm[live])
    # Clamp rounding noise; the exact value is non-negative.
    return max(float(np.sum(terms)), 0.0)


def llr_second_moment(p: Pmf, q: Pmf) -> float:
    """``E_p[(ln p/q)^2]`` in squared nats."""
    pm, qm, live = _aligned(p, q)
    llr = np.log(pm[live] / qm[live])
    return float(np.sum(pm[live] * llr * llr))


def chi2_divergence(p: Pmf, q: Pmf) -> float:
    """Pearson chi-square ``sum_i (p_i - q_i)^2 / q_i``.

    Symbols with ``q_i = 0`` are skipped; absolute continuity forces
    ``p_i = 0`` there, so they would contribute ``0/0``.
    """
    pm, qm, _ = _aligned(p, q)
    pos = qm > 0.0
    diff = pm[pos] - qm[pos]
    return float(np.sum(diff * diff / qm[pos]))


def divergences(p: Pmf, q: Pmf) -> DivergencePair:
    return DivergencePair(
        kl=kl_divergence(p, q),
        second_moment=llr_second_moment(p, q),
        chi2=chi2_divergence(p, q),
    )
