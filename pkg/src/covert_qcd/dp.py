"""Lagrangian belief-grid value iteration for the covert detection POMDP.

The belief is the posterior probability ``q`` that the change has already
happened. Continuing from ``q`` costs

    q + lam * beta^2 * (chi2_pre (1 - q) + chi2_post q)

plus the expected next value; stopping costs ``lam_f (1 - q)``. ``lam`` prices
the covert budget and ``lam_f`` the false alarm. The grid is uniform in log
odds on ``[-C_rho, b_alpha]``; beliefs past ``b_alpha`` stop. Two extra points
represent the empty state (``q = 0``, no data yet, stopping not allowed) and
``q = 1``.

``solve`` tunes ``lam_f`` so the grid chain meets the PFA target and ``lam``
so its covert cost sits just below the budget. Both are evaluated exactly on
the grid Markov chain induced by linear interpolation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model import Scenario

SCHEMA = "covert-qcd-dp/1"
DEFAULT_GRID = 1024
VI_TOL = 1e-8
VI_MAX_ITER = 100_000
LAM_LOG_TOL = 0.01


class DPConvergenceError(RuntimeError):
    """Value iteration hit its iteration cap."""

    def __init__(self, residual: float, iterations: int) -> None:
        super().__init__(f"value iteration did not converge: residual {residual:.3g} after {iterations} sweeps")
        self.residual = residual
        self.iterations = iterations


def _sigmoid(s):
    return 1.0 / (1.0 + np.exp(-np.asarray(s, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class BeliefGridPolicy:
    """Solved (stop, beta) table over the belief grid.

    Index 0 is the empty state, index ``n - 1`` is ``q = 1``; the points in
    between sit at ``log_odds[1:-1]``, uniformly spaced from ``-C_rho`` to
    ``b_alpha``.
    """

    log_odds: np.ndarray
    stop: np.ndarray
    beta: np.ndarray
    lam: float
    lam_f: float
    value: np.ndarray
    b_alpha: float
    metadata: dict = field(default_factory=dict)

    @property
    def grid(self) -> np.ndarray:
        """Belief points in [0, 1], including both endpoints."""
        p = _sigmoid(self.log_odds)
        p[0], p[-1] = 0.0, 1.0
        return p

    @property
    def size(self) -> int:
        return int(self.log_odds.size)

    def _nearest(self, s):
        inner = self.log_odds[1:-1]
        h = inner[1] - inner[0]
        j = np.rint((np.asarray(s, dtype=np.float64) - inner[0]) / h)
        return 1 + np.clip(j, 0, inner.size - 1).astype(np.int64)

    def beta_for(self, s, empty: bool = False):
        """Sensing rate at log odds ``s`` (nearest grid point); vectorized."""
        if empty:
            return np.full(np.shape(s), self.beta[0]) if np.ndim(s) else float(self.beta[0])
        s = np.asarray(s, dtype=np.float64)
        out = np.where(s >= self.b_alpha, 0.0, self.beta[self._nearest(s)])
        return out if out.ndim else float(out)

    def stop_for(self, s):
        """Stopping decision at log odds ``s``; always true from ``b_alpha`` on."""
        s = np.asarray(s, dtype=np.float64)
        out = (s >= self.b_alpha) | self.stop[self._nearest(s)]
        return out if out.ndim else bool(out)

    def to_json(self) -> str:
        inner = self.log_odds[1:-1]
        doc = {
            "schema": SCHEMA,
            "log_odds_min": float(inner[0]),
            "log_odds_max": float(inner[-1]),
            "grid_size": self.size,
            "b_alpha": self.b_alpha,
            "lambda": self.lam,
            "lambda_f": self.lam_f,
            "stop": [bool(v) for v in self.stop],
            "beta": [float(v) for v in self.beta],
            "value": [float(v) for v in self.value],
            "metadata": self.metadata,
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BeliefGridPolicy":
        doc = json.loads(text)
        if doc.get("schema") != SCHEMA:
            raise ValueError(f"expected schema {SCHEMA!r}, got {doc.get('schema')!r}")
        n = int(doc["grid_size"])
        log_odds = _log_odds_grid(doc["log_odds_min"], doc["log_odds_max"], n)
        return cls(
            log_odds=log_odds,
            stop=np.array(doc["stop"], dtype=bool),
            beta=np.array(doc["beta"], dtype=np.float64),
            lam=float(doc["lambda"]),
            lam_f=float(doc["lambda_f"]),
            value=np.array(doc["value"], dtype=np.float64),
            b_alpha=float(doc["b_alpha"]),
            metadata=dict(doc.get("metadata", {})),
        )


def _log_odds_grid(lo: float, hi: float, n: int) -> np.ndarray:
    return np.concatenate([[-np.inf], np.linspace(lo, hi, n - 2), [np.inf]])


@dataclass(frozen=True)
class GridMetrics:
    """ADD, PFA and covert cost of the grid Markov chain under a fixed policy."""

    add: float
    pfa: float
    ecb: float


class BeliefMdp:
    """Precomputed belief transitions for one scenario and grid size."""

    def __init__(self, scenario: Scenario, grid_size: int = DEFAULT_GRID) -> None:
        if grid_size < 64:
            raise ValueError(f"grid_size must be >= 64, got {grid_size}")
        ch, prior = scenario.channel, scenario.prior
        self.scenario = scenario
        self.n = n = grid_size
        self.b_alpha = b = scenario.b_alpha
        lo = -prior.c_rho
        self.log_odds = _log_odds_grid(lo, b, n)
        q = _sigmoid(self.log_odds)
        q[0], q[-1] = 0.0, 1.0
        self.q = q
        self.forced = np.zeros(n, dtype=bool)
        self.forced[1:] = self.log_odds[1:] >= b
        self.h = (b - lo) / (n - 3)
        self.lo = lo

        inner = np.arange(1, n - 1)
        s = self.log_odds[inner]
        p10 = ch.alice[1][0].mass
        p11 = ch.alice[1][1].mass
        # Outcome 0: innocent action. Outcomes 1..n_y: probe observing y.
        shifts = [np.zeros(1)] + [np.array([ch.llr_table[y]]) for y in range(ch.n_y)]
        self.n_out = len(shifts)
        self.idx_lo = np.zeros((self.n_out, n), dtype=np.int64)
        self.w_hi = np.zeros((self.n_out, n))
        self.term = np.zeros((self.n_out, n), dtype=bool)
        self.term_pfa = np.zeros((self.n_out, n))
        for o, L in enumerate(shifts):
            with np.errstate(invalid="ignore"):
                s_next = np.logaddexp(s + L + prior.d, -prior.c_rho)
            self._place(o, inner, s_next)
            # Empty state: first observation leaves log odds at -C_rho.
            self._place(o, np.array([0]), np.array([lo]))
        # Probability of each probe outcome y given belief q.
        py = np.outer(1.0 - q, p10) + np.outer(q, p11)
        self.p_y = py.T  # shape (n_y, n)
        self.cost_weight = ch.chi2_pre * (1.0 - q) + ch.chi2_post * q

    def _place(self, o, rows, s_next):
        term = s_next >= self.b_alpha
        pos = np.clip((s_next - self.lo) / self.h, 0.0, self.n - 3)
        j = np.minimum(np.floor(pos).astype(np.int64), self.n - 4)
        self.idx_lo[o, rows] = 1 + j
        self.w_hi[o, rows] = pos - j
        self.term[o, rows] = term
        self.term_pfa[o, rows] = np.where(term, 1.0 - _sigmoid(s_next), 0.0)

    def next_log_odds(self, o: int) -> np.ndarray:
        """Next log odds per grid point under outcome ``o`` (terminal entries included)."""
        s = self.log_odds[1:-1]
        L = 0.0 if o == 0 else self.scenario.channel.llr_table[o - 1]
        return np.logaddexp(s + L + self.scenario.prior.d, -self.scenario.prior.c_rho)

    def expected_next(self, value: np.ndarray, lam_f: float) -> np.ndarray:
        """``E[V(next)]`` per outcome, shape ``(n_out, n)``."""
        lo = self.idx_lo
        interp = (1.0 - self.w_hi) * value[lo] + self.w_hi * value[lo + 1]
        return np.where(self.term, lam_f * self.term_pfa, interp)

    def continue_costs(self, value, actions, lam, lam_f) -> np.ndarray:
        """Cost of continuing with each rate in ``actions``, shape ``(n_actions, n)``."""
        nxt = self.expected_next(value, lam_f)
        probe = np.sum(self.p_y * nxt[1:], axis=0)
        a = np.asarray(actions, dtype=np.float64)[:, None]
        running = self.q[None, :] + lam * a * a * self.cost_weight[None, :]
        return running + (1.0 - a) * nxt[0][None, :] + a * probe[None, :]


def bellman_backup(mdp: BeliefMdp, value, actions, lam: float, lam_f: float):
    """One sweep. Returns ``(new_value, stop, action_index)``."""
    cont = mdp.continue_costs(value, actions, lam, lam_f)
    best = np.argmin(cont, axis=0)
    cont_best = cont[best, np.arange(mdp.n)]
    stop_cost = lam_f * (1.0 - mdp.q)
    stop = (stop_cost <= cont_best) | mdp.forced
    stop[0] = False
    new = np.where(stop, stop_cost, cont_best)
    return new, stop, best


def value_iteration(
    mdp: BeliefMdp, actions, lam, lam_f, value0=None, tol=VI_TOL, max_iter=VI_MAX_ITER, history=None
):
    """Iterate backups until the sup-norm change drops below ``tol``.

    Returns ``(value, stop, action_index, sweeps)``. Residuals are appended to
    ``history`` when a list is given.
    """
    value = np.zeros(mdp.n) if value0 is None else np.array(value0, dtype=np.float64)
    residual = math.inf
    for it in range(1, max_iter + 1):
        new, stop, best = bellman_backup(mdp, value, actions, lam, lam_f)
        residual = float(np.max(np.abs(new - value)))
        if history is not None:
            history.append(residual)
        value = new
        if residual < tol:
            return value, stop, best, it
    raise DPConvergenceError(residual, max_iter)


def evaluate_on_grid(mdp: BeliefMdp, stop, beta) -> GridMetrics:
    """Exact ADD, PFA and covert cost of the interpolated grid chain from the empty state."""
    n = mdp.n
    cont = ~np.asarray(stop, dtype=bool)
    beta = np.where(cont, beta, 0.0)
    P = np.zeros((n, n))
    pfa_r = np.where(cont, 0.0, 1.0 - mdp.q)
    rows = np.flatnonzero(cont)
    for o in range(mdp.n_out):
        prob = (1.0 - beta) if o == 0 else beta * mdp.p_y[o - 1]
        prob = prob[rows]
        live = ~mdp.term[o, rows]
        lo = mdp.idx_lo[o, rows]
        w = mdp.w_hi[o, rows]
        np.add.at(P, (rows[live], lo[live]), (prob * (1.0 - w))[live])
        np.add.at(P, (rows[live], lo[live] + 1), (prob * w)[live])
        pfa_r[rows] += prob * mdp.term_pfa[o, rows]
    A = np.eye(n) - P
    rhs = np.stack(
        [
            np.where(cont, mdp.q, 0.0),
            pfa_r,
            np.where(cont, beta * beta * mdp.cost_weight, 0.0),
        ],
        axis=1,
    )
    sol = np.linalg.solve(A, rhs)
    return GridMetrics(add=float(sol[0, 0]), pfa=float(sol[0, 1]), ecb=float(sol[0, 2]))


def default_actions(scenario: Scenario) -> tuple[float, ...]:
    from .policy import proposed_sensing_rate

    b = proposed_sensing_rate(scenario)
    return tuple(sorted({0.0, *(min(1.0, c * b) for c in (0.5, 1.0, 2.0)), 1.0}))


@dataclass
class _Solution:
    lam: float
    lam_f: float
    value: np.ndarray
    stop: np.ndarray
    beta: np.ndarray
    metrics: GridMetrics
    sweeps: int


def _solve_for_lam_f(mdp, actions, lam, guess, bisect_steps, tol):
    """Smallest stop weight, by log-bisection, whose grid PFA meets alpha.

    ``guess`` narrows the initial bracket to a factor 16 either side.
    """
    alpha = mdp.scenario.alpha
    acts = np.asarray(actions)
    sweeps = 0

    def run(lam_f):
        nonlocal sweeps
        v, stop, best, it = value_iteration(mdp, actions, lam, lam_f, None, tol)
        sweeps += it
        beta = acts[best]
        return _Solution(lam, lam_f, v, stop, beta, evaluate_on_grid(mdp, stop, beta), 0)

    if guess is None:
        lo_f, hi_f = 1.0, 1e3 / alpha
    else:
        lo_f, hi_f = guess / 16.0, guess * 16.0
    hi = run(hi_f)
    while hi.metrics.pfa > alpha:
        # A large enough stop weight leaves only the forced region, which meets alpha.
        lo_f, hi = hi.lam_f, run(hi.lam_f * 64.0)
    best_sol = hi
    log_lo, log_hi = math.log(lo_f), math.log(hi.lam_f)
    for _ in range(bisect_steps):
        mid = math.exp(0.5 * (log_lo + log_hi))
        sol = run(mid)
        if sol.metrics.pfa <= alpha:
            best_sol, log_hi = sol, math.log(mid)
        else:
            log_lo = math.log(mid)
    best_sol.sweeps = sweeps
    return best_sol


def ladder_actions(scenario: Scenario, rungs: int = 12) -> tuple[float, ...]:
    """Default actions plus a geometric ladder ``beta* * 2^(k/2)`` up to 1."""
    from .policy import proposed_sensing_rate

    b = proposed_sensing_rate(scenario)
    extra = {min(1.0, b * 2.0 ** (k / 2.0)) for k in range(rungs + 1)}
    return tuple(sorted(set(default_actions(scenario)) | extra))


def solve(
    scenario: Scenario,
    grid_size: int = DEFAULT_GRID,
    actions=None,
    tol: float = VI_TOL,
    ecb_window: tuple[float, float] = (0.85, 0.97),
    lam_steps: int = 30,
    lam_f_steps: int = 8,
) -> BeliefGridPolicy:
    """Tune ``lam`` and ``lam_f`` and return the extracted grid policy.

    ``lam = 0`` is tried first; if its covert cost already fits the budget no
    tuning is needed. Otherwise ``lam`` is bisected in log space until the grid
    covert cost falls in ``ecb_window * delta``; the returned policy is the
    cheapest-delay feasible one found.
    """
    actions = default_actions(scenario) if actions is None else tuple(actions)
    if 0.0 not in actions:
        raise ValueError("the action set must contain 0")
    mdp = BeliefMdp(scenario, grid_size)
    delta = scenario.delta
    lo_w, hi_w = ecb_window

    last_lam_f = [None]

    def at(lam, acts=actions):
        sol = _solve_for_lam_f(mdp, acts, lam, last_lam_f[0], lam_f_steps, tol)
        last_lam_f[0] = sol.lam_f
        return sol

    sol = at(0.0)
    if sol.metrics.ecb > delta:
        if delta == 0.0:
            sol = at(0.0, (0.0,))
        else:
            lo, hi = 0.0, 1.0
            hi_sol = at(hi)
            while hi_sol.metrics.ecb > hi_w * delta and hi < 1e12:
                lo, hi = hi, hi * 10.0
                hi_sol = at(hi)
            if hi_sol.metrics.ecb > hi_w * delta:
                hi_sol = at(hi, (0.0,))
            sol = hi_sol
            if not lo_w * delta <= sol.metrics.ecb:
                log_lo = math.log(lo) if lo > 0.0 else math.log(hi) - 12.0
                log_hi = math.log(hi)
                for _ in range(lam_steps):
                    if log_hi - log_lo < LAM_LOG_TOL:
                        break
                    mid = at(math.exp(0.5 * (log_lo + log_hi)))
                    if mid.metrics.ecb <= hi_w * delta:
                        sol, log_hi = mid, math.log(mid.lam)
                        if mid.metrics.ecb >= lo_w * delta:
                            break
                    else:
                        log_lo = math.log(mid.lam)
    return BeliefGridPolicy(
        log_odds=mdp.log_odds,
        stop=sol.stop,
        beta=sol.beta,
        lam=sol.lam,
        lam_f=sol.lam_f,
        value=sol.value,
        b_alpha=mdp.b_alpha,
        metadata={
            "abs_ln_alpha": scenario.abs_ln_alpha,
            "rho": scenario.prior.rho,
            "delta": delta,
            "actions": list(actions),
            "grid_add": sol.metrics.add,
            "grid_pfa": sol.metrics.pfa,
            "grid_ecb": sol.metrics.ecb,
        },
    )
