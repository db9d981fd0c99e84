"""Inner minimization over the jammer's noise allocation.

For a fixed division point ``m`` the jammer minimizes
``sum_{t<=m} log2(P_t/N_t)`` subject to ``N_t <= P_t`` and a single sum
budget on the prefix noise.  The minimizer is the water-filling solution
``N*_t = min(P_t, alpha)``.  :func:`inner_min` scans every division point;
:func:`brute_force_inner` solves the same problem on a discrete grid by exact
dynamic programming and serves as an independent oracle.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numba
import numpy as np

from .model import REFERENCE, ChannelParams, NoiseAllocation, Slack

__all__ = [
    "InfeasibleBudget",
    "WaterfillSolution",
    "InnerResult",
    "water_fill",
    "inner_min",
    "complete_noise",
    "first_crossing_violations",
    "brute_force_inner",
    "two_level_objective",
]

log = logging.getLogger(__name__)


class InfeasibleBudget(ValueError):
    """The prefix noise budget is non-positive; the inner set is empty."""


@dataclass(frozen=True)
class WaterfillSolution:
    """Water-filling minimizer for a single division point.

    Attributes
    ----------
    level : float
        Water level ``alpha``; ``inf`` when every cap binds.
    noise_prefix : ndarray
        ``N*_t = min(P_t, alpha)`` for ``t <= m``.
    objective : float
        Unnormalized ``sum_{t<=m} log2(P_t/N*_t)``.
    budget_B : float
        Half the prefix signal energy.
    gap_G : float
        ``B`` minus the prefix noise budget; equals ``n(P/2 - N)`` without slack.
    """

    level: float
    noise_prefix: np.ndarray
    objective: float
    budget_B: float
    gap_G: float

    @property
    def m(self) -> int:
        return self.noise_prefix.size

    @property
    def budget(self) -> float:
        return self.budget_B - self.gap_G


def water_fill(prefix_powers, budget: float) -> WaterfillSolution:
    """Minimize ``sum log2(P_t/N_t)`` with ``N_t <= P_t`` and ``sum N_t <= budget``.

    Parameters
    ----------
    prefix_powers : array_like
        Positive caps ``P_1..P_m``.
    budget : float
        Noise energy available for the prefix.

    Returns
    -------
    WaterfillSolution

    Raises
    ------
    InfeasibleBudget
        If ``budget <= 0``.
    """
    p = np.asarray(prefix_powers, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("prefix_powers must be non-empty")
    if np.any(p <= 0):
        raise ValueError("prefix powers must be positive")
    B = 0.5 * float(p.sum())
    if not budget > 0:
        raise InfeasibleBudget(f"budget {budget!r} is not positive")
    total = float(p.sum())
    if budget >= total:
        return WaterfillSolution(math.inf, p.copy(), 0.0, B, B - budget)

    ps = np.sort(p)
    m = ps.size
    # Level candidate when the k smallest caps bind and the rest share the remainder.
    below = np.concatenate(([0.0], np.cumsum(ps)[:-1]))
    candidates = (budget - below) / np.arange(m, 0, -1)
    k = int(np.argmax(candidates <= ps))
    alpha = float(candidates[k])
    noise = np.minimum(p, alpha)
    objective = float(np.sum(np.log2(p / noise)))
    return WaterfillSolution(alpha, noise, max(objective, 0.0), B, B - budget)


class InnerResult(NamedTuple):
    """Result of :func:`inner_min`; ``m`` is None when every division point is infeasible."""

    m: Optional[int]
    solution: Optional[WaterfillSolution]
    value: float

    @property
    def feasible(self) -> bool:
        return self.m is not None


def inner_min(p, params: ChannelParams, slack: Slack = REFERENCE, *,
              block_length: Optional[int] = None,
              strict_first_crossing: bool = False) -> InnerResult:
    """Jammer's best division point and noise allocation against ``p``.

    Parameters
    ----------
    p : PowerAllocation or ChunkedAllocation or array_like
        Signal powers per coordinate (or per chunk).
    params : ChannelParams
    slack : Slack
        ``tau`` scales the jammer's residual, ``gamma`` the transmitter's total.
    block_length : int, optional
        Number of channel uses behind the totals; defaults to ``len(p)``.  For
        chunk-level ``p`` pass ``n = K * theta``.
    strict_first_crossing : bool
        Log when the minimizer satisfies the energy-bounding condition at an
        earlier division point.  The value is not changed.

    Returns
    -------
    InnerResult
        ``(m*, solution, value)`` with ``value = objective / (2 len(p))``.
        Ties in value go to the smallest ``m``.
    """
    values = p.values if hasattr(p, "values") else np.asarray(p, dtype=float).ravel()
    L = values.size
    n = block_length if block_length is not None else L
    prefix = np.cumsum(values)
    best_m, best_sol, best_val = None, None, math.inf
    for m in range(1, L + 1):
        budget = slack.james_budget(float(prefix[m - 1]), n, params)
        if not budget > 0:
            continue
        sol = water_fill(values[:m], budget)
        val = sol.objective / (2 * L)
        if val < best_val - 1e-15:
            best_m, best_sol, best_val = m, sol, val
    if best_m is not None and strict_first_crossing:
        bad = first_crossing_violations(values, best_sol.noise_prefix, params, slack, n)
        if bad:
            log.warning("first-crossing constraint violated at m*=%d for t0 in %s", best_m, bad[:10])
    return InnerResult(best_m, best_sol, best_val)


def first_crossing_violations(p_values, noise_prefix, params: ChannelParams,
                              slack: Slack = REFERENCE, block_length: Optional[int] = None) -> list:
    """Division points ``t0 < m`` at which the energy-bounding condition already holds."""
    p_values = np.asarray(p_values, dtype=float)
    q = np.asarray(noise_prefix, dtype=float)
    n = block_length if block_length is not None else p_values.size
    m = q.size
    bad = []
    ps, qs = np.cumsum(p_values[:m]), np.cumsum(q)
    for t0 in range(1, m):
        if qs[t0 - 1] <= slack.james_budget(float(ps[t0 - 1]), n, params):
            bad.append(t0)
    return bad


def complete_noise(p_values, solution: WaterfillSolution, params: ChannelParams,
                   block_length: Optional[int] = None) -> NoiseAllocation:
    """Extend a prefix solution to a full-length noise allocation.

    The unused part of the jammer's total budget is spread evenly over the
    suffix, matching the suffix level used in the proof of the converse.
    """
    p_values = np.asarray(p_values, dtype=float)
    L = p_values.size
    n = block_length if block_length is not None else L
    m = solution.m
    out = np.empty(L)
    out[:m] = solution.noise_prefix
    if m < L:
        rest = n * params.noise_power - float(solution.noise_prefix.sum())
        out[m:] = rest / (L - m)
    return NoiseAllocation(out)


def brute_force_inner(p, params: ChannelParams, grid_step: float, slack: Slack = REFERENCE,
                      *, max_len: int = 8, block_length: Optional[int] = None) -> float:
    """Exact minimum of the inner problem over noise values on a grid.

    For each division point ``m`` the prefix coordinate with the largest
    power takes whatever budget the others leave (capped by its ``P_t``).
    Every other prefix coordinate ranges over ``{grid_step, 2 grid_step,
    ...}`` up to ``P_t`` plus the cap value ``P_t`` itself, which is charged
    ``ceil(P_t / grid_step)`` grid units.  All enumerated vectors are
    feasible, so the result is never below the continuous infimum.  The
    enumeration is carried out exactly by a min-plus dynamic program over
    coordinates.

    Returns the normalized value ``min_m objective / (2 len(p))``, or
    ``inf`` when no division point admits a grid point.
    """
    values = p.values if hasattr(p, "values") else np.asarray(p, dtype=float).ravel()
    L = values.size
    if L > max_len:
        raise ValueError(f"brute_force_inner supports at most {max_len} coordinates, got {L}")
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    n = block_length if block_length is not None else L
    prefix = np.cumsum(values)
    best = math.inf
    for m in range(1, L + 1):
        budget = slack.james_budget(float(prefix[m - 1]), n, params)
        if not budget > 0:
            continue
        order = np.argsort(values[:m], kind="stable")
        last = values[order[-1]]
        size = int(math.floor(budget / grid_step + 1e-9)) + 1
        # dp[j] = min objective of the non-absorbing coordinates using j grid units
        dp = np.full(size, math.inf)
        dp[0] = 0.0
        for t in order[:-1]:
            pt = values[t]
            cap = int(math.floor(pt / grid_step + 1e-9))
            new = np.full(size, math.inf)
            for k in range(1, min(cap, size - 1) + 1):
                cost = math.log2(pt / (k * grid_step))
                np.minimum(new[k:], dp[: size - k] + cost, out=new[k:])
            full = int(math.ceil(pt / grid_step - 1e-9))
            if full < size:
                np.minimum(new[full:], dp[: size - full], out=new[full:])
            dp = new
        rest = budget - np.arange(size) * grid_step
        ok = np.isfinite(dp) & (rest > 0)
        if ok.any():
            q = np.minimum(rest[ok], last)
            best = min(best, float(np.min(dp[ok] + np.log2(last / q))))
    return best / (2 * L)


@numba.njit(cache=True)
def two_level_objective(lo, hi, nu, m, alice_total, james_total, tau):
    """Unnormalized inner objective for a two-level allocation at division ``m``.

    The allocation is ``lo`` on coordinates ``1..nu`` and ``hi`` afterwards;
    the prefix budget is ``james_total - (alice_total - S_m) / (2(1-tau))``.
    Returns ``inf`` for an empty inner set and ``0`` when every cap binds.
    """
    a = m if m < nu else nu
    b = m - a
    S = a * lo + b * hi
    beta = james_total - (alice_total - S) / (2.0 * (1.0 - tau))
    if beta <= 0.0:
        return np.inf
    if beta >= S:
        return 0.0
    if b == 0:
        return a * np.log2(lo * a / beta)
    if lo <= hi:
        ps, cs, pl, cl = lo, a, hi, b
    else:
        ps, cs, pl, cl = hi, b, lo, a
    if beta <= (a + b) * ps:
        alpha = beta / (a + b)
        return a * np.log2(lo / alpha) + b * np.log2(hi / alpha)
    alpha = (beta - cs * ps) / cl
    return cl * np.log2(pl / alpha)

