"""Outer minimax searches over two-level signal allocations.

Three finite-n bounds are computed:

* ``lower``: the transmitter picks a two-level ``P`` (transition ``nu``,
  prefix share ``s`` of the total energy), the jammer picks the division
  point and water-fills the prefix.
* ``upper_bar``: as above, but the jammer is restricted to divide at the
  transition ``nu`` or at the end of the block.  Any restriction of the
  jammer's choices can only help the transmitter, so every cell remains an
  upper bound on the inner minimum.
* ``upper_tilde``: the minimum over ``m`` is moved to the front and both
  allocations are two-level with transition ``m``.

The slack variants reuse the lower-bound search with the corresponding
energy-bounding condition; the chunked variant runs the same search on
per-chunk totals of length ``K``.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Tuple

import numba
import numpy as np

from .model import (
    REFERENCE,
    BlockConfig,
    ChannelParams,
    ChunkedAllocation,
    NoiseAllocation,
    PowerAllocation,
    Slack,
    SolverConfig,
    TwoLevelAllocation,
    energy_bounding_margin,
)
from .waterfill import (
    complete_noise,
    first_crossing_violations,
    inner_min,
    two_level_objective,
    water_fill,
)

__all__ = [
    "TIE_TOL",
    "GRID_TOL",
    "BoundResult",
    "compute_lower_bound",
    "compute_upper_bar",
    "compute_upper_tilde",
    "compute_slack_bound",
    "solve_chunked_signal",
    "reference_oblivious",
    "shift_noise",
    "RobustnessProbe",
    "robustness_probe",
    "compute_curve",
    "compute_table",
]

log = logging.getLogger(__name__)

#: Grid points whose values differ by less than this are treated as ties.
TIE_TOL = 1e-9

#: Tolerance (bits) used when comparing bound curves computed on a grid.
GRID_TOL = 1e-3


@dataclass(frozen=True)
class BoundResult:
    """Value of a bound together with the allocations that attain it.

    ``witness_P`` describes the transmitter's two-level allocation (per
    coordinate, or per chunk for the chunked variant), ``witness_m`` the
    jammer's division point and ``witness_N`` the jammer's allocation.
    """

    value: float
    kind: str
    witness_P: TwoLevelAllocation
    witness_m: int
    witness_N: object
    grid_step: float
    n: int
    params: ChannelParams
    runtime_s: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def plotkin_regime(self) -> bool:
        return self.params.plotkin_regime


def _share_grid(step: float) -> np.ndarray:
    """Prefix shares ``k * step`` strictly inside (0, 1)."""
    k = int(math.floor(1.0 / step + 1e-9))
    shares = np.arange(1, k + 1) * step
    return shares[shares < 1.0 - 1e-12]


def _levels(s: float, nu: int, L: int, total: float) -> Tuple[float, float]:
    lo = s * total / nu
    hi = (1.0 - s) * total / (L - nu) if nu < L else lo
    return lo, hi


@numba.njit(cache=True)
def _min_over_m(lo, hi, nu, L, alice_total, james_total, tau, start_m, floor):
    """Minimum objective over division points, with early exit.

    Starts from ``start_m`` and stops as soon as the running minimum drops to
    ``floor`` or below (the candidate can no longer beat the incumbent).
    Returns ``(min objective, argmin m)``; the argmin is only meaningful when
    no early exit happened.
    """
    best = two_level_objective(lo, hi, nu, start_m, alice_total, james_total, tau)
    arg = start_m
    if best <= floor:
        return best, arg
    for m in range(1, L + 1):
        if m == start_m:
            continue
        v = two_level_objective(lo, hi, nu, m, alice_total, james_total, tau)
        if v < best or (v == best and m < arg):
            best = v
            arg = m
            if best <= floor:
                break
    return best, arg


@numba.njit(cache=True)
def _search_lower(nus, shares, L, signal_total, alice_total, james_total, tau, incumbent, tol):
    """Scan candidates in order; return ``(best objective, index)``.

    A candidate replaces the incumbent only when it is larger by more than
    ``tol`` (in objective units), so the first of several tied candidates wins.
    """
    best = incumbent
    idx = -1
    hint = L
    for i in range(nus.size):
        nu = nus[i]
        s = shares[i]
        lo = s * signal_total / nu
        if nu < L:
            hi = (1.0 - s) * signal_total / (L - nu)
        else:
            hi = lo
        v, arg = _min_over_m(lo, hi, nu, L, alice_total, james_total, tau, hint, best + tol)
        # an all-infeasible candidate (v = inf) has an empty inner set: skip it
        if v > best + tol and v < np.inf:
            best = v
            idx = i
            hint = arg
    return best, idx


def _main_grid(L: int, step: float) -> Tuple[np.ndarray, np.ndarray]:
    shares = _share_grid(step)
    nus = np.repeat(np.arange(1, L, dtype=np.int64), shares.size)
    ss = np.tile(shares, L - 1)
    nus = np.concatenate((nus, [L]))
    ss = np.concatenate((ss, [1.0]))
    return nus, ss


def _refine_grid(nu_best: int, s_best: float, L: int, step: float) -> Tuple[np.ndarray, np.ndarray]:
    fine = step / 10.0
    nus, ss = [], []
    for nu in range(max(1, nu_best - 1), min(L, nu_best + 1) + 1):
        if nu == L:
            nus.append(L)
            ss.append(1.0)
            continue
        for j in range(-10, 11):
            s = s_best + j * fine
            if 0.0 < s < 1.0:
                nus.append(nu)
                ss.append(s)
    return np.array(nus, dtype=np.int64), np.array(ss)


def _two_level_search(params: ChannelParams, L: int, block_length: int, slack: Slack,
                      cfg: SolverConfig) -> Tuple[int, float]:
    """Best ``(nu, s)`` for the lower-bound style search at sequence length ``L``."""
    n = block_length
    signal_total = n * params.signal_power
    alice_total = (1.0 - slack.gamma) * signal_total
    james_total = n * params.noise_power
    tol = TIE_TOL * 2 * L
    nus, ss = _main_grid(L, cfg.snr_grid_step)
    best, idx = _search_lower(nus, ss, L, signal_total, alice_total, james_total,
                              slack.tau, -1.0, tol)
    nu_best, s_best = int(nus[idx]), float(ss[idx])
    if cfg.refine:
        rn, rs = _refine_grid(nu_best, s_best, L, cfg.snr_grid_step)
        _, ridx = _search_lower(rn, rs, L, signal_total, alice_total, james_total,
                                slack.tau, best, tol)
        if ridx >= 0:
            nu_best, s_best = int(rn[ridx]), float(rs[ridx])
    return nu_best, s_best


def _lower_style(params: ChannelParams, L: int, block_length: int, slack: Slack,
                 cfg: SolverConfig, kind: str, chunked: bool) -> BoundResult:
    t0 = time.perf_counter()
    nu, s = _two_level_search(params, L, block_length, slack, cfg)
    lo, hi = _levels(s, nu, L, block_length * params.signal_power)
    witness_P = TwoLevelAllocation(nu, lo, hi)
    p = witness_P.expand(L)
    res = inner_min(p, params, slack, block_length=block_length,
                    strict_first_crossing=cfg.strict_first_crossing)
    noise = complete_noise(p, res.solution, params, block_length=block_length)
    if chunked:
        noise = ChunkedAllocation(noise.values)
    return BoundResult(
        value=res.value,
        kind=kind,
        witness_P=witness_P,
        witness_m=res.m,
        witness_N=noise,
        grid_step=cfg.snr_grid_step,
        n=block_length,
        params=params,
        runtime_s=time.perf_counter() - t0,
        extras={"share": s, "length": L},
    )


def compute_lower_bound(params: ChannelParams, n: int, cfg: Optional[SolverConfig] = None) -> BoundResult:
    """Lower bound on the finite-n capacity.

    The transmitter's allocation ranges over two-level sequences using the
    full energy ``nP``: transition ``nu`` in ``1..n`` and prefix share ``s``
    on a grid of step ``cfg.snr_grid_step`` (``s = 1`` for ``nu = n``).  For
    each candidate the jammer's reply is the exact water-filling minimum over
    division points.  Ties within ``TIE_TOL`` keep the smallest ``nu`` then
    the smallest ``s``.

    Examples
    --------
    >>> round(compute_lower_bound(ChannelParams(1.0, 0.1), 50).value, 3)
    1.661
    """
    cfg = cfg or SolverConfig()
    return _lower_style(params, n, n, REFERENCE, cfg, "lower", chunked=False)


def compute_slack_bound(params: ChannelParams, n: int, cfg: SolverConfig,
                        block: Optional[BlockConfig] = None) -> BoundResult:
    """Slack variant of the lower-bound search.

    Without ``block`` the search runs per coordinate with the slack of
    ``cfg`` (``tau`` for the converse variant).  With ``block`` the search
    runs on per-chunk totals of length ``K`` under the ``gamma`` slack, which
    is the chunked achievability problem.  With zero slack and ``theta = 1``
    both reduce to :func:`compute_lower_bound` through the same code path.
    """
    slack = cfg.slack
    if block is None:
        kind = "lower" if slack.is_reference else ("gamma_slack" if slack.tau == 0 else "tau_slack")
        return _lower_style(params, n, n, slack, cfg, kind, chunked=False)
    if block.n != n:
        raise ValueError("block.n must equal n")
    kind = "gamma_slack"
    return _lower_style(params, block.K, n, Slack(0.0, slack.gamma), cfg, kind, chunked=True)


def solve_chunked_signal(params: ChannelParams, K: int, theta: int, gamma: float = 0.0,
                         cfg: Optional[SolverConfig] = None) -> Tuple[float, ChunkedAllocation]:
    """Best two-level per-chunk signal energies and the chunked bound value.

    Returns ``(value, Phi*)`` where ``Phi*`` holds per-chunk energies summing
    to ``nP`` with ``n = K * theta``.
    """
    base = cfg or SolverConfig()
    cfg = SolverConfig(tau=0.0, gamma=gamma, snr_grid_step=base.snr_grid_step,
                       strict_first_crossing=base.strict_first_crossing, refine=base.refine)
    block = BlockConfig(K * theta, theta, K)
    res = compute_slack_bound(params, block.n, cfg, block=block)
    phi = ChunkedAllocation(res.witness_P.expand(K))
    return res.value, phi


# ---------------------------------------------------------------------------
# upper bar


@numba.njit(cache=True)
def _upper_bar_grid(L, P, N, shares):
    """Per-cell value ``min(v_nu, v_L)``; returns (best value, nu, s)."""
    signal_total = L * P
    james_total = L * N
    G = L * (P / 2.0 - N)
    best = -1.0
    best_nu = L
    best_s = 1.0
    tol = TIE_TOL
    for nu in range(1, L + 1):
        ns = shares.size if nu < L else 1
        for j in range(ns):
            s = shares[j] if nu < L else 1.0
            lo = s * signal_total / nu
            hi = (1.0 - s) * signal_total / (L - nu) if nu < L else lo
            v_end = two_level_objective(lo, hi, nu, L, signal_total, james_total, 0.0) / (2 * L)
            B = 0.5 * nu * lo
            beta = B - G
            v = v_end
            if beta > 0.0 and G > 0.0:
                # Uniform prefix noise (B-G)/nu meets the condition first at nu:
                # the slack nP - t0*lo - 2nN + 2 t0 (B-G)/nu is linear in t0,
                # equals 2G > 0 at t0 = 0 and 0 at t0 = nu.
                if beta >= 2.0 * B:
                    v_nu = 0.0
                else:
                    v_nu = nu * np.log2(2.0 * B / beta) / (2 * L)
                if v_nu < v:
                    v = v_nu
            if v > best + tol:
                best = v
                best_nu = nu
                best_s = s
    return best, best_nu, best_s


def compute_upper_bar(params: ChannelParams, n: int, cfg: Optional[SolverConfig] = None) -> BoundResult:
    """Upper bound in which the jammer divides at the transition or at ``n``.

    For each two-level cell ``(nu, s)`` the jammer either water-fills the
    prefix with the closed-form budget ``B - G`` at ``nu`` (when the inner
    set is nonempty: ``B > G`` and the uniform prefix first meets the
    energy-bounding condition at ``nu``), or divides at the end of the block
    with the whole budget ``nN``.  The cell value is the smaller of the two
    and the bound is the maximum over cells.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    P, N = params.signal_power, params.noise_power
    shares = _share_grid(cfg.snr_grid_step)
    best, nu, s = _upper_bar_grid(n, P, N, shares)
    lo, hi = _levels(s, nu, n, n * P)
    witness_P = TwoLevelAllocation(nu, lo, hi)
    p = witness_P.expand(n)
    # jammer's reply: whichever of its two options realizes the cell value
    sol_end = water_fill(p, n * N)
    m, sol = n, sol_end
    G = n * (P / 2 - N)
    B = 0.5 * nu * lo
    if B > G and G > 0 and nu < n:
        sol_nu = water_fill(p[:nu], B - G)
        if sol_nu.objective <= sol_end.objective:
            m, sol = nu, sol_nu
    noise = complete_noise(p, sol, params)
    return BoundResult(best, "upper_bar", witness_P, m, noise, cfg.snr_grid_step, n, params,
                       time.perf_counter() - t0, {"share": s})


# ---------------------------------------------------------------------------
# upper tilde


def _tilde_cells(m: int, n: int, P: float, N: float, shares: np.ndarray) -> np.ndarray:
    """Inner infimum for two-level ``P`` with transition ``m`` (vectorized in ``s``).

    Case a keeps the suffix noise at half the suffix signal so only the
    prefix term counts; case b lets the suffix noise fall below that level
    and water-fills prefix and suffix jointly (suffix caps ``P_hi / 2``).
    """
    k = n - m
    p_lo = shares * n * P / m
    p_hi = (1.0 - shares) * n * P / k
    with np.errstate(divide="ignore", invalid="ignore"):
        # case a
        n_lo = (n * N - k * p_hi / 2.0) / m
        va = np.where(n_lo > 0, m * np.log2(p_lo / np.minimum(p_lo, np.where(n_lo > 0, n_lo, 1.0))), np.inf)
        # case b: caps p_lo (m coords) and p_hi/2 (k coords), budget nN
        cap_hi = p_hi / 2.0
        budget = n * N
        small = np.minimum(p_lo, cap_hi)
        large = np.maximum(p_lo, cap_hi)
        c_small = np.where(p_lo <= cap_hi, m, k)
        c_large = n - c_small
        uniform = budget <= n * small
        alpha = np.where(uniform, budget / n, (budget - c_small * small) / c_large)
        alpha = np.minimum(alpha, large)
        n_lo_b = np.minimum(p_lo, alpha)
        n_hi_b = np.minimum(cap_hi, alpha)
        vb = m * np.log2(p_lo / n_lo_b) + k * np.log2(p_hi / n_hi_b)
    return np.minimum(va, vb) / (2 * n)


def compute_upper_tilde(params: ChannelParams, n: int, cfg: Optional[SolverConfig] = None) -> BoundResult:
    """Upper bound with the division point chosen before the allocations.

    For each ``m`` the transmitter's two-level allocation (transition ``m``,
    prefix share ``s``) is searched on the grid with one refinement round,
    against the jammer's best two-level reply.  ``m = n`` contributes
    ``1/2 log2(P/N)``.  The bound is the minimum over ``m``.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    P, N = params.signal_power, params.noise_power
    step = cfg.snr_grid_step
    shares = _share_grid(step)
    best_val = 0.5 * math.log2(P / min(P, N))
    best_m, best_s = n, 1.0
    for m in range(1, n):
        vals = _tilde_cells(m, n, P, N, shares)
        j = int(np.argmax(vals))
        v, s = float(vals[j]), float(shares[j])
        if cfg.refine:
            fine = shares[j] + np.arange(-10, 11) * (step / 10.0)
            fine = fine[(fine > 0) & (fine < 1)]
            fv = _tilde_cells(m, n, P, N, fine)
            jf = int(np.argmax(fv))
            if fv[jf] > v + TIE_TOL:
                v, s = float(fv[jf]), float(fine[jf])
        if v < best_val - TIE_TOL:
            best_val, best_m, best_s = v, m, s
    lo, hi = _levels(best_s, best_m, n, n * P)
    witness_P = TwoLevelAllocation(best_m, lo, hi)
    noise = _tilde_noise(best_m, n, lo, hi, N)
    return BoundResult(best_val, "upper_tilde", witness_P, best_m, noise, step, n, params,
                       time.perf_counter() - t0, {"share": best_s})


def _tilde_noise(m: int, n: int, p_lo: float, p_hi: float, N: float) -> NoiseAllocation:
    """Jammer's two-level reply realizing the inner infimum of a tilde cell."""
    if m == n:
        return NoiseAllocation(np.full(n, min(p_lo, N)))
    k = n - m
    n_lo_a = (n * N - k * p_hi / 2.0) / m
    cand = []
    if n_lo_a > 0:
        nl = min(p_lo, n_lo_a)
        cand.append((m * math.log2(p_lo / nl), nl, p_hi / 2.0))
    sol = water_fill(np.concatenate((np.full(m, p_lo), np.full(k, p_hi / 2.0))), n * N)
    nl, nh = float(sol.noise_prefix[0]), float(sol.noise_prefix[-1])
    cand.append((m * math.log2(p_lo / nl) + k * math.log2(p_hi / nh), nl, nh))
    _, nl, nh = min(cand, key=lambda c: c[0])
    out = np.full(n, nh)
    out[:m] = nl
    return NoiseAllocation(out)


# ---------------------------------------------------------------------------
# references and robustness


def reference_oblivious(params: ChannelParams, threshold: str = "n") -> float:
    """Capacity against a jammer that knows nothing about the codeword.

    ``1/2 log2(1 + P/N)`` above the threshold and 0 otherwise.  ``threshold``
    is ``"n"`` for ``P > N`` (default) or ``"2n"`` for ``P >= 2N``.
    """
    P, N = params.signal_power, params.noise_power
    if threshold == "n":
        positive = P > N
    elif threshold == "2n":
        positive = P >= 2 * N
    else:
        raise ValueError("threshold must be 'n' or '2n'")
    return 0.5 * math.log2(1.0 + P / N) if positive else 0.0


def shift_noise(noise, params: ChannelParams, tau: float) -> np.ndarray:
    """Move ``2 tau nN`` of noise energy from the first ``n-1`` coordinates to the last."""
    q = np.asarray(getattr(noise, "values", noise), dtype=float)
    n = q.size
    if n < 2:
        raise ValueError("shift needs n >= 2")
    d = 2.0 * tau * n * params.noise_power
    out = q - d / (n - 1)
    out[-1] = q[-1] + d
    return out


@dataclass(frozen=True)
class RobustnessProbe:
    """Outcome of shifting a zero-slack witness into the slack problem.

    ``positive``, ``capped``, ``in_budget`` and ``energy_bounded`` report the
    individual constraints of the slack problem; ``objective_gap`` is
    ``inf`` when a shifted prefix value is not positive.
    """

    m: int
    tau: float
    A: float
    shifted: np.ndarray
    positive: bool
    capped: bool
    in_budget: bool
    energy_bounded: bool
    objective_gap: float
    allowed_gap: float

    @property
    def feasible(self) -> bool:
        return self.positive and self.capped and self.in_budget and self.energy_bounded

    @property
    def gap_ok(self) -> bool:
        return self.objective_gap <= self.allowed_gap + 1e-12

    @property
    def holds(self) -> bool:
        return self.feasible and self.gap_ok


def robustness_probe(p, noise, m: int, params: ChannelParams, tau: float) -> RobustnessProbe:
    """Check the shifted witness against the slack problem.

    ``noise`` is a full-length zero-slack witness for division point ``m``.
    The shifted sequence must be positive, capped by ``P_t`` on the prefix,
    within ``nN`` in total, and satisfy the ``tau`` energy-bounding condition
    at ``m``; its objective may exceed the original by at most
    ``-1/2 log2(1 - A)`` with ``A = 4 tau N / min_t N_t``.
    """
    pv = np.asarray(getattr(p, "values", p), dtype=float)
    q = np.asarray(getattr(noise, "values", noise), dtype=float)
    n = pv.size
    shifted = shift_noise(q, params, tau)
    A = 4.0 * tau * params.noise_power / float(q.min())
    positive = bool(np.all(shifted > 0))
    capped = bool(np.all(shifted[:m] <= pv[:m] * (1 + 1e-12)))
    in_budget = bool(shifted.sum() <= n * params.noise_power * (1 + 1e-12))
    margin = energy_bounding_margin(pv, shifted, m, params, Slack(tau=tau))
    energy_bounded = bool(margin >= -1e-9 * n)
    if np.all(shifted[:m] > 0):
        gap = float(np.sum(np.log2(q[:m] / shifted[:m])) / (2 * n))
    else:
        gap = math.inf
    allowed = -0.5 * math.log2(1.0 - A) if A < 1 else math.inf
    return RobustnessProbe(m, tau, A, shifted, positive, capped, in_budget, energy_bounded, gap, allowed)


# ---------------------------------------------------------------------------
# tables and curves

_BOUND_FUNCS = {
    "lower": compute_lower_bound,
    "upper_bar": compute_upper_bar,
    "upper_tilde": compute_upper_tilde,
}


def _eval_cell(args):
    kind, n, ratio, cfg = args
    params = ChannelParams.from_ratio(ratio)
    t0 = time.perf_counter()
    res = _BOUND_FUNCS[kind](params, n, cfg)
    return kind, n, ratio, res.value, (time.perf_counter() - t0) * 1000.0


def _map(func, items: List, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, items))


def compute_table(ns: Iterable[int], ratios: Iterable[float], cfg: Optional[SolverConfig] = None,
                  kinds: Iterable[str] = ("lower", "upper_bar", "upper_tilde")) -> List[tuple]:
    """Rows ``(kind, n, N/P, value, runtime_ms)`` for every requested cell."""
    cfg = cfg or SolverConfig()
    cells = [(k, int(n), float(r), cfg) for k in kinds for n in ns for r in ratios]
    return _map(_eval_cell, cells, cfg.workers)


def _eval_curve_point(args):
    n, ratio, cfg, threshold = args
    params = ChannelParams.from_ratio(ratio)
    return (
        ratio,
        compute_lower_bound(params, n, cfg).value,
        compute_upper_bar(params, n, cfg).value,
        compute_upper_tilde(params, n, cfg).value,
        reference_oblivious(params, threshold),
    )


def curve_ratios(step: float) -> np.ndarray:
    """Grid ``step, 2 step, ...`` strictly below ``1/2``."""
    k = int(math.floor(0.5 / step + 1e-9))
    r = np.arange(1, k + 1) * step
    return r[r < 0.5 - 1e-12]


def compute_curve(n: int = 500, step: float = 0.005, cfg: Optional[SolverConfig] = None,
                  threshold: str = "n") -> List[tuple]:
    """Rows ``(N/P, lower, upper_bar, upper_tilde, oblivious)`` along the sweep."""
    cfg = cfg or SolverConfig()
    pts = [(n, float(r), cfg, threshold) for r in curve_ratios(step)]
    return _map(_eval_curve_point, pts, cfg.workers)
