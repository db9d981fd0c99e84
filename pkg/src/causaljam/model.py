"""Domain types shared by the solver, attack, codec and simulation modules.

Every allocation type stores strictly positive float64 values in a read-only
array.  Powers are expressed per coordinate, so a block of length ``n`` under
signal constraint ``P`` carries a total budget ``n * P``.  All logarithms are
base 2 and all rates are in bits per channel use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "EPS_POS",
    "BUDGET_RTOL",
    "InvalidAllocation",
    "ChannelParams",
    "BlockConfig",
    "PowerAllocation",
    "NoiseAllocation",
    "TwoLevelAllocation",
    "ChunkedAllocation",
    "Slack",
    "REFERENCE",
    "SolverConfig",
    "default_theta",
    "expand_two_level",
    "detect_two_level",
    "evaluate_objective",
    "check_energy_bounding",
    "energy_bounding_margin",
    "within_budget",
]

#: Smallest coordinate value accepted by the allocation types.
EPS_POS = 1e-12

#: Relative tolerance used by every budget comparison.
BUDGET_RTOL = 1e-9


class InvalidAllocation(ValueError):
    """Raised when an allocation violates positivity or its budget."""


def within_budget(total: float, budget: float, rtol: float = BUDGET_RTOL) -> bool:
    """Return True if ``total <= budget`` up to a relative tolerance."""
    return total <= budget + rtol * max(abs(budget), 1.0)


@dataclass(frozen=True)
class ChannelParams:
    """Per-coordinate power constraints of the transmitter and the jammer.

    Parameters
    ----------
    signal_power : float
        Transmitter constraint ``P``; codewords satisfy ``||x||^2 <= nP``.
    noise_power : float
        Jammer constraint ``N``; noise satisfies ``||s||^2 <= nN``.
    """

    signal_power: float
    noise_power: float

    def __post_init__(self):
        for name in ("signal_power", "noise_power"):
            v = float(getattr(self, name))
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")
            object.__setattr__(self, name, v)

    @property
    def P(self) -> float:
        return self.signal_power

    @property
    def N(self) -> float:
        return self.noise_power

    @property
    def plotkin_regime(self) -> bool:
        """True iff ``P <= 2N``, where the jammer can always match the signal."""
        return self.signal_power <= 2.0 * self.noise_power

    @property
    def snr_inv(self) -> float:
        return self.noise_power / self.signal_power

    @classmethod
    def from_ratio(cls, noise_over_signal: float, signal_power: float = 1.0) -> "ChannelParams":
        """Build parameters from the ratio ``N/P`` (with ``P`` defaulting to 1)."""
        return cls(signal_power, noise_over_signal * signal_power)


def default_theta(n: int) -> int:
    """Chunk length close to ``sqrt(n)`` that divides ``n`` exactly."""
    if n < 1:
        raise ValueError("n must be positive")
    root = math.sqrt(n)
    divisors = [d for d in range(1, n + 1) if n % d == 0]
    return min(divisors, key=lambda d: (abs(d - root), d))


@dataclass(frozen=True)
class BlockConfig:
    """Block length ``n`` split into ``K`` chunks of ``theta`` coordinates."""

    n: int
    theta: int
    num_chunks: int

    def __post_init__(self):
        if self.n < 1 or self.theta < 1 or self.num_chunks < 1:
            raise ValueError("n, theta and num_chunks must be positive integers")
        if self.theta * self.num_chunks != self.n:
            raise ValueError(
                f"theta * num_chunks must equal n ({self.theta} * {self.num_chunks} != {self.n})"
            )

    @property
    def K(self) -> int:
        return self.num_chunks

    @classmethod
    def from_n(cls, n: int, theta: Optional[int] = None) -> "BlockConfig":
        """Build a configuration, choosing ``theta ~ sqrt(n)`` when omitted."""
        if theta is None:
            theta = default_theta(n)
        if n % theta:
            raise ValueError(f"theta={theta} does not divide n={n}")
        return cls(n, theta, n // theta)


def _as_positive_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).ravel()
    if arr.size == 0:
        raise InvalidAllocation(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidAllocation(f"{name} contains non-finite values")
    if np.any(arr < EPS_POS):
        raise InvalidAllocation(f"{name} values must be >= {EPS_POS:g}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class _Sequence:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_positive_array(self.values, type(self).__name__))

    def __len__(self):
        return self.values.size

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def check_budget(self, budget: float) -> None:
        if not within_budget(self.total, budget):
            raise InvalidAllocation(
                f"{type(self).__name__} total {self.total:.12g} exceeds budget {budget:.12g}"
            )

    def __eq__(self, other):
        return type(self) is type(other) and np.array_equal(self.values, other.values)

    __hash__ = None


class PowerAllocation(_Sequence):
    """Per-coordinate average signal powers ``P_t`` (sum at most ``nP``)."""

    def validate(self, params: ChannelParams) -> "PowerAllocation":
        self.check_budget(self.n * params.signal_power)
        return self


class NoiseAllocation(_Sequence):
    """Per-coordinate noise powers ``N_t`` (sum at most ``nN``)."""

    def validate(self, params: ChannelParams) -> "NoiseAllocation":
        self.check_budget(self.n * params.noise_power)
        return self


@dataclass(frozen=True, eq=False)
class ChunkedAllocation(_Sequence):
    """Per-chunk powers ``Phi_T`` (signal role) or ``Psi_T`` (noise role).

    Accumulated noise powers may legitimately vanish on some chunks; pass
    ``nonnegative=True`` to accept zeros in that role.
    """

    nonnegative: bool = False

    def __post_init__(self):
        if not self.nonnegative:
            return super().__post_init__()
        arr = np.array(self.values, dtype=float).ravel()
        if arr.size == 0 or not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise InvalidAllocation("ChunkedAllocation values must be finite and >= 0")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def K(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class TwoLevelAllocation:
    """Sequence equal to ``low_level`` on ``1..nu`` and ``high_level`` afterwards."""

    transition: int
    low_level: float
    high_level: float

    def __post_init__(self):
        if int(self.transition) != self.transition or self.transition < 1:
            raise InvalidAllocation("transition must be a positive integer")
        object.__setattr__(self, "transition", int(self.transition))
        object.__setattr__(self, "low_level", float(self.low_level))
        object.__setattr__(self, "high_level", float(self.high_level))

    @property
    def nu(self) -> int:
        return self.transition

    def total(self, n: int) -> float:
        nu = min(self.transition, n)
        return nu * self.low_level + (n - nu) * self.high_level

    def expand(self, n: int) -> np.ndarray:
        if not 1 <= self.transition <= n:
            raise InvalidAllocation(f"transition {self.transition} outside [1, {n}]")
        out = np.full(n, self.high_level)
        out[: self.transition] = self.low_level
        return out


def expand_two_level(alloc: TwoLevelAllocation, n: int, budget: Optional[float] = None) -> PowerAllocation:
    """Expand a two-level description to a length-``n`` allocation.

    Parameters
    ----------
    alloc : TwoLevelAllocation
    n : int
    budget : float, optional
        Total budget the expansion must respect (``nP`` or ``nN``).

    Raises
    ------
    InvalidAllocation
        If the transition is out of range, a used level is non-positive, or
        the total exceeds ``budget``.
    """
    values = alloc.expand(n)
    result = PowerAllocation(values)
    if budget is not None:
        result.check_budget(budget)
    return result


def detect_two_level(values: Sequence[float], rtol: float = 1e-12) -> TwoLevelAllocation:
    """Recover ``(nu, low, high)`` from a two-level sequence.

    A constant sequence is reported with ``nu = n``.  Raises ValueError if the
    sequence takes more than two values or is not prefix/suffix structured.
    """
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("empty sequence")
    first = arr[0]
    close = np.isclose(arr, first, rtol=rtol, atol=0.0)
    if close.all():
        return TwoLevelAllocation(arr.size, first, first)
    nu = int(np.argmin(close))
    rest = arr[nu:]
    if close[nu:].any() or not np.allclose(rest, rest[0], rtol=rtol, atol=0.0):
        raise ValueError("sequence is not two-level")
    return TwoLevelAllocation(nu, first, rest[0])


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, _Sequence) else np.asarray(x, dtype=float).ravel()


def evaluate_objective(p, q, m: int) -> float:
    """Normalized objective ``(1/2n) sum_{t<=m} log2(P_t/N_t)``.

    ``n`` is the length of ``p``; ``q`` needs at least ``m`` entries.
    """
    pv, qv = _values(p), _values(q)
    n = pv.size
    if not 1 <= m <= n:
        raise ValueError(f"m={m} outside [1, {n}]")
    if qv.size < m:
        raise ValueError("noise allocation shorter than m")
    pp, qq = pv[:m], qv[:m]
    if np.any(qq <= 0):
        raise ValueError("noise powers must be positive")
    if np.any(qq > pp * (1 + BUDGET_RTOL)):
        raise ValueError("N_t > P_t for some t <= m")
    terms = np.log2(pp / np.minimum(qq, pp))
    return float(terms.sum() / (2 * n))


@dataclass(frozen=True)
class Slack:
    """Slack applied to the energy-bounding condition.

    ``tau`` scales the jammer's residual energy by ``1 - tau``; ``gamma``
    scales the transmitter's total energy by ``1 - gamma``.  Both zero is the
    reference condition.
    """

    tau: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.tau < 1.0 and 0.0 <= self.gamma < 1.0):
            raise ValueError("tau and gamma must lie in [0, 1)")

    @property
    def is_reference(self) -> bool:
        return self.tau == 0.0 and self.gamma == 0.0

    def james_budget(self, prefix_signal: float, n: int, params: ChannelParams) -> float:
        """Largest prefix noise energy for which the condition still holds.

        This is ``nN - ((1-gamma) nP - prefix_signal) / (2 (1-tau))``.  With
        no slack it equals ``B - G`` where ``B`` is half the prefix signal
        energy and ``G = n (P/2 - N)``.
        """
        alice_total = (1.0 - self.gamma) * n * params.signal_power
        return n * params.noise_power - (alice_total - prefix_signal) / (2.0 * (1.0 - self.tau))


REFERENCE = Slack()


def check_energy_bounding(p, q, m: int, params: ChannelParams, mode: Slack = REFERENCE) -> bool:
    """Test ``(1-gamma) nP - sum_{t<=m} P_t <= (1-tau)(2nN - 2 sum_{t<=m} N_t)``.

    ``n`` is the length of ``p``.  For chunk-level sequences use
    :func:`energy_bounding_margin` with the block length passed explicitly.
    """
    return energy_bounding_margin(p, q, m, params, mode) >= -BUDGET_RTOL * _scale(p, params)


def _scale(p, params: ChannelParams) -> float:
    n = _values(p).size
    return max(n * (params.signal_power + params.noise_power), 1.0)


def energy_bounding_margin(p, q, m: int, params: ChannelParams, mode: Slack = REFERENCE,
                           n: Optional[int] = None) -> float:
    """Right side minus left side of the energy-bounding inequality.

    ``n`` defaults to ``len(p)``; pass the block length explicitly when ``p``
    and ``q`` are chunk-level sequences.
    """
    pv, qv = _values(p), _values(q)
    if not 1 <= m <= pv.size:
        raise ValueError(f"m={m} outside [1, {pv.size}]")
    n = pv.size if n is None else n
    lhs = (1.0 - mode.gamma) * n * params.signal_power - pv[:m].sum()
    rhs = (1.0 - mode.tau) * (2.0 * n * params.noise_power - 2.0 * qv[:m].sum())
    return float(rhs - lhs)


@dataclass(frozen=True)
class SolverConfig:
    """Options for the outer bound searches.

    Parameters
    ----------
    tau, gamma : float
        Slack of the converse and achievability variants, in ``[0, 1)``.
    snr_grid_step : float
        Grid step of the prefix budget share ``s``.
    strict_first_crossing : bool
        Verify after the fact that the inner minimizer does not satisfy the
        energy-bounding condition at an earlier division point; violations are
        logged and do not change the value.
    refine : bool
        Run one round of local refinement (step/10) around the incumbent.
    workers : int
        Number of worker processes used for grid evaluation.
    """

    tau: float = 0.0
    gamma: float = 0.0
    snr_grid_step: float = 0.005
    strict_first_crossing: bool = False
    refine: bool = True
    workers: int = 1

    def __post_init__(self):
        if not self.snr_grid_step > 0:
            raise ValueError("snr_grid_step must be positive")
        if not (0.0 <= self.tau < 1.0 and 0.0 <= self.gamma < 1.0):
            raise ValueError("tau and gamma must lie in [0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def slack(self) -> Slack:
        return Slack(self.tau, self.gamma)
