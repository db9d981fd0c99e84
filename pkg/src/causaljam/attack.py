"""Two-stage causal jamming attack against a finite chunked code.

Up to the division point ``m*`` the jammer babbles: it cancels a fraction
``N*_t/P_t`` of the transmitted symbol and adds independent Gaussian noise.
After ``m*`` it draws a decoy message ``U`` from the exact posterior given
the received prefix, draws a suffix for ``U`` from the encoder, and pushes
the received suffix to the midpoint between the true and the decoy suffix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .codec import Codebook, encode
from .model import ChannelParams, NoiseAllocation, PowerAllocation, Slack
from .waterfill import inner_min

__all__ = [
    "DEFAULT_EPSILON",
    "DEFAULT_TAU",
    "MAX_POSTERIOR_TERMS",
    "NoAttack",
    "PosteriorTooLarge",
    "AttackPlan",
    "AttackOutcome",
    "plan_attack",
    "babble_step",
    "posterior_probabilities",
    "posterior_sample_message",
    "push_step",
    "jam",
    "execute_attack",
]

DEFAULT_EPSILON = 0.1
DEFAULT_TAU = 0.05

#: Default cap on ``num_messages * sum over prefix chunks of candidates``.
MAX_POSTERIOR_TERMS = 10 ** 6


class NoAttack(ValueError):
    """Every division point is infeasible under the slack condition."""


class PosteriorTooLarge(ValueError):
    """Exact posterior enumeration would exceed the configured cap."""


@dataclass(frozen=True)
class AttackPlan:
    """Division point, babble parameters and budget of the attack.

    Attributes
    ----------
    m : int
        Division point ``m*`` (number of babbled coordinates).
    noise_prefix : NoiseAllocation
        Water-filled noise powers ``N*_1..N*_m``.
    powers : ndarray
        Average signal powers ``P_t`` of the target code (length ``n``).
    babble_variances : ndarray
        ``N*_t (1 - N*_t/P_t) / (1 + epsilon)`` for ``t <= m``.
    epsilon, tau : float
    noise_budget : float
        ``nN``; the attack is aborted when the noise energy exceeds it.
    """

    m: int
    noise_prefix: NoiseAllocation
    powers: np.ndarray
    babble_variances: np.ndarray
    epsilon: float
    tau: float
    noise_budget: float

    @property
    def n(self) -> int:
        return self.powers.size

    @property
    def scales(self) -> np.ndarray:
        """Cancellation factors ``N*_t / P_t`` on the prefix."""
        return self.noise_prefix.values / self.powers[: self.m]


@dataclass(frozen=True)
class AttackOutcome:
    """Noise emitted in one run of the attack.

    ``fake_message`` and ``push_target`` are None when ``m* = n`` (no push
    stage).  ``aborted`` is True iff ``||s||^2 > nN``.
    """

    noise: np.ndarray
    aborted: bool
    fake_message: Optional[int]
    push_target: Optional[np.ndarray]
    codeword: np.ndarray
    true_message: Optional[int] = None

    @property
    def received(self) -> np.ndarray:
        return self.codeword + self.noise

    @property
    def confused(self) -> bool:
        """The decoy differs from the true message and the attack stayed in budget."""
        return (not self.aborted and self.fake_message is not None
                and self.fake_message != self.true_message)


def plan_attack(code_avg_powers, params: ChannelParams, tau: float = DEFAULT_TAU,
                epsilon: float = DEFAULT_EPSILON) -> AttackPlan:
    """Solve the slack inner problem against the code's average powers.

    Raises
    ------
    NoAttack
        If no division point satisfies the slack energy-bounding condition.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    p = code_avg_powers if isinstance(code_avg_powers, PowerAllocation) else PowerAllocation(code_avg_powers)
    res = inner_min(p, params, Slack(tau=tau))
    if not res.feasible:
        raise NoAttack("no division point satisfies the energy-bounding condition")
    q = res.solution.noise_prefix
    P = p.values[: res.m]
    var = np.maximum(q * (1.0 - q / P), 0.0) / (1.0 + epsilon)
    var.setflags(write=False)
    return AttackPlan(res.m, NoiseAllocation(q), p.values, var, float(epsilon), float(tau),
                      p.n * params.noise_power)


def babble_step(plan: AttackPlan, x_t: float, t: int, rng: np.random.Generator) -> float:
    """Noise on prefix coordinate ``t`` (0-based, ``t < m*``): ``Z_t - (N*_t/P_t) x_t``."""
    if not 0 <= t < plan.m:
        raise IndexError(f"coordinate {t} is not in the babble prefix")
    var = plan.babble_variances[t]
    z = rng.normal(0.0, math.sqrt(var)) if var > 0 else 0.0
    return z - plan.noise_prefix.values[t] / plan.powers[t] * x_t


def push_step(x_t: float, xbar_t: float) -> float:
    """Noise on a suffix coordinate: half the way from ``x_t`` to ``xbar_t``."""
    return (xbar_t - x_t) / 2.0


def _chunk_loglik(codebook: Codebook, y_prefix, plan: AttackPlan, max_terms: int):
    """Per prefix chunk, the log-likelihood array of shape (messages, candidates)."""
    m = plan.m
    y = np.asarray(y_prefix, dtype=float)
    if y.size != m:
        raise ValueError("y_prefix must have m* entries")
    chunks = codebook.prefix_entries(m)
    terms = codebook.num_messages * sum(c.shape[1] for c in chunks)
    if terms > max_terms:
        raise PosteriorTooLarge(f"{terms} likelihood terms exceed the cap {max_terms}")
    gain = 1.0 - plan.scales
    var = plan.babble_variances
    theta = codebook.block.theta
    out = []
    for T, xs in enumerate(chunks):
        sl = slice(T * theta, T * theta + xs.shape[2])
        g, v, yy = gain[sl], var[sl], y[sl]
        # coordinates with zero gain carry no information about the codeword
        use = g != 0
        ll = np.zeros(xs.shape[:2])
        if use.any():
            resid = yy[use] - g[use] * xs[:, :, use]
            ll = -0.5 * np.sum(resid ** 2 / v[use], axis=2)
        out.append(ll)
    return out


def posterior_probabilities(codebook: Codebook, y_prefix, plan: AttackPlan,
                            max_terms: int = MAX_POSTERIOR_TERMS) -> np.ndarray:
    """Exact posterior of the message given the babbled prefix (uniform prior).

    The likelihood of a message is a product over prefix chunks of the mean,
    over that chunk's equiprobable candidates, of the Gaussian density of the
    received coordinates.
    """
    logs = np.zeros(codebook.num_messages)
    for ll in _chunk_loglik(codebook, y_prefix, plan, max_terms):
        logs += logsumexp(ll, axis=1) - math.log(ll.shape[1])
    return np.exp(logs - logsumexp(logs))


def posterior_sample_message(codebook: Codebook, y_prefix, plan: AttackPlan, rng: np.random.Generator,
                             max_terms: int = MAX_POSTERIOR_TERMS) -> int:
    """Draw the decoy message from the exact posterior."""
    probs = posterior_probabilities(codebook, y_prefix, plan, max_terms)
    return int(rng.choice(probs.size, p=probs))


def _decoy_suffix(codebook: Codebook, u: int, y_prefix, plan: AttackPlan, rng: np.random.Generator,
                  condition_on_prefix: bool, max_terms: int) -> np.ndarray:
    theta, K = codebook.block.theta, codebook.block.K
    m = plan.m
    E = codebook.entries_per_chunk
    idx = rng.integers(E, size=K)
    if condition_on_prefix and m % theta:
        # the chunk straddling m*: weight its candidates by the prefix likelihood
        ll = _chunk_loglik(codebook, y_prefix, plan, max_terms)[-1][u]
        w = np.exp(ll - logsumexp(ll))
        idx[m // theta] = rng.choice(E, p=w)
    full = codebook.entries[u, np.arange(K), idx].reshape(-1)
    return full[m:].copy()


def jam(codebook: Codebook, x, plan: AttackPlan, rng: np.random.Generator, *,
        true_message: Optional[int] = None, condition_on_prefix: bool = False,
        max_terms: int = MAX_POSTERIOR_TERMS) -> AttackOutcome:
    """Run the attack on a given codeword, one coordinate at a time.

    Parameters
    ----------
    condition_on_prefix : bool
        Draw the decoy's candidate in the chunk straddling ``m*`` from its
        posterior given the received prefix instead of uniformly.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n != plan.n or n != codebook.n:
        raise ValueError("codeword, plan and codebook lengths differ")
    m = plan.m
    s = np.zeros(n)
    for t in range(m):
        s[t] = babble_step(plan, x[t], t, rng)
    u = xbar = None
    if m < n:
        y_prefix = x[:m] + s[:m]
        u = posterior_sample_message(codebook, y_prefix, plan, rng, max_terms)
        xbar = _decoy_suffix(codebook, u, y_prefix, plan, rng, condition_on_prefix, max_terms)
        for t in range(m, n):
            s[t] = push_step(x[t], xbar[t - m])
    energy = float(np.dot(s, s))
    aborted = energy > plan.noise_budget
    return AttackOutcome(s, aborted, u, xbar, x.copy(), true_message)


def execute_attack(codebook: Codebook, w: int, plan: AttackPlan, rng: np.random.Generator,
                   **kwargs) -> AttackOutcome:
    """Encode message ``w`` with the code's stochastic encoder and attack it."""
    x = encode(codebook, w, rng)
    return jam(codebook, x, plan, rng, true_message=w, **kwargs)
