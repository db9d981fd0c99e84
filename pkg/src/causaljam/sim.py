"""Monte-Carlo harness for the codec and the attack.

Each trial draws from its own generator seeded by ``(master seed, trial
index)``, so any trial can be replayed in isolation and reports do not
depend on how trials are split across worker processes.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import binomtest

from .attack import AttackPlan, babble_step, jam
from .codec import ERROR, BudgetReference, Codebook, chunk_distances, decode, encode

__all__ = [
    "WORKERS_ENV",
    "default_workers",
    "trial_rng",
    "AdversaryStrategy",
    "TrialReport",
    "wilson_interval",
    "nearest_message",
    "codec_trial",
    "attack_trial",
    "run_codec_trials",
    "run_attack_trials",
    "write_report",
]

#: Environment variable holding the default number of worker processes.
WORKERS_ENV = "CAUSALJAM_WORKERS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent generator for one trial."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial)]))


def wilson_interval(k: int, n: int, confidence: float = 0.95):
    """Wilson score interval for ``k`` successes out of ``n``."""
    if n == 0:
        return (0.0, 1.0)
    ci = binomtest(int(k), int(n)).proportion_ci(confidence, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass(frozen=True)
class AdversaryStrategy:
    """Causal noise generator used by :func:`run_codec_trials`.

    Kinds
    -----
    ``none``
        No noise.
    ``babble_only``
        The babble stage of ``plan`` on its prefix, zero afterwards.
    ``scaled_babble_push``
        The full two-stage attack of ``plan``.
    ``fixed_chunk_power``
        Noise of energy ``schedule[T]`` in chunk ``T`` along a uniformly
        random direction, independent of the codeword.
    ``custom``
        ``hook(t, x_upto_t, rng) -> s_t`` called once per coordinate with
        the codeword revealed up to and including ``t``.
    """

    kind: str = "none"
    plan: Optional[AttackPlan] = None
    schedule: Optional[tuple] = None
    hook: Optional[Callable] = None

    KINDS = ("none", "babble_only", "scaled_babble_push", "fixed_chunk_power", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind in ("babble_only", "scaled_babble_push") and self.plan is None:
            raise ValueError(f"{self.kind} needs a plan")
        if self.kind == "fixed_chunk_power":
            if self.schedule is None:
                raise ValueError("fixed_chunk_power needs a schedule")
            object.__setattr__(self, "schedule", tuple(float(v) for v in self.schedule))
        if self.kind == "custom" and self.hook is None:
            raise ValueError("custom needs a hook")

    @classmethod
    def all_in_chunk(cls, chunk: int, energy: float, K: int) -> "AdversaryStrategy":
        sched = [0.0] * K
        sched[chunk] = energy
        return cls("fixed_chunk_power", schedule=tuple(sched))

    def noise(self, codebook: Codebook, x: np.ndarray, w: int, rng: np.random.Generator) -> np.ndarray:
        n = x.size
        if self.kind == "none":
            return np.zeros(n)
        if self.kind == "babble_only":
            s = np.zeros(n)
            for t in range(self.plan.m):
                s[t] = babble_step(self.plan, x[t], t, rng)
            return s
        if self.kind == "scaled_babble_push":
            return jam(codebook, x, self.plan, rng, true_message=w).noise
        if self.kind == "fixed_chunk_power":
            theta = codebook.block.theta
            if len(self.schedule) != codebook.block.K:
                raise ValueError("schedule must have one energy per chunk")
            g = rng.standard_normal((codebook.block.K, theta))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            return (g * np.sqrt(np.asarray(self.schedule))[:, None]).reshape(-1)
        s = np.zeros(n)
        for t in range(n):
            s[t] = self.hook(t, x[: t + 1].copy(), rng)
        return s

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.plan is not None:
            d.update(m=self.plan.m, epsilon=self.plan.epsilon, tau=self.plan.tau)
        if self.schedule is not None:
            d["schedule"] = list(self.schedule)
        return d


@dataclass
class TrialReport:
    """Tally of a Monte-Carlo run.

    ``errors`` counts decisions for a wrong message and ``erasures`` counts
    :data:`ERROR` outputs, so ``errors + erasures + successes == trials``.
    ``estimate`` is the overall error rate (wrong or erased) with its Wilson
    95% interval; ``max_error`` is the largest per-message error rate.
    """

    trials: int
    errors: int
    erasures: int
    successes: int
    aborted: int
    per_message_errors: list
    per_message_trials: list
    seed: int
    confusions: Optional[int] = None
    config: dict = field(default_factory=dict)

    @property
    def estimate(self) -> float:
        return (self.errors + self.erasures) / self.trials if self.trials else 0.0

    @property
    def interval(self):
        return wilson_interval(self.errors + self.erasures, self.trials)

    @property
    def max_error(self) -> float:
        rates = [e / t for e, t in zip(self.per_message_errors, self.per_message_trials) if t]
        return max(rates) if rates else 0.0

    @property
    def confusion_rate(self) -> Optional[float]:
        return None if self.confusions is None else self.confusions / self.trials

    @property
    def confusion_interval(self):
        return None if self.confusions is None else wilson_interval(self.confusions, self.trials)

    def to_dict(self) -> dict:
        d = asdict(self)
        lo, hi = self.interval
        d.update(estimate=self.estimate, interval_low=lo, interval_high=hi, max_error=self.max_error)
        if self.confusions is not None:
            clo, chi = self.confusion_interval
            d.update(confusion_rate=self.confusion_rate, confusion_low=clo, confusion_high=chi)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @staticmethod
    def merge(parts, seed: int, config: dict, track_confusions: bool = False) -> "TrialReport":
        W = len(parts[0]["per_message_errors"])
        total = {k: 0 for k in ("trials", "errors", "erasures", "successes", "aborted", "confusions")}
        pme, pmt = np.zeros(W, dtype=int), np.zeros(W, dtype=int)
        for p in parts:
            for k in total:
                total[k] += p[k]
            pme += p["per_message_errors"]
            pmt += p["per_message_trials"]
        conf = total.pop("confusions")
        if not track_confusions:
            conf = None
        return TrialReport(per_message_errors=pme.tolist(), per_message_trials=pmt.tolist(),
                           seed=int(seed), confusions=conf, config=config, **total)


def nearest_message(codebook: Codebook, y) -> int:
    """Message with the closest codeword (lowest id on ties)."""
    return int(np.argmin(chunk_distances(codebook, y).sum(axis=1)))


def _tally(W: int):
    return {"trials": 0, "errors": 0, "erasures": 0, "successes": 0, "aborted": 0,
            "confusions": 0, "per_message_errors": np.zeros(W, dtype=int),
            "per_message_trials": np.zeros(W, dtype=int)}


def _record(t, w, est):
    t["trials"] += 1
    t["per_message_trials"][w] += 1
    if est == w:
        t["successes"] += 1
        return
    if est == ERROR:
        t["erasures"] += 1
    else:
        t["errors"] += 1
    t["per_message_errors"][w] += 1


def _decide(codebook, reference, y, rng, randomize):
    if reference is None:
        return nearest_message(codebook, y)
    return decode(codebook, reference, y, rng, randomize=randomize).estimate


def codec_trial(codebook: Codebook, strategy: AdversaryStrategy, reference: BudgetReference,
                seed: int, trial: int, randomize: bool = False):
    """Replay one codec trial: returns ``(w, noise, estimate)``."""
    rng = trial_rng(seed, trial)
    w = trial % codebook.num_messages
    x = encode(codebook, w, rng)
    s = strategy.noise(codebook, x, w, rng)
    est = _decide(codebook, reference, x + s, rng, randomize)
    return w, s, est


def _codec_block(args):
    codebook, strategy, reference, seed, lo, hi, randomize, budget = args
    t = _tally(codebook.num_messages)
    for trial in range(lo, hi):
        w, s, est = codec_trial(codebook, strategy, reference, seed, trial, randomize)
        if float(np.dot(s, s)) > budget * (1 + 1e-12):
            t["aborted"] += 1
        _record(t, w, est)
    return t


def attack_trial(codebook: Codebook, plan: AttackPlan, reference: Optional[BudgetReference],
                 seed: int, trial: int, **kwargs):
    """Replay one attack trial: returns ``(outcome, estimate)``."""
    rng = trial_rng(seed, trial)
    w = int(rng.integers(codebook.num_messages))
    x = encode(codebook, w, rng)
    out = jam(codebook, x, plan, rng, true_message=w, **kwargs)
    est = _decide(codebook, reference, out.received, rng, False)
    return out, est


def _attack_block(args):
    codebook, plan, reference, seed, lo, hi, kwargs = args
    t = _tally(codebook.num_messages)
    for trial in range(lo, hi):
        out, est = attack_trial(codebook, plan, reference, seed, trial, **kwargs)
        t["aborted"] += int(out.aborted)
        t["confusions"] += int(out.confused)
        _record(t, out.true_message, est)
    return t


def _run_blocks(func, make_args, trials: int, workers: int):
    workers = max(1, min(workers, trials))
    edges = np.linspace(0, trials, workers + 1).astype(int)
    jobs = [make_args(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
    if workers == 1:
        return [func(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, jobs))


def run_codec_trials(codebook: Codebook, strategy: AdversaryStrategy, trials: int, seed: int, *,
                     reference: Optional[BudgetReference] = None, noise_budget: Optional[float] = None,
                     randomize: bool = False, workers: Optional[int] = None) -> TrialReport:
    """Encode, jam and decode ``trials`` times, cycling through the messages.

    Decoding uses the list-and-check decoder when ``reference`` is given and
    the nearest-codeword rule otherwise.  Trials whose noise exceeds
    ``noise_budget`` (default ``reference.noise_total``) are counted as
    aborted but still decoded.
    """
    workers = default_workers() if workers is None else workers
    if noise_budget is None:
        noise_budget = reference.noise_total if reference is not None else math.inf
    parts = _run_blocks(
        _codec_block,
        lambda a, b: (codebook, strategy, reference, seed, a, b, randomize, noise_budget),
        trials, workers)
    config = {"command": "codec", "strategy": strategy.describe(), "num_messages": codebook.num_messages,
              "n": codebook.n, "theta": codebook.block.theta, "beta": codebook.beta,
              "decoder": "list" if reference is not None else "nearest"}
    if reference is not None:
        config.update(mu0=reference.mu0, delta=reference.delta, k_delta=reference.k_delta)
    return TrialReport.merge(parts, seed, config)


def run_attack_trials(codebook: Codebook, plan: AttackPlan, trials: int, seed: int, *,
                      reference: Optional[BudgetReference] = None, workers: Optional[int] = None,
                      **kwargs) -> TrialReport:
    """Run the two-stage attack against uniformly drawn messages.

    Besides the decoder's errors, the report counts ``confusions``: trials
    where the decoy differs from the true message and the noise stayed
    within ``nN``.
    """
    workers = default_workers() if workers is None else workers
    parts = _run_blocks(_attack_block,
                        lambda a, b: (codebook, plan, reference, seed, a, b, kwargs),
                        trials, workers)
    config = {"command": "attack", "m": plan.m, "epsilon": plan.epsilon,
              "tau": plan.tau, "num_messages": codebook.num_messages, "n": codebook.n,
              "decoder": "list" if reference is not None else "nearest"}
    return TrialReport.merge(parts, seed, config, track_confusions=True)


def write_report(report: TrialReport, path) -> None:
    with open(path, "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")
