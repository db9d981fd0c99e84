import json
import math

import numpy as np
import pytest

from causaljam.attack import plan_attack
from causaljam.bounds import solve_chunked_signal
from causaljam.codec import Codebook, budget_reference, generate_codebook, repetition_pair
from causaljam.model import BlockConfig, ChannelParams
from causaljam.sim import (
    WORKERS_ENV,
    AdversaryStrategy,
    TrialReport,
    attack_trial,
    codec_trial,
    default_workers,
    run_attack_trials,
    run_codec_trials,
    trial_rng,
    wilson_interval,
)


def make_code(n, theta, ratio, rate, seed=1):
    params = ChannelParams.from_ratio(ratio)
    block = BlockConfig(n, theta, n // theta)
    _, phi = solve_chunked_signal(params, block.K, theta)
    W = max(2, int(math.floor(2 ** (n * rate))))
    cb = generate_codebook(params, block, phi, 2, W, seed=seed)
    return params, cb, budget_reference(phi, params, block)


@pytest.fixture(scope="module")
def code64():
    return make_code(64, 8, 0.2, 6 / 64)


def check_report(rep):
    assert rep.errors + rep.erasures + rep.successes == rep.trials
    assert rep.estimate <= rep.max_error + 1e-12
    lo, hi = rep.interval
    assert lo <= rep.estimate <= hi


def test_no_noise_means_no_errors(code64):
    _, cb, ref = code64
    rep = run_codec_trials(cb, AdversaryStrategy("none"), 300, seed=1, reference=ref)
    check_report(rep)
    assert rep.errors == rep.erasures == 0
    assert rep.max_error == 0.0
    assert sum(rep.per_message_trials) == 300
    assert max(rep.per_message_trials) - min(rep.per_message_trials) <= 1


def test_reports_are_reproducible(code64):
    params, cb, ref = code64
    plan = plan_attack(cb.average_powers(), params)
    strategy = AdversaryStrategy("scaled_babble_push", plan=plan)
    a = run_codec_trials(cb, strategy, 120, seed=7, reference=ref)
    b = run_codec_trials(cb, strategy, 120, seed=7, reference=ref)
    c = run_codec_trials(cb, strategy, 120, seed=7, reference=ref, workers=2)
    assert a.to_json() == b.to_json() == c.to_json()
    check_report(a)


def test_trial_replay_matches_tally(code64):
    params, cb, ref = code64
    strategy = AdversaryStrategy("fixed_chunk_power", schedule=[ref.noise_total / 8] * 8)
    rep = run_codec_trials(cb, strategy, 50, seed=3, reference=ref)
    wrong = 0
    for trial in range(50):
        w, s, est = codec_trial(cb, strategy, ref, 3, trial)
        w2, s2, est2 = codec_trial(cb, strategy, ref, 3, trial)
        assert np.array_equal(s, s2) and est == est2
        assert np.dot(s, s) == pytest.approx(ref.noise_total)
        wrong += est != w
    assert wrong == rep.errors + rep.erasures


def test_trial_rng_streams_are_independent():
    a = trial_rng(1, 0).random(4)
    assert np.array_equal(a, trial_rng(1, 0).random(4))
    assert not np.array_equal(a, trial_rng(1, 1).random(4))
    assert not np.array_equal(a, trial_rng(2, 0).random(4))


def test_wilson_interval_formula():
    for k, n in ((0, 10), (3, 40), (40, 40), (117, 10_000)):
        z = 1.959963984540054
        p = k / n
        centre = (p + z * z / (2 * n)) / (1 + z * z / n)
        half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
        lo, hi = wilson_interval(k, n)
        assert lo == pytest.approx(max(0.0, centre - half), abs=1e-9)
        assert hi == pytest.approx(min(1.0, centre + half), abs=1e-9)


def test_strategy_validation():
    with pytest.raises(ValueError):
        AdversaryStrategy("babble_only")
    with pytest.raises(ValueError):
        AdversaryStrategy("fixed_chunk_power")
    with pytest.raises(ValueError):
        AdversaryStrategy("custom")
    with pytest.raises(ValueError):
        AdversaryStrategy("telepathy")


def test_custom_hook_sees_only_the_past(code64, rng):
    _, cb, _ = code64
    seen = []

    def hook(t, x_upto_t, rng):
        seen.append(x_upto_t.size)
        return 0.0

    x = np.arange(cb.n, dtype=float)
    AdversaryStrategy("custom", hook=hook).noise(cb, x, 0, rng)
    assert seen == list(range(1, cb.n + 1))


def test_chunk1_error_rate_below_frozen_threshold(code64):
    # calibration run: 0 errors in 10^3 trials; frozen threshold 1%
    _, cb, ref = code64
    strategy = AdversaryStrategy.all_in_chunk(0, ref.noise_total, cb.block.K)
    rep = run_codec_trials(cb, strategy, 500, seed=2, reference=ref)
    check_report(rep)
    assert rep.estimate <= 0.01


def test_error_rate_trend_over_n():
    # attack on codes at a fixed rate of 0.12 bit (about 1/6 of the chunked
    # lower bound at N/P = 0.35); calibration observed 16/400, 0/400, 0/400
    rates = []
    for n, theta in ((36, 6), (64, 8), (100, 10)):
        params, cb, ref = make_code(n, theta, 0.35, 0.12)
        plan = plan_attack(cb.average_powers(), params)
        rep = run_codec_trials(cb, AdversaryStrategy("scaled_babble_push", plan=plan), 400,
                               seed=3, reference=ref)
        check_report(rep)
        rates.append(rep)
    inversions = 0
    for a, b in zip(rates, rates[1:]):
        if b.estimate > a.estimate:
            inversions += 1
            assert b.estimate <= a.interval[1]
    assert inversions <= 1
    assert rates[-1].estimate <= rates[0].estimate


def test_attack_single_message_never_confuses(rng):
    cb = Codebook.from_entries(np.ones((1, 2, 1, 1)))
    plan = plan_attack(cb.average_powers(), ChannelParams(1.0, 0.6))
    rep = run_attack_trials(cb, plan, 200, seed=1)
    assert rep.confusions == 0


def test_attack_report_fields_and_replay():
    params = ChannelParams(1.0, 0.6)
    cb = repetition_pair(2, 1.0)
    plan = plan_attack(cb.average_powers(), params)
    rep = run_attack_trials(cb, plan, 2000, seed=5)
    d = json.loads(rep.to_json())
    assert d["confusions"] == rep.confusions > 0
    assert d["confusion_low"] > 0
    check_report(rep)
    conf = sum(attack_trial(cb, plan, None, 5, t)[0].confused for t in range(2000))
    assert conf == rep.confusions


def test_merge_is_associative(code64):
    _, cb, ref = code64
    strategy = AdversaryStrategy.all_in_chunk(1, ref.noise_total, cb.block.K)
    one = run_codec_trials(cb, strategy, 90, seed=4, reference=ref, workers=1)
    three = run_codec_trials(cb, strategy, 90, seed=4, reference=ref, workers=3)
    assert one.to_dict() == three.to_dict()


def test_default_workers_from_environment(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert default_workers() == 3
    monkeypatch.setenv(WORKERS_ENV, "zero")
    assert default_workers() == 1
    monkeypatch.delenv(WORKERS_ENV)
    assert default_workers() == 1


def test_empty_report_properties():
    rep = TrialReport(0, 0, 0, 0, 0, [0], [0], seed=1)
    assert rep.estimate == 0.0
    assert rep.max_error == 0.0
    assert rep.confusion_rate is None
