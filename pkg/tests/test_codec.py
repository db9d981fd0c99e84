import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from causaljam.codec import (
    ERROR,
    Codebook,
    CodebookTooLarge,
    ConfigurationError,
    accumulated_power,
    budget_reference,
    check_chunk_sums,
    chunk_sum_bounds,
    critical_point,
    decode,
    encode,
    generate_codebook,
    load_codebook,
    post_list,
    pre_list,
    repetition_pair,
    sample_uniform_ball,
    save_codebook,
)
from causaljam.bounds import solve_chunked_signal
from causaljam.model import BlockConfig, ChannelParams, ChunkedAllocation
from causaljam.sim import AdversaryStrategy, run_codec_trials

# Chunk-sum constants calibrated once over the solved chunk energies for
# n in {36, 64, 100} and N/P in {0.1, ..., 0.45} (observed range of
# Phi_T / theta: 0.4905 .. 2.019), then frozen with a margin.
C1, C2 = 0.45, 2.1

PARAMS = ChannelParams(1.0, 0.2)
BLOCK = BlockConfig(64, 8, 8)


@pytest.fixture(scope="module")
def code64():
    _, phi = solve_chunked_signal(PARAMS, BLOCK.K, BLOCK.theta)
    cb = generate_codebook(PARAMS, BLOCK, phi, beta=2, num_messages=64, seed=11)
    return cb, budget_reference(phi, PARAMS, BLOCK)


@pytest.fixture(scope="module")
def small_code():
    params = ChannelParams(4.0, 1.0)
    block = BlockConfig(16, 4, 4)
    phi = ChunkedAllocation([16.0] * 4)
    cb = generate_codebook(params, block, phi, beta=2, num_messages=5, seed=3)
    return cb, budget_reference(phi, params, block, delta=0.25)


def test_generate_small_and_deterministic():
    params = ChannelParams(1.0, 0.2)
    block = BlockConfig(4, 4, 1)
    phi = ChunkedAllocation([4.0])
    cb = generate_codebook(params, block, phi, beta=1, num_messages=1, seed=5)
    assert cb.entries.shape == (1, 1, 2, 4)
    assert np.all(np.sum(cb.entries ** 2, axis=-1) <= 4.0)
    again = generate_codebook(params, block, phi, beta=1, num_messages=1, seed=5)
    assert np.array_equal(cb.entries, again.entries)
    other = generate_codebook(params, block, phi, beta=1, num_messages=1, seed=6)
    assert not np.array_equal(cb.entries, other.entries)


def test_generate_rejects_bad_inputs():
    params = ChannelParams(1.0, 0.2)
    block = BlockConfig(4, 2, 2)
    with pytest.raises(ValueError):
        generate_codebook(params, block, ChunkedAllocation([3.0, 3.0]), 1, 2, seed=0)
    with pytest.raises(CodebookTooLarge):
        generate_codebook(params, block, ChunkedAllocation([2.0, 2.0]), 4, 100, seed=0, max_floats=1000)
    with pytest.raises(ValueError):
        generate_codebook(params, block, ChunkedAllocation([2.0, 2.0]), 0, 2, seed=0)


def test_codebook_rejects_entries_above_cap():
    e = np.ones((1, 1, 1, 2))
    with pytest.raises(ValueError):
        Codebook.from_entries(e, phi=[1.0])


def test_ball_sampler_theta1_moments(rng):
    x = sample_uniform_ball(1, 1.0, rng, size=100_000)[:, 0]
    assert abs(x.mean()) < 4 * math.sqrt(1 / 3 / x.size)
    assert np.mean(x ** 2) == pytest.approx(1 / 3, abs=4 * np.std(x ** 2) / math.sqrt(x.size))
    assert np.all(np.abs(x) <= 1.0)


def test_ball_sampler_theta2_radius_law(rng):
    x = sample_uniform_ball(2, 1.5, rng, size=20_000)
    r2 = np.sum(x ** 2, axis=1) / 1.5 ** 2
    assert stats.kstest(r2, "uniform").pvalue > 1e-3


@given(st.integers(1, 64), st.floats(0.01, 100.0), st.integers(0, 2 ** 32 - 1))
def test_ball_sampler_inside(theta, radius, seed):
    x = sample_uniform_ball(theta, radius, np.random.default_rng(seed), size=8)
    assert np.all(np.linalg.norm(x, axis=1) <= radius)


def test_ball_sampler_validation(rng):
    with pytest.raises(ValueError):
        sample_uniform_ball(0, 1.0, rng)
    with pytest.raises(ValueError):
        sample_uniform_ball(3, 0.0, rng)


def test_encode_single_entry_is_deterministic(rng):
    cb = repetition_pair(3, 2.0)
    assert np.allclose(encode(cb, 0, rng), math.sqrt(2.0))
    assert np.allclose(encode(cb, 1, rng), -math.sqrt(2.0))
    with pytest.raises(ValueError):
        encode(cb, 2, rng)


def test_encode_membership_and_uniformity(code64, rng):
    cb, _ = code64
    counts = np.zeros((cb.block.K, cb.entries_per_chunk), dtype=int)
    for _ in range(10_000):
        x = encode(cb, 7, rng).reshape(cb.block.K, cb.block.theta)
        for T in range(cb.block.K):
            hit = np.flatnonzero(np.all(cb.entries[7, T] == x[T], axis=1))
            assert hit.size == 1
            counts[T, hit[0]] += 1
    assert np.sum(x ** 2) <= cb.phi.total * (1 + 1e-12)
    for T in range(cb.block.K):
        assert stats.chisquare(counts[T]).pvalue > 1e-4


def test_budget_reference_example():
    params = ChannelParams(4.0, 1.0)
    ref = budget_reference([16.0] * 4, params, BlockConfig(16, 4, 4), delta=0.25)
    assert np.allclose(ref.F, [0, 8, 16, 16])
    assert ref.mu0 == 1
    assert ref.at(5) == 16.0


def test_budget_reference_plotkin_boundary():
    with pytest.raises(ConfigurationError):
        budget_reference([16.0] * 4, ChannelParams(4.0, 2.0), BlockConfig(16, 4, 4), delta=0.25)


def test_budget_reference_without_starting_point():
    # two chunks: F_1 = nN whatever delta is
    with pytest.raises(ConfigurationError):
        budget_reference([32.0, 32.0], PARAMS, BlockConfig(64, 32, 2))


def test_budget_reference_halves_delta():
    params = ChannelParams(1.0, 0.4)
    _, phi = solve_chunked_signal(params, 10, 10)
    with pytest.warns(UserWarning):
        ref = budget_reference(phi, params, BlockConfig(100, 10, 10), delta=0.4)
    assert ref.delta < 0.4
    assert ref.F[0] <= 0


@given(st.lists(st.floats(0.1, 50.0), min_size=3, max_size=12), st.floats(0.01, 0.2))
def test_reference_nondecreasing(phi, ratio):
    K = len(phi)
    total = float(np.sum(phi))
    params = ChannelParams(total / K, ratio * total / K)
    try:
        ref = budget_reference(phi, params, BlockConfig(K, 1, K), delta=0.1)
    except ConfigurationError:
        return
    assert np.all(np.diff(ref.F) >= 0)
    assert ref.F[ref.mu0 - 1] <= 0 < ref.F[ref.mu0]
    assert 1 <= ref.mu0 <= K - ref.k_delta - 1


def test_chunk_sum_assertion(code64):
    cb, ref = code64
    c1, c2 = chunk_sum_bounds(cb.phi, cb.block.theta)
    assert C1 <= c1 <= c2 <= C2
    check_chunk_sums(cb.phi, ref, cb.block.theta, C1, C2)
    with pytest.raises(AssertionError):
        check_chunk_sums(cb.phi, ref, cb.block.theta, 2.0, 3.0)


def _concatenations(cb, w, chunks):
    E = cb.entries_per_chunk
    for idx in itertools.product(range(E), repeat=len(chunks)):
        yield np.concatenate([cb.entries[w, T, i] for T, i in zip(chunks, idx)])


def test_lists_against_exhaustive_enumeration(small_code, rng):
    cb, ref = small_code
    K, theta = cb.block.K, cb.block.theta
    for _ in range(5):
        x = encode(cb, int(rng.integers(5)), rng)
        y = x + rng.normal(0, 1.2, size=x.size)
        for mu in range(ref.mu0, K + 1):
            pre = pre_list(cb, y[: mu * theta], mu, ref)
            post = post_list(cb, pre, y[mu * theta:], mu, ref)
            pre_bf, post_bf = [], []
            for w in range(cb.num_messages):
                d_pre = min(np.sum((c - y[: mu * theta]) ** 2) for c in _concatenations(cb, w, range(mu)))
                if d_pre <= ref.at(mu + 1) + ref.tol:
                    pre_bf.append(w)
                    if mu == K:
                        d_post = 0.0
                    else:
                        d_post = min(np.sum((c - y[mu * theta:]) ** 2)
                                     for c in _concatenations(cb, w, range(mu, K)))
                    if d_post <= ref.noise_total - ref.at(mu) + ref.tol:
                        post_bf.append(w)
            assert list(pre) == pre_bf
            assert list(post) == post_bf
            assert set(post) <= set(pre)


def test_list_edge_cases(small_code, rng):
    cb, ref = small_code
    x = encode(cb, 2, rng)
    mu = ref.mu0
    theta = cb.block.theta
    assert 2 in pre_list(cb, x[: mu * theta], mu, ref)
    assert 2 in post_list(cb, [2], x[mu * theta:], mu, ref)
    assert post_list(cb, [], x[mu * theta:], mu, ref).size == 0


def test_negative_reference_gives_empty_pre_list(code64, rng):
    cb, ref = code64
    theta = cb.block.theta
    assert ref.mu0 >= 2 and ref.at(2) < 0
    x = encode(cb, 4, rng)
    assert pre_list(cb, x[:theta], 1, ref).size == 0


def test_decode_noiseless_and_single_message(code64, rng):
    cb, ref = code64
    for w in range(0, 64, 9):
        out = decode(cb, ref, encode(cb, w, rng))
        assert out.estimate == w
        assert out.stop_chunk == ref.mu0
    single = Codebook.from_entries(cb.entries[:1], phi=cb.phi.values)
    y = encode(single, 0, rng) + rng.normal(0, math.sqrt(0.1), size=64)
    assert decode(single, ref, y).estimate == 0


def test_decode_returns_error_when_nothing_survives(code64):
    cb, ref = code64
    out = decode(cb, ref, np.full(64, 50.0))
    assert out.estimate == ERROR
    assert out.is_error
    assert out.stop_chunk == cb.block.K
    assert len(out.list_trace) == cb.block.K - ref.mu0 + 1


def test_decode_random_tie_break(code64, rng):
    cb, ref = code64
    y = encode(cb, 3, rng)
    assert decode(cb, ref, y, rng, randomize=True).estimate == 3
    with pytest.raises(ValueError):
        decode(cb, ref, y, None, randomize=True)


def test_decoder_stops_by_critical_point(code64, rng):
    cb, ref = code64
    K, theta = cb.block.K, cb.block.theta
    nN = ref.noise_total
    for _ in range(200):
        # prescribe chunk energies with total nN, then draw directions
        psi = rng.dirichlet(np.full(K, 0.5)) * nN * rng.uniform(0.3, 1.0)
        g = rng.standard_normal((K, theta))
        s = (g / np.linalg.norm(g, axis=1, keepdims=True) * np.sqrt(psi)[:, None]).ravel()
        acc = accumulated_power(s, theta)
        assert np.allclose(acc.values, psi)
        mu1 = critical_point(acc, ref)
        assert mu1 is not None
        S = np.cumsum(psi)
        assert S[mu1 - 1] >= ref.at(mu1) - ref.tol
        assert S[mu1] < ref.at(mu1 + 1) + ref.tol
        w = int(rng.integers(cb.num_messages))
        x = encode(cb, w, rng)
        out = decode(cb, ref, x + s)
        assert out.stop_chunk <= mu1
        mu = out.stop_chunk
        pre = pre_list(cb, (x + s)[: mu * theta], mu, ref)
        assert w in post_list(cb, pre, (x + s)[mu * theta:], mu, ref)


def test_chunk1_adversary_frozen_threshold(code64):
    # Calibration run (seed 2, 10^3 trials) observed 0 errors; the frozen
    # acceptance level is 99% correct decisions.
    cb, ref = code64
    strategy = AdversaryStrategy.all_in_chunk(0, ref.noise_total, cb.block.K)
    rep = run_codec_trials(cb, strategy, 1000, seed=2, reference=ref)
    assert rep.successes >= 990


def test_accumulated_power_examples(rng):
    assert np.allclose(accumulated_power([1, 1, 2, 2], 2).values, [2, 8])
    assert np.all(accumulated_power(np.zeros(6), 3).values == 0)
    s = rng.normal(size=24)
    assert accumulated_power(s, 4).total == pytest.approx(np.dot(s, s))
    with pytest.raises(ValueError):
        accumulated_power(np.ones(5), 2)


def test_critical_point_none_above_budget(code64):
    _, ref = code64
    K = ref.K
    psi = np.full(K, 2 * ref.noise_total / K)
    assert critical_point(psi, ref) is None


@pytest.mark.parametrize("suffix", [".cjcb", ".csv"])
def test_serialization_round_trip(code64, tmp_path, suffix):
    cb, _ = code64
    path = tmp_path / f"code{suffix}"
    save_codebook(cb, path)
    back = load_codebook(path)
    assert np.array_equal(back.entries, cb.entries)
    assert np.array_equal(back.phi.values, cb.phi.values)
    assert (back.beta, back.seed, back.block) == (cb.beta, cb.seed, cb.block)


def test_binary_format_layout(code64, tmp_path):
    cb, _ = code64
    path = tmp_path / "code.cjcb"
    save_codebook(cb, path)
    raw = path.read_bytes()
    assert raw[:4] == b"CJCB"
    tail = np.frombuffer(raw[-cb.entries.size * 8:], dtype="<f8")
    assert np.array_equal(tail, np.transpose(cb.entries, (1, 0, 2, 3)).ravel())


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.cjcb"
    path.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ValueError):
        load_codebook(path)
