"""Identifier, classifier, and the top-k mask sampler."""

import numpy as np
import pytest

from inkwell import diffcore as dc
from inkwell import rng as rngmod
from inkwell.model import (
    ClassifierNet, IdentifierNet, SamplerConfig, Vocabulary, classify,
    gumbel_topk_mask, gumbel_topk_mask_node, hard_topk, identifier_logits,
    lift_params, sampler_noise,
)


@pytest.fixture
def idn():
    return IdentifierNet(vocab_size=30, embed_dim=8, hidden_dim=8,
                         conv_window=5, dropout_rate=0.1, seed=1)


def test_vocabulary_unknown_slot():
    vocab = Vocabulary(["movie", "plot"])
    assert vocab.tokens[0] == Vocabulary.UNK
    assert list(vocab.encode(["plot", "never-seen"])) == [2, 0]
    assert len(vocab) == 3


def test_vocabulary_rejects_duplicates():
    with pytest.raises(ValueError):
        Vocabulary(["a", "a"])


def test_vocabulary_hash_tracks_content():
    assert Vocabulary(["a", "b"]).content_hash() == Vocabulary(["a", "b"]).content_hash()
    assert Vocabulary(["a", "b"]).content_hash() != Vocabulary(["a", "c"]).content_hash()


def test_identifier_logits_shape_and_determinism(idn):
    ids = np.array([1, 5, 2, 9, 3])
    out1 = identifier_logits(idn, ids)
    out2 = identifier_logits(idn, ids)
    assert out1.shape == (5,)
    assert np.array_equal(out1, out2)


def test_identifier_receptive_field(idn):
    """A perturbed embedding moves logits only within the conv radius."""
    ids = np.arange(1, 12)
    base = identifier_logits(idn, ids)
    j = 5
    idn.params["embedding"][ids[j]] += 0.1
    bumped = identifier_logits(idn, ids)
    idn.params["embedding"][ids[j]] -= 0.1
    delta = np.abs(bumped - base)
    radius = idn.conv_window // 2
    assert delta[j] > 1e-9
    for i in range(len(ids)):
        if abs(i - j) > radius:
            assert delta[i] < 1e-12, f"leak at distance {abs(i - j)}"


def test_sampler_noise_is_keyed_by_position():
    keys = np.array([3, 11, 7, 5], dtype=np.uint64)
    perm = np.array([2, 0, 3, 1])
    noise = sampler_noise(42, 3, keys)
    permuted = sampler_noise(42, 3, keys[perm])
    assert noise.shape == (3, 4)
    assert np.array_equal(noise[:, perm], permuted)


def test_gumbel_topk_mask_invariants_random_configs():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        n = int(rng.integers(2, 30))
        k = int(rng.integers(1, n + 1))
        logits = rng.normal(size=n) * 3.0
        tau = float(rng.uniform(0.05, 2.0))
        sample = gumbel_topk_mask(
            logits, SamplerConfig(temperature=tau, seed=trial), k=k)
        m = sample.mask
        assert np.all(m >= 0.0) and np.all(m <= 1.0)
        assert 0.0 < m.sum() <= k + 1e-9
        assert len(set(sample.picks)) == k


def test_gumbel_topk_mask_deterministic():
    logits = np.array([0.3, -1.0, 2.0, 0.0])
    a = gumbel_topk_mask(logits, SamplerConfig(seed=9), k=2)
    b = gumbel_topk_mask(logits, SamplerConfig(seed=9), k=2)
    assert np.array_equal(a.mask, b.mask)
    assert a.picks == b.picks


def test_gumbel_argmax_frequency_tracks_softmax():
    logits = np.array([3.0, 1.0, 0.0])
    probs = np.exp(logits) / np.exp(logits).sum()
    hits = 0
    n_draws = 20_000
    for i in range(n_draws):
        sample = gumbel_topk_mask(logits, SamplerConfig(seed=0), k=1,
                                  seed=rngmod.derive(123, i))
        hits += int(np.argmax(sample.mask) == 0)
    assert hits / n_draws == pytest.approx(probs[0], abs=0.015)


def test_cold_sampler_matches_exact_argmax():
    """At tiny temperature the first draw's peak is the perturbed argmax."""
    rng = np.random.default_rng(4)
    for trial in range(300):
        n = int(rng.integers(3, 12))
        logits = np.arange(n, dtype=np.float64) * 0.5  # pairwise gaps >= 0.5
        rng.shuffle(logits)
        seed = int(rng.integers(2**31))
        noise = sampler_noise(seed, 1, np.arange(n, dtype=np.uint64))
        sample = gumbel_topk_mask(
            logits, SamplerConfig(temperature=0.01, seed=0), k=1, seed=seed)
        assert np.argmax(sample.mask) == np.argmax(logits + noise[0])


def test_cold_sampler_topk_positions_are_the_picks():
    # a near-tie in the noise-perturbed logits can split one draw's weight,
    # so pick saturation is not guaranteed -- but the top-k positions are
    rng = np.random.default_rng(5)
    agree = 0
    trials = 1000
    for trial in range(trials):
        n, k = 12, 4
        logits = rng.permutation(n) * 0.5
        sample = gumbel_topk_mask(
            logits, SamplerConfig(temperature=0.01, seed=0), k=k,
            seed=int(rng.integers(2**31)))
        top = set(np.argsort(sample.mask)[-k:])
        agree += int(top == set(sample.picks))
    assert agree / trials >= 0.99


def test_sampler_permutation_equivariance():
    logits = np.array([1.2, -0.3, 0.8, 2.0, -1.0, 0.1])
    keys = np.arange(6, dtype=np.uint64)
    perm = np.array([4, 2, 0, 5, 1, 3])
    base = gumbel_topk_mask(logits, SamplerConfig(seed=3), k=3,
                            position_keys=keys)
    permuted = gumbel_topk_mask(logits[perm], SamplerConfig(seed=3), k=3,
                                position_keys=keys[perm])
    assert np.allclose(base.mask[perm], permuted.mask, atol=1e-12)


def test_sampler_rejects_bad_arguments():
    logits = np.zeros(4)
    with pytest.raises(ValueError):
        gumbel_topk_mask(logits, SamplerConfig(seed=0), k=0)
    with pytest.raises(ValueError):
        gumbel_topk_mask(logits, SamplerConfig(seed=0), k=5)
    with pytest.raises(ValueError):
        SamplerConfig(temperature=0.0)


def test_sampler_gradient_reaches_logits():
    rng = np.random.default_rng(2)
    n, k = 8, 3
    noise = sampler_noise(17, k, np.arange(n, dtype=np.uint64))
    weights = rng.normal(size=(n, 1))

    def weighted_mass(x):
        mask, _ = gumbel_topk_mask_node(x, k, 0.5, noise)
        return dc.tensor_sum(dc.multiply(mask, x.tape.constant(weights)))

    x0 = rng.normal(size=(n, 1))
    err = dc.grad_check(weighted_mass, x0)
    assert err < 1e-5
    tape = dc.Tape()
    leaf = tape.leaf(x0)
    dc.backward(tape, weighted_mass(leaf))
    assert np.any(np.abs(leaf.grad) > 1e-8)


def test_hard_topk_selects_largest():
    assert list(hard_topk(np.array([0.5, 0.9, 0.8, 0.1]), 2)) == [0, 1, 1, 0]


def test_hard_topk_tie_goes_to_lower_index():
    assert list(hard_topk(np.array([1.0, 1.0, 0.0]), 1)) == [1, 0, 0]


def test_hard_topk_full_budget():
    assert list(hard_topk(np.array([3.0, 1.0, 2.0]), 3)) == [1, 1, 1]


def test_hard_topk_range_checks():
    with pytest.raises(ValueError):
        hard_topk(np.zeros(3), 0)
    with pytest.raises(ValueError):
        hard_topk(np.zeros(3), 4)


def test_classify_distribution_sums_to_one():
    net = ClassifierNet(vocab_size=20, n_labels=3, embed_dim=6, seed=2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        ids = rng.integers(0, 20, size=rng.integers(1, 10))
        mask = rng.random(len(ids))
        dist = classify(net, ids, mask)
        assert np.all(dist > 0.0)
        assert dist.sum() == pytest.approx(1.0, abs=1e-12)


def test_classify_zero_mask_gives_bias_distribution():
    net = ClassifierNet(vocab_size=10, n_labels=2, embed_dim=4, seed=0)
    net.params["b"] = np.array([[0.7, -0.2]])
    dist = classify(net, np.array([1, 2, 3]), np.zeros(3))
    expected = np.exp(net.params["b"][0])
    expected /= expected.sum()
    assert np.allclose(dist, expected, atol=1e-9)


def test_classify_is_scale_sensitive_through_mask():
    # halving the mask on a single token must not change the pooled mean,
    # but changing its relative weight must
    net = ClassifierNet(vocab_size=10, n_labels=2, embed_dim=4, seed=1)
    ids = np.array([1, 2])
    uniform = classify(net, ids, np.array([1.0, 1.0]))
    tilted = classify(net, ids, np.array([1.0, 0.2]))
    rescaled = classify(net, ids, np.array([0.5, 0.5]))
    assert np.allclose(uniform, rescaled, atol=1e-12)
    assert not np.allclose(uniform, tilted, atol=1e-6)


def test_lift_params_deduplicates_shared_arrays():
    idn = IdentifierNet(vocab_size=10, embed_dim=4, hidden_dim=4, seed=0)
    cls = ClassifierNet(vocab_size=10, n_labels=2, embed_dim=4, seed=0,
                        shared_embedding=idn.params["embedding"])
    tape = dc.Tape()
    flat, (lift_idn, lift_cls) = lift_params(tape, idn, cls)
    assert lift_idn["embedding"] is lift_cls["embedding"]
    arrays = [id(a) for a, _ in flat]
    assert len(arrays) == len(set(arrays))
