import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inclusion_guard.hmm import (CategoricalHmm, EmptyDataset, HmmConfig, InvalidConfig,
                                 InvalidLength, ModelFormatError, SymbolOutOfRange, fit,
                                 forward_step, init_model, log_likelihood_backward,
                                 log_likelihood_forward, log_likelihood_many, sample, sample_batch,
                                 train_baum_welch)

from oracles import brute_force_log_likelihood, random_model


def toy():
    """Two states, one binary feature."""
    return CategoricalHmm([0.6, 0.4], [[0.7, 0.3], [0.2, 0.8]], [[[0.9, 0.1], [0.3, 0.7]]])


def test_toy_against_path_enumeration():
    m = toy()
    x = np.array([[0], [1], [1]])
    expected = brute_force_log_likelihood(m.initial, m.transition, m.emissions, x)
    assert log_likelihood_forward(m, x) == pytest.approx(expected, rel=1e-12)
    assert log_likelihood_backward(m, x) == pytest.approx(expected, abs=1e-9)


def test_deterministic_single_state():
    m = CategoricalHmm([1.0], [[1.0]], [[[0.0, 1.0]], [[1.0, 0.0, 0.0]]])
    x = np.array([[1, 0]] * 4)
    assert log_likelihood_forward(m, x) == 0.0
    assert log_likelihood_backward(m, x) == 0.0
    assert log_likelihood_forward(m, np.array([[0, 0]])) == -np.inf
    assert sample(m, 5, seed=3).tolist() == x.tolist() + [[1, 0]]


def test_empty_and_out_of_range():
    m = toy()
    with pytest.raises(InvalidLength):
        log_likelihood_forward(m, np.zeros((0, 1), dtype=int))
    with pytest.raises(SymbolOutOfRange):
        log_likelihood_forward(m, np.array([[2]]))
    with pytest.raises(SymbolOutOfRange):
        log_likelihood_forward(m, np.array([[0, 0]]))
    with pytest.raises(InvalidLength):
        sample(m, 0, seed=0)


def test_init_model():
    one = init_model(HmmConfig([3, 2], num_states=1))
    assert one.initial.tolist() == [1.0] and one.transition.tolist() == [[1.0]]
    one.check_stochastic()
    a, b = init_model(HmmConfig([3, 2], seed=7)), init_model(HmmConfig([3, 2], seed=7))
    assert a.dumps() == b.dumps()
    c = init_model(HmmConfig([3, 2], seed=8))
    assert not np.allclose(a.transition, c.transition)
    assert a.num_states == 20


@pytest.mark.parametrize("kwargs", [
    {"num_states": 0}, {"log_likelihood_tolerance": 0.0}, {"smoothing_alpha": -1.0},
    {"seed": 2**64}, {"max_iterations": -1},
])
def test_invalid_config(kwargs):
    with pytest.raises(InvalidConfig):
        HmmConfig([2, 2], **kwargs)


def test_config_round_trip():
    c = HmmConfig([3, 4], num_states=5, seed=11, restarts=2)
    assert HmmConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


def test_forward_step_matches_full_pass(rng):
    pi, a, bs = random_model(rng, 4, [3, 5])
    m = CategoricalHmm(pi, a, bs)
    x = np.stack([rng.integers(0, 3, 30), rng.integers(0, 5, 30)], axis=1)
    state = None
    for t in range(len(x)):
        state = forward_step(m, state, x[t])
        assert state[1] == pytest.approx(log_likelihood_forward(m, x[:t + 1]), abs=1e-9)


def test_batched_scores_match(rng):
    pi, a, bs = random_model(rng, 3, [2, 4])
    m = CategoricalHmm(pi, a, bs)
    seqs = [np.stack([rng.integers(0, 2, n), rng.integers(0, 4, n)], axis=1)
            for n in rng.integers(1, 12, 60)]
    many = log_likelihood_many(m, seqs)
    single = [log_likelihood_forward(m, s) for s in seqs]
    assert np.allclose(many, single, rtol=0, atol=1e-10)


def test_long_sequence_is_finite(rng):
    pi, a, bs = random_model(rng, 5, [4, 4])
    m = CategoricalHmm(pi, a, bs)
    x = sample(m, 10_000, seed=1)
    fwd, bwd = log_likelihood_forward(m, x), log_likelihood_backward(m, x)
    assert np.isfinite(fwd) and np.isfinite(bwd)
    assert abs(fwd - bwd) < 1e-9 * max(1.0, abs(fwd))


def test_single_state_learns_frequencies():
    x = np.array([[0, 2], [1, 2], [0, 1], [0, 2]])
    cfg = HmmConfig([2, 3], num_states=1, smoothing_alpha=0.0)
    model, trace = train_baum_welch(init_model(cfg), [x] * 5, cfg)
    assert np.allclose(model.emissions[0][0], [0.75, 0.25], atol=1e-12)
    assert np.allclose(model.emissions[1][0], [0.0, 0.25, 0.75], atol=1e-12)
    assert trace.converged


def test_smoothing_keeps_unseen_symbols_possible():
    x = np.array([[0, 0]])
    cfg = HmmConfig([2, 3], num_states=2, smoothing_alpha=0.01, seed=3)
    model, _ = train_baum_welch(init_model(cfg), [x] * 10, cfg)
    assert (model.emissions[1] > 0).all()
    assert np.isfinite(log_likelihood_forward(model, np.array([[1, 2]])))


def test_training_errors():
    cfg = HmmConfig([2], num_states=2)
    with pytest.raises(EmptyDataset):
        train_baum_welch(init_model(cfg), [], cfg)
    with pytest.raises(SymbolOutOfRange):
        train_baum_welch(init_model(cfg), [np.array([[5]])], cfg)


def test_training_is_deterministic_and_order_invariant(rng):
    gen = init_model(HmmConfig([3, 4], num_states=3, seed=99))
    data = [s for n in (2, 3, 5) for s in sample_batch(gen, 40, n, rng)]
    cfg = HmmConfig([3, 4], num_states=4, max_iterations=25, seed=5)
    m1, t1 = fit(data, cfg)
    m2, t2 = fit(data, cfg)
    assert m1.dumps() == m2.dumps() and t1.log_likelihoods == t2.log_likelihoods
    shuffled = [data[i] for i in rng.permutation(len(data))]
    m3, _ = fit(shuffled, cfg)
    for p, q in zip([m1.initial, m1.transition, *m1.emissions],
                    [m3.initial, m3.transition, *m3.emissions]):
        assert np.allclose(p, q, rtol=0, atol=1e-10)


def test_restarts_keep_best(rng):
    gen = init_model(HmmConfig([4], num_states=2, seed=1))
    data = list(sample_batch(gen, 50, 6, rng))
    cfg = HmmConfig([4], num_states=3, max_iterations=15, seed=0)
    single_ll = fit(data, cfg)[1].log_likelihoods[-1]
    multi_cfg = HmmConfig([4], num_states=3, max_iterations=15, seed=0, restarts=3)
    model, trace = fit(data, multi_cfg)
    assert trace.log_likelihoods[-1] >= single_ll
    assert model.config == multi_cfg


def test_parameter_recovery():
    gen = CategoricalHmm([0.7, 0.3], [[0.85, 0.15], [0.25, 0.75]],
                         [[[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]], [[0.6, 0.4], [0.2, 0.8]]])
    train = sample_batch(gen, 10_000, 8, seed=1)
    held = sample_batch(gen, 2_000, 8, seed=2)
    cfg = HmmConfig([3, 2], num_states=2, seed=0)
    model, trace = fit(list(train), cfg)
    symbols = held.shape[0] * held.shape[1]
    ll_gen = log_likelihood_many(gen, list(held)).sum() / symbols
    ll_fit = log_likelihood_many(model, list(held)).sum() / symbols
    assert abs(ll_fit - ll_gen) <= 0.02 * abs(ll_gen)


def test_sampling_marginals_within_three_sigma():
    m = CategoricalHmm([0.5, 0.5], [[0.9, 0.1], [0.4, 0.6]],
                       [[[0.5, 0.3, 0.2], [0.1, 0.1, 0.8]]])
    n = 500_000
    xs = sample_batch(m, n, 2, seed=4)
    marginals = [m.initial, m.initial @ m.transition]
    for t, state_dist in enumerate(marginals):
        p = state_dist @ m.emissions[0]
        freq = np.bincount(xs[:, t, 0], minlength=3) / n
        sigma = np.sqrt(p * (1 - p) / n)
        assert (np.abs(freq - p) <= 3 * sigma).all()
    assert np.array_equal(sample(m, 7, seed=9), sample(m, 7, seed=9))


def test_model_file_round_trip_and_digest():
    m = init_model(HmmConfig([3, 2], num_states=3, seed=2))
    d = json.loads(m.dumps())
    back = CategoricalHmm.from_dict(d)
    assert back == m and back.dumps() == m.dumps()
    d["transition"][0][0] += 1e-9
    with pytest.raises(ModelFormatError):
        CategoricalHmm.from_dict(d)
    with pytest.raises(ModelFormatError):
        CategoricalHmm.from_dict(json.loads(m.dumps()), expected_arities=[3, 3])


def test_permuting_states_preserves_likelihood(rng):
    pi, a, bs = random_model(rng, 3, [2, 3])
    m = CategoricalHmm(pi, a, bs)
    x = np.stack([rng.integers(0, 2, 9), rng.integers(0, 3, 9)], axis=1)
    assert log_likelihood_forward(m.permuted([2, 0, 1]), x) == \
        pytest.approx(log_likelihood_forward(m, x), abs=1e-12)


# --- properties ---

@st.composite
def small_problems(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n = draw(st.integers(1, 3))
    arities = draw(st.lists(st.integers(2, 4), min_size=1, max_size=2))
    length = draw(st.integers(1, 5))
    pi, a, bs = random_model(rng, n, arities)
    x = np.stack([rng.integers(0, k, length) for k in arities], axis=1)
    return CategoricalHmm(pi, a, bs), x


@settings(max_examples=200, deadline=None)
@given(small_problems())
def test_forward_equals_brute_force(problem):
    m, x = problem
    expected = brute_force_log_likelihood(m.initial, m.transition, m.emissions, x)
    assert log_likelihood_forward(m, x) == pytest.approx(expected, rel=1e-12)
    assert abs(log_likelihood_backward(m, x) - expected) < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.floats(0.0, 1.0))
def test_training_preserves_stochasticity(seed, states, alpha):
    rng = np.random.default_rng(seed)
    gen = init_model(HmmConfig([3, 2], num_states=2, seed=seed))
    data = [s for n in rng.integers(1, 6, 4) for s in sample_batch(gen, 5, int(n), rng)]
    cfg = HmmConfig([3, 2], num_states=states, max_iterations=30, smoothing_alpha=alpha,
                    log_likelihood_tolerance=1e-10, seed=seed)
    model, trace = train_baum_welch(init_model(cfg), data, cfg)
    model.check_stochastic(atol=1e-12)
    assert trace.max_decrease() <= 1e-8
    if alpha > 0:
        assert (model.transition > 0).all()
        assert all((b > 0).all() for b in model.emissions)
