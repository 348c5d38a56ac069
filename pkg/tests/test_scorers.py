import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import support
from rtfe.errors import NumericalError
from rtfe.oracle import reference_score
from rtfe.scorers import (
    FAMILIES,
    SampleBatch,
    ScorerSpec,
    StateVector,
    batch_loss,
    candidate_scores,
    grow_state,
    init_state,
    loss_and_grad,
    score,
    score_many,
    sgd_step,
    touched_rows,
    wrap_phases,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        ScorerSpec("RotatE", 5)
    with pytest.raises(ValueError):
        ScorerSpec("DistMult", 4)
    with pytest.raises(ValueError):
        ScorerSpec("TransE", 4, norm=3)
    assert ScorerSpec("DE-SimplE", 100).temporal_dim == 64


@pytest.mark.parametrize("family", FAMILIES)
def test_init_deterministic(family):
    spec = ScorerSpec(family, 8)
    a, b = init_state(spec, 6, 3, 4, seed=5), init_state(spec, 6, 3, 4, seed=5)
    assert a.equals(b)
    assert not a.equals(init_state(spec, 6, 3, 4, seed=6))


def test_rotate_dimension_rule_and_phase_range():
    spec = ScorerSpec("RotatE", 4)
    state = init_state(spec, 5, 3, 1)
    assert state.entity_features.shape == (5, 4)  # 2 complex coordinates
    assert state.relation_features.shape == (3, 2)
    assert np.abs(state.relation_features).max() <= math.pi


def test_transe_bounds():
    state = init_state(ScorerSpec("TransE", 16), 40, 5, 1)
    bound = 6 / math.sqrt(16)
    assert np.abs(state.entity_features).max() <= bound
    assert np.abs(state.relation_features).max() <= bound


def test_init_is_prefix_consistent_and_grow_matches():
    spec = ScorerSpec("TComplEx", 8)
    small, big = init_state(spec, 4, 2, 3, seed=1), init_state(spec, 7, 3, 5, seed=1)
    assert np.array_equal(big.entity_features[:4], small.entity_features)
    grown = grow_state(small, spec, 7, 3, 5, seed=1)
    assert np.array_equal(grown.entity_features, big.entity_features)
    assert np.array_equal(grown.timestamp_features, big.timestamp_features)


def test_grow_keeps_trained_rows_and_zero_accumulators():
    spec = ScorerSpec("ComplEx", 4)
    state = init_state(spec, 3, 2, 1)
    q = np.array([[0, 0, 1, 0]])
    _, g = loss_and_grad(state, spec, SampleBatch.full(q))
    sgd_step(state, g, 0.1, "adagrad")
    grown = grow_state(state, spec, 5, 2, 1)
    assert np.array_equal(grown.entity_features[:3], state.entity_features)
    assert (grown.optimizer_state["entity"][3:] == 0).all()


# -- scores ------------------------------------------------------------------------------

def test_transe_identity_is_maximum():
    spec = ScorerSpec("TransE", 4)
    state = init_state(spec, 3, 1, 1)
    state.entity_features[1] = state.entity_features[0]
    state.relation_features[0] = 0
    assert score(state, spec, (0, 0, 1, 0)) == 0.0
    assert score(state, spec, (0, 0, 2, 0)) < 0


def test_rotate_identity_rotation():
    spec = ScorerSpec("RotatE", 6)
    state = init_state(spec, 2, 1, 1)
    state.relation_features[0] = 0
    state.entity_features[1] = state.entity_features[0]
    assert score(state, spec, (0, 0, 1, 0)) == pytest.approx(0.0, abs=1e-15)


def test_complex_with_real_parts_is_distmult():
    spec = ScorerSpec("ComplEx", 8)
    state = init_state(spec, 3, 2, 1)
    state.entity_features[:, 4:] = 0
    state.relation_features[:, 4:] = 0
    s, r, o = state.entity_features[0, :4], state.relation_features[1, :4], state.entity_features[2, :4]
    assert score(state, spec, (0, 1, 2, 0)) == pytest.approx(float(np.sum(s * r * o)), rel=1e-14)


def test_tcomplex_neutral_timestamp_equals_complex():
    spec_t, spec_c = ScorerSpec("TComplEx", 8), ScorerSpec("ComplEx", 8)
    state = init_state(spec_t, 4, 2, 3)
    state.timestamp_features[1] = np.r_[np.ones(4), np.zeros(4)]
    plain = StateVector("ComplEx", state.entity_features, state.relation_features)
    assert score(state, spec_t, (0, 1, 3, 1)) == pytest.approx(score(plain, spec_c, (0, 1, 3, 0)), rel=1e-14)


def test_complex_conjugate_relation_swaps_arguments():
    spec = ScorerSpec("ComplEx", 8)
    state = init_state(spec, 3, 2, 1)
    conj = state.copy()
    conj.relation_features[:, 4:] *= -1
    assert score(conj, spec, (0, 1, 2, 0)) == pytest.approx(score(state, spec, (2, 1, 0, 0)), rel=1e-12)


def test_transe_translation_invariance():
    spec = ScorerSpec("TransE", 6)
    state = init_state(spec, 5, 2, 1)
    shifted = state.copy()
    shifted.entity_features += np.linspace(-1, 1, 6)
    quads = np.array([[0, 1, 2, 0], [3, 0, 4, 0]])
    assert np.allclose(score_many(state, spec, quads), score_many(shifted, spec, quads), atol=1e-13)


def test_de_simple_layout_matches_reference():
    spec = ScorerSpec("DE-SimplE", 10, temporal_fraction=0.4)
    state = init_state(spec, 4, 2, 6)
    assert state.entity_features.shape == (4, 12)
    assert state.scorer_params["amplitude"].shape == (4, 8)
    assert state.relation_features.shape == (2, 20)


@pytest.mark.parametrize("family", FAMILIES)
def test_vectorised_scores_match_reference(family):
    spec = ScorerSpec(family, 8)
    state = init_state(spec, 6, 3, 4, seed=2)
    rng = np.random.default_rng(0)
    quads = np.stack([rng.integers(0, 6, 20), rng.integers(0, 3, 20), rng.integers(0, 6, 20), rng.integers(0, 4, 20)], 1)
    fast = score_many(state, spec, quads)
    slow = [reference_score(state, spec, *q) for q in quads.tolist()]
    assert np.allclose(fast, slow, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("slot", ["head", "tail", "relation"])
def test_candidate_scores_match_pointwise(family, slot):
    spec = ScorerSpec(family, 8)
    state = init_state(spec, 7, 3, 2, seed=4)
    quads = np.array([[0, 1, 2, 1], [5, 2, 3, 0]])
    cand = candidate_scores(state, spec, quads, slot)
    col = {"head": 0, "relation": 1, "tail": 2}[slot]
    for i, q in enumerate(quads):
        for c in range(cand.shape[1]):
            alt = q.copy()
            alt[col] = c
            assert cand[i, c] == pytest.approx(score(state, spec, alt), rel=1e-12, abs=1e-12)


def test_out_of_range_index():
    spec = ScorerSpec("TComplEx", 4)
    state = init_state(spec, 3, 2, 2)
    for q in [(3, 0, 0, 0), (0, 2, 0, 0), (0, 0, 0, 2), (-1, 0, 0, 0)]:
        with pytest.raises(IndexError):
            score(state, spec, q)


# -- loss and gradient -------------------------------------------------------------------

@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("dim", [8, 64])
def test_gradient_matches_finite_differences(family, dim):
    for seed in range(4):
        spec, state, batch = support.draw(family, dim, seed)
        assert support.max_rel_error(spec, state, batch) < 1e-4


@settings(max_examples=30, deadline=None)
@given(family=st.sampled_from(FAMILIES), seed=st.integers(0, 10**6))
def test_gradient_property(family, seed):
    spec, state, batch = support.draw(family, 8, seed)
    assert support.max_rel_error(spec, state, batch) < 1e-4


def test_zero_transe_state_has_symmetric_gradient():
    spec = ScorerSpec("TransE", 4)
    state = init_state(spec, 4, 2, 1)
    for m in state.parameters().values():
        m[:] = 0
    batch = SampleBatch(np.array([[0, 0, 1, 0]]), np.array([[[2, 0, 1, 0], [0, 0, 3, 0]]]))
    f = score_many(state, spec, np.concatenate([batch.positives, batch.negatives[0]]))
    assert np.all(f == f[0])
    # the L2 norm has zero subgradient at zero, so every score term contributes nothing
    _, grad = loss_and_grad(state, spec, batch)
    for _, vals in grad.values():
        assert np.abs(vals).max() <= 1e-12


@pytest.mark.parametrize("family", FAMILIES)
def test_duplicating_positives_doubles_loss(family):
    spec, state, batch = support.draw(family, 8, 11)
    spec = dataclasses.replace(spec, n3_weight=0.0)
    assert batch_loss(state, spec, batch.duplicated()) == pytest.approx(2 * batch_loss(state, spec, batch), rel=1e-12)


def test_softmax_without_negatives_rejected():
    spec = ScorerSpec("DE-SimplE", 8)
    state = init_state(spec, 3, 1, 1)
    with pytest.raises(ValueError):
        loss_and_grad(state, spec, SampleBatch(np.array([[0, 0, 1, 0]]), np.empty((1, 0, 4), dtype=np.int64)))
    with pytest.raises(ValueError):
        loss_and_grad(state, spec, SampleBatch.full([[0, 0, 1, 0]]))


def test_translational_loss_formula():
    spec = ScorerSpec("TransE", 4, margin=2.0)
    state = init_state(spec, 3, 1, 1, seed=3)
    batch = SampleBatch(np.array([[0, 0, 1, 0]]), np.array([[[2, 0, 1, 0], [0, 0, 2, 0]]]))
    fp = score(state, spec, (0, 0, 1, 0))
    fn = [score(state, spec, (2, 0, 1, 0)), score(state, spec, (0, 0, 2, 0))]
    logsig = lambda x: -math.log1p(math.exp(-x))  # noqa: E731
    expected = -logsig(2.0 + fp) - sum(logsig(-2.0 - f) for f in fn) / 2
    assert batch_loss(state, spec, batch) == pytest.approx(expected, rel=1e-12)


def test_n3_regulariser_value():
    spec0, spec = ScorerSpec("ComplEx", 4), ScorerSpec("ComplEx", 4, n3_weight=0.5)
    state = init_state(spec, 3, 1, 1, seed=1)
    batch = SampleBatch(np.array([[0, 0, 1, 0]]), np.array([[[2, 0, 1, 0]]]))
    E, R = state.entity_features, state.relation_features
    n3 = sum(float(np.sum(np.hypot(v[:2], v[2:]) ** 3)) for v in (E[0], R[0], E[1]))
    assert batch_loss(state, spec, batch) - batch_loss(state, spec0, batch) == pytest.approx(0.5 * n3, rel=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_gradient_rows_within_touched_set(family):
    spec, state, batch = support.draw(family, 8, 3)
    _, grad = loss_and_grad(state, spec, batch)
    touched = touched_rows(spec, state, batch)
    for name, (rows, _) in grad.items():
        assert set(rows.tolist()) <= set(touched[name].tolist())


# -- updates ---------------------------------------------------------------------------

def test_sgd_zero_gradient_is_identity():
    spec = ScorerSpec("ComplEx", 4)
    state = init_state(spec, 3, 2, 1)
    before = state.copy()
    sgd_step(state, {"entity": (np.array([0, 2]), np.zeros((2, 4)))}, 0.1)
    assert state.equals(before)


def test_sgd_exact_step_and_sparsity():
    spec = ScorerSpec("TransE", 4)
    state = init_state(spec, 5, 2, 1)
    before = state.copy()
    g = np.zeros((1, 4))
    g[0, 2] = 0.75
    sgd_step(state, {"entity": (np.array([3]), g)}, 0.2)
    diff = state.entity_features - before.entity_features
    assert diff[3, 2] == (before.entity_features[3, 2] - 0.2 * 0.75) - before.entity_features[3, 2]
    diff[3, 2] = 0
    assert not diff.any()
    assert np.array_equal(state.relation_features, before.relation_features)


def test_adagrad_second_step_smaller():
    spec = ScorerSpec("TransE", 4)
    state = init_state(spec, 2, 1, 1)
    g = {"entity": (np.array([1]), np.full((1, 4), 0.3))}
    x0 = state.entity_features[1].copy()
    sgd_step(state, g, 0.1, "adagrad")
    x1 = state.entity_features[1].copy()
    sgd_step(state, g, 0.1, "adagrad")
    x2 = state.entity_features[1]
    assert np.all(np.abs(x2 - x1) < np.abs(x1 - x0))
    assert np.allclose(state.optimizer_state["entity"][1], 2 * 0.09)


def test_sgd_rejects_non_finite_and_bad_lr():
    spec = ScorerSpec("TransE", 4)
    state = init_state(spec, 2, 1, 1)
    before = state.copy()
    with pytest.raises(NumericalError):
        sgd_step(state, {"entity": (np.array([0]), np.full((1, 4), np.nan))}, 0.1)
    assert state.equals(before)
    with pytest.raises(ValueError):
        sgd_step(state, {}, 0.0)


def test_training_trajectory_deterministic():
    spec, state, batch = support.draw("DE-SimplE", 8, 5)
    a, b = state.copy(), state.copy()
    for s in (a, b):
        for _ in range(3):
            _, g = loss_and_grad(s, spec, batch)
            sgd_step(s, g, 0.05, "adagrad")
    assert a.equals(b)


def test_wrap_phases_only_moves_outside_values():
    x = np.array([-4.0, -math.pi, 0.5, math.pi, 7.0])
    w = wrap_phases(x)
    assert w[1] == -math.pi and w[2] == 0.5
    assert np.all((w >= -math.pi) & (w < math.pi))
    assert np.allclose(np.exp(1j * w), np.exp(1j * x))
