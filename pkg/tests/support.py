"""Random (state, batch) draws shared by the gradient tests."""
import numpy as np

from rtfe.oracle import fd_gradient
from rtfe.scorers import SampleBatch, ScorerSpec, init_state, loss_and_grad, score_many
from rtfe.trainer import corrupt

# relative error is taken against max(|analytic|, |numeric|, GRAD_FLOOR): below
# the floor, central differences at h = 1e-5 are limited by cancellation noise
GRAD_FLOOR = 1e-4


def draw(family: str, dim: int, seed: int):
    """A small random state and batch for ``family``; B and K are 1 or 2."""
    rng = np.random.default_rng([seed, dim])
    nv, nr, nt = int(rng.integers(3, 9)), int(rng.integers(2, 5)), int(rng.integers(1, 5))
    kwargs = {}
    if family == "TransE":
        kwargs["norm"] = int(rng.choice([1, 2]))
    if family in ("TransE", "RotatE"):
        kwargs["margin"] = float(rng.uniform(0, 8))
        if rng.random() < 0.3:
            kwargs["adversarial_temperature"] = float(rng.uniform(0.5, 2))
    if family in ("ComplEx", "TComplEx") and rng.random() < 0.5:
        kwargs["n3_weight"] = float(rng.uniform(0, 0.1))
    if family == "DE-SimplE":
        kwargs["temporal_fraction"] = float(rng.choice([0.25, 0.64, 1.0]))
    spec = ScorerSpec(family, dim, **kwargs)
    state = init_state(spec, nv, nr, nt, seed=int(rng.integers(1 << 31)))
    B, K = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    pos = np.stack([rng.integers(0, nv, B), rng.integers(0, nr, B), rng.integers(0, nv, B),
                    rng.integers(0, nt, B)], axis=1)
    if family in ("ComplEx", "TComplEx") and rng.random() < 0.25:
        batch = SampleBatch.full(pos)
    else:
        batch = corrupt(pos, K, (0.4, 0.4, 0.2), nv, nr, rng)
    if family == "TransE" and spec.norm == 1:
        _away_from_kinks(state, batch)
    return spec, state, batch


def _away_from_kinks(state, batch):
    # |x| is not differentiable at 0; keep every difference coordinate clear of it
    E, R = state.entity_features, state.relation_features
    quads = np.concatenate([batch.positives, batch.negatives.reshape(-1, 4)])
    for s, r, o, _ in quads:
        x = E[s] + R[r] - E[o]
        small = np.abs(x) < 1e-3
        R[r, small] += 1e-2


def frozen_adversarial_loss(spec, state, batch):
    """Translational loss with self-adversarial weights held at their current values.

    The weights are detached in training, so this is the function whose
    gradient the analytic path computes.
    """
    pos, neg = batch.positives, batch.negatives
    f_neg = score_many(state, spec, neg.reshape(-1, 4)).reshape(neg.shape[:2])
    z = spec.adversarial_temperature * f_neg
    w = np.exp(z - z.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    gamma = spec.margin

    def loss(st):
        fp = score_many(st, spec, pos)
        fn = score_many(st, spec, neg.reshape(-1, 4)).reshape(neg.shape[:2])
        return float(np.logaddexp(0, -(gamma + fp)).sum() + (w * np.logaddexp(0, gamma + fn)).sum())

    return loss


def max_rel_error(spec, state, batch, h=1e-5):
    """Largest relative error between analytic and numeric gradients over touched rows."""
    _, analytic = loss_and_grad(state, spec, batch)
    loss = frozen_adversarial_loss(spec, state, batch) if spec.adversarial_temperature is not None else None
    numeric = fd_gradient(state, spec, batch, h, loss=loss)
    worst = 0.0
    for name, (rows, vals) in numeric.items():
        dense = np.zeros_like(vals)
        if name in analytic:
            a_rows, a_vals = analytic[name]
            where = {int(r): i for i, r in enumerate(a_rows)}
            assert set(where) <= set(int(r) for r in rows), f"{name}: gradient outside touched rows"
            for i, r in enumerate(rows):
                if int(r) in where:
                    dense[i] = a_vals[where[int(r)]]
        err = np.abs(dense - vals) / np.maximum(np.maximum(np.abs(dense), np.abs(vals)), GRAD_FLOOR)
        worst = max(worst, float(err.max(initial=0.0)))
    return worst
