"""Brute-force reference implementations used to check the fast paths.

:func:`oracle_rank` scores candidates one at a time with its own scalar
formulas and filters against the raw set of known facts, so it shares no
scoring or filtering code with :mod:`rtfe.evaluator`. :func:`fd_gradient`
differentiates the loss numerically with central differences.
"""
import math

import numpy as np

from .scorers import batch_loss, touched_rows

MAX_ORACLE_VOCAB = 1000


def _complex(row):
    h = len(row) // 2
    return row[:h] + 1j * row[h:]


def _de_vectors(state, spec, v, tau):
    k, ds = spec.temporal_dim, spec.dim - spec.temporal_dim
    a = state.scorer_params["amplitude"][v]
    w = state.scorer_params["frequency"][v]
    b = state.scorer_params["phase"][v]
    static = state.entity_features[v]
    head = [a[i] * math.sin(w[i] * tau + b[i]) for i in range(k)] + [static[j] for j in range(ds)]
    tail = [a[k + i] * math.sin(w[k + i] * tau + b[k + i]) for i in range(k)] + [static[ds + j] for j in range(ds)]
    return np.array(head), np.array(tail)


def reference_score(state, spec, s, r, o, t) -> float:
    """One quadruple's score, written directly from the family formulas."""
    E, R = state.entity_features, state.relation_features
    family = spec.family
    if family == "TransE":
        x = E[s] + R[r] - E[o]
        return -float(np.sum(np.abs(x))) if spec.norm == 1 else -math.sqrt(float(np.dot(x, x)))
    if family == "RotatE":
        diff = _complex(E[s]) * np.exp(1j * R[r]) - _complex(E[o])
        return -math.sqrt(float(np.sum(diff.real ** 2 + diff.imag ** 2)))
    if family in ("ComplEx", "TComplEx"):
        w = _complex(R[r])
        if family == "TComplEx":
            w = w * _complex(state.timestamp_features[t])
        return float(np.sum(_complex(E[s]) * w * np.conj(_complex(E[o]))).real)
    if family == "DE-SimplE":
        tau = t / state.n_timestamps
        hs, ts = _de_vectors(state, spec, s, tau)
        ho, to = _de_vectors(state, spec, o, tau)
        d = spec.dim
        return 0.5 * (float(np.sum(hs * R[r, :d] * to)) + float(np.sum(ho * R[r, d:] * ts)))
    raise ValueError(f"unknown family {family!r}")


def oracle_rank(state, spec, q, slot, filter) -> int:
    """Filtered rank of ``q`` by enumerating every candidate.

    A candidate is dropped when the corrupted quadruple is a known fact
    (at the same timestamp unless ``filter.time_aware`` is false). Ties
    count half, rounded down.
    """
    s, r, o, t = (int(x) for x in q)
    n = state.n_relations if slot == "relation" else state.n_entities
    if n > MAX_ORACLE_VOCAB:
        raise ValueError(f"oracle enumeration is limited to {MAX_ORACLE_VOCAB} candidates")
    known = filter.facts
    target = reference_score(state, spec, s, r, o, t)
    higher = equal = 0
    for c in range(n):
        if slot == "head":
            cand = (c, r, o, t)
        elif slot == "tail":
            cand = (s, r, c, t)
        else:
            cand = (s, c, o, t)
        if cand == (s, r, o, t):
            continue
        key = cand if filter.time_aware else cand[:3]
        if key in known:
            continue
        value = reference_score(state, spec, *cand)
        if value > target:
            higher += 1
        elif value == target:
            equal += 1
    return 1 + higher + equal // 2


def fd_gradient(state, spec, batch, h: float = 1e-5, loss=None):
    """Central-difference gradient over the rows a batch touches.

    Returns the same ``{name: (rows, values)}`` layout as
    :func:`rtfe.scorers.loss_and_grad`. ``loss`` defaults to the batch loss
    and may be any ``loss(state) -> float`` callable for other checks.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("step h must lie in [1e-7, 1e-3]")
    if loss is None:
        loss = lambda st: batch_loss(st, spec, batch)  # noqa: E731
    params = state.parameters()
    if any(m.dtype != np.float64 for m in params.values()):
        raise TypeError("finite differences need 64-bit parameters")
    out = {}
    for name, rows in touched_rows(spec, state, batch).items():
        mat = params[name]
        vals = np.zeros((len(rows), mat.shape[1]))
        for i, row in enumerate(rows):
            for j in range(mat.shape[1]):
                orig = mat[row, j]
                mat[row, j] = orig + h
                up = loss(state)
                mat[row, j] = orig - h
                down = loss(state)
                mat[row, j] = orig
                vals[i, j] = (up - down) / (2 * h)
        out[name] = (rows, vals)
    return out
