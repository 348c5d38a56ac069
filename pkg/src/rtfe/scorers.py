"""Embedding learners: state vectors, scores, losses and analytic gradients.

Every family scores a quadruple ``(s, r, o, t)``; higher means more
plausible. Complex-valued families store ``d`` real columns per row, the
first half holding real parts and the second half imaginary parts.

Gradients are sparse: a mapping from matrix name to ``(rows, values)``
where ``rows`` is a sorted array of the row indices referenced by the batch
and ``values`` the matching gradient rows.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import NumericalError

FAMILIES = ("TransE", "RotatE", "ComplEx", "TComplEx", "DE-SimplE")
SLOTS = ("head", "tail", "relation")
TRANSLATIONAL = ("TransE", "RotatE")

# per-matrix stream ids so each matrix draws from its own generator
_STREAM = {"entity": 0, "relation": 1, "timestamp": 2, "amplitude": 3, "frequency": 4, "phase": 5}
_ROW_KIND = {
    "entity": "entity", "relation": "relation", "timestamp": "timestamp",
    "amplitude": "entity", "frequency": "entity", "phase": "entity",
}

SparseGrad = Dict[str, Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class ScorerSpec:
    """Model family and its hyperparameters.

    ``margin`` is only used by the translational families, ``n3_weight`` by
    ComplEx / TComplEx and ``temporal_fraction`` by DE-SimplE.
    ``adversarial_temperature`` enables self-adversarial negative weighting
    for the translational loss; ``None`` keeps uniform weights.
    """

    family: str
    dim: int
    norm: int = 2
    margin: float = 6.0
    temporal_fraction: float = 0.64
    n3_weight: float = 0.0
    adversarial_temperature: Optional[float] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.family in ("RotatE", "ComplEx", "TComplEx") and self.dim % 2:
            raise ValueError(f"{self.family} needs an even dim (d/2 complex coordinates)")
        if self.norm not in (1, 2):
            raise ValueError("norm must be 1 or 2")
        if not 0.0 <= self.temporal_fraction <= 1.0:
            raise ValueError("temporal_fraction must lie in [0, 1]")
        if self.n3_weight < 0:
            raise ValueError("n3_weight must be non-negative")

    @property
    def temporal_dim(self) -> int:
        return math.ceil(self.temporal_fraction * self.dim)

    @property
    def uses_softmax(self) -> bool:
        return self.family not in TRANSLATIONAL


@dataclass(eq=False)
class StateVector:
    """Learner parameters and features fitted to one timestamp.

    ``fitted_timestamp`` is a timestamp index, ``"static"`` after
    preliminary training, or ``None`` for a freshly initialised state.
    """

    family: str
    entity_features: np.ndarray
    relation_features: np.ndarray
    timestamp_features: Optional[np.ndarray] = None
    scorer_params: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_state: Optional[Dict[str, np.ndarray]] = None
    fitted_timestamp: Union[int, str, None] = None
    n_timestamps: int = 1

    def parameters(self) -> Dict[str, np.ndarray]:
        """Trainable matrices by name, in checkpoint order."""
        out = {"entity": self.entity_features, "relation": self.relation_features}
        if self.timestamp_features is not None:
            out["timestamp"] = self.timestamp_features
        for name in ("amplitude", "frequency", "phase"):
            if name in self.scorer_params:
                out[name] = self.scorer_params[name]
        return out

    def matrix(self, name: str) -> np.ndarray:
        return self.parameters()[name]

    @property
    def n_entities(self) -> int:
        return self.entity_features.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_features.shape[0]

    def copy(self) -> "StateVector":
        return StateVector(
            self.family,
            self.entity_features.copy(),
            self.relation_features.copy(),
            None if self.timestamp_features is None else self.timestamp_features.copy(),
            {k: v.copy() for k, v in self.scorer_params.items()},
            None if self.optimizer_state is None else {k: v.copy() for k, v in self.optimizer_state.items()},
            self.fitted_timestamp,
            self.n_timestamps,
        )

    def is_finite(self) -> bool:
        mats = list(self.parameters().values()) + list((self.optimizer_state or {}).values())
        return all(np.isfinite(m).all() for m in mats)

    def equals(self, other: "StateVector") -> bool:
        """Bit-level equality of every matrix and of the metadata."""
        if (self.family, self.fitted_timestamp, self.n_timestamps) != (
            other.family, other.fitted_timestamp, other.n_timestamps
        ):
            return False
        a, b = self.parameters(), other.parameters()
        oa, ob = self.optimizer_state or {}, other.optimizer_state or {}
        if a.keys() != b.keys() or oa.keys() != ob.keys():
            return False
        return all(np.array_equal(a[k], b[k]) for k in a) and all(np.array_equal(oa[k], ob[k]) for k in oa)


@dataclass
class SampleBatch:
    """Positive quadruples with their corrupted negatives.

    ``negatives`` has shape ``(B, K, 4)`` and ``corruption_slots`` ``(B, K)``
    with values indexing :data:`SLOTS`. With ``full_softmax`` set the
    negatives are ignored and every entity competes for the head and tail
    of each positive (ComplEx / TComplEx only).
    """

    positives: np.ndarray
    negatives: np.ndarray
    corruption_slots: Optional[np.ndarray] = None
    full_softmax: bool = False

    @classmethod
    def full(cls, positives) -> "SampleBatch":
        positives = np.asarray(positives, dtype=np.int64).reshape(-1, 4)
        return cls(positives, np.empty((len(positives), 0, 4), dtype=np.int64), None, True)

    def duplicated(self) -> "SampleBatch":
        cs = None if self.corruption_slots is None else np.concatenate([self.corruption_slots] * 2)
        return SampleBatch(
            np.concatenate([self.positives] * 2), np.concatenate([self.negatives] * 2), cs, self.full_softmax
        )


# -- shared helpers ------------------------------------------------------------

def _halves(x):
    h = x.shape[-1] // 2
    return x[..., :h], x[..., h:]


def _cmul(a_re, a_im, b_re, b_im):
    return a_re * b_re - a_im * b_im, a_re * b_im + a_im * b_re


def _cmul_back(g_re, g_im, a_re, a_im, b_re, b_im):
    """Gradients of ``a*b`` w.r.t. ``a`` and ``b`` given the upstream gradient."""
    ga = (g_re * b_re + g_im * b_im, -g_re * b_im + g_im * b_re)
    gb = (g_re * a_re + g_im * a_im, -g_re * a_im + g_im * a_re)
    return ga, gb


def _cat(re, im):
    return np.concatenate([re, im], axis=-1)


def _log_sigmoid_neg(x):
    """``-log(sigmoid(x))`` without overflow."""
    return np.logaddexp(0.0, -x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _logsumexp_rows(z):
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def segment_sum(idx: np.ndarray, vals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sum ``vals`` rows sharing an index; returns sorted unique indices."""
    order = np.argsort(idx, kind="stable")
    idx, vals = idx[order], vals[order]
    rows, starts = np.unique(idx, return_index=True)
    return rows, np.add.reduceat(vals, starts, axis=0)


def _collect(parts) -> SparseGrad:
    by_name: Dict[str, Tuple[list, list]] = {}
    for name, idx, vals in parts:
        ids, vs = by_name.setdefault(name, ([], []))
        ids.append(np.asarray(idx).ravel())
        vs.append(vals.reshape(-1, vals.shape[-1]))
    return {name: segment_sum(np.concatenate(ids), np.concatenate(vs)) for name, (ids, vs) in by_name.items()}


# -- families --------------------------------------------------------------------

class _Family:
    name = ""

    def shapes(self, spec, nv, nr, nt):
        return {"entity": (nv, spec.dim), "relation": (nr, spec.dim)}

    def forward(self, state, spec, s, r, o, t):
        raise NotImplementedError

    def backward(self, state, spec, cache, g):
        raise NotImplementedError

    def n3_factors(self, s, r, o, t):
        return []

    def entity_candidates(self, state, spec, quads, slot):
        return None


class TransE(_Family):
    name = "TransE"

    def forward(self, state, spec, s, r, o, t):
        E, R = state.entity_features, state.relation_features
        x = E[s] + R[r] - E[o]
        if spec.norm == 1:
            return -np.abs(x).sum(axis=-1), (s, r, o, x, None)
        n = np.sqrt((x * x).sum(axis=-1))
        return -n, (s, r, o, x, n)

    def backward(self, state, spec, cache, g):
        s, r, o, x, n = cache
        if spec.norm == 1:
            dx = -g[:, None] * np.sign(x)
        else:
            safe = np.where(n > 0, n, 1.0)
            dx = -g[:, None] * np.where(n[:, None] > 0, x / safe[:, None], 0.0)
        return [("entity", s, dx), ("relation", r, dx), ("entity", o, -dx)]


class RotatE(_Family):
    name = "RotatE"

    def shapes(self, spec, nv, nr, nt):
        return {"entity": (nv, spec.dim), "relation": (nr, spec.dim // 2)}

    def forward(self, state, spec, s, r, o, t):
        a_re, a_im = _halves(state.entity_features[s])
        o_re, o_im = _halves(state.entity_features[o])
        phi = state.relation_features[r]
        c, sn = np.cos(phi), np.sin(phi)
        rot_re, rot_im = _cmul(a_re, a_im, c, sn)
        u, v = rot_re - o_re, rot_im - o_im
        n = np.sqrt((u * u + v * v).sum(axis=-1))
        return -n, (s, r, o, c, sn, rot_re, rot_im, u, v, n)

    def backward(self, state, spec, cache, g):
        s, r, o, c, sn, rot_re, rot_im, u, v, n = cache
        safe = np.where(n > 0, n, 1.0)[:, None]
        gu = np.where(n[:, None] > 0, -g[:, None] * u / safe, 0.0)
        gv = np.where(n[:, None] > 0, -g[:, None] * v / safe, 0.0)
        ga_re = gu * c + gv * sn
        ga_im = -gu * sn + gv * c
        gphi = -gu * rot_im + gv * rot_re
        return [("entity", s, _cat(ga_re, ga_im)), ("relation", r, gphi), ("entity", o, _cat(-gu, -gv))]


class ComplEx(_Family):
    """``Re(<e_s, w_r, conj(e_o)>)``; TComplEx multiplies ``w_r`` by a timestamp vector."""

    name = "ComplEx"
    temporal = False

    def shapes(self, spec, nv, nr, nt):
        out = super().shapes(spec, nv, nr, nt)
        if self.temporal:
            out["timestamp"] = (nt, spec.dim)
        return out

    def _relation(self, state, r, t):
        r_re, r_im = _halves(state.relation_features[r])
        if not self.temporal:
            return r_re, r_im, None
        tau = _halves(state.timestamp_features[t])
        return (*_cmul(r_re, r_im, *tau), (r_re, r_im, tau))

    def forward(self, state, spec, s, r, o, t):
        s_re, s_im = _halves(state.entity_features[s])
        o_re, o_im = _halves(state.entity_features[o])
        w_re, w_im, rel_cache = self._relation(state, r, t)
        p_re, p_im = _cmul(s_re, s_im, w_re, w_im)
        f = (p_re * o_re + p_im * o_im).sum(axis=-1)
        return f, (s, r, o, t, s_re, s_im, o_re, o_im, w_re, w_im, p_re, p_im, rel_cache)

    def _relation_back(self, r, t, gw_re, gw_im, rel_cache):
        if rel_cache is None:
            return [("relation", r, _cat(gw_re, gw_im))]
        r_re, r_im, (t_re, t_im) = rel_cache
        (gr_re, gr_im), (gt_re, gt_im) = _cmul_back(gw_re, gw_im, r_re, r_im, t_re, t_im)
        return [("relation", r, _cat(gr_re, gr_im)), ("timestamp", t, _cat(gt_re, gt_im))]

    def backward(self, state, spec, cache, g):
        s, r, o, t, s_re, s_im, o_re, o_im, w_re, w_im, p_re, p_im, rel_cache = cache
        g = g[:, None]
        gp_re, gp_im = g * o_re, g * o_im
        go = _cat(g * p_re, g * p_im)
        (gs_re, gs_im), (gw_re, gw_im) = _cmul_back(gp_re, gp_im, s_re, s_im, w_re, w_im)
        return [("entity", s, _cat(gs_re, gs_im)), ("entity", o, go)] + self._relation_back(
            r, t, gw_re, gw_im, rel_cache
        )

    def n3_factors(self, s, r, o, t):
        out = [("entity", s), ("relation", r), ("entity", o)]
        if self.temporal:
            out.append(("timestamp", t))
        return out

    def entity_candidates(self, state, spec, quads, slot):
        s, r, o, t = quads.T
        E_re, E_im = _halves(state.entity_features)
        w_re, w_im, _ = self._relation(state, r, t)
        if slot == "tail":
            p_re, p_im = _cmul(*_halves(state.entity_features[s]), w_re, w_im)
            return p_re @ E_re.T + p_im @ E_im.T
        o_re, o_im = _halves(state.entity_features[o])
        q_re, q_im = _cmul(w_re, w_im, o_re, -o_im)
        return q_re @ E_re.T - q_im @ E_im.T

    def full_softmax_loss(self, state, spec, pos):
        """Cross-entropy of every positive's head and tail against all entities."""
        s, r, o, t = pos.T
        n = state.n_entities
        E_re, E_im = _halves(state.entity_features)
        s_re, s_im = _halves(state.entity_features[s])
        o_re, o_im = _halves(state.entity_features[o])
        w_re, w_im, rel_cache = self._relation(state, r, t)
        rows = np.arange(len(pos))

        p_re, p_im = _cmul(s_re, s_im, w_re, w_im)
        z_tail = p_re @ E_re.T + p_im @ E_im.T
        q_re, q_im = _cmul(w_re, w_im, o_re, -o_im)
        z_head = q_re @ E_re.T - q_im @ E_im.T
        loss = float((_logsumexp_rows(z_tail) - z_tail[rows, o]).sum()
                     + (_logsumexp_rows(z_head) - z_head[rows, s]).sum())

        G_t = _softmax_rows(z_tail)
        G_t[rows, o] -= 1.0
        G_h = _softmax_rows(z_head)
        G_h[rows, s] -= 1.0
        gE = _cat(G_t.T @ p_re + G_h.T @ q_re, G_t.T @ p_im - G_h.T @ q_im)
        gp_re, gp_im = G_t @ E_re, G_t @ E_im
        gq_re, gq_im = G_h @ E_re, -(G_h @ E_im)
        (gs_re, gs_im), (gw1_re, gw1_im) = _cmul_back(gp_re, gp_im, s_re, s_im, w_re, w_im)
        (gw2_re, gw2_im), (gc_re, gc_im) = _cmul_back(gq_re, gq_im, w_re, w_im, o_re, -o_im)
        parts = [
            ("entity", np.arange(n), gE),
            ("entity", s, _cat(gs_re, gs_im)),
            ("entity", o, _cat(gc_re, -gc_im)),
        ]
        parts += self._relation_back(r, t, gw1_re + gw2_re, gw1_im + gw2_im, rel_cache)
        return loss, parts


class TComplEx(ComplEx):
    name = "TComplEx"
    temporal = True


class DESimplE(_Family):
    """SimplE over diachronic entity embeddings.

    Entity ``v`` at scaled time ``tau`` has head- and tail-role vectors whose
    first ``k`` coordinates are ``a * sin(w * tau + b)`` and whose remaining
    ``d - k`` coordinates are static. Columns ``[:k]`` of the amplitude,
    frequency and phase matrices belong to the head role, ``[k:]`` to the
    tail role; likewise ``entity_features`` holds head-role static columns
    first. Relations hold a forward and an inverse vector.
    """

    name = "DE-SimplE"

    def shapes(self, spec, nv, nr, nt):
        k = spec.temporal_dim
        out = {"entity": (nv, 2 * (spec.dim - k)), "relation": (nr, 2 * spec.dim)}
        for name in ("amplitude", "frequency", "phase"):
            out[name] = (nv, 2 * k)
        return out

    @staticmethod
    def _cols(spec, role):
        k, ds = spec.temporal_dim, spec.dim - spec.temporal_dim
        return (slice(0, k), slice(0, ds)) if role == 0 else (slice(k, 2 * k), slice(ds, 2 * ds))

    def _embed(self, state, spec, v, tau, role):
        tc, sc = self._cols(spec, role)
        P = state.scorer_params
        a, w, b = P["amplitude"][v, tc], P["frequency"][v, tc], P["phase"][v, tc]
        arg = w * tau[..., None] + b
        sin, cos = np.sin(arg), np.cos(arg)
        emb = np.concatenate([a * sin, state.entity_features[v, sc]], axis=-1)
        return emb, (v, tau, role, a, sin, cos)

    def _embed_back(self, spec, g, cache):
        v, tau, role, a, sin, cos = cache
        k = spec.temporal_dim
        tc, sc = self._cols(spec, role)
        ncols = 2 * k
        gt, gs = g[:, :k], g[:, k:]

        def place(vals, cols, width):
            full = np.zeros((len(v), width))
            full[:, cols] = vals
            return full

        gcos = gt * a * cos
        parts = [
            ("amplitude", v, place(gt * sin, tc, ncols)),
            ("frequency", v, place(gcos * tau[:, None], tc, ncols)),
            ("phase", v, place(gcos, tc, ncols)),
        ]
        if spec.dim - k:
            parts.append(("entity", v, place(gs, sc, 2 * (spec.dim - k))))
        return parts

    def _tau(self, state, t):
        return np.asarray(t, dtype=np.float64) / state.n_timestamps

    def forward(self, state, spec, s, r, o, t):
        tau = self._tau(state, t)
        d = spec.dim
        hs, c_hs = self._embed(state, spec, s, tau, 0)
        to, c_to = self._embed(state, spec, o, tau, 1)
        ho, c_ho = self._embed(state, spec, o, tau, 0)
        ts, c_ts = self._embed(state, spec, s, tau, 1)
        rel = state.relation_features[r]
        rf, ri = rel[:, :d], rel[:, d:]
        f = 0.5 * ((hs * rf * to).sum(axis=-1) + (ho * ri * ts).sum(axis=-1))
        return f, (r, hs, to, ho, ts, rf, ri, c_hs, c_to, c_ho, c_ts)

    def backward(self, state, spec, cache, g):
        r, hs, to, ho, ts, rf, ri, c_hs, c_to, c_ho, c_ts = cache
        g = 0.5 * g[:, None]
        parts = [("relation", r, np.concatenate([g * hs * to, g * ho * ts], axis=-1))]
        parts += self._embed_back(spec, g * rf * to, c_hs)
        parts += self._embed_back(spec, g * hs * rf, c_to)
        parts += self._embed_back(spec, g * ri * ts, c_ho)
        parts += self._embed_back(spec, g * ho * ri, c_ts)
        return parts

    def entity_candidates(self, state, spec, quads, slot):
        d = spec.dim
        out = np.empty((len(quads), state.n_entities))
        everyone = np.arange(state.n_entities)
        for t in np.unique(quads[:, 3]):
            sel = np.nonzero(quads[:, 3] == t)[0]
            q = quads[sel]
            tau_q = self._tau(state, q[:, 3])
            tau_all = np.full(state.n_entities, float(t) / state.n_timestamps)
            H, _ = self._embed(state, spec, everyone, tau_all, 0)
            T, _ = self._embed(state, spec, everyone, tau_all, 1)
            rel = state.relation_features[q[:, 1]]
            rf, ri = rel[:, :d], rel[:, d:]
            if slot == "tail":
                hs, _ = self._embed(state, spec, q[:, 0], tau_q, 0)
                ts, _ = self._embed(state, spec, q[:, 0], tau_q, 1)
                out[sel] = 0.5 * ((hs * rf) @ T.T + (ri * ts) @ H.T)
            else:
                to, _ = self._embed(state, spec, q[:, 2], tau_q, 1)
                ho, _ = self._embed(state, spec, q[:, 2], tau_q, 0)
                out[sel] = 0.5 * ((rf * to) @ H.T + (ho * ri) @ T.T)
        return out


_FAMILIES = {f.name: f for f in (TransE(), RotatE(), ComplEx(), TComplEx(), DESimplE())}


def family_of(spec: ScorerSpec) -> _Family:
    return _FAMILIES[spec.family]


# -- state construction ------------------------------------------------------------

def _draw(name, shape, spec, seed):
    rng = np.random.default_rng([seed, _STREAM[name]])
    if spec.family == "RotatE" and name == "relation":
        return rng.uniform(-np.pi, np.pi, size=shape)
    bound = 6.0 / math.sqrt(spec.dim)
    return rng.uniform(-bound, bound, size=shape)


def init_state(spec: ScorerSpec, n_entities: int, n_relations: int, n_timestamps: int, seed: int = 0) -> StateVector:
    """Uniform random state; each matrix has its own seeded stream.

    Rows are drawn in order, so a state built for more entities (or
    timestamps) extends a smaller one with the same seed row for row.
    """
    if min(n_entities, n_relations, n_timestamps) < 1:
        raise ValueError("vocabulary sizes must be positive")
    shapes = family_of(spec).shapes(spec, n_entities, n_relations, n_timestamps)
    mats = {name: _draw(name, shape, spec, seed) for name, shape in shapes.items()}
    return StateVector(
        spec.family,
        mats.pop("entity"),
        mats.pop("relation"),
        mats.pop("timestamp", None),
        mats,
        None,
        None,
        n_timestamps,
    )


def grow_state(state: StateVector, spec: ScorerSpec, n_entities: int, n_relations: int, n_timestamps: int,
               seed: int = 0) -> StateVector:
    """Add rows for indices unseen so far; existing rows are kept bit-for-bit.

    New rows are the ones :func:`init_state` would have produced for the
    larger vocabulary with the same seed; new accumulator rows are zero.
    """
    fam = family_of(spec)
    nv = max(n_entities, state.n_entities)
    nr = max(n_relations, state.n_relations)
    nt = max(n_timestamps, state.timestamp_features.shape[0]) if state.timestamp_features is not None else state.n_timestamps
    shapes = fam.shapes(spec, nv, nr, nt)
    params = state.parameters()
    grown = {}
    for name, shape in shapes.items():
        old = params[name]
        if shape[0] > old.shape[0]:
            fresh = _draw(name, shape, spec, seed)
            fresh[: old.shape[0]] = old
            grown[name] = fresh
        else:
            grown[name] = old
    opt = None
    if state.optimizer_state is not None:
        opt = {}
        for name, acc in state.optimizer_state.items():
            rows = grown[name].shape[0]
            opt[name] = np.concatenate([acc, np.zeros((rows - acc.shape[0], acc.shape[1]))]) if rows > acc.shape[0] else acc
    return StateVector(
        state.family,
        grown.pop("entity"),
        grown.pop("relation"),
        grown.pop("timestamp", None),
        grown,
        opt,
        state.fitted_timestamp,
        nt if state.timestamp_features is not None else state.n_timestamps,
    )


# -- scoring -----------------------------------------------------------------------

def _check_indices(state, quads):
    quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    if len(quads) == 0:
        return quads
    if quads.min() < 0:
        raise IndexError("negative index in quadruple")
    if quads[:, [0, 2]].max() >= state.n_entities:
        raise IndexError("entity index out of range")
    if quads[:, 1].max() >= state.n_relations:
        raise IndexError("relation index out of range")
    if state.timestamp_features is not None and quads[:, 3].max() >= state.timestamp_features.shape[0]:
        raise IndexError("timestamp index out of range")
    return quads


def score_many(state: StateVector, spec: ScorerSpec, quads) -> np.ndarray:
    quads = _check_indices(state, quads)
    f, _ = family_of(spec).forward(state, spec, *quads.T)
    return f


def score(state: StateVector, spec: ScorerSpec, q) -> float:
    return float(score_many(state, spec, [q])[0])


def candidate_scores(state: StateVector, spec: ScorerSpec, quads, slot: str, chunk: int = 1 << 21) -> np.ndarray:
    """Scores of every replacement of ``slot`` for each query, shape ``(B, N)``.

    Column ``c`` holds the score of the query with ``slot`` set to ``c``.
    """
    if slot not in SLOTS:
        raise ValueError(f"unknown slot {slot!r}")
    quads = _check_indices(state, quads)
    fam = family_of(spec)
    if slot != "relation":
        fast = fam.entity_candidates(state, spec, quads, slot)
        if fast is not None:
            return fast
    n = state.n_relations if slot == "relation" else state.n_entities
    col = {"head": 0, "relation": 1, "tail": 2}[slot]
    width = max(state.parameters()["entity"].shape[1], 1)
    step = max(1, chunk // (n * width))
    out = np.empty((len(quads), n))
    cand = np.arange(n)
    for lo in range(0, len(quads), step):
        block = np.repeat(quads[lo : lo + step], n, axis=0)
        block[:, col] = np.tile(cand, len(block) // n)
        f, _ = fam.forward(state, spec, *block.T)
        out[lo : lo + step] = f.reshape(-1, n)
    return out


# -- loss ----------------------------------------------------------------------------

def _n3_parts(state, spec, pos):
    fam = family_of(spec)
    parts, total = [], 0.0
    for name, idx in fam.n3_factors(*pos.T):
        re, im = _halves(state.matrix(name)[idx])
        mod = np.sqrt(re * re + im * im)
        total += float((mod ** 3).sum())
        coef = 3.0 * spec.n3_weight * mod
        parts.append((name, idx, _cat(coef * re, coef * im)))
    return spec.n3_weight * total, parts


def loss_and_grad(state: StateVector, spec: ScorerSpec, batch: SampleBatch, need_grad: bool = True):
    """Loss of ``batch`` summed over positives and its sparse gradient.

    Translational families: ``-log sig(margin + f_pos) - mean_k log sig(-margin - f_neg)``.
    Other families: softmax cross-entropy of each positive against its
    negatives. ComplEx / TComplEx add ``n3_weight`` times the N3 norm of the
    positives' factors.
    """
    fam = family_of(spec)
    pos = _check_indices(state, batch.positives)
    if len(pos) == 0:
        raise ValueError("empty batch")

    if batch.full_softmax:
        if not isinstance(fam, ComplEx):
            raise ValueError(f"full softmax is only available for ComplEx/TComplEx, not {spec.family}")
        loss, parts = fam.full_softmax_loss(state, spec, pos)
    else:
        neg = np.asarray(batch.negatives, dtype=np.int64).reshape(len(pos), -1, 4)
        n_neg = neg.shape[1]
        if spec.uses_softmax and n_neg == 0:
            raise ValueError("softmax loss needs at least one negative per positive")
        allq = _check_indices(state, np.concatenate([pos, neg.reshape(-1, 4)]))
        f, cache = fam.forward(state, spec, *allq.T)
        f_pos, f_neg = f[: len(pos)], f[len(pos):].reshape(len(pos), n_neg)
        if spec.uses_softmax:
            z = np.concatenate([f_pos[:, None], f_neg], axis=1)
            loss = float((_logsumexp_rows(z) - f_pos).sum())
            gz = _softmax_rows(z)
            gz[:, 0] -= 1.0
            g = np.concatenate([gz[:, 0], gz[:, 1:].ravel()])
        else:
            gamma = spec.margin
            loss = float(_log_sigmoid_neg(gamma + f_pos).sum())
            g_pos = -_sigmoid(-(gamma + f_pos))
            if n_neg:
                if spec.adversarial_temperature is None:
                    w = np.full_like(f_neg, 1.0 / n_neg)
                else:
                    w = _softmax_rows(spec.adversarial_temperature * f_neg)
                loss += float((w * _log_sigmoid_neg(-gamma - f_neg)).sum())
                g_neg = w * _sigmoid(gamma + f_neg)
            else:
                g_neg = np.empty((len(pos), 0))
            g = np.concatenate([g_pos, g_neg.ravel()])
        parts = fam.backward(state, spec, cache, g) if need_grad else []

    if spec.n3_weight > 0 and fam.n3_factors(*pos.T):
        reg, reg_parts = _n3_parts(state, spec, pos)
        loss += reg
        parts += reg_parts
    if not need_grad:
        return loss, None
    return loss, _collect(parts)


def batch_loss(state: StateVector, spec: ScorerSpec, batch: SampleBatch) -> float:
    return loss_and_grad(state, spec, batch, need_grad=False)[0]


def touched_rows(spec: ScorerSpec, state: StateVector, batch: SampleBatch) -> Dict[str, np.ndarray]:
    """Rows of every matrix that a batch references."""
    quads = np.concatenate([batch.positives, np.asarray(batch.negatives).reshape(-1, 4)])
    kinds = {
        "entity": np.arange(state.n_entities) if batch.full_softmax else np.unique(quads[:, [0, 2]]),
        "relation": np.unique(quads[:, 1]),
        "timestamp": np.unique(quads[:, 3]),
    }
    return {name: kinds[_ROW_KIND[name]] for name in state.parameters()
            if not (name == "timestamp" and state.timestamp_features is None)}


# -- update -----------------------------------------------------------------------------

def sgd_step(state: StateVector, grad: SparseGrad, lr: float, optimizer: str = "sgd", eps: float = 1e-10) -> StateVector:
    """Apply one update in place to the rows present in ``grad``.

    ``sgd`` subtracts ``lr * g``; ``adagrad`` accumulates squared gradients
    in ``state.optimizer_state`` and divides by ``sqrt(acc) + eps``.
    """
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if optimizer not in ("sgd", "adagrad"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    for name, (rows, vals) in grad.items():
        if not np.isfinite(vals).all():
            raise NumericalError(f"non-finite gradient for {name}", state.fitted_timestamp)
    params = state.parameters()
    if optimizer == "adagrad" and state.optimizer_state is None:
        state.optimizer_state = {name: np.zeros_like(m) for name, m in params.items()}
    for name, (rows, vals) in grad.items():
        mat = params[name]
        if optimizer == "sgd":
            mat[rows] -= lr * vals
        else:
            acc = state.optimizer_state[name]
            acc[rows] += vals * vals
            mat[rows] -= lr * vals / (np.sqrt(acc[rows]) + eps)
    return state


def wrap_phases(phases: np.ndarray) -> np.ndarray:
    """Reduce phases outside ``[-pi, pi)`` into it; values inside are untouched."""
    out = phases.copy()
    outside = (out < -np.pi) | (out >= np.pi)
    out[outside] = np.mod(out[outside] + np.pi, 2 * np.pi) - np.pi
    return out
