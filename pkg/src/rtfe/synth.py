"""Synthetic temporal knowledge graphs with planted ComplEx latents.

Entity latents random-walk across timestamps. At every timestamp a
``continuity`` fraction of the previous facts persists and the rest is
filled with the currently highest-scoring triples, so adjacent timestamps
share most of their facts while the graph slowly drifts.
"""
from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np

from .dataset import TemporalDataset, Vocab, build_dataset
from .scorers import ScorerSpec, StateVector


@dataclass(frozen=True)
class SynthProfile:
    n_entities: int = 50
    n_relations: int = 5
    n_timestamps: int = 10
    facts_per_timestamp: int = 200
    continuity: float = 0.8
    drift: float = 0.05
    test_fraction: float = 0.1
    valid_fraction: float = 0.1
    latent_dim: int = 8
    seed: int = 0

    def with_seed(self, seed: int) -> "SynthProfile":
        return replace(self, seed=seed)

    def validate(self) -> None:
        if min(self.n_entities, self.n_relations, self.n_timestamps, self.latent_dim) < 1:
            raise ValueError("sizes must be positive")
        if self.n_entities < 2:
            raise ValueError("need at least two entities")
        capacity = self.n_entities * (self.n_entities - 1) * self.n_relations
        if not 1 <= self.facts_per_timestamp <= capacity:
            raise ValueError(f"facts_per_timestamp must lie in [1, {capacity}]")
        if not 0.0 <= self.continuity <= 1.0:
            raise ValueError("continuity must lie in [0, 1]")
        if self.drift < 0:
            raise ValueError("drift must be non-negative")
        if self.test_fraction < 0 or self.valid_fraction < 0 or self.test_fraction + self.valid_fraction >= 1:
            raise ValueError("test and valid fractions must be non-negative and sum below 1")


def planted_scores(ent: np.ndarray, rel: np.ndarray) -> np.ndarray:
    """ComplEx scores of every ``(s, r, o)``, shape ``(|V|, |R|, |V|)``."""
    return np.einsum("sk,rk,ok->sro", ent, rel, np.conj(ent)).real


def _simulate(profile: SynthProfile):
    profile.validate()
    rng = np.random.default_rng(profile.seed)
    nv, nr, k = profile.n_entities, profile.n_relations, profile.latent_dim
    ent = (rng.standard_normal((nv, k)) + 1j * rng.standard_normal((nv, k))) / np.sqrt(2)
    rel = rng.standard_normal((nr, k)) + 1j * rng.standard_normal((nr, k))
    n_keep = int(round(profile.continuity * profile.facts_per_timestamp))
    n_test = int(round(profile.test_fraction * profile.facts_per_timestamp))
    n_valid = int(round(profile.valid_fraction * profile.facts_per_timestamp))

    not_self = np.ones((nv, nr, nv), dtype=bool)
    not_self[np.arange(nv), :, np.arange(nv)] = False
    latents, fact_sets, splits = [], [], []
    prev: List[Tuple[int, int, int]] = []
    for t in range(profile.n_timestamps):
        if t:
            ent = ent + profile.drift * (rng.standard_normal((nv, k)) + 1j * rng.standard_normal((nv, k))) / np.sqrt(2)
        latents.append(ent.copy())
        kept = [prev[i] for i in sorted(rng.choice(len(prev), size=min(n_keep, len(prev)), replace=False))] if prev else []
        chosen = dict.fromkeys(kept)
        scores = np.where(not_self, planted_scores(ent, rel), -np.inf).ravel()
        for flat in np.argsort(-scores, kind="stable"):
            if len(chosen) >= profile.facts_per_timestamp:
                break
            triple = tuple(int(x) for x in np.unravel_index(flat, (nv, nr, nv)))
            chosen.setdefault(triple, None)
        facts = list(chosen)
        order = rng.permutation(len(facts))
        labels = np.zeros(len(facts), dtype=np.int64)  # 0 train, 1 valid, 2 test
        labels[order[:n_test]] = 2
        labels[order[n_test : n_test + n_valid]] = 1
        fact_sets.append(facts)
        splits.append(labels)
        prev = facts

    # every evaluated fact must mention entities and relations seen in training
    train_ents, train_rels = set(), set()
    for facts, labels in zip(fact_sets, splits):
        for (s, r, o), lab in zip(facts, labels):
            if lab == 0:
                train_ents.update((s, o))
                train_rels.add(r)
    for facts, labels in zip(fact_sets, splits):
        for i, (s, r, o) in enumerate(facts):
            if labels[i] and not (s in train_ents and o in train_ents and r in train_rels):
                labels[i] = 0
    return rel, latents, fact_sets, splits


def generate(profile: SynthProfile = SynthProfile()) -> TemporalDataset:
    """Sample a dataset; entity ``i`` is named ``e{i}``, relation ``j`` ``r{j}``."""
    _, _, fact_sets, splits = _simulate(profile)
    rows = {"train": [], "valid": [], "test": []}
    names = ("train", "valid", "test")
    for t, (facts, labels) in enumerate(zip(fact_sets, splits)):
        for (s, r, o), lab in zip(facts, labels):
            rows[names[lab]].append((f"e{s}", f"r{r}", f"e{o}", str(t)))
    return build_dataset(
        rows,
        entity_vocab=Vocab(f"e{i}" for i in range(profile.n_entities)),
        relation_vocab=Vocab(f"r{j}" for j in range(profile.n_relations)),
        timestamp_labels=[str(t) for t in range(profile.n_timestamps)],
    )


def planted_states(profile: SynthProfile = SynthProfile()) -> Tuple[ScorerSpec, List[StateVector]]:
    """The generating ComplEx model, one state per timestamp."""
    rel, latents, _, _ = _simulate(profile)
    spec = ScorerSpec("ComplEx", 2 * profile.latent_dim)
    states = [
        StateVector(
            "ComplEx",
            np.concatenate([ent.real, ent.imag], axis=1),
            np.concatenate([rel.real, rel.imag], axis=1),
            fitted_timestamp=t,
            n_timestamps=profile.n_timestamps,
        )
        for t, ent in enumerate(latents)
    ]
    return spec, states
