"""Filtered ranking evaluation with per-timestamp and weighted metrics."""
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .scorers import candidate_scores

ENTITY_SLOTS = ("tail", "head")
HITS = (1, 3, 10)
METRICS = ("mrr", "hits1", "hits3", "hits10", "mr")
RELATION_METRICS = ("mr", "hits1")


class FilterIndex:
    """True heads, tails and relations of every known fact.

    With ``time_aware`` (the default) a corruption is filtered only if it is
    true at the query's own timestamp; otherwise truth at any timestamp
    counts.
    """

    def __init__(self, quads, time_aware: bool = True):
        self.time_aware = time_aware
        quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
        if time_aware:
            self.facts = {tuple(q) for q in quads.tolist()}
        else:
            self.facts = {tuple(q[:3]) for q in quads.tolist()}
        heads, tails, rels = defaultdict(set), defaultdict(set), defaultdict(set)
        for s, r, o, t in quads.tolist():
            t = t if time_aware else None
            heads[(r, o, t)].add(s)
            tails[(s, r, t)].add(o)
            rels[(s, o, t)].add(r)
        self._maps = {
            "head": {k: np.fromiter(sorted(v), dtype=np.int64) for k, v in heads.items()},
            "tail": {k: np.fromiter(sorted(v), dtype=np.int64) for k, v in tails.items()},
            "relation": {k: np.fromiter(sorted(v), dtype=np.int64) for k, v in rels.items()},
        }

    @classmethod
    def from_dataset(cls, dataset, time_aware: bool = True) -> "FilterIndex":
        return cls(dataset.quadruples(), time_aware)

    def true_candidates(self, q, slot: str) -> np.ndarray:
        """Indices that complete ``q``'s ``slot`` into a known fact (q's own included)."""
        s, r, o, t = (int(x) for x in q)
        t = t if self.time_aware else None
        key = {"head": (r, o, t), "tail": (s, r, t), "relation": (s, o, t)}[slot]
        return self._maps[slot].get(key, np.empty(0, dtype=np.int64))


_OWN_COLUMN = {"head": 0, "relation": 1, "tail": 2}


def ranks_from_scores(scores: np.ndarray, quads: np.ndarray, slot: str, filter: FilterIndex) -> np.ndarray:
    """Filtered ranks of each query's own column in a ``(B, N)`` score matrix.

    ``rank = 1 + #higher + floor(#tied / 2)`` over the unfiltered candidates.
    """
    own = quads[:, _OWN_COLUMN[slot]]
    rows = np.arange(len(quads))
    target = scores[rows, own]
    keep = np.ones(scores.shape, dtype=bool)
    for i, q in enumerate(quads):
        keep[i, filter.true_candidates(q, slot)] = False
    keep[rows, own] = False
    higher = ((scores > target[:, None]) & keep).sum(axis=1)
    tied = ((scores == target[:, None]) & keep).sum(axis=1)
    return 1 + higher + tied // 2


def rank_query(state, spec, q, slot: str, filter: FilterIndex) -> int:
    q = np.asarray(q, dtype=np.int64).reshape(1, 4)
    return int(ranks_from_scores(candidate_scores(state, spec, q, slot), q, slot, filter)[0])


def rank_queries(state, spec, quads, slot: str, filter: FilterIndex, batch_size: int = 256) -> np.ndarray:
    quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    out = np.empty(len(quads), dtype=np.int64)
    for lo in range(0, len(quads), batch_size):
        block = quads[lo : lo + batch_size]
        out[lo : lo + batch_size] = ranks_from_scores(candidate_scores(state, spec, block, slot), block, slot, filter)
    return out


def metrics_from_ranks(ranks) -> Dict[str, float]:
    ranks = np.asarray(ranks, dtype=np.float64)
    out = {"mrr": float(np.mean(1.0 / ranks))}
    for n in HITS:
        out[f"hits{n}"] = float(np.mean(ranks <= n))
    out["mr"] = float(np.mean(ranks))
    return out


@dataclass
class TimestampRecord:
    """Metrics of one timestamp's test graph.

    ``blocks`` maps ``entity`` (head and tail pooled), ``tail``, ``head``
    and optionally ``relation`` to metric dicts; it is empty when the
    timestamp has no test facts.
    """

    t: int
    size: int
    label: str = ""
    blocks: Dict[str, Dict[str, float]] = field(default_factory=dict)
    ranks: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def empty(self) -> bool:
        return self.size == 0

    @property
    def mrr(self) -> Optional[float]:
        return self.blocks["entity"]["mrr"] if "entity" in self.blocks else None


def evaluate_timestamp(
    state,
    spec,
    quads,
    filter: FilterIndex,
    t: Optional[int] = None,
    label: str = "",
    relations: bool = False,
    require_fitted: bool = True,
) -> TimestampRecord:
    """Rank every test quadruple of one timestamp under a fitted state.

    Head and tail prediction are always run; ``relations`` adds relation
    prediction. ``require_fitted`` checks that the state was fitted to ``t``.
    """
    quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    if t is None:
        t = int(quads[0, 3]) if len(quads) else -1
    if require_fitted and state.fitted_timestamp != t:
        raise ValueError(f"state is fitted to {state.fitted_timestamp!r}, not timestamp {t}")
    record = TimestampRecord(t, len(quads), label)
    if record.empty:
        return record
    slots = ENTITY_SLOTS + (("relation",) if relations else ())
    for slot in slots:
        record.ranks[slot] = rank_queries(state, spec, quads, slot, filter)
        record.blocks[slot] = metrics_from_ranks(record.ranks[slot])
    record.blocks["entity"] = metrics_from_ranks(np.concatenate([record.ranks[s] for s in ENTITY_SLOTS]))
    return record


def aggregate(records: Sequence[TimestampRecord]) -> Dict[str, Dict[str, float]]:
    """Test-size weighted average of every metric over non-empty records."""
    live = [r for r in records if not r.empty]
    if not live:
        raise ValueError("no non-empty timestamp to aggregate")
    total = sum(r.size for r in live)
    out = {}
    for block in live[0].blocks:
        have = [r for r in live if block in r.blocks]
        weight = sum(r.size for r in have)
        out[block] = {m: math.fsum(r.size * r.blocks[block][m] for r in have) / weight for m in have[0].blocks[block]}
    out["size"] = {"test": float(total)}
    return out


@dataclass
class EvalReport:
    records: List[TimestampRecord] = field(default_factory=list)

    def add(self, record: TimestampRecord) -> None:
        self.records.append(record)

    @property
    def aggregate(self) -> Dict[str, Dict[str, float]]:
        return aggregate(self.records)

    @property
    def mrr(self) -> float:
        return self.aggregate["entity"]["mrr"]

    def restrict(self, timestamps) -> "EvalReport":
        keep = set(timestamps)
        return EvalReport([r for r in self.records if r.t in keep])

    def __len__(self):
        return len(self.records)

    # -- text formats ------------------------------------------------------------

    COLUMNS = ("t", "label", "size") + tuple(
        f"{block}_{m}" for block in ("entity", "tail", "head") for m in METRICS
    ) + tuple(f"relation_{m}" for m in RELATION_METRICS)

    def _row(self, t, label, size, blocks):
        cells = [str(t), label, str(size)]
        for col in self.COLUMNS[3:]:
            block, metric = col.split("_", 1)
            value = blocks.get(block, {}).get(metric)
            cells.append("NA" if value is None else repr(float(value)))
        return "\t".join(cells)

    def to_tsv(self) -> str:
        lines = ["\t".join(self.COLUMNS)]
        for r in self.records:
            lines.append(self._row(r.t, r.label, r.size, r.blocks))
        if any(not r.empty for r in self.records):
            agg = self.aggregate
            lines.append(self._row("all", "", int(agg["size"]["test"]), agg))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_tsv())

    @classmethod
    def from_tsv(cls, text: str) -> "EvalReport":
        lines = [line for line in text.splitlines() if line]
        header = lines[0].split("\t")
        if tuple(header) != cls.COLUMNS:
            raise ValueError("not a report file")
        report = cls()
        for line in lines[1:]:
            cells = line.split("\t")
            if cells[0] == "all":
                continue
            blocks: Dict[str, Dict[str, float]] = {}
            for col, cell in zip(header[3:], cells[3:]):
                if cell != "NA":
                    block, metric = col.split("_", 1)
                    blocks.setdefault(block, {})[metric] = float(cell)
            report.add(TimestampRecord(int(cells[0]), int(cells[2]), cells[1], blocks))
        return report

    @classmethod
    def read(cls, path) -> "EvalReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_tsv(fh.read())

    def summary(self) -> str:
        """Aggregate table in percent: pooled, tail and head for each metric."""
        agg = self.aggregate
        width = 22
        lines = [
            " " * 8 + "".join(f"{name:>{width}}" for name in ("MRR", "Hits@1", "Hits@3", "Hits@10")),
            " " * 8 + "".join(f"{'all / tail / head':>{width}}" for _ in range(4)),
        ]
        cells = [
            " / ".join(f"{100 * agg[b][m]:.1f}" for b in ("entity", "tail", "head"))
            for m in ("mrr", "hits1", "hits3", "hits10")
        ]
        lines.append(f"{'entity':8}" + "".join(f"{c:>{width}}" for c in cells))
        if "relation" in agg:
            lines.append(f"relation  MR {agg['relation']['mr']:.2f}  Hits@1 {100 * agg['relation']['hits1']:.1f}")
        lines.append(f"test quadruples: {int(agg['size']['test'])}")
        return "\n".join(lines)


def evaluate_dataset(state, spec, dataset, filter: Optional[FilterIndex] = None, split: str = "test",
                     relations: bool = False, timestamps=None) -> EvalReport:
    """Evaluate one fixed state on every timestamp (no fine-tuning)."""
    filter = filter or FilterIndex.from_dataset(dataset)
    report = EvalReport()
    for t in (range(dataset.n_timestamps) if timestamps is None else timestamps):
        report.add(evaluate_timestamp(
            state, spec, dataset.split(split)[t], filter, t, dataset.timestamp_labels[t], relations,
            require_fitted=False,
        ))
    return report
