"""Temporal knowledge-graph datasets.

A :class:`TemporalDataset` holds the entity and relation vocabularies, the
ordered timestamp labels and, for every timestamp, the train / valid / test
quadruples as ``(m, 4)`` integer arrays with columns ``s, r, o, t``.

Quadruple files are UTF-8 text with one ``s<TAB>r<TAB>o<TAB>t`` fact per
line (the ICEWS / GDELT layout). Interval files carry
``s<TAB>r<TAB>o<TAB>start<TAB>end`` facts (the YAGO11k / Wikidata12k layout)
and are turned into quadruples by :func:`bin_timestamps`.
"""
import os
import re
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DatasetError

SPLITS = ("train", "valid", "test")
OPEN_YEAR = "####"


class Vocab:
    """Bidirectional name <-> index map; indices follow first-seen order."""

    def __init__(self, names: Iterable[str] = ()):
        self._names: List[str] = []
        self._index: Dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self._index.get(name)
        if idx is None:
            idx = len(self._names)
            self._index[name] = idx
            self._names.append(name)
        return idx

    def index(self, name: str) -> int:
        return self._index[name]

    def name(self, idx: int) -> str:
        return self._names[idx]

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self._names)

    def copy(self) -> "Vocab":
        return Vocab(self._names)

    def __contains__(self, name):
        return name in self._index

    def __len__(self):
        return len(self._names)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self._names == other._names

    def __repr__(self):
        return f"Vocab({len(self)} names)"


@dataclass(frozen=True)
class TimestampGraph:
    """Facts of a single timestamp, indices in the owning dataset's vocabulary."""

    t: int
    label: str
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray


@dataclass(frozen=True, eq=False)
class TemporalDataset:
    entity_vocab: Vocab
    relation_vocab: Vocab
    timestamp_labels: Tuple[str, ...]
    train: Tuple[np.ndarray, ...]
    valid: Tuple[np.ndarray, ...]
    test: Tuple[np.ndarray, ...]

    def __post_init__(self):
        n = len(self.timestamp_labels)
        for split in SPLITS:
            graphs = getattr(self, split)
            if len(graphs) != n:
                raise DatasetError(f"{split} has {len(graphs)} timestamps, expected {n}")
            for i, quads in enumerate(graphs):
                if quads.ndim != 2 or quads.shape[1] != 4:
                    raise DatasetError(f"{split}[{i}] must have shape (m, 4)")
                if len(quads) and not (quads[:, 3] == i).all():
                    raise DatasetError(f"{split}[{i}] holds quadruples of another timestamp")
                quads.setflags(write=False)
        all_quads = self.quadruples()
        if len(all_quads):
            if all_quads[:, [0, 2]].max() >= self.n_entities or all_quads[:, 1].max() >= self.n_relations:
                raise DatasetError("quadruple index outside the vocabulary")
            if all_quads[:, :3].min() < 0:
                raise DatasetError("negative quadruple index")

    @property
    def n_entities(self) -> int:
        return len(self.entity_vocab)

    @property
    def n_relations(self) -> int:
        return len(self.relation_vocab)

    @property
    def n_timestamps(self) -> int:
        return len(self.timestamp_labels)

    def split(self, name: str) -> Tuple[np.ndarray, ...]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def quadruples(self, splits: Sequence[str] = SPLITS, interval: Optional[Tuple[int, int]] = None) -> np.ndarray:
        """All quadruples of ``splits`` within the half-open timestamp ``interval``."""
        lo, hi = interval if interval is not None else (0, self.n_timestamps)
        parts = [self.split(name)[i] for name in splits for i in range(lo, hi)]
        if not parts:
            return np.empty((0, 4), dtype=np.int64)
        return np.concatenate(parts)

    def split_sizes(self) -> Dict[str, int]:
        return {name: int(sum(len(q) for q in self.split(name))) for name in SPLITS}

    def graph(self, t: int) -> TimestampGraph:
        return TimestampGraph(t, self.timestamp_labels[t], self.train[t], self.valid[t], self.test[t])

    def graphs(self, start: int = 0, stop: Optional[int] = None) -> List[TimestampGraph]:
        stop = self.n_timestamps if stop is None else stop
        return [self.graph(t) for t in range(start, stop)]

    def head(self, n: int) -> "TemporalDataset":
        """The first ``n`` timestamps, keeping the full vocabularies."""
        return TemporalDataset(
            self.entity_vocab, self.relation_vocab, self.timestamp_labels[:n],
            self.train[:n], self.valid[:n], self.test[:n],
        )

    def summary(self) -> Dict[str, int]:
        out = {"entities": self.n_entities, "relations": self.n_relations, "timestamps": self.n_timestamps}
        out.update(self.split_sizes())
        return out


@dataclass(frozen=True)
class StaticGraph:
    triples: np.ndarray  # (m, 3), lexicographically sorted, unique

    def __len__(self):
        return len(self.triples)

    def as_set(self):
        return {tuple(int(x) for x in row) for row in self.triples}


@dataclass(frozen=True)
class IntervalFact:
    s: str
    r: str
    o: str
    start_year: Optional[int]
    end_year: Optional[int]

    def __post_init__(self):
        if self.start_year is not None and self.end_year is not None and self.start_year > self.end_year:
            raise DatasetError(f"start year {self.start_year} after end year {self.end_year}")


def sort_labels(labels: Iterable[str]) -> List[str]:
    """Numeric order when every label is an integer, lexicographic otherwise."""
    labels = list(labels)
    try:
        keyed = [(int(label), label) for label in labels]
    except ValueError:
        return sorted(labels)
    return [label for _, label in sorted(keyed)]


def _split_line(line, separator):
    return line.split(separator) if separator is not None else line.split()


def read_quadruple_rows(path, separator: Optional[str] = "\t") -> List[Tuple[str, str, str, str]]:
    """Raw name quadruples of a file, validated line by line.

    ``separator=None`` splits on runs of whitespace.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = _split_line(line, separator)
            if len(fields) != 4:
                raise DatasetError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
            rows.append(tuple(f.strip() for f in fields))
    if not rows:
        raise DatasetError(f"{path}: no quadruples")
    return rows


def build_dataset(
    splits: Dict[str, Sequence[Tuple[str, str, str, str]]],
    entity_vocab: Optional[Vocab] = None,
    relation_vocab: Optional[Vocab] = None,
    timestamp_labels: Optional[Sequence[str]] = None,
) -> TemporalDataset:
    """Intern name quadruples of each split into one dataset.

    Vocabularies are shared across splits. Passing existing vocabularies or
    timestamp labels keeps their indices and appends unseen names; new
    timestamp labels must sort after the given ones.
    """
    entities = entity_vocab.copy() if entity_vocab is not None else Vocab()
    relations = relation_vocab.copy() if relation_vocab is not None else Vocab()
    for name in SPLITS:
        for s, r, o, _ in splits.get(name, ()):
            entities.add(s)
            relations.add(r)
            entities.add(o)

    seen = {t for name in SPLITS for *_, t in splits.get(name, ())}
    if timestamp_labels is None:
        labels = sort_labels(seen)
    else:
        labels = list(timestamp_labels)
        fresh = sort_labels(seen.difference(labels))
        if fresh and labels and sort_labels([labels[-1], fresh[0]])[0] != labels[-1]:
            raise DatasetError(f"timestamp {fresh[0]!r} precedes the existing timestamp {labels[-1]!r}")
        labels.extend(fresh)
    t_index = {label: i for i, label in enumerate(labels)}

    out = {}
    for name in SPLITS:
        per_t: List[Dict[Tuple[int, int, int], None]] = [dict() for _ in labels]
        for s, r, o, t in splits.get(name, ()):
            per_t[t_index[t]][(entities.index(s), relations.index(r), entities.index(o))] = None
        out[name] = tuple(
            np.array([(s, r, o, i) for s, r, o in facts], dtype=np.int64).reshape(-1, 4)
            for i, facts in enumerate(per_t)
        )
    return TemporalDataset(entities, relations, tuple(labels), out["train"], out["valid"], out["test"])


def ingest_quadruples(path, separator: Optional[str] = "\t", **vocabs) -> TemporalDataset:
    """Read one quadruple file into a dataset whose train split holds its facts."""
    return build_dataset({"train": read_quadruple_rows(path, separator)}, **vocabs)


def load_dataset(directory, separator: Optional[str] = "\t", **vocabs) -> TemporalDataset:
    """Read ``train.txt``, ``valid.txt`` (optional) and ``test.txt`` from a directory."""
    splits = {}
    for name in SPLITS:
        path = os.path.join(directory, f"{name}.txt")
        if name == "valid" and not os.path.exists(path):
            continue
        splits[name] = read_quadruple_rows(path, separator)
    return build_dataset(splits, **vocabs)


def write_quadruples(dataset: TemporalDataset, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    ents, rels, labels = dataset.entity_vocab, dataset.relation_vocab, dataset.timestamp_labels
    for name in SPLITS:
        with open(os.path.join(directory, f"{name}.txt"), "w", encoding="utf-8", newline="\n") as fh:
            for quads in dataset.split(name):
                for s, r, o, t in quads:
                    fh.write(f"{ents.name(s)}\t{rels.name(r)}\t{ents.name(o)}\t{labels[t]}\n")


def write_vocab(dataset: TemporalDataset, path) -> None:
    """TSV sidecar: ``kind<TAB>index<TAB>name`` for entities, relations, timestamps."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for kind, names in (
            ("entity", dataset.entity_vocab.names),
            ("relation", dataset.relation_vocab.names),
            ("timestamp", dataset.timestamp_labels),
        ):
            for i, name in enumerate(names):
                fh.write(f"{kind}\t{i}\t{name}\n")


def read_vocab(path) -> Tuple[Vocab, Vocab, Tuple[str, ...]]:
    kinds = {"entity": [], "relation": [], "timestamp": []}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3 or parts[0] not in kinds or int(parts[1]) != len(kinds[parts[0]]):
                raise DatasetError(f"{path}:{lineno}: malformed vocabulary line")
            kinds[parts[0]].append(parts[2])
    return Vocab(kinds["entity"]), Vocab(kinds["relation"]), tuple(kinds["timestamp"])


def collapse_static(
    dataset: TemporalDataset,
    splits: Sequence[str] = ("train",),
    interval: Optional[Tuple[int, int]] = None,
) -> StaticGraph:
    """Union of the selected timestamp graphs with timestamps dropped."""
    if not splits:
        raise ValueError("at least one split is required")
    quads = dataset.quadruples(splits, interval)
    triples = np.unique(quads[:, :3], axis=0) if len(quads) else np.empty((0, 3), dtype=np.int64)
    return StaticGraph(triples)


# -- interval facts ---------------------------------------------------------

_YEAR = re.compile(r"^(-?\d+)")


def _parse_year(field: str) -> Optional[int]:
    field = field.strip()
    if not field or field.startswith("#"):
        return None
    m = _YEAR.match(field)
    if m is None:
        raise ValueError(f"cannot parse year from {field!r}")
    return int(m.group(1))


def read_interval_facts(path) -> List[IntervalFact]:
    facts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise DatasetError(f"{path}:{lineno}: expected 5 fields, got {len(fields)}")
            try:
                start, end = _parse_year(fields[3]), _parse_year(fields[4])
                facts.append(IntervalFact(fields[0], fields[1], fields[2], start, end))
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    if not facts:
        raise DatasetError(f"{path}: no facts")
    return facts


def _closed_intervals(facts: Sequence[IntervalFact]) -> np.ndarray:
    known = [y for f in facts for y in (f.start_year, f.end_year) if y is not None]
    if not known:
        raise DatasetError("no fact carries a year")
    max_year = max(known)
    spans = []
    for f in facts:
        if f.start_year is None and f.end_year is None:
            raise DatasetError(f"fact {(f.s, f.r, f.o)} has neither start nor end year")
        start = f.start_year if f.start_year is not None else f.end_year
        end = f.end_year if f.end_year is not None else max_year
        spans.append((start, max(start, end)))
    return np.array(spans, dtype=np.int64)


def year_boundaries(facts: Sequence[IntervalFact], min_occurrences: int = 300) -> List[int]:
    """Years contained in more than ``min_occurrences`` fact intervals."""
    if not facts:
        raise DatasetError("no facts to bin")
    if min_occurrences < 0:
        raise ValueError("min_occurrences must be non-negative")
    spans = _closed_intervals(facts)
    lo, hi = spans.min(), spans.max()
    diff = np.zeros(hi - lo + 2, dtype=np.int64)
    np.add.at(diff, spans[:, 0] - lo, 1)
    np.add.at(diff, spans[:, 1] - lo + 1, -1)
    counts = np.cumsum(diff)[:-1]
    years = (np.nonzero(counts > min_occurrences)[0] + lo).tolist()
    if not years:
        raise DatasetError(
            f"no year occurs in more than {min_occurrences} facts (max {counts.max()}); use a lower threshold"
        )
    return years


def _bin_label(lo: int, hi: Optional[int]) -> str:
    return f"{lo:04d}-{hi:04d}" if hi is not None else f"{lo:04d}-"


def _bin_rows(facts, boundaries):
    spans = _closed_intervals(facts)
    edges = np.asarray(boundaries)
    labels = [_bin_label(b, boundaries[k + 1] if k + 1 < len(boundaries) else None) for k, b in enumerate(boundaries)]
    rows = []
    # bin k is [b_k, b_{k+1}); the first bin also takes earlier years, the last one later years
    first = np.clip(np.searchsorted(edges, spans[:, 0], side="right") - 1, 0, None)
    last = np.clip(np.searchsorted(edges, spans[:, 1], side="right") - 1, 0, None)
    for f, a, b in zip(facts, first, last):
        for k in range(a, b + 1):
            rows.append((f.s, f.r, f.o, labels[k]))
    return rows, labels


def bin_timestamps(facts: Sequence[IntervalFact], min_occurrences: int = 300) -> TemporalDataset:
    """Turn interval facts into quadruples over year bins.

    A fact is emitted once for every bin its interval overlaps.
    """
    boundaries = year_boundaries(facts, min_occurrences)
    rows, labels = _bin_rows(facts, boundaries)
    return build_dataset({"train": rows}, timestamp_labels=labels)


def bin_splits(
    train: Sequence[IntervalFact],
    valid: Sequence[IntervalFact],
    test: Sequence[IntervalFact],
    min_occurrences: int = 300,
) -> TemporalDataset:
    """Bin all three splits with boundaries computed over their union."""
    boundaries = year_boundaries(list(train) + list(valid) + list(test), min_occurrences)
    rows = {}
    labels = None
    for name, facts in (("train", train), ("valid", valid), ("test", test)):
        if facts:
            rows[name], labels = _bin_rows(facts, boundaries)
    return build_dataset(rows, timestamp_labels=labels)
