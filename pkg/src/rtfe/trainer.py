"""Recursive training: static pre-training, then one fine-tuning pass per timestamp.

The state fitted to timestamp ``t`` is the only input carried into the
training of ``t + 1``; each timestamp is evaluated with the state fitted to
it before the state is handed forward.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint
from .dataset import DatasetError, TemporalDataset, TimestampGraph, collapse_static
from .errors import NumericalError
from .evaluator import EvalReport, FilterIndex, evaluate_dataset, evaluate_timestamp
from .scorers import SLOTS, SampleBatch, ScorerSpec, StateVector, grow_state, init_state, loss_and_grad, sgd_step

log = logging.getLogger(__name__)

MODES = ("pretrain", "recursive", "enhance", "extend", "ablation")
STATIC_FAMILIES = ("TransE", "RotatE", "ComplEx")

# slot -> quadruple column
_SLOT_COLUMN = {0: 0, 1: 2, 2: 1}


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings shared by pre-training and per-timestamp training.

    ``num_batches`` overrides ``batch_size`` by splitting every epoch into
    that many batches. ``neg_ratio = 0`` selects a full softmax over all
    entities (ComplEx / TComplEx). ``lr = 0`` runs the loop without updates.
    """

    lr: float = 0.01
    epochs_static: int = 50
    epochs_tem: int = 20
    batch_size: int = 1000
    num_batches: Optional[int] = None
    neg_ratio: int = 1
    corruption_mix: Tuple[float, float, float] = (0.5, 0.5, 0.0)
    optimizer: str = "sgd"
    seed: int = 0
    pretrain: bool = True
    early_stopping: bool = False
    patience: int = 5

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs_static < 0:
            raise ValueError("epochs_static must be non-negative")
        if self.epochs_tem < 1:
            raise ValueError("epochs_tem must be at least 1")
        if self.batch_size < 1 or (self.num_batches is not None and self.num_batches < 1):
            raise ValueError("batch sizes must be positive")
        if self.neg_ratio < 0:
            raise ValueError("neg_ratio must be non-negative")
        mix = tuple(float(w) for w in self.corruption_mix)
        if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
            raise ValueError("corruption_mix needs three non-negative weights summing to 1")
        object.__setattr__(self, "corruption_mix", mix)
        if self.optimizer not in ("sgd", "adagrad"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.patience < 1:
            raise ValueError("patience must be positive")

    @classmethod
    def for_family(cls, family: str, **overrides) -> "TrainConfig":
        """Appendix-style settings of ``family`` with explicit overrides on top."""
        fields = dict(FAMILY_DEFAULTS[family])
        fields.pop("dim")
        fields.update(overrides)
        return cls(**fields)


# Per-family settings; ComplEx has no published row and borrows TComplEx's.
FAMILY_DEFAULTS = {
    "TransE": dict(dim=300, lr=0.01, epochs_static=1000, epochs_tem=200, num_batches=100, neg_ratio=1,
                   optimizer="sgd"),
    "RotatE": dict(dim=2000, lr=1e-4, epochs_static=6000, epochs_tem=300, batch_size=1024, neg_ratio=256,
                   optimizer="adagrad"),
    "ComplEx": dict(dim=256, lr=0.01, epochs_static=50, epochs_tem=20, batch_size=1000, neg_ratio=0,
                    optimizer="adagrad"),
    "TComplEx": dict(dim=256, lr=0.01, epochs_static=50, epochs_tem=20, batch_size=1000, neg_ratio=0,
                     optimizer="adagrad"),
    "DE-SimplE": dict(dim=100, lr=0.001, epochs_static=500, epochs_tem=100, batch_size=512, neg_ratio=500,
                      optimizer="adagrad"),
}


def _rng(config: TrainConfig, *stream: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, *stream])


# -- sampling --------------------------------------------------------------------

def corrupt(pos: np.ndarray, neg_ratio: int, mix, n_entities: int, n_relations: int,
            rng: np.random.Generator) -> SampleBatch:
    """Replace one slot of each positive per negative, never with its own value.

    Replacements are uniform over the whole vocabulary and unfiltered.
    """
    pos = np.asarray(pos, dtype=np.int64).reshape(-1, 4)
    slots = rng.choice(3, size=(len(pos), neg_ratio), p=mix)
    neg = np.repeat(pos[:, None, :], neg_ratio, axis=1)
    for slot, col in _SLOT_COLUMN.items():
        mask = slots == slot
        if not mask.any():
            continue
        n = n_relations if slot == 2 else n_entities
        if n < 2:
            raise ValueError(f"cannot corrupt the {SLOTS[slot]} slot of a vocabulary of size {n}")
        orig = neg[..., col][mask]
        draw = rng.integers(0, n - 1, size=len(orig))
        draw += draw >= orig
        view = neg[..., col]
        view[mask] = draw
        neg[..., col] = view
    return SampleBatch(pos, neg, slots)


def _full_softmax(spec: ScorerSpec, config: TrainConfig) -> bool:
    if config.neg_ratio:
        return False
    if spec.family not in ("ComplEx", "TComplEx"):
        raise ValueError(f"neg_ratio 0 (full softmax) is not available for {spec.family}")
    return True


def _batches(n: int, config: TrainConfig):
    if config.num_batches is not None:
        k = min(config.num_batches, n)
        return np.array_split(np.arange(n), k)
    return [np.arange(lo, min(lo + config.batch_size, n)) for lo in range(0, n, config.batch_size)]


def run_epochs(state: StateVector, spec: ScorerSpec, config: TrainConfig, quads: np.ndarray, epochs: int,
               rng: np.random.Generator, losses: Optional[list] = None,
               validate: Optional[Callable[[StateVector], float]] = None) -> StateVector:
    """Mini-batch training of ``state`` in place on ``quads``.

    ``losses`` receives the mean loss per positive of each epoch. With
    ``validate`` and ``config.early_stopping`` set, training stops once the
    validation score has not improved for ``patience`` epochs and the best
    state is restored.
    """
    full = _full_softmax(spec, config)
    best, best_score, stale = None, -np.inf, 0
    for _ in range(epochs):
        order = rng.permutation(len(quads))
        total = 0.0
        for idx in _batches(len(quads), config):
            pos = quads[order[idx]]
            if full:
                batch = SampleBatch.full(pos)
            else:
                batch = corrupt(pos, config.neg_ratio, config.corruption_mix, state.n_entities,
                                state.n_relations, rng)
            loss, grad = loss_and_grad(state, spec, batch)
            if not np.isfinite(loss):
                raise NumericalError("non-finite loss", state.fitted_timestamp)
            if config.lr > 0:
                sgd_step(state, grad, config.lr, config.optimizer)
            total += loss
        if losses is not None:
            losses.append(total / len(quads))
        if validate is not None and config.early_stopping:
            score = validate(state)
            if score > best_score:
                best, best_score, stale = state.copy(), score, 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if best is not None and best is not state:
        _assign(state, best)
    return state


def _assign(dst: StateVector, src: StateVector) -> None:
    for name, mat in src.parameters().items():
        dst.parameters()[name][...] = mat
    dst.optimizer_state = None if src.optimizer_state is None else {k: v.copy() for k, v in src.optimizer_state.items()}


# -- Alg. 1 building blocks --------------------------------------------------------

def new_state(dataset: TemporalDataset, spec: ScorerSpec, config: TrainConfig) -> StateVector:
    return init_state(spec, dataset.n_entities, dataset.n_relations, dataset.n_timestamps, config.seed)


def pretraining_quadruples(dataset: TemporalDataset, spec: ScorerSpec,
                           interval: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Static families train on the collapsed graph; temporal ones on the quadruples."""
    if spec.family in STATIC_FAMILIES:
        triples = collapse_static(dataset, ("train",), interval).triples
        return np.hstack([triples, np.zeros((len(triples), 1), dtype=np.int64)])
    return dataset.quadruples(("train",), interval)


def pretrain_static(dataset: TemporalDataset, spec: ScorerSpec, config: TrainConfig,
                    interval: Optional[Tuple[int, int]] = None, state: Optional[StateVector] = None,
                    losses: Optional[list] = None) -> StateVector:
    """Preliminary training over the timestamps in the half-open ``interval``.

    TransE, RotatE and ComplEx learn the collapsed static graph; TComplEx and
    DE-SimplE run their own training on the quadruples.
    """
    if not config.pretrain:
        raise ValueError("pre-training is switched off in this config")
    quads = pretraining_quadruples(dataset, spec, interval)
    if len(quads) == 0:
        raise DatasetError("the static graph is empty")
    state = new_state(dataset, spec, config) if state is None else state.copy()
    run_epochs(state, spec, config, quads, config.epochs_static, _rng(config, 0), losses)
    state.fitted_timestamp = "static"
    return state


def train_timestamp(state: StateVector, quads: np.ndarray, spec: ScorerSpec, config: TrainConfig, t: int,
                    losses: Optional[list] = None,
                    validate: Optional[Callable[[StateVector], float]] = None) -> StateVector:
    """Fine-tune a copy of the state fitted to ``t - 1`` on the facts of ``t``.

    The input state is not modified. An empty graph only advances the
    fitted timestamp.
    """
    prev = state.fitted_timestamp
    if not (prev is None or prev == "static" or prev == t - 1):
        raise ValueError(f"state fitted to {prev!r} cannot be trained on timestamp {t}")
    new = state.copy()
    quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    if len(quads):
        try:
            run_epochs(new, spec, config, quads, config.epochs_tem, _rng(config, 1, t), losses, validate)
        except NumericalError as exc:
            raise NumericalError(f"timestamp {t}: {exc}", t) from None
        if not new.is_finite():
            raise NumericalError(f"timestamp {t}: non-finite state", t)
    new.fitted_timestamp = t
    return new


# -- runs ----------------------------------------------------------------------------

@dataclass
class RunManifest:
    """What a run did and where its artifacts live.

    ``state`` holds the latest fitted state in memory and is not persisted;
    the latest checkpoint path restores it.
    """

    mode: str
    spec: ScorerSpec
    config: TrainConfig
    pretrain_interval: Optional[Tuple[int, int]] = None
    timestamps: List[int] = field(default_factory=list)
    checkpoints: Dict[int, str] = field(default_factory=dict)
    report: Optional[str] = None
    dataset: Optional[str] = None
    extra: Dict[str, str] = field(default_factory=dict)
    state: Optional[StateVector] = field(default=None, repr=False)

    @property
    def last_timestamp(self) -> Optional[int]:
        return self.timestamps[-1] if self.timestamps else None

    def to_json(self) -> str:
        data = {
            "mode": self.mode,
            "spec": asdict(self.spec),
            "config": asdict(self.config),
            "pretrain_interval": list(self.pretrain_interval) if self.pretrain_interval else None,
            "timestamps": self.timestamps,
            "checkpoints": {str(k): v for k, v in sorted(self.checkpoints.items())},
            "report": self.report,
            "dataset": self.dataset,
            "extra": self.extra,
        }
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        data = json.loads(text)
        cfg = data["config"]
        cfg["corruption_mix"] = tuple(cfg["corruption_mix"])
        interval = data.get("pretrain_interval")
        return cls(
            mode=data["mode"],
            spec=ScorerSpec(**data["spec"]),
            config=TrainConfig(**cfg),
            pretrain_interval=tuple(interval) if interval else None,
            timestamps=list(data.get("timestamps", [])),
            checkpoints={int(k): v for k, v in data.get("checkpoints", {}).items()},
            report=data.get("report"),
            dataset=data.get("dataset"),
            extra=dict(data.get("extra", {})),
        )

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            manifest = cls.from_json(fh.read())
        base = os.path.dirname(os.path.abspath(path))
        absolute = lambda v: v if os.path.isabs(v) else os.path.join(base, v)  # noqa: E731
        manifest.checkpoints = {k: absolute(v) for k, v in manifest.checkpoints.items()}
        manifest.extra = {k: absolute(v) if k.endswith(("checkpoint", "report")) else v for k, v in manifest.extra.items()}
        if manifest.report:
            manifest.report = absolute(manifest.report)
        return manifest

    def latest_state(self) -> StateVector:
        if self.state is None:
            if not self.checkpoints:
                raise ValueError("manifest has neither an in-memory state nor checkpoints")
            self.state = checkpoint.load(self.checkpoints[max(self.checkpoints)])
        return self.state


def _checkpoint_path(out_dir, t):
    return os.path.join(out_dir, "checkpoints", f"t{t:05d}.rtfe" if t != "static" else "static.rtfe")


def _save(state, out_dir, t, manifest):
    if out_dir is None:
        return
    path = _checkpoint_path(out_dir, t)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    checkpoint.save(state, path)
    if t == "static":
        manifest.extra["static_checkpoint"] = os.path.relpath(path, out_dir)
    else:
        manifest.checkpoints[t] = os.path.relpath(path, out_dir)


def _recurse(state, graphs: Sequence[TimestampGraph], spec, config, filter, relations, manifest, report,
             out_dir, validate_epochs):
    for g in graphs:
        validate = None
        if validate_epochs and config.early_stopping and len(g.valid):
            def validate(st, g=g):
                st.fitted_timestamp, prev = g.t, st.fitted_timestamp
                try:
                    return evaluate_timestamp(st, spec, g.valid, filter, g.t).mrr
                finally:
                    st.fitted_timestamp = prev
        state = train_timestamp(state, g.train, spec, config, g.t, validate=validate)
        report.add(evaluate_timestamp(state, spec, g.test, filter, g.t, g.label, relations))
        manifest.timestamps.append(g.t)
        _save(state, out_dir, g.t, manifest)
        log.info("timestamp %s: %d train, %d test, MRR %s", g.label or g.t, len(g.train), len(g.test),
                 report.records[-1].mrr)
    return state


def run_recursive(dataset: TemporalDataset, spec: ScorerSpec, config: TrainConfig,
                  pretrain_interval: Optional[Tuple[int, int]] = None,
                  timestamps: Optional[Tuple[int, int]] = None,
                  initial_state: Optional[StateVector] = None,
                  filter: Optional[FilterIndex] = None,
                  relations: bool = False,
                  out_dir=None,
                  mode: str = "recursive") -> Tuple[RunManifest, EvalReport]:
    """Pre-train (unless switched off), then train and test each timestamp in order.

    ``initial_state`` skips pre-training and starts from the given state.
    Only the latest state is kept in memory; with ``out_dir`` a checkpoint
    per timestamp and the manifest are written there.
    """
    lo, hi = timestamps if timestamps is not None else (0, dataset.n_timestamps)
    filter = filter or FilterIndex.from_dataset(dataset)
    manifest = RunManifest(mode, spec, config, pretrain_interval)
    if initial_state is not None:
        state = initial_state
    elif config.pretrain:
        state = pretrain_static(dataset, spec, config, pretrain_interval)
        manifest.pretrain_interval = pretrain_interval or (0, dataset.n_timestamps)
        _save(state, out_dir, "static", manifest)
    else:
        state = new_state(dataset, spec, config)
    report = EvalReport()
    state = _recurse(state, dataset.graphs(lo, hi), spec, config, filter, relations, manifest, report, out_dir, True)
    manifest.state = state
    if out_dir is not None:
        manifest.report = "report.tsv"
        report.write(os.path.join(out_dir, manifest.report))
        manifest.write(os.path.join(out_dir, "manifest.json"))
    return manifest, report


def run_extend(manifest: RunManifest, future_graphs: Sequence[TimestampGraph], spec: Optional[ScorerSpec] = None,
               config: Optional[TrainConfig] = None, filter: Optional[FilterIndex] = None,
               relations: bool = False, out_dir=None) -> EvalReport:
    """Continue a finished run over timestamps after its last one.

    Only the future graphs are read. Entities, relations or timestamps
    without rows get the rows a larger initialisation would have drawn.
    """
    spec = spec or manifest.spec
    config = config or manifest.config
    report = EvalReport()
    if not future_graphs:
        return report
    state = manifest.latest_state()
    if state.family != spec.family:
        raise ValueError(f"cannot extend a {state.family} run with a {spec.family} scorer")
    last = state.fitted_timestamp
    if not isinstance(last, (int, np.integer)):
        raise ValueError("the run has not fitted any timestamp yet")
    expected = last + 1
    for g in future_graphs:
        if g.t != expected:
            raise ValueError(f"future timestamp {g.t} does not follow timestamp {expected - 1}")
        expected += 1
    quads = np.concatenate([q for g in future_graphs for q in (g.train, g.valid, g.test)]).reshape(-1, 4)
    if len(quads):
        state = grow_state(state, spec, int(quads[:, [0, 2]].max()) + 1, int(quads[:, 1].max()) + 1,
                           future_graphs[-1].t + 1, config.seed)
    filter = filter or FilterIndex(quads)
    state = _recurse(state, future_graphs, spec, config, filter, relations, manifest, report, out_dir, True)
    manifest.state = state
    if out_dir is not None:
        manifest.mode = "extend" if manifest.mode != "extend" else manifest.mode
        manifest.report = "report.tsv"
        report.write(os.path.join(out_dir, manifest.report))
        manifest.write(os.path.join(out_dir, "manifest.json"))
    return report


def run_enhance(dataset: TemporalDataset, spec: ScorerSpec, config: TrainConfig,
                filter: Optional[FilterIndex] = None, relations: bool = False,
                out_dir=None) -> Tuple[RunManifest, EvalReport, EvalReport]:
    """Pre-train, evaluate the pre-trained state directly, then recurse from it.

    Returns the manifest, the direct (baseline) report and the recursive report.
    """
    if not config.pretrain:
        raise ValueError("enhancement needs pre-training")
    filter = filter or FilterIndex.from_dataset(dataset)
    pretrained = pretrain_static(dataset, spec, config)
    baseline = evaluate_dataset(pretrained, spec, dataset, filter, relations=relations)
    manifest, report = run_recursive(dataset, spec, config, initial_state=pretrained, filter=filter,
                                     relations=relations, out_dir=out_dir, mode="enhance")
    manifest.pretrain_interval = (0, dataset.n_timestamps)
    if out_dir is not None:
        _save(pretrained, out_dir, "static", manifest)
        baseline.write(os.path.join(out_dir, "baseline_report.tsv"))
        manifest.extra["baseline_report"] = "baseline_report.tsv"
        manifest.write(os.path.join(out_dir, "manifest.json"))
    return manifest, baseline, report


def run_ablation(dataset: TemporalDataset, spec: ScorerSpec, config: TrainConfig,
                 filter: Optional[FilterIndex] = None, relations: bool = False) -> Dict[str, EvalReport]:
    """The recursive run with and without pre-training."""
    filter = filter or FilterIndex.from_dataset(dataset)
    out = {}
    for arm, flag in (("pretrain", True), ("no_pretrain", False)):
        _, out[arm] = run_recursive(dataset, spec, replace(config, pretrain=flag), filter=filter,
                                    relations=relations, mode="ablation")
    return out
