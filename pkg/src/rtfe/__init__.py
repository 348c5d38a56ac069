"""Recursive temporal fact embedding for temporal knowledge-graph completion."""
from .dataset import (
    DatasetError,
    IntervalFact,
    StaticGraph,
    TemporalDataset,
    TimestampGraph,
    Vocab,
    bin_splits,
    bin_timestamps,
    build_dataset,
    collapse_static,
    load_dataset,
    write_quadruples,
)
from .errors import NumericalError
from .evaluator import EvalReport, FilterIndex, TimestampRecord, aggregate, evaluate_dataset, evaluate_timestamp
from .scorers import FAMILIES, SampleBatch, ScorerSpec, StateVector, init_state, loss_and_grad, score, sgd_step
from .synth import SynthProfile, generate, planted_states
from .trainer import (
    RunManifest,
    TrainConfig,
    pretrain_static,
    run_ablation,
    run_enhance,
    run_extend,
    run_recursive,
    train_timestamp,
)

__version__ = "0.1.0"
