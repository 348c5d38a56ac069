"""Command-line entry point: ``rtfe ingest | run | report | synth``.

Exit codes: 0 success, 2 input error, 3 non-finite training state.
"""
import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import checkpoint
from .dataset import (
    DatasetError,
    TemporalDataset,
    bin_splits,
    build_dataset,
    load_dataset,
    read_interval_facts,
    read_quadruple_rows,
    read_vocab,
    write_quadruples,
    write_vocab,
)
from .errors import NumericalError
from .evaluator import EvalReport, FilterIndex, evaluate_dataset
from .scorers import FAMILIES, ScorerSpec
from .synth import SynthProfile, generate
from .trainer import (
    FAMILY_DEFAULTS,
    MODES,
    RunManifest,
    TrainConfig,
    pretrain_static,
    run_ablation,
    run_enhance,
    run_extend,
    run_recursive,
)

log = logging.getLogger("rtfe")

EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class InputError(Exception):
    pass


# -- config files ----------------------------------------------------------------------

# key -> (default, help). Family-dependent keys default to None and are filled
# from FAMILY_DEFAULTS once the model is known.
CONFIG_KEYS: Dict[str, Tuple[Optional[str], str]] = {
    "data": (None, "dataset directory, or 'synth' for the default synthetic profile"),
    "mode": ("recursive", "pretrain | recursive | enhance | extend | ablation"),
    "model": ("TComplEx", "scorer family: " + ", ".join(FAMILIES)),
    "dim": (None, "embedding dimension (real coordinates)"),
    "lr": (None, "learning rate"),
    "epochs_static": (None, "pre-training epochs"),
    "epochs_tem": (None, "fine-tuning epochs per timestamp"),
    "batch_size": (None, "positives per mini-batch"),
    "num_batches": (None, "mini-batches per epoch; overrides batch_size"),
    "neg_ratio": (None, "negatives per positive; 0 = full softmax (ComplEx, TComplEx)"),
    "corruption_mix": ("0.5,0.5,0", "head,tail,relation corruption weights"),
    "optimizer": (None, "sgd | adagrad"),
    "seed": ("0", "random seed"),
    "pretrain": ("on", "on | off"),
    "pretrain_interval": (None, "timestamps a..b (inclusive, 0-based) used for pre-training; default all"),
    "timestamps": (None, "timestamps a..b (inclusive, 0-based) to train and test; default all"),
    "early_stopping": ("off", "on | off: stop a timestamp early on validation MRR"),
    "patience": ("5", "early-stopping patience in epochs"),
    "norm": ("2", "TransE distance norm (1 or 2)"),
    "margin": ("6.0", "margin of TransE / RotatE"),
    "temporal_fraction": ("0.64", "DE-SimplE share of temporal coordinates"),
    "n3_weight": ("0.0", "N3 regularisation weight (ComplEx, TComplEx)"),
    "adversarial_temperature": (None, "self-adversarial sampling temperature (TransE, RotatE)"),
    "relations": ("off", "on | off: also evaluate relation prediction"),
    "filter": ("time", "time | any: filter corruptions true at the same timestamp or at any"),
    "from": (None, "manifest of the run to extend (mode extend)"),
    "out": (None, "output directory"),
    "threads": (None, "cap on BLAS worker threads"),
}

_FLAG_KEYS = ("config", "mode", "model", "dim", "lr", "epochs_static", "epochs_tem", "neg_ratio", "pretrain",
              "pretrain_interval", "bin_threshold", "seed", "threads", "out")


def read_config(path) -> Dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in CONFIG_KEYS:
                raise InputError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    return out


def write_config(values: Dict[str, Optional[str]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in CONFIG_KEYS:
            if values.get(key) is not None:
                fh.write(f"{key} = {values[key]}\n")


def resolve(flags: Dict[str, Optional[str]], file_values: Dict[str, str]) -> Dict[str, Optional[str]]:
    """Flag > config file > default; family defaults fill what is still unset."""
    values = {k: d for k, (d, _) in CONFIG_KEYS.items()}
    values.update(file_values)
    values.update({k: v for k, v in flags.items() if v is not None})
    model = values["model"]
    if model not in FAMILIES:
        raise InputError(f"unknown model {model!r}; choose from {', '.join(FAMILIES)}")
    for key, default in FAMILY_DEFAULTS[model].items():
        if values.get(key) is None:
            values[key] = str(default)
    return values


def _switch(value: str, key: str) -> bool:
    if value in ("on", "true", "yes", "1"):
        return True
    if value in ("off", "false", "no", "0"):
        return False
    raise InputError(f"{key} must be on or off, not {value!r}")


def parse_range(text: Optional[str], key: str) -> Optional[Tuple[int, int]]:
    """``a..b`` (inclusive) to the half-open ``(a, b + 1)``."""
    if text is None:
        return None
    try:
        lo, hi = (int(x) for x in text.split(".."))
    except ValueError:
        raise InputError(f"{key} must look like a..b, not {text!r}") from None
    if not 0 <= lo <= hi:
        raise InputError(f"{key} needs 0 <= a <= b")
    return lo, hi + 1


def build_spec(values) -> ScorerSpec:
    temp = values.get("adversarial_temperature")
    return ScorerSpec(
        values["model"],
        int(values["dim"]),
        norm=int(values["norm"]),
        margin=float(values["margin"]),
        temporal_fraction=float(values["temporal_fraction"]),
        n3_weight=float(values["n3_weight"]),
        adversarial_temperature=None if temp is None else float(temp),
    )


def build_train_config(values) -> TrainConfig:
    mix = tuple(float(x) for x in values["corruption_mix"].split(","))
    nb = values.get("num_batches")
    return TrainConfig(
        lr=float(values["lr"]),
        epochs_static=int(values["epochs_static"]),
        epochs_tem=int(values["epochs_tem"]),
        batch_size=int(values.get("batch_size") or 1000),
        num_batches=None if nb in (None, "", "none") else int(nb),
        neg_ratio=int(values["neg_ratio"]),
        corruption_mix=mix,
        optimizer=values["optimizer"],
        seed=int(values["seed"]),
        pretrain=_switch(values["pretrain"], "pretrain"),
        early_stopping=_switch(values["early_stopping"], "early_stopping"),
        patience=int(values["patience"]),
    )


# -- datasets --------------------------------------------------------------------------

def data_path(path: str) -> str:
    """Relative paths that do not exist are looked up under ``$RTFE_DATA_DIR``."""
    root = os.environ.get("RTFE_DATA_DIR")
    if not os.path.exists(path) and root and not os.path.isabs(path):
        candidate = os.path.join(root, path)
        if os.path.exists(candidate):
            return candidate
    return path


def _directory_vocabs(path: str) -> dict:
    vocab_path = os.path.join(path, "vocab.tsv")
    if not os.path.exists(vocab_path):
        return {}
    ents, rels, labels = read_vocab(vocab_path)
    return dict(entity_vocab=ents, relation_vocab=rels, timestamp_labels=labels)


def open_dataset(spec: Optional[str], seed: int = 0) -> TemporalDataset:
    if spec is None:
        raise InputError("no dataset given (use --data or a config 'data' key)")
    if spec == "synth":
        return generate(SynthProfile(seed=seed))
    path = data_path(spec)
    if not os.path.isdir(path):
        raise InputError(f"dataset directory not found: {spec}")
    return load_dataset(path, **_directory_vocabs(path))


def _ingest_input(path: str, separator, bin_threshold: Optional[int]) -> TemporalDataset:
    path = data_path(path)
    if not os.path.exists(path):
        raise InputError(f"input not found: {path}")
    if bin_threshold is None:
        if os.path.isdir(path):
            return load_dataset(path, separator, **_directory_vocabs(path))
        return build_dataset({"train": read_quadruple_rows(path, separator)})
    if os.path.isdir(path):
        parts = {}
        for name in ("train", "valid", "test"):
            p = os.path.join(path, f"{name}.txt")
            parts[name] = read_interval_facts(p) if os.path.exists(p) else []
        return bin_splits(parts["train"], parts["valid"], parts["test"], bin_threshold)
    return bin_splits(read_interval_facts(path), [], [], bin_threshold)


def format_statistics(name: str, dataset: TemporalDataset) -> str:
    """One-row table in the usual dataset-statistics layout."""
    s = dataset.summary()
    header = f"{'Dataset':<16}{'#Entities':>10}{'#Relations':>11}{'#Timestamps':>12}{'#Train':>10}{'#Valid':>10}{'#Test':>10}"
    row = (f"{name:<16}{s['entities']:>10}{s['relations']:>11}{s['timestamps']:>12}"
           f"{s['train']:>10}{s['valid']:>10}{s['test']:>10}")
    return header + "\n" + row


# -- commands ----------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    separator = {"tab": "\t", "space": None}[args.separator]
    dataset = _ingest_input(args.input, separator, args.bin_threshold)
    if args.out:
        write_quadruples(dataset, args.out)
        write_vocab(dataset, os.path.join(args.out, "vocab.tsv"))
    print(format_statistics(os.path.basename(os.path.normpath(args.input)), dataset))
    return 0


def cmd_synth(args) -> int:
    profile = SynthProfile(
        n_entities=args.entities, n_relations=args.relations, n_timestamps=args.timestamps,
        facts_per_timestamp=args.facts, continuity=args.continuity, drift=args.drift, seed=args.seed,
    )
    dataset = generate(profile)
    write_quadruples(dataset, args.out)
    write_vocab(dataset, os.path.join(args.out, "vocab.tsv"))
    print(format_statistics("synthetic", dataset))
    return 0


def _print_report(title: str, report: EvalReport) -> None:
    print(title)
    if any(not r.empty for r in report.records):
        print(report.summary())
    else:
        print("(no test quadruples)")


def _run(values) -> int:
    mode = values["mode"]
    if mode not in MODES:
        raise InputError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    spec = build_spec(values)
    config = build_train_config(values)
    relations = _switch(values["relations"], "relations")
    if values["filter"] not in ("time", "any"):
        raise InputError("filter must be time or any")
    time_aware = values["filter"] == "time"
    out = values.get("out")
    if out:
        os.makedirs(out, exist_ok=True)
        write_config(values, os.path.join(out, "config.txt"))

    if mode == "extend":
        return _run_extend(values, spec, config, relations, time_aware, out)

    dataset = open_dataset(values["data"], config.seed)
    filter = FilterIndex.from_dataset(dataset, time_aware)
    interval = parse_range(values.get("pretrain_interval"), "pretrain_interval")
    timestamps = parse_range(values.get("timestamps"), "timestamps")
    for rng, key in ((interval, "pretrain_interval"), (timestamps, "timestamps")):
        if rng is not None and rng[1] > dataset.n_timestamps:
            raise InputError(f"{key} goes past the last timestamp {dataset.n_timestamps - 1}")

    if mode == "pretrain":
        state = pretrain_static(dataset, spec, replace(config, pretrain=True), interval)
        report = evaluate_dataset(state, spec, dataset, filter, relations=relations)
        if out:
            checkpoint.save(state, os.path.join(out, "static.rtfe"))
            report.write(os.path.join(out, "report.tsv"))
        _print_report("pre-trained state, evaluated directly", report)
    elif mode == "recursive":
        manifest, report = run_recursive(dataset, spec, config, interval, timestamps, filter=filter,
                                         relations=relations, out_dir=out)
        if out:
            manifest.dataset = values["data"]
            manifest.write(os.path.join(out, "manifest.json"))
        _print_report("recursive", report)
    elif mode == "enhance":
        manifest, baseline, report = run_enhance(dataset, spec, config, filter, relations, out)
        _print_report("baseline (pre-trained state)", baseline)
        _print_report("recursive", report)
        print(f"MRR change: {100 * (report.mrr - baseline.mrr):+.2f} points")
    else:
        reports = run_ablation(dataset, spec, config, filter, relations)
        for arm, report in reports.items():
            if out:
                report.write(os.path.join(out, f"report_{arm}.tsv"))
            _print_report(arm, report)
    return 0


def _run_extend(values, spec, config, relations, time_aware, out) -> int:
    if not values.get("from"):
        raise InputError("mode extend needs --from <manifest>")
    manifest_path = data_path(values["from"])
    if not os.path.exists(manifest_path):
        raise InputError(f"manifest not found: {values['from']}")
    manifest = RunManifest.read(manifest_path)
    data = values.get("data") or manifest.dataset
    dataset = open_dataset(data, config.seed)
    last = manifest.last_timestamp
    if last is None:
        raise InputError("the manifest records no fitted timestamp")
    future = parse_range(values.get("timestamps"), "timestamps") or (last + 1, dataset.n_timestamps)
    if future[0] <= last:
        raise InputError(f"future timestamps must come after {last}")
    graphs = dataset.graphs(*future)
    quads = [q for g in graphs for q in (g.train, g.valid, g.test)]
    filter = FilterIndex(np.concatenate(quads) if quads else np.empty((0, 4)), time_aware)
    report = run_extend(manifest, graphs, spec, config, filter, relations, out)
    if out:
        manifest.dataset = data
        manifest.write(os.path.join(out, "manifest.json"))
    _print_report("future timestamps", report)
    return 0


def cmd_run(args) -> int:
    flags = {k: getattr(args, k, None) for k in _FLAG_KEYS if k not in ("config", "bin_threshold")}
    flags["data"] = args.data
    flags["from"] = args.from_manifest
    flags["timestamps"] = args.timestamps
    file_values = read_config(args.config) if args.config else {}
    if (args.mode or file_values.get("mode")) == "extend":
        # an extension continues the original run's settings unless overridden
        source = args.from_manifest or file_values.get("from")
        snapshot = os.path.join(os.path.dirname(os.path.abspath(data_path(source))), "config.txt") if source else None
        if snapshot and os.path.exists(snapshot):
            base = read_config(snapshot)
            for key in ("mode", "out", "from", "timestamps", "pretrain_interval"):
                base.pop(key, None)
            file_values = {**base, **file_values}
    values = resolve(flags, file_values)
    if values.get("threads"):
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=int(values["threads"])):
            return _run(values)
    return _run(values)


def compare_reports(reports: List[Tuple[str, EvalReport]]) -> str:
    """Aggregate metrics of several runs side by side, in percent (MR as is)."""
    width = max(12, *(len(name) + 2 for name, _ in reports))
    lines = [f"{'metric':<16}" + "".join(f"{name:>{width}}" for name, _ in reports)]
    aggs = [rep.aggregate for _, rep in reports]
    for block in ("entity", "tail", "head", "relation"):
        for metric in ("mrr", "hits1", "hits3", "hits10", "mr"):
            cells = []
            for agg in aggs:
                value = agg.get(block, {}).get(metric)
                if value is None:
                    cells.append("-")
                else:
                    cells.append(f"{value:.2f}" if metric == "mr" else f"{100 * value:.2f}")
            if any(c != "-" for c in cells):
                lines.append(f"{block + ' ' + metric:<16}" + "".join(f"{c:>{width}}" for c in cells))
    return "\n".join(lines)


def interval_series(reports: List[Tuple[str, EvalReport]]) -> str:
    """``label<TAB>mrr`` rows, one point per run, ready for plotting."""
    lines = ["interval\tmrr"]
    for name, rep in reports:
        lines.append(f"{name}\t{rep.mrr!r}")
    return "\n".join(lines)


def _report_name(path: str, label: Optional[str]) -> str:
    if label:
        return label
    manifest = os.path.join(os.path.dirname(os.path.abspath(path)), "manifest.json")
    if os.path.exists(manifest):
        interval = RunManifest.read(manifest).pretrain_interval
        if interval:
            return f"{interval[0]}..{interval[1] - 1}"
    return os.path.splitext(os.path.basename(path))[0] if os.path.basename(path) != "report.tsv" else \
        os.path.basename(os.path.dirname(os.path.abspath(path)))


def cmd_report(args) -> int:
    labels = args.labels.split(",") if args.labels else [None] * len(args.reports)
    if len(labels) != len(args.reports):
        raise InputError("--labels needs one label per report")
    reports = []
    for path, label in zip(args.reports, labels):
        if not os.path.exists(path):
            raise InputError(f"report not found: {path}")
        reports.append((_report_name(path, label), EvalReport.read(path)))
    print(interval_series(reports) if args.series else compare_reports(reports))
    return 0


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtfe", description="Recursive temporal fact embedding.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-timestamp progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read quadruple or interval files and print dataset statistics")
    p.add_argument("input", help="directory with train/valid/test.txt, or a single file")
    p.add_argument("--out", help="write the normalised dataset and vocab.tsv here")
    p.add_argument("--separator", choices=("tab", "space"), default="tab")
    p.add_argument("--bin-threshold", type=int, dest="bin_threshold",
                   help="input holds year intervals; bin years with more than this many facts")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="train and evaluate")
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--data", help="dataset directory (relative paths also tried under $RTFE_DATA_DIR) or 'synth'")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--model", choices=FAMILIES)
    p.add_argument("--dim")
    p.add_argument("--lr")
    p.add_argument("--epochs-static", dest="epochs_static")
    p.add_argument("--epochs-tem", dest="epochs_tem")
    p.add_argument("--neg-ratio", dest="neg_ratio")
    p.add_argument("--pretrain", choices=("on", "off"))
    p.add_argument("--pretrain-interval", dest="pretrain_interval", metavar="A..B")
    p.add_argument("--timestamps", metavar="A..B")
    p.add_argument("--from", dest="from_manifest", metavar="MANIFEST")
    p.add_argument("--seed")
    p.add_argument("--threads")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="compare report files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--labels", help="comma-separated column names")
    p.add_argument("--series", action="store_true", help="print one MRR point per report")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--entities", type=int, default=SynthProfile.n_entities)
    p.add_argument("--relations", type=int, default=SynthProfile.n_relations)
    p.add_argument("--timestamps", type=int, default=SynthProfile.n_timestamps)
    p.add_argument("--facts", type=int, default=SynthProfile.facts_per_timestamp)
    p.add_argument("--continuity", type=float, default=SynthProfile.continuity)
    p.add_argument("--drift", type=float, default=SynthProfile.drift)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        where = f" at timestamp {exc.timestamp}" if exc.timestamp is not None else ""
        print(f"rtfe: numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, DatasetError, ValueError, OSError) as exc:
        print(f"rtfe: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
