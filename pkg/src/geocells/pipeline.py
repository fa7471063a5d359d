"""Experiment plumbing shared by the CLI and ``scripts/``.

All randomness derives from one integer seed through named sub-seeds, so a
stage can be rerun on its own and still reproduce.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from geocells.classifier import GeoClassifier, ModelConfig, TrainConfig, fit
from geocells.data import feature_matrix, group_albums, labels_of, latlon_of, split, write_jsonl
from geocells.errors import SequenceLengthError
from geocells.evaluation import ThresholdSet, evaluate, localization_errors, threshold_accuracy
from geocells.partition import PartitionParams, build_partition, filter_covered
from geocells.sequence import (
    BASIC,
    BIDIRECTIONAL,
    OFFSET,
    REPEATED,
    SequenceModelConfig,
    train_sequence,
)
from geocells.synthetic import SyntheticSpec, generate_synthetic

log = logging.getLogger(__name__)


def sub_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class BenchmarkConfig:
    """Desk-scale album benchmark: data, partition and model settings."""

    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    partition: PartitionParams = PartitionParams(t1=100, t2=10, max_level=30)
    test_fraction: float = 0.3
    val_fraction: float = 0.15
    hidden_dims: tuple[int, ...] = (32,)
    single_train: TrainConfig = TrainConfig(lr=0.045, batch_size=64, epochs=60)
    seq_hidden: int = 48
    seq_train: TrainConfig = TrainConfig(lr=0.045, batch_size=16, epochs=60, patience=10)
    variants: tuple[str, ...] = ("basic", "repeated25", "blstm25")


@dataclass
class Experiment:
    """Everything one seed of the benchmark produces."""

    partition: object
    single: GeoClassifier
    train_albums: list
    val_albums: list
    test_albums: list
    test_records: list
    seq_models: dict = field(default_factory=dict)


def _variant_config(name: str, hidden: int, seed: int) -> SequenceModelConfig:
    max_length = None
    if name.endswith("25"):
        name, max_length = name[:-2], 25
    if name == "blstm":
        return SequenceModelConfig(BIDIRECTIONAL, max_length=max_length or 25, hidden=hidden, seed=seed)
    if name.startswith("offset"):
        return SequenceModelConfig(OFFSET, offset=int(name[6:]), max_length=max_length, hidden=hidden, seed=seed)
    return SequenceModelConfig({"basic": BASIC, "repeated": REPEATED}[name], max_length=max_length,
                               hidden=hidden, seed=seed)


def _labeled_albums(records, partition):
    return [a for a in group_albums(filter_covered(records, partition)) if len(a)]


def prepare(cfg: BenchmarkConfig, seed: int, records=None) -> Experiment:
    """Generate (or take) data, split by album, partition and train the single-image model."""
    if records is None:
        records = generate_synthetic(replace(cfg.synthetic, seed=sub_seed(seed, "data"))).records
    rest, test = split(records, 1.0 - cfg.test_fraction, sub_seed(seed, "split-test"))
    train, val = split(rest, 1.0 - cfg.val_fraction, sub_seed(seed, "split-val"))
    partition = build_partition([r.geo for r in train], cfg.partition)
    train_l = filter_covered(train, partition)
    val_l = filter_covered(val, partition)
    log.info("partition %d cells; %d/%d train photos covered", len(partition), len(train_l), len(train))

    mcfg = ModelConfig(len(train_l[0].features), len(partition), cfg.hidden_dims, sub_seed(seed, "model"))
    single = GeoClassifier.initialize(mcfg, partition.tag)
    fit(single, feature_matrix(train_l), labels_of(train_l), feature_matrix(val_l), labels_of(val_l),
        replace(cfg.single_train, seed=sub_seed(seed, "train")))

    return Experiment(
        partition=partition,
        single=single,
        train_albums=_labeled_albums(train, partition),
        val_albums=_labeled_albums(val, partition),
        test_albums=group_albums(test),
        test_records=test,
    )


def train_variant(exp: Experiment, cfg: BenchmarkConfig, name: str, seed: int):
    scfg = _variant_config(name, cfg.seq_hidden, sub_seed(seed, f"seq-init-{name}"))
    model, info = train_sequence(exp.train_albums, exp.single, exp.partition, scfg,
                                 replace(cfg.seq_train, seed=sub_seed(seed, f"seq-{name}")), exp.val_albums)
    exp.seq_models[name] = model
    return model, info


def album_predictions(exp: Experiment, method: str) -> np.ndarray:
    """Argmax class for every test-album photo, in album order."""
    out = []
    for album in exp.test_albums:
        feats = feature_matrix(album.photos)
        if method == "single":
            probs = exp.single.predict(feats)
        elif method == "average":
            probs = np.broadcast_to(exp.single.predict(feats).mean(axis=0), (len(album), exp.single.config.n_classes))
        else:
            model = exp.seq_models[method]
            try:
                probs = model.predict_embeddings(exp.single.embed(feats))
            except SequenceLengthError:  # too short for an offset model: fall back per photo
                probs = exp.single.predict(feats)
        out.append(probs.argmax(axis=1))
    return np.concatenate(out)


def album_truth(exp: Experiment):
    photos = [p for a in exp.test_albums for p in a.photos]
    return latlon_of(photos)


def method_accuracy(exp: Experiment, method: str, thresholds: ThresholdSet | None = None):
    lat, lon = album_truth(exp)
    errors = localization_errors(album_predictions(exp, method), lat, lon, exp.partition)
    return threshold_accuracy(errors, thresholds)


def run_benchmark(cfg: BenchmarkConfig, seed: int, thresholds: ThresholdSet | None = None):
    """Threshold accuracies of every method for one seed."""
    exp = prepare(cfg, seed)
    results = {"single": method_accuracy(exp, "single", thresholds),
               "average": method_accuracy(exp, "average", thresholds)}
    for name in cfg.variants:
        train_variant(exp, cfg, name, seed)
        results[name] = method_accuracy(exp, name, thresholds)
    return results


def median_over_seeds(per_seed: list[dict], level: str = "street") -> dict[str, float]:
    methods = per_seed[0].keys()
    return {m: float(np.median([r[m][level] for r in per_seed])) for m in methods}


# ---------------------------------------------------------------------------
# end-to-end run

E2E_ARTIFACTS = (
    "dataset.jsonl",
    "partition.json",
    "model.json",
    "seq_model.json",
    "report.json",
    "curves.csv",
    "trends.json",
)


def _sha256(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def end_to_end(out_dir, seed: int, cfg: BenchmarkConfig | None = None, records=None,
               ks=(1, 2, 3, 4, 5), thresholds: ThresholdSet | None = None) -> dict:
    """Data, partition, single model, BASIC LSTM, reports and a hash manifest."""
    cfg = cfg or BenchmarkConfig()
    thresholds = thresholds or ThresholdSet()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if records is None:
        records = generate_synthetic(replace(cfg.synthetic, seed=sub_seed(seed, "data"))).records
    write_jsonl(out / "dataset.jsonl", records)

    exp = prepare(cfg, seed, records)
    exp.partition.save(out / "partition.json")
    exp.single.save(out / "model.json")
    seq, _ = train_variant(exp, cfg, "basic", seed)
    seq.save(out / "seq_model.json")

    test = exp.test_records
    lat, lon = latlon_of(test)
    report = evaluate(
        exp.single.predict(feature_matrix(test)), lat, lon, exp.partition, ks, thresholds,
        categories=[r.category for r in test],
        config={"seed": seed, "partition": exp.partition.tag, "n_classes": len(exp.partition)},
    )
    report.write(out)

    trends = {m: method_accuracy(exp, m, thresholds) for m in ("single", "average", "basic")}
    street = thresholds.names[0]
    ordering = trends["single"][street] < trends["average"][street] < trends["basic"][street]
    if not ordering:
        log.warning("album trend ordering single < average < basic does not hold at %s level", street)
    (out / "trends.json").write_text(
        json.dumps({"accuracy": trends, "level": street, "ordering_holds": ordering}, indent=1, sort_keys=True) + "\n"
    )

    manifest = {"seed": seed, "artifacts": {name: _sha256(out / name) for name in E2E_ARTIFACTS}}
    (out / "MANIFEST.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest
