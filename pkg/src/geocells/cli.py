"""``geocells`` command line front end.

Exit codes: 0 ok, 1 usage, 2 data, 3 version/compatibility, 4 numeric failure.
Every subcommand writes only below its ``--out`` directory. Settings come
from flags, then an optional ``--config`` JSON file, then defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from geocells.errors import ConfigError, GeocellsError

log = logging.getLogger("geocells")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_partition(path):
    from geocells.partition import Partition

    return Partition.load(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_partition(args):
    from geocells.data import load_jsonl
    from geocells.partition import PartitionParams, build_partition

    records = load_jsonl(args.points)
    part = build_partition([r.geo for r in records], PartitionParams(args.t1, args.t2, args.max_level))
    out = _out(args)
    part.save(out / "partition.json")
    levels = [c.level for c in part.cells]
    counts = np.array(part.counts)
    edges = [0, args.t2, 2 * args.t2, args.t1 // 4, args.t1 // 2, args.t1, max(args.t1, counts.max()) + 1]
    edges = sorted(set(edges))
    hist, _ = np.histogram(counts, bins=edges)
    stats = {
        "cells": len(part),
        "tag": part.tag,
        "min_level": min(levels),
        "max_level": max(levels),
        "photos_covered": int(counts.sum()),
        "photos_total": len(records),
        "count_histogram": [{"lo": int(a), "hi": int(b), "cells": int(h)} for a, b, h in zip(edges, edges[1:], hist)],
        "cells_per_level": {str(k): v for k, v in sorted(Counter(levels).items())},
    }
    (out / "stats.json").write_text(json.dumps(stats, indent=1) + "\n")
    print(json.dumps(stats))


def cmd_dedup(args):
    from geocells.data import dedup_filter, load_jsonl, write_jsonl

    test = load_jsonl(args.test)
    kept = dedup_filter(test, load_jsonl(args.train), args.threshold)
    write_jsonl(_out(args) / "dedup.jsonl", kept)
    print(json.dumps({"input": len(test), "kept": len(kept), "removed": len(test) - len(kept)}))


def cmd_gen_synthetic(args):
    from geocells.data import write_jsonl
    from geocells.synthetic import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec(
        n_hotspots=args.n_hotspots,
        photos_per_hotspot=args.photos_per_hotspot,
        feature_dim=args.feature_dim,
        noise_sigma=args.noise_sigma,
        label_noise=args.label_noise,
        ambiguous_fraction=args.ambiguous_fraction,
        seed=args.seed,
    )
    data = generate_synthetic(spec)
    write_jsonl(_out(args) / "dataset.jsonl", data.records)
    print(json.dumps({"photos": len(data.records), "albums": len(data.albums)}))


def cmd_train(args):
    from geocells.classifier import ModelConfig, TrainConfig, train
    from geocells.data import load_jsonl, split
    from geocells.partition import filter_covered
    from geocells.pipeline import sub_seed

    part = _load_partition(args.partition)
    records = load_jsonl(args.data)
    if args.val:
        train_recs, val_recs = records, load_jsonl(args.val)
    else:
        train_recs, val_recs = split(records, 1.0 - args.val_fraction, sub_seed(args.seed, "split-val"))
    train_recs = filter_covered(train_recs, part)
    val_recs = filter_covered(val_recs, part)
    if not train_recs:
        raise GeocellsError("no training photo falls inside the partition")
    mcfg = ModelConfig(len(train_recs[0].features), len(part), args.hidden, sub_seed(args.seed, "model"))
    tcfg = TrainConfig(args.lr, args.eps, args.batch_size, args.epochs, sub_seed(args.seed, "train"))
    model, history = train(train_recs, val_recs, part, mcfg, tcfg)
    out = _out(args)
    model.save(out / "model.json")
    (out / "train_log.json").write_text(json.dumps(history, indent=1) + "\n")
    print(json.dumps(history[-1]))


def cmd_train_seq(args):
    from geocells.classifier import GeoClassifier, TrainConfig
    from geocells.data import group_albums, load_jsonl, split
    from geocells.partition import filter_covered
    from geocells.pipeline import sub_seed
    from geocells.sequence import SequenceModelConfig, train_sequence

    part = _load_partition(args.partition)
    single = GeoClassifier.load(args.model, part)
    records = filter_covered(load_jsonl(args.data), part)
    train_recs, val_recs = split(records, 1.0 - args.val_fraction, sub_seed(args.seed, "split-seq-val"))
    kw = {"hidden": args.hidden, "seed": sub_seed(args.seed, "seq-init")}
    if args.max_length:
        kw["max_length"] = args.max_length
    cfg = SequenceModelConfig.from_name(args.variant, **kw)
    tcfg = TrainConfig(args.lr, args.eps, args.batch_size, args.epochs, sub_seed(args.seed, "seq"))
    model, info = train_sequence(group_albums(train_recs), single, part, cfg, tcfg, group_albums(val_recs))
    out = _out(args)
    model.save(out / "seq_model.json")
    (out / "train_seq_log.json").write_text(json.dumps(info, indent=1) + "\n")
    print(json.dumps({"variant": cfg.name, "skipped": info["skipped"], "epochs": len(info["history"])}))


def cmd_infer(args):
    from geocells.classifier import GeoClassifier, top_k
    from geocells.data import feature_matrix, load_jsonl

    part = _load_partition(args.partition)
    model = GeoClassifier.load(args.model, part)
    records = load_jsonl(args.data)
    probs = model.predict(feature_matrix(records)) if records else np.zeros((0, len(part)))
    centers = part.centers()
    lines = []
    for rec, dist in zip(records, probs):
        for rank, (cls, p) in enumerate(top_k(dist, args.k), start=1):
            lines.append(json.dumps({
                "id": rec.id, "rank": rank, "class": cls, "cell": part.cells[cls].token,
                "lat": float(centers[cls, 0]), "lon": float(centers[cls, 1]), "prob": p,
            }, separators=(",", ":")))
    (_out(args) / "predictions.jsonl").write_text("".join(line + "\n" for line in lines))
    print(json.dumps({"photos": len(records), "rows": len(lines)}))


def cmd_eval(args):
    from geocells.classifier import GeoClassifier
    from geocells.data import feature_matrix, latlon_of, load_jsonl
    from geocells.evaluation import ThresholdSet, evaluate

    part = _load_partition(args.partition)
    model = GeoClassifier.load(args.model, part)
    records = load_jsonl(args.data)
    if not records:
        raise GeocellsError("empty dataset")
    thresholds = ThresholdSet.parse(args.thresholds) if args.thresholds else ThresholdSet()
    lat, lon = latlon_of(records)
    report = evaluate(
        model.predict(feature_matrix(records)), lat, lon, part, args.ks, thresholds,
        categories=[r.category for r in records],
        config={"model": Path(args.model).name, "data": Path(args.data).name, "partition": part.tag,
                "ks": list(args.ks)},
    )
    report.write(_out(args))
    print(json.dumps(report.topk[min(report.topk)]))


def write_pgm(path, heat):
    """ASCII PGM, probability 1.0 mapped to white."""
    pixels = np.clip(np.rint(np.asarray(heat) * 255), 0, 255).astype(int)
    rows = "\n".join(" ".join(str(v) for v in row) for row in pixels)
    Path(path).write_text(f"P2\n{pixels.shape[1]} {pixels.shape[0]}\n255\n{rows}\n")


def cmd_heatmap(args):
    from geocells.classifier import GeoClassifier, occlusion_map
    from geocells.data import load_jsonl

    part = _load_partition(args.partition)
    model = GeoClassifier.load(args.model, part)
    records = {r.id: r for r in load_jsonl(args.data)}
    if args.id not in records:
        raise GeocellsError(f"photo {args.id!r} not in {args.data}")
    rec = records[args.id]
    cls = args.cls if args.cls is not None else part.class_of(rec.geo)
    if cls is None:
        raise GeocellsError(f"photo {args.id!r} lies outside the partition; pass --class")
    if len(args.grid) != 3:
        raise ConfigError("--grid takes H,W,C")
    heat = occlusion_map(model, rec.features, cls, args.window, args.stride, args.grid)
    out = _out(args)
    write_pgm(out / "heatmap.pgm", heat)
    with open(out / "heatmap.csv", "w") as fh:
        fh.write("row,col,prob\n")
        for (r, c), p in np.ndenumerate(heat):
            fh.write(f"{r},{c},{p!r}\n")
    print(json.dumps({"shape": list(heat.shape), "class": cls, "min": float(heat.min()), "max": float(heat.max())}))


def cmd_end_to_end(args):
    from geocells.data import load_jsonl
    from geocells.pipeline import end_to_end

    records = load_jsonl(args.data) if args.data else None
    manifest = end_to_end(_out(args), args.seed, records=records)
    print(json.dumps(manifest))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geocells", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file of flag defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("build-partition", cmd_build_partition, "adaptive cell partition from photo locations")
    p.add_argument("--points", required=True, help="JSONL records whose locations are counted")
    p.add_argument("--t1", type=int, default=10_000)
    p.add_argument("--t2", type=int, default=50)
    p.add_argument("--max-level", type=int, default=30)

    p = add("dedup", cmd_dedup, "drop test photos near-duplicating a training photo")
    p.add_argument("--test", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--threshold", type=int, default=8, help="minimum Hamming distance kept")

    p = add("gen-synthetic", cmd_gen_synthetic, "synthetic albums with location-correlated features")
    p.add_argument("--n-hotspots", type=int, default=24)
    p.add_argument("--photos-per-hotspot", type=int, default=400)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--noise-sigma", type=float, default=0.6)
    p.add_argument("--label-noise", type=float, default=0.05)
    p.add_argument("--ambiguous-fraction", type=float, default=0.5)

    def add_train_flags(p, epochs, batch):
        p.add_argument("--lr", type=float, default=0.045)
        p.add_argument("--eps", type=float, default=1e-8)
        p.add_argument("--epochs", type=int, default=epochs)
        p.add_argument("--batch-size", type=int, default=batch)
        p.add_argument("--val-fraction", type=float, default=0.15)

    p = add("train", cmd_train, "train the single-image classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--val", help="validation JSONL; default: album-level split of --data")
    p.add_argument("--hidden", type=_ints, default=(32,), help="comma-separated hidden sizes, empty for linear")
    add_train_flags(p, 50, 64)

    p = add("train-seq", cmd_train_seq, "train an album LSTM on frozen embeddings")
    p.add_argument("--data", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--model", required=True, help="single-image checkpoint providing embeddings")
    p.add_argument("--variant", default="basic", choices=["basic", "offset1", "offset2", "repeated", "blstm"])
    p.add_argument("--max-length", type=int, default=None)
    p.add_argument("--hidden", type=int, default=128)
    add_train_flags(p, 40, 16)

    p = add("infer", cmd_infer, "top-k cells per photo")
    p.add_argument("--model", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=5)

    p = add("eval", cmd_eval, "threshold and top-k accuracy report")
    p.add_argument("--model", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ks", type=_ints, default=(1, 2, 3, 4, 5))
    p.add_argument("--thresholds", default=None, help="e.g. street=1,city=25,region=200")

    p = add("heatmap", cmd_heatmap, "occlusion sensitivity of one photo's features")
    p.add_argument("--model", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--id", required=True, help="photo id")
    p.add_argument("--grid", type=_ints, required=True, help="H,W,C layout of the feature vector")
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--class", dest="cls", type=int, default=None, help="default: the photo's true cell")

    p = add("end-to-end", cmd_end_to_end, "full synthetic experiment with a hash manifest")
    p.add_argument("--data", default=None, help="JSONL dataset; default: synthetic")
    return parser


def _apply_config_file(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        values = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {known.config}: {exc}") from exc
    values = {k.replace("-", "_"): v for k, v in values.items()}
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            sp.set_defaults(**{k: v for k, v in values.items() if any(a.dest == k for a in sp._actions)})
            # flags marked required become optional once the config supplies them
            for a in sp._actions:
                if a.dest in values:
                    a.required = False


def main(argv=None) -> int:
    argv = [str(a) for a in (sys.argv[1:] if argv is None else argv)]
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"geocells: {exc}", file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:  # argparse: --help or a usage error
        return exc.code if isinstance(exc.code, int) else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    log.info("config %s", json.dumps(resolved, default=str, sort_keys=True))
    try:
        args.func(args)
    except GeocellsError as exc:
        print(f"geocells: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"geocells: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
