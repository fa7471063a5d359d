import json
from pathlib import Path

import pytest

from geocells.classifier import GeoClassifier
from geocells.cli import main
from geocells.data import PhotoRecord, feature_matrix, load_jsonl, write_jsonl
from geocells.partition import Partition
from geocells.pipeline import E2E_ARTIFACTS
from geocells.sphere import GeoPoint

from oracles import hotspot_mixture

GOLDEN = Path(__file__).parent / "data" / "golden_partition.json"
FACE_CENTERS = [(0, 0), (0, 90), (90, 0), (0, -180), (0, -90), (-90, 0)]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def points_file(path, lat, lon):
    write_jsonl(path, [PhotoRecord(f"p{k}", GeoPoint(a, b), (0.0,)) for k, (a, b) in enumerate(zip(lat, lon))])
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Small synthetic dataset, partition and single-image model built through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-synthetic", "--out", root, "--n-hotspots", "6", "--photos-per-hotspot", "60",
                 "--feature-dim", "8", "--seed", "3"]) == 0
    data = root / "dataset.jsonl"
    assert main(["build-partition", "--out", root, "--points", data, "--t1", "60", "--t2", "5"]) == 0
    assert main(["train", "--out", root, "--data", data, "--partition", root / "partition.json",
                 "--epochs", "5", "--hidden", "6", "--seed", "1"]) == 0
    return root


# -- build-partition ------------------------------------------------------------


def test_build_partition_six_faces(tmp_path, capsys):
    lat, lon = zip(*[c for c in FACE_CENTERS for _ in range(4)])
    pts = points_file(tmp_path / "faces.jsonl", lat, lon)
    code, out, _ = run(capsys, "build-partition", "--out", tmp_path / "o", "--points", pts, "--t1", "4", "--t2", "2")
    assert code == 0
    stats = json.loads((tmp_path / "o" / "stats.json").read_text())
    assert stats["cells"] == 6 and json.loads(out)["cells"] == 6
    assert stats["min_level"] == stats["max_level"] == 0
    assert sum(b["cells"] for b in stats["count_histogram"]) == 6


def test_build_partition_empty_input(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    code, _, err = run(capsys, "build-partition", "--out", tmp_path / "o", "--points", empty)
    assert code == 2 and "empty dataset" in err


def test_build_partition_degenerate(tmp_path, capsys):
    pts = points_file(tmp_path / "few.jsonl", [0.0, 10.0], [0.0, 10.0])
    code, _, _ = run(capsys, "build-partition", "--out", tmp_path / "o", "--points", pts, "--t1", "5", "--t2", "3")
    assert code == 2


def test_build_partition_matches_golden(tmp_path, capsys):
    golden = json.loads(GOLDEN.read_text())
    lat, lon = hotspot_mixture(golden["n"], seed=golden["seed"])
    pts = points_file(tmp_path / "hot.jsonl", lat, lon)
    code, _, _ = run(capsys, "build-partition", "--out", tmp_path / "o", "--points", pts,
                     "--t1", golden["t1"], "--t2", golden["t2"], "--max-level", golden["max_level"])
    assert code == 0
    part = json.loads((tmp_path / "o" / "partition.json").read_text())
    assert part["cells"] == golden["tokens"]
    assert part["counts"] == golden["counts"]


def test_config_file_precedence(tmp_path, capsys):
    lat, lon = zip(*[c for c in FACE_CENTERS for _ in range(4)])
    pts = points_file(tmp_path / "faces.jsonl", lat, lon)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"t1": 10, "t2": 5, "points": str(pts)}))
    # t2=5 from the config discards every 4-photo face
    code, _, _ = run(capsys, "--config", cfg, "build-partition", "--out", tmp_path / "a")
    assert code == 2
    code, _, _ = run(capsys, "--config", cfg, "build-partition", "--out", tmp_path / "b", "--t2", "4")
    assert code == 0


# -- usage and data errors ------------------------------------------------------------


@pytest.mark.parametrize("argv", [[], ["nope"], ["infer", "--out", "x"], ["build-partition", "--points"],
                                  ["train-seq", "--out", "x", "--data", "d", "--partition", "p", "--model", "m",
                                   "--variant", "lstm"]])
def test_usage_errors(argv, capsys):
    code, _, _ = run(capsys, *argv)
    assert code == 1


def test_unreadable_config(tmp_path, capsys):
    bad = tmp_path / "cfg.json"
    bad.write_text("{oops")
    code, _, _ = run(capsys, "--config", bad, "build-partition", "--out", tmp_path, "--points", "x")
    assert code == 1


def test_parse_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "lat": 1, "lon": 2, "features": [1]}\n{"id": 3}\n')
    code, _, err = run(capsys, "build-partition", "--out", tmp_path / "o", "--points", bad)
    assert code == 2 and "line 2" in err


def test_missing_file(tmp_path, capsys):
    code, _, _ = run(capsys, "build-partition", "--out", tmp_path / "o", "--points", tmp_path / "absent.jsonl")
    assert code == 2


# -- train / infer / eval ---------------------------------------------------------------


def test_train_outputs(trained):
    log = json.loads((trained / "train_log.json").read_text())
    assert log[0]["epoch"] == 0 and len(log) >= 2
    model = GeoClassifier.load(trained / "model.json", Partition.load(trained / "partition.json"))
    assert model.config.hidden_dims == (6,)


def test_infer_matches_library(trained, tmp_path, capsys):
    data = trained / "dataset.jsonl"
    code, _, _ = run(capsys, "infer", "--out", tmp_path, "--model", trained / "model.json",
                     "--partition", trained / "partition.json", "--data", data, "--k", "3")
    assert code == 0
    rows = [json.loads(line) for line in (tmp_path / "predictions.jsonl").read_text().splitlines()]
    part = Partition.load(trained / "partition.json")
    model = GeoClassifier.load(trained / "model.json", part)
    records = load_jsonl(data)
    probs = model.predict(feature_matrix(records))
    assert len(rows) == 3 * len(records)
    for k, rec in enumerate(records):
        mine = rows[3 * k: 3 * k + 3]
        assert [r["id"] for r in mine] == [rec.id] * 3 and [r["rank"] for r in mine] == [1, 2, 3]
        ps = [r["prob"] for r in mine]
        assert ps == sorted(ps, reverse=True)
        for r in mine:
            assert abs(r["prob"] - probs[k, r["class"]]) <= 1e-12
            assert r["cell"] == part.tokens[r["class"]]


def test_infer_single_photo_k1(trained, tmp_path, capsys):
    one = tmp_path / "one.jsonl"
    write_jsonl(one, load_jsonl(trained / "dataset.jsonl")[:1])
    code, _, _ = run(capsys, "infer", "--out", tmp_path, "--model", trained / "model.json",
                     "--partition", trained / "partition.json", "--data", one, "--k", "1")
    assert code == 0
    assert len((tmp_path / "predictions.jsonl").read_text().splitlines()) == 1


def test_version_mismatch_exit(trained, tmp_path, capsys):
    other = tmp_path / "other"
    code, _, _ = run(capsys, "build-partition", "--out", other, "--points", trained / "dataset.jsonl",
                     "--t1", "200", "--t2", "5")
    assert code == 0
    for cmd in ("infer", "eval"):
        code, _, err = run(capsys, cmd, "--out", tmp_path / cmd, "--model", trained / "model.json",
                           "--partition", other / "partition.json", "--data", trained / "dataset.jsonl")
        assert code == 3, err


def test_eval_report(trained, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--out", tmp_path, "--model", trained / "model.json",
                       "--partition", trained / "partition.json", "--data", trained / "dataset.jsonl",
                       "--ks", "1,3", "--thresholds", "street=1,city=25")
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert set(rep["topk"]) == {"1", "3"}
    assert set(rep["topk"]["1"]) == {"street", "city"}
    assert all(rep["topk"]["3"][n] >= rep["topk"]["1"][n] for n in ("street", "city"))
    assert set(rep["median_error_km_by_category"]) <= {"informative", "misleading", "ambiguous"}
    assert (tmp_path / "curves.csv").read_text().startswith("k,distance_km,fraction\n")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit(tmp_path, capsys):
    recs = [PhotoRecord(f"n{k}", GeoPoint(*FACE_CENTERS[k % 2]), (1e308, -1e308)) for k in range(40)]
    write_jsonl(tmp_path / "huge.jsonl", recs)
    assert main(["build-partition", "--out", tmp_path, "--points", tmp_path / "huge.jsonl", "--t2", "5"]) == 0
    code, _, err = run(capsys, "train", "--out", tmp_path, "--data", tmp_path / "huge.jsonl",
                       "--partition", tmp_path / "partition.json", "--epochs", "2", "--hidden", "")
    assert code == 4, err


# -- heatmap, dedup, train-seq ----------------------------------------------------------


def test_heatmap(trained, tmp_path, capsys):
    rec = load_jsonl(trained / "dataset.jsonl")[0]
    code, out, _ = run(capsys, "heatmap", "--out", tmp_path, "--model", trained / "model.json",
                       "--partition", trained / "partition.json", "--data", trained / "dataset.jsonl",
                       "--id", rec.id, "--grid", "4,2,1", "--window", "2", "--stride", "1")
    assert code == 0
    pgm = (tmp_path / "heatmap.pgm").read_text().split()
    assert pgm[:4] == ["P2", "1", "3", "255"] and len(pgm) == 7
    rows = (tmp_path / "heatmap.csv").read_text().splitlines()
    assert rows[0] == "row,col,prob" and len(rows) == 4
    code, _, _ = run(capsys, "heatmap", "--out", tmp_path, "--model", trained / "model.json",
                     "--partition", trained / "partition.json", "--data", trained / "dataset.jsonl",
                     "--id", rec.id, "--grid", "3,3,1")
    assert code == 2


def test_dedup(trained, tmp_path, capsys):
    recs = load_jsonl(trained / "dataset.jsonl")
    write_jsonl(tmp_path / "train.jsonl", recs[:100])
    write_jsonl(tmp_path / "test.jsonl", recs[90:150])
    code, out, _ = run(capsys, "dedup", "--out", tmp_path / "o", "--test", tmp_path / "test.jsonl",
                       "--train", tmp_path / "train.jsonl", "--threshold", "1")
    assert code == 0
    kept = load_jsonl(tmp_path / "o" / "dedup.jsonl")
    assert [r.id for r in kept] == [r.id for r in recs[100:150]]
    assert json.loads(out) == {"input": 60, "kept": 50, "removed": 10}


@pytest.mark.parametrize("variant", ["basic", "offset1", "blstm"])
def test_train_seq(trained, tmp_path, capsys, variant):
    code, out, err = run(capsys, "train-seq", "--out", tmp_path, "--data", trained / "dataset.jsonl",
                         "--partition", trained / "partition.json", "--model", trained / "model.json",
                         "--variant", variant, "--hidden", "4", "--epochs", "2")
    assert code == 0, err
    ckpt = json.loads((tmp_path / "seq_model.json").read_text())
    assert ckpt["variant"].startswith(variant)
    assert json.loads(out)["variant"] == ckpt["variant"]


# -- end-to-end -----------------------------------------------------------------------


def test_end_to_end_small(trained, tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    hashes = []
    for name in ("a", "b"):
        code, out, err = run(capsys, "end-to-end", "--out", tmp_path / name, "--seed", "5",
                             "--data", trained / "dataset.jsonl")
        assert code == 0, err
        manifest = json.loads((tmp_path / name / "MANIFEST.json").read_text())
        assert sorted(manifest["artifacts"]) == sorted(E2E_ARTIFACTS)
        hashes.append(manifest["artifacts"])
    assert hashes[0] == hashes[1]
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a", "b"]
    trends = json.loads((tmp_path / "a" / "trends.json").read_text())
    assert set(trends["accuracy"]) == {"single", "average", "basic"}
