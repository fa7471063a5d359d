"""Distance-threshold accuracy, top-k curves, per-group medians and retrieval mAP.

Localization error is the great-circle distance from the centre of the
predicted cell to the true location. It overstates the error of a correct
prediction in a large cell; that bias is left in on purpose so numbers stay
comparable with the usual protocol.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from geocells.errors import ConfigError
from geocells.sphere import GeoPoint, great_circle_km_array

DEFAULT_THRESHOLDS = (
    ("street", 1.0),
    ("city", 25.0),
    ("region", 200.0),
    ("country", 750.0),
    ("continent", 2500.0),
)

# distances (km) at which accuracy curves are sampled for curves.csv
CURVE_GRID_KM = tuple(float(x) for x in np.round(np.logspace(0, np.log10(20000), 25), 6))

CURVES_CSV_COLUMNS = ("k", "distance_km", "fraction")


@dataclass(frozen=True)
class ThresholdSet:
    radii: tuple[tuple[str, float], ...] = DEFAULT_THRESHOLDS

    def __post_init__(self):
        km = [r for _, r in self.radii]
        if not km or any(b <= a for a, b in zip(km, km[1:])):
            raise ConfigError("threshold radii must be strictly increasing")

    @property
    def names(self):
        return [n for n, _ in self.radii]

    @classmethod
    def parse(cls, text: str) -> "ThresholdSet":
        """``"street=1,city=25"`` or plain ``"1,25,200"``."""
        radii = []
        for part in text.split(","):
            name, _, km = part.rpartition("=")
            radii.append((name or f"{float(km):g}km", float(km)))
        return cls(tuple(radii))


def localization_errors(pred_classes, lat, lon, partition) -> np.ndarray:
    centers = partition.centers()[np.asarray(pred_classes, dtype=np.int64)]
    return great_circle_km_array(centers[..., 0], centers[..., 1], lat, lon)


def localization_error_km(predicted_class: int, truth: GeoPoint, partition) -> float:
    return float(localization_errors([predicted_class], truth.lat, truth.lon, partition)[0])


def threshold_accuracy(errors_km, thresholds: ThresholdSet | None = None) -> dict[str, float]:
    """Fraction of errors within each radius, boundary inclusive."""
    thresholds = thresholds or ThresholdSet()
    err = np.asarray(errors_km, dtype=float)
    if err.size == 0:
        return {name: float("nan") for name in thresholds.names}
    return {name: float(np.count_nonzero(err <= km) / err.size) for name, km in thresholds.radii}


def topk_errors(probs, lat, lon, partition, k: int) -> np.ndarray:
    """Per-image minimum error over the ``k`` most confident cells."""
    probs = np.atleast_2d(probs)
    if not (1 <= k <= probs.shape[1]):
        raise ConfigError(f"k={k} outside [1, {probs.shape[1]}]")
    top = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    lat = np.asarray(lat, dtype=float)[:, None]
    lon = np.asarray(lon, dtype=float)[:, None]
    return localization_errors(top, lat, lon, partition).min(axis=1)


def topk_accuracy_from_probs(probs, lat, lon, partition, ks=(1, 2, 3, 4, 5),
                             thresholds: ThresholdSet | None = None) -> dict[int, dict[str, float]]:
    return {k: threshold_accuracy(topk_errors(probs, lat, lon, partition, k), thresholds) for k in ks}


def topk_accuracy(model, dataset, partition, ks=(1, 2, 3, 4, 5), thresholds=None):
    """Top-k threshold accuracy of ``model.predict`` over photo records."""
    from geocells.data import feature_matrix, latlon_of

    records = list(dataset)
    lat, lon = latlon_of(records)
    return topk_accuracy_from_probs(model.predict(feature_matrix(records)), lat, lon, partition, ks, thresholds)


def median_error_by_group(errors_km, groups) -> dict[str, float]:
    errors = np.asarray(errors_km, dtype=float)
    groups = list(groups)
    if len(groups) != errors.size:
        raise ConfigError("every error needs a group label")
    out = {}
    for g in sorted(set(groups)):
        # np.median averages the two middle values for even counts
        out[g] = float(np.median(errors[[k for k, h in enumerate(groups) if h == g]]))
    return out


def average_precision(ranked_relevance) -> float:
    rel = np.asarray(ranked_relevance, dtype=bool)
    if not rel.any():
        raise ConfigError("average precision needs at least one relevant item")
    hits = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1)
    return float((hits[rel] / ranks[rel]).mean())


def retrieval_map(queries, corpus, relevance, corpus_ids=None) -> float:
    """Mean average precision of Euclidean-distance rankings.

    ``relevance[q]`` is the set of corpus ids relevant to query ``q``;
    ``corpus_ids`` default to row indices. Distance ties rank the smaller id
    first.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    c = np.atleast_2d(np.asarray(corpus, dtype=float))
    if q.shape[1] != c.shape[1]:
        raise ConfigError("query and corpus embeddings differ in dimension")
    ids = list(range(len(c))) if corpus_ids is None else list(corpus_ids)
    if len(relevance) != len(q):
        raise ConfigError("one relevance set per query is required")
    id_rank = np.argsort(np.argsort(np.array(ids, dtype=object), kind="stable"), kind="stable")
    dist = np.sqrt(((q[:, None, :] - c[None, :, :]) ** 2).sum(axis=2))
    aps = []
    for qi, rel_ids in enumerate(relevance):
        rel_ids = set(rel_ids)
        if not rel_ids:
            raise ConfigError(f"query {qi} has an empty relevance set")
        order = np.lexsort((id_rank, dist[qi]))
        aps.append(average_precision([ids[k] in rel_ids for k in order]))
    return float(np.mean(aps))


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    thresholds: ThresholdSet
    topk: dict[int, dict[str, float]]
    curves: dict[int, list[float]]
    n_images: int
    categories: dict[str, float] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "n_images": self.n_images,
            "thresholds": [{"name": n, "km": km} for n, km in self.thresholds.radii],
            "topk": {str(k): v for k, v in self.topk.items()},
            "median_error_km_by_category": self.categories,
            "curve_grid_km": list(CURVE_GRID_KM),
            "curves": {str(k): v for k, v in self.curves.items()},
            "config": self.config,
        }

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVES_CSV_COLUMNS)
        for k, fractions in self.curves.items():
            for d, frac in zip(CURVE_GRID_KM, fractions):
                w.writerow([k, repr(d), repr(frac)])
        return buf.getvalue()

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")
        (out / "curves.csv").write_text(self.curves_csv())

    def is_nested(self) -> bool:
        """Accuracy never drops with larger ``k`` or a larger radius."""
        ks = sorted(self.topk)
        names = self.thresholds.names
        for k in ks:
            vals = [self.topk[k][n] for n in names]
            if any(b < a for a, b in zip(vals, vals[1:])):
                return False
        for a, b in zip(ks, ks[1:]):
            if any(self.topk[b][n] < self.topk[a][n] for n in names):
                return False
            if any(y < x for x, y in zip(self.curves[a], self.curves[b])):
                return False
        return True


def evaluate(probs, lat, lon, partition, ks=(1, 2, 3, 4, 5), thresholds=None,
             categories=None, config=None) -> EvalReport:
    """Full report for a matrix of per-image distributions."""
    thresholds = thresholds or ThresholdSet()
    probs = np.atleast_2d(probs)
    ks = tuple(k for k in ks if k <= probs.shape[1])
    errors = {k: topk_errors(probs, lat, lon, partition, k) for k in ks}
    topk = {k: threshold_accuracy(e, thresholds) for k, e in errors.items()}
    curves = {
        k: [float(np.count_nonzero(e <= d) / max(1, e.size)) for d in CURVE_GRID_KM] for k, e in errors.items()
    }
    cat_medians = {}
    if categories is not None and ks and 1 in errors:
        labelled = [(err, c) for err, c in zip(errors[1], categories) if c is not None]
        if labelled:
            cat_medians = median_error_by_group([e for e, _ in labelled], [c for _, c in labelled])
    return EvalReport(thresholds, topk, curves, int(probs.shape[0]), cat_medians, dict(config or {}))
