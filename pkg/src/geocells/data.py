"""Photo records, albums and the dataset operations that precede training.

JSONL schema, one object per line::

    {"id": str, "lat": float, "lon": float, "features": [float, ...],
     "ts": int?, "album": str?, "sig": hex-str?, "category": str?}

``category`` is optional and only feeds the per-category error breakdown.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from geocells.errors import GeocellsError, InvalidCoordinate, ParseError, SignatureError
from geocells.sphere import GeoPoint

DEFAULT_HAMMING_THRESHOLD = 8
DEFAULT_SIGNATURE_BITS = 64


@dataclass(frozen=True)
class PhotoRecord:
    id: str
    geo: GeoPoint
    features: tuple[float, ...]
    ts: int | None = None
    album: str | None = None
    sig: str | None = None
    category: str | None = None
    # set by partition.filter_covered; never serialised
    label: int | None = None

    def to_json(self):
        obj = {"id": self.id, "lat": self.geo.lat, "lon": self.geo.lon, "features": list(self.features)}
        for key in ("ts", "album", "sig", "category"):
            value = getattr(self, key)
            if value is not None:
                obj[key] = value
        return obj

    @classmethod
    def from_json(cls, obj) -> "PhotoRecord":
        if not isinstance(obj, dict):
            raise ValueError("record must be a JSON object")
        rid = obj.get("id")
        if not isinstance(rid, str) or not rid:
            raise ValueError("'id' must be a non-empty string")
        for key in ("lat", "lon"):
            if isinstance(obj.get(key), bool) or not isinstance(obj.get(key), (int, float)):
                raise ValueError(f"'{key}' must be a number")
        feats = obj.get("features")
        if not isinstance(feats, list) or not feats:
            raise ValueError("'features' must be a non-empty list")
        if any(isinstance(f, bool) or not isinstance(f, (int, float)) or not math.isfinite(f) for f in feats):
            raise ValueError("'features' must hold finite numbers")
        ts = obj.get("ts")
        if ts is not None and (isinstance(ts, bool) or not isinstance(ts, int)):
            raise ValueError("'ts' must be an integer")
        album = obj.get("album")
        if album is not None and not isinstance(album, str):
            raise ValueError("'album' must be a string")
        if album is not None and ts is None:
            raise ValueError("album members need a 'ts'")
        sig = obj.get("sig")
        if sig is not None:
            if not isinstance(sig, str) or not sig:
                raise ValueError("'sig' must be a hex string")
            try:
                int(sig, 16)
            except ValueError:
                raise ValueError(f"'sig' is not hex: {sig!r}") from None
        category = obj.get("category")
        if category is not None and not isinstance(category, str):
            raise ValueError("'category' must be a string")
        try:
            geo = GeoPoint(obj["lat"], obj["lon"])
        except InvalidCoordinate as exc:
            raise ValueError(str(exc)) from None
        return cls(rid, geo, tuple(float(f) for f in feats), ts, album, sig, category)


@dataclass(frozen=True)
class Album:
    album_id: str
    photos: tuple[PhotoRecord, ...]

    def __len__(self):
        return len(self.photos)


def feature_matrix(records) -> np.ndarray:
    records = list(records)
    if not records:
        return np.zeros((0, 0))
    return np.array([r.features for r in records], dtype=float)


def labels_of(records) -> np.ndarray:
    return np.array([-1 if r.label is None else r.label for r in records], dtype=np.int64)


def latlon_of(records) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.array([r.geo.lat for r in records], dtype=float),
        np.array([r.geo.lon for r in records], dtype=float),
    )


def group_albums(records) -> list[Album]:
    """Albums sorted by id; photos in chronological order, ties broken by id."""
    members = defaultdict(list)
    for r in records:
        if r.album is not None:
            members[r.album].append(r)
    return [
        Album(aid, tuple(sorted(photos, key=lambda r: (r.ts, r.id))))
        for aid, photos in sorted(members.items())
    ]


# ---------------------------------------------------------------------------
# JSONL


def load_jsonl(path) -> list[PhotoRecord]:
    records = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = PhotoRecord.from_json(json.loads(line))
            except (json.JSONDecodeError, ValueError) as exc:
                raise ParseError(lineno, str(exc)) from None
            if dim is None:
                dim = len(rec.features)
            elif len(rec.features) != dim:
                raise ParseError(lineno, f"feature dim {len(rec.features)} != {dim}")
            records.append(rec)
    return records


def dumps_jsonl(records) -> str:
    return "".join(json.dumps(r.to_json(), separators=(",", ":")) + "\n" for r in records)


def write_jsonl(path, records):
    Path(path).write_text(dumps_jsonl(records), encoding="utf-8")


# ---------------------------------------------------------------------------
# train/validation split


def split(records, train_fraction: float, seed: int):
    """Album-granular random split.

    Albums (or lone photos without an album) are shuffled, then the cut that
    lands the train side closest to ``train_fraction`` of all photos is taken,
    keeping both sides non-empty when there are at least two units. Both
    outputs preserve input order.
    """
    if not (0.0 < train_fraction < 1.0):
        raise GeocellsError(f"train_fraction must be in (0, 1), got {train_fraction}")
    records = list(records)
    if not records:
        return [], []
    units = defaultdict(list)
    for idx, r in enumerate(records):
        units[("a", r.album) if r.album is not None else ("p", r.id)].append(idx)
    keys = sorted(units)
    order = np.random.default_rng(seed).permutation(len(keys))
    sizes = np.array([len(units[keys[k]]) for k in order])
    cum = np.concatenate([[0], np.cumsum(sizes)])
    target = train_fraction * len(records)
    lo, hi = (1, len(keys) - 1) if len(keys) >= 2 else (0, len(keys))
    cut = lo + int(np.argmin(np.abs(cum[lo : hi + 1] - target)))
    in_train = np.zeros(len(records), dtype=bool)
    for k in order[:cut]:
        in_train[units[keys[k]]] = True
    train = [r for r, t in zip(records, in_train) if t]
    val = [r for r, t in zip(records, in_train) if not t]
    return train, val


# ---------------------------------------------------------------------------
# near-duplicate filtering


def _signature_bytes(records, side):
    sigs = [r.sig for r in records]
    if any(s is None for s in sigs):
        raise SignatureError(f"{side} record without signature")
    widths = {len(s) for s in sigs}
    if len(widths) > 1:
        raise SignatureError(f"{side} signatures have mixed widths {sorted(widths)}")
    width = widths.pop() if widths else 0
    padded = [s if len(s) % 2 == 0 else "0" + s for s in sigs]
    nbytes = (width + 1) // 2
    buf = np.frombuffer(b"".join(bytes.fromhex(s) for s in padded), dtype=np.uint8)
    return buf.reshape(len(sigs), nbytes), width


def min_hamming(test, train, chunk: int = 512) -> np.ndarray:
    """Minimum Hamming distance from each test signature to any train signature."""
    a, wa = _signature_bytes(test, "test")
    b, wb = _signature_bytes(train, "train")
    if len(a) and len(b) and wa != wb:
        raise SignatureError(f"signature width {wa} (test) != {wb} (train) hex digits")
    out = np.full(len(a), np.iinfo(np.int64).max, dtype=np.int64)
    if len(b) == 0:
        return out
    for start in range(0, len(a), chunk):
        xor = a[start : start + chunk, None, :] ^ b[None, :, :]
        out[start : start + chunk] = np.bitwise_count(xor).sum(axis=2, dtype=np.int64).min(axis=1)
    return out


def dedup_filter(test, train, hamming_threshold: int = DEFAULT_HAMMING_THRESHOLD):
    """Drop test records closer than ``hamming_threshold`` bits to any train record."""
    test = list(test)
    if not test:
        return []
    dist = min_hamming(test, list(train))
    return [r for r, d in zip(test, dist) if d >= hamming_threshold]
