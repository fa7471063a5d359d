"""Adaptive geocell partition: the class space of the geolocation models.

Cells are split top-down while they hold more than ``t1`` photos (unless they
sit at ``max_level``), then leaves with fewer than ``t2`` photos are dropped.
The surviving leaves, sorted by token, are the classes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from geocells.errors import (
    ConfigError,
    DegeneratePartition,
    EmptyDataset,
    GeocellsError,
    PartitionFileError,
)
from geocells.sphere import MAX_LEVEL, CellId, GeoPoint, cell_center, leaf_ij

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class PartitionParams:
    t1: int = 10_000
    t2: int = 50
    max_level: int = MAX_LEVEL

    def __post_init__(self):
        if not (0 < self.t2 <= self.t1):
            raise ConfigError(f"need 0 < t2 <= t1, got t1={self.t1}, t2={self.t2}")
        if not (0 <= self.max_level <= MAX_LEVEL):
            raise ConfigError(f"max_level {self.max_level} outside [0, {MAX_LEVEL}]")


def _level_keys(face, i, j, level):
    n = np.int64(1) << np.int64(level)
    return (face * n + i) * n + j


def _points_to_arrays(points):
    """Accept GeoPoints, (lat, lon) pairs, or an ``(n, 2)`` array."""
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float).reshape(-1, 2)
    else:
        rows = [(p.lat, p.lon) if isinstance(p, GeoPoint) else tuple(p) for p in points]
        arr = np.asarray(rows, dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


@dataclass(frozen=True)
class Partition:
    cells: tuple[CellId, ...]
    counts: tuple[int, ...]
    params: PartitionParams = field(default_factory=PartitionParams)
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if len(self.cells) != len(self.counts):
            raise PartitionFileError("cells and counts differ in length")
        tokens = [c.token for c in self.cells]
        if tokens != sorted(tokens) or len(set(tokens)) != len(tokens):
            raise PartitionFileError("cells must be unique and sorted by token")
        # per-level lookup tables: sorted int64 keys -> class index
        tables = {}
        for idx, c in enumerate(self.cells):
            i, j = c.ij
            tables.setdefault(c.level, []).append((int(_level_keys(c.face, i, j, c.level)), idx))
        lookup = {}
        for level, pairs in tables.items():
            pairs.sort()
            lookup[level] = (
                np.array([k for k, _ in pairs], dtype=np.int64),
                np.array([v for _, v in pairs], dtype=np.int64),
            )
        object.__setattr__(self, "_lookup", lookup)

    def __len__(self):
        return len(self.cells)

    @property
    def tokens(self) -> list[str]:
        return [c.token for c in self.cells]

    @property
    def tag(self) -> str:
        """Content hash identifying this class space; checkpoints pin it."""
        h = hashlib.sha256(",".join(self.tokens).encode())
        return f"v{self.version}-{h.hexdigest()[:16]}"

    def index(self, cell: CellId) -> int:
        return self.cells.index(cell)

    def centers(self) -> np.ndarray:
        """``(n_classes, 2)`` array of cell-centre lat/lon."""
        if not hasattr(self, "_centers"):
            pts = [cell_center(c) for c in self.cells]
            object.__setattr__(self, "_centers", np.array([(p.lat, p.lon) for p in pts]))
        return self._centers

    def class_of_many(self, lat, lon) -> np.ndarray:
        """Class index per point, ``-1`` where no kept cell covers it."""
        lat = np.atleast_1d(np.asarray(lat, dtype=float))
        lon = np.atleast_1d(np.asarray(lon, dtype=float))
        out = np.full(lat.shape, -1, dtype=np.int64)
        if lat.size == 0:
            return out
        face, i30, j30 = leaf_ij(lat, lon, MAX_LEVEL)
        for level, (keys, idx) in self._lookup.items():
            shift = MAX_LEVEL - level
            k = _level_keys(face, i30 >> shift, j30 >> shift, level)
            pos = np.searchsorted(keys, k)
            pos_c = np.minimum(pos, len(keys) - 1)
            hit = keys[pos_c] == k
            out[hit] = idx[pos_c[hit]]
        return out

    def class_of(self, p: GeoPoint):
        c = int(self.class_of_many(p.lat, p.lon)[0])
        return None if c < 0 else c

    # -- serialisation -----------------------------------------------------

    def to_json(self):
        return {
            "params": dataclasses.asdict(self.params),
            "cells": self.tokens,
            "counts": list(self.counts),
            "version": self.version,
            "tag": self.tag,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def from_json(cls, obj) -> "Partition":
        try:
            if obj.get("version") != FORMAT_VERSION:
                raise PartitionFileError(f"unsupported partition version {obj.get('version')!r}")
            params = PartitionParams(**obj["params"])
            cells = tuple(CellId.from_token(t) for t in obj["cells"])
            counts = tuple(int(c) for c in obj["counts"])
            part = cls(cells, counts, params)
        except ConfigError as exc:
            raise PartitionFileError(f"bad partition params: {exc}") from exc
        except PartitionFileError:
            raise
        except GeocellsError as exc:
            raise PartitionFileError(f"bad partition file: {exc}") from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise PartitionFileError(f"malformed partition file: {exc}") from exc
        part.validate()
        if "tag" in obj and obj["tag"] != part.tag:
            raise PartitionFileError("partition tag does not match its cell list")
        return part

    @classmethod
    def load(cls, path) -> "Partition":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise PartitionFileError(f"{path}: not JSON ({exc})") from exc
        return cls.from_json(obj)

    def validate(self):
        """Check the build invariants; raises :class:`PartitionFileError`."""
        p = self.params
        if not self.cells:
            raise PartitionFileError("partition has no cells")
        token_set = set(self.tokens)
        for c, n in zip(self.cells, self.counts):
            if n < p.t2:
                raise PartitionFileError(f"{c.token} holds {n} < t2={p.t2} photos")
            if n > p.t1 and c.level < p.max_level:
                raise PartitionFileError(f"{c.token} holds {n} > t1={p.t1} photos below max_level")
            if c.level > p.max_level:
                raise PartitionFileError(f"{c.token} deeper than max_level")
            for k in range(c.level):
                if f"{c.face}-{c.path[:k]}" in token_set:
                    raise PartitionFileError(f"{c.token} has an ancestor in the partition")


def build_partition(points, params: PartitionParams | None = None) -> Partition:
    """Adaptive top-down subdivision followed by a single discard pass.

    ``points`` may be an iterable of :class:`GeoPoint`, of ``(lat, lon)``
    pairs, or an ``(n, 2)`` array.
    """
    params = params or PartitionParams()
    lat, lon = _points_to_arrays(points)
    if lat.size == 0:
        raise EmptyDataset()
    face, i30, j30 = leaf_ij(lat, lon, MAX_LEVEL)

    leaves: list[tuple[int, int, int]] = []  # (level, key, count)
    active = np.arange(lat.size)
    level = 0
    while active.size:
        shift = MAX_LEVEL - level
        keys = _level_keys(face[active], i30[active] >> shift, j30[active] >> shift, level)
        uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
        split = counts > params.t1
        if level >= params.max_level:
            split[:] = False
        # empty children never show up in np.unique, so they are dropped here
        for k, n in zip(uniq[~split], counts[~split]):
            leaves.append((level, int(k), int(n)))
        active = active[split[inverse]]
        level += 1

    kept = []
    for lvl, key, n in leaves:
        if n < params.t2:
            continue
        size = 1 << lvl
        cell = CellId.from_face_ij(key // (size * size), (key // size) % size, key % size, lvl)
        kept.append((cell.token, cell, n))
    log.info("partition: %d leaves, %d kept after t2=%d", len(leaves), len(kept), params.t2)
    if not kept:
        raise DegeneratePartition(f"every cell has fewer than t2={params.t2} photos")
    kept.sort(key=lambda r: r[0])
    return Partition(tuple(c for _, c, _ in kept), tuple(n for _, _, n in kept), params)


def filter_covered(photos, part: Partition):
    """Keep photos inside a kept cell, in input order, with ``label`` set.

    Photos must expose ``.geo``; they are copied with :func:`dataclasses.replace`.
    """
    photos = list(photos)
    if not photos:
        return []
    labels = part.class_of_many([p.geo.lat for p in photos], [p.geo.lon for p in photos])
    return [dataclasses.replace(p, label=int(c)) for p, c in zip(photos, labels) if c >= 0]
