"""Synthetic geotagged albums with location-correlated features.

Hotspots (think landmarks) are grouped into regions a few tens of km wide.
Each hotspot has a characteristic feature mean; the means are rescaled so
that every pair is at least ``6 * noise_sigma`` apart. A photo is one of:

* informative: hotspot mean plus isotropic Gaussian noise,
* misleading (``label_noise``): the mean of a different, random hotspot,
* ambiguous (``ambiguous_fraction``): zero-mean noise carrying no location.

Albums walk between hotspots of one region, staying a few photos at each,
so neighbouring photos in an album tend to share a location.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from geocells.data import Album, PhotoRecord, group_albums
from geocells.errors import ConfigError
from geocells.sphere import EARTH_RADIUS_KM, GeoPoint

KM_PER_DEG = math.pi * EARTH_RADIUS_KM / 180.0


@dataclass(frozen=True)
class SyntheticSpec:
    n_hotspots: int = 24
    photos_per_hotspot: int = 400
    feature_dim: int = 16
    noise_sigma: float = 0.6
    label_noise: float = 0.05
    ambiguous_fraction: float = 0.5
    seed: int = 0
    n_regions: int = 6
    region_radius_km: float = 40.0
    hotspot_spread_km: float = 0.08
    album_length: tuple[int, int] = (6, 20)
    stay_length: tuple[int, int] = (4, 12)
    ambiguous_sigma: float = 0.6
    signatures: bool = True

    def __post_init__(self):
        for name in ("label_noise", "ambiguous_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.label_noise + self.ambiguous_fraction > 1.0:
            raise ConfigError("label_noise + ambiguous_fraction must not exceed 1")
        if self.n_hotspots < 1 or self.photos_per_hotspot < 1 or self.feature_dim < 1:
            raise ConfigError("counts and feature_dim must be positive")
        if not 1 <= self.n_regions <= self.n_hotspots:
            raise ConfigError("need 1 <= n_regions <= n_hotspots")
        if self.noise_sigma < 0 or self.ambiguous_sigma < 0:
            raise ConfigError("noise levels must be non-negative")
        lo, hi = self.album_length
        if not 1 <= lo <= hi or not 1 <= self.stay_length[0] <= self.stay_length[1]:
            raise ConfigError("length ranges must be 1 <= lo <= hi")


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    records: list[PhotoRecord]
    hotspots: np.ndarray  # (n_hotspots, 2) lat/lon
    means: np.ndarray  # (n_hotspots, feature_dim)
    region_of: np.ndarray  # hotspot -> region
    hotspot_of: dict[str, int] = field(repr=False, default_factory=dict)

    @property
    def albums(self) -> list[Album]:
        return group_albums(self.records)


def _offset(lat, lon, north_km, east_km):
    lat2 = lat + north_km / KM_PER_DEG
    lon2 = lon + east_km / (KM_PER_DEG * max(math.cos(math.radians(lat)), 1e-6))
    return max(-89.9, min(89.9, lat2)), (lon2 + 180.0) % 360.0 - 180.0


def hotspot_means(rng, n, dim, sigma):
    means = rng.normal(size=(n, dim))
    if n > 1:
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        dmin = dist[~np.eye(n, dtype=bool)].min()
        if dmin < 6.0 * sigma:
            means *= 6.0 * sigma / dmin
    return means


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Deterministic given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    region_of = np.arange(spec.n_hotspots) % spec.n_regions
    centers = [
        (float(np.degrees(np.arcsin(rng.uniform(-0.75, 0.85)))), float(rng.uniform(-180.0, 180.0)))
        for _ in range(spec.n_regions)
    ]
    hotspots = []
    for h in range(spec.n_hotspots):
        lat0, lon0 = centers[region_of[h]]
        ang = rng.uniform(0.0, 2.0 * math.pi)
        dist = rng.uniform(0.1, 1.0) * spec.region_radius_km
        hotspots.append(_offset(lat0, lon0, dist * math.cos(ang), dist * math.sin(ang)))
    hotspots = np.array(hotspots)
    means = hotspot_means(rng, spec.n_hotspots, spec.feature_dim, spec.noise_sigma)
    members = [np.flatnonzero(region_of == r) for r in range(spec.n_regions)]

    records = []
    hotspot_of = {}
    target = spec.n_hotspots * spec.photos_per_hotspot
    n_album = 0
    while len(records) < target:
        region = int(rng.integers(spec.n_regions))
        here = int(rng.choice(members[region]))
        length = int(rng.integers(spec.album_length[0], spec.album_length[1] + 1))
        album_id = f"a{n_album:05d}"
        ts = int(rng.integers(1_300_000_000, 1_500_000_000))
        stay = int(rng.integers(spec.stay_length[0], spec.stay_length[1] + 1))
        for _ in range(length):
            if stay == 0:
                others = members[region][members[region] != here]
                if others.size:
                    here = int(rng.choice(others))
                stay = int(rng.integers(spec.stay_length[0], spec.stay_length[1] + 1))
            stay -= 1
            kind = rng.uniform()
            if kind < spec.ambiguous_fraction:
                feats = rng.normal(scale=spec.ambiguous_sigma, size=spec.feature_dim)
                category = "ambiguous"
            elif kind < spec.ambiguous_fraction + spec.label_noise:
                wrong = (here + 1 + int(rng.integers(max(1, spec.n_hotspots - 1)))) % spec.n_hotspots
                feats = means[wrong] + rng.normal(scale=spec.noise_sigma, size=spec.feature_dim)
                category = "misleading"
            else:
                feats = means[here] + rng.normal(scale=spec.noise_sigma, size=spec.feature_dim)
                category = "informative"
            north, east = rng.normal(scale=spec.hotspot_spread_km, size=2)
            lat, lon = _offset(hotspots[here, 0], hotspots[here, 1], north, east)
            sig = f"{int(rng.integers(0, 2**63)) << 1 | int(rng.integers(2)):016x}" if spec.signatures else None
            rid = f"p{len(records):07d}"
            records.append(PhotoRecord(rid, GeoPoint(lat, lon), tuple(float(f) for f in feats),
                                       ts, album_id, sig, category))
            hotspot_of[rid] = here
            ts += int(rng.integers(30, 3600))
        n_album += 1
    return SyntheticDataset(spec, records, hotspots, means, region_of, hotspot_of)


def two_class_fixture(n_per_class: int = 200, dim: int = 8, sigma: float = 1.0, seed: int = 0):
    """Two Gaussian classes whose means are exactly ``6 * sigma`` apart.

    Class 0 sits at (0, 0), the centre of face 0; class 1 at (0, 90), the
    centre of face 1, so a default partition of these photos has exactly two
    cells. Returns photo records in random order.
    """
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    means = np.stack([-3.0 * sigma * direction, 3.0 * sigma * direction])
    sites = [(0.0, 0.0), (0.0, 90.0)]
    records = []
    for k in rng.permutation(2 * n_per_class):
        cls = int(k % 2)
        feats = means[cls] + rng.normal(scale=sigma, size=dim)
        records.append(PhotoRecord(f"t{k:05d}", GeoPoint(*sites[cls]), tuple(float(f) for f in feats)))
    return records
