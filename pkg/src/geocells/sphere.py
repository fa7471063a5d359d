"""Hierarchical cube-face cells on the unit sphere.

The sphere is covered by the six faces of an enclosing cube. Each face is a
quad-tree: a cell at level ``L`` is a square of side ``2**-L`` in the face's
``(s, t)`` coordinates, which live in ``[0, 1]``. The quadratic transform
``st_to_uv`` maps them onto the cube face ``[-1, 1]^2`` before projecting to
the sphere, which keeps cell areas within a factor of about two of each other.

Conventions
-----------
* Face ``f`` owns the points whose largest absolute coordinate is on axis
  ``f % 3`` with sign ``+`` for ``f < 3`` and ``-`` otherwise. Ties between
  axes go to the lower axis index (x before y before z).
* A cell covers ``[lo, hi)`` on each of s and t, except that ``hi = 1`` is
  closed, so every point belongs to exactly one cell per level.
* A child digit is ``2 * i_bit + j_bit`` where ``i`` indexes s and ``j``
  indexes t.
* Tokens are ``"F-d0d1..."``; the root of face 2 is ``"2-"``.

Everything here is pure; array helpers accept numpy arrays and broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from geocells.errors import InvalidCoordinate, InvalidLevel, InvalidToken

EARTH_RADIUS_KM = 6371.0
MAX_LEVEL = 30
NUM_FACES = 6
_LEAF_SIZE = 1 << MAX_LEVEL


@dataclass(frozen=True)
class GeoPoint:
    """Latitude/longitude in degrees.

    Longitude is wrapped into ``[-180, 180)``; latitude outside ``[-90, 90]``
    is rejected rather than folded.
    """

    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise InvalidCoordinate(f"non-finite coordinate ({self.lat}, {self.lon})")
        if abs(lat) > 90.0:
            raise InvalidCoordinate(f"latitude {lat} outside [-90, 90]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", wrap_lon(lon))

    def to_json(self):
        return {"lat": self.lat, "lon": self.lon}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["lat"], obj["lon"])


def wrap_lon(lon):
    if -180.0 <= lon < 180.0:
        return lon
    wrapped = math.fmod(lon + 180.0, 360.0)
    if wrapped < 0:
        wrapped += 360.0
    wrapped -= 180.0
    # fmod can round up to exactly 180 for tiny negative inputs
    return -180.0 if wrapped >= 180.0 else wrapped


# ---------------------------------------------------------------------------
# coordinate transforms (vectorised)


def latlon_to_xyz(lat, lon):
    """Degrees to unit vectors, shape ``(..., 3)``."""
    lat = np.radians(np.asarray(lat, dtype=float))
    lon = np.radians(np.asarray(lon, dtype=float))
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise InvalidCoordinate("non-finite coordinate")
    cos_lat = np.cos(lat)
    return np.stack([cos_lat * np.cos(lon), cos_lat * np.sin(lon), np.sin(lat)], axis=-1)


def xyz_to_latlon(xyz):
    xyz = np.asarray(xyz, dtype=float)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    lat = np.degrees(np.arctan2(z, np.hypot(x, y)))
    lon = np.degrees(np.arctan2(y, x))
    lon = np.where(lon >= 180.0, lon - 360.0, lon)
    return lat, lon


def latlon_to_unit(p: GeoPoint) -> np.ndarray:
    return latlon_to_xyz(p.lat, p.lon)


def st_to_uv(s):
    s = np.asarray(s, dtype=float)
    return np.where(s >= 0.5, (4.0 * s * s - 1.0) / 3.0, (1.0 - 4.0 * (1.0 - s) ** 2) / 3.0)


def uv_to_st(u):
    u = np.asarray(u, dtype=float)
    # clip keeps the unused branch of np.where free of sqrt(negative) warnings
    pos = 0.5 * np.sqrt(1.0 + 3.0 * np.clip(u, 0.0, None))
    neg = 1.0 - 0.5 * np.sqrt(1.0 - 3.0 * np.clip(u, None, 0.0))
    return np.where(u >= 0.0, pos, neg)


def xyz_to_face_uv(xyz):
    """Return ``(face, u, v)`` arrays for unit (or any nonzero) vectors."""
    xyz = np.asarray(xyz, dtype=float)
    axis = np.argmax(np.abs(xyz), axis=-1)
    major = np.take_along_axis(xyz, axis[..., None], axis=-1)[..., 0]
    face = np.where(major < 0, axis + 3, axis)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        u = np.select(
            [face == 0, face == 1, face == 2, face == 3, face == 4],
            [y / x, -x / y, -x / z, z / x, z / y],
            -y / z,
        )
        v = np.select(
            [face == 0, face == 1, face == 2, face == 3, face == 4],
            [z / x, z / y, -y / z, y / x, -x / y],
            -x / z,
        )
    # points on a cube edge can round a hair past the face boundary
    return face.astype(np.int64), np.clip(u, -1.0, 1.0), np.clip(v, -1.0, 1.0)


def face_uv_to_xyz(face, u, v):
    """Inverse of :func:`xyz_to_face_uv`; result is on the cube, not normalised."""
    face = np.asarray(face)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    face, u, v = np.broadcast_arrays(face, u, v)
    one = np.ones_like(u)
    table = [
        (one, u, v),
        (-u, one, v),
        (-u, -v, one),
        (-one, -v, -u),
        (v, -one, -u),
        (v, u, -one),
    ]
    out = np.empty(u.shape + (3,))
    for f, (x, y, z) in enumerate(table):
        m = face == f
        out[m, 0], out[m, 1], out[m, 2] = x[m], y[m], z[m]
    return out


def face_st(lat, lon):
    """Face index and quad-tree coordinates ``(s, t)`` for lat/lon arrays."""
    face, u, v = xyz_to_face_uv(latlon_to_xyz(lat, lon))
    return face, uv_to_st(u), uv_to_st(v)


def leaf_ij(lat, lon, level=MAX_LEVEL):
    """Face and integer cell coordinates of each point at ``level``."""
    _check_level(level)
    face, s, t = face_st(lat, lon)
    n = 1 << level
    # s * n is exact (power-of-two scale) so floor agrees with [lo, hi) tests
    i = np.minimum(np.floor(s * n), n - 1).astype(np.int64)
    j = np.minimum(np.floor(t * n), n - 1).astype(np.int64)
    return face, i, j


def _check_level(level):
    if not (isinstance(level, (int, np.integer)) and 0 <= level <= MAX_LEVEL):
        raise InvalidLevel(f"level {level!r} outside [0, {MAX_LEVEL}]")


# ---------------------------------------------------------------------------
# cell identifiers


@dataclass(frozen=True, order=True)
class CellId:
    """A node of one face's quad-tree.

    ``path`` is a string of child digits ``0..3``; its length is the level.
    Ordering follows the token, which is also the class-index order used by
    partitions.
    """

    face: int
    path: str = ""

    def __post_init__(self):
        if not (isinstance(self.face, (int, np.integer)) and 0 <= self.face < NUM_FACES):
            raise InvalidToken(f"face {self.face!r} outside 0..5")
        object.__setattr__(self, "face", int(self.face))
        if len(self.path) > MAX_LEVEL:
            raise InvalidLevel(f"path longer than {MAX_LEVEL}")
        if self.path.strip("0123"):
            raise InvalidToken(f"bad quad digits in {self.path!r}")

    @property
    def level(self) -> int:
        return len(self.path)

    @property
    def token(self) -> str:
        return f"{self.face}-{self.path}"

    def __str__(self):
        return self.token

    @classmethod
    def from_token(cls, token: str) -> "CellId":
        if len(token) < 2 or token[1] != "-" or token[0] not in "012345":
            raise InvalidToken(f"malformed cell token {token!r}")
        return cls(int(token[0]), token[2:])

    @classmethod
    def from_face_ij(cls, face, i, j, level) -> "CellId":
        """Build from integer coordinates at ``level`` (``0 <= i, j < 2**level``)."""
        _check_level(level)
        digits = []
        for shift in range(level - 1, -1, -1):
            digits.append("0123"[(((i >> shift) & 1) << 1) | ((j >> shift) & 1)])
        return cls(int(face), "".join(digits))

    @cached_property
    def ij(self) -> tuple[int, int]:
        i = j = 0
        for d in self.path:
            k = ord(d) - 48
            i = (i << 1) | (k >> 1)
            j = (j << 1) | (k & 1)
        return i, j

    def st_bounds(self):
        """``(s_lo, s_hi, t_lo, t_hi)``; all exactly representable."""
        i, j = self.ij
        n = float(1 << self.level)
        return i / n, (i + 1) / n, j / n, (j + 1) / n

    def parent(self) -> "CellId":
        if not self.path:
            raise InvalidLevel("face cells have no parent")
        return CellId(self.face, self.path[:-1])

    def children(self) -> tuple["CellId", ...]:
        if self.level >= MAX_LEVEL:
            raise InvalidLevel("leaf cells have no children")
        return tuple(CellId(self.face, self.path + d) for d in "0123")

    def is_ancestor_of(self, other: "CellId") -> bool:
        """Strict ancestry: a cell is not its own ancestor."""
        return (
            self.face == other.face
            and self.level < other.level
            and other.path.startswith(self.path)
        )


def face_cells() -> tuple[CellId, ...]:
    return tuple(CellId(f) for f in range(NUM_FACES))


def cell_from_point(p: GeoPoint, level: int) -> CellId:
    _check_level(level)
    face, i, j = leaf_ij(p.lat, p.lon, level)
    return CellId.from_face_ij(int(face), int(i), int(j), level)


def contains_face_st(c: CellId, face, s, t):
    """Half-open containment test in face coordinates (closed at ``s, t = 1``)."""
    s_lo, s_hi, t_lo, t_hi = c.st_bounds()
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    in_s = (s >= s_lo) & ((s < s_hi) | ((s_hi == 1.0) & (s == 1.0)))
    in_t = (t >= t_lo) & ((t < t_hi) | ((t_hi == 1.0) & (t == 1.0)))
    return (np.asarray(face) == c.face) & in_s & in_t


def cell_contains(c: CellId, p: GeoPoint) -> bool:
    face, s, t = face_st(p.lat, p.lon)
    return bool(contains_face_st(c, face, s, t))


def cell_center_xyz(c: CellId) -> np.ndarray:
    s_lo, s_hi, t_lo, t_hi = c.st_bounds()
    xyz = face_uv_to_xyz(c.face, st_to_uv(0.5 * (s_lo + s_hi)), st_to_uv(0.5 * (t_lo + t_hi)))
    return xyz / np.linalg.norm(xyz)


def cell_center(c: CellId) -> GeoPoint:
    """Centre of the cell: the midpoint of its (s, t) square, on the sphere."""
    lat, lon = xyz_to_latlon(cell_center_xyz(c))
    return GeoPoint(float(lat), float(lon))


def _triangle_area(a, b, c):
    # Oosterom & Strackee solid angle, written with edge differences so that
    # tiny triangles keep their relative precision.
    triple = np.einsum("...i,...i", a, np.cross(b - a, c - a))
    denom = 1.0 + np.einsum("...i,...i", a, b) + np.einsum("...i,...i", b, c) + np.einsum("...i,...i", c, a)
    return 2.0 * np.arctan2(np.abs(triple), denom)


def _rect_area(face, s_lo, s_hi, t_lo, t_hi):
    corners = []
    for s, t in ((s_lo, t_lo), (s_hi, t_lo), (s_hi, t_hi), (s_lo, t_hi)):
        xyz = face_uv_to_xyz(face, st_to_uv(s), st_to_uv(t))
        corners.append(xyz / np.linalg.norm(xyz, axis=-1, keepdims=True))
    a, b, c, d = corners
    return _triangle_area(a, b, c) + _triangle_area(a, c, d)


def cell_area_steradians(c: CellId) -> float:
    """Exact area of the cell, which is a quadrilateral bounded by great circles."""
    return float(_rect_area(c.face, *c.st_bounds()))


def level_areas(level: int) -> np.ndarray:
    """Areas of every cell at ``level`` as an array of shape ``(6, 2**L, 2**L)``."""
    _check_level(level)
    n = 1 << level
    edges = np.arange(n + 1) / n
    s_lo, t_lo = np.meshgrid(edges[:-1], edges[:-1], indexing="ij")
    s_hi, t_hi = np.meshgrid(edges[1:], edges[1:], indexing="ij")
    return np.stack([_rect_area(f, s_lo, s_hi, t_lo, t_hi) for f in range(NUM_FACES)])


# ---------------------------------------------------------------------------
# distances


def great_circle_km(a: GeoPoint, b: GeoPoint, radius_km: float = EARTH_RADIUS_KM) -> float:
    return float(great_circle_km_array(a.lat, a.lon, b.lat, b.lon, radius_km))


def great_circle_km_array(lat1, lon1, lat2, lon2, radius_km: float = EARTH_RADIUS_KM):
    """Central angle via ``atan2(|a x b|, a . b)``, well conditioned at all separations."""
    a = latlon_to_xyz(lat1, lon1)
    b = latlon_to_xyz(lat2, lon2)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.einsum("...i,...i", a, b)
    return radius_km * np.arctan2(cross, dot)
