import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geocells.errors import InvalidCoordinate, InvalidLevel, InvalidToken
from geocells.sphere import (
    EARTH_RADIUS_KM,
    MAX_LEVEL,
    CellId,
    GeoPoint,
    cell_area_steradians,
    cell_center,
    cell_contains,
    cell_from_point,
    contains_face_st,
    face_cells,
    face_st,
    great_circle_km,
    latlon_to_unit,
    level_areas,
    st_to_uv,
    uv_to_st,
)

from oracles import cell_solid_angle, face_uv, haversine_km, unit_vector

lats = st.floats(-90, 90, allow_nan=False)
lons = st.floats(-180, 180, allow_nan=False, exclude_max=True)
points = st.builds(GeoPoint, lats, lons)
levels = st.integers(0, MAX_LEVEL)


def random_points(n, seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1, 1, n)
    lat = np.degrees(np.arcsin(z))
    lon = rng.uniform(-180, 180, n)
    return [GeoPoint(a, b) for a, b in zip(lat, lon)]


@st.composite
def cells(draw, max_level=MAX_LEVEL):
    level = draw(st.integers(0, max_level))
    digits = draw(st.text(alphabet="0123", min_size=level, max_size=level))
    return CellId(draw(st.integers(0, 5)), digits)


# -- points and unit vectors ---------------------------------------------------


def test_unit_vector_axes():
    assert np.allclose(latlon_to_unit(GeoPoint(0, 0)), (1, 0, 0), atol=1e-15)
    assert np.allclose(latlon_to_unit(GeoPoint(90, 0)), (0, 0, 1), atol=1e-15)


def test_unit_vector_matches_trig_oracle():
    p = GeoPoint(48.8566, 2.3522)
    assert np.allclose(latlon_to_unit(p), unit_vector(48.8566, 2.3522), rtol=0, atol=1e-12)


@given(points)
def test_unit_vector_norm(p):
    assert abs(np.linalg.norm(latlon_to_unit(p)) - 1.0) < 1e-12


@pytest.mark.parametrize("lat,lon", [(math.nan, 0), (0, math.inf), (91, 0), (-90.5, 10)])
def test_invalid_coordinates(lat, lon):
    with pytest.raises(InvalidCoordinate):
        GeoPoint(lat, lon)


@pytest.mark.parametrize("lon,wrapped", [(180, -180), (190, -170), (-190, 170), (540, -180), (-180, -180)])
def test_longitude_wrap(lon, wrapped):
    assert GeoPoint(0, lon).lon == pytest.approx(wrapped)


def test_geopoint_json():
    p = GeoPoint(12.5, -33.25)
    assert p.to_json() == {"lat": 12.5, "lon": -33.25}
    assert GeoPoint.from_json(p.to_json()) == p


@given(st.floats(0, 1))
def test_st_uv_roundtrip(s):
    assert float(uv_to_st(st_to_uv(s))) == pytest.approx(s, abs=1e-15)


def test_face_coordinates_agree_with_oracle():
    pts = random_points(2000, 1)
    lat = np.array([p.lat for p in pts])
    lon = np.array([p.lon for p in pts])
    face, s, t = face_st(lat, lon)
    oface, u, v = face_uv(lat, lon)
    assert np.array_equal(face, oface)
    assert np.allclose(st_to_uv(s), u, atol=1e-12)
    assert np.allclose(st_to_uv(t), v, atol=1e-12)


# -- cell ids -------------------------------------------------------------------


def test_tokens():
    assert CellId(2).token == "2-"
    assert CellId(5, "0312").token == "5-0312"
    assert CellId.from_token("3-") == CellId(3)
    assert CellId.from_token("1-30").level == 2


@pytest.mark.parametrize("token", ["", "6-", "2", "2_01", "2-014", "x-0", "-1-"])
def test_bad_tokens(token):
    with pytest.raises((InvalidToken, InvalidLevel)):
        CellId.from_token(token)


def test_path_too_long():
    with pytest.raises(InvalidLevel):
        CellId(0, "0" * (MAX_LEVEL + 1))


@given(cells())
def test_token_roundtrip(c):
    assert CellId.from_token(c.token) == c
    assert CellId.from_token(c.token).token == c.token


def test_token_roundtrip_many():
    rng = np.random.default_rng(5)
    for _ in range(100_000):
        level = int(rng.integers(0, MAX_LEVEL + 1))
        c = CellId(int(rng.integers(6)), "".join("0123"[d] for d in rng.integers(0, 4, level)))
        assert CellId.from_token(c.token) == c


@given(cells())
def test_face_ij_roundtrip(c):
    i, j = c.ij
    assert CellId.from_face_ij(c.face, i, j, c.level) == c


@given(cells(max_level=MAX_LEVEL - 1))
def test_four_children(c):
    kids = c.children()
    assert len(set(kids)) == 4
    assert all(k.parent() == c and c.is_ancestor_of(k) for k in kids)
    assert not c.is_ancestor_of(c)


def test_leaf_has_no_children_and_face_no_parent():
    with pytest.raises(InvalidLevel):
        CellId(0, "1" * MAX_LEVEL).children()
    with pytest.raises(InvalidLevel):
        CellId(0).parent()


# -- containment ---------------------------------------------------------------


@pytest.mark.parametrize("level", [-1, MAX_LEVEL + 1])
def test_level_out_of_range(level):
    with pytest.raises(InvalidLevel):
        cell_from_point(GeoPoint(0, 0), level)


@given(points)
def test_exactly_one_face(p):
    assert sum(cell_contains(f, p) for f in face_cells()) == 1
    assert cell_from_point(p, 0) in face_cells()
    assert cell_contains(cell_from_point(p, 0), p)


def test_random_points_contained_at_level_8():
    for p in random_points(10_000, 2):
        assert cell_contains(cell_from_point(p, 8), p)


@given(points, st.integers(0, MAX_LEVEL - 1))
def test_hierarchy(p, level):
    parent = cell_from_point(p, level)
    child = cell_from_point(p, level + 1)
    assert child.parent() == parent
    kids = parent.children()
    assert sum(cell_contains(k, p) for k in kids) == 1


@given(cells(max_level=20))
def test_center_roundtrip(c):
    center = cell_center(c)
    assert cell_contains(c, center)
    assert cell_from_point(center, c.level) == c


def test_face0_center():
    center = cell_center(CellId(0))
    assert center.lat == pytest.approx(0, abs=1e-12)
    assert center.lon == pytest.approx(0, abs=1e-12)


@given(cells(max_level=25))
def test_children_centers_average_to_parent(c):
    s_lo, s_hi, t_lo, t_hi = c.st_bounds()
    mids = []
    for k in c.children():
        a, b, d, e = k.st_bounds()
        mids.append(((a + b) / 2, (d + e) / 2))
    assert np.mean([m[0] for m in mids]) == pytest.approx((s_lo + s_hi) / 2, abs=1e-15)
    assert np.mean([m[1] for m in mids]) == pytest.approx((t_lo + t_hi) / 2, abs=1e-15)


@pytest.mark.parametrize("level", [0, 1, 5, 17, MAX_LEVEL - 1])
def test_boundary_points_belong_to_one_child(level):
    rng = np.random.default_rng(level)
    for _ in range(50):
        n = 1 << level
        parent = CellId.from_face_ij(int(rng.integers(6)), int(rng.integers(n)), int(rng.integers(n)), level)
        s_lo, s_hi, t_lo, t_hi = parent.st_bounds()
        s_mid, t_mid = (s_lo + s_hi) / 2, (t_lo + t_hi) / 2
        for s, t in [(s_mid, t_mid), (s_mid, t_lo + 0.3 * (t_hi - t_lo)), (s_lo, t_mid), (s_hi, t_hi)]:
            hits = [bool(contains_face_st(k, parent.face, s, t)) for k in parent.children()]
            in_parent = bool(contains_face_st(parent, parent.face, s, t))
            assert sum(hits) == (1 if in_parent else 0)


def test_corner_of_cube_is_owned_once():
    corner = GeoPoint(math.degrees(math.atan(1 / math.sqrt(2))), 45.0)
    assert sum(cell_contains(f, corner) for f in face_cells()) == 1
    for level in (3, 12, 30):
        assert cell_contains(cell_from_point(corner, level), corner)


@pytest.mark.parametrize("level", [1, 2, 3, 4])
def test_tiling_disjoint(level):
    """Every sampled point is in exactly one of the 6 * 4**L cells."""
    n = 1 << level
    pts = random_points(2000, level)
    face, s, t = face_st([p.lat for p in pts], [p.lon for p in pts])
    hits = np.zeros(len(pts), dtype=int)
    for f in range(6):
        for i in range(n):
            for j in range(n):
                hits += contains_face_st(CellId.from_face_ij(f, i, j, level), face, s, t)
    assert np.all(hits == 1)


# -- areas ---------------------------------------------------------------------


def test_face_areas_sum_to_sphere():
    assert sum(cell_area_steradians(f) for f in face_cells()) == pytest.approx(4 * math.pi, rel=1e-12)


@pytest.mark.parametrize("level", [0, 3, 6, 9])
def test_level_areas_cover_sphere(level):
    assert level_areas(level).sum() == pytest.approx(4 * math.pi, rel=1e-6)


@given(cells(max_level=20))
def test_parent_area_is_sum_of_children(c):
    total = sum(cell_area_steradians(k) for k in c.children())
    assert total == pytest.approx(cell_area_steradians(c), rel=1e-9)


@given(cells(max_level=14))
def test_area_matches_closed_form(c):
    i, j = c.ij
    assert cell_area_steradians(c) == pytest.approx(cell_solid_angle(i, j, c.level), rel=1e-9)


def test_deep_cells_have_positive_area():
    for level in (20, 25, MAX_LEVEL):
        c = cell_from_point(GeoPoint(10, 20), level)
        a = cell_area_steradians(c)
        assert 0 < a < 4 * math.pi / 6 / 4 ** (level - 2)


@pytest.mark.parametrize("level", [4, 5, 6, 7, 8, 9])
def test_area_ratio_band(level):
    """max/min cell area within [2.05, 2.11] at every level >= 4."""
    areas = level_areas(level)
    ratio = areas.max() / areas.min()
    assert 2.05 <= ratio <= 2.11, f"level {level}: max/min area {ratio:.4f}"


# -- distances -------------------------------------------------------------------


def test_distance_identity_and_oracle():
    paris, london = GeoPoint(48.8566, 2.3522), GeoPoint(51.5074, -0.1278)
    assert great_circle_km(paris, paris) == 0.0
    expected = haversine_km(48.8566, 2.3522, 51.5074, -0.1278)
    assert great_circle_km(paris, london) == pytest.approx(expected, rel=1e-4)


def test_antipodes():
    assert great_circle_km(GeoPoint(0, 0), GeoPoint(0, -180)) == pytest.approx(math.pi * EARTH_RADIUS_KM)
    assert great_circle_km(GeoPoint(90, 0), GeoPoint(-90, 0)) == pytest.approx(math.pi * EARTH_RADIUS_KM)


@settings(max_examples=300)
@given(points, points)
def test_distance_metric(a, b):
    d = great_circle_km(a, b)
    assert d == great_circle_km(b, a)
    assert 0.0 <= d <= math.pi * EARTH_RADIUS_KM + 1e-9
    assert d == pytest.approx(haversine_km(a.lat, a.lon, b.lat, b.lon), rel=1e-4, abs=1e-6)


@given(points, points, points)
def test_triangle_inequality(a, b, c):
    assert great_circle_km(a, c) <= great_circle_km(a, b) + great_circle_km(b, c) + 1e-9
