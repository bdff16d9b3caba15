from __future__ import annotations

import pytest

from hailsim.baseline import (
    DeadheadExtractor,
    GpsPoint,
    extract_deadheading,
    parse_timestamp,
    read_gps_csv,
    street_adec,
    street_adm,
    write_gps_csv,
)
from hailsim.kpi import dec

KM_PER_DEG_LAT = 111.19492664455873  # haversine, R = 6371.0088 km -> 1 km is 1/this degrees
DLAT = 0.5 / KM_PER_DEG_LAT


def _trace(status, times, lats, vid="v1", lon=104.0):
    return [GpsPoint(vid, float(t), 30.0 + la, lon, s) for t, la, s in zip(times, lats, status)]


def test_all_occupied_is_zero():
    res = extract_deadheading(_trace(["occupied"] * 4, [0, 60, 120, 180], [0, DLAT, 2 * DLAT, 3 * DLAT]))
    assert len(res.days) == 1
    assert (res.days[0].deadheading_time_min, res.days[0].deadheading_distance_km) == (0.0, 0.0)


def test_three_point_deadhead_trace():
    res = extract_deadheading(_trace(["deadheading"] * 3, [0, 60, 120], [0, DLAT, 2 * DLAT]))
    d = res.days[0]
    assert d.deadheading_time_min == pytest.approx(2.0, abs=1e-12)
    assert d.deadheading_distance_km == pytest.approx(1.0, abs=1e-6)


def test_gap_drops_whole_segment():
    res = extract_deadheading(_trace(["deadheading"] * 3, [0, 60, 460], [0, DLAT, 2 * DLAT]))
    assert res.days[0].deadheading_distance_km == 0.0 and res.diagnostics["gap_segments"] == 1


def test_gap_on_status_boundary_is_fine():
    pts = _trace(["deadheading", "deadheading", "occupied", "occupied"], [0, 60, 600, 660], [0, DLAT, 0, DLAT])
    d = extract_deadheading(pts).days[0]
    assert d.deadheading_time_min == pytest.approx(1.0)


def test_unsorted_duplicates_and_midnight_split():
    pts = _trace(["deadheading"] * 3, [120, 0, 60], [2 * DLAT, 0, DLAT]) + _trace(["deadheading"], [60], [DLAT])
    res = extract_deadheading(pts)
    assert res.diagnostics["duplicate_timestamp"] == 1
    assert res.days[0].deadheading_distance_km == pytest.approx(1.0, abs=1e-6)
    late = _trace(["deadheading"] * 2, [86340, 86460], [0, DLAT])
    res = extract_deadheading(late)
    assert [d.date for d in res.days] == ["1970-01-01", "1970-01-02"]


def test_unknown_status_is_not_deadheading():
    res = extract_deadheading(_trace(["parked"] * 3, [0, 60, 120], [0, DLAT, 2 * DLAT]))
    assert res.total_km == 0.0 and res.diagnostics["unknown_status"] == 3


def test_street_kpis():
    res = extract_deadheading(_trace(["deadheading"] * 3, [0, 60, 120], [0, DLAT, 2 * DLAT]))
    assert street_adm(res.days, 2) == pytest.approx(0.5, abs=1e-6)
    assert street_adec(res.segments, 1) == pytest.approx(dec(1.0, 2.0), rel=1e-6)
    with pytest.raises(ValueError):
        street_adm(res.days, 0)


def test_transformer_and_csv(tmp_path):
    pts = _trace(["deadheading"] * 3, [0, 60, 120], [0, DLAT, 2 * DLAT])
    write_gps_csv(tmp_path / "g.csv", pts)
    back, bad = read_gps_csv(tmp_path / "g.csv")
    assert bad == 0 and back == pts
    ex = DeadheadExtractor().fit()
    days = ex.transform(back)
    assert days[0].deadheading_time_min == pytest.approx(2.0) and len(ex.segments_) == 1
    assert parse_timestamp("1970-01-01 00:01:00") == 60.0
