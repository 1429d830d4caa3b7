import json
import math

import pytest

from trackside.power import recommend_interval
from trackside.presets import DriveScenario, default_scanner, path_loss_preset
from trackside.rendezvous import detection_probability_oracle, mph_to_ms
from trackside.roadplan import (
    DEFAULT_MAX_SPACING_M,
    Road,
    haversine_m,
    plan_deployment,
    plan_to_geojson,
    road_from_geojson,
    select_sites,
    speed_profile,
)

M_PER_DEG = math.pi * 6371000.0 / 180.0


def road_from_meters(points_m, vmax=45.0):
    """Local (x, y) meters near the equator -> Road."""
    return Road(
        polyline=tuple((y / M_PER_DEG, x / M_PER_DEG) for x, y in points_m),
        surface_vmax_mph=vmax,
    )


def straight_road(length_m=1000.0, step_m=100.0, vmax=45.0):
    n = int(length_m / step_m)
    return road_from_meters([(i * step_m, 0.0) for i in range(n + 1)], vmax)


def hairpin_road():
    pts = [(0, 0), (90, 0), (100, 2), (90, 4), (0, 4)]
    return road_from_meters(pts)


class TestGeometry:
    def test_haversine_one_degree_lat(self):
        assert haversine_m((0.0, 0.0), (1.0, 0.0)) == pytest.approx(M_PER_DEG, rel=1e-9)

    def test_road_needs_two_points(self):
        with pytest.raises(ValueError):
            Road(polyline=((0.0, 0.0),))

    def test_degenerate_segment_rejected(self):
        with pytest.raises(ValueError):
            Road(polyline=((0.0, 0.0), (0.0, 0.0), (0.1, 0.0)))

    def test_length_and_interpolation(self):
        road = straight_road(1000.0)
        assert road.length_m == pytest.approx(1000.0, rel=1e-6)
        lat, lon = road.point_at(500.0)
        assert haversine_m((lat, lon), road.polyline[0]) == pytest.approx(500.0, rel=1e-6)

    def test_projection_roundtrip(self):
        road = straight_road(1000.0)
        arc, offset = road.project(road.point_at(333.3))
        assert arc == pytest.approx(333.3, abs=1e-6)
        assert offset < 1e-6


class TestSpeedProfile:
    def test_straight_road_at_cap(self):
        road = road_from_meters([(0, 0), (50, 0), (100, 0)])
        assert speed_profile(road) == (45.0, 45.0, 45.0)

    def test_two_point_road_uniform(self):
        road = road_from_meters([(0, 0), (100, 0)])
        assert speed_profile(road) == (45.0, 45.0)

    def test_ten_meter_bend_apex_speed(self):
        # oracle: v = sqrt(a_lat * radius) = sqrt(2 * 10) = 4.47 m/s ~ 10 mph
        pts = [(-10, 0), (0, 10), (10, 0)]
        road = road_from_meters(pts)
        speeds = speed_profile(road, lateral_accel_ms2=2.0)
        expected_mph = math.sqrt(2.0 * 10.0) / mph_to_ms(1.0)
        assert speeds[1] == pytest.approx(expected_mph, abs=0.1)
        assert speeds[1] == pytest.approx(10.0, abs=0.1)

    def test_never_exceeds_cap(self):
        road = road_from_meters([(0, 0), (80, 1), (163, 0), (240, 4), (330, 0)], vmax=30.0)
        assert all(v <= 30.0 for v in speed_profile(road))

    def test_lower_comfort_never_faster(self):
        road = hairpin_road()
        relaxed = speed_profile(road, lateral_accel_ms2=2.0)
        cautious = speed_profile(road, lateral_accel_ms2=1.0)
        assert all(c <= r + 1e-12 for c, r in zip(cautious, relaxed))

    def test_bad_accel_rejected(self):
        with pytest.raises(ValueError):
            speed_profile(hairpin_road(), lateral_accel_ms2=0.0)


class TestSelectSites:
    def test_straight_road_budget_one_midpoint(self):
        road = straight_road(1000.0)
        sites = select_sites(road, count_budget=1)
        assert len(sites) == 1
        assert sites[0].arc_m == pytest.approx(500.0, rel=1e-6)
        assert sites[0].interval_ms == 700  # 45 mph guide row
        assert sites[0].predicted_battery_days == 131.25

    def test_hairpin_budget_one_at_apex(self):
        road = hairpin_road()
        sites = select_sites(road, count_budget=1)
        apex = (2.0 / M_PER_DEG, 100.0 / M_PER_DEG)  # (lat, lon) of (100, 2) m
        apex_arc, _ = road.project(apex)
        assert len(sites) == 1
        assert sites[0].arc_m == pytest.approx(apex_arc, abs=1.0)
        # apex speed is well under the cap, so the interval is longer
        assert sites[0].local_vmax_mph < 15.0
        assert sites[0].interval_ms >= 1200

    def test_zero_budget_rejected(self):
        with pytest.raises(ValueError):
            select_sites(straight_road(), count_budget=0)

    def test_sites_sorted_and_unique_ids(self):
        sites = select_sites(straight_road(2000.0), count_budget=4)
        arcs = [s.arc_m for s in sites]
        assert arcs == sorted(arcs)
        assert len({s.beacon_id for s in sites}) == len(sites)


class TestPlanDeployment:
    def test_straight_km_three_sites_no_gaps(self):
        plan = plan_deployment(straight_road(1000.0), budget=3, max_spacing_m=400.0)
        assert len(plan.sites) == 3
        assert plan.coverage_gaps == ()

    def test_underbudget_reports_gaps(self):
        plan = plan_deployment(straight_road(2000.0), budget=1, max_spacing_m=400.0)
        assert len(plan.sites) == 1
        assert plan.coverage_gaps

    def test_two_point_road_plans(self):
        plan = plan_deployment(road_from_meters([(0, 0), (300, 0)]), budget=1)
        assert len(plan.sites) == 1
        assert plan.sites[0].arc_m == pytest.approx(150.0, rel=1e-6)

    def test_sites_on_polyline(self):
        plan = plan_deployment(hairpin_road(), budget=2)
        for site in plan.sites:
            _, offset = plan.road.project(site.position)
            assert offset < 1e-6

    def test_guide_consistency(self):
        plan = plan_deployment(straight_road(1500.0), budget=3)
        for site in plan.sites:
            interval, days = recommend_interval(site.local_vmax_mph)
            assert site.interval_ms == interval
            assert site.predicted_battery_days == days

    def test_reliability_target_met_and_oracle_checked(self):
        scenario = DriveScenario(
            path_loss=path_loss_preset("hm10-bt4"), scanner=default_scanner()
        )
        plan = plan_deployment(
            straight_road(1000.0), budget=2, reliability_target=0.95, scenario=scenario
        )
        for site in plan.sites:
            assert site.detection_probability >= 0.95
            mc = detection_probability_oracle(
                scenario.advertiser(site.interval_ms),
                scenario.scanner,
                scenario.in_range_time_s(site.local_vmax_mph),
                trials=20000,
                seed=17,
            )
            assert abs(mc - site.detection_probability) < 0.02

    def test_expected_detections_sum(self):
        plan = plan_deployment(straight_road(1000.0), budget=2)
        assert plan.expected_detections_per_traverse == pytest.approx(
            sum(s.detection_probability for s in plan.sites)
        )

    def test_unknown_preset_rejected(self):
        with pytest.raises(KeyError):
            plan_deployment(straight_road(), budget=1, beacon_preset="nope")


class TestGeoJson:
    def test_linestring_roundtrip(self):
        road = straight_road(500.0)
        coords = [[lon, lat] for lat, lon in road.polyline]
        parsed = road_from_geojson({"type": "LineString", "coordinates": coords})
        assert parsed.polyline == road.polyline

    def test_feature_with_speed_cap(self):
        obj = {
            "type": "Feature",
            "properties": {"surface_vmax_mph": 30},
            "geometry": {"type": "LineString", "coordinates": [[0, 0], [0.001, 0]]},
        }
        road = road_from_geojson(json.dumps(obj))
        assert road.surface_vmax_mph == 30.0

    def test_feature_collection(self):
        obj = {
            "type": "FeatureCollection",
            "features": [
                {"type": "Feature", "properties": {},
                 "geometry": {"type": "Point", "coordinates": [0, 0]}},
                {"type": "Feature", "properties": {},
                 "geometry": {"type": "LineString", "coordinates": [[0, 0], [0.001, 0]]}},
            ],
        }
        assert len(road_from_geojson(obj).polyline) == 2

    def test_rejects_non_linestring(self):
        with pytest.raises(ValueError):
            road_from_geojson({"type": "Point", "coordinates": [0, 0]})

    def test_plan_export_points(self):
        plan = plan_deployment(straight_road(1000.0), budget=2)
        geojson = plan_to_geojson(plan)
        assert geojson["type"] == "FeatureCollection"
        assert len(geojson["features"]) == 2
        for feature, site in zip(geojson["features"], plan.sites):
            lon, lat = feature["geometry"]["coordinates"]
            assert (lat, lon) == (
                pytest.approx(site.position[0], abs=1e-6),
                pytest.approx(site.position[1], abs=1e-6),
            )
            props = feature["properties"]
            assert props["beacon_id"] == site.beacon_id
            assert props["interval_ms"] == site.interval_ms
            assert props["battery_days"] == pytest.approx(site.predicted_battery_days)
            assert props["local_vmax_mph"] == pytest.approx(site.local_vmax_mph, abs=0.1)
