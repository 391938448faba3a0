import math

import numpy as np
import pytest

from mandicast.geograph import (
    EARTH_RADIUS_KM,
    GraphError,
    MandiGraph,
    build_graph,
    haversine_km,
    neighbors,
    pairwise_distances_km,
    read_graph,
    write_graph,
)
from mandicast.ingest import MandiMeta


def law_of_cosines_km(lat1, lon1, lat2, lon2):
    """Independent great-circle formula for cross-checking."""
    p1, l1, p2, l2 = map(math.radians, (lat1, lon1, lat2, lon2))
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(l2 - l1)
    return EARTH_RADIUS_KM * math.acos(min(1.0, max(-1.0, c)))


class TestHaversine:
    def test_zero_for_identical_points(self):
        assert haversine_km(28.6, 77.2, 28.6, 77.2) == 0.0

    def test_equatorial_antipodes(self):
        assert haversine_km(0, 0, 0, 180) == pytest.approx(math.pi * EARTH_RADIUS_KM, abs=1e-9)

    def test_delhi_jaipur(self):
        # cross-checked against the spherical law of cosines
        d = haversine_km(28.6139, 77.2090, 26.9124, 75.7873)
        assert d == pytest.approx(235.290240, abs=1e-3)
        assert 230.0 < d < 240.0
        assert d == pytest.approx(law_of_cosines_km(28.6139, 77.2090, 26.9124, 75.7873), abs=1e-6)

    def test_matches_law_of_cosines_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            lat1, lat2 = rng.uniform(-80, 80, 2)
            lon1, lon2 = rng.uniform(-179, 179, 2)
            a = haversine_km(lat1, lon1, lat2, lon2)
            b = law_of_cosines_km(lat1, lon1, lat2, lon2)
            assert a == pytest.approx(b, abs=1e-5)

    def test_metric_properties_on_sampled_triples(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform((-60, -170), (60, 170), size=(30, 2))
        for _ in range(300):
            i, j, k = rng.integers(0, len(pts), 3)
            dij = haversine_km(*pts[i], *pts[j])
            dji = haversine_km(*pts[j], *pts[i])
            assert dij == pytest.approx(dji, abs=1e-9)  # symmetry
            dik = haversine_km(*pts[i], *pts[k])
            dkj = haversine_km(*pts[k], *pts[j])
            assert dij <= dik + dkj + 1e-6  # triangle inequality

    def test_out_of_bounds_rejected(self):
        with pytest.raises(GraphError):
            haversine_km(91, 0, 0, 0)
        with pytest.raises(GraphError):
            haversine_km(0, 0, 0, 181)


def mandis_at(*coords):
    return [MandiMeta(f"M{i}", f"m{i}", lat, lon) for i, (lat, lon) in enumerate(coords)]


class TestBuildGraph:
    def test_edge_within_threshold(self):
        # ~150 km apart on a meridian (1 deg lat ~ 111.2 km)
        ms = mandis_at((20.0, 78.0), (21.35, 78.0))
        g = build_graph(ms, 200.0)
        assert g.edges == {(0, 1)}

    def test_no_edge_beyond_threshold(self):
        ms = mandis_at((20.0, 78.0), (22.25, 78.0))  # ~250 km
        assert build_graph(ms, 200.0).edges == set()

    def test_max_threshold_gives_complete_graph(self):
        rng = np.random.default_rng(3)
        ms = mandis_at(*zip(rng.uniform(-60, 60, 8), rng.uniform(-170, 170, 8)))
        g = build_graph(ms, 20015.1)
        assert len(g.edges) == 8 * 7 // 2

    def test_boundary_distance_is_inclusive(self):
        ms = mandis_at((0.0, 0.0), (0.0, 1.0))
        d = haversine_km(0, 0, 0, 1)
        assert build_graph(ms, d).edges == {(0, 1)}
        assert build_graph(ms, d - 1e-9).edges == set()

    def test_duplicate_id_rejected(self):
        ms = [MandiMeta("M1", "a", 10, 10), MandiMeta("M1", "b", 11, 11)]
        with pytest.raises(GraphError, match="duplicate"):
            build_graph(ms, 200.0)

    def test_edge_monotone_in_threshold(self):
        rng = np.random.default_rng(5)
        ms = mandis_at(*zip(rng.uniform(15, 25, 20), rng.uniform(70, 80, 20)))
        prev = set()
        for thr in (50, 150, 300, 700, 2000):
            edges = build_graph(ms, thr).edges
            assert prev <= edges
            prev = edges

    def test_pairwise_matrix_matches_scalar(self):
        rng = np.random.default_rng(8)
        ms = mandis_at(*zip(rng.uniform(-50, 50, 10), rng.uniform(-150, 150, 10)))
        d = pairwise_distances_km(ms)
        for i in range(10):
            for j in range(10):
                expected = haversine_km(ms[i].latitude, ms[i].longitude, ms[j].latitude, ms[j].longitude)
                assert d[i, j] == pytest.approx(expected, abs=1e-9)


class TestNeighbors:
    def triangle_plus_isolate(self):
        ms = mandis_at((20, 78), (20.5, 78), (20.25, 78.4), (40, 120))
        return build_graph(ms, 100.0)

    def test_isolated_node_empty(self):
        g = self.triangle_plus_isolate()
        assert neighbors(g, 3) == []

    def test_triangle_node(self):
        g = self.triangle_plus_isolate()
        assert neighbors(g, 0) == [1, 2]

    def test_symmetry(self):
        g = self.triangle_plus_isolate()
        for u in range(g.node_count):
            for v in neighbors(g, u):
                assert u in neighbors(g, v)

    def test_out_of_range(self):
        g = self.triangle_plus_isolate()
        with pytest.raises(GraphError, match="out of range"):
            neighbors(g, 4)

    def test_mean_aggregation_rows(self):
        g = self.triangle_plus_isolate()
        a = g.mean_aggregation_matrix()
        np.testing.assert_allclose(a.sum(axis=1), [1, 1, 1, 0])
        assert a[0, 1] == 0.5 and a[0, 2] == 0.5


class TestGraphExport:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        ms = mandis_at(*zip(rng.uniform(15, 25, 12), rng.uniform(70, 80, 12)))
        g = build_graph(ms, 300.0)
        write_graph(g, tmp_path / "edges.tsv", tmp_path / "nodes.csv")
        back = read_graph(tmp_path / "edges.tsv", tmp_path / "nodes.csv", 300.0)
        assert back.nodes == g.nodes
        assert back.edges == g.edges

    def test_without_edges(self):
        ms = mandis_at((20, 78), (20.5, 78))
        g = build_graph(ms, 100.0)
        ablated = g.without_edges()
        assert ablated.edges == set()
        assert ablated.nodes == g.nodes
        assert (ablated.mean_aggregation_matrix() == 0).all()
