"""Tests for region handling, triangular meshing, and the neighbor precision."""

import json

import numpy as np
import pytest

from spatbeta.mesh import (
    InvalidRegionError,
    NeighborGraph,
    Region,
    TriMesh,
    build_mesh,
    build_neighbor_graph,
    load_region,
    locate_point,
    locate_points,
    mesh_to_geojson,
    precision_matrix,
)

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def square_region():
    return Region(rings=(UNIT_SQUARE.copy(),))


class TestRegion:
    def test_area_and_bounds(self):
        region = square_region()
        np.testing.assert_allclose(region.area, 1.0)
        np.testing.assert_allclose(region.bounds, (0.0, 0.0, 1.0, 1.0))

    def test_contains_points(self):
        region = square_region()
        lon = np.array([0.5, 2.0, -0.1, 0.99])
        lat = np.array([0.5, 0.5, 0.5, 0.01])
        np.testing.assert_array_equal(
            region.contains_points(lon, lat), [True, False, False, True]
        )

    def test_hole_subtracts_area(self):
        hole = np.array([[0.25, 0.25], [0.75, 0.25], [0.75, 0.75], [0.25, 0.75]])
        region = Region(rings=(UNIT_SQUARE.copy(), hole))
        np.testing.assert_allclose(region.area, 1.0 - 0.25)
        assert not region.contains(0.5, 0.5)
        assert region.contains(0.1, 0.1)

    def test_degenerate_ring_rejected(self):
        with pytest.raises(InvalidRegionError):
            Region(rings=(np.array([[0.0, 0.0], [1.0, 0.0]]),))

    def test_hole_swallowing_outer_ring_rejected(self):
        with pytest.raises(InvalidRegionError):
            Region(rings=(UNIT_SQUARE.copy(), UNIT_SQUARE.copy()))

    def test_load_region_round_trip(self, tmp_path):
        path = tmp_path / "region.json"
        path.write_text(
            json.dumps(
                {
                    "type": "Polygon",
                    "coordinates": [
                        [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0], [0.0, 0.0]]
                    ],
                }
            )
        )
        region = load_region(path)
        np.testing.assert_allclose(region.area, 2.0)


class TestBuildMesh:
    def test_deterministic_for_fixed_seed(self):
        region = square_region()
        a = build_mesh(region, 50, seed=7)
        b = build_mesh(region, 50, seed=7)
        np.testing.assert_array_equal(a.vertices, b.vertices)
        np.testing.assert_array_equal(a.triangles, b.triangles)

    def test_triangle_count_near_target(self):
        region = square_region()
        for target in (20, 60, 120):
            mesh = build_mesh(region, target, seed=0)
            assert abs(mesh.n_triangles - target) <= 0.3 * target

    def test_triangles_valid_and_positive_area(self):
        mesh = build_mesh(square_region(), 40, seed=3)
        assert mesh.triangles.min() >= 0
        assert mesh.triangles.max() < len(mesh.vertices)
        assert np.all(mesh.signed_areas() > 0)

    def test_triangles_cover_region_area(self):
        region = square_region()
        mesh = build_mesh(region, 80, seed=1)
        np.testing.assert_allclose(mesh.signed_areas().sum(), region.area, rtol=0.05)

    def test_centroids_inside_region(self):
        region = square_region()
        mesh = build_mesh(region, 60, seed=2)
        cents = mesh.centroids()
        assert np.all(region.contains_points(cents[:, 0], cents[:, 1]))

    def test_national_outline_count(self):
        """A 530-triangle request over the national outline lands nearby."""
        region = load_region("fixtures/us_outline.json")
        mesh = build_mesh(region, 530, seed=42)
        assert 530 - 106 <= mesh.n_triangles <= 530 + 106

    def test_text_round_trip(self):
        mesh = build_mesh(square_region(), 30, seed=5)
        again = TriMesh.from_text(mesh.to_text())
        np.testing.assert_array_equal(mesh.vertices, again.vertices)
        np.testing.assert_array_equal(mesh.triangles, again.triangles)


class TestLocate:
    def test_centroids_locate_to_own_triangle(self):
        mesh = build_mesh(square_region(), 50, seed=9)
        found = locate_points(mesh, mesh.centroids())
        np.testing.assert_array_equal(found, np.arange(mesh.n_triangles))

    def test_outside_points_get_minus_one(self):
        mesh = build_mesh(square_region(), 30, seed=4)
        pts = np.array([[2.0, 2.0], [-1.0, 0.5], [0.5, 0.5]])
        found = locate_points(mesh, pts)
        assert found[0] == -1
        assert found[1] == -1
        assert found[2] >= 0

    def test_single_point_variant_agrees(self):
        mesh = build_mesh(square_region(), 30, seed=4)
        cents = mesh.centroids()
        assert locate_point(mesh, cents[3, 0], cents[3, 1]) == 3

    def test_vertices_locate_inside(self):
        mesh = build_mesh(square_region(), 40, seed=6)
        interior = mesh.vertices[
            (mesh.vertices[:, 0] > 0.01)
            & (mesh.vertices[:, 0] < 0.99)
            & (mesh.vertices[:, 1] > 0.01)
            & (mesh.vertices[:, 1] < 0.99)
        ]
        found = locate_points(mesh, interior)
        assert np.all(found >= 0)


class TestNeighborGraph:
    def test_matches_shared_vertex_rule(self):
        """Two triangles neighbor exactly when they share a vertex."""
        mesh = build_mesh(square_region(), 60, seed=8)
        graph = build_neighbor_graph(mesh)
        tri = mesh.triangles
        n = mesh.n_triangles
        expected = [set() for _ in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                if set(tri[i]) & set(tri[j]):
                    expected[i].add(j)
                    expected[j].add(i)
        for i in range(n):
            assert set(graph.adjacency[i]) == expected[i]

    def test_symmetric_and_no_self_loops(self):
        mesh = build_mesh(square_region(), 45, seed=10)
        graph = build_neighbor_graph(mesh)
        for i, nbrs in enumerate(graph.adjacency):
            assert i not in set(nbrs)
            for j in nbrs:
                assert i in set(graph.adjacency[j])

    def test_degrees_match_adjacency(self):
        mesh = build_mesh(square_region(), 45, seed=10)
        graph = build_neighbor_graph(mesh)
        np.testing.assert_array_equal(
            graph.degrees, [len(nbrs) for nbrs in graph.adjacency]
        )

    def test_connected_mesh_single_component(self):
        mesh = build_mesh(square_region(), 45, seed=10)
        n_comp, labels = build_neighbor_graph(mesh).components()
        assert n_comp == 1
        assert np.all(labels == 0)

    def test_components_on_split_graph(self):
        graph = NeighborGraph(adjacency=[[1], [0], [3], [2]])
        n_comp, labels = graph.components()
        assert n_comp == 2
        assert labels[0] == labels[1]
        assert labels[2] == labels[3]
        assert labels[0] != labels[2]

    def test_text_round_trip(self):
        mesh = build_mesh(square_region(), 35, seed=12)
        graph = build_neighbor_graph(mesh)
        again = NeighborGraph.from_text(graph.to_text())
        assert len(again.adjacency) == len(graph.adjacency)
        for a, b in zip(graph.adjacency, again.adjacency):
            np.testing.assert_array_equal(np.sort(a), np.sort(b))


class TestPrecisionMatrix:
    def rand_graph(self, rng, n):
        """Random symmetric graph over n nodes (possibly disconnected)."""
        adjacency = [set() for _ in range(n)]
        n_edges = int(rng.integers(0, max(1, 2 * n)))
        for _ in range(n_edges):
            i, j = rng.integers(0, n, size=2)
            if i != j:
                adjacency[int(i)].add(int(j))
                adjacency[int(j)].add(int(i))
        return NeighborGraph(adjacency=[sorted(s) for s in adjacency])

    def test_structure_on_random_graphs(self):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            n = int(rng.integers(2, 201))
            graph = self.rand_graph(rng, n)
            Q = precision_matrix(graph).toarray()
            np.testing.assert_array_equal(Q, Q.T)
            np.testing.assert_array_equal(Q.sum(axis=1), np.zeros(n))
            np.testing.assert_array_equal(np.diag(Q), graph.degrees)
            x = rng.normal(size=n)
            quad = x @ Q @ x
            pairwise = sum(
                (x[i] - x[j]) ** 2
                for i in range(n)
                for j in graph.adjacency[i]
                if j > i
            )
            np.testing.assert_allclose(quad, pairwise, atol=1e-10)
            assert np.linalg.eigvalsh(Q).min() >= -1e-9

    def test_rank_deficiency_matches_components(self):
        mesh = build_mesh(square_region(), 40, seed=13)
        graph = build_neighbor_graph(mesh)
        Q = precision_matrix(graph).toarray()
        n_comp, _ = graph.components()
        rank = np.linalg.matrix_rank(Q, tol=1e-8)
        assert rank == graph.n - n_comp

    def test_constant_vector_in_null_space(self):
        mesh = build_mesh(square_region(), 40, seed=13)
        Q = precision_matrix(build_neighbor_graph(mesh))
        ones = np.ones(Q.shape[0])
        np.testing.assert_allclose(Q @ ones, 0.0, atol=1e-12)


class TestGeojson:
    def test_feature_collection_shape(self):
        mesh = build_mesh(square_region(), 25, seed=14)
        gj = mesh_to_geojson(mesh)
        assert gj["type"] == "FeatureCollection"
        assert len(gj["features"]) == mesh.n_triangles
        first = gj["features"][0]
        assert first["geometry"]["type"] == "Polygon"
        ring = first["geometry"]["coordinates"][0]
        assert len(ring) == 4
        np.testing.assert_allclose(ring[0], ring[-1])

    def test_properties_attached_per_triangle(self):
        mesh = build_mesh(square_region(), 25, seed=14)
        values = np.arange(mesh.n_triangles, dtype=float)
        gj = mesh_to_geojson(mesh, properties={"score": values})
        got = [f["properties"]["score"] for f in gj["features"]]
        np.testing.assert_allclose(got, values)

    def test_serializable(self):
        mesh = build_mesh(square_region(), 25, seed=14)
        text = json.dumps(mesh_to_geojson(mesh))
        assert json.loads(text)["type"] == "FeatureCollection"
