import math

import numpy as np
import pytest

from hoikit.geometry import (
    GeometryError,
    PointCloud,
    SpatialIndex,
    TriMesh,
    compute_vertex_normals,
    nearest_point,
    penetration_indicator,
    voxelize,
)
from hoikit.primitives import icosphere, unit_cube_mesh


def voxelize_oracle(points, origin, resolution, dims):
    """Per-point loop binning, same half-open convention."""
    occ = np.zeros(dims, dtype=bool)
    for p in np.atleast_2d(points):
        idx = []
        ok = True
        for a in range(3):
            r = (p[a] - origin[a]) / resolution
            i = math.floor(r)
            if i < 0 or i >= dims[a]:
                ok = False
                break
            idx.append(i)
        if ok:
            occ[idx[0], idx[1], idx[2]] = True
    return occ


def scan_nearest_oracle(points, query):
    dists = np.linalg.norm(points - query, axis=1)
    i = int(np.argmin(dists))
    return i, float(dists[i])


class TestVoxelize:
    def test_empty_cloud_all_zero(self):
        grid = voxelize(np.zeros((0, 3)), (0, 0, 0), 1.0, (3, 3, 3))
        assert grid.occupied_count() == 0

    def test_single_point_at_origin(self):
        grid = voxelize([(0.0, 0.0, 0.0)], (0, 0, 0), 1.0, (2, 2, 2))
        assert grid.occupancy[0, 0, 0]
        assert grid.occupied_count() == 1

    def test_random_cube_matches_oracle_bitwise(self):
        rng = np.random.default_rng(7)
        pts = rng.uniform(0, 1, size=(1000, 3))
        grid = voxelize(pts, (0, 0, 0), 0.25, (4, 4, 4))
        oracle = voxelize_oracle(pts, np.zeros(3), 0.25, (4, 4, 4))
        assert np.array_equal(grid.occupancy, oracle)

    @pytest.mark.parametrize("seed", range(100))
    def test_property_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        origin = rng.uniform(-2, 2, size=3)
        res = float(rng.uniform(0.05, 0.7))
        dims = tuple(int(d) for d in rng.integers(1, 6, size=3))
        # spread points so some fall outside the bounds
        pts = rng.uniform(-3, 4, size=(rng.integers(0, 200), 3))
        grid = voxelize(pts, origin, res, dims)
        assert np.array_equal(grid.occupancy, voxelize_oracle(pts, origin, res, dims))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(0, 1, size=(300, 3))
        g1 = voxelize(pts, (0, 0, 0), 0.2, (5, 5, 5))
        g2 = voxelize(pts[rng.permutation(len(pts))], (0, 0, 0), 0.2, (5, 5, 5))
        assert np.array_equal(g1.occupancy, g2.occupancy)

    def test_upper_boundary_excluded(self):
        grid = voxelize([(2.0, 0.0, 0.0)], (0, 0, 0), 1.0, (2, 2, 2))
        assert grid.occupied_count() == 0

    def test_rejects_nonfinite(self):
        with pytest.raises(GeometryError):
            voxelize([(np.nan, 0, 0)], (0, 0, 0), 1.0, (2, 2, 2))

    def test_rejects_bad_resolution(self):
        with pytest.raises(GeometryError):
            voxelize([(0, 0, 0)], (0, 0, 0), 0.0, (2, 2, 2))


class TestNearestPoint:
    def test_self_match(self):
        pts = np.array([(0.5, 0.5, 0.5), (1, 2, 3), (-1, 0, 2)], dtype=float)
        idx = SpatialIndex(pts)
        i, d = nearest_point((1, 2, 3), idx)
        assert (i, d) == (1, 0.0)

    def test_direct_comparison(self):
        idx = SpatialIndex(np.array([(1, 0, 0), (0, 2, 0)], dtype=float))
        i, d = nearest_point((0, 0, 0), idx)
        assert i == 0
        assert d == 1.0

    def test_ties_break_to_lowest_index(self):
        # equidistant points either side of the query
        pts = np.array([(1, 0, 0), (-1, 0, 0), (1.0, 0, 0)], dtype=float)
        idx = SpatialIndex(pts)
        i, d = nearest_point((0, 0, 0), idx)
        assert i == 0 and d == 1.0

    def test_random_queries_match_scan(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(500, 3))
        idx = SpatialIndex(pts)
        for q in rng.normal(size=(500, 3)):
            i, d = idx.nearest(q)
            oi, od = scan_nearest_oracle(pts, q)
            assert i == oi
            assert d == od

    def test_nearest_many_matches_scan(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(200, 3))
        qs = rng.normal(size=(300, 3))
        idx = SpatialIndex(pts)
        ii, dd = idx.nearest_many(qs)
        for k, q in enumerate(qs):
            oi, od = scan_nearest_oracle(pts, q)
            assert ii[k] == oi
            assert dd[k] == od

    def test_empty_index_rejected(self):
        with pytest.raises(GeometryError):
            SpatialIndex(np.zeros((0, 3)))

    def test_single_point_index(self):
        idx = SpatialIndex(np.array([(1.0, 1.0, 1.0)]))
        i, d = idx.nearest((1, 1, 0))
        assert i == 0 and d == 1.0


class TestPenetrationIndicator:
    def test_outside_by_construction(self):
        n = np.array([0.0, 0.0, 1.0])
        sp = np.array([0.3, -0.2, 1.0])
        assert not penetration_indicator(sp + 0.1 * n, sp, n)

    def test_inside_by_construction(self):
        n = np.array([0.0, 0.0, 1.0])
        sp = np.array([0.3, -0.2, 1.0])
        assert penetration_indicator(sp - 0.1 * n, sp, n)

    def test_boundary_is_not_penetration(self):
        n = np.array([0.0, 1.0, 0.0])
        sp = np.array([1.0, 2.0, 3.0])
        assert not penetration_indicator(sp + np.array([0.5, 0.0, 0.0]), sp, n)
        assert not penetration_indicator(sp, sp, n)

    def test_non_unit_normal_rejected(self):
        with pytest.raises(GeometryError):
            penetration_indicator((0, 0, 1), (0, 0, 0), (0, 0, 2))

    @pytest.mark.parametrize("seed", range(20))
    def test_signed_offsets_along_sphere_normals(self, seed):
        sphere = icosphere(radius=0.7, subdivisions=1)
        rng = np.random.default_rng(seed)
        k = int(rng.integers(0, len(sphere.vertices)))
        p = sphere.vertices[k]
        n = sphere.vertex_normals[k]
        for t in rng.uniform(0.001, 0.5, size=8):
            assert not penetration_indicator(p + t * n, p, n)
            assert penetration_indicator(p - t * n, p, n)


def vertex_normal_oracle(mesh):
    """Analytic area-weighted average, one face at a time."""
    acc = np.zeros_like(mesh.vertices)
    for f in mesh.faces:
        a = mesh.vertices[f[1]] - mesh.vertices[f[0]]
        b = mesh.vertices[f[2]] - mesh.vertices[f[0]]
        cross = np.cross(a, b)  # length 2*area, outward
        for v in f:
            acc[v] = acc[v] + cross
    return acc / np.linalg.norm(acc, axis=1)[:, None]


class TestVertexNormals:
    def test_single_planar_triangle(self):
        mesh = TriMesh(np.array([(0, 0, 0), (1, 0, 0), (0, 1, 0)], dtype=float),
                       np.array([[0, 1, 2]]))
        out = compute_vertex_normals(mesh)
        assert np.allclose(out.vertex_normals, [[0, 0, 1]] * 3)

    def test_cube_corners(self):
        cube = unit_cube_mesh(with_normals=False)
        out = compute_vertex_normals(cube)
        assert np.allclose(out.vertex_normals, vertex_normal_oracle(cube))
        expected = (cube.vertices - 0.5)
        expected /= np.linalg.norm(expected, axis=1)[:, None]
        assert np.allclose(out.vertex_normals, expected, atol=1e-12)

    def test_icosphere_normals_near_radial(self):
        sphere = icosphere(radius=1.0, subdivisions=2, with_normals=False)
        out = compute_vertex_normals(sphere)
        radial = sphere.vertices / np.linalg.norm(sphere.vertices, axis=1)[:, None]
        cosang = np.sum(out.vertex_normals * radial, axis=1)
        assert (cosang >= math.cos(math.radians(5.0))).all()

    def test_isolated_vertex_flagged(self):
        verts = np.array([(0, 0, 0), (1, 0, 0), (0, 1, 0), (5, 5, 5)], dtype=float)
        mesh = TriMesh(verts, np.array([[0, 1, 2]]))
        with pytest.raises(GeometryError, match="3"):
            compute_vertex_normals(mesh)

    def test_degenerate_face_rejected(self):
        verts = np.array([(0, 0, 0), (1, 0, 0), (2, 0, 0)], dtype=float)
        with pytest.raises(GeometryError):
            TriMesh(verts, np.array([[0, 1, 2]]))


class TestCloudAndMeshValidation:
    def test_normals_must_be_unit(self):
        with pytest.raises(GeometryError):
            PointCloud(np.zeros((1, 3)), np.array([[0.0, 0.0, 0.5]]))

    def test_face_index_out_of_range(self):
        with pytest.raises(GeometryError):
            TriMesh(np.zeros((2, 3)), np.array([[0, 1, 2]]))
