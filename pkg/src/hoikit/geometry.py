"""Geometric kernels: point clouds, triangle meshes, voxel occupancy,
nearest-neighbor queries and the outward-normal penetration test.

All coordinates are meters, float64. Functions are pure; the spatial index
is build-once, read-many.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

UNIT_NORMAL_TOL = 1e-6
ROTATION_TOL = 1e-6
DEGENERATE_AREA = 1e-12


class GeometryError(ValueError):
    pass


def as_points(points) -> np.ndarray:
    """Coerce to an (N, 3) float64 array, rejecting non-finite inputs."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.shape == (3,):
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise GeometryError(f"expected (N, 3) points, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise GeometryError("points contain non-finite coordinates")
    return arr


def as_point(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise GeometryError(f"expected a 3-vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise GeometryError("point has non-finite coordinates")
    return arr


def _check_unit(normals: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(normals, axis=-1)
    bad = np.abs(norms - 1.0) > UNIT_NORMAL_TOL
    if bad.any():
        idx = int(np.argmax(bad))
        raise GeometryError(f"{what}[{idx}] is not unit length (|n|={norms.flat[idx]:.9f})")


@dataclass(frozen=True)
class PointCloud:
    """Points in world coordinates, optionally with outward unit normals."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = as_points(self.points)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = as_points(self.normals)
            if nrm.shape != pts.shape:
                raise GeometryError("normals shape does not match points")
            _check_unit(nrm, "normals")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "PointCloud":
        pts = self.points @ np.asarray(rotation, dtype=np.float64).T + np.asarray(
            translation, dtype=np.float64
        )
        nrm = None
        if self.normals is not None:
            nrm = self.normals @ np.asarray(rotation, dtype=np.float64).T
        return PointCloud(pts, nrm)


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh; vertex normals are area-weighted when computed here."""

    vertices: np.ndarray
    faces: np.ndarray
    vertex_normals: np.ndarray | None = None

    def __post_init__(self):
        verts = as_points(self.vertices)
        faces = np.asarray(self.faces, dtype=np.int64)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise GeometryError(f"expected (M, 3) faces, got shape {faces.shape}")
        if faces.size and (faces.min() < 0 or faces.max() >= len(verts)):
            raise GeometryError("face index out of range")
        if faces.shape[0] == 0:
            raise GeometryError("mesh has no faces")
        a = verts[faces[:, 1]] - verts[faces[:, 0]]
        b = verts[faces[:, 2]] - verts[faces[:, 0]]
        areas = 0.5 * np.linalg.norm(np.cross(a, b), axis=1)
        if (areas <= DEGENERATE_AREA).any():
            bad = int(np.argmax(areas <= DEGENERATE_AREA))
            raise GeometryError(f"degenerate (zero-area) face {bad}")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)
        if self.vertex_normals is not None:
            nrm = as_points(self.vertex_normals)
            if nrm.shape != verts.shape:
                raise GeometryError("vertex_normals shape does not match vertices")
            _check_unit(nrm, "vertex_normals")
            object.__setattr__(self, "vertex_normals", nrm)

    def surface_cloud(self) -> PointCloud:
        """Vertices + vertex normals as a point cloud (for collision checks)."""
        mesh = self if self.vertex_normals is not None else compute_vertex_normals(self)
        return PointCloud(mesh.vertices, mesh.vertex_normals)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "TriMesh":
        rot = np.asarray(rotation, dtype=np.float64)
        verts = self.vertices @ rot.T + np.asarray(translation, dtype=np.float64)
        nrm = self.vertex_normals @ rot.T if self.vertex_normals is not None else None
        return TriMesh(verts, self.faces, nrm)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (3x3, orthonormal within 1e-6) plus translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = as_point(self.translation)
        if rot.shape != (3, 3):
            raise GeometryError(f"rotation must be 3x3, got {rot.shape}")
        if not np.isfinite(rot).all():
            raise GeometryError("rotation has non-finite entries")
        err = np.abs(rot @ rot.T - np.eye(3)).max()
        if err > ROTATION_TOL:
            raise GeometryError(f"rotation not orthonormal (max deviation {err:.2e})")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class VoxelGrid:
    """Occupancy grid over half-open cells [origin + i*res, origin + (i+1)*res)."""

    origin: np.ndarray
    resolution: float
    dims: tuple
    occupancy: np.ndarray

    def __post_init__(self):
        origin = as_point(self.origin)
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise GeometryError(f"dims must be three positive integers, got {self.dims}")
        if not (self.resolution > 0):
            raise GeometryError("resolution must be positive")
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.shape != dims:
            raise GeometryError(f"occupancy shape {occ.shape} != dims {dims}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "occupancy", occ)

    def occupied_count(self) -> int:
        return int(self.occupancy.sum())


def voxelize(points, origin, resolution: float, dims) -> VoxelGrid:
    """Bin points into an occupancy grid; points outside the bounds are ignored.

    A voxel is occupied iff at least one point falls inside its half-open cell.
    """
    if isinstance(points, PointCloud):
        pts = points.points
    else:
        pts = as_points(points) if np.size(points) else np.zeros((0, 3))
    origin = as_point(origin)
    if not (resolution > 0):
        raise GeometryError("resolution must be positive")
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise GeometryError(f"dims must be three positive integers, got {dims}")
    occ = np.zeros(dims, dtype=bool)
    if len(pts):
        rel = (pts - origin) / resolution
        idx = np.floor(rel).astype(np.int64)
        inside = (idx >= 0).all(axis=1) & (idx < np.asarray(dims)).all(axis=1)
        idx = idx[inside]
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid(origin, resolution, dims, occ)


class SpatialIndex:
    """Nearest-neighbor accelerator whose answers match an exhaustive scan,
    including lowest-index tie-breaking."""

    def __init__(self, cloud):
        pts = cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)
        if len(pts) == 0:
            raise GeometryError("cannot index an empty point cloud")
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self) -> int:
        return len(self.points)

    def _refine(self, query: np.ndarray, radius: float):
        cand = sorted(self._tree.query_ball_point(query, radius))
        d = np.linalg.norm(self.points[cand] - query, axis=1)
        k = int(np.argmin(d))  # first occurrence = lowest original index
        return cand[k], float(d[k])

    def nearest(self, query) -> tuple:
        """Index and Euclidean distance of the nearest point; ties go to the
        lowest index."""
        q = as_point(query)
        k = min(2, len(self.points))
        dists, idxs = self._tree.query(q, k=k)
        dists = np.atleast_1d(dists)
        idxs = np.atleast_1d(idxs)
        gap = dists[-1] - dists[0] if k == 2 else np.inf
        if gap <= dists[0] * 1e-9 + 1e-12:
            return self._refine(q, dists[0] * (1.0 + 1e-9) + 1e-12)
        # unique winner: recompute the distance with plain numpy so the value
        # is bit-identical to a full scan (axis=1 path, not the 1-D BLAS norm)
        i = int(idxs[0])
        return i, float(np.linalg.norm(self.points[i : i + 1] - q, axis=1)[0])

    def nearest_many(self, queries) -> tuple:
        """Vectorized nearest query; returns (indices, distances)."""
        qs = as_points(queries)
        k = min(2, len(self.points))
        dists, idxs = self._tree.query(qs, k=k)
        if k == 1:
            dists = dists[:, None]
            idxs = idxs[:, None]
        out_idx = idxs[:, 0].astype(np.int64)
        out_d = np.linalg.norm(self.points[out_idx] - qs, axis=1)
        if k == 2:
            ambiguous = (dists[:, 1] - dists[:, 0]) <= dists[:, 0] * 1e-9 + 1e-12
            for row in np.nonzero(ambiguous)[0]:
                i, d = self._refine(qs[row], dists[row, 0] * (1.0 + 1e-9) + 1e-12)
                out_idx[row] = i
                out_d[row] = d
        return out_idx, out_d


def nearest_point(query, index: SpatialIndex) -> tuple:
    """Nearest point in the indexed cloud: (point index, distance in meters)."""
    return index.nearest(query)


def penetration_indicator(p, surface_point, surface_normal) -> bool:
    """True iff p lies strictly behind the surface point's outward normal.

    Boundary contact (zero dot product) is not penetration.
    """
    n = as_point(surface_normal)
    if abs(np.linalg.norm(n) - 1.0) > UNIT_NORMAL_TOL:
        raise GeometryError("surface_normal must be unit length")
    disp = as_point(p) - as_point(surface_point)
    return bool(-float(np.dot(n, disp)) > 0.0)


def compute_vertex_normals(mesh: TriMesh) -> TriMesh:
    """Area-weighted average of incident face normals, normalized per vertex.

    A vertex incident to no face has no defined normal and is reported as an
    error (zero accumulated area).
    """
    verts, faces = mesh.vertices, mesh.faces
    a = verts[faces[:, 1]] - verts[faces[:, 0]]
    b = verts[faces[:, 2]] - verts[faces[:, 0]]
    # cross product = 2 * area * unit normal, so summing is area weighting
    face_cross = np.cross(a, b)
    acc = np.zeros_like(verts)
    for col in range(3):
        np.add.at(acc, faces[:, col], face_cross)
    norms = np.linalg.norm(acc, axis=1)
    isolated = np.nonzero(norms <= DEGENERATE_AREA)[0]
    if isolated.size:
        raise GeometryError(
            f"zero-area normal at vertices {isolated.tolist()}: not incident to any face"
        )
    return TriMesh(verts, faces, acc / norms[:, None])
