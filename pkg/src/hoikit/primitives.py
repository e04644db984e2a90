"""Procedural mesh and point-cloud primitives for scenes and fixtures."""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud, TriMesh, compute_vertex_normals

# Unit cube triangulated so every corner has equal incident area on each of
# its three faces (face diagonals join even-parity corners); corner normals
# then normalize to (+-1, +-1, +-1)/sqrt(3).
_CUBE_VERTS = np.array(
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0],
     [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]],
    dtype=np.float64,
)
_CUBE_FACES = np.array(
    [[0, 3, 1], [0, 2, 3],          # bottom (-z)
     [4, 5, 6], [5, 7, 6],          # top (+z)
     [0, 1, 5], [0, 5, 4],          # front (-y)
     [2, 6, 3], [3, 6, 7],          # back (+y)
     [0, 6, 2], [0, 4, 6],          # left (-x)
     [1, 3, 5], [3, 7, 5]],         # right (+x)
    dtype=np.int64,
)


def unit_cube_mesh(with_normals: bool = True) -> TriMesh:
    mesh = TriMesh(_CUBE_VERTS.copy(), _CUBE_FACES.copy())
    return compute_vertex_normals(mesh) if with_normals else mesh


def box_mesh(size, center=(0.0, 0.0, 0.0), subdivisions: int = 1,
             with_normals: bool = True) -> TriMesh:
    """Axis-aligned box with each face split into an n x n quad grid."""
    sx, sy, sz = (float(s) for s in size)
    cx, cy, cz = (float(c) for c in center)
    n = int(subdivisions)
    if n < 1:
        raise ValueError("subdivisions must be >= 1")

    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    vert_ids: dict[tuple[float, float, float], int] = {}

    def vid(p):
        key = (round(p[0], 12), round(p[1], 12), round(p[2], 12))
        if key not in vert_ids:
            vert_ids[key] = len(verts)
            verts.append(p)
        return vert_ids[key]

    # each face: origin corner o, edge vectors u, v chosen so u x v is outward
    half = np.array([sx / 2, sy / 2, sz / 2])
    lo = np.array([cx, cy, cz]) - half
    hi = np.array([cx, cy, cz]) + half
    ex = np.array([sx, 0, 0])
    ey = np.array([0, sy, 0])
    ez = np.array([0, 0, sz])
    face_defs = [
        (lo, ey, ex),                      # bottom  (u x v = -z)
        (np.array([lo[0], lo[1], hi[2]]), ex, ey),   # top (+z)
        (lo, ex, ez),                      # front  (-y)
        (np.array([lo[0], hi[1], lo[2]]), ez, ex),   # back (+y)
        (lo, ez, ey),                      # left   (-x)
        (np.array([hi[0], lo[1], lo[2]]), ey, ez),   # right (+x)
    ]
    for o, u, v in face_defs:
        for i in range(n):
            for j in range(n):
                p00 = vid(tuple(o + u * (i / n) + v * (j / n)))
                p10 = vid(tuple(o + u * ((i + 1) / n) + v * (j / n)))
                p01 = vid(tuple(o + u * (i / n) + v * ((j + 1) / n)))
                p11 = vid(tuple(o + u * ((i + 1) / n) + v * ((j + 1) / n)))
                if (i + j) % 2 == 0:
                    faces.append((p00, p10, p11))
                    faces.append((p00, p11, p01))
                else:
                    faces.append((p00, p10, p01))
                    faces.append((p10, p11, p01))
    mesh = TriMesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64))
    return compute_vertex_normals(mesh) if with_normals else mesh


def icosphere(radius: float = 1.0, center=(0.0, 0.0, 0.0), subdivisions: int = 2,
              with_normals: bool = True) -> TriMesh:
    """Icosahedron subdivided and projected onto a sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
         [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
         [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(int(subdivisions)):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.asarray(verts[i]) + np.asarray(verts[j])
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(tuple(m))
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts, dtype=np.float64) * float(radius) + np.asarray(center, dtype=np.float64)
    mesh = TriMesh(v, np.asarray(faces, dtype=np.int64))
    return compute_vertex_normals(mesh) if with_normals else mesh


def merge_meshes(meshes) -> TriMesh:
    """Concatenate meshes into one (face indices re-offset, no vertex welding)."""
    meshes = list(meshes)
    if not meshes:
        raise ValueError("need at least one mesh to merge")
    meshes = [m if m.vertex_normals is not None else compute_vertex_normals(m)
              for m in meshes]
    verts, faces, normals, offset = [], [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        normals.append(m.vertex_normals)
        offset += len(m.vertices)
    return TriMesh(np.concatenate(verts), np.concatenate(faces),
                   np.concatenate(normals))


def plane_cloud(origin, u_vec, v_vec, nu: int, nv: int, normal) -> PointCloud:
    """Grid of points on a planar patch, with a constant outward normal."""
    o = np.asarray(origin, dtype=np.float64)
    u = np.asarray(u_vec, dtype=np.float64)
    v = np.asarray(v_vec, dtype=np.float64)
    ii, jj = np.meshgrid(np.linspace(0, 1, nu), np.linspace(0, 1, nv), indexing="ij")
    pts = o[None, :] + ii.reshape(-1, 1) * u[None, :] + jj.reshape(-1, 1) * v[None, :]
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    return PointCloud(pts, np.tile(n, (pts.shape[0], 1)))
