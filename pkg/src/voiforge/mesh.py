"""Mesh-domain VOI perturbations.

Marching-cubes extraction, Laplacian smoothing, vertex normals, Perlin-noise
boundary randomization, rotating-calipers ellipsoid approximation, and parity
ray-casting voxelization back to a mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from skimage import measure

from .errors import DataError
from .grid import Mask
from .morph import _isotropic_spacing


@dataclass
class TriMesh:
    """Triangle surface mesh with vertices in physical mm."""

    vertices: np.ndarray  # (n, 3) float64
    triangles: np.ndarray  # (m, 3) int64
    normals: np.ndarray | None = None  # (n, 3) unit vectors, optional until computed

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise DataError("triangle index out of range")

    def copy(self) -> "TriMesh":
        return TriMesh(
            vertices=self.vertices.copy(),
            triangles=self.triangles.copy(),
            normals=None if self.normals is None else self.normals.copy(),
        )


@dataclass
class Ellipsoid:
    """Oriented ellipsoid: center, orthonormal axis directions, semi-lengths (a >= b, c)."""

    center: np.ndarray  # (3,)
    axes: np.ndarray  # (3, 3), rows are unit direction vectors
    semi_lengths: tuple[float, float, float]

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.axes = np.asarray(self.axes, dtype=np.float64).reshape(3, 3)
        gram = self.axes @ self.axes.T
        if not np.allclose(gram, np.eye(3), atol=1e-6):
            raise DataError("ellipsoid axes must be orthonormal")
        a, b, c = self.semi_lengths
        if min(a, b, c) <= 0:
            raise DataError("semi-lengths must be positive")
        if a + 1e-9 < max(b, c):
            raise DataError("first semi-length must be the major one")


@dataclass
class RandomizeParams:
    """Perlin-noise surface randomization controls."""

    max_distance_mm: float
    seed: int = 0
    noise_frequency: float = 4.0

    def __post_init__(self):
        if self.max_distance_mm < 0:
            raise DataError("max_distance must be non-negative")


# ---------------------------------------------------------------------------
# Marching cubes and mesh utilities
# ---------------------------------------------------------------------------


def signed_volume(mesh: TriMesh) -> float:
    v = mesh.vertices
    t = mesh.triangles
    v0, v1, v2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return float(np.einsum("ij,ij->i", v0, np.cross(v1, v2)).sum() / 6.0)


def surface_area(mesh: TriMesh) -> float:
    v = mesh.vertices
    t = mesh.triangles
    cross = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    return float(np.linalg.norm(cross, axis=1).sum() / 2.0)


def marching_cubes(mask: Mask) -> TriMesh:
    """Extract the closed isolevel-0.5 surface of a binary mask, in physical mm.

    The volume is zero-padded so the surface always closes; triangle winding is
    normalized so signed volume is positive (outward normals).
    """
    if mask.voxel_count == 0:
        raise DataError("cannot mesh an empty mask")
    s = _isotropic_spacing(mask.spacing)
    padded = np.pad(mask.data.astype(np.float64), 1)
    verts, faces, _, _ = measure.marching_cubes(padded, level=0.5, spacing=(s, s, s))
    verts = verts - s + np.asarray(mask.origin)
    mesh = TriMesh(vertices=verts, triangles=faces.astype(np.int64))
    if signed_volume(mesh) < 0:
        mesh.triangles = mesh.triangles[:, [0, 2, 1]]
    return mesh


def is_closed(mesh: TriMesh) -> bool:
    """Every undirected edge is shared by exactly two triangles.

    Holds for meshes of masks without corner- or edge-touching voxel pairs;
    such pinch configurations have a genuinely non-manifold isosurface (see
    is_watertight for the guarantee that always holds).
    """
    t = mesh.triangles
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool((counts == 2).all())


def is_watertight(mesh: TriMesh) -> bool:
    """Every undirected edge is shared by a positive even number of triangles.

    This is the property parity ray casting needs; it also holds at the pinch
    points a binary field can produce, where is_closed does not.
    """
    t = mesh.triangles
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool((counts % 2 == 0).all())


def _vertex_adjacency(mesh: TriMesh):
    t = mesh.triangles
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    return edges


def smooth_mesh(mesh: TriMesh, iterations: int = 10, factor: float = 0.5) -> TriMesh:
    """Laplacian smoothing: move each vertex ``factor`` toward its neighbour centroid."""
    if iterations == 0:
        return mesh.copy()
    edges = _vertex_adjacency(mesh)
    n = len(mesh.vertices)
    counts = np.zeros(n)
    np.add.at(counts, edges[:, 0], 1)
    np.add.at(counts, edges[:, 1], 1)
    counts = np.maximum(counts, 1)[:, None]
    v = mesh.vertices.copy()
    for _ in range(iterations):
        acc = np.zeros_like(v)
        np.add.at(acc, edges[:, 0], v[edges[:, 1]])
        np.add.at(acc, edges[:, 1], v[edges[:, 0]])
        v = v + factor * (acc / counts - v)
    return TriMesh(vertices=v, triangles=mesh.triangles.copy())


def vertex_normals(mesh: TriMesh) -> TriMesh:
    """Attach outward per-vertex normals (area-weighted average of incident triangles)."""
    v = mesh.vertices
    t = mesh.triangles
    face_n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]) / 2.0
    acc = np.zeros_like(v)
    for col in range(3):
        np.add.at(acc, t[:, col], face_n)
    norms = np.linalg.norm(acc, axis=1)
    if (norms < 1e-12).any():
        raise DataError("vertex with no non-degenerate incident triangle")
    out = mesh.copy()
    out.normals = acc / norms[:, None]
    return out


# ---------------------------------------------------------------------------
# Perlin noise
# ---------------------------------------------------------------------------

_GRADS = np.array(
    [
        [1, 1, 0], [-1, 1, 0], [1, -1, 0], [-1, -1, 0],
        [1, 0, 1], [-1, 0, 1], [1, 0, -1], [-1, 0, -1],
        [0, 1, 1], [0, -1, 1], [0, 1, -1], [0, -1, -1],
        [1, 1, 0], [-1, 1, 0], [0, -1, 1], [0, -1, -1],
    ],
    dtype=np.float64,
)


class PerlinNoise3D:
    """Classic 3D gradient noise with a seed-shuffled permutation table."""

    def __init__(self, seed: int):
        rng = np.random.default_rng(seed)
        table = rng.permutation(256)
        self._perm = np.concatenate([table, table]).astype(np.int64)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Noise values in [-1, 1] for an (n, 3) array of sample points."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cell = np.floor(p).astype(np.int64)
        frac = p - cell
        cell &= 255

        fade = frac**3 * (frac * (frac * 6 - 15) + 10)
        perm = self._perm

        def corner_grad(ox, oy, oz):
            h = perm[perm[perm[cell[:, 0] + ox] + cell[:, 1] + oy] + cell[:, 2] + oz] & 15
            g = _GRADS[h]
            d = frac - np.array([ox, oy, oz], dtype=np.float64)
            return np.einsum("ij,ij->i", g, d)

        def lerp(a, b, t):
            return a + t * (b - a)

        u, v, w = fade[:, 0], fade[:, 1], fade[:, 2]
        x00 = lerp(corner_grad(0, 0, 0), corner_grad(1, 0, 0), u)
        x10 = lerp(corner_grad(0, 1, 0), corner_grad(1, 1, 0), u)
        x01 = lerp(corner_grad(0, 0, 1), corner_grad(1, 0, 1), u)
        x11 = lerp(corner_grad(0, 1, 1), corner_grad(1, 1, 1), u)
        y0 = lerp(x00, x10, v)
        y1 = lerp(x01, x11, v)
        return np.clip(lerp(y0, y1, w), -1.0, 1.0)


def perlin_randomize(mesh: TriMesh, params: RandomizeParams) -> TriMesh:
    """Displace each vertex along its smoothed-copy normal by noise * max_distance.

    Noise is evaluated at bounding-box-normalized coordinates so the
    perturbation pattern is independent of lesion scale; displacement magnitude
    never exceeds ``max_distance_mm``, and output is deterministic per seed.
    """
    smoothed = vertex_normals(smooth_mesh(mesh, iterations=10, factor=0.5))
    bbox_min = mesh.vertices.min(axis=0)
    diagonal = float(np.linalg.norm(mesh.vertices.max(axis=0) - bbox_min))
    if diagonal == 0.0:
        raise DataError("degenerate mesh: zero bounding box")
    unit = (mesh.vertices - bbox_min) / diagonal
    noise = PerlinNoise3D(params.seed)(unit * params.noise_frequency)
    displaced = mesh.vertices + (noise * params.max_distance_mm)[:, None] * smoothed.normals
    return TriMesh(vertices=displaced, triangles=mesh.triangles.copy())


# ---------------------------------------------------------------------------
# Ellipsoid fitting
# ---------------------------------------------------------------------------

_FARTHEST_SUBSAMPLE = 20000


def _farthest_pair(points: np.ndarray) -> tuple[int, int]:
    if len(points) > _FARTHEST_SUBSAMPLE:
        rng = np.random.default_rng(0)
        keep = rng.choice(len(points), _FARTHEST_SUBSAMPLE, replace=False)
        keep.sort()
        points = points[keep]
        remap = keep
    else:
        remap = np.arange(len(points))
    try:
        hull = ConvexHull(points)
        cand = hull.vertices
    except QhullError:
        cand = np.arange(len(points))
    sub = points[cand]
    best = (0.0, 0, 0)
    for i in range(len(sub) - 1):
        d2 = np.einsum("ij,ij->i", sub[i + 1 :] - sub[i], sub[i + 1 :] - sub[i])
        j = int(np.argmax(d2))
        if d2[j] > best[0]:
            best = (float(d2[j]), i, i + 1 + j)
    return int(remap[cand[best[1]]]), int(remap[cand[best[2]]])


def fit_ellipsoid(mesh: TriMesh) -> Ellipsoid:
    """Approximate the mesh by an ellipsoid, the way a grader would sketch one.

    The major axis joins the farthest vertex pair. The perpendicular frame is
    rotated in 1-degree steps about the major axis; at each angle the two
    semi-lengths are set to the maximum vertex projections, and the rotation
    minimizing the sum of squared radial differences wins.
    """
    pts = mesh.vertices
    if len(pts) < 3:
        raise DataError("degenerate vertex set: need at least 3 vertices")
    centered = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-9) < 2:
        raise DataError("degenerate vertex set: collinear")

    i, j = _farthest_pair(pts)
    p, q = pts[i], pts[j]
    center = (p + q) / 2.0
    a = float(np.linalg.norm(q - p)) / 2.0
    e1 = (q - p) / (2.0 * a)

    # stable perpendicular seed: cross with the least-aligned coordinate axis
    probe = np.zeros(3)
    probe[int(np.argmin(np.abs(e1)))] = 1.0
    u0 = np.cross(e1, probe)
    u0 /= np.linalg.norm(u0)
    w0 = np.cross(e1, u0)

    d = pts - center
    radial = np.linalg.norm(d, axis=1)
    safe_radial = np.maximum(radial, 1e-12)
    dirs = d / safe_radial[:, None]
    pe = dirs @ e1
    pu0 = d @ u0
    pw0 = d @ w0
    du0 = dirs @ u0
    dw0 = dirs @ w0

    best = None
    for theta_deg in range(180):
        th = np.deg2rad(theta_deg)
        cos_t, sin_t = np.cos(th), np.sin(th)
        pu = cos_t * pu0 + sin_t * pw0
        pw = -sin_t * pu0 + cos_t * pw0
        b = min(float(np.abs(pu).max()), a)
        c = min(float(np.abs(pw).max()), a)
        if b <= 0 or c <= 0:
            continue
        du = cos_t * du0 + sin_t * dw0
        dw = -sin_t * du0 + cos_t * dw0
        inv_r = np.sqrt((pe / a) ** 2 + (du / b) ** 2 + (dw / c) ** 2)
        r_ell = 1.0 / np.maximum(inv_r, 1e-12)
        ssd = float(((radial - r_ell) ** 2).sum())
        if best is None or ssd < best[0]:
            best = (ssd, cos_t, sin_t, b, c)
    if best is None:
        raise DataError("degenerate vertex set: flat")
    _, cos_t, sin_t, b, c = best
    u = cos_t * u0 + sin_t * w0
    w = -sin_t * u0 + cos_t * w0
    return Ellipsoid(center=center, axes=np.stack([e1, u, w]), semi_lengths=(a, b, c))


def ellipsoid_mesh(ellipsoid: Ellipsoid, n_theta: int = 32, n_phi: int = 64) -> TriMesh:
    """Tessellate an ellipsoid surface (UV sphere mapped through the axes)."""
    theta = np.linspace(0.0, np.pi, n_theta)
    phi = np.linspace(0.0, 2 * np.pi, n_phi, endpoint=False)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    unit = np.stack(
        [np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], axis=-1
    )
    a, b, c = ellipsoid.semi_lengths
    local = unit * np.array([a, b, c])
    verts = local.reshape(-1, 3) @ ellipsoid.axes + ellipsoid.center
    tris = []
    for it in range(n_theta - 1):
        for ip in range(n_phi):
            p0 = it * n_phi + ip
            p1 = it * n_phi + (ip + 1) % n_phi
            p2 = (it + 1) * n_phi + ip
            p3 = (it + 1) * n_phi + (ip + 1) % n_phi
            tris.append([p0, p2, p1])
            tris.append([p1, p2, p3])
    mesh = TriMesh(vertices=verts, triangles=np.array(tris, dtype=np.int64))
    if signed_volume(mesh) < 0:
        mesh.triangles = mesh.triangles[:, [0, 2, 1]]
    return mesh


# ---------------------------------------------------------------------------
# Voxelization
# ---------------------------------------------------------------------------


def voxelize(surface, reference) -> Mask:
    """Rasterize a closed surface: voxel centers strictly inside become foreground.

    Meshes use parity ray casting along the x axis; ellipsoids use the analytic
    quadric test. Odd crossing parity (open or self-intersecting mesh) raises.
    """
    if isinstance(surface, Ellipsoid):
        return _voxelize_ellipsoid(surface, reference)
    return _voxelize_mesh(surface, reference)


def _grid_axes(reference):
    return [
        reference.origin[k] + np.arange(reference.dims[k]) * reference.spacing[k]
        for k in range(3)
    ]


def _voxelize_ellipsoid(ell: Ellipsoid, reference) -> Mask:
    xs, ys, zs = _grid_axes(reference)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1) - ell.center
    a, b, c = ell.semi_lengths
    q = (
        (pts @ ell.axes[0] / a) ** 2
        + (pts @ ell.axes[1] / b) ** 2
        + (pts @ ell.axes[2] / c) ** 2
    )
    return Mask(data=(q <= 1.0).astype(np.uint8), spacing=reference.spacing, origin=reference.origin)


def _voxelize_mesh(mesh: TriMesh, reference) -> Mask:
    nx, ny, nz = reference.dims
    sx, sy, sz = reference.spacing
    ox, oy, oz = reference.origin
    # Jitter the ray lattice off exact vertex/edge coordinates. The two offsets
    # have an irrational ratio so a mesh edge with rational slope in the (y, z)
    # projection (ubiquitous in marching-cubes output) can never contain a ray.
    eps_y = 1e-4 * sy
    eps_z = 1e-4 * np.sqrt(2.0) * sz

    v = mesh.vertices
    t = mesh.triangles
    crossings: dict[tuple[int, int], list[float]] = {}

    for tri in t:
        a, b, c = v[tri[0]], v[tri[1]], v[tri[2]]
        y_lo = min(a[1], b[1], c[1])
        y_hi = max(a[1], b[1], c[1])
        z_lo = min(a[2], b[2], c[2])
        z_hi = max(a[2], b[2], c[2])
        jy0 = max(0, int(np.ceil((y_lo - oy - eps_y) / sy)))
        jy1 = min(ny - 1, int(np.floor((y_hi - oy - eps_y) / sy)))
        jz0 = max(0, int(np.ceil((z_lo - oz - eps_z) / sz)))
        jz1 = min(nz - 1, int(np.floor((z_hi - oz - eps_z) / sz)))
        if jy0 > jy1 or jz0 > jz1:
            continue
        # 2D barycentric solve in the (y, z) plane
        d1 = (b[1] - a[1], b[2] - a[2])
        d2 = (c[1] - a[1], c[2] - a[2])
        det = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(det) < 1e-15:
            continue  # triangle parallel to the ray direction
        for jy in range(jy0, jy1 + 1):
            py = oy + jy * sy + eps_y - a[1]
            for jz in range(jz0, jz1 + 1):
                pz = oz + jz * sz + eps_z - a[2]
                s = (py * d2[1] - pz * d2[0]) / det
                u = (pz * d1[0] - py * d1[1]) / det
                if s < 0.0 or u < 0.0 or s + u > 1.0:
                    continue
                x_hit = a[0] + s * (b[0] - a[0]) + u * (c[0] - a[0])
                crossings.setdefault((jy, jz), []).append(x_hit)

    out = np.zeros((nx, ny, nz), dtype=np.uint8)
    for (jy, jz), hits in crossings.items():
        hits.sort()
        if len(hits) % 2 != 0:
            raise DataError("inconsistent ray parity: open or self-intersecting mesh")
        for k in range(0, len(hits), 2):
            x_in, x_out = hits[k], hits[k + 1]
            i0 = int(np.floor((x_in - ox) / sx)) + 1
            i1 = int(np.ceil((x_out - ox) / sx)) - 1
            if i1 < 0 or i0 > nx - 1:
                continue
            out[max(i0, 0) : min(i1, nx - 1) + 1, jy, jz] = 1
    return Mask(data=out, spacing=reference.spacing, origin=reference.origin)


# ---------------------------------------------------------------------------
# Debug output
# ---------------------------------------------------------------------------


def save_stl(mesh: TriMesh, path) -> None:
    """Dump the mesh as ASCII STL (debugging aid)."""
    v = mesh.vertices
    t = mesh.triangles
    face_n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    lengths = np.maximum(np.linalg.norm(face_n, axis=1), 1e-302)
    face_n = face_n / lengths[:, None]
    with open(Path(path), "w") as fh:
        fh.write("solid voiforge\n")
        for tri, n in zip(t, face_n):
            fh.write(f"facet normal {n[0]!r} {n[1]!r} {n[2]!r}\n outer loop\n")
            for idx in tri:
                p = v[idx]
                fh.write(f"  vertex {p[0]!r} {p[1]!r} {p[2]!r}\n")
            fh.write(" endloop\nendfacet\n")
        fh.write("endsolid voiforge\n")
