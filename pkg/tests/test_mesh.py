import numpy as np
import pytest

from voiforge.errors import DataError
from voiforge.grid import Mask
from voiforge.mesh import (
    is_watertight,
    Ellipsoid,
    PerlinNoise3D,
    RandomizeParams,
    TriMesh,
    ellipsoid_mesh,
    fit_ellipsoid,
    is_closed,
    marching_cubes,
    perlin_randomize,
    save_stl,
    signed_volume,
    smooth_mesh,
    surface_area,
    vertex_normals,
    voxelize,
)

UNIT = (1.0, 1.0, 1.0)


def _single_voxel_mask() -> Mask:
    data = np.zeros((5, 5, 5), dtype=np.uint8)
    data[2, 2, 2] = 1
    return Mask(data=data, spacing=UNIT)


def _cube_mask(side: int = 10, pad: int = 3) -> Mask:
    n = side + 2 * pad
    data = np.zeros((n, n, n), dtype=np.uint8)
    data[pad : pad + side, pad : pad + side, pad : pad + side] = 1
    return Mask(data=data, spacing=UNIT)


def _ball(radius: float, n: int) -> Mask:
    c = (n - 1) / 2.0
    idx = np.indices((n, n, n)).astype(float)
    d2 = sum((idx[k] - c) ** 2 for k in range(3))
    return Mask(data=(d2 <= radius**2).astype(np.uint8), spacing=UNIT)


def _euler_characteristic(mesh: TriMesh) -> int:
    edges = np.concatenate(
        [mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]]
    )
    n_edges = len(np.unique(np.sort(edges, axis=1), axis=0))
    return len(mesh.vertices) - n_edges + len(mesh.triangles)


class TestMarchingCubes:
    def test_single_voxel(self):
        mesh = marching_cubes(_single_voxel_mask())
        vol = signed_volume(mesh)
        assert 0.0 < vol <= 1.0
        assert _euler_characteristic(mesh) == 2
        assert is_closed(mesh)

    def test_cube_surface_area(self):
        mesh = marching_cubes(_cube_mask())
        area = surface_area(mesh)
        assert abs(area - 600.0) / 600.0 <= 0.15

    def test_empty_mask_rejected(self):
        with pytest.raises(DataError, match="empty"):
            marching_cubes(Mask(data=np.zeros((3, 3, 3), dtype=np.uint8), spacing=UNIT))

    def test_lesion_like_masks_closed(self):
        # smooth shapes (no corner-touching voxel pairs): strict 2-manifold
        for radius, n in ((3.0, 10), (5.0, 14), (7.0, 18)):
            mesh = marching_cubes(_ball(radius, n))
            assert is_closed(mesh)
            assert signed_volume(mesh) > 0

    def test_random_masks_watertight(self):
        # speckle masks can pinch at corner-touching voxels: the isosurface is
        # non-manifold there, but stays watertight in the ray-parity sense
        rng = np.random.default_rng(0)
        for _ in range(20):
            data = (rng.random((7, 7, 7)) < 0.35).astype(np.uint8)
            if data.sum() == 0:
                continue
            mesh = marching_cubes(Mask(data=data, spacing=UNIT))
            assert is_watertight(mesh)
            assert signed_volume(mesh) > 0

    def test_physical_coordinates(self):
        mask = Mask(data=np.ones((2, 2, 2), dtype=np.uint8), spacing=(2.0, 2.0, 2.0), origin=(10.0, 0.0, 0.0))
        mesh = marching_cubes(mask)
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        assert lo[0] == pytest.approx(9.0)  # half a voxel outside the first center
        assert hi[0] == pytest.approx(13.0)


class TestSmoothMesh:
    def test_zero_iterations_identity(self):
        mesh = marching_cubes(_cube_mask(side=4, pad=2))
        out = smooth_mesh(mesh, iterations=0, factor=0.5)
        assert np.array_equal(out.vertices, mesh.vertices)

    def test_cube_max_distance_decreases(self):
        mesh = marching_cubes(_cube_mask(side=6, pad=2))
        center = mesh.vertices.mean(axis=0)
        before = np.linalg.norm(mesh.vertices - center, axis=1).max()
        out = smooth_mesh(mesh, iterations=10, factor=0.5)
        after = np.linalg.norm(out.vertices - out.vertices.mean(axis=0), axis=1).max()
        assert after < before

    def test_sphere_distance_variance_decreases_monotonically(self):
        mesh = _sphere_mesh = marching_cubes(_ball(6.0, 18))
        prev = None
        for _ in range(5):
            center = mesh.vertices.mean(axis=0)
            var = np.var(np.linalg.norm(mesh.vertices - center, axis=1))
            if prev is not None:
                assert var < prev
            prev = var
            mesh = smooth_mesh(mesh, iterations=1, factor=0.5)

    def test_topology_unchanged(self):
        mesh = marching_cubes(_ball(4.0, 12))
        out = smooth_mesh(mesh, iterations=3, factor=0.5)
        assert np.array_equal(out.triangles, mesh.triangles)


class TestVertexNormals:
    def test_cube_face_normals_axis_aligned(self):
        mesh = vertex_normals(marching_cubes(_cube_mask(side=8, pad=2)))
        # vertices strictly interior to a cube face have exactly axis normals
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        checked = 0
        for axis in range(3):
            for val, sign in ((lo[axis], -1.0), (hi[axis], 1.0)):
                on_face = np.abs(mesh.vertices[:, axis] - val) < 1e-9
                others = [k for k in range(3) if k != axis]
                interior = on_face.copy()
                for k in others:
                    interior &= (mesh.vertices[:, k] > lo[k] + 2.0) & (
                        mesh.vertices[:, k] < hi[k] - 2.0
                    )
                if interior.any():
                    expected = np.zeros(3)
                    expected[axis] = sign
                    assert np.allclose(mesh.normals[interior], expected, atol=1e-9)
                    checked += 1
        assert checked == 6

    def test_sphere_normals_outward(self):
        mesh = vertex_normals(marching_cubes(_ball(6.0, 18)))
        center = mesh.vertices.mean(axis=0)
        dots = np.einsum("ij,ij->i", mesh.normals, mesh.vertices - center)
        assert (dots > 0).all()

    def test_unit_length(self):
        mesh = vertex_normals(marching_cubes(_ball(4.0, 12)))
        assert np.allclose(np.linalg.norm(mesh.normals, axis=1), 1.0, atol=1e-6)


class TestPerlin:
    def test_range_and_both_signs(self):
        noise = PerlinNoise3D(0)
        rng = np.random.default_rng(1)
        vals = noise(rng.uniform(0, 8, size=(5000, 3)))
        assert np.all(vals >= -1.0) and np.all(vals <= 1.0)
        assert vals.max() > 0.1 and vals.min() < -0.1

    def test_zero_distance_identity(self):
        mesh = marching_cubes(_ball(5.0, 16))
        out = perlin_randomize(mesh, RandomizeParams(max_distance_mm=0.0, seed=3))
        assert np.array_equal(out.vertices, mesh.vertices)

    def test_determinism_and_seed_sensitivity(self):
        mesh = marching_cubes(_ball(5.0, 16))
        a = perlin_randomize(mesh, RandomizeParams(max_distance_mm=2.0, seed=3))
        b = perlin_randomize(mesh, RandomizeParams(max_distance_mm=2.0, seed=3))
        c = perlin_randomize(mesh, RandomizeParams(max_distance_mm=2.0, seed=4))
        assert np.array_equal(a.vertices, b.vertices)
        assert not np.array_equal(a.vertices, c.vertices)

    def test_displacement_bounded_and_two_sided(self):
        mesh = marching_cubes(_ball(6.0, 18))
        out = perlin_randomize(mesh, RandomizeParams(max_distance_mm=2.0, seed=5))
        disp = np.linalg.norm(out.vertices - mesh.vertices, axis=1)
        assert disp.max() <= 2.0 + 1e-9
        normals = vertex_normals(smooth_mesh(mesh, 10, 0.5)).normals
        signed = np.einsum("ij,ij->i", out.vertices - mesh.vertices, normals)
        assert (signed > 1e-9).any() and (signed < -1e-9).any()


class TestFitEllipsoid:
    def _assert_axes_match(self, fit: Ellipsoid, true_axes, true_lengths, atol_mm, atol_deg):
        recovered = list(zip(fit.axes, fit.semi_lengths))
        for axis, length in zip(true_axes, true_lengths):
            dots = [abs(np.dot(axis, r[0])) for r in recovered]
            k = int(np.argmax(dots))
            rec_axis, rec_len = recovered.pop(k)
            angle = np.degrees(np.arccos(np.clip(abs(np.dot(axis, rec_axis)), 0, 1)))
            assert angle <= atol_deg, f"axis off by {angle:.2f} deg"
            assert abs(rec_len - length) <= atol_mm, f"{rec_len} vs {length}"

    def test_recovers_axis_aligned_ellipsoid(self):
        truth = Ellipsoid(
            center=np.array([1.0, -2.0, 3.0]),
            axes=np.eye(3),
            semi_lengths=(10.0, 6.0, 4.0),
        )
        fit = fit_ellipsoid(ellipsoid_mesh(truth, n_theta=48, n_phi=96))
        assert np.allclose(fit.center, truth.center, atol=0.5)
        self._assert_axes_match(fit, np.eye(3), (10.0, 6.0, 4.0), atol_mm=0.5, atol_deg=5.0)

    def test_sphere_recovers_radius(self):
        mesh = marching_cubes(_ball(8.0, 22))
        fit = fit_ellipsoid(smooth_mesh(mesh, 10, 0.5))
        for L in fit.semi_lengths:
            assert abs(L - 8.0) / 8.0 <= 0.05

    def test_degenerate_rejected(self):
        flat = TriMesh(
            vertices=np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]),
            triangles=np.array([[0, 1, 2]]),
        )
        with pytest.raises(DataError, match="degenerate"):
            fit_ellipsoid(flat)

    def test_rotation_invariance_90deg(self):
        truth = Ellipsoid(
            center=np.zeros(3), axes=np.eye(3), semi_lengths=(9.0, 5.0, 3.5)
        )
        mesh = ellipsoid_mesh(truth, n_theta=48, n_phi=96)
        fit0 = fit_ellipsoid(mesh)
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        rotated = TriMesh(vertices=mesh.vertices @ rot.T, triangles=mesh.triangles)
        fit90 = fit_ellipsoid(rotated)
        assert np.allclose(
            sorted(fit0.semi_lengths), sorted(fit90.semi_lengths), rtol=1e-6
        )
        back = fit90.axes @ rot
        self._assert_axes_match(
            Ellipsoid(center=np.zeros(3), axes=back, semi_lengths=fit90.semi_lengths),
            fit0.axes,
            fit0.semi_lengths,
            atol_mm=1e-3,
            atol_deg=1.0,
        )


class TestVoxelize:
    def test_ellipsoid_volume_within_5pct(self):
        ell = Ellipsoid(
            center=np.array([10.13, 9.87, 10.21]),
            axes=np.eye(3),
            semi_lengths=(5.0, 4.0, 3.0),
        )
        ref = Mask(data=np.zeros((21, 21, 21), dtype=np.uint8), spacing=UNIT)
        out = voxelize(ell, ref)
        analytic = 4.0 / 3.0 * np.pi * 5 * 4 * 3
        assert abs(out.voxel_count - analytic) / analytic <= 0.05

    def test_volume_convergence_under_refinement(self):
        ell = Ellipsoid(
            center=np.array([10.13, 9.87, 10.21]),
            axes=np.eye(3),
            semi_lengths=(5.0, 4.0, 3.0),
        )
        analytic = 4.0 / 3.0 * np.pi * 5 * 4 * 3
        errors = []
        for spacing in (1.0, 0.5):
            n = int(round(21 / spacing))
            ref = Mask(
                data=np.zeros((n, n, n), dtype=np.uint8), spacing=(spacing,) * 3
            )
            out = voxelize(ell, ref)
            errors.append(abs(out.voxel_count * spacing**3 - analytic))
        assert errors[1] <= errors[0] / 2.0

    def test_mesh_round_trip_dice(self):
        ball = _ball(6.0, 20)
        out = voxelize(marching_cubes(ball), ball)
        inter = int((out.data & ball.data).sum())
        dice = 2 * inter / (out.voxel_count + ball.voxel_count)
        assert dice >= 0.95

    def test_surface_outside_grid_empty(self):
        ell = Ellipsoid(
            center=np.array([100.0, 100.0, 100.0]), axes=np.eye(3), semi_lengths=(2.0, 2.0, 2.0)
        )
        ref = Mask(data=np.zeros((10, 10, 10), dtype=np.uint8), spacing=UNIT)
        assert voxelize(ell, ref).voxel_count == 0

    def test_open_mesh_rejected(self):
        one_triangle = TriMesh(
            vertices=np.array([[2.0, 2.0, 2.0], [2.0, 7.0, 2.0], [2.0, 4.5, 7.0]]),
            triangles=np.array([[0, 1, 2]]),
        )
        ref = Mask(data=np.zeros((10, 10, 10), dtype=np.uint8), spacing=UNIT)
        with pytest.raises(DataError, match="parity"):
            voxelize(one_triangle, ref)


class TestEllipsoidType:
    def test_orthonormality_enforced(self):
        with pytest.raises(DataError, match="orthonormal"):
            Ellipsoid(center=np.zeros(3), axes=np.ones((3, 3)), semi_lengths=(3, 2, 1))

    def test_major_axis_first(self):
        with pytest.raises(DataError, match="major"):
            Ellipsoid(center=np.zeros(3), axes=np.eye(3), semi_lengths=(1.0, 2.0, 1.0))


def test_stl_dump(tmp_path):
    mesh = marching_cubes(_single_voxel_mask())
    path = tmp_path / "mesh.stl"
    save_stl(mesh, path)
    text = path.read_text()
    assert text.startswith("solid voiforge")
    assert text.count("facet normal") == len(mesh.triangles)
