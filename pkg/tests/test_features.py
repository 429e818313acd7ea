import numpy as np
import pytest

from voiforge.errors import DataError
from voiforge.grid import ImageVolume, Mask
from voiforge.radfeat import (
    FEATURE_CLASS_SIZES,
    FEATURE_NAMES,
    discretize,
    extract_all,
    extract_firstorder,
    extract_glcm,
    extract_shape,
)
from voiforge.radfeat.table import FeatureTable

UNIT = (1.0, 1.0, 1.0)


def _roi_from_values(values, bin_count=100):
    arr = np.asarray(values, dtype=np.float64).reshape(1, 1, -1)
    image = ImageVolume(data=arr, spacing=UNIT)
    mask = Mask(data=np.ones_like(arr, dtype=np.uint8), spacing=UNIT)
    return discretize(image, mask, bin_count=bin_count)


def _ball_pair(radius=8.0, n=24, two_shells=False):
    c = (n - 1) / 2.0
    idx = np.indices((n, n, n)).astype(float)
    d2 = sum((idx[k] - c) ** 2 for k in range(3))
    mask = (d2 <= radius**2).astype(np.uint8)
    if two_shells:
        rng = np.random.default_rng(0)
        img = np.where(d2 <= (radius / 2) ** 2, 2.0, 1.0)
        img = img + 0.05 * rng.standard_normal((n, n, n))
    else:
        img = np.ones((n, n, n))
    return ImageVolume(data=img, spacing=UNIT), Mask(data=mask, spacing=UNIT)


class TestCensus:
    def test_102_features_with_class_counts(self):
        assert len(FEATURE_NAMES) == 102
        assert FEATURE_CLASS_SIZES == {
            "shape": 14,
            "firstorder": 18,
            "glcm": 24,
            "glrlm": 16,
            "glszm": 16,
            "gldm": 14,
        }
        assert not any("ngtdm" in name.lower() for name in FEATURE_NAMES)
        assert len(set(FEATURE_NAMES)) == 102

    def test_extract_all_returns_census_in_order(self, shell_phantom):
        image, mask = shell_phantom
        features = extract_all(image, mask)
        assert list(features) == list(FEATURE_NAMES)
        assert all(np.isfinite(v) for v in features.values())

    def test_determinism_bitwise(self, shell_phantom):
        image, mask = shell_phantom
        a = extract_all(image, mask)
        b = extract_all(image, mask)
        assert a == b

    def test_table_two_columns_present(self):
        # names referenced by downstream reports must exist
        for name in (
            "firstorder_InterquartileRange",
            "firstorder_Variance",
            "glrlm_ShortRunHighGrayLevelEmphasis",
            "glcm_DifferenceVariance",
            "glszm_LargeAreaHighGrayLevelEmphasis",
            "glcm_MCC",
            "shape_SurfaceVolumeRatio",
            "firstorder_Uniformity",
            "gldm_SmallDependenceLowGrayLevelEmphasis",
            "glszm_HighGrayLevelZoneEmphasis",
            "shape_Sphericity",
            "firstorder_10Percentile",
            "glcm_ClusterShade",
            "glrlm_ShortRunLowGrayLevelEmphasis",
            "glrlm_LongRunLowGrayLevelEmphasis",
            "shape_Elongation",
            "firstorder_Minimum",
            "glrlm_LowGrayLevelRunEmphasis",
            "gldm_LowGrayLevelEmphasis",
            "firstorder_TotalEnergy",
        ):
            assert name in FEATURE_NAMES


class TestDiscretize:
    def test_constant_roi_single_bin(self):
        roi = _roi_from_values([3.0, 3.0, 3.0])
        assert set(roi.levels[roi.mask]) == {1}

    def test_uniform_binning_rule(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(0, 100, size=500)
        values[0], values[1] = 0.0, 99.999  # pin the range
        roi = _roi_from_values(values, bin_count=100)
        lo, hi = values.min(), values.max()
        width = (hi - lo) / 100
        expected = np.clip(np.floor((values - lo) / width).astype(int) + 1, 1, 100)
        assert np.array_equal(roi.levels[roi.mask], expected)

    def test_two_values_two_bins(self):
        roi = _roi_from_values([0.0, 1.0], bin_count=2)
        assert sorted(roi.levels[roi.mask]) == [1, 2]

    def test_max_maps_to_top_bin(self):
        roi = _roi_from_values(np.linspace(0, 10, 50), bin_count=100)
        assert roi.levels[roi.mask].max() == 100

    def test_empty_mask_rejected(self):
        image = ImageVolume(data=np.zeros((2, 2, 2)), spacing=UNIT)
        mask = Mask(data=np.zeros((2, 2, 2), dtype=np.uint8), spacing=UNIT)
        with pytest.raises(DataError, match="empty"):
            discretize(image, mask)


class TestFirstOrder:
    def test_constant_roi(self):
        f = extract_firstorder(_roi_from_values([4.0] * 10))
        assert f["firstorder_Variance"] == 0.0
        assert f["firstorder_Uniformity"] == 1.0
        assert f["firstorder_Entropy"] == 0.0

    def test_hand_computed_values(self):
        f = extract_firstorder(_roi_from_values([1.0, 2.0, 3.0, 4.0], bin_count=4))
        assert f["firstorder_Mean"] == 2.5
        assert f["firstorder_Variance"] == 1.25  # population
        assert f["firstorder_Minimum"] == 1.0
        assert f["firstorder_Maximum"] == 4.0
        assert f["firstorder_Range"] == 3.0
        assert f["firstorder_Median"] == 2.5
        assert f["firstorder_Energy"] == 30.0
        assert f["firstorder_TotalEnergy"] == 30.0  # 1 mm^3 voxels
        assert f["firstorder_RootMeanSquared"] == pytest.approx(np.sqrt(7.5))
        assert f["firstorder_MeanAbsoluteDeviation"] == 1.0

    def test_percentile_linear_interpolation(self):
        f = extract_firstorder(_roi_from_values(np.arange(1.0, 101.0)))
        assert f["firstorder_10Percentile"] == pytest.approx(10.9)
        assert f["firstorder_90Percentile"] == pytest.approx(90.1)
        assert f["firstorder_InterquartileRange"] == pytest.approx(49.5)

    def test_skew_kurtosis_population_oracle(self):
        rng = np.random.default_rng(1)
        values = rng.standard_normal(200) * 3 + 1
        f = extract_firstorder(_roi_from_values(values))
        centered = values - values.mean()
        m2 = (centered**2).mean()
        assert f["firstorder_Skewness"] == pytest.approx((centered**3).mean() / m2**1.5)
        assert f["firstorder_Kurtosis"] == pytest.approx((centered**4).mean() / m2**2)


class TestShape:
    def test_ball_sphericity_and_volume(self):
        _, mask = _ball_pair(radius=8.0)
        f = extract_shape(mask)
        assert 0.95 <= f["shape_Sphericity"] <= 1.0
        analytic = 4.0 / 3.0 * np.pi * 8.0**3
        assert abs(f["shape_VoxelVolume"] - analytic) / analytic <= 0.05

    def test_cube_voxel_volume_exact(self):
        data = np.zeros((14, 14, 14), dtype=np.uint8)
        data[2:12, 2:12, 2:12] = 1
        f = extract_shape(Mask(data=data, spacing=UNIT))
        assert f["shape_VoxelVolume"] == 1000.0

    def test_ball_rounder_than_cube_of_equal_volume(self):
        _, ball = _ball_pair(radius=8.0)
        side = int(round((4 / 3 * np.pi) ** (1 / 3) * 8))  # ~equal-volume cube
        data = np.zeros((side + 6,) * 3, dtype=np.uint8)
        data[3 : 3 + side, 3 : 3 + side, 3 : 3 + side] = 1
        cube = Mask(data=data, spacing=UNIT)
        assert extract_shape(ball)["shape_Sphericity"] > extract_shape(cube)["shape_Sphericity"]

    def test_single_voxel_finite(self):
        data = np.zeros((5, 5, 5), dtype=np.uint8)
        data[2, 2, 2] = 1
        f = extract_shape(Mask(data=data, spacing=UNIT))
        assert all(np.isfinite(v) for v in f.values())
        assert f["shape_VoxelVolume"] == 1.0
        assert f["shape_Elongation"] == 1.0  # floored eigenvalues are equal

    def test_diameters_vs_bruteforce(self):
        rng = np.random.default_rng(2)
        data = np.zeros((10, 10, 10), dtype=np.uint8)
        data[2:7, 3:8, 4:7] = (rng.random((5, 5, 3)) < 0.7).astype(np.uint8)
        data[3, 4, 5] = 1
        mask = Mask(data=data, spacing=UNIT)
        f = extract_shape(mask)
        coords = np.argwhere(data > 0).astype(float)
        best = 0.0
        for i in range(len(coords)):
            d = np.linalg.norm(coords - coords[i], axis=1)
            best = max(best, d.max())
        # mesh vertices extend half a voxel beyond voxel centers
        assert f["shape_Maximum3DDiameter"] >= best
        assert f["shape_Maximum3DDiameter"] <= best + 2.0

    def test_image_independence(self, shell_phantom):
        image, mask = shell_phantom
        other = ImageVolume(data=image.data * 3.0 + 5.0, spacing=UNIT)
        assert extract_shape(mask) == extract_shape(mask)
        a = extract_all(image, mask)
        b = extract_all(other, mask)
        for name in FEATURE_NAMES:
            if name.startswith("shape_"):
                assert a[name] == b[name]


class TestInvariances:
    def test_translation_invariance(self, shell_phantom):
        image, mask = shell_phantom
        a = extract_all(image, mask)
        shifted_img = np.roll(image.data, shift=(1, 2, 1), axis=(0, 1, 2))
        shifted_mask = np.roll(mask.data, shift=(1, 2, 1), axis=(0, 1, 2))
        b = extract_all(
            ImageVolume(data=shifted_img, spacing=UNIT),
            Mask(data=shifted_mask, spacing=UNIT),
        )
        for name in FEATURE_NAMES:
            assert a[name] == pytest.approx(b[name], abs=1e-9), name

    def test_intensity_shift_covariance(self, shell_phantom):
        image, mask = shell_phantom
        a = extract_all(image, mask)
        b = extract_all(ImageVolume(data=image.data + 7.5, spacing=UNIT), mask)
        assert b["firstorder_Mean"] == pytest.approx(a["firstorder_Mean"] + 7.5)
        for name in FEATURE_NAMES:
            prefix = name.split("_")[0]
            if prefix in ("glcm", "glrlm", "glszm", "gldm"):
                assert b[name] == pytest.approx(a[name], rel=1e-12), name
        assert b["firstorder_Entropy"] == pytest.approx(a["firstorder_Entropy"])
        assert b["firstorder_Uniformity"] == pytest.approx(a["firstorder_Uniformity"])

    def test_constant_roi_conventions(self):
        image = ImageVolume(data=np.full((4, 4, 4), 2.0), spacing=UNIT)
        mask = Mask(data=np.ones((4, 4, 4), dtype=np.uint8), spacing=UNIT)
        f = extract_all(image, mask)
        assert f["firstorder_Variance"] == 0.0
        assert f["firstorder_Entropy"] == 0.0
        assert f["glcm_Contrast"] == 0.0
        assert f["glcm_Correlation"] == 1.0
        assert f["glcm_MCC"] == 1.0
        assert f["glcm_ClusterShade"] == 0.0

    def test_geometry_mismatch_rejected(self, shell_phantom):
        image, mask = shell_phantom
        bad = Mask(data=mask.data, spacing=(1.0, 1.0, 2.0))
        with pytest.raises(DataError, match="geometry"):
            extract_all(image, bad)

    def test_glcm_needs_pairs(self):
        data = np.zeros((5, 5, 5), dtype=np.uint8)
        data[0, 0, 0] = 1  # a single voxel has no co-occurring neighbour
        image = ImageVolume(data=np.random.default_rng(0).standard_normal((5, 5, 5)), spacing=UNIT)
        roi = discretize(image, Mask(data=data, spacing=UNIT))
        with pytest.raises(DataError, match="no co-occurrences"):
            extract_glcm(roi)


class TestFeatureTable:
    def test_csv_round_trip_exact(self, tmp_path, shell_phantom):
        image, mask = shell_phantom
        features = extract_all(image, mask)
        table = FeatureTable.from_rows({"s1": features, "s2": features}, {"s1": 1, "s2": 0})
        path = tmp_path / "features.csv"
        table.to_csv(path)
        back = FeatureTable.from_csv(path)
        assert back.subject_ids == table.subject_ids
        assert back.feature_names == table.feature_names
        assert np.array_equal(back.matrix, table.matrix)  # repr round-trips exactly
        assert np.array_equal(back.labels, table.labels)

    def test_header_schema(self, tmp_path):
        table = FeatureTable(
            subject_ids=["a"],
            feature_names=["f1", "f2"],
            matrix=np.array([[0.1, 0.2]]),
            labels=np.array([1]),
        )
        path = tmp_path / "t.csv"
        table.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "subject_id,label,f1,f2"
