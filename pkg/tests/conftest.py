import numpy as np
import pytest

from voiforge.grid import ImageVolume, Mask
from voiforge.phantom import PhantomSpec, cohort_labels, generate_subject
from voiforge.radfeat import extract_all
from voiforge.radfeat.table import FeatureTable


@pytest.fixture(scope="session")
def small_cohort_table() -> FeatureTable:
    """Feature table of a 20-subject phantom cohort (used by robustness tests)."""
    spec = PhantomSpec(
        n_subjects=20, contrast_effect=2.0, seed=77, grid_n=32, base_radius_mm=5.5
    )
    labels = cohort_labels(spec)
    rows, labs = {}, {}
    for i, y in enumerate(labels):
        sid = f"p{i:02d}"
        image, mask = generate_subject(spec, sid, y)
        rows[sid] = extract_all(image, mask)
        labs[sid] = y
    return FeatureTable.from_rows(rows, labs)


@pytest.fixture
def ball_mask() -> Mask:
    n = 24
    c = (n - 1) / 2.0
    idx = np.indices((n, n, n)).astype(float)
    d2 = (idx[0] - c) ** 2 + (idx[1] - c) ** 2 + (idx[2] - c) ** 2
    return Mask(data=(d2 <= 64.0).astype(np.uint8), spacing=(1.0, 1.0, 1.0))


@pytest.fixture
def shell_phantom() -> tuple[ImageVolume, Mask]:
    """Ball with two intensity shells plus mild noise."""
    n = 20
    c = (n - 1) / 2.0
    idx = np.indices((n, n, n)).astype(float)
    d2 = (idx[0] - c) ** 2 + (idx[1] - c) ** 2 + (idx[2] - c) ** 2
    mask = (d2 <= 49.0).astype(np.uint8)
    rng = np.random.default_rng(4)
    img = np.where(d2 <= 16.0, 2.0, 1.0) + 0.05 * rng.standard_normal((n, n, n))
    return (
        ImageVolume(data=img, spacing=(1.0, 1.0, 1.0)),
        Mask(data=mask, spacing=(1.0, 1.0, 1.0)),
    )
