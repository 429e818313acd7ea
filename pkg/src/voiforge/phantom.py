"""Synthetic phantom cohorts for desk-scale verification.

Lesions are balls or blobs (unions of jittered balls) in a correlated-noise
background; class signal can be planted in lesion-to-background contrast
(first-order), lesion radius (shape), and texture correlation length. Effect
sizes are expressed in units of the per-subject jitter SD, so an effect of 3.0
means the class means differ by 3 pooled standard deviations.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .grid import ImageVolume, Mask, SubjectRecord, write_manifest, write_nrrd
from .radfeat import FEATURE_NAMES
from .radfeat.table import FeatureTable


@dataclass
class PhantomSpec:
    """Controls for one synthetic cohort."""

    n_subjects: int = 24
    class_balance: float = 0.5
    geometry: str = "blob"  # 'ball' | 'blob'
    contrast_effect: float = 0.0  # first-order signal, in jitter SDs
    radius_effect: float = 0.0  # shape signal, in jitter SDs
    texture_effect: float = 0.0  # texture signal, in jitter SDs
    noise_level: float = 1.0
    base_radius_mm: float = 6.0
    grid_n: int = 32
    spacing_mm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 20:
            raise ConfigError("phantom cohorts need n_subjects >= 20")
        if not 0.0 < self.class_balance < 1.0:
            raise ConfigError("class balance must lie in (0, 1)")
        if self.geometry not in ("ball", "blob"):
            raise ConfigError(f"unknown geometry {self.geometry!r}")


def _subject_rng(spec_seed: int, subject_id: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{spec_seed}:{subject_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _ball(grid_n: int, center, radius: float) -> np.ndarray:
    idx = np.indices((grid_n, grid_n, grid_n)).astype(np.float64)
    d2 = sum((idx[k] - center[k]) ** 2 for k in range(3))
    return d2 <= radius**2


def _lesion_mask(spec: PhantomSpec, rng: np.random.Generator, radius: float) -> np.ndarray:
    c = (spec.grid_n - 1) / 2.0
    if spec.geometry == "ball":
        return _ball(spec.grid_n, (c, c, c), radius)
    # Metaball blob: a thresholded sum of Gaussian bumps. The surface is
    # crease-free (so mild smoothing is nearly a no-op) yet strongly lobed, so
    # its bounding ellipsoid encloses sizeable background pockets.
    idx = np.indices((spec.grid_n,) * 3).astype(np.float64)
    tau = np.exp(-2.0)
    sigma0 = radius / 2.0
    field = np.exp(
        -sum((idx[k] - c) ** 2 for k in range(3)) / (2.0 * sigma0**2)
    )
    for _ in range(4):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        center = c + direction * radius * rng.uniform(0.8, 1.2)
        sigma_k = sigma0 * rng.uniform(0.55, 0.8)
        field += np.exp(
            -sum((idx[k] - center[k]) ** 2 for k in range(3)) / (2.0 * sigma_k**2)
        )
    return field > tau


def _correlated_noise(rng: np.random.Generator, grid_n: int, corr_len: float) -> np.ndarray:
    white = rng.standard_normal((grid_n, grid_n, grid_n))
    smooth = ndimage.gaussian_filter(white, sigma=corr_len)
    return smooth / max(smooth.std(), 1e-12)


def generate_subject(spec: PhantomSpec, subject_id: str, label: int) -> tuple[ImageVolume, Mask]:
    """One phantom image + mask; deterministic in (spec.seed, subject_id)."""
    rng = _subject_rng(spec.seed, subject_id)

    radius_sd = 0.6
    contrast_sd = 0.5
    texture_sd = 0.3
    radius = spec.base_radius_mm + rng.normal(0, radius_sd) + label * spec.radius_effect * radius_sd
    radius = max(radius, 3.0)
    contrast = 3.0 + rng.normal(0, contrast_sd) + label * spec.contrast_effect * contrast_sd
    corr_len = 1.2 + rng.normal(0, texture_sd) + label * spec.texture_effect * texture_sd
    corr_len = max(corr_len, 0.4)

    lesion = _lesion_mask(spec, rng, radius)
    background = _correlated_noise(rng, spec.grid_n, 1.0) * spec.noise_level
    lesion_texture = _correlated_noise(rng, spec.grid_n, corr_len) * spec.noise_level
    # radial intensity gradient inside the lesion exercises texture families
    c = (spec.grid_n - 1) / 2.0
    idx = np.indices((spec.grid_n,) * 3).astype(np.float64)
    radial = np.sqrt(sum((idx[k] - c) ** 2 for k in range(3))) / max(radius, 1.0)

    # Asymmetric partial-volume boundary: full contrast everywhere inside the
    # lesion, smooth decay only outside. Growing the mask then imports
    # intermediate (not extreme) intensities, while shrinking it removes
    # voxels that look like the interior.
    blurred = ndimage.gaussian_filter(lesion.astype(np.float64), sigma=2.0)
    profile = np.maximum(lesion.astype(np.float64), blurred)
    image = background + contrast * profile
    image[lesion] += lesion_texture[lesion] + 0.5 * radial[lesion]
    s = spec.spacing_mm
    return (
        ImageVolume(data=image, spacing=(s, s, s)),
        Mask(data=lesion.astype(np.uint8), spacing=(s, s, s)),
    )


def cohort_labels(spec: PhantomSpec) -> list[int]:
    n_pos = int(round(spec.n_subjects * spec.class_balance))
    n_pos = min(max(n_pos, 2), spec.n_subjects - 2)
    labels = [1] * n_pos + [0] * (spec.n_subjects - n_pos)
    rng = np.random.default_rng(spec.seed)
    rng.shuffle(labels)
    return labels


def generate_phantoms(spec: PhantomSpec, out_dir) -> Path:
    """Write the cohort's NRRD files and manifest.csv; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = cohort_labels(spec)
    records = []
    for i, label in enumerate(labels):
        sid = f"phantom{i:03d}"
        image, mask = generate_subject(spec, sid, label)
        image_path = out_dir / f"{sid}_image.nrrd"
        mask_path = out_dir / f"{sid}_mask.nrrd"
        write_nrrd(image, image_path)
        write_nrrd(mask, mask_path)
        records.append(
            SubjectRecord(
                subject_id=sid,
                image_path=str(image_path),
                mask_path=str(mask_path),
                pcr_label=label,
                subtype="other",
            )
        )
    manifest = out_dir / "manifest.csv"
    write_manifest(records, manifest)
    return manifest


def make_synthetic_table(
    n_subjects: int = 60,
    n_informative: int = 2,
    effect_sd: float = 3.0,
    balance: float = 0.5,
    seed: int = 0,
) -> FeatureTable:
    """Feature table with the 102 canonical names and a planted linear signal.

    The informative columns separate the classes by ``effect_sd`` pooled SDs;
    the rest are independent noise.
    """
    rng = np.random.default_rng(seed)
    n_pos = int(round(n_subjects * balance))
    labels = np.array([1] * n_pos + [0] * (n_subjects - n_pos))
    rng.shuffle(labels)
    X = rng.standard_normal((n_subjects, len(FEATURE_NAMES)))
    informative = rng.choice(len(FEATURE_NAMES), size=n_informative, replace=False)
    for col in informative:
        X[:, col] += labels * effect_sd
    return FeatureTable(
        subject_ids=[f"s{i:03d}" for i in range(n_subjects)],
        feature_names=list(FEATURE_NAMES),
        matrix=X,
        labels=labels,
    )
