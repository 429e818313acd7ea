"""Volume and mask data model, NRRD I/O, resampling, normalization, lesion selection.

Conventions
-----------
Arrays are indexed ``data[x, y, z]`` with shape equal to ``dims = (nx, ny, nz)``.
``origin`` is the physical position (mm) of the *center* of voxel (0, 0, 0) and
voxel (i, j, k) is centered at ``origin + (i*sx, j*sy, k*sz)``.

On disk we use NRRD0004 with a raw little-endian payload whose fastest axis is x,
i.e. the flat buffer is Fortran-ordered with respect to ``(nx, ny, nz)``.
"""

from __future__ import annotations

import csv
import gzip
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError

Triple = tuple[float, float, float]

_DTYPE_NAMES = {
    "uint8": np.uint8,
    "unsigned char": np.uint8,
    "uchar": np.uint8,
    "int8": np.int8,
    "signed char": np.int8,
    "int16": np.int16,
    "short": np.int16,
    "signed short": np.int16,
    "uint16": np.uint16,
    "unsigned short": np.uint16,
    "int32": np.int32,
    "int": np.int32,
    "uint32": np.uint32,
    "unsigned int": np.uint32,
    "int64": np.int64,
    "uint64": np.uint64,
    "float": np.float32,
    "double": np.float64,
}

_DTYPE_TO_NRRD = {
    np.dtype(np.uint8): "uint8",
    np.dtype(np.int16): "int16",
    np.dtype(np.uint16): "uint16",
    np.dtype(np.int32): "int32",
    np.dtype(np.float32): "float",
    np.dtype(np.float64): "double",
}


def _check_geometry(dims, spacing, data) -> None:
    if len(dims) != 3 or any(int(d) <= 0 for d in dims):
        raise DataError(f"dims must be three positive integers, got {dims}")
    if len(spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise DataError(f"spacing must be three positive floats, got {spacing}")
    if data.shape != tuple(dims):
        raise DataError(f"data shape {data.shape} does not match dims {dims}")


@dataclass
class ImageVolume:
    """3D scalar grid with physical spacing. Treated as immutable once built."""

    data: np.ndarray
    spacing: Triple
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        _check_geometry(self.data.shape, self.spacing, self.data)
        if not np.all(np.isfinite(self.data)):
            raise DataError("image contains non-finite intensities")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class Mask:
    """Binary volume-of-interest aligned with an ImageVolume."""

    data: np.ndarray
    spacing: Triple
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.data)
        uniq = np.unique(arr)
        if not np.all(np.isin(uniq, (0, 1))):
            raise DataError(f"non-binary mask: values {uniq[:10]}")
        self.data = arr.astype(np.uint8)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        _check_geometry(self.data.shape, self.spacing, self.data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_count(self) -> int:
        return int(self.data.sum())


@dataclass
class SubjectRecord:
    """One row of a dataset manifest."""

    subject_id: str
    image_path: str
    mask_path: str
    pcr_label: int
    subtype: str = "other"

    def __post_init__(self):
        if self.pcr_label not in (0, 1):
            raise DataError(f"pcr label must be 0 or 1, got {self.pcr_label}")


def same_grid(a, b, tol: float = 1e-6) -> bool:
    """True when two volumes share dims, spacing, and origin."""
    return (
        a.dims == b.dims
        and np.allclose(a.spacing, b.spacing, atol=tol)
        and np.allclose(a.origin, b.origin, atol=tol)
    )


# ---------------------------------------------------------------------------
# NRRD I/O
# ---------------------------------------------------------------------------


def _parse_vector(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.strip().lstrip("(").rstrip(")").split(","))


def _read_header(fh) -> dict:
    magic = fh.readline().decode("ascii", errors="replace").rstrip("\r\n")
    if not magic.startswith("NRRD000"):
        raise DataError(f"not an NRRD file (magic {magic!r})")
    fields = {}
    while True:
        line = fh.readline()
        if line in (b"\n", b"\r\n", b""):
            break
        text = line.decode("ascii", errors="replace").rstrip("\r\n")
        if text.startswith("#"):
            continue
        if ":" not in text:
            raise DataError(f"malformed NRRD header line: {text!r}")
        key, _, value = text.partition(":")
        fields[key.strip().lower()] = value.lstrip("= ").strip()
    return fields


def read_nrrd(path, as_mask: bool = False):
    """Read a 3D NRRD file into an ImageVolume, or a Mask when ``as_mask``.

    Accepts raw or gzip encodings, little-endian, with per-axis spacing given
    either as ``spacings`` or axis-aligned ``space directions``.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            fields = _read_header(fh)
            payload = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    if int(fields.get("dimension", 0)) != 3:
        raise DataError(f"expected dimension 3, got {fields.get('dimension')}")
    type_name = fields.get("type", "")
    if type_name not in _DTYPE_NAMES:
        raise DataError(f"unsupported NRRD type {type_name!r}")
    dtype = np.dtype(_DTYPE_NAMES[type_name]).newbyteorder("<")
    dims = tuple(int(s) for s in fields["sizes"].split())

    if "spacings" in fields:
        spacing = tuple(float(s) for s in fields["spacings"].split())
    elif "space directions" in fields:
        vecs = [_parse_vector(v) for v in fields["space directions"].split(") ")]
        spacing = tuple(float(np.linalg.norm(v)) for v in vecs)
        for i, v in enumerate(vecs):
            off_axis = [abs(c) for j, c in enumerate(v) if j != i]
            if any(c > 1e-9 for c in off_axis):
                raise DataError("non-axis-aligned space directions are not supported")
    else:
        raise DataError("NRRD header missing spacings / space directions")

    origin = (0.0, 0.0, 0.0)
    if "space origin" in fields:
        origin = _parse_vector(fields["space origin"])

    endian = fields.get("endian", "little")
    if endian != "little":
        raise DataError(f"unsupported endian {endian!r}")
    encoding = fields.get("encoding", "raw")
    if encoding == "gzip":
        payload = gzip.decompress(payload)
    elif encoding != "raw":
        raise DataError(f"unsupported encoding {encoding!r}")

    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) < expected:
        raise DataError(f"payload truncated: {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload[:expected], dtype=dtype)
    data = flat.reshape(dims, order="F")

    if as_mask:
        return Mask(data=data, spacing=spacing, origin=origin)
    return ImageVolume(data=data, spacing=spacing, origin=origin)


def write_nrrd(volume, path) -> None:
    """Write an ImageVolume (float64) or Mask (uint8) as NRRD0004, raw little-endian."""
    path = Path(path)
    data = volume.data
    if data.dtype not in _DTYPE_TO_NRRD:
        data = data.astype(np.float64)
    type_name = _DTYPE_TO_NRRD[data.dtype]
    sx, sy, sz = volume.spacing
    ox, oy, oz = volume.origin
    header = (
        "NRRD0004\n"
        f"type: {type_name}\n"
        "dimension: 3\n"
        "space dimension: 3\n"
        f"sizes: {data.shape[0]} {data.shape[1]} {data.shape[2]}\n"
        f"space directions: ({sx!r},0,0) (0,{sy!r},0) (0,0,{sz!r})\n"
        f"space origin: ({ox!r},{oy!r},{oz!r})\n"
        "endian: little\n"
        "encoding: raw\n"
        "\n"
    )
    buf = np.ascontiguousarray(data.flatten(order="F")).astype(data.dtype.newbyteorder("<"))
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(buf.tobytes())


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def _output_geometry(dims, spacing, origin, target):
    new_dims, new_origin = [], []
    for n, s, o in zip(dims, spacing, origin):
        m = max(1, int(np.floor(n * s / target + 0.5)))
        new_dims.append(m)
        new_origin.append(o + (target - s) / 2.0)
    return tuple(new_dims), tuple(new_origin)


def _source_coords(new_dims, target, spacing):
    # index into the source grid for each output voxel center (corner-aligned grids)
    return [
        (np.arange(m) + 0.5) * (target / s) - 0.5
        for m, s in zip(new_dims, spacing)
    ]


def resample_isotropic(vol, target_spacing_mm: float, mode: str = "linear"):
    """Resample a volume or mask to isotropic spacing.

    ``mode='nearest'`` is mandatory for masks; ``'linear'`` interpolates
    intensities trilinearly. Physical extent is preserved to within one voxel
    per axis.
    """
    if not np.isfinite(target_spacing_mm) or target_spacing_mm <= 0:
        raise DataError(f"target spacing must be positive, got {target_spacing_mm}")
    is_mask = isinstance(vol, Mask)
    if is_mask and mode != "nearest":
        raise DataError("masks must be resampled with mode='nearest'")
    if mode not in ("nearest", "linear"):
        raise DataError(f"unknown resample mode {mode!r}")

    t = float(target_spacing_mm)
    new_dims, new_origin = _output_geometry(vol.dims, vol.spacing, vol.origin, t)
    coords = _source_coords(new_dims, t, vol.spacing)
    data = vol.data.astype(np.float64)

    if mode == "nearest":
        idx = [
            np.clip(np.floor(c + 0.5).astype(np.int64), 0, n - 1)
            for c, n in zip(coords, vol.dims)
        ]
        out = data[np.ix_(idx[0], idx[1], idx[2])]
    else:
        out = _trilinear(data, coords)

    if is_mask:
        return Mask(data=out.astype(np.uint8), spacing=(t, t, t), origin=new_origin)
    return ImageVolume(data=out, spacing=(t, t, t), origin=new_origin)


def _trilinear(data, coords):
    clipped = [np.clip(c, 0.0, n - 1.0) for c, n in zip(coords, data.shape)]
    lo = [np.floor(c).astype(np.int64) for c in clipped]
    hi = [np.minimum(l + 1, n - 1) for l, n in zip(lo, data.shape)]
    fr = [c - l for c, l in zip(clipped, lo)]

    wx = fr[0][:, None, None]
    wy = fr[1][None, :, None]
    wz = fr[2][None, None, :]
    out = np.zeros((len(lo[0]), len(lo[1]), len(lo[2])))
    for cx, fx in ((lo[0], 1 - wx), (hi[0], wx)):
        for cy, fy in ((lo[1], 1 - wy), (hi[1], wy)):
            for cz, fz in ((lo[2], 1 - wz), (hi[2], wz)):
                out += fx * fy * fz * data[np.ix_(cx, cy, cz)]
    return out


def resample_to_grid(mask: Mask, reference) -> Mask:
    """Map a mask onto the geometry of ``reference`` with nearest-neighbour lookup.

    Reference voxel centers falling outside the mask's grid become background.
    """
    idx, inside = [], []
    for axis in range(3):
        centers = reference.origin[axis] + np.arange(reference.dims[axis]) * reference.spacing[axis]
        src = (centers - mask.origin[axis]) / mask.spacing[axis]
        i = np.floor(src + 0.5).astype(np.int64)
        inside.append((i >= 0) & (i < mask.dims[axis]))
        idx.append(np.clip(i, 0, mask.dims[axis] - 1))
    out = mask.data[np.ix_(idx[0], idx[1], idx[2])].astype(np.uint8)
    keep = (
        inside[0][:, None, None]
        & inside[1][None, :, None]
        & inside[2][None, None, :]
    )
    out = np.where(keep, out, 0).astype(np.uint8)
    return Mask(data=out, spacing=reference.spacing, origin=reference.origin)


# ---------------------------------------------------------------------------
# Normalization and component selection
# ---------------------------------------------------------------------------


def zscore_normalize(image: ImageVolume) -> ImageVolume:
    """Standardize intensities to mean 0, std 1 over the whole volume."""
    mean = float(image.data.mean())
    std = float(image.data.std())
    if std == 0.0:
        raise DataError("zero variance: constant image cannot be z-score normalized")
    return ImageVolume(
        data=(image.data - mean) / std, spacing=image.spacing, origin=image.origin
    )


_STRUCT_26 = np.ones((3, 3, 3), dtype=bool)


def largest_component(mask: Mask, connectivity: int = 26) -> Mask:
    """Keep only the largest 26-connected foreground component.

    Ties are broken by keeping the component containing the smallest linear
    (C-order) voxel index.
    """
    if connectivity != 26:
        raise DataError("only 26-connectivity is supported")
    if mask.voxel_count == 0:
        raise DataError("empty mask has no components")
    labels, n = ndimage.label(mask.data, structure=_STRUCT_26)
    if n == 1:
        return mask
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = int(sizes.max())
    tied = np.flatnonzero(sizes == best)
    if len(tied) > 1:
        flat = labels.ravel(order="C")
        winner = min(tied, key=lambda lab: int(np.flatnonzero(flat == lab)[0]))
    else:
        winner = int(tied[0])
    return Mask(
        data=(labels == winner).astype(np.uint8),
        spacing=mask.spacing,
        origin=mask.origin,
    )


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------

MANIFEST_COLUMNS = ("subject_id", "image_path", "mask_path", "pcr", "subtype")


def read_manifest(path) -> list[SubjectRecord]:
    """Read a dataset manifest CSV with columns subject_id,image_path,mask_path,pcr,subtype."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest {path} does not exist")
    records: list[SubjectRecord] = []
    seen: set[str] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"manifest missing columns: {sorted(missing)}")
        for row in reader:
            sid = row["subject_id"]
            if sid in seen:
                raise DataError(f"duplicate subject_id {sid!r} in manifest")
            seen.add(sid)
            records.append(
                SubjectRecord(
                    subject_id=sid,
                    image_path=row["image_path"],
                    mask_path=row["mask_path"],
                    pcr_label=int(row["pcr"]),
                    subtype=row["subtype"],
                )
            )
    if not records:
        raise DataError(f"manifest {path} has no rows")
    return records


def write_manifest(records: list[SubjectRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            writer.writerow([r.subject_id, r.image_path, r.mask_path, r.pcr_label, r.subtype])
