"""Core data types shared by the whole pipeline.

Everything operates on registered grids: all images of a dataset live on the
same spatial grid, and an atlas assigns every voxel of that grid to a region
of interest (ROI) or to background (label 0).  Scalars are float64 end to end
so downstream statistics and gradient checks are not precision-limited.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

MANIFEST_VERSION = 1
ATLAS_VERSION = 1


class DataError(ValueError):
    """A malformed in-memory structure or on-disk artifact."""


def ensure_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        n_bad = int(arr.size - np.count_nonzero(np.isfinite(arr)))
        raise DataError(f"{name} contains {n_bad} non-finite value(s)")
    return arr


def as_tensor(values: Any, shape: Sequence[int] | None = None) -> np.ndarray:
    """Coerce to a contiguous row-major float64 array with finite entries."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        if int(np.prod(shape)) != arr.size:
            raise DataError(f"cannot reshape {arr.size} values to shape {tuple(shape)}")
        arr = arr.reshape(tuple(shape))
    return ensure_finite(arr, "tensor")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ChannelImage:
    """A multi-channel image on a 2D or 3D grid, stored as (channels, *spatial)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim not in (3, 4):
            raise DataError(
                f"ChannelImage needs (channels, *spatial) with 2D or 3D spatial grid, got ndim={arr.ndim}"
            )
        if arr.shape[0] < 1:
            raise DataError("ChannelImage needs at least one channel")
        ensure_finite(arr, "image")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.data.shape[1:]


@dataclass(frozen=True)
class Atlas:
    """Integer label field over a spatial grid; 0 is background, >0 are ROI ids."""

    labels: np.ndarray
    roi_ids: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.labels)
        if not np.issubdtype(arr.dtype, np.integer):
            raise DataError(f"atlas labels must be integers, got dtype {arr.dtype}")
        if arr.ndim not in (2, 3):
            raise DataError(f"atlas grid must be 2D or 3D, got ndim={arr.ndim}")
        if arr.min() < 0:
            raise DataError("atlas labels must be non-negative")
        arr = arr.astype(np.int64, copy=False)
        ids = tuple(int(v) for v in np.unique(arr) if v > 0)
        if not ids:
            raise DataError("atlas has no ROI labels (all background)")
        object.__setattr__(self, "labels", _freeze(arr))
        object.__setattr__(self, "roi_ids", ids)

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.labels.shape


@dataclass(frozen=True)
class RoiMask:
    """One ROI's voxel coordinates, identical for every image of a registered dataset.

    Voxels are kept in sorted lexicographic coordinate order so that the
    flattened ROI vector of an image is reproducible.
    """

    roi_id: int
    voxels: np.ndarray  # (n_voxels, ndim) int64

    def __post_init__(self) -> None:
        if self.roi_id <= 0:
            raise DataError(f"roi_id must be positive, got {self.roi_id}")
        vox = np.ascontiguousarray(self.voxels, dtype=np.int64)
        if vox.ndim != 2 or vox.shape[0] == 0:
            raise DataError("RoiMask needs a nonempty (n, ndim) coordinate array")
        order = np.lexsort(vox.T[::-1])
        vox = vox[order]
        if np.any(np.all(vox[1:] == vox[:-1], axis=1)):
            raise DataError(f"RoiMask {self.roi_id} has duplicate voxels")
        object.__setattr__(self, "voxels", _freeze(vox))

    @property
    def size(self) -> int:
        return self.voxels.shape[0]

    def _index(self) -> tuple[np.ndarray, ...]:
        return tuple(self.voxels.T)

    def check_bounds(self, spatial_shape: tuple[int, ...]) -> None:
        if self.voxels.shape[1] != len(spatial_shape):
            raise DataError(
                f"RoiMask {self.roi_id} is {self.voxels.shape[1]}-D but grid is {len(spatial_shape)}-D"
            )
        if np.any(self.voxels < 0) or np.any(self.voxels >= np.asarray(spatial_shape)):
            raise DataError(f"RoiMask {self.roi_id} has voxels outside grid {spatial_shape}")


def atlas_rois(atlas: Atlas) -> list[RoiMask]:
    """Split an atlas into one mask per ROI id (a disjoint partition of nonzero voxels)."""
    masks = []
    for rid in atlas.roi_ids:
        coords = np.argwhere(atlas.labels == rid)  # argwhere scans in C order = lexicographic
        masks.append(RoiMask(roi_id=rid, voxels=coords))
    return masks


def extract_roi(img: ChannelImage, roi: RoiMask) -> np.ndarray:
    """Flatten one ROI of an image to a vector: channel-major, voxels in sorted order."""
    roi.check_bounds(img.spatial_shape)
    return img.data[(slice(None),) + roi._index()].ravel()


def replace_roi(img: ChannelImage, roi: RoiMask, vec: np.ndarray) -> ChannelImage:
    """Return a copy of the image with one ROI's content replaced by `vec`."""
    roi.check_bounds(img.spatial_shape)
    vec = np.asarray(vec, dtype=np.float64)
    expect = img.channels * roi.size
    if vec.ndim != 1 or vec.size != expect:
        raise DataError(f"replacement vector has length {vec.size}, expected {expect}")
    data = img.data.copy()
    data[(slice(None),) + roi._index()] = vec.reshape(img.channels, roi.size)
    return ChannelImage(data)


@dataclass
class Dataset:
    """Registered images with class labels (0/1) and per-image subject ids."""

    images: list[ChannelImage]
    labels: list[int]
    subject_ids: list[str]
    manifest: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.images)
        if not (len(self.labels) == len(self.subject_ids) == n):
            raise DataError(
                f"length mismatch: {n} images, {len(self.labels)} labels, "
                f"{len(self.subject_ids)} subject ids"
            )
        if any(int(l) not in (0, 1) for l in self.labels):
            raise DataError("labels must be 0 or 1")
        self.labels = [int(l) for l in self.labels]
        if n > 0:
            ch, sp = self.images[0].channels, self.images[0].spatial_shape
            for i, im in enumerate(self.images):
                if im.channels != ch or im.spatial_shape != sp:
                    raise DataError(
                        f"image {i} has shape {im.channels}x{im.spatial_shape}, expected {ch}x{sp}"
                    )

    def __len__(self) -> int:
        return len(self.images)

    @property
    def channels(self) -> int:
        if not self.images:
            raise DataError("empty dataset has no channel count")
        return self.images[0].channels

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        if not self.images:
            raise DataError("empty dataset has no spatial shape")
        return self.images[0].spatial_shape

    def class_indices(self, label: int) -> list[int]:
        return [i for i, l in enumerate(self.labels) if l == label]

    def require_both_classes(self) -> None:
        if not self.class_indices(0) or not self.class_indices(1):
            raise DataError("dataset must contain both classes for an interpretation run")

    def label_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.int64)

    def stacked(self) -> np.ndarray:
        """All images as one (n, channels, *spatial) array."""
        return np.stack([im.data for im in self.images])


# ---------------------------------------------------------------------------
# On-disk formats
# ---------------------------------------------------------------------------

def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write via temp file + rename so readers never observe partial content."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _json_dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def save_dataset(dataset: Dataset, directory: str | Path) -> Path:
    """Write a dataset as manifest.json plus one raw float64 blob per image.

    Re-saving into a directory that already holds a manifest removes the blobs
    the old manifest referenced before the new manifest is committed.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest_path = directory / "manifest.json"
    stale: list[str] = []
    if manifest_path.exists():
        try:
            old = json.loads(manifest_path.read_text())
            stale = [e["blob"] for e in old.get("entries", []) if isinstance(e.get("blob"), str)]
        except (OSError, json.JSONDecodeError, TypeError):
            stale = []

    entries = []
    new_blobs = set()
    for i, img in enumerate(dataset.images):
        blob = f"img_{i:05d}.f64"
        new_blobs.add(blob)
        atomic_write_bytes(directory / blob, img.data.astype("<f8").tobytes(order="C"))
        entries.append(
            {
                "subject_id": dataset.subject_ids[i],
                "label": dataset.labels[i],
                "blob": blob,
                "shape": list(img.data.shape),
            }
        )
    doc = {
        "version": MANIFEST_VERSION,
        "channels": dataset.channels if dataset.images else 0,
        "spatial_shape": list(dataset.spatial_shape) if dataset.images else [],
        "entries": entries,
        "meta": dataset.manifest,
    }
    atomic_write_text(manifest_path, _json_dumps(doc))
    for blob in stale:
        if blob not in new_blobs:
            try:
                (directory / blob).unlink()
            except OSError:
                pass
    return manifest_path


_MANIFEST_KEYS = {"version", "channels", "spatial_shape", "entries", "meta"}
_ENTRY_KEYS = {"subject_id", "label", "blob", "shape"}


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Inverse of save_dataset; bit-exact roundtrip of image values."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DataError("manifest must be a JSON object")
    unknown = set(doc) - _MANIFEST_KEYS
    if unknown:
        raise DataError(f"manifest has unknown keys: {sorted(unknown)}")
    if doc.get("version") != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {doc.get('version')!r}")
    for key in ("channels", "spatial_shape", "entries"):
        if key not in doc:
            raise DataError(f"manifest key missing: {key}")
    channels = int(doc["channels"])
    spatial = tuple(int(v) for v in doc["spatial_shape"])
    shape = (channels,) + spatial

    images, labels, subjects = [], [], []
    for k, entry in enumerate(doc["entries"]):
        if not isinstance(entry, dict) or set(entry) - _ENTRY_KEYS:
            raise DataError(f"entry {k} has unexpected structure")
        for key in _ENTRY_KEYS:
            if key not in entry:
                raise DataError(f"entry {k} key missing: {key}")
        eshape = tuple(int(v) for v in entry["shape"])
        if eshape != shape:
            raise DataError(f"entry {k} shape {eshape} != dataset shape {shape}")
        blob_path = manifest_path.parent / entry["blob"]
        if not blob_path.exists():
            raise DataError(f"blob not found: {blob_path}")
        raw = blob_path.read_bytes()
        expected = 8 * int(np.prod(shape))
        if len(raw) != expected:
            raise DataError(
                f"blob {entry['blob']} is {len(raw)} bytes, expected {expected} for shape {shape}"
            )
        arr = np.frombuffer(raw, dtype="<f8").reshape(shape)
        images.append(ChannelImage(arr))
        labels.append(int(entry["label"]))
        subjects.append(str(entry["subject_id"]))
    meta = doc.get("meta", {})
    if not isinstance(meta, dict):
        raise DataError("manifest meta must be an object")
    return Dataset(images=images, labels=labels, subject_ids=subjects, manifest=meta)


def save_atlas(atlas: Atlas, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = "atlas.i64"
    atomic_write_bytes(directory / blob, atlas.labels.astype("<i8").tobytes(order="C"))
    doc = {"version": ATLAS_VERSION, "shape": list(atlas.labels.shape), "blob": blob}
    path = directory / "atlas.json"
    atomic_write_text(path, _json_dumps(doc))
    return path


def load_atlas(path: str | Path) -> Atlas:
    path = Path(path)
    if not path.exists():
        raise DataError(f"atlas not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("version") != ATLAS_VERSION:
        raise DataError(f"unsupported atlas version {doc.get('version')!r}")
    shape = tuple(int(v) for v in doc["shape"])
    raw = (path.parent / doc["blob"]).read_bytes()
    if len(raw) != 8 * int(np.prod(shape)):
        raise DataError("atlas blob size does not match declared shape")
    labels = np.frombuffer(raw, dtype="<i8").reshape(shape)
    return Atlas(labels=labels)
