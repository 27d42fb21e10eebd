"""Volume containers, the header/raw file pair and ROI cropping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FormatError, GeometryError

MAX_LABEL = 5
FORMAT_NAME = "lumbarseg-volume"
FORMAT_VERSION = 1
_ELEMENT_TYPES = {"float32": np.dtype("<f4"), "uint8": np.dtype("u1")}


def _triple(values, cast=float):
    t = tuple(cast(v) for v in values)
    if len(t) != 3:
        raise ValueError(f"expected 3 values, got {len(t)}")
    return t


def _check_geometry(array, spacing, origin):
    if array.ndim != 3:
        raise GeometryError(f"volumes are 3D, got array of shape {array.shape}")
    if min(array.shape) < 1:
        raise GeometryError(f"extents must be >= 1, got {array.shape}")
    if any(not (s > 0 and math.isfinite(s)) for s in spacing):
        raise GeometryError(f"spacing must be positive and finite, got {spacing}")
    if any(not math.isfinite(o) for o in origin):
        raise GeometryError(f"origin must be finite, got {origin}")


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar intensity grid indexed ``[z, y, x]`` with millimetre geometry."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _triple(self.spacing))
        object.__setattr__(self, "origin", _triple(self.origin))
        _check_geometry(data, self.spacing, self.origin)

    @property
    def extents(self):
        return self.data.shape

    def physical(self, index):
        """Millimetre position of a voxel center."""
        return tuple(o + i * s for o, i, s in zip(self.origin, index, self.spacing))

    def with_data(self, data):
        return type(self)(data, self.spacing, self.origin)


@dataclass(frozen=True, eq=False)
class LabelVolume(Volume):
    """Integer labels: 0 background, 1..5 for L1..L5."""

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.size and (data.min() < 0 or data.max() > MAX_LABEL):
            raise GeometryError(f"labels must lie in 0..{MAX_LABEL}, found range {data.min()}..{data.max()}")
        data = np.array(data, dtype=np.uint8)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _triple(self.spacing))
        object.__setattr__(self, "origin", _triple(self.origin))
        _check_geometry(data, self.spacing, self.origin)

    def same_geometry(self, other):
        return self.extents == other.extents and self.spacing == other.spacing and self.origin == other.origin


@dataclass(frozen=True)
class BoundingBox3D:
    """Axis-aligned box in continuous voxel coordinates.

    A voxel with index ``i`` covers ``[i, i + 1)``; the tight box of a set of
    voxels therefore runs from the smallest index to the largest index plus one.
    """

    corner_low: tuple
    corner_high: tuple

    def __post_init__(self):
        lo, hi = _triple(self.corner_low), _triple(self.corner_high)
        if not all(math.isfinite(v) for v in lo + hi):
            raise GeometryError("box corners must be finite")
        if not all(h > l for l, h in zip(lo, hi)):
            raise GeometryError(f"box needs corner_low < corner_high on every axis, got {lo}, {hi}")
        object.__setattr__(self, "corner_low", lo)
        object.__setattr__(self, "corner_high", hi)

    @classmethod
    def from_corners(cls, a, b):
        """Sort two arbitrary corner points componentwise into a valid box."""
        a, b = np.asarray(a, float), np.asarray(b, float)
        return cls(tuple(np.minimum(a, b)), tuple(np.maximum(a, b)))

    @classmethod
    def of_mask(cls, mask):
        idx = np.argwhere(mask)
        if idx.size == 0:
            raise GeometryError("cannot bound an empty mask")
        return cls(tuple(idx.min(axis=0).astype(float)), tuple((idx.max(axis=0) + 1).astype(float)))

    @property
    def size(self):
        return tuple(h - l for l, h in zip(self.corner_low, self.corner_high))

    @property
    def volume(self):
        return float(np.prod(self.size))

    def contains_voxel(self, index):
        return all(l <= i and i + 1 <= h for i, l, h in zip(index, self.corner_low, self.corner_high))

    def iou(self, other):
        lo = np.maximum(self.corner_low, other.corner_low)
        hi = np.minimum(self.corner_high, other.corner_high)
        inter = float(np.prod(np.clip(hi - lo, 0.0, None)))
        return inter / (self.volume + other.volume - inter)


def crop_slices(extents, box, margin=0):
    """Index ranges covering ``box`` grown by ``margin`` and clamped to the grid."""
    lo = [max(0, math.floor(l - margin)) for l in box.corner_low]
    hi = [min(n, math.ceil(h + margin)) for h, n in zip(box.corner_high, extents)]
    if any(h <= l for l, h in zip(lo, hi)):
        raise GeometryError(f"box {box} does not intersect a volume of extents {tuple(extents)}")
    return tuple(slice(l, h) for l, h in zip(lo, hi))


def crop(volume, box, margin_voxels=0):
    """Sub-volume around ``box``; the origin moves so physical positions are kept."""
    sl = crop_slices(volume.extents, box, margin_voxels)
    origin = tuple(o + s.start * sp for o, s, sp in zip(volume.origin, sl, volume.spacing))
    return type(volume)(volume.data[sl], volume.spacing, origin)


# -- header/raw file pair ------------------------------------------------------

def _raw_path(header_path):
    return Path(header_path).with_suffix(".raw")


def save_volume(volume, path):
    """Write ``path`` (text header) and a sibling ``.raw`` payload."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    etype = "uint8" if isinstance(volume, LabelVolume) else "float32"
    raw = _raw_path(path)
    lines = [
        f"format={FORMAT_NAME}",
        f"version={FORMAT_VERSION}",
        "extents=" + " ".join(str(n) for n in volume.extents),
        "spacing=" + " ".join(repr(float(s)) for s in volume.spacing),
        "origin=" + " ".join(repr(float(o)) for o in volume.origin),
        f"element_type={etype}",
        "byte_order=little",
        f"data_file={raw.name}",
    ]
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    raw.write_bytes(np.ascontiguousarray(volume.data, dtype=_ELEMENT_TYPES[etype]).tobytes())
    return path


def _parse_header(text):
    fields, offset = {}, 0
    for line in text.splitlines(keepends=True):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            if "=" not in stripped:
                raise FormatError(f"header line without '=': {stripped!r}", offset)
            key, value = (part.strip() for part in stripped.split("=", 1))
            fields[key] = (value, offset)
        offset += len(line.encode("ascii", errors="replace"))
    return fields


def load_volume(path):
    """Read a header/raw pair; uint8 payloads come back as :class:`LabelVolume`."""
    path = Path(path)
    fields = _parse_header(path.read_text(encoding="ascii", errors="replace"))

    def get(key):
        if key not in fields:
            raise FormatError(f"header is missing required key {key!r}", 0)
        return fields[key]

    value, off = get("format")
    if value != FORMAT_NAME:
        raise FormatError(f"unknown format {value!r}", off)
    value, off = get("version")
    if value != str(FORMAT_VERSION):
        raise FormatError(f"unsupported version {value!r}", off)

    def triple(key, cast):
        value, off = get(key)
        try:
            return _triple(value.split(), cast)
        except ValueError as exc:
            raise FormatError(f"bad {key} value {value!r}: {exc}", off) from exc

    extents = triple("extents", int)
    if min(extents) < 1:
        raise FormatError(f"extents must be >= 1, got {extents}", get("extents")[1])
    spacing = triple("spacing", float)
    if min(spacing) <= 0:
        raise FormatError(f"spacing must be positive, got {spacing}", get("spacing")[1])
    origin = triple("origin", float)
    etype, off = get("element_type")
    if etype not in _ELEMENT_TYPES:
        raise FormatError(f"unsupported element type {etype!r}", off)
    order, off = get("byte_order")
    if order != "little":
        raise FormatError(f"unsupported byte order {order!r}", off)
    raw_name, _ = get("data_file")
    raw = path.parent / raw_name
    payload = raw.read_bytes()
    dtype = _ELEMENT_TYPES[etype]
    expected = int(np.prod(extents)) * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"payload size mismatch in {raw.name}: expected {expected} bytes, found {len(payload)}",
                          min(len(payload), expected))
    data = np.frombuffer(payload, dtype=dtype).reshape(extents)
    cls = LabelVolume if etype == "uint8" else Volume
    try:
        return cls(data, spacing, origin)
    except GeometryError as exc:
        raise FormatError(str(exc), 0) from exc


def save_box(box, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("corner_low=" + " ".join(repr(v) for v in box.corner_low) + "\n"
                    + "corner_high=" + " ".join(repr(v) for v in box.corner_high) + "\n", encoding="ascii")
    return path


def load_box(path):
    fields = _parse_header(Path(path).read_text(encoding="ascii", errors="replace"))
    try:
        lo = _triple(fields["corner_low"][0].split())
        hi = _triple(fields["corner_high"][0].split())
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed box file {path}: {exc}", 0) from exc
    return BoundingBox3D(lo, hi)
