"""Synthetic spine phantoms with exact ground truth.

Axis 0 runs cranio-caudally with index 0 at the cranial end. The labeled
stack L1..Ln is placed with L1 uppermost; dimmer, smaller unlabeled bodies
sit above L1 and stand in for thoracic vertebrae, so the visible field of
view varies from case to case. Body size grows from L1 towards Ln, as in
real lumbar spines, which also gives the networks a cue for the vertebra
index.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .volume import BoundingBox3D, LabelVolume, Volume, load_box, load_volume, save_box, save_volume


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    vertebra_count: int = 5
    extents: tuple = (80, 40, 40)
    spacing: tuple = (1.5, 1.0, 1.0)
    noise_level: float = 0.08
    fov_jitter: tuple = (2, 14)  # voxels between the caudal edge and the lowest vertebra
    lateral_jitter: float = 3.0  # in-plane shift of the whole stack, voxels
    distractor_count: int = 3

    def __post_init__(self):
        object.__setattr__(self, "extents", tuple(int(v) for v in self.extents))
        object.__setattr__(self, "spacing", tuple(float(v) for v in self.spacing))
        object.__setattr__(self, "fov_jitter", tuple(int(v) for v in self.fov_jitter))
        if self.vertebra_count < 1 or self.vertebra_count > 5:
            raise ConfigError(f"vertebra_count must be in 1..5, got {self.vertebra_count}")
        if len(self.extents) != 3 or min(self.extents) < 1:
            raise ConfigError(f"extents must be three positive integers, got {self.extents}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ConfigError(f"spacing must be three positive values, got {self.spacing}")
        lo, hi = self.fov_jitter
        if lo < 0 or hi < lo:
            raise ConfigError(f"fov_jitter must satisfy 0 <= low <= high, got {self.fov_jitter}")
        if self.noise_level < 0 or self.lateral_jitter < 0 or self.distractor_count < 0:
            raise ConfigError("noise_level, lateral_jitter and distractor_count must be non-negative")

    def to_text(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name}=" + (" ".join(str(x) for x in v) if isinstance(v, tuple) else str(v)))
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text):
        kinds = {f.name: f.default for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("["):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"line {lineno}: unknown phantom key {key!r}")
            default = kinds[key]
            try:
                if isinstance(default, tuple):
                    cast = type(default[0])
                    values[key] = tuple(cast(v) for v in value.replace(",", " ").split())
                else:
                    values[key] = type(default)(value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
        return cls(**values)

    def replace(self, **changes):
        return type(self)(**{**asdict(self), **changes})


@dataclass(frozen=True)
class _Body:
    z0: int  # first occupied slice
    z1: int  # last occupied slice
    cy: float
    cx: float
    ry: float
    rx: float
    intensity: float


def _stamp(shape, body):
    """Boolean ellipsoid spanning slices ``z0..z1`` exactly."""
    rz = (body.z1 - body.z0) / 2.0 + 0.5
    cz = (body.z0 + body.z1) / 2.0
    z, y, x = np.ogrid[: shape[0], : shape[1], : shape[2]]
    return ((z - cz) / rz) ** 2 + ((y - body.cy) / body.ry) ** 2 + ((x - body.cx) / body.rx) ** 2 <= 1.0


def gen_phantom(spec):
    """Return ``(volume, labels, box)`` for one phantom, fully determined by ``spec``."""
    rng = np.random.default_rng([spec.seed, 0x5B1E])
    d, h, w = spec.extents
    n = spec.vertebra_count

    heights = [int(round(4.6 + 0.25 * k + rng.uniform(-0.5, 0.5))) for k in range(n)]
    gaps = [int(rng.integers(2, 5)) for _ in range(n - 1)]
    ry = [6.5 + 0.5 * k + rng.uniform(-0.4, 0.4) for k in range(n)]
    rx = [7.5 + 0.5 * k + rng.uniform(-0.4, 0.4) for k in range(n)]
    cy0 = (h - 1) / 2.0 + rng.uniform(-spec.lateral_jitter, spec.lateral_jitter)
    cx0 = (w - 1) / 2.0 + rng.uniform(-spec.lateral_jitter, spec.lateral_jitter)
    drift = rng.uniform(-1.0, 1.0, size=(n, 2))
    offset = int(rng.integers(spec.fov_jitter[0], spec.fov_jitter[1] + 1))

    # place Ln first, stacking cranially
    bodies = [None] * n
    bottom = d - 1 - offset
    for k in reversed(range(n)):
        top = bottom - heights[k] + 1
        bodies[k] = _Body(top, bottom, cy0 + drift[k, 0], cx0 + drift[k, 1], ry[k], rx[k],
                          1.0 + rng.uniform(-0.1, 0.1))
        if k > 0:
            bottom = top - gaps[k - 1] - 1
    if bodies[0].z0 < 0:
        raise ConfigError(f"extents {spec.extents} too small for a {n}-vertebra stack "
                          f"(needs {d - bodies[0].z0} slices)")
    for b in bodies:
        if b.cy - b.ry < 0 or b.cy + b.ry > h - 1 or b.cx - b.rx < 0 or b.cx + b.rx > w - 1:
            raise ConfigError(f"extents {spec.extents} too small in-plane for the vertebra cross-section")

    distractors = []
    bottom = bodies[0].z0 - int(rng.integers(2, 5)) - 1
    for _ in range(spec.distractor_count):
        height = int(rng.integers(4, 6))
        top = bottom - height + 1
        if bottom < 0:
            break
        distractors.append(_Body(top, bottom, cy0 + rng.uniform(-1, 1), cx0 + rng.uniform(-1, 1),
                                 5.0 + rng.uniform(-0.4, 0.4), 5.8 + rng.uniform(-0.4, 0.4),
                                 0.55 + rng.uniform(-0.05, 0.05)))
        bottom = top - int(rng.integers(2, 5)) - 1

    image = np.zeros(spec.extents, dtype=np.float64)
    labels = np.zeros(spec.extents, dtype=np.uint8)
    for b in distractors:
        image[_stamp(spec.extents, b)] = b.intensity
    for k, b in enumerate(bodies):
        mask = _stamp(spec.extents, b)
        image[mask] = b.intensity
        labels[mask] = k + 1
    if spec.noise_level > 0:
        image += rng.normal(0.0, spec.noise_level, size=image.shape)

    volume = Volume(image.astype(np.float32), spec.spacing)
    label_volume = LabelVolume(labels, spec.spacing)
    return volume, label_volume, BoundingBox3D.of_mask(labels > 0)


def case_name(index):
    return f"case_{index:03d}"


def write_case(directory, index, volume, labels, box):
    directory = Path(directory)
    name = case_name(index)
    save_volume(volume, directory / f"{name}_image.hdr")
    save_volume(labels, directory / f"{name}_labels.hdr")
    save_box(box, directory / f"{name}.box")
    return name


def read_case(directory, name):
    directory = Path(directory)
    return (load_volume(directory / f"{name}_image.hdr"), load_volume(directory / f"{name}_labels.hdr"),
            load_box(directory / f"{name}.box"))


def list_cases(directory):
    return sorted(p.name[: -len("_image.hdr")] for p in Path(directory).glob("case_*_image.hdr"))
