"""Run configuration: INI-style ``key=value`` sections with named presets.

Sections are ``[phantom]``, ``[localizer]``, ``[segmenter]`` and
``[crossval]``. Tuples are written space-separated. ``dump`` writes every
value, so a dumped file reloads to an identical configuration.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace

from .dataset.phantom import PhantomSpec
from .errors import ConfigError


@dataclass(frozen=True)
class PhantomSetConfig:
    case_count: int = 15
    base_seed: int = 0
    vertebra_count: int = 5
    extents: tuple = (80, 40, 40)
    spacing: tuple = (1.5, 1.0, 1.0)
    noise_level: float = 0.08
    fov_jitter: tuple = (2, 14)
    lateral_jitter: float = 3.0
    distractor_count: int = 3

    def spec(self, index):
        return PhantomSpec(seed=self.base_seed * 100003 + index, vertebra_count=self.vertebra_count,
                           extents=self.extents, spacing=self.spacing, noise_level=self.noise_level,
                           fov_jitter=self.fov_jitter, lateral_jitter=self.lateral_jitter,
                           distractor_count=self.distractor_count)


@dataclass(frozen=True)
class LocalizerConfig:
    patch_size: int = 32
    widths: tuple = (16, 32, 64)
    reduction_width: int = 512
    hidden_width: int = 128
    displacement_scale: float = 64.0
    canny_sigma: float = 1.0
    low_threshold: float = 0.1
    high_threshold: float = 0.2
    train_refs_per_volume: int = 200
    infer_refs: int = 2000
    batch_size: int = 8
    round1_epochs: int = 10
    round2_epochs: int = 4
    round1_lr: float = 1e-3
    round2_lr: float = 1e-5
    lr_final_fraction: float = 0.05  # cosine decay floor per round
    bandwidth: str = "scott"
    bandwidth_floor: float = 1.0
    iou_eps: float = 1e-7


@dataclass(frozen=True)
class SegmenterConfig:
    depth: int = 3
    base_width: int = 16
    patch_extents: tuple = (48, 32, 32)
    stride_fraction: float = 0.5
    class_weights: str = "auto"
    binary_epochs: int = 10
    multiclass_epochs: int = 20
    learning_rate: float = 1e-3
    lr_final_fraction: float = 1.0  # 1.0 keeps the rate constant
    batch_size: int = 1
    patches_per_volume: int = 1
    crop_margin: int = 4
    roi_jitter: float = 0.1
    gray_scale_range: tuple = (0.9, 1.1)
    gray_shift_range: tuple = (-0.1, 0.1)
    elastic_amplitude: float = 2.0
    elastic_grid_spacing: int = 8
    min_component_voxels: str = "auto"


@dataclass(frozen=True)
class CrossvalConfig:
    folds: int = 5
    held_out: int = 3


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    phantom: PhantomSetConfig = field(default_factory=PhantomSetConfig)
    localizer: LocalizerConfig = field(default_factory=LocalizerConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    crossval: CrossvalConfig = field(default_factory=CrossvalConfig)


SECTIONS = {"phantom": PhantomSetConfig, "localizer": LocalizerConfig, "segmenter": SegmenterConfig,
            "crossval": CrossvalConfig}

# Desk preset: sized so that 5-fold cross-validation on 15 phantoms trains on a
# single CPU core within the time budget.
DESK = RunConfig(
    preset="desk",
    localizer=LocalizerConfig(widths=(4, 8, 16), train_refs_per_volume=24, infer_refs=300,
                              round1_epochs=16, round2_epochs=2, round2_lr=1e-7),
    segmenter=SegmenterConfig(depth=4, base_width=8, binary_epochs=10, multiclass_epochs=60),
)

# Full-scale hyperparameters; recorded, not exercised on CPU.
PAPER = RunConfig(
    preset="paper",
    localizer=LocalizerConfig(widths=(16, 32, 64)),
    segmenter=SegmenterConfig(patch_extents=(96, 128, 160), base_width=16, depth=4),
)

PRESETS = {"desk": DESK, "paper": PAPER}


def preset(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]


def _format(value):
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    return str(value)


def _parse(raw, default, key):
    try:
        if isinstance(default, tuple):
            cast = type(default[0]) if default else str
            return tuple(cast(v) for v in raw.replace(",", " ").split())
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return type(default)(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def dumps(cfg):
    lines = ["[run]", f"preset={cfg.preset}", f"seed={cfg.seed}", ""]
    for name in SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        lines += [f"{f.name}={_format(getattr(section, f.name))}" for f in fields(section)]
        lines.append("")
    return "\n".join(lines)


def loads(text, base=None):
    """Overlay a config text on ``base`` (or on the preset it names, default desk)."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    run = dict(parser["run"]) if parser.has_section("run") else {}
    cfg = base if base is not None else preset(run.get("preset", "desk"))
    if "preset" in run:
        cfg = replace(cfg, preset=run["preset"])
    if "seed" in run:
        cfg = replace(cfg, seed=_parse(run["seed"], 0, "seed"))
    for name in parser.sections():
        if name == "run":
            continue
        if name not in SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        section = getattr(cfg, name)
        defaults = asdict(section)
        changes = {}
        for key, raw in parser[name].items():
            if key not in defaults:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            changes[key] = _parse(raw, defaults[key], f"{name}.{key}")
        cfg = replace(cfg, **{name: replace(section, **changes)})
    return cfg


def load(path, preset_name=None, seed=None):
    base = preset(preset_name) if preset_name else None
    with open(path, encoding="utf-8") as fh:
        cfg = loads(fh.read(), base)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg

