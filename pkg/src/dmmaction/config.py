"""Pipeline configuration and its flat key/value file format.

Config files are TOML-style flat text: one `key = value` per line, `#`
comments, ints/floats/booleans/strings, and comma-separated lists in
square brackets.  Window lists accept the token `all` for the
whole-remaining-sequence window.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .dmm import ALL, Window
from .errors import ConfigError
from .geometry import PLANES

DEFAULT_ANGLES = (-45.0, -30.0, -15.0, 0.0, 15.0, 30.0, 45.0)
DEFAULT_DEPTH_WINDOWS: tuple[Window, ...] = (5, 10, ALL)
DEFAULT_RGB_WINDOWS = (10, 16, 25)
DEFAULT_POSES = ("sitting", "standing")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything that determines stream enumeration and extraction.

    network_preset selects the extractor family: "c3d" is the canonical
    eight-conv stack, "desk" the small two-conv stack for synthetic runs.
    """

    poses: tuple[str, ...] = DEFAULT_POSES
    planes: tuple[str, ...] = PLANES
    angles: tuple[float, ...] = DEFAULT_ANGLES
    depth_windows: tuple[Window, ...] = DEFAULT_DEPTH_WINDOWS
    rgb_windows: tuple[int, ...] = DEFAULT_RGB_WINDOWS
    clip_len: int = 16
    render_size: tuple[int, int] = (112, 112)
    focal_px: float | None = None  # None = Kinect default scaled to frame width
    depth_bin_mm: float = 10.0
    depth_bin_count: int = 512
    flow_iterations: int = 100
    flow_smoothness: float = 0.02
    flow_normalization: str = "pair"  # "pair" | "global"
    noise_floor: float = 0.0
    network_preset: str = "c3d"
    desk_conv_maps: tuple[int, int] = (8, 16)
    fc_units: int | None = None  # default: 4096 for c3d, 64 for desk
    pca_target: float | int = 0.95
    svm_regularization: float = 1e-3
    # PCA projections of tanh features have small scale; the subgradient
    # loop needs a few hundred passes to place the boundary reliably.
    svm_epochs: int = 300
    score_mode: str = "softmax"  # "softmax" | "raw"
    depth_as_rgb: bool = False
    bypass_view_synthesis: bool = False
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if not self.poses:
            raise ConfigError("at least one pose is required")
        if not self.planes or any(p not in PLANES for p in self.planes):
            raise ConfigError(f"planes must be a non-empty subset of {PLANES}")
        if not self.angles:
            raise ConfigError("angle set must not be empty")
        for a in self.angles:
            if not -180.0 <= a <= 180.0:
                raise ConfigError(f"angle {a} outside [-180, 180]")
        if not self.depth_windows:
            raise ConfigError("depth window set must not be empty")
        for w in self.depth_windows:
            if w != ALL and (not isinstance(w, int) or w < 2):
                raise ConfigError(f"depth window must be an int >= 2 or {ALL!r}, got {w!r}")
        for r in self.rgb_windows:
            if not isinstance(r, int) or r < 2:
                raise ConfigError(f"rgb window must be an int >= 2, got {r!r}")
        if self.clip_len < 1:
            raise ConfigError(f"clip_len must be >= 1, got {self.clip_len}")
        if self.render_size[0] < 8 or self.render_size[1] < 8:
            raise ConfigError(f"render_size must be at least 8x8, got {self.render_size}")
        if self.flow_normalization not in ("pair", "global"):
            raise ConfigError(f"unknown flow normalization {self.flow_normalization!r}")
        if self.network_preset not in ("c3d", "desk"):
            raise ConfigError(f"unknown network preset {self.network_preset!r}")
        if self.score_mode not in ("softmax", "raw"):
            raise ConfigError(f"unknown score mode {self.score_mode!r}")

    @property
    def fc_units_effective(self) -> int:
        if self.fc_units is not None:
            return self.fc_units
        return 4096 if self.network_preset == "c3d" else 64


_LIST_FIELDS = {
    "poses": str,
    "planes": str,
    "angles": float,
    "depth_windows": "window",
    "rgb_windows": int,
    "desk_conv_maps": int,
    "render_size": int,
}


def _parse_scalar(text: str):
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    for caster in (int, float):
        try:
            return caster(text)
        except ValueError:
            continue
    return text.strip("\"'")


def _parse_value(key: str, text: str):
    text = text.strip()
    if key in _LIST_FIELDS:
        inner = text[1:-1] if text.startswith("[") and text.endswith("]") else text
        items = [t.strip() for t in inner.split(",") if t.strip()]
        caster = _LIST_FIELDS[key]
        if caster == "window":
            return tuple(ALL if t.lower() == ALL else int(t) for t in items)
        if caster is str:
            return tuple(t.strip("\"'") for t in items)
        return tuple(caster(t) for t in items)
    value = _parse_scalar(text)
    if value == "none":
        return None
    return value


def parse_config_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse flat key = value lines into a PipelineConfig.

    Unknown keys are rejected rather than ignored so typos fail loudly.
    """
    base = base or PipelineConfig()
    known = {f.name for f in fields(PipelineConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        try:
            updates[key] = _parse_value(key, value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    try:
        return replace(base, **updates)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path, base: PipelineConfig | None = None) -> PipelineConfig:
    return parse_config_text(Path(path).read_text(), base)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(cfg: PipelineConfig) -> str:
    """Serialize a config so parse_config_text reproduces it exactly."""
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"
