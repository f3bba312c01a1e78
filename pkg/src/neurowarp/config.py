"""Project configuration: one TOML file describes one morphing project.

The file lives in the project directory; all paths inside it resolve
relative to that directory.  Command-line flags can override individual
keys with dotted names like ``warp.steps``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .blend import BLEND_MODES, MorphConfig
from .image import ImageFitConfig
from .warp import WarpConfig


class ConfigError(ValueError):
    """Invalid or incomplete project configuration."""


@dataclass
class RenderSpec:
    frames: int = 33
    size: int = 256
    t_start: float = 0.0
    t_end: float = 1.0


@dataclass
class ProjectConfig:
    root: Path
    image0: Path
    image1: Path
    landmarks: Path
    region: Path | None
    fit: ImageFitConfig
    warp: WarpConfig
    blend_mode: str
    blend_base: int
    morph: MorphConfig
    render: RenderSpec

    def validate(self) -> None:
        for name in ("image0", "image1", "landmarks"):
            path = getattr(self, name)
            if not path.is_file():
                raise ConfigError(f"{name} file not found: {path}")
        if self.region is not None and not self.region.is_file():
            raise ConfigError(f"region file not found: {self.region}")
        if self.blend_mode not in ("linear",) + BLEND_MODES:
            raise ConfigError(f"unknown blend mode {self.blend_mode!r}")
        if self.blend_base not in (0, 1):
            raise ConfigError("blend base must be 0 or 1")
        if self.render.frames < 2:
            raise ConfigError("render needs at least 2 frames")
        if self.render.size < 16:
            raise ConfigError("render size must be at least 16")
        if not (0.0 <= self.render.t_start < self.render.t_end <= 1.0):
            raise ConfigError("render time range must satisfy 0 <= start < end <= 1")
        for stage in (self.fit, self.warp, self.morph):
            if stage.steps < 0:
                raise ConfigError("step counts must be nonnegative")


def _fill(dc_type, table: dict, where: str):
    """Instantiate a config dataclass from a TOML table, rejecting typos."""
    known = {f.name for f in dataclasses.fields(dc_type)}
    extra = set(table) - known
    if extra:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(extra))}")
    try:
        return dc_type(**table)
    except TypeError as exc:
        raise ConfigError(f"bad [{where}] section: {exc}") from exc


def parse_project_config(doc: dict, root: Path) -> ProjectConfig:
    images = doc.get("images", {})
    if "image0" not in images or "image1" not in images:
        raise ConfigError("[images] must name image0 and image1")
    landmarks = doc.get("landmarks", {})
    if "path" not in landmarks:
        raise ConfigError("[landmarks] must name a path")
    region = doc.get("region", {}).get("path")

    blend_table = dict(doc.get("blend", {}))
    mode = blend_table.pop("mode", "linear")
    base = blend_table.pop("base", 0)

    cfg = ProjectConfig(
        root=root,
        image0=root / images["image0"],
        image1=root / images["image1"],
        landmarks=root / landmarks["path"],
        region=root / region if region else None,
        fit=_fill(ImageFitConfig, doc.get("fit", {}), "fit"),
        warp=_fill(WarpConfig, doc.get("warp", {}), "warp"),
        blend_mode=mode,
        blend_base=base,
        morph=_fill(MorphConfig, blend_table, "blend"),
        render=_fill(RenderSpec, doc.get("render", {}), "render"),
    )
    return cfg


def load_project_config(path: str | Path, overrides: dict | None = None) -> ProjectConfig:
    """Read and validate a project TOML; ``overrides`` maps dotted keys
    like ``warp.steps`` onto values and wins over the file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        section, _, name = key.partition(".")
        if not name:
            raise ConfigError(f"override {key!r} must look like section.key")
        doc.setdefault(section, {})[name] = value
    cfg = parse_project_config(doc, path.parent.resolve())
    cfg.validate()
    return cfg


def stage_config_dict(stage) -> dict:
    """Stable dict form of a stage config, for reports and change detection."""
    return {k: getattr(stage, k) for k in (f.name for f in dataclasses.fields(stage))}