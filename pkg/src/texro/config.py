"""Run configuration: an INI file with one validation path for files and overrides.

Example::

    [mesh]
    path = bunny.obj

    [pipeline]
    prompt = a ceramic rabbit
    N = 5

    [denoiser]
    kind = oracle

Overrides use ``section.key=value`` and are parsed exactly like file values.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

DENOISER_KINDS = ("oracle", "procedural", "remote")
BLEND_MODES = ("overwrite", "cosine")


def _opt(section: str, default, **extra):
    return field(default=default, metadata={"section": section, **extra})


@dataclass(frozen=True)
class PipelineConfig:
    mesh_path: str = _opt("mesh", "", key="path")
    prompt: str = _opt("pipeline", "")
    N: int = _opt("pipeline", 5)
    base_resolution: int = _opt("pipeline", 307)
    upsample_factor: float = _opt("pipeline", 1.5)
    slope: float = _opt("pipeline", 2.5)
    t1: int = _opt("pipeline", 2)
    render_size: int = _opt("pipeline", 512)
    fov_y: float = _opt("pipeline", 50.0)
    init_radius: str = _opt("pipeline", "auto")
    blend: str = _opt("pipeline", "overwrite")
    dilate_seams: bool = _opt("pipeline", False)
    seed: int = _opt("pipeline", 0)
    candidates: int = _opt("viewselect", 8192)
    radius_min: float = _opt("viewselect", 1.0)
    radius_max: float = _opt("viewselect", 1.4)
    max_angle_deg: float = _opt("viewselect", 45.0)
    T_full: int = _opt("schedule", 1000)
    beta_start: float = _opt("schedule", 0.00085)
    beta_end: float = _opt("schedule", 0.012)
    reduced_steps: int = _opt("schedule", 10)
    denoiser: str = _opt("denoiser", "oracle", key="kind")
    oracle_texture: str = _opt("denoiser", "", key="texture")
    pattern_seed: int = _opt("denoiser", 0)
    endpoint: str = _opt("denoiser", "")
    timeout_s: float = _opt("denoiser", 30.0)
    retries: int = _opt("denoiser", 3)
    backoff_s: float = _opt("denoiser", 0.5)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        need(self.N >= 1, "pipeline.N must be >= 1")
        need(self.base_resolution >= 1, "pipeline.base_resolution must be >= 1")
        need(self.upsample_factor > 1.0, "pipeline.upsample_factor must be > 1")
        need(self.slope > 0, "pipeline.slope must be > 0")
        need(1 <= self.t1 <= self.reduced_steps, "pipeline.t1 must lie in [1, schedule.reduced_steps]")
        need(self.render_size >= 8, "pipeline.render_size must be >= 8")
        need(0.0 < self.fov_y < 180.0, "pipeline.fov_y must lie in (0, 180)")
        if self.init_radius != "auto":
            try:
                r = float(self.init_radius)
            except ValueError:
                raise ConfigError("pipeline.init_radius must be 'auto' or a positive number") from None
            need(r > 0 and math.isfinite(r), "pipeline.init_radius must be positive")
        need(self.blend in BLEND_MODES, f"pipeline.blend must be one of {BLEND_MODES}")
        need(self.candidates >= 1, "viewselect.candidates must be >= 1")
        need(0.0 < self.radius_min <= self.radius_max, "need 0 < viewselect.radius_min <= viewselect.radius_max")
        need(0.0 < self.max_angle_deg <= 90.0, "viewselect.max_angle_deg must lie in (0, 90]")
        need(self.T_full >= 1, "schedule.T_full must be >= 1")
        need(0.0 < self.beta_start <= self.beta_end < 1.0, "need 0 < schedule.beta_start <= beta_end < 1")
        need(1 <= self.reduced_steps <= self.T_full, "schedule.reduced_steps must lie in [1, T_full]")
        need(self.reduced_steps >= 10, "schedule.reduced_steps must be >= 10 (the step plan starts at reduced step 10)")
        need(self.denoiser in DENOISER_KINDS, f"denoiser.kind must be one of {DENOISER_KINDS}")
        need(self.timeout_s > 0, "denoiser.timeout_s must be > 0")
        need(0 <= self.retries <= 3, "denoiser.retries must lie in [0, 3]")
        need(self.backoff_s >= 0, "denoiser.backoff_s must be >= 0")

    # ---- file format

    @staticmethod
    def _key(f) -> str:
        return f.metadata.get("key", f.name)

    @classmethod
    def _field_map(cls) -> dict[tuple[str, str], dataclasses.Field]:
        return {(f.metadata["section"], cls._key(f)): f for f in fields(cls)}

    @staticmethod
    def _parse(f, text: str):
        typ = f.type if isinstance(f.type, str) else f.type.__name__
        text = text.strip()
        try:
            if typ == "int":
                return int(text)
            if typ == "float":
                return float(text)
            if typ == "bool":
                low = text.lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(text)
        except ValueError:
            raise ConfigError(f"{f.metadata['section']}.{PipelineConfig._key(f)}: cannot parse {text!r} as {typ}") from None
        return text

    @staticmethod
    def _format(value) -> str:
        if isinstance(value, bool):
            return "true" if value else "false"
        return repr(value) if isinstance(value, float) else str(value)

    @classmethod
    def from_mapping(cls, values: dict[tuple[str, str], str], base: PipelineConfig | None = None) -> PipelineConfig:
        fmap = cls._field_map()
        kwargs = {}
        for (section, key), text in values.items():
            f = fmap.get((section, key))
            if f is None:
                raise ConfigError(f"unknown setting {section}.{key}")
            kwargs[f.name] = cls._parse(f, text)
        if base is None:
            return cls(**kwargs)
        return dataclasses.replace(base, **kwargs)

    @classmethod
    def from_ini(cls, text: str) -> PipelineConfig:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        return cls.from_mapping({(s, k): v for s in cp.sections() for k, v in cp.items(s)})

    @classmethod
    def load(cls, path: str | Path) -> PipelineConfig:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from None
        cfg = cls.from_ini(text)
        # relative mesh/texture paths are resolved against the config file
        updates = {}
        for name in ("mesh_path", "oracle_texture"):
            val = getattr(cfg, name)
            if val and not Path(val).is_absolute():
                updates[name] = str((p.parent / val).resolve())
        return dataclasses.replace(cfg, **updates) if updates else cfg

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for f in fields(self):
            sec = f.metadata["section"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, self._key(f), self._format(getattr(self, f.name)))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def with_overrides(self, overrides: list[str]) -> PipelineConfig:
        """Apply ``section.key=value`` strings through the same parser as the file."""
        values = {}
        for item in overrides:
            name, sep, value = item.partition("=")
            section, dot, key = name.strip().partition(".")
            if not sep or not dot or not section or not key:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            values[(section, key)] = value
        return self.from_mapping(values, base=self)

    def to_dict(self) -> dict:
        return {f"{f.metadata['section']}.{self._key(f)}": getattr(self, f.name) for f in fields(self)}
