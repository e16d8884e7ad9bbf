"""
Run configuration: one pydantic model per pipeline stage, a plain-text file
format and environment-driven runtime settings.

Config files look like:

    # comments start with '#'
    [train]
    epochs = 150
    patch_size = 300

    [postprocess]
    blur_kernel = 11

Unknown sections, unknown keys and unparsable values raise ConfigError with
the file and line. Tuple values are written comma-separated, unset optional
values as `none`.
"""
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, Union

from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from histotnet.core.synth import SynthConfig
from histotnet.ensemble import BlendConfig
from histotnet.errors import ConfigError
from histotnet.nn.gradcheck import GradcheckConfig
from histotnet.nn.train import ClassifierTrainConfig, PredictConfig, TrainConfig
from histotnet.postprocess import PostprocessConfig
from histotnet.render import RenderConfig
from histotnet.stacking.selection import StackConfig
from histotnet.tiling import TilingConfig

TOY_EPOCH_DIVISOR = 10
TOY_PATCH_CAP = 64
TOY_STRIDE_CAP = 16
TOY_DOWNSAMPLE_CAP = 4

SECTIONS: Dict[str, Type[BaseModel]] = {
    "synth": SynthConfig,
    "tiling": TilingConfig,
    "train": TrainConfig,
    "classify": ClassifierTrainConfig,
    "predict": PredictConfig,
    "postprocess": PostprocessConfig,
    "blend": BlendConfig,
    "stack": StackConfig,
    "gradcheck": GradcheckConfig,
    "render": RenderConfig,
}


class RuntimeSettings(BaseSettings):
    """Process-level switches read from HISTOTNET_* environment variables."""

    model_config = SettingsConfigDict(env_prefix="HISTOTNET_", extra="ignore")

    toy: bool = Field(default=False, description="Scale epochs and sizes down for CI runs")
    verbose: bool = Field(default=False, description="Print tracebacks and per-stage logs")
    output_dir: Path = Field(default=Path("runs"), description="Default output directory")


class RunConfig(BaseModel):
    """Effective configuration of a run, one attribute per section."""

    model_config = ConfigDict(extra="forbid")

    synth: SynthConfig = Field(default_factory=SynthConfig)
    tiling: TilingConfig = Field(default_factory=TilingConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    classify: ClassifierTrainConfig = Field(default_factory=ClassifierTrainConfig)
    predict: PredictConfig = Field(default_factory=PredictConfig)
    postprocess: PostprocessConfig = Field(default_factory=PostprocessConfig)
    blend: BlendConfig = Field(default_factory=BlendConfig)
    stack: StackConfig = Field(default_factory=StackConfig)
    gradcheck: GradcheckConfig = Field(default_factory=GradcheckConfig)
    render: RenderConfig = Field(default_factory=RenderConfig)

    def with_overrides(self, section: str, **flags: Any) -> "RunConfig":
        """
        Copy with some keys of one section replaced; None flags are ignored.

        Raises:
            ConfigError: Unknown section, unknown key or invalid value
        """
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        values = {key: value for key, value in flags.items() if value is not None}
        if not values:
            return self
        current = getattr(self, section).model_dump()
        current.update(values)
        try:
            updated = SECTIONS[section].model_validate(current)
        except PydanticValidationError as exc:
            raise ConfigError(f"[{section}] {_first_problem(exc)}") from exc
        return self.model_copy(update={section: updated})

    def to_text(self) -> str:
        """Render in the config file format; load_config reads it back unchanged."""
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for key, value in getattr(self, name).model_dump(mode="json").items():
                lines.append(f"{key} = {_format_value(value)}")
            lines.append("")
        return "\n".join(lines)

    def scaled_for_toy(self) -> "RunConfig":
        """Smaller epochs, patches, strides and downsampling for quick runs."""
        train, classify, tiling = self.train, self.classify, self.tiling
        return self.model_copy(
            update={
                "train": train.model_copy(
                    update={
                        "epochs": max(1, train.epochs // TOY_EPOCH_DIVISOR),
                        "downsampled_epochs": max(1, train.downsampled_epochs // TOY_EPOCH_DIVISOR),
                        "patch_size": min(train.patch_size, TOY_PATCH_CAP),
                    }
                ),
                "classify": classify.model_copy(
                    update={
                        "epochs": max(1, classify.epochs // TOY_EPOCH_DIVISOR),
                        "patch_size": min(classify.patch_size, TOY_PATCH_CAP),
                    }
                ),
                "tiling": tiling.model_copy(
                    update={
                        "patch_size": min(tiling.patch_size, TOY_PATCH_CAP),
                        "stride": min(tiling.stride, TOY_STRIDE_CAP),
                        "downsample_factor": min(tiling.downsample_factor, TOY_DOWNSAMPLE_CAP),
                    }
                ),
            }
        )


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        # a lone item keeps a trailing comma so it parses back as a tuple
        joined = ",".join(_format_value(v) for v in value)
        return joined + "," if len(value) == 1 else joined
    return str(value)


def _parse_value(text: str) -> Any:
    text = text.strip()
    if text.lower() in ("none", "null"):
        return None
    if "," in text:
        return [item.strip() for item in text.split(",") if item.strip()]
    return text


def _first_problem(exc: PydanticValidationError) -> str:
    error = exc.errors()[0]
    where = ".".join(str(part) for part in error.get("loc", ()))
    return f"{where}: {error.get('msg', 'invalid value')}"


def parse_config(text: str, path: Optional[str] = None) -> RunConfig:
    """
    Parse config text.

    Raises:
        ConfigError: With `path` and the offending line number
    """
    raw: Dict[str, Dict[str, Any]] = {}
    key_lines: Dict[Tuple[str, str], int] = {}
    section: Optional[str] = None

    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", path, number)
            raw.setdefault(section, {})
            continue
        key, sep, value = stripped.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", path, number)
        if section is None:
            raise ConfigError(f"key {key!r} appears before any [section]", path, number)
        if key not in SECTIONS[section].model_fields:
            raise ConfigError(f"unknown key {key!r} in [{section}]", path, number)
        if key in raw[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", path, number)
        raw[section][key] = _parse_value(value)
        key_lines[(section, key)] = number

    sections = {}
    for name, values in raw.items():
        try:
            sections[name] = SECTIONS[name].model_validate(values)
        except PydanticValidationError as exc:
            loc = exc.errors()[0].get("loc", ())
            line = key_lines.get((name, str(loc[0]))) if loc else None
            raise ConfigError(f"[{name}] {_first_problem(exc)}", path, line) from exc
    return RunConfig(**sections)


def load_config(path: Union[str, Path, None] = None) -> RunConfig:
    """Read a config file; None gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config ({exc.strerror})", str(path)) from exc
    return parse_config(text, str(path))


__all__ = [
    "SECTIONS",
    "RunConfig",
    "RuntimeSettings",
    "load_config",
    "parse_config",
]
