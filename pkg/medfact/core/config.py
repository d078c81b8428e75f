"""Process-level settings read from the environment, and run config validation."""

from __future__ import annotations

import configparser
import os
from pathlib import Path
from typing import Any, Dict

from dotenv import load_dotenv
from pydantic import ValidationError

from medfact.core.errors import ConfigError
from medfact.schemas.config import DEFAULT_PANEL, PipelineConfig

load_dotenv(override=False)

# NCBI etiquette parameters sent with every E-utilities request
NCBI_TOOL = os.getenv("NCBI_TOOL", "medfact")
NCBI_EMAIL = os.getenv("NCBI_EMAIL")


def _section_dict(parser: configparser.ConfigParser, name: str) -> Dict[str, str]:
    return {key: value for key, value in parser.items(name, raw=True)}


def _field_path(error: Dict[str, Any]) -> str:
    loc = [str(part) for part in error.get("loc", ()) if part not in ("__root__",)]
    return ".".join(loc) or "config"


def parse_config_text(text: str, source: str = "<string>") -> PipelineConfig:
    """Validate INI text into a PipelineConfig."""

    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc)) from exc

    data: Dict[str, Any] = {}
    roles: Dict[str, Dict[str, str]] = {}
    panel: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        values = _section_dict(parser, section)
        if section.startswith("role."):
            roles[section[len("role."):]] = values
        elif section.startswith("panel."):
            panel[section[len("panel."):]] = values
        elif section == "pipeline":
            data.update(values)
        elif section in ("gateway", "bootstrap", "ncbi", "bioc"):
            data[section] = values
        else:
            raise ConfigError(section, "unknown section")

    gateway_defaults = data.get("gateway", {})
    data["roles"] = {name: {**gateway_defaults, **values} for name, values in roles.items()}
    if not panel:
        panel = {name: dict(values) for name, values in DEFAULT_PANEL.items()}
    data["panel"] = {name: {**gateway_defaults, **values} for name, values in panel.items()}

    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(_field_path(first), first.get("msg", "invalid value")) from exc


def validate_config(path: str | Path) -> PipelineConfig:
    """Read and validate a pipeline config file, applying defaults."""

    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("file", f"cannot read {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def apply_overrides(config: PipelineConfig, **overrides: Any) -> PipelineConfig:
    """Re-validate a config with command-line values layered on top; None values are ignored."""

    updates = {key: value for key, value in overrides.items() if value is not None}
    if not updates:
        return config
    try:
        return PipelineConfig.model_validate({**config.model_dump(), **updates})
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(_field_path(first), first.get("msg", "invalid value")) from exc
