"""Run-config file: flat ``key = value`` lines grouped under ``[section]`` headers.

Sections: ``[run]`` (RunConfig fields), ``[approx]`` (ApproxConfig), ``[refine]``
(RefineConfig), ``[wcl]`` (WCLConfig). Unknown sections or keys are rejected.
``preset = desk`` in ``[approx]``/``[refine]`` starts from the reduced desk-scale sizes.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .approx import ApproxConfig
from .refine import RefineConfig, WCLConfig
from .training import RunConfig


class ConfigError(ValueError):
    pass


# what the CLI uses when no --config is given
DESK_CONFIG = """\
[run]
batch_size = 32
max_steps = 1500

[approx]
preset = desk

[refine]
preset = desk
"""

SECTIONS = {"run": RunConfig, "approx": ApproxConfig, "refine": RefineConfig, "wcl": WCLConfig}


def _coerce(cls, key: str, raw: str):
    field = {f.name: f for f in dataclasses.fields(cls)}[key]
    default = field.default
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if default is None:
            return None if raw.strip().lower() in ("", "none") else raw.strip()
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{cls.__name__}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str, source: str = "<string>") -> dict:
    """Parse config text into ``{section: dataclass instance}`` with defaults filled in."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: malformed config: {exc}") from None
    out = {}
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]; expected one of {sorted(SECTIONS)}")
    for name, cls in SECTIONS.items():
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs, preset = {}, None
        if cp.has_section(name):
            for key, raw in cp.items(name):
                if key == "preset" and name in ("approx", "refine"):
                    preset = raw.strip()
                    if preset not in ("desk", "full"):
                        raise ConfigError(f"{source}: [{name}] preset must be 'desk' or 'full', got {preset!r}")
                    continue
                if key not in known:
                    raise ConfigError(f"{source}: unknown key {key!r} in [{name}]; known keys: {sorted(known)}")
                kwargs[key] = _coerce(cls, key, raw)
        try:
            out[name] = cls.desk(**kwargs) if preset == "desk" else cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: invalid [{name}]: {exc}") from None
    return out


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p))


def dump_config(cfg: dict) -> str:
    lines = []
    for name, obj in cfg.items():
        lines.append(f"[{name}]")
        for k, v in dataclasses.asdict(obj).items():
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)
