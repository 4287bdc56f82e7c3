"""
Run configuration: command-line flag > `key = value` config file > RADCL_SEED
(seed only) > built-in default. Every run records what it resolved to in a
manifest next to its primary output.
"""

import json
import os
from dataclasses import dataclass, field

from constants import LABEL_SCHEMA_VERSION, SEED_ENV_VAR
from utils import ConfigError, ensure_parent_dir, sha256_file

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config_file(path: str) -> dict[str, str]:
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    for line_no, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{line_no}: empty key")
        values[key.replace("-", "_")] = value
    return values


def coerce(text: str, default):
    """Parse a config-file string into the type of the default value."""
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as e:
        raise ConfigError(f"cannot parse {text!r} as {type(default).__name__}") from e
    if default is None and text.lower() in ("none", "null", ""):
        return None
    if default is None:
        for cast in (int, float):
            try:
                return cast(text)
            except ValueError:
                pass
    return text


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.values.get("seed", 0))

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)


def resolve(command: str, flags: dict, defaults: dict, config_path: str | None = None) -> RunConfig:
    """flags holds None for every option the user did not pass."""
    file_values = parse_config_file(config_path) if config_path else {}
    values = {}
    for key, default in defaults.items():
        if flags.get(key) is not None:
            values[key] = flags[key]
        elif key in file_values:
            values[key] = coerce(file_values[key], default)
        elif key == "seed" and os.environ.get(SEED_ENV_VAR):
            try:
                values[key] = int(os.environ[SEED_ENV_VAR])
            except ValueError as e:
                raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from e
        else:
            values[key] = default
    return RunConfig(command, values)


def manifest_path(output: str) -> str:
    return f"{output}.manifest.json"


def write_manifest(output: str, run_config: RunConfig, inputs=(), artifacts=()) -> str:
    """Write <output>.manifest.json; no timestamps, so identical runs give identical manifests."""
    manifest = {
        "command": run_config.command,
        "config": run_config.values,
        "seed": run_config.seed,
        "label_schema_version": LABEL_SCHEMA_VERSION,
        "inputs": {p: sha256_file(p) for p in inputs if p and os.path.isfile(p)},
        "artifacts": {p: sha256_file(p) for p in artifacts if p and os.path.isfile(p)},
    }
    path = manifest_path(output)
    ensure_parent_dir(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    return path
