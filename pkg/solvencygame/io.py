"""
Reading configuration files and writing outputs with their run manifests.
"""
import json
import logging
import math
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import pandas as pd
from attrs import asdict, define, field

from .exceptions import InvalidParameterError

logger = logging.getLogger(__name__)

MACHINE_FORMAT = "%.17g"


def normalize_key(key: str) -> str:
    return key.strip().replace("-", "_")


def read_config(path: Path | str) -> dict[str, str]:
    """
    Reads a plain-text ``key=value`` configuration file.

    Blank lines and ``#`` comments are ignored and ``-`` in keys is read as ``_``.

    Raises:
        InvalidParameterError: If a line has no ``=`` or a key is empty.
    """
    path = Path(path)
    if not path.is_file():
        raise InvalidParameterError(f"config file '{path}' not found")

    config = {}
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(f"{path}:{number}: expected 'key=value', got '{line}'")
        key, value = line.split("=", 1)
        key = normalize_key(key)
        if not key:
            raise InvalidParameterError(f"{path}:{number}: empty key")
        config[key] = value.strip()
    return config


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item"):
        return _jsonable(value.item())
    return value


def write_json(data, path: Path) -> Path:
    """Writes ``data`` as indented UTF-8 JSON. Infinite values are written as strings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2), encoding="utf-8")
    return path


def write_frame(df: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=MACHINE_FORMAT)
    return path


def package_version() -> str:
    try:
        return metadata.version("solvencygame")
    except metadata.PackageNotFoundError:
        return "unknown"


def manifest_path(output: Path) -> Path:
    output = Path(output)
    return output.with_name(f"{output.stem}.manifest.json")


@define
class RunManifest:
    """What produced an output: the command, its parameters, the software version and the output paths."""

    command: str
    parameters: dict
    seed: int | None = None
    outputs: list[str] = field(factory=list, converter=lambda paths: [str(p) for p in paths])
    version: str = field(factory=package_version)
    timestamp: str = field(factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def write(self, output: Path) -> Path:
        """Writes the manifest beside ``output`` as ``<stem>.manifest.json``."""
        path = manifest_path(output)
        write_json(asdict(self), path)
        logger.debug(f"manifest written to {path}")
        return path
