"""config.py

Loading and resolving run configurations.

Documents are JSON (optionally gzipped) or TOML.  Structural problems raise
:class:`ConfigSchemaError`, physical invariant violations
:class:`ConfigInvariantError`, and missing files
:class:`ConfigMissingFileError`; every problem carries its dotted field path.

Example configurations ship in ``lidarkit/data`` and are read through
``importlib.resources``.

Usage::

    from lidarkit.config import load_config, bundled_config

    cfg = load_config("run.toml")
    cfg = bundled_config("homogeneous")
"""

from __future__ import annotations

import gzip
import hashlib
import json
import tomllib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import ValidationError

from .errors import (
    ConfigInvariantError,
    ConfigMissingFileError,
    ConfigSchemaError,
    DomainError,
)
from .geometry import DetectorGeometry, TimeGrid
from .medium import MediumModel
from .models import MediumSpec, RunConfig
from .quadrature import QuadratureConfig

# ------------------------------------------------------------
# Constants
# ------------------------------------------------------------

_DATA_DIR = "data"
_BUNDLED_SUFFIX = ".json"
_UNHASHED = {"montecarlo": {"workers"}, "output": True}


@dataclass(frozen=True)
class ResolvedConfig:
    """A validated configuration with its domain objects built.

    Attributes:
        spec: The effective :class:`RunConfig` (overrides applied).
        medium_spec: The medium description, inline or loaded from file.
        medium: Built medium.
        geometry: Built detector geometry.
        grid: Built time grid.
        quadrature: Quadrature tolerances.
        config_hash: SHA-256 of the canonical effective configuration.
    """

    spec: RunConfig
    medium_spec: MediumSpec
    medium: MediumModel
    geometry: DetectorGeometry
    grid: TimeGrid
    quadrature: QuadratureConfig
    config_hash: str


# ------------------------------------------------------------
# Documents
# ------------------------------------------------------------

def _problems(exc: ValidationError, prefix: str = "") -> List[Tuple[str, str]]:
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        out.append((f"{prefix}{loc}" if prefix else loc, err["msg"]))
    return out


def parse_document(text: str, fmt: str, origin: str = "<config>") -> Dict[str, Any]:
    """Parse JSON or TOML text into a mapping."""
    try:
        data = tomllib.loads(text) if fmt == "toml" else json.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigSchemaError(f"cannot parse {origin}", [("<document>", str(exc))]) from exc
    if not isinstance(data, dict):
        raise ConfigSchemaError(f"cannot parse {origin}", [("<document>", "top level must be a table/object")])
    return data


def read_document(path: Union[Path, str], field: str = "<config>") -> Dict[str, Any]:
    """Read a ``.json``, ``.json.gz`` or ``.toml`` document.

    Raises:
        ConfigMissingFileError: If *path* does not exist.
        ConfigSchemaError: If the file cannot be parsed.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigMissingFileError(path, field)
    if path.name.endswith(".gz"):
        text = gzip.decompress(path.read_bytes()).decode("utf-8")
    else:
        text = path.read_text(encoding="utf-8")
    fmt = "toml" if path.suffix == ".toml" else "json"
    return parse_document(text, fmt, str(path))


def load_medium(path: Union[Path, str], field: str = "medium_path") -> Tuple[MediumSpec, MediumModel]:
    """Load a standalone medium profile file."""
    data = read_document(path, field)
    try:
        spec = MediumSpec.model_validate(data)
    except ValidationError as exc:
        raise ConfigSchemaError(f"invalid medium file {path}", _problems(exc, "medium.")) from exc
    try:
        return spec, spec.build()
    except DomainError as exc:
        raise ConfigInvariantError(f"invalid medium file {path}", [("medium", str(exc))]) from exc


# ------------------------------------------------------------
# Resolution
# ------------------------------------------------------------

def config_hash(spec: RunConfig, medium_spec: MediumSpec) -> str:
    """Stable hash of the effective configuration and its medium.

    Worker count and output settings do not change the signal and are left
    out, so the header is the same for any ``--workers`` or ``--out``.
    """
    payload = {
        "config": spec.model_dump(mode="json", exclude=_UNHASHED),
        "medium": medium_spec.model_dump(mode="json"),
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def apply_overrides(
    spec: RunConfig,
    mode: Optional[str] = None,
    out: Optional[str] = None,
    seed: Optional[int] = None,
    histories: Optional[int] = None,
    workers: Optional[int] = None,
) -> RunConfig:
    """Return a copy of *spec* with command-line overrides applied and re-validated."""
    data = spec.model_dump()
    if mode is not None:
        data["mode"] = mode
    if out is not None:
        data["output"]["path"] = out
    for key, value in (("seed", seed), ("histories", histories), ("workers", workers)):
        if value is not None:
            data["montecarlo"][key] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigSchemaError("invalid command-line override", _problems(exc)) from exc


def resolve(spec: RunConfig, base_dir: Optional[Path] = None) -> ResolvedConfig:
    """Build the domain objects of *spec*, collecting every invariant failure.

    Args:
        spec: A schema-valid configuration.
        base_dir: Directory that relative ``medium_path`` values refer to.

    Raises:
        ConfigMissingFileError: If ``medium_path`` does not exist.
        ConfigInvariantError: If a built object violates an invariant.
    """
    problems: List[Tuple[str, str]] = []

    if spec.medium is not None:
        medium_spec = spec.medium
        medium = None
        try:
            medium = medium_spec.build()
        except DomainError as exc:
            problems.append(("medium", str(exc)))
    else:
        path = Path(spec.medium_path)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        medium_spec, medium = load_medium(path)

    geometry = grid = None
    try:
        geometry = spec.geometry.build()
    except DomainError as exc:
        field = "geometry.theta0" if spec.geometry.theta0 is not None else "geometry"
        problems.append((field, str(exc)))
    try:
        grid = spec.time_grid.build()
    except DomainError as exc:
        problems.append(("time_grid", str(exc)))
    if grid is not None and spec.mode in ("mc", "validate"):
        try:
            grid.bin_edges(spec.montecarlo.bin_width)
        except DomainError as exc:
            problems.append(("montecarlo.bin_width", str(exc)))

    if problems:
        raise ConfigInvariantError("configuration violates physical invariants", problems)
    return ResolvedConfig(
        spec=spec,
        medium_spec=medium_spec,
        medium=medium,
        geometry=geometry,
        grid=grid,
        quadrature=spec.quadrature.build(),
        config_hash=config_hash(spec, medium_spec),
    )


def validate_document(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigSchemaError("configuration does not match the schema", _problems(exc)) from exc


def load_config(path: Union[Path, str]) -> ResolvedConfig:
    """Read, validate and resolve a configuration file.

    Raises:
        ConfigMissingFileError: If the file (or its ``medium_path``) is missing.
        ConfigSchemaError: If the document does not match the schema.
        ConfigInvariantError: If it violates a physical invariant.
    """
    path = Path(path)
    spec = validate_document(read_document(path))
    return resolve(spec, path.parent)


# ------------------------------------------------------------
# Bundled examples
# ------------------------------------------------------------

def list_bundled() -> List[str]:
    """Names of the example configurations shipped with the package."""
    root = resources.files("lidarkit").joinpath(_DATA_DIR)
    return sorted(
        p.name[: -len(_BUNDLED_SUFFIX)] for p in root.iterdir() if p.name.endswith(_BUNDLED_SUFFIX)
    )


def bundled_document(name: str) -> Dict[str, Any]:
    ref = resources.files("lidarkit").joinpath(f"{_DATA_DIR}/{name}{_BUNDLED_SUFFIX}")
    if not ref.is_file():
        raise ConfigMissingFileError(f"{_DATA_DIR}/{name}{_BUNDLED_SUFFIX}", "--example")
    return parse_document(ref.read_text(encoding="utf-8"), "json", name)


def bundled_config(name: str) -> ResolvedConfig:
    """Resolve a bundled example configuration by name (e.g. ``"homogeneous"``)."""
    return resolve(validate_document(bundled_document(name)))
