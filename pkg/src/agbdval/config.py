"""Run configuration for the ``validate`` pipeline."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Any

from .geom import AlbersSpec


class ConfigError(ValueError):
    pass


PATH_KEYS = ("raster", "inundation", "zones", "plots", "weights", "pred_variance")
REQUIRED = ("raster", "zones", "plots", "output_dir")
FILTER_MODES = ("auto", "fixed", "off")


@dataclass(frozen=True)
class RunConfig:
    raster: Path
    zones: Path
    plots: Path
    output_dir: Path
    raster_crs: str = "planar"
    inundation: Path | None = None
    weights: Path | None = None
    pred_variance: Path | None = None
    projection: AlbersSpec = field(default_factory=AlbersSpec)
    mask_threshold: float = 0.5
    filter_mode: str = "auto"
    filter_threshold: float | None = None
    filter_group_key: str | None = None
    sigma_ddof: int = 1
    year_window: tuple[int, int] | None = None
    subsample_window: int = 10
    bin_width: float = 50.0
    agreement_c: float = 2.0
    critical_t: float = 2.0
    qq_points: int = 101
    variance_estimator: str = "stratified"
    plot_grouping: str = "spatial"
    seed: int = 42

    def canonical(self) -> dict:
        """JSON-ready dict with paths as given (used for the config hash)."""
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, Path):
                d[k] = str(v)
            elif isinstance(v, tuple):
                d[k] = list(v)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


_NUMBER = (int, float)

# key -> (accepted JSON types, check or None, message)
_SCHEMA: dict[str, tuple[tuple[type, ...], Any]] = {
    "raster": ((str,), None),
    "zones": ((str,), None),
    "plots": ((str,), None),
    "output_dir": ((str,), None),
    "raster_crs": ((str,), lambda v: v in ("planar", "geographic") or "must be 'planar' or 'geographic'"),
    "inundation": ((str, type(None)), None),
    "weights": ((str, type(None)), None),
    "pred_variance": ((str, type(None)), None),
    "projection": ((dict,), None),
    "mask_threshold": (_NUMBER, lambda v: 0 <= v <= 1 or "must lie in [0, 1]"),
    "filter_mode": ((str,), lambda v: v in FILTER_MODES or f"must be one of {', '.join(FILTER_MODES)}"),
    "filter_threshold": ((int, float, type(None)), None),
    "filter_group_key": ((str, type(None)), None),
    "sigma_ddof": ((int,), lambda v: v in (0, 1) or "must be 0 or 1"),
    "year_window": ((list, type(None)), None),
    "subsample_window": ((int,), lambda v: v >= 1 or "must be >= 1"),
    "bin_width": (_NUMBER, lambda v: v > 0 or "must be > 0"),
    "agreement_c": (_NUMBER, lambda v: v > 0 or "must be > 0"),
    "critical_t": (_NUMBER, lambda v: v > 0 or "must be > 0"),
    "qq_points": ((int,), lambda v: v >= 2 or "must be >= 2"),
    "variance_estimator": (
        (str,),
        lambda v: v in ("stratified", "bechtold_patterson") or "must be 'stratified' or 'bechtold_patterson'",
    ),
    "plot_grouping": ((str,), lambda v: v in ("spatial", "unit_id") or "must be 'spatial' or 'unit_id'"),
    "seed": ((int,), None),
}

CONFIG_KEYS = tuple(_SCHEMA)
_PROJECTION_KEYS = tuple(AlbersSpec.__dataclass_fields__)


def edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _suggest(key: str, known) -> str:
    best = min(known, key=lambda k: (edit_distance(key, k), k))
    if edit_distance(key, best) <= 2:
        return f"; did you mean {best!r}?"
    return ""


def _check_type(key: str, value, types) -> None:
    # bool is an int subclass; never accept it for numeric keys
    if isinstance(value, bool) or not isinstance(value, types):
        names = "/".join("null" if t is type(None) else t.__name__ for t in types)
        raise ConfigError(f"{key}: expected {names}, got {type(value).__name__}")


def config_from_dict(raw: dict, base_dir: str | Path = ".", check_paths: bool = True) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in raw:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r}{_suggest(key, CONFIG_KEYS)}")
    for key in REQUIRED:
        if raw.get(key) in (None, ""):
            raise ConfigError(f"{key}: required path missing")
    for key, value in raw.items():
        types, check = _SCHEMA[key]
        _check_type(key, value, types)
        if check is not None and value is not None:
            ok = check(value)
            if ok is not True:
                raise ConfigError(f"{key} {ok}")

    base = Path(base_dir)
    kw: dict[str, Any] = {}
    for key, value in raw.items():
        if key in PATH_KEYS or key == "output_dir":
            kw[key] = None if value is None else (base / value if not Path(value).is_absolute() else Path(value))
        elif key == "projection":
            for pk in value:
                if pk not in _PROJECTION_KEYS:
                    raise ConfigError(f"unknown key 'projection.{pk}'{_suggest(pk, _PROJECTION_KEYS)}")
                _check_type(f"projection.{pk}", value[pk], _NUMBER)
            try:
                kw[key] = AlbersSpec(**{k: float(v) for k, v in value.items()})
            except ValueError as exc:
                raise ConfigError(f"projection: {exc}") from None
        elif key == "year_window":
            if value is not None:
                if len(value) != 2 or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
                    raise ConfigError("year_window must be [min_year, max_year] integers")
                if value[0] > value[1]:
                    raise ConfigError("year_window must satisfy min_year <= max_year")
                value = (value[0], value[1])
            kw[key] = value
        elif key in ("mask_threshold", "bin_width", "agreement_c", "critical_t", "filter_threshold"):
            kw[key] = None if value is None else float(value)
        else:
            kw[key] = value

    mode = kw.get("filter_mode", "auto")
    if mode == "fixed" and kw.get("filter_threshold") is None:
        raise ConfigError("filter_threshold is required when filter_mode is 'fixed'")
    if mode != "fixed" and kw.get("filter_threshold") is not None:
        raise ConfigError("filter_threshold is only valid with filter_mode 'fixed'")

    cfg = RunConfig(**kw)
    if check_paths:
        for key in PATH_KEYS:
            p = getattr(cfg, key)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{key}: file not found: {p}")
    return cfg


def parse_config(src: str | Path | IO[str], overrides: dict | None = None, check_paths: bool = True) -> RunConfig:
    """Parse a JSON config; relative paths resolve against the config file's directory.

    ``overrides`` (already JSON-typed) replace keys from the file.
    """
    if hasattr(src, "read"):
        text, base = src.read(), Path(".")
    else:
        path = Path(src)
        text, base = path.read_text(encoding="utf-8"), path.parent
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    if overrides:
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        raw = {**raw, **overrides}
    return config_from_dict(raw, base, check_paths=check_paths)


def coerce_override(key: str, text: str):
    """Turn a ``--key value`` command-line string into the JSON type the key expects."""
    if key not in _SCHEMA:
        raise ConfigError(f"unknown key {key!r}{_suggest(key, CONFIG_KEYS)}")
    types, _ = _SCHEMA[key]
    if text.lower() == "null" and type(None) in types:
        return None
    if str in types:
        return text
    if dict in types or list in types:
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            raise ConfigError(f"{key}: expected JSON, got {text!r}") from None
    if types == (int,):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected int, got {text!r}") from None
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected number, got {text!r}") from None
