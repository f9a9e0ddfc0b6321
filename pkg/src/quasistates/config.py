"""Flat ``key = value`` pipeline configuration.

Blank lines and ``#`` comments are ignored. Every key must be a field of
:class:`PipelineConfig`; anything else is rejected so typos fail loudly.
Values written ``auto`` select the data-driven default described next to
the field.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError

AUTO = "auto"


@dataclass(frozen=True)
class PipelineConfig:
    # inputs; empty means "whatever synth wrote into the output directory"
    prices: str = ""
    sectors: str = ""
    scenario: str = ""  # bundled scenario name or JSON file, used by `synth`
    n_days: int = 0  # 0 -> scenario default length

    horizon: int = 1
    norm_window: int = 13
    corr_window: int = 42
    corr_step: int = 1

    threshold: float = 1.564
    seed: int = 0
    restarts: int = 10

    pot_window: int = 1000
    pot_shift: int = 21
    bandwidth: str = AUTO  # auto -> 1.06 sigma L^(-1/5)
    n_grid: int = 101
    tau_policy: str = "tau1"
    count_min: float = 10.0
    prominence: float = 0.05
    references: str = AUTO  # auto -> every live cluster, else "1;4"
    window_figures: bool = False

    merge_tol: str = AUTO  # auto -> threshold
    merge_support: int = 2
    apply_merges: bool = True

    fp_target: str = AUTO  # auto -> newest merged cluster, else most occupied
    fp_interval: str = AUTO  # auto -> potential window most occupied by the target, else "t1:t2"
    fp_references: str = AUTO  # auto -> the two clusters least present in the interval
    fp_tol: float = 1e-10
    fp_max_iter: int = 10_000
    fp_starts: int = 5
    consistency_tol: str = AUTO  # auto -> 0.1 x smallest distance between live centers

    out: str = "out"

    def canonical(self) -> str:
        """Sorted ``key=value`` lines of every field except the output location."""
        items = sorted((f.name, getattr(self, f.name)) for f in fields(self) if f.name != "out")
        return "".join(f"{k}={_render(v)}\n" for k, v in items)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def replace(self, **changes) -> "PipelineConfig":
        return validate(dataclasses.replace(self, **changes))


def _render(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TYPES = {f.name: f.type for f in fields(PipelineConfig)}
_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(key, text):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigurationError(f"{key}: expected {kind}, got {text!r}") from None
    if kind == "bool":
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigurationError(f"{key}: expected true/false, got {text!r}")
    return text


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _convert(key, value)
    return validate(PipelineConfig(**values))


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


_NONNEGATIVE = {"seed", "n_days"}


def validate(cfg: PipelineConfig) -> PipelineConfig:
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.type in ("int", "float") and not isinstance(v, bool):
            if f.name in _NONNEGATIVE:
                if v < 0:
                    raise ConfigurationError(f"{f.name} must be >= 0")
            elif not v > 0:
                raise ConfigurationError(f"{f.name} must be positive")
    if cfg.tau_policy not in ("tau1", "extrapolate"):
        raise ConfigurationError(f"tau_policy must be tau1 or extrapolate, got {cfg.tau_policy!r}")
    if cfg.norm_window < 2:
        raise ConfigurationError("norm_window must be >= 2")
    if cfg.corr_window < 2:
        raise ConfigurationError("corr_window must be >= 2")
    for key in ("bandwidth", "merge_tol", "consistency_tol"):
        optional_float(cfg, key)
    for key in ("references", "fp_references"):
        id_list(cfg, key)
    optional_int(cfg, "fp_target")
    interval(cfg)
    return cfg


def optional_float(cfg, key):
    text = getattr(cfg, key)
    if text == AUTO:
        return None
    try:
        value = float(text)
    except ValueError:
        raise ConfigurationError(f"{key}: expected a number or 'auto', got {text!r}") from None
    if not value > 0:
        raise ConfigurationError(f"{key} must be positive")
    return value


def optional_int(cfg, key):
    text = getattr(cfg, key)
    if text == AUTO:
        return None
    try:
        return int(text)
    except ValueError:
        raise ConfigurationError(f"{key}: expected an integer or 'auto', got {text!r}") from None


def id_list(cfg, key):
    text = getattr(cfg, key)
    if text == AUTO:
        return None
    try:
        ids = tuple(int(p) for p in text.replace(",", ";").split(";") if p.strip())
    except ValueError:
        raise ConfigurationError(f"{key}: expected ids separated by ';', got {text!r}") from None
    if not ids:
        raise ConfigurationError(f"{key}: empty id list")
    return ids


def interval(cfg):
    text = cfg.fp_interval
    if text == AUTO:
        return None
    try:
        a, b = (int(p) for p in text.split(":"))
    except ValueError:
        raise ConfigurationError(f"fp_interval: expected 't1:t2' or 'auto', got {text!r}") from None
    if b < a:
        raise ConfigurationError("fp_interval: end before start")
    return a, b
