"""Run configuration: one INI-style file of ``key = value`` sections.

Sections and their keys::

    [data]        source (ngsim | highd), inputs, highd_meta, samples
    [preprocess]  cutoff_hz, stride_s, window_m, split_seed
    [model]       any ModelConfig field
    [train]       any TrainConfig field
    [ablation]    channels (e.g. 1,2,3), positions, motion
    [risk]        any RiskParams field, plus ax_step
    [run]         out_dir

Lists (``inputs``, ``highd_meta``, ``channels``) are comma separated.
Every default matches the reference parameter set.
"""
from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidParameter
from .model import AblationConfig, ModelConfig
from .risk import RiskParams
from .training import TrainConfig


@dataclass(frozen=True)
class PreprocessConfig:
    cutoff_hz: float = 1.0
    stride_s: float = 1.0
    window_m: float = 90.0
    split_seed: int = 0


@dataclass(frozen=True)
class DataConfig:
    source: str = "ngsim"
    inputs: tuple[str, ...] = ()
    highd_meta: tuple[str, ...] = ()
    samples: str = ""


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    risk: RiskParams = field(default_factory=RiskParams)
    ax_step: float = 0.5
    out_dir: str = "out"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def seeds(self) -> dict:
        return {"model": self.model.seed, "train": self.train.seed,
                "split": self.preprocess.split_seed}


_SECTIONS = {
    "data": DataConfig,
    "preprocess": PreprocessConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "ablation": AblationConfig,
    "risk": RiskParams,
}


def _coerce(text: str, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if text.strip().lower() in ("", "none", "null"):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(text, inner, key)
    if origin is tuple:
        parts = [p.strip() for p in text.replace("\n", ",").split(",") if p.strip()]
        return tuple(_coerce(p, args[0], key) for p in parts)
    try:
        if hint is bool:
            low = text.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
    except ValueError as exc:
        raise InvalidParameter(f"{key}: cannot read {text!r} as {hint.__name__}") from exc
    return text.strip()


def _build(cls, values: dict, section: str):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for key, text in values.items():
        if key not in hints:
            raise InvalidParameter(f"unknown key [{section}] {key}")
        kwargs[key] = _coerce(text, hints[key], f"[{section}] {key}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvalidParameter(f"[{section}]: {exc}") from exc


def parse_overrides(items) -> dict[str, dict[str, str]]:
    """``section.key=value`` strings into nested dicts."""
    out: dict[str, dict[str, str]] = {}
    for item in items or ():
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot:
            raise InvalidParameter(f"override must look like section.key=value, got {item!r}")
        out.setdefault(section, {})[key] = value
    return out


def load_config(path=None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Read a config file (optional) and apply ``overrides`` on top."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file {p} does not exist")
        try:
            parser.read(p, encoding="utf-8")
        except configparser.Error as exc:
            raise InvalidParameter(f"{p}: {exc}") from exc
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    for section, values in (overrides or {}).items():
        raw.setdefault(section, {}).update(values)
    known = set(_SECTIONS) | {"run"}
    unknown = set(raw) - known
    if unknown:
        raise InvalidParameter(f"unknown config sections: {sorted(unknown)}")
    risk_raw = dict(raw.get("risk", {}))
    ax_step = float(risk_raw.pop("ax_step", 0.5))
    parts = {}
    for section, cls in _SECTIONS.items():
        values = risk_raw if section == "risk" else raw.get(section, {})
        parts[section] = _build(cls, values, section)
    run = raw.get("run", {})
    extra = set(run) - {"out_dir"}
    if extra:
        raise InvalidParameter(f"unknown key(s) in [run]: {sorted(extra)}")
    if parts["data"].source not in ("ngsim", "highd"):
        raise InvalidParameter("[data] source must be ngsim or highd")
    return RunConfig(
        ax_step=ax_step,
        out_dir=run.get("out_dir", "out"),
        **parts,
    )
