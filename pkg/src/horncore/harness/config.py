"""Run configuration files.

A config is UTF-8 text made of ``[section]`` headers and ``key = value``
lines; ``#`` and ``;`` start comments.  Recognised sections:

``[model]``
    ``preset`` names a built-in :class:`~horncore.hornet.ModelSpec`; any
    ModelSpec field may follow to override it.  Tuple fields take
    comma-separated values (``depths = 2, 3, 18, 2``).
``[optimizer]``
    ``name`` (``adamw`` or ``sgd``), ``lr``, ``weight_decay``, ``betas``,
    ``eps``, ``momentum``.
``[train]``
    ``steps``, ``batch_size``, ``grad_clip_norm`` (empty for none), ``seed``,
    ``threads``, ``log_every``.
``[data]``
    ``dataset`` is ``synthetic`` (with ``samples``, ``noise``, ``seed``) or
    ``idx`` (with ``images`` and ``labels`` file paths).
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import os
import types
import typing
from dataclasses import dataclass, field

from ..hornet import ModelSpec, get_preset

_TUPLE_FIELDS = {"depths": int, "orders": int, "mixers": str}


@dataclass
class DataConfig:
    dataset: str = "synthetic"
    samples: int = 2000
    noise: float = 0.1
    seed: int = 0
    images: str | None = None
    labels: str | None = None

    def __post_init__(self):
        if self.dataset not in ("synthetic", "idx"):
            raise ValueError(f"dataset must be 'synthetic' or 'idx', got {self.dataset!r}")
        if self.dataset == "idx" and not (self.images and self.labels):
            raise ValueError("idx datasets need both 'images' and 'labels' paths")


@dataclass
class RunConfig:
    model: ModelSpec = field(default_factory=lambda: get_preset("micro-iso"))
    optimizer: str = "adamw"
    lr: float = 2e-3
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    momentum: float = 0.9
    steps: int = 1000
    batch_size: int = 64
    grad_clip_norm: float | None = None
    seed: int = 0
    threads: int = 1
    log_every: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    preset: str | None = "micro-iso"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _coerce(value: str, tp):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value.strip() == "" or value.strip().lower() == "none":
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner)
    if tp is bool or tp == "bool":
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if tp is int:
        return int(value)
    if tp is float:
        return float(value)
    return value.strip()


def _model_fields():
    hints = typing.get_type_hints(ModelSpec)
    return {f.name: hints[f.name] for f in dataclasses.fields(ModelSpec)}


def _parse_model(section) -> tuple[ModelSpec, str | None]:
    preset = section.get("preset")
    base = get_preset(preset) if preset else ModelSpec()
    hints = _model_fields()
    changes = {}
    for key, raw in section.items():
        if key == "preset":
            continue
        if key not in hints:
            raise ValueError(f"unknown model field {key!r}")
        if key in _TUPLE_FIELDS:
            changes[key] = tuple(_TUPLE_FIELDS[key](v.strip()) for v in raw.split(",") if v.strip())
        else:
            changes[key] = _coerce(raw, hints[key])
    return (base.replace(**changes) if changes else base), preset


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"malformed config: {exc}") from exc
    known = {"model", "optimizer", "train", "data"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    kwargs: dict = {}
    if cp.has_section("model"):
        kwargs["model"], kwargs["preset"] = _parse_model(cp["model"])
    hints = typing.get_type_hints(RunConfig)
    if cp.has_section("optimizer"):
        for key, raw in cp["optimizer"].items():
            if key == "name":
                kwargs["optimizer"] = raw.strip()
            elif key == "betas":
                kwargs["betas"] = tuple(float(v) for v in raw.split(","))
            elif key in ("lr", "weight_decay", "eps", "momentum"):
                kwargs[key] = float(raw)
            else:
                raise ValueError(f"unknown optimizer key {key!r}")
    if cp.has_section("train"):
        for key, raw in cp["train"].items():
            if key not in ("steps", "batch_size", "grad_clip_norm", "seed", "threads", "log_every"):
                raise ValueError(f"unknown train key {key!r}")
            kwargs[key] = _coerce(raw, hints[key])
    if cp.has_section("data"):
        dhints = typing.get_type_hints(DataConfig)
        dkw = {}
        for key, raw in cp["data"].items():
            if key not in dhints:
                raise ValueError(f"unknown data key {key!r}")
            dkw[key] = _coerce(raw, dhints[key])
        kwargs["data"] = DataConfig(**dkw)
    return RunConfig(**kwargs)


def load_config(path: str | os.PathLike) -> RunConfig:
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if v is None:
        return ""
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig; the model is written field by field (no preset)."""
    out = io.StringIO()
    out.write("[model]\n")
    for key, value in cfg.model.to_dict().items():
        out.write(f"{key} = {_fmt(value)}\n")
    out.write("\n[optimizer]\n")
    out.write(f"name = {cfg.optimizer}\n")
    for key in ("lr", "weight_decay", "betas", "eps", "momentum"):
        out.write(f"{key} = {_fmt(getattr(cfg, key))}\n")
    out.write("\n[train]\n")
    for key in ("steps", "batch_size", "grad_clip_norm", "seed", "threads", "log_every"):
        out.write(f"{key} = {_fmt(getattr(cfg, key))}\n")
    out.write("\n[data]\n")
    for key, value in dataclasses.asdict(cfg.data).items():
        if value is not None:
            out.write(f"{key} = {_fmt(value)}\n")
    return out.getvalue()
