"""Flat ``key = value`` run configuration shared by the CLI and checkpoints."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import ModelConfig
from .pdb import ConfigError
from .training import TrainConfig


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def format_kv(values: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in values.items())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return "" if v is None else str(v)


def _coerce(key: str, value: str, kind):
    try:
        if kind is bool:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        if kind == "ratios":
            parts = tuple(float(p) for p in value.split(","))
            if len(parts) != 3:
                raise ValueError(value)
            return parts
        if kind == "optional_float":
            return float(value) if value else None
        if kind == "optional_path":
            return value or None
        return value
    except ValueError:
        raise ConfigError(f"invalid value {value!r} for {key}") from None


def _field_kinds(cls) -> dict[str, object]:
    kinds = {}
    for f in fields(cls):
        t = f.type if not isinstance(f.type, str) else {"int": int, "float": float, "bool": bool, "str": str, "float | None": "optional_float"}.get(
            f.type, str
        )
        kinds[f.name] = t
    return kinds


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: str | None = None
    out: str = "runs/default"
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    stride: int = 1
    eval_stride: int = 1
    fill_forward: bool = False
    mase_insample: bool = False
    seasonal_period: int = 1
    history_timing: bool = True

    _RUN_KINDS = {
        "data": "optional_path",
        "out": str,
        "split": "ratios",
        "stride": int,
        "eval_stride": int,
        "fill_forward": bool,
        "mase_insample": bool,
        "seasonal_period": int,
        "history_timing": bool,
    }

    @classmethod
    def known_keys(cls) -> set[str]:
        return set(_field_kinds(ModelConfig)) | set(_field_kinds(TrainConfig)) | set(cls._RUN_KINDS)

    def update(self, values: dict[str, str]) -> "RunConfig":
        mk, tk = _field_kinds(ModelConfig), _field_kinds(TrainConfig)
        for key, raw in values.items():
            if key in mk:
                setattr(self.model, key, _coerce(key, raw, mk[key]))
            elif key in tk:
                setattr(self.train, key, _coerce(key, raw, tk[key]))
            elif key in self._RUN_KINDS:
                setattr(self, key, _coerce(key, raw, self._RUN_KINDS[key]))
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return self

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        if self.stride < 1 or self.eval_stride < 1:
            raise ConfigError("stride and eval_stride must be >= 1")
        if self.seasonal_period < 1:
            raise ConfigError(f"seasonal_period must be >= 1, got {self.seasonal_period}")
        r = self.split
        if len(r) != 3 or min(r) <= 0 or abs(sum(r) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be three positive numbers summing to 1, got {r}")
        return self

    def to_dict(self) -> dict:
        d = {}
        d.update(self.model.to_dict())
        d.update(self.train.to_dict())
        for key in self._RUN_KINDS:
            d[key] = getattr(self, key)
        return d

    def to_text(self) -> str:
        return format_kv(self.to_dict())

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        return cls().update(parse_kv(path.read_text(encoding="utf-8"), str(path)))


def model_config_from_kv(values: dict[str, str]) -> ModelConfig:
    mk = _field_kinds(ModelConfig)
    cfg = ModelConfig()
    for key, raw in values.items():
        if key in mk:
            setattr(cfg, key, _coerce(key, raw, mk[key]))
    return cfg
