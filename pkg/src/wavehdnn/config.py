"""Training configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace

ENV_PREFIX = "WAVEHDNN_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model: str = "wavehdnn"             # wavehdnn | lightgcn
    lr: float = 1e-3
    batch_size: int = 1024
    max_epochs: int = 300
    patience: int = 10
    eval_every: int = 1
    lambda_cl: float = 0.1
    lambda_reg: float = 1e-4
    tau: float = 0.2
    layers: int = 3
    dim: int = 64
    scale: float = 1.0                  # wavelet heat-kernel scale s
    cheb_order: int = 10
    wavelet_mode: str = "auto"          # auto | exact | chebyshev
    contrastive_negatives: str = "batch"  # batch | full
    seed: int = 0
    ablation: str = "full"              # full | no_het | no_wave

    def __post_init__(self):
        problems = []
        for name in ("lr", "batch_size", "patience", "eval_every", "tau", "dim", "cheb_order"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        for name in ("lambda_cl", "lambda_reg", "scale", "max_epochs", "layers"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        choices = {
            "model": ("wavehdnn", "lightgcn"),
            "wavelet_mode": ("auto", "exact", "chebyshev"),
            "contrastive_negatives": ("batch", "full"),
            "ablation": ("full", "no_het", "no_wave"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                problems.append(f"{name} must be one of {'|'.join(allowed)}")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def coerce(key: str, raw) -> object:
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    if not isinstance(raw, str):
        raw = str(raw)
    raw = raw.strip()
    try:
        if kind == "int":
            f = float(raw)
            if not f.is_integer():
                raise ValueError
            return int(f)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = coerce(key, value)
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key in _TYPES:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            out[key] = coerce(key, environ[name])
    return out


def load_config(path=None, overrides: dict | None = None, environ=None) -> TrainConfig:
    """Defaults, then the file, then ``WAVEHDNN_<KEY>`` variables, then ``overrides``."""
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read(), str(path)))
    values.update(env_overrides(environ))
    for k, v in (overrides or {}).items():
        values[k] = coerce(k, v)
    return TrainConfig(**values)
