"""Flat ``key = value`` run configuration."""
from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path

from tvts.errors import ConfigError
from tvts.objectives import LossConfig
from tvts.textenc import TextEncoderConfig
from tvts.videnc import VideoEncoderConfig

REGIMES = ("FT", "FF", "PF")


@dataclass
class RunConfig:
    seed: int = 0
    batch_size: int = 16
    steps: int = 2000
    eval_interval: int = 250
    regime: str = "PF"
    rho: float = 0.5
    K: int = 4
    l: float = 5.0
    lam: float = 2.0
    tau: float = 0.05
    L_tune: int = -1            # -1: derive from regime
    lr_new: float = 1e-3
    lr_inherited: float = 1e-3
    weight_decay: float = 0.05
    warmup: int = 100
    schedule: str = "cosine"    # cosine | constant
    # video encoder
    L_V: int = 4
    D_V: int = 64
    heads: int = 4
    P: int = 8
    H: int = 32
    W: int = 32
    T: int = 8
    D: int = 32
    # text encoder
    L_T: int = 4
    D_T: int = 64
    text_heads: int = 4
    context_len: int = 16
    # sorting head
    head_depth: int = 2
    # data
    data_dir: str = ""
    out_dir: str = "runs/default"
    fps: int = 2
    duration: int = 23
    n_train: int = 2000
    n_heldout: int = 64
    caption_fraction: float = 0.1
    data_seed: int = 7
    workers: int = 1
    # evaluation
    eval_size: int = 64
    eval_seed: int = 1234
    dsl_inv_temp: float = 100.0
    mc_candidates: int = 8
    init_checkpoint: str = ""
    dtype: str = "f32"

    def __post_init__(self):
        if not self.data_dir:
            self.data_dir = os.environ.get("TVTS_DATA_DIR", "data")
        self.validate()

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"schedule must be 'cosine' or 'constant', got {self.schedule!r}")
        if not 0 <= self.rho < 1:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")
        if self.L_tune != -1 and not 0 <= self.L_tune <= self.L_T:
            raise ConfigError(f"L_tune={self.L_tune} outside [0, {self.L_T}]")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"dtype must be f32 or f64, got {self.dtype!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.video_config()
        self.loss_config()

    @property
    def effective_L_tune(self) -> int:
        if self.L_tune != -1:
            return self.L_tune
        return {"FT": self.L_T, "FF": 0, "PF": math.ceil(self.L_T / 4)}[self.regime]

    def video_config(self) -> VideoEncoderConfig:
        return VideoEncoderConfig(L_V=self.L_V, D_V=self.D_V, heads=self.heads, P=self.P,
                                  H=self.H, W=self.W, T=self.T, D=self.D)

    def text_config(self, vocab_size: int) -> TextEncoderConfig:
        return TextEncoderConfig(L_T=self.L_T, D_T=self.D_T, heads=self.text_heads,
                                 vocab_size=vocab_size, context_len=self.context_len,
                                 D=self.D, L_tune=self.effective_L_tune)

    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, lam=self.lam, K=self.K)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # -- text form ----------------------------------------------------------
    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_mapping(cls, values: dict[str, str | object], base: "RunConfig | None" = None) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(values) - set(types))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = dataclasses.asdict(base) if base is not None else {}
        for key, raw in values.items():
            kwargs[key] = _coerce(key, types[key], raw)
        return cls(**kwargs)


def _coerce(key: str, typ, raw):
    if not isinstance(raw, str):
        return raw
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """File values first, then ``overrides`` (CLI flags) on top."""
    values: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        values.update(parse_config_text(text, str(p)))
    values.update(overrides or {})
    return RunConfig.from_mapping(values)
