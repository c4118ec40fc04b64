"""Run configuration stored as flat ``key=value`` text with ``#`` comments."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .net import NetConfig, StepGrid

OBJECTIVES = (
    "flow_matching",
    "shortcut",
    "consistency_training",
    "consistency_distillation",
    "progressive_distillation",
    "reflow",
    "live_reflow",
)
TEACHER_OBJECTIVES = ("consistency_distillation", "progressive_distillation", "reflow")
D_CONDITIONED = ("shortcut", "progressive_distillation", "live_reflow")


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none") else float(s)


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(" ", "").split(",") if x)


@dataclass(frozen=True)
class RunConfig:
    objective: str = "shortcut"
    dataset: str = "eight_gaussians"
    dataset_size: int = 20000
    data_seed: int = 0
    hidden_dim: int = 128
    num_layers: int = 4
    time_embed_dim: int = 32
    lr: float = 1e-4
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ema_ratio: float = 0.999
    batch_size: int = 256
    k: float = 0.25
    M: int = 128
    class_conditional: bool = False
    class_dropout_prob: float = 0.1
    cfg_scale: float | None = None
    steps: int = 20000
    eval_interval: int = 1000
    eval_count: int = 2000
    eval_budgets: tuple[int, ...] = (1, 4, 128)
    checkpoint_interval: int = 5000
    seed: int = 0
    teacher: str = ""
    reflow_pairs: int = 50000
    live_reflow_steps: int = 8

    # -- derived -----------------------------------------------------------

    @property
    def num_classes(self) -> int:
        return 8 if self.class_conditional else 0

    @property
    def guidance(self) -> float | None:
        """CFG scale in effect: 1.5 by default for class-conditional runs."""
        if not self.class_conditional:
            return None
        return 1.5 if self.cfg_scale is None else self.cfg_scale

    @property
    def grid(self) -> StepGrid:
        return StepGrid(self.M)

    def net_config(self) -> NetConfig:
        return NetConfig(
            input_dim=2,
            hidden_dim=self.hidden_dim,
            num_layers=self.num_layers,
            time_embed_dim=self.time_embed_dim,
            num_d_buckets=self.grid.num_buckets,
            num_classes=self.num_classes,
            class_dropout_prob=self.class_dropout_prob,
            d_conditioned=self.objective in D_CONDITIONED,
        )

    def validate(self) -> "RunConfig":
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; choose from {OBJECTIVES}")
        if self.objective in TEACHER_OBJECTIVES and not self.teacher:
            raise ConfigError(f"objective {self.objective} needs a teacher checkpoint")
        if self.class_conditional and self.dataset != "eight_gaussians":
            raise ConfigError("class-conditional runs use eight_gaussians mode labels")
        if not 0.0 <= self.k <= 1.0:
            raise ConfigError("k must lie in [0, 1]")
        for name in ("steps", "batch_size", "eval_interval", "eval_count", "dataset_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        grid = self.grid
        for b in self.eval_budgets:
            if b <= 0 or b & (b - 1) or b > grid.M:
                raise ConfigError(f"eval budget {b} is not a power-of-two divisor of M={grid.M}")
        self.net_config().validate(grid)
        return self

    # -- text round trip -----------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "none"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        return (base or cls()).with_overrides(parse_key_values(text))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        return cls.from_text(p.read_text())

    def with_overrides(self, values: dict) -> "RunConfig":
        parsers = _parsers()
        updates = {}
        for key, raw in values.items():
            if key not in parsers:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                updates[key] = parsers[key](raw) if isinstance(raw, str) else raw
            except ValueError as e:
                raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from None
        return replace(self, **updates)


def _parsers() -> dict:
    out = {}
    for f in fields(RunConfig):
        default = f.default
        if f.name == "cfg_scale":
            out[f.name] = _opt_float
        elif isinstance(default, bool):
            out[f.name] = _bool
        elif isinstance(default, int):
            out[f.name] = int
        elif isinstance(default, float):
            out[f.name] = float
        elif isinstance(default, tuple):
            out[f.name] = _int_list
        else:
            out[f.name] = str
    return out


def parse_key_values(text: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values
