"""Run configuration stored as flat ``key = value`` text."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .data import AugmentSpec
from .errors import SpecError
from .objectives import SupervisionWeights
from .optim import Schedule, SgdState

MODEL_KINDS = ("unet", "dscnn")


@dataclass
class RunConfig:
    model: str = "dscnn"
    in_channels: int = 1
    base_channels: int = 64
    alpha: str = "1"  # one value for every head, or a comma-separated list
    main_weight: float = 1.0
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = "step"
    lr_gamma: float = 0.5
    lr_period: int = 2000
    steps: int = 1000
    batch_size: int = 1
    augment: bool = True
    aug_translate: float = -1.0  # negative: 10% of image width
    aug_rotate: float = 15.0
    aug_zoom_min: float = 0.9
    aug_zoom_max: float = 1.1
    seed: int = 0
    data_root: str = ""
    split_file: str = ""
    checkpoint: str = ""
    checkpoint_every: int = 0
    threshold: float = 0.5

    def validate(self) -> "RunConfig":
        if self.model not in MODEL_KINDS:
            raise SpecError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.in_channels < 1 or self.base_channels < 1:
            raise SpecError("channel counts must be >= 1")
        if self.steps < 0 or self.batch_size < 1 or self.checkpoint_every < 0:
            raise SpecError("steps/checkpoint_every must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise SpecError("threshold must lie in [0, 1]")
        self.optimizer_state()
        self.augment_spec()
        return self

    def alpha_values(self, m: int) -> tuple[float, ...]:
        vals = [float(v) for v in str(self.alpha).split(",") if v.strip()]
        if len(vals) == 1:
            return tuple(vals * m)
        if len(vals) != m:
            raise SpecError(f"alpha lists {len(vals)} weights but the model has {m} heads")
        return tuple(vals)

    def weights(self, m: int) -> SupervisionWeights:
        return SupervisionWeights(self.alpha_values(m), self.main_weight)

    def optimizer_state(self) -> SgdState:
        return SgdState(lr=self.lr, momentum=self.momentum, weight_decay=self.weight_decay,
                        schedule=Schedule(self.schedule, self.lr_gamma, self.lr_period))

    def augment_spec(self) -> AugmentSpec | None:
        if not self.augment:
            return None
        t = None if self.aug_translate < 0 else self.aug_translate
        return AugmentSpec(t, self.aug_rotate, (self.aug_zoom_min, self.aug_zoom_max))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))


PRESETS = {
    # lr, momentum and batch size follow the original training setup; decay values are our defaults
    "paper": dict(lr=0.001, momentum=0.9, batch_size=1, weight_decay=5e-4, schedule="step",
                  lr_gamma=0.5, lr_period=2000),
}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise SpecError(f"config key {name!r}: cannot parse {raw!r}") from exc


_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def parse_config(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    """Apply ``key = value`` lines (``#`` comments allowed) on top of ``base``."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise SpecError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, _TYPES[key], val)
    return (base or RunConfig()).replace(**values)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(), base, str(path))


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    unknown = set(overrides) - set(_TYPES)
    if unknown:
        raise SpecError(f"unknown config keys {sorted(unknown)}")
    return cfg.replace(**{k: v for k, v in overrides.items() if v is not None})
