"""U-Net baseline and the deeply supervised encoder/decoder network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SpecError
from .layers import Conv2d, Deconv2d, concat, maxpool2d, relu, sigmoid, upsample
from .tensor import Tensor

DEPTH = 4  # pooling steps between the input and the bottleneck
DEFAULT_HEAD_STAGES = ("enc2", "enc3", "enc4", "enc5", "dec1", "dec2", "dec3", "dec4")


class ModelParameters(dict):
    """Ordered ``name -> Tensor`` registry of learnable tensors."""

    def zero_grad(self) -> None:
        for p in self.values():
            p.grad = None

    def count(self) -> int:
        return sum(p.size for p in self.values())


@dataclass(frozen=True)
class StageSpec:
    name: str
    index: int
    in_ch: int
    out_ch: int
    has_pool: bool
    has_upsample: bool
    skip_source: str | None = None
    resolution_div: int = 1  # feature map size is input size / resolution_div


@dataclass(frozen=True)
class HeadSpec:
    name: str
    stage: str
    in_ch: int
    factor: int


class Stage:
    """Convolution block; decoder stages first upsample, project and concatenate."""

    def __init__(self, spec: StageSpec, with_1x1: bool, rng: np.random.Generator):
        self.spec = spec
        self.up = Conv2d(spec.in_ch, spec.out_ch, 1, rng) if spec.has_upsample else None
        first_in = 2 * spec.out_ch if spec.has_upsample else spec.in_ch
        self.convs = [Conv2d(first_in, spec.out_ch, 3, rng), Conv2d(spec.out_ch, spec.out_ch, 3, rng)]
        if with_1x1:
            self.convs.append(Conv2d(spec.out_ch, spec.out_ch, 1, rng))

    def __call__(self, x: Tensor, skip: Tensor | None = None) -> Tensor:
        if self.up is not None:
            x = concat(skip, self.up(upsample(x, 2)))
        for conv in self.convs:
            x = relu(conv(x))
        return x

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        if self.up is not None:
            out.update({f"up.{k}": v for k, v in self.up.parameters().items()})
        for i, conv in enumerate(self.convs, 1):
            out.update({f"conv{i}.{k}": v for k, v in conv.parameters().items()})
        return out


class Head:
    """Auxiliary output: upsample to full resolution, 3x3 deconvolution to one channel, sigmoid."""

    def __init__(self, spec: HeadSpec, rng: np.random.Generator):
        self.spec = spec
        self.deconv = Deconv2d(spec.in_ch, 1, kernel_size=3, stride=1, padding=1, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return sigmoid(self.deconv(upsample(x, self.spec.factor)))

    def parameters(self) -> dict[str, Tensor]:
        return {f"deconv.{k}": v for k, v in self.deconv.parameters().items()}


def stage_specs(in_ch: int, base_ch: int) -> list[StageSpec]:
    specs = []
    prev = in_ch
    for k in range(1, DEPTH + 2):
        ch = base_ch * 2 ** (k - 1)
        specs.append(StageSpec(f"enc{k}", k, prev, ch, has_pool=k <= DEPTH, has_upsample=False,
                               resolution_div=2 ** (k - 1)))
        prev = ch
    for j in range(1, DEPTH + 1):
        ch = prev // 2
        partner = f"enc{DEPTH + 1 - j}"
        specs.append(StageSpec(f"dec{j}", DEPTH + 1 + j, prev, ch, has_pool=False, has_upsample=True,
                               skip_source=partner, resolution_div=2 ** (DEPTH - j)))
        prev = ch
    return specs


class NetworkGraph:
    """Encoder/decoder segmentation network with optional supervised heads.

    ``forward`` returns ``[main, head_1, ..., head_m]``; every output has shape
    ``(N, 1, H, W)`` and values in (0, 1).
    """

    def __init__(self, kind: str, in_ch: int, base_ch: int, with_1x1: bool,
                 head_stages: tuple[str, ...] = (), seed: int = 0):
        if in_ch < 1 or base_ch < 1:
            raise SpecError("channel counts must be >= 1")
        self.kind, self.in_ch, self.base_ch, self.seed = kind, in_ch, base_ch, seed
        rng = np.random.default_rng(seed)
        self.specs = stage_specs(in_ch, base_ch)
        self.stages = {s.name: Stage(s, with_1x1, rng) for s in self.specs}
        self.out = Conv2d(base_ch, 1, 1, rng)
        by_name = {s.name: s for s in self.specs}
        self.heads = []
        for i, stage in enumerate(head_stages, 1):
            if stage not in by_name:
                raise SpecError(f"unknown head stage {stage!r}")
            s = by_name[stage]
            self.heads.append(Head(HeadSpec(f"head{i}", stage, s.out_ch, s.resolution_div), rng))
        self.params = self._collect()

    @property
    def m(self) -> int:
        return len(self.heads)

    def _collect(self) -> ModelParameters:
        params = ModelParameters()
        for name, stage in self.stages.items():
            for k, v in stage.parameters().items():
                params[f"{name}.{k}"] = v
        for k, v in self.out.parameters().items():
            params[f"out.{k}"] = v
        for head in self.heads:
            for k, v in head.parameters().items():
                params[f"{head.spec.name}.{k}"] = v
        for k, v in params.items():
            v.name = k
        return params

    def parameters(self) -> ModelParameters:
        return self.params

    def check_input(self, image: Tensor) -> None:
        n, c, h, w = image.shape
        if c != self.in_ch:
            raise DimensionError(f"model expects {self.in_ch} input channels, got {c}")
        div = 2 ** DEPTH
        if h % div or w % div:
            raise DimensionError(f"input height and width must be divisible by {div}, got {h}x{w}")

    def forward(self, image: Tensor, features: dict | None = None) -> list[Tensor]:
        """Run the network; if ``features`` is a dict it receives every stage output."""
        self.check_input(image)
        feats: dict[str, Tensor] = {}
        x = image
        for spec in self.specs:
            stage = self.stages[spec.name]
            x = stage(x, feats[spec.skip_source] if spec.skip_source else None)
            feats[spec.name] = x
            if spec.has_pool:
                x = maxpool2d(x)
        outputs = [sigmoid(self.out(x))]
        outputs.extend(head(feats[head.spec.stage]) for head in self.heads)
        if features is not None:
            features.update(feats)
        return outputs

    __call__ = forward

    def astype(self, dtype) -> None:
        """Convert every parameter in place (used for float64 gradient checks)."""
        for p in self.params.values():
            p.data = p.data.astype(dtype)
            p.grad = None


def build_unet(in_ch: int = 1, base_ch: int = 64, seed: int = 0) -> NetworkGraph:
    """Four pooled encoder stages, a bottleneck, four decoder stages and a 1x1 output."""
    return NetworkGraph("unet", in_ch, base_ch, with_1x1=False, seed=seed)


def build_dscnn(in_ch: int = 1, base_ch: int = 64, seed: int = 0,
                head_stages: tuple[str, ...] = DEFAULT_HEAD_STAGES) -> NetworkGraph:
    """U-Net trunk with an extra 1x1 convolution per stage and supervised heads."""
    return NetworkGraph("dscnn", in_ch, base_ch, with_1x1=True, head_stages=head_stages, seed=seed)


def build_model(kind: str, in_ch: int = 1, base_ch: int = 64, seed: int = 0) -> NetworkGraph:
    if kind == "unet":
        return build_unet(in_ch, base_ch, seed)
    if kind == "dscnn":
        return build_dscnn(in_ch, base_ch, seed)
    raise SpecError(f"unknown model kind {kind!r} (expected 'unet' or 'dscnn')")


def forward(model: NetworkGraph, image: Tensor) -> list[Tensor]:
    return model.forward(image)
