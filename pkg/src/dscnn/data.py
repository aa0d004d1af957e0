"""Sample containers, PGM dataset loading, augmentation and synthetic data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import DimensionError, LoadError, SpecError
from .pgm import read_pgm, to_8bit, write_pgm
from .tensor import Tensor

SYNTH_VERSION = 1


@dataclass
class SamplePair:
    image: Tensor  # (1, C, H, W), values in [0, 1]
    mask: Tensor  # (1, 1, H, W), values in {0, 1}
    source_id: str
    name: str = ""

    def __post_init__(self):
        if self.mask.shape[1] != 1 or self.mask.shape[2:] != self.image.shape[2:]:
            raise DimensionError(f"mask {self.mask.shape} does not match image {self.image.shape}")

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[2], self.image.shape[3]


@dataclass
class Dataset:
    samples: list[SamplePair] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i) -> SamplePair:
        return self.samples[i]

    def source_ids(self) -> list[str]:
        """Distinct source ids in first-seen order."""
        return list(dict.fromkeys(s.source_id for s in self.samples))

    def subset(self, ids: Iterable[str]) -> "Dataset":
        keep = set(ids)
        return Dataset([s for s in self.samples if s.source_id in keep])

    def split(self, n_test_sources: int, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Random train/test split by source id, so no source lands in both."""
        ids = self.source_ids()
        if not 0 <= n_test_sources <= len(ids):
            raise SpecError(f"cannot hold out {n_test_sources} of {len(ids)} sources")
        rng = np.random.default_rng(seed)
        test = {ids[i] for i in rng.permutation(len(ids))[:n_test_sources]}
        return self.subset(i for i in ids if i not in test), self.subset(test)


# split files ----------------------------------------------------------------


def write_split(path, train_ids: Sequence[str], test_ids: Sequence[str]) -> None:
    lines = ["[train]", *train_ids, "[test]", *test_ids]
    Path(path).write_text("\n".join(lines) + "\n")


def read_split(path) -> dict[str, list[str]]:
    """Parse ``[train]`` / ``[test]`` sections with one source id per line."""
    sections: dict[str, list[str]] = {"train": [], "test": []}
    current = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in sections:
                raise SpecError(f"{path}: unknown split section [{current}]")
            continue
        if current is None:
            raise SpecError(f"{path}: source id {line!r} outside a section")
        sections[current].append(line)
    overlap = set(sections["train"]) & set(sections["test"])
    if overlap:
        raise SpecError(f"{path}: sources in both train and test: {sorted(overlap)}")
    return sections


# disk layout ------------------------------------------------------------------


def source_id_of(stem: str) -> str:
    return stem.split("_", 1)[0]


def load_dataset(root) -> Dataset:
    """Load ``root/images/*.pgm`` with masks of the same name in ``root/masks``."""
    root = Path(root)
    image_dir, mask_dir = root / "images", root / "masks"
    if not image_dir.is_dir():
        return Dataset()
    samples = []
    for path in sorted(image_dir.glob("*.pgm")):
        mask_path = mask_dir / path.name
        if not mask_path.is_file():
            raise LoadError(f"no mask for image {path} (expected {mask_path})")
        pixels, maxval = read_pgm(path)
        mpix, _ = read_pgm(mask_path)
        if mpix.shape != pixels.shape:
            raise LoadError(f"{mask_path}: size {mpix.shape} differs from image {pixels.shape}")
        image = (pixels.astype(np.float32) / np.float32(maxval))[None, None]
        mask = (mpix > 0).astype(np.float32)[None, None]
        samples.append(SamplePair(Tensor(image), Tensor(mask), source_id_of(path.stem), path.stem))
    return Dataset(samples)


def save_dataset(dataset: Dataset, root) -> list[Path]:
    """Write images as 8-bit PGM and masks as 0/255 PGM; returns the image paths."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    written = []
    for s in dataset:
        if s.image.shape[1] != 1:
            raise DimensionError("only single-channel images can be written as PGM")
        name = s.name or s.source_id
        ipath = root / "images" / f"{name}.pgm"
        write_pgm(ipath, to_8bit(s.image.data[0, 0]))
        write_pgm(root / "masks" / f"{name}.pgm", (s.mask.data[0, 0] > 0).astype(np.uint8) * 255)
        written.append(ipath)
    return written


# augmentation -------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentSpec:
    """Ranges for random translation (pixels), rotation (degrees) and zoom.

    ``translate=None`` means 10% of the image width.
    """

    translate: float | None = None
    rotate: float = 15.0
    zoom: tuple[float, float] = (0.9, 1.1)

    def __post_init__(self):
        lo, hi = self.zoom
        if lo <= 0 or hi <= 0:
            raise SpecError(f"zoom factors must be > 0, got {self.zoom}")
        if lo > hi:
            raise SpecError(f"zoom range is reversed: {self.zoom}")
        if (self.translate is not None and self.translate < 0) or self.rotate < 0:
            raise SpecError("translation and rotation ranges must be >= 0")

    @classmethod
    def identity(cls) -> "AugmentSpec":
        return cls(translate=0.0, rotate=0.0, zoom=(1.0, 1.0))


def affine_warp(sample: SamplePair, tx: float = 0.0, ty: float = 0.0, angle: float = 0.0,
                zoom: float = 1.0) -> SamplePair:
    """Rotate and zoom about the image centre, then shift by (tx columns, ty rows).

    Images use bilinear interpolation, masks nearest-neighbour followed by a
    0.5 threshold; pixels mapped from outside the frame become 0.
    """
    if zoom <= 0:
        raise SpecError(f"zoom must be > 0, got {zoom}")
    angle = angle % 360.0
    if tx == 0 and ty == 0 and angle == 0 and zoom == 1:
        return replace(sample, image=Tensor(sample.image.data.copy()), mask=Tensor(sample.mask.data.copy()))
    h, w = sample.size
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    t = math.radians(angle)
    rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    rot[np.abs(rot) < 1e-12] = 0.0  # keep multiples of 90 degrees exact
    inv = rot.T / zoom
    offset = centre - inv @ (centre + np.array([ty, tx]))

    def warp(plane, order):
        return ndimage.affine_transform(plane, inv, offset=offset, order=order,
                                        mode="constant", cval=0.0)

    img = sample.image.data
    out = np.empty_like(img)
    for n in range(img.shape[0]):
        for c in range(img.shape[1]):
            out[n, c] = warp(img[n, c].astype(np.float64), 1)
    mask = warp(sample.mask.data[0, 0].astype(np.float64), 0)
    mask = (mask > 0.5).astype(np.float32)[None, None]
    return replace(sample, image=Tensor(np.clip(out, 0.0, 1.0).astype(img.dtype)), mask=Tensor(mask))


def augment(sample: SamplePair, spec: AugmentSpec, rng: np.random.Generator) -> SamplePair:
    """Apply one randomly drawn translation/rotation/zoom to image and mask alike."""
    w = sample.size[1]
    t = 0.1 * w if spec.translate is None else spec.translate
    tx, ty = rng.uniform(-t, t, size=2) if t > 0 else (0.0, 0.0)
    angle = rng.uniform(-spec.rotate, spec.rotate) if spec.rotate > 0 else 0.0
    lo, hi = spec.zoom
    zoom = rng.uniform(lo, hi) if hi > lo else lo
    return affine_warp(sample, float(tx), float(ty), float(angle), float(zoom))


# synthetic data ---------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Rendering parameters for synthetic blob-segmentation images."""

    fg_mean: float = 0.75
    bg_mean: float = 0.25
    contrast_jitter: float = 0.0  # per-image spread of fg/bg means
    texture: float = 0.0  # amplitude of smooth intensity variation
    blur: float = 0.0  # boundary blur sigma, pixels
    bias: float = 0.0  # multiplicative bias-field amplitude
    noise: float = 0.0  # additive Gaussian noise std
    fg_fraction: tuple[float, float] = (0.03, 0.25)
    blobs: tuple[int, int] = (3, 6)


SYNTH_PRESETS = {
    "easy": SynthSpec(),
    "medium": SynthSpec(fg_mean=0.65, bg_mean=0.35, contrast_jitter=0.03, texture=0.04,
                        blur=1.0, bias=0.15, noise=0.04),
    "hard": SynthSpec(fg_mean=0.58, bg_mean=0.42, contrast_jitter=0.04, texture=0.06,
                      blur=2.0, bias=0.3, noise=0.06),
}


def _smooth_field(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    return f / (np.abs(f).max() + 1e-12)


def _bias_field(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    c = rng.uniform(-1, 1, size=5)
    f = c[0] * xx + c[1] * yy + c[2] * xx * yy + c[3] * xx ** 2 + c[4] * yy ** 2
    return f / (np.abs(f).max() + 1e-12)


def synth_sample(rng: np.random.Generator, size: int, spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render one ``(image, mask)`` pair as float32 (H, W) arrays."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    centre = rng.uniform(0.3, 0.7, size=2) * size
    field_ = np.zeros((size, size))
    for _ in range(rng.integers(spec.blobs[0], spec.blobs[1] + 1)):
        cy, cx = centre + rng.normal(0.0, 0.08 * size, size=2)
        s = rng.uniform(0.06, 0.14) * size
        field_ += rng.uniform(0.5, 1.0) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    frac = rng.uniform(*spec.fg_fraction)
    mask = field_ > np.quantile(field_, 1.0 - frac)

    fg = spec.fg_mean + rng.normal(0.0, spec.contrast_jitter) if spec.contrast_jitter else spec.fg_mean
    bg = spec.bg_mean + rng.normal(0.0, spec.contrast_jitter) if spec.contrast_jitter else spec.bg_mean
    soft = mask.astype(np.float64)
    if spec.blur > 0:
        soft = ndimage.gaussian_filter(soft, spec.blur)
    img = bg + (fg - bg) * soft
    if spec.texture > 0:
        img = img + spec.texture * _smooth_field(rng, size, size / 10.0)
    if spec.bias > 0:
        img = img * (1.0 + spec.bias * _bias_field(rng, size))
    if spec.noise > 0:
        img = img + rng.normal(0.0, spec.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask.astype(np.float32)


def make_synthetic(n: int, size: int = 64, difficulty: str | SynthSpec = "easy", seed: int = 0,
                   per_source: int = 4) -> Dataset:
    """Deterministic synthetic dataset; every ``per_source`` samples share a source id."""
    if size % 16 or size < 16:
        raise DimensionError(f"size must be a positive multiple of 16, got {size}")
    if n < 0 or per_source < 1:
        raise SpecError(f"need n >= 0 and per_source >= 1, got n={n}, per_source={per_source}")
    if isinstance(difficulty, str) and difficulty not in SYNTH_PRESETS:
        raise SpecError(f"unknown difficulty {difficulty!r}; choose from {sorted(SYNTH_PRESETS)}")
    spec = SYNTH_PRESETS[difficulty] if isinstance(difficulty, str) else difficulty
    samples = []
    for i in range(n):
        rng = np.random.default_rng([SYNTH_VERSION, seed, i])
        img, mask = synth_sample(rng, size, spec)
        src = f"p{i // per_source:03d}"
        samples.append(SamplePair(Tensor(img[None, None]), Tensor(mask[None, None]), src,
                                  f"{src}_{i % per_source:02d}"))
    return Dataset(samples)
