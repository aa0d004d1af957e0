"""Training loop: deep-supervision objective, SGD, augmentation, CSV logging."""

from __future__ import annotations

import math
from pathlib import Path
from typing import TextIO

import numpy as np

from .architectures import NetworkGraph, build_model
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import Dataset, augment
from .errors import ContractError, NumericError
from .objectives import LossReport, total_objective
from .optim import SgdState, sgd_step
from .tensor import Tensor, backward

LOG_NAME = "train_log.csv"
CONFIG_NAME = "config.txt"
CHECKPOINT_NAME = "model.dsnc"


def log_header(m: int) -> str:
    return ",".join(["step", "lr", "total", "main", *[f"head{i}" for i in range(1, m + 1)]])


def log_line(step: int, lr: float, report: LossReport) -> str:
    vals = [report.total, report.main, *report.head_losses]
    return ",".join([str(step), repr(lr), *(repr(float(v)) for v in vals)])


class Trainer:
    """Holds model, optimizer state and data for a single training run.

    Sample order and augmentation draws depend only on ``(seed, step)``, so a
    run resumed from a checkpoint continues exactly like an uninterrupted one.
    """

    def __init__(self, cfg: RunConfig, train: Dataset, model: NetworkGraph | None = None,
                 state: SgdState | None = None):
        cfg.validate()
        if len(train) == 0:
            raise ContractError("training set is empty")
        self.cfg = cfg
        self.train = train
        self.model = model or build_model(cfg.model, cfg.in_channels, cfg.base_channels, cfg.seed)
        self.state = state or cfg.optimizer_state()
        self.weights = cfg.weights(self.model.m)
        self.aug = cfg.augment_spec()

    def batch(self, step: int) -> tuple[Tensor, np.ndarray]:
        n, b = len(self.train), self.cfg.batch_size
        images, masks = [], []
        for j in range(b):
            pos = step * b + j
            order = np.random.default_rng([self.cfg.seed, pos // n]).permutation(n)
            sample = self.train[int(order[pos % n])]
            if self.aug is not None:
                sample = augment(sample, self.aug, np.random.default_rng([self.cfg.seed, 7, step, j]))
            images.append(sample.image.data)
            masks.append(sample.mask.data)
        return Tensor(np.concatenate(images)), np.concatenate(masks)

    def step(self) -> tuple[int, float, LossReport]:
        """One optimisation step; returns ``(step index, lr used, loss report)``."""
        s = self.state.step
        image, mask = self.batch(s)
        params = self.model.params
        params.zero_grad()
        outputs = self.model.forward(image)
        report = total_objective(outputs[0], outputs[1:], mask, self.weights)
        if not math.isfinite(report.total):
            raise NumericError(f"non-finite loss at step {s}")
        backward(report.tensor, params.values())
        lr = self.state.current_lr()
        sgd_step(params, self.state)
        report.tensor = None
        return s, lr, report

    def run(self, stop: int | None = None, log: TextIO | None = None,
            checkpoint: str | Path | None = None, every: int = 0) -> list[LossReport]:
        stop = self.cfg.steps if stop is None else stop
        reports = []
        while self.state.step < stop:
            s, lr, report = self.step()
            reports.append(report)
            if log is not None:
                log.write(log_line(s, lr, report) + "\n")
                log.flush()
            if checkpoint and every and self.state.step % every == 0:
                save_checkpoint(checkpoint, self.model, self.state)
        if checkpoint:
            save_checkpoint(checkpoint, self.model, self.state)
        return reports


def train_run(cfg: RunConfig, train: Dataset, run_dir, resume=None) -> Trainer:
    """Train into ``run_dir`` (config echo, CSV log, checkpoint), optionally resuming."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else run_dir / CHECKPOINT_NAME
    model = state = None
    if resume:
        state = cfg.optimizer_state()
        model, _ = load_checkpoint(resume, expect_kind=cfg.model, state=state)
    trainer = Trainer(cfg, train, model, state)
    (run_dir / CONFIG_NAME).write_text(cfg.to_text())
    log_path = run_dir / LOG_NAME
    fresh = not resume or not log_path.exists()
    with open(log_path, "w" if fresh else "a") as log:
        if fresh:
            log.write(log_header(trainer.model.m) + "\n")
        trainer.run(log=log, checkpoint=ckpt, every=cfg.checkpoint_every)
    return trainer
