"""Deterministic training loop: SGD with momentum and a stepped learning rate.

All randomness (data generation, label flips, shuffling, augmentation) comes
from named child streams of the config seed, so identical configs reproduce
byte-identical step logs and checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .data import (
    Sample,
    augment_batch,
    generate_dataset,
    inject_label_noise,
    load_cache,
    stack_images,
)
from .losses import LossBreakdown, total_loss
from .model import Model, save_checkpoint
from .priors import default_table

STEP_LOG_NAME = "steps.jsonl"
CHECKPOINT_DIR_NAME = "checkpoint"
CONFIG_ECHO_NAME = "config.json"

_STREAMS = ("train_data", "test_data", "noise", "shuffle", "augment")


class TrainingDivergedError(RuntimeError):
    """A loss component went non-finite; names the offending terms."""

    def __init__(self, step: int, offenders: list[str]):
        super().__init__(f"non-finite loss at step {step}: {', '.join(offenders)}")
        self.step = step
        self.offenders = offenders


def seed_streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return dict(zip(_STREAMS, children))


def load_split(cfg: RunConfig, split: str) -> list[Sample]:
    """Samples for one split, from the cache directory if configured, else generated."""
    cfg = cfg.resolved()
    if cfg.data.cache_dir is not None:
        samples, cached_classes = load_cache(Path(cfg.data.cache_dir) / f"{split}.bin")
        if cached_classes != len(cfg.data.classes):
            raise ValueError(f"cache has {cached_classes} classes, config has {len(cfg.data.classes)}")
        return samples
    table = default_table(cfg.data.classes)
    streams = seed_streams(cfg.seed)
    per_class = cfg.data.train_per_class if split == "train" else cfg.data.test_per_class
    return generate_dataset(cfg.data, table, streams[f"{split}_data"], per_class)


def echo_config(cfg: RunConfig, out_dir: Path) -> None:
    (out_dir / CONFIG_ECHO_NAME).write_text(cfg.to_json() + "\n")


@dataclass
class TrainResult:
    out_dir: Path
    checkpoint_dir: Path
    steps_path: Path
    model: Model
    final_breakdown: LossBreakdown | None
    steps: int


def train_run(cfg: RunConfig, out_dir: str | Path, log_figure: bool = True) -> TrainResult:
    cfg = cfg.resolved()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out_dir)

    table = default_table(cfg.data.classes)
    streams = seed_streams(cfg.seed)
    samples = load_split(cfg, "train")
    samples = inject_label_noise(samples, cfg.hp.noise_ratio, table.num_classes, streams["noise"])
    images = stack_images(samples)
    labels = np.array([s.label for s in samples], dtype=np.int64)

    model = Model(cfg, table)
    params = model.parameters()
    velocities = [np.zeros_like(p.data) for p in params]
    shuffle_rng = np.random.default_rng(streams["shuffle"])
    augment_rng = np.random.default_rng(streams["augment"])
    max_shift = max(1, int(2 * cfg.data.image_size / 56 + 0.5))

    mode = "infer" if cfg.flags.baseline_only else "train"
    region_of = {name: model.region_of(name) for name in model.subregions}

    step = 0
    last: LossBreakdown | None = None
    steps_path = out_dir / STEP_LOG_NAME
    with open(steps_path, "w", encoding="utf-8") as log:
        for epoch in range(cfg.hp.epochs):
            lr = cfg.hp.lr * (cfg.hp.lr_drop_factor if epoch >= cfg.hp.lr_drop_epoch else 1.0)
            order = shuffle_rng.permutation(len(samples))
            for start in range(0, len(order), cfg.hp.batch_size):
                batch = order[start:start + cfg.hp.batch_size]
                batch_images = augment_batch(images[batch], augment_rng, max_shift)
                fwd = model.forward(batch_images, mode=mode)
                breakdown = total_loss(fwd, labels[batch], table, cfg.hp, cfg.flags, region_of)
                bad = [k for k, v in breakdown.components().items() if not np.isfinite(v)]
                if bad:
                    raise TrainingDivergedError(step, bad)
                ad.zero_grads(params)
                ad.backward(breakdown.objective_tensor)
                ad.sgd_momentum_step(params, velocities, lr, cfg.hp.momentum, cfg.hp.weight_decay)
                log.write(json.dumps(breakdown.log_record(step, epoch)) + "\n")
                last = breakdown
                step += 1

    checkpoint_dir = save_checkpoint(out_dir / CHECKPOINT_DIR_NAME, model)
    if log_figure:
        from .plots import loss_curves_figure

        loss_curves_figure(steps_path, out_dir / "loss_curves.png")
    return TrainResult(
        out_dir=out_dir,
        checkpoint_dir=checkpoint_dir,
        steps_path=steps_path,
        model=model,
        final_breakdown=last,
        steps=step,
    )
