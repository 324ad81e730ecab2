"""End-to-end gradient verification of the composed training objective."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .autodiff import grad_check, relu_gap_probe
from .config import DataSpec, HyperParams, ModelSpec, RunConfig
from .losses import total_loss
from .model import Model
from .priors import default_table

_MAX_POINT_TRIES = 64


def probe_config() -> RunConfig:
    """Smallest config with every moving part: R=4, L=6, window 4, dims 16/8/4, C=3."""
    return RunConfig(
        hp=HyperParams(l_sub=4, batch_size=2),
        data=DataSpec(classes=("Happy", "Anger", "Surprise"), train_per_class=4,
                      test_per_class=2, image_size=12),
        model=ModelSpec(stem_channels=(4,), stem_pool=(True,), shallow_dim=16,
                        au_latent_dim=8, au_reduced_dim=4, trn_feature_dim=16),
    )


def full_loss_grad_check(cfg: RunConfig | None = None, h: float = 1e-5, batch: int = 2) -> float:
    """Max relative error of the analytic gradient of the full objective.

    Runs with teacher detachment off so the analytic gradient is the true
    derivative of the evaluated function; the finite-difference probe then
    exercises every backward rule in the graph, including the confidence and
    distillation-weight paths.

    Central differences require a differentiable evaluation point, but
    zero-initialized biases put relu pre-activations exactly on their kinks.
    Parameters and probe images are therefore redrawn deterministically until
    every pre-activation clears the finite-difference window.
    """
    cfg = (cfg or probe_config()).resolved()
    cfg = replace(cfg, flags=replace(cfg.flags, detach_teachers=False, gate_aux_ce=False))
    table = default_table(cfg.data.classes)
    model = Model(cfg, table)
    region_of = {name: model.region_of(name) for name in model.subregions}
    image_shape = (batch, cfg.model.in_channels, cfg.data.image_size, cfg.data.image_size)
    base = [p.data.copy() for p in model.parameters()]

    margin = 6.0 * h
    for trial in range(_MAX_POINT_TRIES):
        rng = np.random.default_rng((cfg.seed + 7, trial))
        for p, orig in zip(model.parameters(), base):
            p.data = orig + rng.uniform(-0.05, 0.05, size=orig.shape)
        images = rng.uniform(0.05, 0.95, size=image_shape)
        labels = rng.integers(0, table.num_classes, size=batch)

        def objective():
            fwd = model.forward(images, mode="train")
            return total_loss(fwd, labels, table, cfg.hp, cfg.flags, region_of).total_tensor

        with relu_gap_probe() as probe:
            objective()
        if probe.min_gap() > margin:
            return grad_check(objective, model.parameters(), h=h)
    raise RuntimeError(f"no kink-free evaluation point found in {_MAX_POINT_TRIES} tries")
