"""The two-branch recognition model.

A shared convolutional stem turns an image into an R x L x L feature map.
The prior-inference side crops the four corner subregions (eyes and mouth
halves, right-side crops mirrored onto the left layout), runs each through a
branch of per-action-unit nets, predicts a class distribution per subregion,
and aggregates them through a learned gate into an intermediate prediction.
The target side is a plain conv + pooled feature + linear classifier. At
inference only the target side runs; its output distribution is bit-identical
to what the training-mode forward produces.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig, SUBREGIONS
from .losses import ensemble_confidence, distill_weight
from .priors import AUPriorTable, default_table

# Image coordinates put the subject's right side on the image's left, so the
# UL/LL corners hold the right eye / right mouth. Right-side crops are
# mirrored so both sides of a branch share one spatial layout.
CORNER_OF_SUBREGION = {
    "left_eye": "UR",
    "right_eye": "UL",
    "left_mouth": "LR",
    "right_mouth": "LL",
}

BRANCH_OF_SUBREGION = {
    "left_eye": "upper",
    "right_eye": "upper",
    "left_mouth": "lower",
    "right_mouth": "lower",
}


@dataclass
class AUNetOutputs:
    """Per-subregion action-unit net activations, stacked over the M nets."""

    latent: Tensor      # [B, M, latent_dim]
    weighted: Tensor    # [B, M, latent_dim], latent scaled by its importance weight
    reduced: Tensor     # [B, M, reduced_dim]
    prob: Tensor        # [B, M] occurrence probabilities, strictly inside (0, 1)
    features: Tensor    # [B, M * reduced_dim] concatenated per-AU representations


@dataclass
class PINOutputs:
    """Prior-inference side of a training-mode forward pass."""

    subregion_names: tuple[str, ...]
    au: dict[str, AUNetOutputs]
    logits: list[Tensor]        # per subregion, [B, C]
    p: list[Tensor]             # softmax at temperature 1
    p_soft: list[Tensor]        # softmax at the distillation temperature
    p_soft_stack: Tensor        # [B, N, C]
    teacher_stack: Tensor       # same values; detached unless full backprop is requested
    gate_weights: Tensor        # [B, N]
    intermediate: Tensor        # [B, C], gate-weighted combination of p_soft


@dataclass
class TRNOutputs:
    """Target side; only ``logits`` and ``q`` exist in inference mode."""

    logits: Tensor
    q: Tensor                   # [B, C]
    q_soft: Tensor | None       # [B, C] at the distillation temperature
    w_au: Tensor | None         # [B] ensemble-consistency confidence
    beta: Tensor | None         # [B] distillation weight


@dataclass
class ForwardResult:
    pin: PINOutputs | None
    trn: TRNOutputs


class Model:
    """Parameter registry plus the forward graph for one configuration."""

    def __init__(self, cfg: RunConfig, table: AUPriorTable | None = None):
        self.cfg = cfg.resolved()
        self.table = table if table is not None else default_table(self.cfg.data.classes)
        if self.table.expressions != tuple(self.cfg.data.classes):
            raise ValueError("prior table classes do not match the configured roster")
        self.num_classes = self.table.num_classes
        self.feature_side = self.cfg.model.feature_side(self.cfg.data.image_size)
        self.l_sub = self.cfg.hp.l_sub
        self.temperature = self.cfg.hp.t
        self.subregions = tuple(self.cfg.model.subregions)
        self.init_seed = self.cfg.seed
        self.params: dict[str, Tensor] = {}
        self.param_reads: set[str] = set()
        self._init_params(np.random.default_rng(self.cfg.seed))

    # -- parameters ---------------------------------------------------------

    def _add(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Tensor(data, requires_grad=True)

    def _init_params(self, rng: np.random.Generator) -> None:
        m = self.cfg.model
        cin = m.in_channels
        for i, cout in enumerate(m.stem_channels):
            self._add(f"stem.{i}.w", ad.glorot_uniform(rng, (cout, cin, 3, 3), cin * 9, cout * 9))
            self._add(f"stem.{i}.b", np.zeros(cout))
            cin = cout
        r = m.feature_channels

        self._add("trn.conv.w", ad.glorot_uniform(rng, (m.trn_feature_dim, r, 3, 3), r * 9, m.trn_feature_dim * 9))
        self._add("trn.conv.b", np.zeros(m.trn_feature_dim))
        self._add("trn.fc.w", ad.glorot_uniform(rng, (self.num_classes, m.trn_feature_dim),
                                                m.trn_feature_dim, self.num_classes))
        self._add("trn.fc.b", np.zeros(self.num_classes))

        gate_in = 0
        for branch in ("upper", "lower"):
            if not any(BRANCH_OF_SUBREGION[s] == branch for s in self.subregions):
                continue
            mm = self._branch_size(branch)
            self._add(f"pin.{branch}.conv.w", ad.glorot_uniform(rng, (m.shallow_dim, r, 3, 3), r * 9, m.shallow_dim * 9))
            self._add(f"pin.{branch}.conv.b", np.zeros(m.shallow_dim))
            self._add(f"pin.{branch}.au.latent.w",
                      ad.glorot_uniform(rng, (mm, m.au_latent_dim, m.shallow_dim), m.shallow_dim, m.au_latent_dim))
            self._add(f"pin.{branch}.au.latent.b", np.zeros((mm, m.au_latent_dim)))
            if m.per_dim_attention:
                self._add(f"pin.{branch}.au.attn.w",
                          ad.glorot_uniform(rng, (mm, m.au_latent_dim, m.au_latent_dim), m.au_latent_dim, m.au_latent_dim))
                self._add(f"pin.{branch}.au.attn.b", np.zeros((mm, m.au_latent_dim)))
            else:
                self._add(f"pin.{branch}.au.attn.w",
                          ad.glorot_uniform(rng, (mm, m.au_latent_dim), m.au_latent_dim, 1))
                self._add(f"pin.{branch}.au.attn.b", np.zeros(mm))
            self._add(f"pin.{branch}.au.reduce.w",
                      ad.glorot_uniform(rng, (mm, m.au_reduced_dim, m.au_latent_dim), m.au_latent_dim, m.au_reduced_dim))
            self._add(f"pin.{branch}.au.reduce.b", np.zeros((mm, m.au_reduced_dim)))
            self._add(f"pin.{branch}.au.occ.w",
                      ad.glorot_uniform(rng, (mm, m.au_latent_dim), m.au_latent_dim, 1))
            self._add(f"pin.{branch}.au.occ.b", np.zeros(mm))

        for name in self.subregions:
            width = self._branch_size(BRANCH_OF_SUBREGION[name]) * m.au_reduced_dim
            gate_in += width
            self._add(f"pin.head.{name}.w", ad.glorot_uniform(rng, (self.num_classes, width), width, self.num_classes))
            self._add(f"pin.head.{name}.b", np.zeros(self.num_classes))

        n_sub = len(self.subregions)
        self._add("pin.gate.w", ad.glorot_uniform(rng, (n_sub, gate_in), gate_in, n_sub))
        self._add("pin.gate.b", np.zeros(n_sub))

    def _branch_size(self, branch: str) -> int:
        return len(self.table.eye_au_order) if branch == "upper" else len(self.table.mouth_au_order)

    def region_of(self, subregion: str) -> str:
        return "eye" if BRANCH_OF_SUBREGION[subregion] == "upper" else "mouth"

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def param_names(self) -> list[str]:
        return list(self.params.keys())

    def pin_param_names(self) -> list[str]:
        return [n for n in self.params if n.startswith("pin.")]

    def _p(self, name: str) -> Tensor:
        self.param_reads.add(name)
        return self.params[name]

    def reset_param_reads(self) -> None:
        self.param_reads = set()

    def pin_reads(self) -> int:
        return sum(1 for n in self.param_reads if n.startswith("pin."))

    # -- forward ------------------------------------------------------------

    def extract_features(self, images: np.ndarray | Tensor) -> Tensor:
        """Shared stem: images [B, C_in, H, W] -> feature map [B, R, L, L]."""
        x = images if isinstance(images, Tensor) else Tensor(images)
        expected = (self.cfg.model.in_channels, self.cfg.data.image_size, self.cfg.data.image_size)
        if x.shape[1:] != expected:
            raise ad.ShapeError(f"extract_features: got {x.shape[1:]}, configured for {expected}")
        for i, pool in enumerate(self.cfg.model.stem_pool):
            x = ad.relu(ad.conv2d_3x3(x, self._p(f"stem.{i}.w"), self._p(f"stem.{i}.b")))
            if pool:
                x = ad.avg_pool2x2(x)
        return x

    def extract_subregions(self, g: Tensor) -> dict[str, Tensor]:
        """Corner crops of the feature map; right-side crops mirrored."""
        out: dict[str, Tensor] = {}
        for name in self.subregions:
            crop = ad.crop2d(g, CORNER_OF_SUBREGION[name], self.l_sub)
            out[name] = ad.hflip2d(crop) if name.startswith("right") else crop
        return out

    def _au_nets(self, shallow: Tensor, branch: str) -> AUNetOutputs:
        m = self.cfg.model
        latent = ad.batched_linear_in(shallow, self._p(f"pin.{branch}.au.latent.w"),
                                      self._p(f"pin.{branch}.au.latent.b"))
        if m.per_dim_attention:
            weight = ad.sigmoid(ad.batched_linear(latent, self._p(f"pin.{branch}.au.attn.w"),
                                                  self._p(f"pin.{branch}.au.attn.b")))
            weighted = ad.mul(latent, weight)
        else:
            weight = ad.sigmoid(ad.batched_dot(latent, self._p(f"pin.{branch}.au.attn.w"),
                                               self._p(f"pin.{branch}.au.attn.b")))
            weighted = ad.scale_lastdim(latent, weight)
        reduced = ad.batched_linear(weighted, self._p(f"pin.{branch}.au.reduce.w"),
                                    self._p(f"pin.{branch}.au.reduce.b"))
        prob = ad.sigmoid(ad.batched_dot(weighted, self._p(f"pin.{branch}.au.occ.w"),
                                         self._p(f"pin.{branch}.au.occ.b")))
        bsz, mm, rdim = reduced.shape
        features = ad.reshape(reduced, (bsz, mm * rdim))
        return AUNetOutputs(latent=latent, weighted=weighted, reduced=reduced, prob=prob, features=features)

    def prior_branch(self, subregion_map: Tensor, branch: str) -> Tensor:
        """Shallow per-subregion feature: conv3x3 -> relu -> GAP."""
        h = ad.relu(ad.conv2d_3x3(subregion_map, self._p(f"pin.{branch}.conv.w"),
                                  self._p(f"pin.{branch}.conv.b")))
        return ad.global_avg_pool(h)

    def forward(self, images: np.ndarray | Tensor, mode: str = "train") -> ForwardResult:
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        g = self.extract_features(images)

        # Target side first: its op sequence never depends on the mode, which
        # keeps q bit-identical whether or not the prior side runs afterward.
        th = ad.relu(ad.conv2d_3x3(g, self._p("trn.conv.w"), self._p("trn.conv.b")))
        t_logits = ad.linear(ad.global_avg_pool(th), self._p("trn.fc.w"), self._p("trn.fc.b"))
        q = ad.softmax_rows(t_logits, 1.0)
        if mode == "infer":
            return ForwardResult(pin=None, trn=TRNOutputs(logits=t_logits, q=q, q_soft=None, w_au=None, beta=None))
        q_soft = ad.softmax_rows(t_logits, self.temperature)

        crops = self.extract_subregions(g)
        logits: list[Tensor] = []
        p_list: list[Tensor] = []
        p_soft_list: list[Tensor] = []
        au: dict[str, AUNetOutputs] = {}
        features: list[Tensor] = []
        for name in self.subregions:
            branch = BRANCH_OF_SUBREGION[name]
            shallow = self.prior_branch(crops[name], branch)
            outs = self._au_nets(shallow, branch)
            au[name] = outs
            features.append(outs.features)
            t_n = ad.linear(outs.features, self._p(f"pin.head.{name}.w"), self._p(f"pin.head.{name}.b"))
            logits.append(t_n)
            p_list.append(ad.softmax_rows(t_n, 1.0))
            p_soft_list.append(ad.softmax_rows(t_n, self.temperature))

        gate_logits = ad.linear(ad.concat_cols(features), self._p("pin.gate.w"), self._p("pin.gate.b"))
        gate_w = ad.softmax_rows(gate_logits, 1.0)
        p_soft_stack = ad.stack_axis1(p_soft_list)
        intermediate = ad.convex_combine(gate_w, p_soft_stack)

        teacher_stack = p_soft_stack.detach() if self.cfg.flags.detach_teachers else p_soft_stack
        w_au = beta = None
        if len(self.subregions) >= 2:
            w_au = ensemble_confidence(teacher_stack)
            if self.cfg.flags.disable_uem:
                beta = Tensor(np.ones(w_au.shape[0]))
            else:
                beta = distill_weight(w_au)

        pin = PINOutputs(
            subregion_names=self.subregions,
            au=au,
            logits=logits,
            p=p_list,
            p_soft=p_soft_list,
            p_soft_stack=p_soft_stack,
            teacher_stack=teacher_stack,
            gate_weights=gate_w,
            intermediate=intermediate,
        )
        trn = TRNOutputs(logits=t_logits, q=q, q_soft=q_soft, w_au=w_au, beta=beta)
        return ForwardResult(pin=pin, trn=trn)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_VERSION = 1


def save_checkpoint(directory: str | Path, model: Model) -> Path:
    """Write manifest.json plus one raw little-endian float32 file per parameter."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "dtype": "float32",
        "init_seed": model.init_seed,
        "config_sha256": model.cfg.sha256(),
        "params": [{"name": name, "shape": list(t.shape)} for name, t in model.params.items()],
    }
    with open(directory / CHECKPOINT_MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    for name, tensor in model.params.items():
        payload = tensor.data.astype("<f4").tobytes(order="C")
        (directory / f"{name}.bin").write_bytes(payload)
    return directory


class CheckpointError(RuntimeError):
    """Checkpoint directory is missing, inconsistent, or shape-mismatched."""


def load_checkpoint(directory: str | Path, model: Model) -> None:
    """Load parameters into ``model``, verifying names and shapes against the manifest."""
    directory = Path(directory)
    manifest_path = directory / CHECKPOINT_MANIFEST
    if not manifest_path.exists():
        raise CheckpointError(f"no {CHECKPOINT_MANIFEST} in {directory}")
    manifest = json.loads(manifest_path.read_text())
    listed = {entry["name"]: tuple(entry["shape"]) for entry in manifest["params"]}
    expected = {name: t.shape for name, t in model.params.items()}
    if listed != expected:
        missing = sorted(set(expected) - set(listed))
        extra = sorted(set(listed) - set(expected))
        wrong = sorted(n for n in set(listed) & set(expected) if listed[n] != expected[n])
        raise CheckpointError(f"manifest mismatch: missing={missing} extra={extra} shape={wrong}")
    for name, tensor in model.params.items():
        raw = (directory / f"{name}.bin").read_bytes()
        count = int(np.prod(tensor.shape)) if tensor.shape else 1
        if len(raw) != 4 * count:
            raise CheckpointError(f"{name}.bin holds {len(raw)} bytes, expected {4 * count}")
        values = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(tensor.shape)
        tensor.data = values
        tensor.grad = np.zeros_like(values)


def load_model(config: RunConfig, checkpoint_dir: str | Path) -> Model:
    model = Model(config)
    load_checkpoint(checkpoint_dir, model)
    return model
