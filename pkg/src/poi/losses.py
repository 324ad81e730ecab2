"""Loss terms, the ensemble-consistency confidence score, and their composition.

All terms are tape expressions, so one backward call through the composed
objective trains every parameter. Distillation targets are detached by
default (teachers, not trainees); a config flag restores full backprop for
gradient-oracle verification and ablations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import AblationFlags, HyperParams

if TYPE_CHECKING:
    from .model import ForwardResult
    from .priors import AUPriorTable


def bce_mean(pairs: Sequence[tuple[Tensor, np.ndarray]]) -> Tensor:
    """Mean binary cross-entropy over every (probabilities, targets) block.

    Each pair holds predicted occurrence probabilities [B, M] and matching
    smoothed targets; the mean runs over all B * sum(M) scalar terms.
    """
    if not pairs:
        raise ValueError("bce_mean needs at least one block")
    count = 0
    acc = None
    for probs, targets in pairs:
        targets = np.asarray(targets, dtype=ad.DTYPE)
        if targets.shape != probs.shape:
            raise ad.ShapeError(f"bce_mean: targets {targets.shape} vs probs {probs.shape}")
        y = Tensor(targets)
        y_inv = Tensor(1.0 - targets)
        term = ad.add(ad.mul(y, ad.log_clamped(probs)),
                      ad.mul(y_inv, ad.log_clamped(ad.affine(probs, -1.0, 1.0))))
        block = ad.sum_all(term)
        acc = block if acc is None else ad.add(acc, block)
        count += probs.data.size
    return ad.smul(acc, -1.0 / count)


def ce_mean(dists: Sequence[Tensor], labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of ``labels`` over the batch and all heads."""
    if not dists:
        raise ValueError("ce_mean needs at least one distribution")
    labels = np.asarray(labels)
    acc = None
    for p in dists:
        block = ad.sum_all(ad.log_clamped(ad.gather_rows(p, labels)))
        acc = block if acc is None else ad.add(acc, block)
    return ad.smul(acc, -1.0 / (labels.shape[0] * len(dists)))


def kl_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise KL(a || b) for matching stacks of distributions (last axis = classes)."""
    if a.shape != b.shape:
        raise ad.ShapeError(f"kl_rows: {a.shape} vs {b.shape}")
    elem = ad.mul(a, ad.sub(ad.log_clamped(a), ad.log_clamped(b)))
    return ad.sum_lastdim(elem)


def kl_to_students(teacher: Tensor, students: Tensor) -> Tensor:
    """Mean KL(teacher || student_n) over batch and the N stacked students.

    teacher [B, C], students [B, N, C].
    """
    n = students.shape[1]
    teacher_stack = ad.stack_axis1([teacher] * n)
    per_pair = kl_rows(teacher_stack, students)
    return ad.mean_all(per_pair)


def kl_from_teachers(teachers: Tensor, target: Tensor, weights: Tensor) -> Tensor:
    """Per-sample-weighted mean KL(teacher_n || target) over batch and teachers.

    teachers [B, N, C], target [B, C], weights [B].
    """
    n = teachers.shape[1]
    target_stack = ad.stack_axis1([target] * n)
    per_pair = kl_rows(teachers, target_stack)
    weighted = ad.mul_colvec(per_pair, weights)
    return ad.mean_all(weighted)


def ensemble_confidence(stack: Tensor) -> Tensor:
    """One minus the class-summed variance of N stacked distributions.

    stack [B, N, C] -> [B]. Equal members give 1; the value never drops below
    1/C because the summed variance of simplex points is at most 1 - 1/C.
    """
    if stack.data.ndim != 3 or stack.shape[1] < 2:
        raise ValueError(f"ensemble_confidence needs [B, N>=2, C] distributions, got {stack.shape}")
    bsz, n, _ = stack.shape
    uniform = Tensor(np.full((bsz, n), 1.0 / n))
    mean_sq = ad.convex_combine(uniform, ad.square(stack))
    mean = ad.convex_combine(uniform, stack)
    total_var = ad.sum_lastdim(ad.sub(mean_sq, ad.square(mean)))
    return ad.affine(total_var, -1.0, 1.0)


def distill_weight(confidence: Tensor) -> Tensor:
    """exp(1 - confidence) - 1: zero at full agreement, growing as consensus breaks."""
    return ad.affine(ad.exp(ad.affine(confidence, -1.0, 1.0)), 1.0, -1.0)


@dataclass
class LossBreakdown:
    """Per-step scalar components plus the tape tensors driving backward."""

    l_au: float
    l_ce_au: float
    l_kl_au: float
    l_ce_tar: float
    l_kl_tar: float
    total: float
    gate_aux: float
    w_au: np.ndarray
    beta: np.ndarray
    total_tensor: Tensor
    objective_tensor: Tensor

    def components(self) -> dict[str, float]:
        return {
            "l_au": self.l_au,
            "l_ce_au": self.l_ce_au,
            "l_kl_au": self.l_kl_au,
            "l_ce_tar": self.l_ce_tar,
            "l_kl_tar": self.l_kl_tar,
            "total": self.total,
        }

    def log_record(self, step: int, epoch: int) -> dict:
        record: dict = {"step": step, "epoch": epoch}
        record.update(self.components())
        record["mean_w_au"] = float(self.w_au.mean()) if self.w_au.size else 0.0
        record["mean_beta"] = float(self.beta.mean()) if self.beta.size else 0.0
        return record


def _zero() -> Tensor:
    return Tensor(np.asarray(0.0))


def total_loss(
    fwd: "ForwardResult",
    labels: np.ndarray,
    table: "AUPriorTable",
    hp: HyperParams,
    flags: AblationFlags,
    region_of: dict[str, str] | None = None,
) -> LossBreakdown:
    """Compose the training objective from one forward pass.

    total = lambda1 * AU + lambda2 * CE_sub + lambda3 * CE_tar + T^2 * (KL_mutual + KL_distill).
    The gate's auxiliary CE rides along in ``objective_tensor`` but stays
    outside ``total`` (it reaches only the gate parameters).
    """
    flags = flags.normalized()
    labels = np.asarray(labels)
    pin, trn = fwd.pin, fwd.trn

    l_ce_tar = ce_mean([trn.q], labels)

    if pin is None:
        zero = _zero()
        total_t = ad.smul(l_ce_tar, hp.lambda3)
        bsz = labels.shape[0]
        return LossBreakdown(
            l_au=0.0, l_ce_au=0.0, l_kl_au=0.0,
            l_ce_tar=l_ce_tar.item(), l_kl_tar=0.0,
            total=total_t.item(), gate_aux=0.0,
            w_au=np.zeros(bsz), beta=np.zeros(bsz),
            total_tensor=total_t, objective_tensor=total_t,
        )

    kl_sign = -1.0 if flags.kl_sign == "negative" else 1.0

    if flags.disable_pb:
        l_au = _zero()
    else:
        pairs = []
        for name in pin.subregion_names:
            region = region_of[name] if region_of else ("eye" if "eye" in name else "mouth")
            target_matrix = table.pseudolabel_matrix(region, hp.epsilon)
            pairs.append((pin.au[name].prob, target_matrix[labels]))
        l_au = bce_mean(pairs)

    l_ce_au = ce_mean(pin.p, labels)

    if flags.disable_oim:
        l_kl_au = _zero()
    else:
        teacher = pin.intermediate.detach() if flags.detach_teachers else pin.intermediate
        l_kl_au = ad.smul(kl_to_students(teacher, pin.p_soft_stack), kl_sign)

    if trn.beta is None:
        raise ValueError("distillation needs at least two subregions (or baseline_only)")
    target = trn.q_soft if flags.temper_q else trn.q
    l_kl_tar = ad.smul(kl_from_teachers(pin.teacher_stack, target, trn.beta), kl_sign)

    total_t = ad.smul(l_au, hp.lambda1)
    total_t = ad.add(total_t, ad.smul(l_ce_au, hp.lambda2))
    total_t = ad.add(total_t, ad.smul(l_ce_tar, hp.lambda3))
    total_t = ad.add(total_t, ad.smul(ad.add(l_kl_au, l_kl_tar), hp.t * hp.t))

    objective = total_t
    gate_aux_val = 0.0
    if flags.gate_aux_ce and not flags.disable_oim:
        hard_stack = ad.stack_axis1([p.detach() for p in pin.p])
        gate_mix = ad.convex_combine(pin.gate_weights, hard_stack)
        gate_aux = ce_mean([gate_mix], labels)
        gate_aux_val = gate_aux.item()
        objective = ad.add(total_t, gate_aux)

    return LossBreakdown(
        l_au=l_au.item(),
        l_ce_au=l_ce_au.item(),
        l_kl_au=l_kl_au.item(),
        l_ce_tar=l_ce_tar.item(),
        l_kl_tar=l_kl_tar.item(),
        total=total_t.item(),
        gate_aux=gate_aux_val,
        w_au=trn.w_au.data.copy() if trn.w_au is not None else np.zeros(labels.shape[0]),
        beta=trn.beta.data.copy() if trn.beta is not None else np.zeros(labels.shape[0]),
        total_tensor=total_t,
        objective_tensor=objective,
    )
