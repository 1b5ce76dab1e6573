"""Distillation losses: temperature softmax, KL, feature-stack LPIPS, ARD, ARDIR.

The LPIPS here is the feature-distance variant used for representation
distillation: each tapped channel map is divided by its spatial sum, each
layer's channel stack is scaled by 1/sqrt(W*H), and the per-layer stacks are
concatenated into a single vector xi per example. The representation loss is
the L2 distance between the student's xi on its input and the (frozen)
teacher's xi on the teacher data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import torch
import torch.nn.functional as F
from torch import Tensor

from ardir.errors import ConfigurationError
from ardir.models import TapClassifier, check_tap_compatibility

KL_FLOOR = 1e-12
LPIPS_EPS = 1e-8

Variant = Literal["sat", "ard", "ardir"]


@dataclass(frozen=True)
class ArdirLossConfig:
    """Loss-variant selector plus the distillation hyperparameters.

    beta weights the internal-representation term against the KL term
    (ardir only); temperature softens both softmaxes; alpha is the classic
    distillation mixing weight and is fixed to 1 for the ard variant.
    """

    variant: Variant = "ardir"
    beta: float = 0.0
    temperature: float = 1.0
    alpha: float = 1.0
    student_lpips_input: Literal["adversarial", "clean"] = "adversarial"
    representation_distance: Literal["lpips", "raw-l2"] = "lpips"

    def __post_init__(self):
        if self.variant not in ("sat", "ard", "ardir"):
            raise ConfigurationError(f"unknown loss variant: {self.variant!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError(f"beta must be in [0, 1], got {self.beta}")
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.variant == "ard" and self.alpha != 1.0:
            raise ConfigurationError("the ard variant fixes alpha = 1")


def softmax_temperature(logits: Tensor, temperature: float) -> Tensor:
    """Temperature-softened softmax, computed with max subtraction."""
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    scaled = logits / temperature
    shifted = scaled - scaled.max(dim=-1, keepdim=True).values
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def kl_divergence(p: Tensor, q: Tensor, floor: float = KL_FLOOR) -> Tensor:
    """Row-wise KL(p || q) = sum_i p_i log(p_i / q_i).

    Both arguments are floored at ``floor`` inside the logs, which keeps the
    divergence finite against one-hot targets and exactly zero when p == q.
    Zero-probability slots contribute nothing (0 * log 0 = 0).
    """
    if p.shape != q.shape:
        raise ConfigurationError(f"shape mismatch: {tuple(p.shape)} vs {tuple(q.shape)}")
    terms = p * (torch.log(p.clamp_min(floor)) - torch.log(q.clamp_min(floor)))
    return terms.sum(dim=-1)


def lpips_normalize(activations: list[Tensor], eps: float = LPIPS_EPS) -> Tensor:
    """Stack tapped activations into the normalized feature vector xi.

    Each channel map is divided by its spatial sum (the sum is shifted by eps
    only when its magnitude falls below eps), each layer is scaled by
    1/sqrt(W*H), and all layers are flattened and concatenated. Accepts maps
    shaped (B, C, H, W) or a single example's (C, H, W); returns (B, D) or (D,).
    """
    if not activations:
        raise ConfigurationError("need at least one tapped activation")
    single = activations[0].dim() == 3
    pieces = []
    for a in activations:
        if single:
            a = a.unsqueeze(0)
        h, w = a.shape[-2], a.shape[-1]
        sums = a.sum(dim=(-2, -1), keepdim=True)
        denom = torch.where(sums.abs() < eps, sums + eps, sums)
        pieces.append((a / denom).flatten(1) / math.sqrt(w * h))
    stack = torch.cat(pieces, dim=1)
    return stack.squeeze(0) if single else stack


def lpips_stabilized_channels(activations: list[Tensor], eps: float = LPIPS_EPS) -> int:
    """How many channel maps needed the stabilized denominator."""
    n = 0
    for a in activations:
        sums = a.sum(dim=(-2, -1))
        n += int((sums.abs() < eps).sum())
    return n


def raw_feature_stack(activations: list[Tensor]) -> Tensor:
    """Unnormalized alternative to xi: flattened activations, concatenated."""
    single = activations[0].dim() == 3
    if single:
        return torch.cat([a.flatten() for a in activations])
    return torch.cat([a.flatten(1) for a in activations], dim=1)


def lpips_distance(stack_a: Tensor, stack_b: Tensor) -> Tensor:
    """Row-wise L2 distance between two feature stacks."""
    if stack_a.shape != stack_b.shape:
        raise ConfigurationError(
            f"feature stack shape mismatch: {tuple(stack_a.shape)} vs {tuple(stack_b.shape)}"
        )
    return (stack_a - stack_b).pow(2).sum(dim=-1).sqrt()


def lpips_ardir(
    x_student: Tensor,
    x_teacher: Tensor,
    student: TapClassifier,
    teacher: TapClassifier,
    eps: float = LPIPS_EPS,
) -> Tensor:
    """Cross-model representation distance ||xi(x_student) - xi(x_teacher)||_2.

    The student side keeps its gradient; the teacher side is evaluated frozen
    (eval mode, no gradient). Tap shapes must agree layer by layer.
    """
    check_tap_compatibility(student, teacher)
    xi_s = lpips_normalize(student.forward_with_taps(x_student)[1], eps)
    was_training = teacher.training
    teacher.eval()
    try:
        with torch.no_grad():
            xi_t = lpips_normalize(teacher.forward_with_taps(x_teacher)[1], eps)
    finally:
        teacher.train(was_training)
    return lpips_distance(xi_s, xi_t)


@dataclass
class TeacherSignal:
    """Frozen per-batch teacher outputs used as distillation labels.

    ``kl_targets`` holds the temperature-softened teacher distribution, with
    examples the teacher misclassifies replaced by the one-hot true label
    (flagged in ``replaced``). Feature stacks are attached only when the loss
    needs the representation term.
    """

    logits: Tensor
    kl_targets: Tensor
    replaced: Tensor
    feature_stack: Optional[Tensor] = None
    raw_stack: Optional[Tensor] = None
    stabilized_channels: int = 0

    @property
    def replacement_count(self) -> int:
        return int(self.replaced.sum())


def replace_wrong_teacher_labels(
    teacher_logits: Tensor, y: Tensor, temperature: float = 1.0
) -> TeacherSignal:
    """Build KL targets from teacher logits, swapping in one-hot labels
    wherever the teacher's raw-logit argmax disagrees with the true class."""
    logits = teacher_logits.detach()
    replaced = logits.argmax(dim=1) != y
    soft = softmax_temperature(logits, temperature)
    one_hot = F.one_hot(y, num_classes=logits.shape[1]).to(soft.dtype)
    targets = torch.where(replaced.unsqueeze(1), one_hot, soft)
    return TeacherSignal(logits=logits, kl_targets=targets, replaced=replaced)


def build_teacher_signal(
    teacher: TapClassifier,
    x_teacher: Tensor,
    y: Tensor,
    config: ArdirLossConfig,
    *,
    with_features: bool | None = None,
) -> TeacherSignal:
    """Evaluate the frozen teacher on the teacher data and package its labels."""
    if with_features is None:
        with_features = config.variant == "ardir" and config.beta > 0
    was_training = teacher.training
    teacher.eval()
    try:
        with torch.no_grad():
            logits, feats = teacher.forward_with_taps(x_teacher)
    finally:
        teacher.train(was_training)
    signal = replace_wrong_teacher_labels(logits, y, config.temperature)
    if with_features:
        if config.representation_distance == "raw-l2":
            signal.raw_stack = raw_feature_stack(feats)
        else:
            signal.feature_stack = lpips_normalize(feats)
            signal.stabilized_channels = lpips_stabilized_channels(feats)
    return signal


def ard_loss(
    student_logits: Tensor,
    teacher_logits: Tensor,
    y: Tensor,
    alpha: float = 1.0,
    temperature: float = 1.0,
) -> Tensor:
    """alpha * t^2 * KL(soft student, soft teacher) + (1-alpha) * CE(student, y)."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must be in [0, 1], got {alpha}")
    kl = kl_divergence(
        softmax_temperature(student_logits, temperature),
        softmax_temperature(teacher_logits.detach(), temperature),
    ).mean()
    loss = alpha * (temperature * temperature) * kl
    if alpha < 1.0:
        loss = loss + (1.0 - alpha) * F.cross_entropy(student_logits, y)
    return loss


@dataclass
class LossBreakdown:
    """Per-batch loss decomposition for the metrics stream."""

    total: float = 0.0
    kl_term: float = 0.0
    lpips_term: float = 0.0
    replacement_count: int = 0
    stabilized_channels: int = 0
    batch_size: int = 0


def ardir_objective(
    student: TapClassifier,
    x_adv: Tensor,
    signal: TeacherSignal,
    config: ArdirLossConfig,
    x_clean: Tensor | None = None,
) -> tuple[Tensor, LossBreakdown]:
    """(1-beta) * KL(soft student on x_adv, teacher targets) + beta * rep distance.

    The student runs on the adversarial example; with the clean-input ablation
    the representation term alone is taken from a clean-input forward. Returns
    the scalar loss plus its term breakdown.
    """
    beta = config.beta
    logits, feats = student.forward_with_taps(x_adv)
    kl = kl_divergence(softmax_temperature(logits, config.temperature), signal.kl_targets).mean()
    parts = LossBreakdown(
        kl_term=float(kl.detach()),
        replacement_count=signal.replacement_count,
        batch_size=int(x_adv.shape[0]),
    )
    if beta > 0:
        if config.student_lpips_input == "clean":
            if x_clean is None:
                raise ConfigurationError("clean-input representation term needs x_clean")
            feats = student.forward_with_taps(x_clean)[1]
        if config.representation_distance == "raw-l2":
            if signal.raw_stack is None:
                raise ConfigurationError("teacher signal is missing the raw feature stack")
            rep = lpips_distance(raw_feature_stack(feats), signal.raw_stack).mean()
            parts.stabilized_channels = signal.stabilized_channels
        else:
            if signal.feature_stack is None:
                raise ConfigurationError("teacher signal is missing the feature stack")
            rep = lpips_distance(lpips_normalize(feats), signal.feature_stack).mean()
            parts.stabilized_channels = (
                lpips_stabilized_channels(feats) + signal.stabilized_channels
            )
        parts.lpips_term = float(rep.detach())
        loss = (1.0 - beta) * kl + beta * rep
    else:
        loss = (1.0 - beta) * kl
    parts.total = float(loss.detach())
    return loss, parts


def ardir_loss(
    student: TapClassifier,
    x: Tensor,
    eta: Tensor,
    signal: TeacherSignal,
    config: ArdirLossConfig,
) -> Tensor:
    """Scalar ARDIR objective for a clean batch x and perturbation eta."""
    loss, _ = ardir_objective(student, x + eta, signal, config, x_clean=x)
    return loss
