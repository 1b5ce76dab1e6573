"""FGSM and PGD attacks under an l-infinity budget.

All attacks take gradients with the model switched to eval mode (and switched
back afterwards), treat the model as frozen, and clamp adversarial points to
the [0, 1] pixel domain. Randomness comes only from an explicit seed, so the
same (model, batch, seed) triple always reproduces the same perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from ardir.errors import ConfigurationError, NonFiniteError
from ardir.seeding import make_generator


@dataclass(frozen=True)
class PerturbationBudget:
    """l-infinity ball of radius epsilon, walked with step_size for steps iterations."""

    epsilon: float
    step_size: float
    steps: int
    random_init: bool = True
    norm: str = "linf"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigurationError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.step_size <= 0:
            raise ConfigurationError(f"step size must be positive, got {self.step_size}")
        if self.steps < 1:
            raise ConfigurationError(f"iteration count must be >= 1, got {self.steps}")
        if self.norm != "linf":
            raise ConfigurationError(f"only the linf norm is supported, got {self.norm!r}")


def project_linf(eta: Tensor, epsilon: float) -> Tensor:
    """Coordinate-wise projection onto the epsilon ball (idempotent)."""
    return eta.clamp(-epsilon, epsilon)


def _input_gradient(model, x: Tensor, y: Tensor) -> Tensor:
    """Cross-entropy gradient w.r.t. the input, computed in eval mode."""
    was_training = model.training
    model.eval()
    try:
        x_req = x.detach().requires_grad_(True)
        loss = F.cross_entropy(model(x_req), y, reduction="sum")
        (grad,) = torch.autograd.grad(loss, x_req)
    finally:
        model.train(was_training)
    finite = torch.isfinite(grad.flatten(1)).all(dim=1)
    if not bool(finite.all()):
        bad = torch.nonzero(~finite).flatten().tolist()
        raise NonFiniteError(f"non-finite input gradient for batch indices {bad}")
    return grad


def fgsm(model, x: Tensor, y: Tensor, epsilon: float) -> Tensor:
    """Single signed-gradient step of size epsilon, clamped to [0, 1]."""
    if epsilon < 0:
        raise ConfigurationError(f"epsilon must be nonnegative, got {epsilon}")
    if epsilon == 0:
        return x.detach().clone()
    grad = _input_gradient(model, x, y)
    return (x + epsilon * torch.sign(grad)).clamp(0.0, 1.0).detach()


def pgd(
    model,
    x: Tensor,
    y: Tensor,
    budget: PerturbationBudget,
    seed: int | None = None,
) -> Tensor:
    """Iterated signed-gradient ascent projected back onto the budget ball.

    The perturbation starts at zero, or uniform in [-eps, eps] when
    ``budget.random_init`` is set (seeded). After every step the perturbation
    is clipped to the ball and the point is clamped to [0, 1]; the next
    gradient is taken at the clamped point.
    """
    eps = budget.epsilon
    if eps == 0:
        return x.detach().clone()
    x = x.detach()
    if budget.random_init:
        g = make_generator(seed if seed is not None else 0)
        eta = torch.empty_like(x).uniform_(-eps, eps, generator=g)
    else:
        eta = torch.zeros_like(x)
    z = (x + eta).clamp(0.0, 1.0)
    for _ in range(budget.steps):
        grad = _input_gradient(model, z, y)
        eta = project_linf(z - x + budget.step_size * torch.sign(grad), eps)
        z = (x + eta).clamp(0.0, 1.0)
    return z.detach()


def attack_outcome(model, x_adv: Tensor, y: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Per-example (final loss, attack-success flag, predicted class) in eval mode."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            logits = model(x_adv)
    finally:
        model.train(was_training)
    loss = F.cross_entropy(logits, y, reduction="none")
    pred = logits.argmax(dim=1)
    return loss, pred != y, pred


def pgd_multi_restart(
    model,
    x: Tensor,
    y: Tensor,
    budget: PerturbationBudget,
    restarts: int = 1,
    seed: int | None = None,
) -> Tensor:
    """Worst case over several independently initialized PGD runs.

    Restart r uses seed ``seed + r``, so a single restart is bitwise identical
    to plain pgd with the same seed. Per example, a restart that flips the
    prediction beats any that does not; ties are broken by final loss (higher
    wins, earlier restart on equal loss). This makes robust accuracy monotone
    nonincreasing in the number of restarts.
    """
    if restarts < 1:
        raise ConfigurationError(f"restarts must be >= 1, got {restarts}")
    best_adv = best_loss = best_success = None
    for r in range(restarts):
        r_seed = None if seed is None else seed + r
        adv = pgd(model, x, y, budget, seed=r_seed)
        loss, success, _ = attack_outcome(model, adv, y)
        if best_adv is None:
            best_adv, best_loss, best_success = adv, loss, success
            continue
        better = (success & ~best_success) | (
            (success == best_success) & (loss > best_loss)
        )
        expand = better.view(-1, *([1] * (adv.dim() - 1)))
        best_adv = torch.where(expand, adv, best_adv)
        best_loss = torch.where(better, loss, best_loss)
        best_success = torch.where(better, success, best_success)
    return best_adv
