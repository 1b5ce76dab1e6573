"""SGD with momentum, L2-in-gradient weight decay, and milestone lr drops."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from ardir.errors import ConfigurationError, NonFiniteError


@dataclass(frozen=True)
class TrainingSchedule:
    """Epoch count, batch size, and the SGD hyperparameters.

    ``milestones`` is a list of (epoch, divisor) pairs; from the given epoch
    on, the learning rate is divided by that divisor (cumulatively across
    milestones). Epochs are 1-based.
    """

    epochs: int
    batch_size: int
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    milestones: tuple[tuple[int, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigurationError("weight decay must be nonnegative")
        epochs_seen = [m[0] for m in self.milestones]
        if epochs_seen != sorted(set(epochs_seen)):
            raise ConfigurationError("milestone epochs must be strictly increasing")
        if any(div <= 1 for _, div in self.milestones):
            raise ConfigurationError("milestone divisors must be > 1")

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for milestone, divisor in self.milestones:
            if epoch >= milestone:
                lr /= divisor
        return lr


class SgdOptimizer:
    """Thin wrapper over torch.optim.SGD applying the schedule's lr per epoch.

    Parameters are updated with the classic momentum recurrence
    (buf <- momentum*buf + grad, theta <- theta - lr*buf) and weight decay
    added to the gradient as an L2 term. A step with any non-finite gradient
    component is aborted with the offending parameter named.
    """

    def __init__(self, parameters, schedule: TrainingSchedule):
        self.schedule = schedule
        self._params = list(parameters)
        self._named = None
        self._sgd = torch.optim.SGD(
            self._params,
            lr=schedule.lr,
            momentum=schedule.momentum,
            weight_decay=schedule.weight_decay,
        )

    @classmethod
    def for_model(cls, model: torch.nn.Module, schedule: TrainingSchedule) -> "SgdOptimizer":
        opt = cls(model.parameters(), schedule)
        opt._named = list(model.named_parameters())
        return opt

    def zero_grad(self):
        self._sgd.zero_grad(set_to_none=True)

    def step(self, epoch: int, *, batch: int | None = None) -> float:
        """Apply one update at the given epoch's effective lr; returns that lr."""
        named = self._named or [(f"param{i}", p) for i, p in enumerate(self._params)]
        for name, p in named:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NonFiniteError(
                    f"non-finite gradient in {name}", epoch=epoch, batch=batch
                )
        lr = self.schedule.lr_at(epoch)
        for group in self._sgd.param_groups:
            group["lr"] = lr
        self._sgd.step()
        return lr

    def state_dict(self) -> dict:
        return self._sgd.state_dict()

    def load_state_dict(self, state: dict) -> None:
        self._sgd.load_state_dict(state)
