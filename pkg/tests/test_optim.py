import pytest
import torch

from ardir.errors import ConfigurationError, NonFiniteError
from ardir.optim import SgdOptimizer, TrainingSchedule


def make_schedule(**kw):
    base = dict(epochs=200, batch_size=128, lr=0.1)
    base.update(kw)
    return TrainingSchedule(**base)


def test_plain_sgd_step():
    theta = torch.nn.Parameter(torch.tensor([1.0, -2.0, 0.5]))
    opt = SgdOptimizer([theta], make_schedule())
    theta.grad = torch.tensor([0.5, 0.5, -1.0])
    opt.step(epoch=1)
    assert torch.allclose(theta.detach(), torch.tensor([0.95, -2.05, 0.6]))


def test_milestone_divisors():
    sched = make_schedule(milestones=((100, 10.0), (150, 10.0)))
    assert sched.lr_at(1) == pytest.approx(0.1)
    assert sched.lr_at(99) == pytest.approx(0.1)
    assert sched.lr_at(100) == pytest.approx(0.01)
    assert sched.lr_at(149) == pytest.approx(0.01)
    assert sched.lr_at(150) == pytest.approx(0.001)
    assert sched.lr_at(200) == pytest.approx(0.001)


def test_momentum_recurrence_hand_unrolled():
    # buf1 = g, buf2 = 0.9*g + g = 1.9*g, so the second delta is -lr*1.9*g.
    g = torch.tensor([1.0, -3.0])
    theta = torch.nn.Parameter(torch.zeros(2))
    opt = SgdOptimizer([theta], make_schedule(momentum=0.9, lr=0.1))
    theta.grad = g.clone()
    opt.step(epoch=1)
    after_first = theta.detach().clone()
    assert torch.allclose(after_first, -0.1 * g)
    theta.grad = g.clone()
    opt.step(epoch=1)
    second_delta = theta.detach() - after_first
    assert torch.allclose(second_delta, -0.1 * 1.9 * g)


def test_weight_decay_shrinks_parameters():
    lam = 0.01
    theta = torch.nn.Parameter(torch.tensor([2.0, -4.0]))
    opt = SgdOptimizer([theta], make_schedule(weight_decay=lam, lr=0.1))
    theta.grad = torch.zeros(2)
    opt.step(epoch=1)
    assert torch.allclose(theta.detach(), torch.tensor([2.0, -4.0]) * (1 - 0.1 * lam))


def test_non_finite_gradient_aborts():
    model = torch.nn.Linear(2, 2)
    opt = SgdOptimizer.for_model(model, make_schedule())
    before = model.weight.detach().clone()
    model.weight.grad = torch.tensor([[float("nan"), 0.0], [0.0, 0.0]])
    model.bias.grad = torch.zeros(2)
    with pytest.raises(NonFiniteError, match="weight"):
        opt.step(epoch=3, batch=17)
    assert torch.equal(model.weight.detach(), before)


@pytest.mark.parametrize(
    "kw",
    [
        dict(lr=0.0),
        dict(lr=-1.0),
        dict(momentum=1.0),
        dict(momentum=-0.1),
        dict(weight_decay=-1e-4),
        dict(milestones=((100, 10.0), (100, 10.0))),
        dict(milestones=((150, 10.0), (100, 10.0))),
        dict(milestones=((100, 1.0),)),
        dict(epochs=0),
    ],
)
def test_schedule_validation(kw):
    with pytest.raises(ConfigurationError):
        make_schedule(**kw)
