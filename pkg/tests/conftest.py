import numpy as np
import pytest
import torch

from ardir.models import LinearClassifier, SmallCNN


def tiny_cnn(seed=0, channels=(2, 3, 4), num_classes=3, input_size=8, in_channels=1):
    model = SmallCNN(
        in_channels=in_channels,
        num_classes=num_classes,
        input_size=input_size,
        channels=channels,
    )
    model.init_parameters(seed)
    return model


def linear_model(weight, bias=None):
    """Linear classifier with explicitly chosen weights (rows = classes)."""
    weight = torch.as_tensor(weight, dtype=torch.float32)
    model = LinearClassifier(in_features=weight.shape[1], num_classes=weight.shape[0])
    with torch.no_grad():
        model.linear.weight.copy_(weight)
        if bias is None:
            model.linear.bias.zero_()
        else:
            model.linear.bias.copy_(torch.as_tensor(bias, dtype=torch.float32))
    model.eval()
    return model


def random_images(n, shape=(1, 8, 8), seed=0):
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.uniform(0.1, 0.9, size=(n, *shape)).astype(np.float32))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
