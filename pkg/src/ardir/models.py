"""Classifiers with intermediate-activation taps, plus checkpoint I/O.

Every model exposes ``forward_with_taps`` returning logits together with the
ordered list of tapped activations (one per declared layer). Taps are taken
after the nonlinearity, so tapped maps are nonnegative. Weight init is
fan-in-scaled uniform from an explicit generator; the global torch RNG is
never consumed.
"""

from __future__ import annotations

import math
from typing import Sequence

import torch
from torch import Tensor, nn

from ardir.errors import ConfigurationError
from ardir.seeding import make_generator

CHECKPOINT_FORMAT_VERSION = 1


class TapClassifier(nn.Module):
    """Base class: subclasses set ``self.descriptor`` and implement taps."""

    descriptor: dict

    def forward_with_taps(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        raise NotImplementedError

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_with_taps(x)[0]

    def tap_shapes(self) -> list[tuple[int, int, int]]:
        """Declared (channels, height, width) of each tapped activation."""
        raise NotImplementedError

    def init_parameters(self, seed: int) -> None:
        g = make_generator(seed)
        for module in self.modules():
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                fan_in = module.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                with torch.no_grad():
                    module.weight.uniform_(-bound, bound, generator=g)
                    if module.bias is not None:
                        module.bias.uniform_(-bound, bound, generator=g)


class SmallCNN(TapClassifier):
    """Stack of stride-downsampling conv blocks with a linear head.

    Block i is Conv2d(3x3) + ReLU; the first block keeps resolution, later
    blocks halve it. The post-ReLU output of every block listed in ``taps``
    is exposed as an intermediate activation. No normalization or dropout,
    so train/eval forwards coincide and eval is deterministic.
    """

    def __init__(
        self,
        in_channels: int = 1,
        num_classes: int = 2,
        input_size: int = 8,
        channels: Sequence[int] = (16, 32, 64),
        taps: Sequence[int] | None = None,
    ):
        super().__init__()
        channels = tuple(int(c) for c in channels)
        if not channels:
            raise ConfigurationError("SmallCNN needs at least one conv block")
        final_size = input_size // (2 ** (len(channels) - 1))
        if final_size < 1:
            raise ConfigurationError(
                f"input_size {input_size} too small for {len(channels)} blocks"
            )
        if taps is None:
            taps = tuple(range(len(channels)))
        taps = tuple(sorted(int(t) for t in taps))
        if not taps:
            raise ConfigurationError("tap set must contain at least one layer")
        if taps[0] < 0 or taps[-1] >= len(channels):
            raise ConfigurationError(f"tap index out of range: {taps}")

        blocks = []
        prev = in_channels
        for i, ch in enumerate(channels):
            stride = 1 if i == 0 else 2
            blocks.append(nn.Conv2d(prev, ch, kernel_size=3, stride=stride, padding=1))
            prev = ch
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(channels[-1] * final_size * final_size, num_classes)
        self.taps = taps
        self._sizes = [input_size] + [
            max(1, input_size // (2**i)) for i in range(1, len(channels))
        ]
        self._channels = channels
        self.descriptor = {
            "arch": "small-cnn",
            "in_channels": in_channels,
            "num_classes": num_classes,
            "input_size": input_size,
            "channels": list(channels),
            "taps": list(taps),
        }

    def forward_with_taps(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        feats = []
        out = x
        for i, conv in enumerate(self.blocks):
            out = torch.relu(conv(out))
            if i in self.taps:
                feats.append(out)
        logits = self.head_logits(out)
        return logits, feats

    def head_logits(self, final_block_output: Tensor) -> Tensor:
        return self.head(final_block_output.flatten(1))

    def tap_shapes(self) -> list[tuple[int, int, int]]:
        return [(self._channels[i], self._sizes[i], self._sizes[i]) for i in self.taps]


class LinearClassifier(TapClassifier):
    """Flatten + single linear map. The logits (as a 1x1 map) are the only tap.

    Mainly useful as an analytically tractable attack target.
    """

    def __init__(self, in_features: int, num_classes: int = 2):
        super().__init__()
        self.linear = nn.Linear(in_features, num_classes)
        self.descriptor = {
            "arch": "linear",
            "in_features": in_features,
            "num_classes": num_classes,
        }

    def forward_with_taps(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        logits = self.linear(x.flatten(1))
        return logits, [logits[:, :, None, None]]

    def tap_shapes(self) -> list[tuple[int, int, int]]:
        return [(self.linear.out_features, 1, 1)]


def build_model(descriptor: dict, *, init_seed: int | None = None) -> TapClassifier:
    """Instantiate a classifier from its architecture descriptor."""
    desc = dict(descriptor)
    arch = desc.pop("arch", None)
    if arch == "small-cnn":
        model = SmallCNN(**desc)
    elif arch == "linear":
        model = LinearClassifier(**desc)
    else:
        raise ConfigurationError(f"unknown architecture id: {arch!r}")
    if init_seed is not None:
        model.init_parameters(init_seed)
    return model


def forward_with_taps(
    model: TapClassifier, x: Tensor, mode: str = "eval"
) -> tuple[Tensor, list[Tensor]]:
    """Run the model in the requested mode, restoring its previous mode after."""
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"mode must be 'train' or 'eval', got {mode!r}")
    was_training = model.training
    model.train(mode == "train")
    try:
        return model.forward_with_taps(x)
    finally:
        model.train(was_training)


def save_checkpoint(
    path,
    model: TapClassifier,
    *,
    epoch: int = 0,
    seed: int = 0,
    optimizer_state: dict | None = None,
) -> None:
    """Write a versioned checkpoint: weights + architecture + taps + counters."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "descriptor": model.descriptor,
        "tap_layers": list(getattr(model, "taps", [])),
        "epoch": int(epoch),
        "seed": int(seed),
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
    }
    if optimizer_state is not None:
        payload["optimizer_state"] = optimizer_state
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[TapClassifier, dict]:
    """Rebuild the model from a checkpoint; returns (model, metadata)."""
    payload = torch.load(path, weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format version: {version!r}")
    model = build_model(payload["descriptor"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    meta = {k: v for k, v in payload.items() if k != "state_dict"}
    return model, meta


def check_tap_compatibility(student: TapClassifier, teacher: TapClassifier) -> None:
    """Raise unless both models declare identical tap shapes, layer by layer."""
    s_shapes, t_shapes = student.tap_shapes(), teacher.tap_shapes()
    if len(s_shapes) != len(t_shapes):
        raise ConfigurationError(
            f"tap count mismatch: student has {len(s_shapes)}, teacher has {len(t_shapes)}"
        )
    for i, (s, t) in enumerate(zip(s_shapes, t_shapes)):
        if s != t:
            raise ConfigurationError(
                f"tap shape mismatch at layer {i}: student {s} vs teacher {t}"
            )
