"""Adversarial training and robust knowledge distillation toolkit.

Implements standard adversarial training (SAT), adversarial robust
distillation (ARD), and ARDIR -- distillation that additionally matches the
teacher's internal representations through an LPIPS-style feature distance --
together with FGSM/PGD attacks, an evaluation harness, and an experiment
service with a thin CLI client.
"""

__version__ = "0.1.0"

from ardir.errors import ArdirError, ConfigurationError, DatasetError, NonFiniteError

__all__ = [
    "ArdirError",
    "ConfigurationError",
    "DatasetError",
    "NonFiniteError",
    "__version__",
]
