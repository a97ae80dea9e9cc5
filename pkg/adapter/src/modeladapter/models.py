"""Model backends: a pure-arithmetic fixture and pretrained torchvision nets.

Every backend answers ``classify(shape, raw) -> (label, confidence, scores)``
where ``raw`` is the image as little-endian float32 bytes in row-major
(h, w, c) order, exactly as it crosses the wire, and ``scores`` is the full
per-class probability vector.
"""

from __future__ import annotations

import math
import struct


class ModelLoadError(Exception):
    """The requested model cannot be brought up."""


MULTIPLIER = 2654435761
BIAS = -0.125
TWO32 = 2**32


def _weight(i: int) -> float:
    return ((i + 1) * MULTIPLIER % TWO32) / TWO32 - 0.5


class FixtureLinear:
    """Deterministic logistic model over the flat pixel index.

    Weights are a hash ramp, w_i = ((i+1) * 2654435761 mod 2^32) / 2^32 - 1/2
    with bias -1/8; the dot product is accumulated left to right in double
    precision over the float32 wire values and squashed by a logistic.  The
    engine ships the same arithmetic as a builtin, which is what makes the
    conformance transcript comparable bit for bit.  No ML stack needed.
    """

    n_classes = 2

    def classify(self, shape, raw: bytes):
        n = shape[0] * shape[1] * shape[2]
        values = struct.unpack("<%df" % n, raw)
        z = BIAS
        for i, v in enumerate(values):
            z += _weight(i) * v
        p = 1.0 / (1.0 + math.exp(-z))
        label = int(p > 0.5)
        return label, (p if label == 1 else 1.0 - p), [1.0 - p, p]


class TorchvisionModel:
    """A pretrained torchvision classifier behind its default preprocessing.

    Wire pixels are assumed to lie in [0, 1]; the default-weight transforms
    handle resizing and normalization, so the engine can send images at
    whatever resolution it explains at.  Single-channel input is expanded
    to three channels.
    """

    def __init__(self, name: str):
        try:
            import torch  # noqa: F401
            from torchvision import models as tvm
        except ImportError as err:
            raise ModelLoadError(f"model {name!r} needs torch and torchvision: {err}") from None
        try:
            weights = tvm.get_model_weights(name).DEFAULT
            self.model = tvm.get_model(name, weights=weights).eval()
        except ValueError:
            raise ModelLoadError(f"unknown torchvision model {name!r}") from None
        except Exception as err:  # weight download, corrupt cache, ...
            raise ModelLoadError(f"loading {name!r} failed: {err}") from None
        self.transforms = weights.transforms()
        self.n_classes = len(weights.meta["categories"])

    def classify(self, shape, raw: bytes):
        import torch

        h, w, c = shape
        values = struct.unpack("<%df" % (h * w * c), raw)
        t = torch.tensor(values, dtype=torch.float32).reshape(h, w, c).permute(2, 0, 1)
        if c == 1:
            t = t.expand(3, -1, -1)
        with torch.no_grad():
            logits = self.model(self.transforms(t).unsqueeze(0))[0]
            probs = torch.softmax(logits, dim=0)
        label = int(probs.argmax())
        return label, float(probs[label]), [float(v) for v in probs]


def load_model(spec: str):
    """``fixture`` for the arithmetic model, else a torchvision model name."""
    if spec == "fixture":
        return FixtureLinear()
    return TorchvisionModel(spec)
