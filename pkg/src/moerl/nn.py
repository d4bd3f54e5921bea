"""Layers, initialization, and the Adam optimizer for the autodiff core.

Weight matrices are initialized orthogonally and biases to zero (standard
for this agent family). All parameters are float64 leaves.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def orthogonal(shape: tuple[int, ...], rng: np.random.Generator, gain: float = 1.0) -> np.ndarray:
    """Orthogonal init: QR of a Gaussian draw, sign-fixed by diag(R).

    Shapes with more than 2 dims (conv kernels) are orthogonalized over the
    flattened trailing dims.
    """
    rows = shape[0]
    cols = int(np.prod(shape[1:]))
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return (gain * q[:rows, :cols]).reshape(shape)


class Module:
    """Minimal parameter container with recursive named traversal."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}" if not prefix else f"{prefix}.{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(key)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """y = x @ W + b, with W of shape (in, out)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w = Tensor(orthogonal((in_dim, out_dim), rng), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return ad.add_bias(ad.matmul(x, self.w), self.b)


class Conv2d(Module):
    """Valid convolution with per-filter bias, kernel (F, C, kh, kw)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, rng: np.random.Generator):
        self.w = Tensor(orthogonal((out_ch, in_ch, kernel, kernel), rng), requires_grad=True)
        self.b = Tensor(np.zeros(out_ch), requires_grad=True)
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return ad.add_channel_bias(ad.conv2d(x, self.w, self.stride), self.b)


class Adam:
    """Adam with bias correction; per-parameter step counters so that
    resetting moment state after a weight perturbation also restarts the
    warmup for exactly those slices."""

    def __init__(self, params: list[tuple[str, Tensor]], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.params = list(params)
        self.state: dict[str, dict] = {
            name: {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
            for name, p in self.params
        }

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is None:
                continue
            st = self.state[name]
            st["t"] += 1
            t = st["t"]
            g = p.grad
            st["m"] = self.beta1 * st["m"] + (1.0 - self.beta1) * g
            st["v"] = self.beta2 * st["v"] + (1.0 - self.beta2) * (g * g)
            m_hat = st["m"] / (1.0 - self.beta1**t)
            v_hat = st["v"] / (1.0 - self.beta2**t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def reset_state(self, names: set[str] | None = None) -> None:
        """Zero moments (and warmup counters) for the given parameter names,
        or for all parameters when ``names`` is None."""
        for name, p in self.params:
            if names is not None and name not in names:
                continue
            self.state[name] = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
