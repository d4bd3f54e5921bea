"""Mixture-of-experts backbone: router, top-k sparse gating, expert
combination, load-balancing loss, and expert-usage accounting.

Gate weights are a softmax over ONLY the k selected logits; the softmax
over all N logits is kept separately because the load-balancing loss is
defined on the full distribution. Top-k ties break toward the lowest
expert index (stable argsort), which keeps routing deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError
from .nn import Linear, Module


@dataclass
class GateResult:
    """Routing decision for a batch: selected experts, their combination
    weights, and the full router distribution used for load balancing."""

    indices: np.ndarray     # (B, k) int, distinct per row
    weights: np.ndarray     # (B, k), rows sum to 1
    full_probs: np.ndarray  # (B, N) softmax over all logits


def topk_indices(logits: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries per row, ties won by lowest index."""
    order = np.argsort(-logits, axis=1, kind="stable")
    return order[:, :k]


class ExpertFFN(Module):
    """Two linear layers with a relu in between; all experts share shapes."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, rng: np.random.Generator):
        self.fc1 = Linear(in_dim, hidden_dim, rng)
        self.fc2 = Linear(hidden_dim, out_dim, rng)

    def forward(self, z: Tensor) -> Tensor:
        return self.fc2(ad.relu(self.fc1(z)))

    def hidden(self, z: Tensor) -> Tensor:
        """Post-activation hidden output (dormancy probes)."""
        return ad.relu(self.fc1(z))


class Router(Module):
    """Single linear map from latent features to one logit per expert."""

    def __init__(self, in_dim: int, num_experts: int, rng: np.random.Generator):
        self.fc = Linear(in_dim, num_experts, rng)

    def forward(self, z: Tensor) -> Tensor:
        return self.fc(z)


class MoELayer(Module):
    """N parallel expert FFNs combined by top-k routing.

    Execution is dense: every expert is evaluated and unselected outputs
    are masked by exact-zero gate weights, which also makes the gradient
    to unselected experts exactly zero.
    """

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int,
                 num_experts: int, k: int, rng: np.random.Generator):
        if not 1 <= k <= num_experts:
            raise ConfigError(f"k={k} must satisfy 1 <= k <= N={num_experts}")
        self.experts = [ExpertFFN(in_dim, hidden_dim, out_dim, rng) for _ in range(num_experts)]
        self.router = Router(in_dim, num_experts, rng)
        self.k = k
        self.num_experts = num_experts
        self.in_dim = in_dim
        self.out_dim = out_dim

    def route(self, z: Tensor) -> GateResult:
        """Routing decision only (no expert evaluation, no tape)."""
        if z.data.ndim != 2 or z.shape[1] != self.in_dim:
            raise DimensionError(f"route: expected (B,{self.in_dim}), got {z.shape}")
        with ad.no_tape():
            logits = self.router(z.detach())
            idx = topk_indices(logits.data, self.k)
            sel = ad.softmax(ad.gather_cols(logits, idx), axis=1)
            full = ad.softmax(logits, axis=1)
        return GateResult(indices=idx, weights=sel.data, full_probs=full.data)

    def forward(self, z: Tensor) -> tuple[Tensor, GateResult, Tensor]:
        """Combined expert output.

        Returns (features, gate, full_probs_tensor); the last carries the
        gradient path from the load-balancing loss into the router.
        """
        if z.data.ndim != 2 or z.shape[1] != self.in_dim:
            raise DimensionError(f"moe forward: expected (B,{self.in_dim}), got {z.shape}")
        logits = self.router(z)
        idx = topk_indices(logits.data, self.k)
        sel_weights = ad.softmax(ad.gather_cols(logits, idx), axis=1)
        dense_weights = ad.scatter_cols(sel_weights, idx, self.num_experts)
        full_probs = ad.softmax(logits, axis=1)

        out: Tensor | None = None
        for i, expert in enumerate(self.experts):
            term = ad.scale_rows(expert(z), ad.take_col(dense_weights, i))
            out = term if out is None else ad.add(out, term)

        gate = GateResult(indices=idx, weights=sel_weights.data.copy(),
                          full_probs=full_probs.data.copy())
        return out, gate, full_probs

    def hidden_activations(self, z: Tensor) -> list[tuple[str, np.ndarray]]:
        """Per-expert post-activation hidden outputs on a probe batch."""
        with ad.no_tape():
            zd = z.detach()
            return [(f"expert{i}.hidden", e.hidden(zd).data) for i, e in enumerate(self.experts)]


def load_balance_loss(full_probs: Tensor) -> Tensor:
    """Negative entropy of the batch-mean expert distribution.

    Minimized at -log(N) when experts are used uniformly; 0 for a one-hot
    mean distribution. Gradient flows into the router through the full
    softmax probabilities.
    """
    if full_probs.data.ndim != 2:
        raise DimensionError(f"load_balance_loss expects (B,N), got {full_probs.shape}")
    sums = full_probs.data.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ContractError("load_balance_loss rows must sum to 1")
    p = ad.mean(full_probs, axis=0)
    return ad.neg_entropy(p)


def expert_usage(gates: list[GateResult], labels: list | None = None) -> tuple[list, np.ndarray]:
    """Mean gate weight per expert (0 where unselected), optionally grouped.

    Returns (group_keys, matrix) with one row per group; rows sum to 1
    because each sample's gate weights do.
    """
    if not gates:
        raise ContractError("expert_usage needs a nonempty batch")
    n = gates[0].full_probs.shape[1]
    rows = []
    row_labels = []
    for g_i, gate in enumerate(gates):
        b = gate.indices.shape[0]
        dense = np.zeros((b, n))
        dense[np.arange(b)[:, None], gate.indices] = gate.weights
        rows.append(dense)
        if labels is not None:
            lab = labels[g_i]
            row_labels.extend(lab if isinstance(lab, (list, np.ndarray)) else [lab] * b)
    stacked = np.concatenate(rows, axis=0)
    if labels is None:
        return (["all"], stacked.mean(axis=0, keepdims=True))
    row_labels = np.asarray(row_labels)
    keys = sorted(set(row_labels.tolist()))
    mat = np.stack([stacked[row_labels == key].mean(axis=0) for key in keys])
    return (keys, mat)
