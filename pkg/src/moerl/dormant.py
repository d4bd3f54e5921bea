"""Dormant-neuron diagnostics: per-neuron activity scores and the
network-level dormant ratio that gates perturbation strength.

A neuron's score is its mean absolute activation normalized by the layer
average, so scores always average to 1 over a layer with any signal. A
neuron is dormant when its score is at or below the threshold; the ratio
is dormant neurons over total counted neurons.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class DormantConfig:
    tau: float = 0.025          # score threshold; a choice of ours, config-visible
    probe_batch_size: int = 256
    include_encoder: bool = False

    def __post_init__(self):
        if self.tau < 0:
            raise ContractError("tau must be >= 0")


@dataclass
class LayerDormancy:
    layer: str
    scores: np.ndarray
    dormant_count: int
    width: int


@dataclass
class DormantReport:
    per_layer: list[LayerDormancy] = field(default_factory=list)
    ratio: float = 0.0

    def to_dict(self) -> dict:
        return {
            "ratio": self.ratio,
            "per_layer": [
                {"layer": l.layer, "dormant": l.dormant_count, "width": l.width}
                for l in self.per_layer
            ],
        }


def neuron_scores(layer_outputs: np.ndarray) -> np.ndarray:
    """Normalized mean |activation| per neuron for a (B, N) activation batch.

    An all-dead layer (zero denominator) scores every neuron 0.
    """
    acts = np.asarray(layer_outputs, dtype=np.float64)
    if acts.ndim != 2 or acts.shape[0] < 1 or acts.shape[1] < 1:
        raise ContractError(f"neuron_scores needs a (B,N) batch, got {acts.shape}")
    mean_abs = np.mean(np.abs(acts), axis=0)
    denom = float(np.mean(mean_abs))
    if denom == 0.0:
        return np.zeros(acts.shape[1])
    return mean_abs / denom


def layer_report(name: str, acts: np.ndarray, tau: float) -> LayerDormancy:
    scores = neuron_scores(acts)
    return LayerDormancy(
        layer=name,
        scores=scores,
        dormant_count=int(np.sum(scores <= tau)),
        width=scores.size,
    )


def dormant_ratio(hidden_activations: list[tuple[str, np.ndarray]], tau: float) -> DormantReport:
    """Dormant ratio over a set of named (B, N) hidden-activation batches.

    The caller decides which layers count; the trainer passes the actor
    trunk's post-activation hidden layers (expert hiddens included) by
    default, with the encoder optionally added via config.
    """
    if not hidden_activations:
        raise ContractError("dormant_ratio needs at least one counted layer")
    report = DormantReport()
    total_dormant = 0
    total_width = 0
    for name, acts in hidden_activations:
        if acts.shape[0] < 1:
            raise ContractError("empty probe batch")
        lr = layer_report(name, acts, tau)
        report.per_layer.append(lr)
        total_dormant += lr.dormant_count
        total_width += lr.width
    report.ratio = total_dormant / total_width
    return report
