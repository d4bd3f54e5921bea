"""Weight-space perturbation: the dormant-ratio-gated interpolation factor
and the two candidate sources, a fresh random initializer and a Gaussian
fit to the top-performing agents seen so far.

The top-agent buffer keeps the N best (weights, episode reward) pairs with
strict-improvement replacement: once full, a candidate displaces the
minimum-reward entry only when its reward is strictly greater, so ties
keep the incumbent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class WeightLayout:
    """Mapping between named parameter arrays and one flat vector."""

    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]
    offsets: tuple[int, ...]
    total: int

    @classmethod
    def from_named(cls, named: list[tuple[str, np.ndarray]]) -> "WeightLayout":
        names, shapes, offsets = [], [], []
        off = 0
        for name, arr in named:
            names.append(name)
            shapes.append(tuple(arr.shape))
            offsets.append(off)
            off += arr.size
        return cls(tuple(names), tuple(shapes), tuple(offsets), off)

    def slice_of(self, name: str) -> slice:
        i = self.names.index(name)
        start = self.offsets[i]
        return slice(start, start + int(np.prod(self.shapes[i])))


@dataclass
class WeightVector:
    """Flat float64 copy of a parameter set plus its layout descriptor."""

    data: np.ndarray
    layout: WeightLayout

    @classmethod
    def flatten(cls, named: list[tuple[str, np.ndarray]], layout: WeightLayout | None = None) -> "WeightVector":
        if layout is None:
            layout = WeightLayout.from_named(named)
        flat = np.empty(layout.total)
        for (name, arr), off, shape in zip(named, layout.offsets, layout.shapes):
            if tuple(arr.shape) != shape:
                raise ContractError(f"layout mismatch for {name}: {arr.shape} != {shape}")
            flat[off : off + arr.size] = arr.reshape(-1)
        return cls(flat, layout)

    def unflatten(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, shape, off in zip(self.layout.names, self.layout.shapes, self.layout.offsets):
            size = int(np.prod(shape)) if shape else 1
            out.append((name, self.data[off : off + size].reshape(shape).copy()))
        return out


@dataclass
class PerturbConfig:
    alpha_min: float = 0.2
    alpha_max: float = 0.9
    perturb_rate: float = 2.0       # the multiplier on the dormant ratio
    interval_frames: int = 200_000  # env frames between perturbations

    def __post_init__(self):
        if not 0.0 <= self.alpha_min <= self.alpha_max <= 1.0:
            raise ContractError("need 0 <= alpha_min <= alpha_max <= 1")
        if self.perturb_rate <= 0 or self.interval_frames <= 0:
            raise ContractError("perturb_rate and interval_frames must be positive")


class TopAgentBuffer:
    """Fixed-capacity set of the best (weights, episode reward) pairs."""

    def __init__(self, capacity: int = 10):
        if capacity < 1:
            raise ContractError("capacity must be >= 1")
        self.capacity = capacity
        self.entries: list[tuple[WeightVector, float]] = []

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def rewards(self) -> list[float]:
        return [r for _, r in self.entries]

    def maybe_insert(self, theta: WeightVector, reward: float) -> bool:
        """Append while below capacity; afterwards replace the minimum-reward
        entry iff the candidate's reward is strictly greater."""
        if self.entries and theta.layout.total != self.entries[0][0].layout.total:
            raise ContractError("weight vector layout does not match buffer entries")
        if len(self.entries) < self.capacity:
            self.entries.append((theta, float(reward)))
            return True
        worst = min(range(len(self.entries)), key=lambda i: self.entries[i][1])
        if reward > self.entries[worst][1]:
            self.entries[worst] = (theta, float(reward))
            return True
        return False

    def oriented_distribution(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate mean and population standard deviation."""
        if not self.entries:
            raise ContractError("oriented distribution of an empty buffer")
        stacked = np.stack([w.data for w, _ in self.entries])
        return stacked.mean(axis=0), stacked.std(axis=0)


def sample_candidate(
    source: str,
    rng: np.random.Generator,
    buffer: TopAgentBuffer | None = None,
    fresh_init=None,
    layout: WeightLayout | None = None,
) -> WeightVector:
    """Draw a perturbation candidate.

    ``oriented`` draws elementwise from the Gaussian fit to the buffer and
    falls back to the random initializer while the buffer is still empty;
    ``random`` calls ``fresh_init(rng)`` for a new architecture draw.
    """
    if source == "oriented" and buffer is not None and len(buffer) > 0:
        mu, sigma = buffer.oriented_distribution()
        return WeightVector(rng.normal(mu, sigma), buffer.entries[0][0].layout)
    if source not in ("oriented", "random"):
        raise ContractError(f"unknown candidate source {source!r}")
    if fresh_init is None:
        raise ContractError("random candidate requires a fresh_init callback")
    flat = fresh_init(rng)
    if layout is None and buffer is not None and len(buffer) > 0:
        layout = buffer.entries[0][0].layout
    if isinstance(flat, WeightVector):
        return flat
    return WeightVector(np.asarray(flat, dtype=np.float64), layout)


def perturb_factor(beta: float, cfg: PerturbConfig) -> float:
    """alpha = clip(1 - rate * beta, alpha_min, alpha_max)."""
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"dormant ratio out of range: {beta}")
    return float(np.clip(1.0 - cfg.perturb_rate * beta, cfg.alpha_min, cfg.alpha_max))


def apply_perturbation(theta: WeightVector, phi: WeightVector, alpha: float) -> WeightVector:
    """theta' = alpha * theta + (1 - alpha) * phi, elementwise."""
    if theta.layout != phi.layout:
        raise ContractError("perturbation layouts do not match")
    return WeightVector(alpha * theta.data + (1.0 - alpha) * phi.data, theta.layout)
