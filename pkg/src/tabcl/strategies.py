"""Forgetting-mitigation strategies and their building blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Mlp, NonFiniteError


class ReservoirBuffer:
    """Fixed-capacity uniform reservoir over every row ever offered.

    Rows are stored raw (un-normalized); callers re-normalize them with the
    current normalizer state at replay time.
    """

    def __init__(self, capacity: int, n_features: int, seed: int = 0):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.rows = np.empty((capacity, n_features))
        self.labels = np.empty(capacity, dtype=np.int64)
        self.size = 0
        self.seen = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self.size

    def offer(self, row: np.ndarray, label: int) -> None:
        self.offer_many(np.asarray(row, dtype=np.float64)[None, :], np.asarray([label]))

    def offer_many(self, X: np.ndarray, y: np.ndarray) -> None:
        """Offer rows in order. Equivalent to calling `offer` on each row.

        Item number n (1-based over the whole stream) draws u ~ U[0, 1) and
        j = floor(u * n); it fills slot n-1 while the buffer is filling and
        otherwise replaces slot j when j < capacity, i.e. with probability
        capacity / n.
        """
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        k = X.shape[0]
        if k == 0:
            return
        u = self.rng.random(k)
        n = np.arange(self.seen + 1, self.seen + k + 1)
        slot = np.floor(u * n).astype(np.int64)
        filling = n <= self.capacity
        slot[filling] = n[filling] - 1
        taken = slot < self.capacity
        items = np.flatnonzero(taken)
        slots = slot[taken]
        # later items overwrite earlier ones in the same slot
        last_slot, last_pos = np.unique(slots[::-1], return_index=True)
        winners = items[::-1][last_pos]
        self.rows[last_slot] = X[winners]
        self.labels[last_slot] = y[winners]
        self.seen += k
        self.size = min(self.seen, self.capacity)

    def sample(self, n: int, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Uniform draws with replacement."""
        if self.size == 0 or n <= 0:
            return self.rows[:0], self.labels[:0]
        idx = (rng or self.rng).integers(0, self.size, size=n)
        return self.rows[idx], self.labels[idx]

    def state_dict(self) -> dict:
        return {
            "capacity": self.capacity, "rows": self.rows[:self.size].copy(),
            "labels": self.labels[:self.size].copy(), "seen": self.seen,
            "rng": self.rng.bit_generator.state,
        }

    def load_state_dict(self, state: dict) -> None:
        self.size = len(state["labels"])
        self.rows[:self.size] = state["rows"]
        self.labels[:self.size] = state["labels"]
        self.seen = int(state["seen"])
        self.rng.bit_generator.state = state["rng"]


def replay_mix(buf: ReservoirBuffer, X: np.ndarray, y: np.ndarray, replay_fraction: float,
               batch_size: int | None = None, rng: np.random.Generator | None = None):
    """Append floor(replay_fraction * batch_size) buffer draws to the current batch."""
    if not 0.0 <= replay_fraction <= 1.0:
        raise ValueError(f"replay_fraction must lie in [0, 1], got {replay_fraction}")
    batch_size = len(y) if batch_size is None else batch_size
    n = int(np.floor(replay_fraction * batch_size))
    if n == 0 or len(buf) == 0:
        return X, y
    rX, ry = buf.sample(n, rng)
    return np.concatenate([X, rX]), np.concatenate([y, ry])


def agem_project(g: np.ndarray, g_ref: np.ndarray) -> np.ndarray:
    """Remove the component of g that opposes g_ref, if any."""
    g = np.asarray(g, dtype=np.float64)
    g_ref = np.asarray(g_ref, dtype=np.float64)
    if g.shape != g_ref.shape:
        raise ValueError(f"gradient shapes differ: {g.shape} vs {g_ref.shape}")
    if not (np.isfinite(g).all() and np.isfinite(g_ref).all()):
        raise NonFiniteError("non-finite entry in gradient passed to agem_project")
    dot = g_ref @ g
    if dot >= 0:
        return g
    return g - (dot / (g_ref @ g_ref)) * g_ref


@dataclass
class EwcAnchor:
    params: np.ndarray
    importance: np.ndarray
    strength: float = 100.0

    def __post_init__(self):
        if self.params.shape != self.importance.shape:
            raise ValueError("anchor and importance lengths differ")
        if not (np.all(self.importance >= 0) and np.all(np.isfinite(self.importance))):
            raise ValueError("importance weights must be finite and non-negative")
        if self.strength < 0:
            raise ValueError("penalty strength must be >= 0")


def importance_from_gradients(per_row_grads: np.ndarray) -> np.ndarray:
    """Diagonal Fisher estimate: mean over rows of squared gradients."""
    g = np.asarray(per_row_grads, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] == 0:
        raise ValueError("need a non-empty (rows, params) gradient matrix")
    return np.mean(g * g, axis=0)


def ewc_consolidate(model: Mlp, X: np.ndarray, y: np.ndarray, previous: EwcAnchor | None = None,
                    strength: float = 100.0) -> EwcAnchor:
    """Anchor at the current parameters; importance accumulates across calls."""
    if len(y) == 0:
        raise ValueError("EWC consolidation needs a non-empty sample")
    importance = model.mean_squared_sample_grad(X, y)
    if previous is not None:
        importance = importance + previous.importance
    return EwcAnchor(model.get_flat(), importance, strength)


def ewc_penalty(theta: np.ndarray, anchor: EwcAnchor) -> tuple[float, np.ndarray]:
    """(strength / 2) * sum importance * (theta - anchor)^2, and its gradient."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != anchor.params.shape:
        raise ValueError(f"{theta.size} parameters vs anchor of {anchor.params.size}")
    diff = theta - anchor.params
    weighted = anchor.importance * diff
    return 0.5 * anchor.strength * float(weighted @ diff), anchor.strength * weighted


STRATEGIES = ("finetune", "replay", "agem", "ewc")
