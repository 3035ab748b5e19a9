"""Per-feature normalizers for streamed tabular data.

Every normalizer follows the same protocol: ``update(train_values)`` mutates
state from the current experience's training rows, ``transform(X)`` maps a
matrix with the current state and never mutates it. Transforms are affine and
act on each feature independently.

CLeAN splits its transform in two: ``fixed_transform`` (min-max with the EMA
bound estimates) is what the network receives as input, while the diagonal
scaling layer ``w * x + b`` is trained jointly with the network. ``transform``
applies both stages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .nn import ContractError

EPS_DEN = 1e-8
EPS_CN = 1e-8


@dataclass
class MinMaxBounds:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=np.float64)
        self.high = np.asarray(self.high, dtype=np.float64)
        if self.low.shape != self.high.shape or self.low.ndim != 1:
            raise ValueError("bounds must be two 1-D vectors of equal length")

    @classmethod
    def of(cls, X: np.ndarray) -> "MinMaxBounds":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("bounds need a non-empty 2-D matrix")
        return cls(X.min(axis=0), X.max(axis=0))


def _values(chunk) -> np.ndarray:
    return np.asarray(getattr(chunk, "values", chunk), dtype=np.float64)


def minmax_transform(X: np.ndarray, bounds: MinMaxBounds, eps_den: float = EPS_DEN) -> np.ndarray:
    """(X - low) / max(high - low, eps_den), per feature, unclipped."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != bounds.low.size:
        raise ValueError(f"expected {bounds.low.size} features, got {X.shape[-1]}")
    return (X - bounds.low) / np.maximum(bounds.high - bounds.low, eps_den)


def global_fit(chunks: Iterable) -> MinMaxBounds:
    """Min/max over the union of every chunk given (oracle statistics)."""
    lows, highs = [], []
    for c in chunks:
        v = _values(c)
        if v.shape[0]:
            lows.append(v.min(axis=0))
            highs.append(v.max(axis=0))
    if not lows:
        raise ValueError("global_fit needs at least one non-empty chunk")
    return MinMaxBounds(np.min(lows, axis=0), np.max(highs, axis=0))


class Normalizer:
    name = "base"
    trainable = False
    oracle = False

    def __init__(self, n_features: int):
        self.n_features = n_features
        self.version = 0  # incremented by every update

    def update(self, chunk) -> None:
        raise NotImplementedError

    def fixed_transform(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def transform(self, X: np.ndarray) -> np.ndarray:
        return self.fixed_transform(X)

    def trainable_params(self) -> tuple[np.ndarray, ...]:
        return ()

    def state_dict(self) -> dict:
        raise NotImplementedError

    def load_state_dict(self, state: dict) -> None:
        raise NotImplementedError


class GlobalNormalizer(Normalizer):
    """Min-max with bounds over the whole stream, future chunks included."""

    name = "global"
    oracle = True

    def __init__(self, n_features: int, eps_den: float = EPS_DEN):
        super().__init__(n_features)
        self.eps_den = eps_den
        self.bounds: MinMaxBounds | None = None

    def fit_all(self, chunks: Iterable) -> None:
        self.bounds = global_fit(chunks)

    def update(self, chunk) -> None:
        if self.bounds is None:
            raise ContractError("global normalizer must be fitted on the full stream first")
        self.version += 1

    def fixed_transform(self, X):
        if self.bounds is None:
            raise ContractError("global normalizer has not been fitted")
        return minmax_transform(X, self.bounds, self.eps_den)

    def state_dict(self):
        return {"low": self.bounds.low, "high": self.bounds.high, "version": self.version}

    def load_state_dict(self, state):
        self.bounds = MinMaxBounds(state["low"], state["high"])
        self.version = int(state["version"])


class LocalNormalizer(Normalizer):
    """Min-max with the bounds of the most recent training chunk only."""

    name = "local"

    def __init__(self, n_features: int, eps_den: float = EPS_DEN):
        super().__init__(n_features)
        self.eps_den = eps_den
        self.bounds: MinMaxBounds | None = None

    def update(self, chunk) -> None:
        self.bounds = MinMaxBounds.of(_values(chunk))
        self.version += 1

    def fixed_transform(self, X):
        if self.bounds is None:
            raise ContractError("local normalizer has not seen a chunk yet")
        return minmax_transform(X, self.bounds, self.eps_den)

    def update_transform(self, chunk) -> np.ndarray:
        self.update(chunk)
        return self.fixed_transform(_values(chunk))

    def state_dict(self):
        return {"low": self.bounds.low, "high": self.bounds.high, "version": self.version}

    def load_state_dict(self, state):
        self.bounds = MinMaxBounds(state["low"], state["high"])
        self.version = int(state["version"])


class ContinualNormalizer(Normalizer):
    """Z-score with EMA-blended per-feature mean and standard deviation.

    The first update adopts the chunk statistics directly; later ones blend
    ``(1 - lam) * old + lam * chunk``.
    """

    name = "cn"

    def __init__(self, n_features: int, lam: float = 0.1, eps: float = EPS_CN):
        super().__init__(n_features)
        if not 0.0 < lam <= 1.0:
            raise ValueError(f"lambda must lie in (0, 1], got {lam}")
        self.lam = lam
        self.eps = eps
        self.mean = np.zeros(n_features)
        self.std = np.zeros(n_features)
        self.initialized = False

    def update(self, chunk) -> None:
        v = _values(chunk)
        mu, sigma = v.mean(axis=0), v.std(axis=0)
        if self.initialized:
            mu = (1.0 - self.lam) * self.mean + self.lam * mu
            sigma = (1.0 - self.lam) * self.std + self.lam * sigma
        self.mean, self.std = mu, sigma
        self.initialized = True
        self.version += 1

    def fixed_transform(self, X):
        if not self.initialized:
            raise ContractError("continual normalizer has not seen a chunk yet")
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean) / (self.std + self.eps)

    def state_dict(self):
        return {"mean": self.mean, "std": self.std, "initialized": self.initialized, "version": self.version}

    def load_state_dict(self, state):
        self.mean = np.asarray(state["mean"], dtype=np.float64)
        self.std = np.asarray(state["std"], dtype=np.float64)
        self.initialized = bool(state["initialized"])
        self.version = int(state["version"])


class CleanNormalizer(Normalizer):
    """EMA-estimated min-max bounds followed by a trainable diagonal affine layer.

    Bound estimates start at high = 1, low = 0 and move as
    ``est <- (1 - eta) * chunk_bound + eta * est`` on every update.
    """

    name = "clean"
    trainable = True

    def __init__(self, n_features: int, eta: float = 0.9, eps_den: float = EPS_DEN):
        super().__init__(n_features)
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {eta}")
        self.eta = eta
        self.eps_den = eps_den
        self.high = np.ones(n_features)
        self.low = np.zeros(n_features)
        self.scale_w = np.ones(n_features)
        self.scale_b = np.zeros(n_features)

    def bind(self, scale_w: np.ndarray, scale_b: np.ndarray) -> None:
        """Share the scaling parameters with a network's parameter vector."""
        if scale_w.shape != (self.n_features,) or scale_b.shape != (self.n_features,):
            raise ValueError("scaling parameters must have one entry per feature")
        scale_w[...] = self.scale_w
        scale_b[...] = self.scale_b
        self.scale_w, self.scale_b = scale_w, scale_b

    def update(self, chunk) -> None:
        v = _values(chunk)
        self.high = (1.0 - self.eta) * v.max(axis=0) + self.eta * self.high
        self.low = (1.0 - self.eta) * v.min(axis=0) + self.eta * self.low
        self.version += 1

    @property
    def bounds(self) -> MinMaxBounds:
        return MinMaxBounds(self.low, self.high)

    def fixed_transform(self, X):
        return minmax_transform(X, self.bounds, self.eps_den)

    def transform(self, X):
        return self.fixed_transform(X) * self.scale_w + self.scale_b

    def trainable_params(self):
        return (self.scale_w, self.scale_b)

    def state_dict(self):
        return {
            "high": self.high, "low": self.low, "scale_w": self.scale_w.copy(),
            "scale_b": self.scale_b.copy(), "version": self.version,
        }

    def load_state_dict(self, state):
        self.high = np.asarray(state["high"], dtype=np.float64)
        self.low = np.asarray(state["low"], dtype=np.float64)
        self.scale_w[...] = state["scale_w"]
        self.scale_b[...] = state["scale_b"]
        self.version = int(state["version"])


NORMALIZERS = {
    "global": GlobalNormalizer,
    "local": LocalNormalizer,
    "cn": ContinualNormalizer,
    "clean": CleanNormalizer,
}


def make_normalizer(name: str, n_features: int, eta: float = 0.9, lam: float = 0.1,
                    eps_den: float = EPS_DEN, eps_cn: float = EPS_CN) -> Normalizer:
    if name == "clean":
        return CleanNormalizer(n_features, eta=eta, eps_den=eps_den)
    if name == "cn":
        return ContinualNormalizer(n_features, lam=lam, eps=eps_cn)
    if name in ("global", "local"):
        return NORMALIZERS[name](n_features, eps_den=eps_den)
    raise ValueError(f"unknown normalizer {name!r}; choose from {sorted(NORMALIZERS)}")
