"""Feedforward binary classifier with hand-derived gradients and Adam.

All parameters live in one contiguous float64 vector ``theta``. The canonical
order is layer-major, weights before biases::

    [scale_w (d), scale_b (d)]        # only when the diagonal scaling layer is attached
    W1 (d x h1, row-major), b1 (h1)
    W2 (h1 x h2), b2 (h2)
    ...
    W_out (h_k x 1), b_out (1)

Layer weights and biases are reshaped views into ``theta``, so in-place updates
of the flat vector are immediately visible to the forward pass and vice versa.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

BCE_CLAMP = 1e-7
DEFAULT_HIDDEN = (128, 128, 128, 128)


class ContractError(RuntimeError):
    """An operation was invoked in a state that its contract forbids."""


class NonFiniteError(ArithmeticError):
    pass


class Mlp:
    """ReLU MLP with dropout after every hidden layer and a sigmoid output.

    With ``scaling=True`` a diagonal affine layer ``w * x + b`` (initialised to
    the identity) sits in front of the first dense layer; its parameters are
    part of ``theta`` and receive gradients like every other weight.
    """

    def __init__(
        self,
        n_features: int,
        hidden: Sequence[int] = DEFAULT_HIDDEN,
        dropout: float = 0.5,
        scaling: bool = False,
        seed: int = 0,
    ):
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {dropout}")
        self.layer_dims = (int(n_features), *map(int, hidden), 1)
        self.dropout = float(dropout)
        self.scaling = bool(scaling)
        self.training = True
        self._rng = np.random.default_rng(seed)

        n = 2 * n_features if scaling else 0
        n += sum(i * o + o for i, o in zip(self.layer_dims[:-1], self.layer_dims[1:]))
        self.theta = np.zeros(n)
        self._bind_views()
        self._init_params()

    def _bind_views(self):
        d = self.layer_dims[0]
        pos = 0
        if self.scaling:
            self.scale_w = self.theta[0:d]
            self.scale_b = self.theta[d:2 * d]
            pos = 2 * d
        else:
            self.scale_w = self.scale_b = None
        self.weights, self.biases = [], []
        for i, o in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            self.weights.append(self.theta[pos:pos + i * o].reshape(i, o))
            pos += i * o
            self.biases.append(self.theta[pos:pos + o])
            pos += o

    def _init_params(self):
        # He-uniform weights, zero biases
        for W in self.weights:
            limit = np.sqrt(6.0 / W.shape[0])
            W[...] = self._rng.uniform(-limit, limit, size=W.shape)
        if self.scaling:
            self.scale_w[...] = 1.0
            self.scale_b[...] = 0.0

    # ------------------------------------------------------------------ state

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def n_features(self) -> int:
        return self.layer_dims[0]

    def train(self) -> "Mlp":
        self.training = True
        return self

    def eval(self) -> "Mlp":
        self.training = False
        return self

    def get_flat(self) -> np.ndarray:
        return self.theta.copy()

    def set_flat(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.theta.shape:
            raise ValueError(f"expected {self.theta.size} parameters, got {values.shape}")
        self.theta[...] = values

    def rng_state(self) -> dict:
        return self._rng.bit_generator.state

    def set_rng_state(self, state: dict):
        self._rng.bit_generator.state = state

    # ------------------------------------------------------------------ forward

    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            got = X.shape[1] if X.ndim == 2 else X.shape
            raise ValueError(f"expected input with {self.n_features} features, got {got}")
        return X

    def sample_masks(self, n_rows: int) -> list[np.ndarray]:
        """Inverted-dropout masks (0 or 1/(1-p)) for every hidden layer."""
        keep = 1.0 - self.dropout
        if self.dropout == 0.0:
            return [np.ones((n_rows, h)) for h in self.layer_dims[1:-1]]
        return [(self._rng.random((n_rows, h)) < keep) / keep for h in self.layer_dims[1:-1]]

    def _forward(self, X: np.ndarray, masks: list[np.ndarray] | None):
        inputs = X
        if self.scaling:
            inputs = X * self.scale_w + self.scale_b
        acts, pres = [inputs], []
        a = inputs
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            if k == last:
                return z[:, 0], acts, pres
            pres.append(z)
            a = np.maximum(z, 0.0)
            if masks is not None:
                a = a * masks[k]
            acts.append(a)

    def logits(self, X: np.ndarray, masks: list[np.ndarray] | None = None) -> np.ndarray:
        X = self._check_input(X)
        if masks is None and self.training and self.dropout > 0:
            masks = self.sample_masks(X.shape[0])
        return self._forward(X, masks)[0]

    def forward(self, X: np.ndarray, masks: list[np.ndarray] | None = None) -> np.ndarray:
        """Attack probabilities for each row; dropout only in training mode."""
        return expit(self.logits(X, masks))

    __call__ = forward

    def loss(self, X: np.ndarray, y: np.ndarray, masks: list[np.ndarray] | None = None) -> float:
        return bce_loss(self.forward(X, masks), y)

    # ------------------------------------------------------------------ backward

    def loss_and_grad(
        self, X: np.ndarray, y: np.ndarray, masks: list[np.ndarray] | None = None
    ) -> tuple[float, np.ndarray]:
        """Mean BCE on (X, y) and its exact gradient w.r.t. ``theta``.

        One dropout mask is drawn per call (unless given) and shared by the
        forward and backward passes.
        """
        if not self.training:
            raise ContractError("backward requires training mode")
        X = self._check_input(X)
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (X.shape[0],):
            raise ValueError(f"{y.shape[0]} labels for {X.shape[0]} rows")
        if masks is None:
            masks = self.sample_masks(X.shape[0])
        z, acts, pres = self._forward(X, masks)
        p = expit(z)
        grad = np.empty_like(self.theta)
        grad_views = self._views_of(grad)
        delta = ((p - y) / X.shape[0])[:, None]
        for k in range(len(self.weights) - 1, -1, -1):
            gW, gb = grad_views["weights"][k], grad_views["biases"][k]
            np.matmul(acts[k].T, delta, out=gW)
            gb[...] = delta.sum(axis=0)
            if k > 0 or self.scaling:
                upstream = delta @ self.weights[k].T
                if k > 0:
                    delta = upstream * masks[k - 1] * (pres[k - 1] > 0)
        if self.scaling:
            grad_views["scale_w"][...] = (upstream * X).sum(axis=0)
            grad_views["scale_b"][...] = upstream.sum(axis=0)
        return bce_loss(p, y), grad

    def backward(self, X: np.ndarray, y: np.ndarray, masks: list[np.ndarray] | None = None) -> np.ndarray:
        return self.loss_and_grad(X, y, masks)[1]

    def _views_of(self, flat: np.ndarray) -> dict:
        d = self.layer_dims[0]
        views = {"weights": [], "biases": []}
        pos = 0
        if self.scaling:
            views["scale_w"], views["scale_b"] = flat[0:d], flat[d:2 * d]
            pos = 2 * d
        for i, o in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            views["weights"].append(flat[pos:pos + i * o].reshape(i, o))
            pos += i * o
            views["biases"].append(flat[pos:pos + o])
            pos += o
        return views

    def mean_squared_sample_grad(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-parameter mean over rows of the squared per-row log-likelihood gradient.

        Evaluated without dropout. Uses the identity that for a dense layer the
        per-row gradient is the outer product a_n delta_n^T, hence
        sum_n (a_ni delta_nj)^2 = ((a*a)^T (delta*delta))_ij, so per-row
        gradients are never materialised.
        """
        X = self._check_input(X)
        y = np.asarray(y, dtype=np.float64)
        n = X.shape[0]
        if n == 0:
            raise ValueError("need at least one row")
        z, acts, pres = self._forward(X, None)
        out = np.empty_like(self.theta)
        views = self._views_of(out)
        delta = (expit(z) - y)[:, None]  # per-row, unaveraged
        for k in range(len(self.weights) - 1, -1, -1):
            views["weights"][k][...] = (acts[k] ** 2).T @ (delta ** 2) / n
            views["biases"][k][...] = (delta ** 2).sum(axis=0) / n
            if k > 0 or self.scaling:
                upstream = delta @ self.weights[k].T
                if k > 0:
                    delta = upstream * (pres[k - 1] > 0)
        if self.scaling:
            views["scale_w"][...] = ((upstream * X) ** 2).sum(axis=0) / n
            views["scale_b"][...] = (upstream ** 2).sum(axis=0) / n
        return out


def bce_loss(probs: np.ndarray, labels: np.ndarray, clamp: float = BCE_CLAMP) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ValueError(f"{probs.shape} probabilities vs {labels.shape} labels")
    p = np.clip(probs, clamp, 1.0 - clamp)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log1p(-p)))


def threshold(prob, kappa: float = 0.5):
    """1 where prob > kappa, else 0; the boundary maps to 0."""
    out = (np.asarray(prob) > kappa).astype(np.int64)
    return int(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------- Adam


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n_params: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls(np.zeros(n_params), np.zeros(n_params), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError(f"gradient {grad.shape}, params {params.shape}, moments {state.m.shape} disagree")
    finite = np.isfinite(grad)
    if not finite.all():
        i = int(np.flatnonzero(~finite)[0])
        raise NonFiniteError(f"non-finite gradient at parameter index {i}: {grad[i]}")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, step=step)
