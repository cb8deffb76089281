"""Feedforward Q-network with hand-written backprop and Adam.

All weights and biases live in one flat float64 buffer; the per-layer
matrices are views into it.  That keeps Adam, soft target updates and
checkpointing as single vector operations.

Layer ``k`` maps ``x @ W_k + b_k`` with ``W_k`` of shape ``(fan_in, fan_out)``.
Hidden layers use ReLU, output projections are linear.  With ``dueling``
the last hidden layer is duplicated into a value stream (one output) and an
advantage stream (one output per action) that share the earlier layers.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, TrainingError, UsageError

CHECKPOINT_MAGIC = b"TQNCKPT1"


def _layer_plan(layer_sizes: Sequence[int], dueling: bool):
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise DomainError(f"layer_sizes needs an input and an output size, all >= 1; got {layer_sizes!r}")
    n_in, hidden, n_out = sizes[0], sizes[1:-1], sizes[-1]
    if not dueling:
        trunk = list(zip([n_in] + hidden, hidden + [n_out]))
        return trunk, [], []
    shared = hidden[:-1]
    trunk = list(zip([n_in] + shared[:-1], shared)) if shared else []
    top = shared[-1] if shared else n_in
    if hidden:
        value = [(top, hidden[-1]), (hidden[-1], 1)]
        adv = [(top, hidden[-1]), (hidden[-1], n_out)]
    else:
        value = [(top, 1)]
        adv = [(top, n_out)]
    return trunk, value, adv


class QNetwork:
    """Q-value approximator.  ``layer_sizes`` runs input -> hidden... -> actions."""

    def __init__(self, layer_sizes: Sequence[int], dueling: bool = False, seed: int | None = 0,
                 flat: np.ndarray | None = None):
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.dueling = bool(dueling)
        self.seed = seed
        self.steps = 0
        trunk, value, adv = _layer_plan(self.layer_sizes, self.dueling)
        shapes = trunk + value + adv
        self.n_params = sum(i * o + o for i, o in shapes)
        if flat is None:
            self.flat = np.zeros(self.n_params)
        else:
            flat = np.asarray(flat, dtype=float)
            if flat.shape != (self.n_params,):
                raise DomainError(f"expected {self.n_params} parameters, got {flat.shape}")
            self.flat = flat.copy()
        self._views = self._make_views(self.flat, shapes)
        self.trunk = self._views[: len(trunk)]
        self.value_stream = self._views[len(trunk): len(trunk) + len(value)]
        self.adv_stream = self._views[len(trunk) + len(value):]
        if flat is None:
            self._init_weights(np.random.default_rng(seed))

    @staticmethod
    def _make_views(buf: np.ndarray, shapes):
        views, off = [], 0
        for i, o in shapes:
            w = buf[off: off + i * o].reshape(i, o)
            off += i * o
            b = buf[off: off + o]
            off += o
            views.append((w, b))
        return views

    def _init_weights(self, rng: np.random.Generator) -> None:
        for w, b in self._views:
            fan_in, fan_out = w.shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w[...] = rng.uniform(-limit, limit, size=w.shape)
            b[...] = 0.0

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_actions(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "QNetwork":
        net = QNetwork(self.layer_sizes, self.dueling, self.seed, flat=self.flat)
        net.steps = self.steps
        return net

    def load_flat(self, flat: np.ndarray) -> None:
        self.flat[...] = flat

    # forward / backward

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise DomainError(f"input must have {self.n_inputs} features, got shape {np.shape(x)}")
        return x, single

    @staticmethod
    def _run(layers, h, acts, last_linear=True):
        n = len(layers)
        for k, (w, b) in enumerate(layers):
            z = h @ w + b
            if k < n - 1 or not last_linear:
                z = np.maximum(z, 0.0)
            acts.append(z)
            h = z
        return h

    def _forward(self, x: np.ndarray):
        acts = [x]
        h = self._run(self.trunk, x, acts, last_linear=not self.dueling)
        if not self.dueling:
            return h, acts, None, None
        v_acts, a_acts = [h], [h]
        v = self._run(self.value_stream, h, v_acts)
        a = self._run(self.adv_stream, h, a_acts)
        q = v + a - a.mean(axis=1, keepdims=True)
        return q, acts, v_acts, a_acts

    def q_values(self, x) -> np.ndarray:
        x, single = self._check_input(x)
        q = self._forward(x)[0]
        return q[0] if single else q

    @staticmethod
    def _backprop(layers, acts, grad_out, grads):
        """Push ``grad_out`` back through ``layers``; fill ``grads`` with
        (dW, db) pairs and return the gradient w.r.t. the stack input."""
        g = grad_out
        for k in range(len(layers) - 1, -1, -1):
            w, _ = layers[k]
            h_in = acts[k]
            grads[k] = (h_in.T @ g, g.sum(axis=0))
            g = g @ w.T
            if k > 0:
                g = g * (acts[k] > 0)
        return g

    def loss_and_grad(self, x, actions, targets, weights=None):
        """Weighted squared TD loss and its gradient on the flat buffer.

        Returns ``(loss, grad, td_errors)`` where ``td_errors`` is
        ``Q(x)[action] - target`` per sample.
        """
        x, _ = self._check_input(x)
        n = x.shape[0]
        actions = np.asarray(actions, dtype=np.intp)
        targets = np.asarray(targets, dtype=float)
        weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        if actions.shape != (n,) or targets.shape != (n,) or weights.shape != (n,):
            raise DomainError("batch arrays must all have the batch length")
        q, acts, v_acts, a_acts = self._forward(x)
        rows = np.arange(n)
        td = q[rows, actions] - targets
        loss = float(np.mean(weights * td * td))
        dq = np.zeros_like(q)
        dq[rows, actions] = 2.0 * weights * td / n

        grads: list = [None] * len(self._views)
        nt = len(self.trunk)
        if self.dueling:
            nv = len(self.value_stream)
            dv = dq.sum(axis=1, keepdims=True)
            da = dq - dv / q.shape[1]
            vg: list = [None] * nv
            ag: list = [None] * len(self.adv_stream)
            gh = self._backprop(self.value_stream, v_acts, dv, vg)
            gh = gh + self._backprop(self.adv_stream, a_acts, da, ag)
            grads[nt: nt + nv] = vg
            grads[nt + nv:] = ag
            if nt:
                gh = gh * (acts[-1] > 0)
                tg: list = [None] * nt
                self._backprop(self.trunk, acts, gh, tg)
                grads[:nt] = tg
        else:
            tg = [None] * nt
            self._backprop(self.trunk, acts, dq, tg)
            grads[:nt] = tg

        flat_grad = np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grads])
        return loss, flat_grad, td

    # checkpoints

    def save(self, path, meta: dict | None = None) -> None:
        header = {
            "layer_sizes": self.layer_sizes,
            "dueling": self.dueling,
            "seed": self.seed,
            "steps": self.steps,
            "n_params": self.n_params,
            "meta": meta or {},
        }
        raw = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(self.flat.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> tuple["QNetwork", dict]:
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"checkpoint not found: {path}")
        data = path.read_bytes()
        if data[:8] != CHECKPOINT_MAGIC:
            raise UsageError(f"{path} is not a checkpoint file")
        (hlen,) = struct.unpack("<I", data[8:12])
        header = json.loads(data[12: 12 + hlen].decode("utf-8"))
        flat = np.frombuffer(data[12 + hlen:], dtype="<f8").astype(float)
        if flat.size != header["n_params"]:
            raise UsageError(f"{path}: truncated parameter block")
        net = cls(header["layer_sizes"], header["dueling"], header["seed"], flat=flat)
        net.steps = header["steps"]
        return net, header.get("meta", {})


def forward_q(net: QNetwork, x) -> np.ndarray:
    return net.q_values(x)


def dueling_combine(v, advantages) -> np.ndarray:
    """Q-values from a state value and mean-centred advantages."""
    adv = np.asarray(advantages, dtype=float)
    if adv.size == 0:
        raise DomainError("advantage vector must be non-empty")
    return v + adv - adv.mean(axis=-1, keepdims=True)


@dataclass
class AdamState:
    lr: float
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_network(cls, net: QNetwork, lr: float) -> "AdamState":
        return cls(lr=lr, m=np.zeros(net.n_params), v=np.zeros(net.n_params))

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def gradient_step(net: QNetwork, adam: AdamState, inputs, actions, targets, is_weights=None):
    """One Adam step on the weighted squared TD loss, in place.

    Returns ``(loss, abs_td_errors)``.  Raises :class:`TrainingError` when
    the loss or the gradient is not finite.
    """
    loss, grad, td = net.loss_and_grad(inputs, actions, targets, is_weights)
    if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite loss ({loss}) at optimizer step {adam.t + 1}")
    adam.step(net.flat, grad)
    net.steps += 1
    return loss, np.abs(td)
