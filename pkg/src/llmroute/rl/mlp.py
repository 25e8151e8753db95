"""Fully connected Q-network with hand-written backpropagation."""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

Params = List[Tuple[np.ndarray, np.ndarray]]


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> Params:
    """He-uniform weights and zero biases for layers ``sizes[0] -> ... -> sizes[-1]``."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        params.append((rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return params


def layer_sizes(params: Params) -> List[int]:
    return [params[0][0].shape[0]] + [w.shape[1] for w, _ in params]


def copy_params(params: Params) -> Params:
    return [(w.copy(), b.copy()) for w, b in params]


def mlp_forward(params: Params, x: np.ndarray) -> np.ndarray:
    """Q-values for one state (1-D) or a batch (2-D); ReLU on hidden layers."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params[0][0].shape[0]:
        raise ValueError(f"state has dimension {x.shape[-1]}, network expects {params[0][0].shape[0]}")
    h = x
    for w, b in params[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w, b = params[-1]
    return h @ w + b


def huber(err: np.ndarray, delta: float = 1.0) -> np.ndarray:
    a = np.abs(err)
    return np.where(a <= delta, 0.5 * err**2, delta * (a - 0.5 * delta))


def huber_loss(params: Params, states, actions, targets, delta: float = 1.0) -> float:
    q = mlp_forward(params, states)
    err = q[np.arange(len(actions)), actions] - targets
    return float(huber(err, delta).mean())


def mlp_gradient(params: Params, states, actions, targets, delta: float = 1.0):
    """Mean Huber loss of Q(s)[a] against ``targets`` and its gradient w.r.t. every parameter."""
    x = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.asarray(actions, dtype=int)
    targets = np.asarray(targets, dtype=float)
    n = len(x)
    if n == 0:
        raise ValueError("empty minibatch")
    acts = [x]
    pre = []
    h = x
    for w, b in params[:-1]:
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    w_out, b_out = params[-1]
    q = h @ w_out + b_out
    rows = np.arange(n)
    err = q[rows, actions] - targets
    loss = float(huber(err, delta).mean())

    dq = np.zeros_like(q)
    dq[rows, actions] = np.clip(err, -delta, delta) / n
    grads = [None] * len(params)
    grads[-1] = (acts[-1].T @ dq, dq.sum(axis=0))
    g = dq @ w_out.T
    for k in range(len(params) - 2, -1, -1):
        g = g * (pre[k] > 0)
        grads[k] = (acts[k].T @ g, g.sum(axis=0))
        if k > 0:
            g = g @ params[k][0].T
    return loss, grads


class Adam:
    def __init__(self, params: Params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        self.t = 0

    def step(self, params: Params, grads) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
            mw, mb = self.m[k]
            vw, vb = self.v[k]
            for p, g, m, v in ((w, gw, mw, vw), (b, gb, mb, vb)):
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
