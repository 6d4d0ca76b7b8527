"""Adaptive moment-estimate optimizer (trainer plumbing)."""

from __future__ import annotations

import numpy as np


class Adam:
    """Per-parameter first/second moment steps with bias correction.

    State is exposed as flat float32 arrays so it can ride along in
    checkpoints for exact training resume.
    """

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p.data = p.data - (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state(self):
        out = {"opt.t": np.array([self.t], dtype=np.float32)}
        for n in self.params:
            out[f"opt.m.{n}"] = self.m[n]
            out[f"opt.v.{n}"] = self.v[n]
        return out

    def load_state(self, state):
        self.t = int(state["opt.t"][0])
        for n in self.params:
            self.m[n] = np.asarray(state[f"opt.m.{n}"], dtype=np.float32).reshape(self.m[n].shape).copy()
            self.v[n] = np.asarray(state[f"opt.v.{n}"], dtype=np.float32).reshape(self.v[n].shape).copy()
