from __future__ import annotations

import numpy as np

from .diffcore import DiffArray


class Adam:
    """Adam with step-decay learning rate.

    The rate is ``lr * gamma**j`` after the j-th milestone; milestones are
    absolute step numbers.
    """

    def __init__(self, params: dict[str, DiffArray], lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, milestones=(), gamma: float = 0.5, grad_clip: float | None = None):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.milestones = tuple(int(m) for m in milestones)
        self.gamma = gamma
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {k: np.zeros_like(v.value) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.value) for k, v in params.items()}

    def current_lr(self) -> float:
        return self.lr * self.gamma ** sum(self.t >= m for m in self.milestones)

    def step(self) -> float:
        """Apply one update from the accumulated grads; returns the grad norm."""
        names = [k for k, p in self.params.items() if p.requires_grad]
        grads = {k: self.params[k].grad for k in names}
        norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
        factor = 1.0
        if self.grad_clip is not None and norm > self.grad_clip:
            factor = self.grad_clip / norm
        lr = self.current_lr()
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k in names:
            p, g = self.params[k], grads[k] * factor
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.value = (p.value - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.value.dtype)
        return norm

    def state(self) -> dict[str, np.ndarray]:
        out = {"optim.t": np.array([self.t], dtype=np.int64)}
        for k in self.m:
            out[f"optim.m.{k}"] = self.m[k]
            out[f"optim.v.{k}"] = self.v[k]
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["optim.t"][0])
        for k in self.m:
            self.m[k] = arrays[f"optim.m.{k}"].copy()
            self.v[k] = arrays[f"optim.v.{k}"].copy()
