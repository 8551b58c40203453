"""
Adaptive-moment optimizer over a Module's named parameters
"""
from typing import Dict, Mapping, Tuple

import numpy as np

from src.nets.layers import Module


class Adam:
    """Adam with bias correction, no weight decay"""

    def __init__(self, module: Module, lr: float = 1e-3, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if module.frozen:
            raise ValueError(f"cannot optimize a frozen {module.kind}")
        self.module = module
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {k: np.zeros_like(v, dtype=np.float64) for k, v in module.params.items()}
        self.v: Dict[str, np.ndarray] = {k: np.zeros_like(v, dtype=np.float64) for k, v in module.params.items()}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        """Apply one update; parameters without a gradient are left untouched"""
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            self.module.update(name, (self.module.params[name] - update).astype(np.float32))
