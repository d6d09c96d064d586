from typing import Dict, Iterable

import numpy as np

from core.numerics import Parameter


class Adam:
    """
    Adam with bias correction and one learning rate per parameter group
    (``trunk``, ``sap``, ``tap``). Weight decay is added to the gradient when non-zero.
    """

    def __init__(
        self,
        params: Iterable[Parameter],
        learning_rates: Dict[str, float],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        missing = {p.group for p in self.params} - set(learning_rates)
        if missing:
            raise ValueError(f"No learning rate for parameter group(s): {sorted(missing)}")
        self.learning_rates = dict(learning_rates)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m: Dict[str, np.ndarray] = {p.name: np.zeros_like(p.data) for p in self.params}
        self._v: Dict[str, np.ndarray] = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1_corr = 1.0 - self.beta1 ** self.t
        b2_corr = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.gradient
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m, v = self._m[p.name], self._v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            lr = self.learning_rates[p.group]
            p.data -= lr * (m / b1_corr) / (np.sqrt(v / b2_corr) + self.eps)
