"""Named trainable parameters, initialisation and the SGD update."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .autodiff import Var


@dataclass
class Parameter:
    name: str
    var: Var
    momentum_buffer: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.momentum_buffer is None:
            self.momentum_buffer = np.zeros(self.var.shape)

    @property
    def value(self) -> np.ndarray:
        return self.var.value

    @property
    def grad(self) -> np.ndarray | None:
        return self.var.grad

    def assign(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.var.shape:
            raise ValueError(
                f"parameter {self.name!r}: shape {value.shape} != {self.var.shape}"
            )
        fresh = Var(value, requires_grad=True, name=self.name)
        fresh.grad = self.var.grad
        self.var = fresh


class ParamStore:
    """Ordered mapping of hierarchical names to parameters."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self._params: dict[str, Parameter] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Var:
        return self._params[name].var

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def parameter(self, name: str) -> Parameter:
        return self._params[name]

    def add(self, name: str, value: np.ndarray) -> Var:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Parameter(name, Var(value, requires_grad=True, name=name))
        self._params[name] = p
        return p.var

    def conv(self, name: str, cout: int, cin: int, k: int, bias: bool = True) -> None:
        """Kaiming-uniform (fan-in, ReLU gain) weight and a zero bias."""
        fan_in = cin * k * k
        bound = np.sqrt(6.0 / fan_in)
        self.add(f"{name}.weight", self.rng.uniform(-bound, bound, size=(cout, cin, k, k)))
        if bias:
            self.add(f"{name}.bias", np.zeros(cout))

    def count(self) -> int:
        return int(sum(p.var.value.size for p in self))

    def zero_grad(self) -> None:
        for p in self:
            p.var.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.value for p in self}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, value in state.items():
            self._params[name].assign(value)


def sgd_step(params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0) -> None:
    """Classic momentum SGD; gradients are cleared afterwards.

    buf <- momentum * buf + grad + weight_decay * value
    value <- value - lr * buf
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for p in params:
        g = p.grad if p.grad is not None else np.zeros(p.var.shape)
        buf = momentum * p.momentum_buffer + g + weight_decay * p.value
        p.momentum_buffer = buf
        p.assign(p.value - lr * buf)
        p.var.grad = None
