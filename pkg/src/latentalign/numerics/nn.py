"""Named parameter storage and feedforward network evaluation.

A :class:`ParamStore` holds every trainable array of a model under a stable
name (insertion order is the iteration order), so optimizers, gradient
containers and checkpoints all share one addressing scheme. Networks are
described by :class:`LayerSpec` sequences and evaluated either on plain
arrays (:func:`forward_mlp`) or on tape variables (:func:`mlp_apply`) when
gradients are needed; both run the same code path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from latentalign.errors import ConfigError
from latentalign.numerics import tape
from latentalign.numerics.tape import Var

ACTIVATIONS = ("tanh", "scaled_shifted_sigmoid", "identity")


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer: output = activation(W x + b)."""

    in_width: int
    out_width: int
    activation: str = "identity"

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1:
            raise ConfigError(f"layer widths must be positive, got {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(
                f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")


class ParamStore:
    """Ordered mapping from group name to a dense float64 array."""

    def __init__(self):
        self._groups: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._groups:
            raise ConfigError(f"parameter group {name!r} already exists")
        self._groups[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._groups[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._groups:
            raise ConfigError(f"unknown parameter group {name!r}")
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._groups[name].shape:
            raise ConfigError(
                f"shape mismatch for {name!r}: have {self._groups[name].shape}, "
                f"got {value.shape}")
        self._groups[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self._groups

    def __len__(self) -> int:
        return len(self._groups)

    def names(self) -> list[str]:
        return list(self._groups)

    def items(self):
        return self._groups.items()

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, value in self._groups.items():
            out.add(name, value.copy())
        return out

    def zeros_like(self) -> "ParamStore":
        out = ParamStore()
        for name, value in self._groups.items():
            out.add(name, np.zeros_like(value))
        return out

    def as_vars(self) -> dict[str, Var]:
        """Leaf tape variables, one per group, sharing this store's values."""
        return {name: Var(value) for name, value in self._groups.items()}


def scaled_shifted_sigmoid(x):
    """0.5 * (sigmoid(x) - 0.5), with range (-0.25, 0.25)."""
    if isinstance(x, Var):
        return (tape.sigmoid(x) - 0.5) * 0.5
    return 0.5 * (1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64))) - 0.5)


def _apply_activation(h: Var, kind: str) -> Var:
    if kind == "tanh":
        return tape.tanh(h)
    if kind == "scaled_shifted_sigmoid":
        return scaled_shifted_sigmoid(h)
    return h


def mlp_apply(spec: Sequence[LayerSpec], params: dict[str, Var], x: Var,
              prefix: str = "mlp") -> Var:
    """Run the network on tape variables; `x` has shape (batch, in_width)."""
    h = x
    for i, layer in enumerate(spec):
        if h.value.shape[-1] != layer.in_width:
            raise ConfigError(
                f"layer {prefix}.{i}: expected input width {layer.in_width}, "
                f"got {h.value.shape[-1]}")
        w = params[f"{prefix}.w{i}"]
        b = params[f"{prefix}.b{i}"]
        if w.value.shape != (layer.out_width, layer.in_width):
            raise ConfigError(
                f"layer {prefix}.{i}: weight shape {w.value.shape} does not match "
                f"spec ({layer.out_width}, {layer.in_width})")
        h = _apply_activation(_affine(h, w, b), layer.activation)
    return h


def _affine(h: Var, w: Var, b: Var) -> Var:
    # h (batch, in) @ w (out, in)^T + b
    return (h @ tape.transpose(w)) + b


def forward_mlp(spec: Sequence[LayerSpec], params: ParamStore, x: np.ndarray,
                prefix: str = "mlp") -> np.ndarray:
    """Evaluate the network on a plain input vector, returning a vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigError(f"forward_mlp expects a vector input, got shape {x.shape}")
    out = mlp_apply(spec, params.as_vars(), Var(x.reshape(1, -1)), prefix)
    return out.value[0]


def init_mlp_params(store: ParamStore, spec: Sequence[LayerSpec], prefix: str,
                    rng: np.random.Generator) -> None:
    """Add weight/bias groups for `spec`: uniform +-sqrt(6/(fan_in+fan_out)), zero bias."""
    for i, layer in enumerate(spec):
        bound = np.sqrt(6.0 / (layer.in_width + layer.out_width))
        store.add(f"{prefix}.w{i}",
                  rng.uniform(-bound, bound, size=(layer.out_width, layer.in_width)))
        store.add(f"{prefix}.b{i}", np.zeros(layer.out_width))


def compute_gradient(loss_fn: Callable[[dict[str, Var]], Var],
                     params: ParamStore) -> ParamStore:
    """Exact reverse-mode gradients of `loss_fn` w.r.t. every parameter group.

    `loss_fn` receives a dict of leaf variables (one per group) and must
    return a scalar variable built from tape primitives. Groups the loss
    never touches get zero gradients.
    """
    leaves = params.as_vars()
    loss = loss_fn(leaves)
    loss.backward()
    grads = ParamStore()
    for name, leaf in leaves.items():
        grads.add(name, leaf.grad if leaf.grad is not None
                  else np.zeros_like(leaf.value))
    return grads
