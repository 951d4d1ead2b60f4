"""Dense feed-forward networks with exact gradients.

float64 only.  Plain SGD on full-batch objectives; no momentum or adaptive
optimizers, so runs are reproducible to the bit given a seed.  Checkpoints
are a text format with shortest-round-trip float reprs, which reload to the
exact same bit pattern.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad

ACTIVATIONS = ("relu", "identity", "sigmoid")

_ACT_NUMPY = {
    "relu": ad.relu,
    "identity": lambda x: x,
    "sigmoid": ad.sigmoid,
}


@dataclass
class Layer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("layer weights must be 2-d (out, in)")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class DenseNet:
    """A stack of affine layers with elementwise activations."""

    def __init__(self, layers: Sequence[Layer]):
        layers = list(layers)
        if not layers:
            raise ValueError("a DenseNet needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise ValueError(
                    f"layer widths do not chain: {prev.weights.shape[0]} -> {nxt.weights.shape[1]}"
                )
        self.layers = layers

    @classmethod
    def create(
        cls,
        widths: Sequence[int],
        activations: Sequence[str] | None = None,
        rng: np.random.Generator | None = None,
    ) -> "DenseNet":
        """Initialize with Uniform(-s, s), s = sqrt(6 / (fan_in + fan_out)).

        Default activations: relu on every layer except identity on the last.
        """
        widths = list(widths)
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        n_layers = len(widths) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["identity"]
        if len(activations) != n_layers:
            raise ValueError("one activation per layer required")
        if rng is None:
            rng = np.random.default_rng(0)
        layers = []
        for fan_in, fan_out, act in zip(widths, widths[1:], activations):
            scale = np.sqrt(6.0 / (fan_in + fan_out))
            weights = rng.uniform(-scale, scale, size=(fan_out, fan_in))
            bias = np.zeros(fan_out)
            layers.append(Layer(weights, bias, act))
        return cls(layers)

    @property
    def in_width(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def out_width(self) -> int:
        return self.layers[-1].weights.shape[0]

    @property
    def n_params(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def copy(self) -> "DenseNet":
        return DenseNet([Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate on a single vector (d,) or a batch (B, d)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.in_width:
            raise ValueError(f"input width {x.shape[1]} != expected {self.in_width}")
        h = x
        for layer in self.layers:
            h = _ACT_NUMPY[layer.activation](h @ layer.weights.T + layer.bias)
        return h[0] if single else h

    def __repr__(self):
        widths = [self.in_width] + [l.weights.shape[0] for l in self.layers]
        return f"DenseNet({'->'.join(map(str, widths))})"


@dataclass
class GradientTape:
    """Per-layer (d_weights, d_bias) arrays congruent with some DenseNet."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    @classmethod
    def zeros(cls, net: DenseNet) -> "GradientTape":
        return cls([(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in net.layers])

    def check_congruent(self, net: DenseNet):
        if len(self.layers) != len(net.layers):
            raise ValueError("tape/net layer count mismatch")
        for (dw, db), layer in zip(self.layers, net.layers):
            if dw.shape != layer.weights.shape or db.shape != layer.bias.shape:
                raise ValueError("tape/net shape mismatch")

    def max_abs(self) -> float:
        return max(
            max(np.max(np.abs(dw), initial=0.0), np.max(np.abs(db), initial=0.0))
            for dw, db in self.layers
        )


class NetGraph:
    """Differentiable view of a DenseNet: parameters wrapped as graph nodes."""

    def __init__(self, net: DenseNet):
        self.net = net
        self.params = [(ad.param(l.weights), ad.param(l.bias)) for l in net.layers]
        self.activations = [l.activation for l in net.layers]

    def forward(self, x) -> ad.Node:
        h = x if isinstance(x, ad.Node) else ad.constant(np.asarray(x, dtype=np.float64))
        batched = h.value.ndim == 2
        for (w, b), act in zip(self.params, self.activations):
            if batched:
                h = ad.matmul(h, ad.transpose(w)) + b
            else:
                h = ad.matmul(w, h) + b
            h = _ACT_NUMPY[act](h)
        return h

    def tape(self) -> GradientTape:
        grads = []
        for w, b in self.params:
            dw = w.grad if w.grad is not None else np.zeros_like(w.value)
            db = b.grad if b.grad is not None else np.zeros_like(b.value)
            grads.append((dw, db))
        return GradientTape(grads)


Objective = Callable[[NetGraph], ad.Node]


def value_and_grad(net: DenseNet, objective: Objective) -> tuple[float, GradientTape]:
    """Evaluate a scalar objective of the net and its exact parameter gradient."""
    graph = NetGraph(net)
    out = objective(graph)
    if not isinstance(out, ad.Node):
        raise TypeError("objective must return a graph Node")
    out.backward()
    return out.item(), graph.tape()


def grad(net: DenseNet, objective: Objective) -> GradientTape:
    return value_and_grad(net, objective)[1]


@dataclass
class GradientCheck:
    max_rel_error: float
    n_checked: int
    n_skipped: int


def check_gradients(net: DenseNet, objective: Objective, eps: float = 1e-5) -> GradientCheck:
    """Compare exact gradients against central finite differences.

    Relative error per coordinate is |g_ad - g_fd| / max(1, |g_fd|).
    Coordinates where the +eps and -eps evaluations land on different
    discrete branches (relu sign, clip region) have no two-sided derivative;
    they are skipped and counted rather than compared.
    """
    _, tape = value_and_grad(net, objective)
    work = net.copy()

    def eval_at() -> tuple[float, tuple]:
        out = objective(NetGraph(work))
        return out.item(), ad.branch_signature(out)

    max_rel = 0.0
    checked = 0
    skipped = 0
    for li, layer in enumerate(work.layers):
        for arr, g_arr in ((layer.weights, tape.layers[li][0]), (layer.bias, tape.layers[li][1])):
            flat = arr.reshape(-1)
            g_flat = g_arr.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus, sig_plus = eval_at()
                flat[i] = orig - eps
                f_minus, sig_minus = eval_at()
                flat[i] = orig
                if sig_plus != sig_minus:
                    skipped += 1
                    continue
                g_fd = (f_plus - f_minus) / (2.0 * eps)
                rel = abs(g_flat[i] - g_fd) / max(1.0, abs(g_fd))
                max_rel = max(max_rel, rel)
                checked += 1
    return GradientCheck(max_rel, checked, skipped)


def sgd_step(net: DenseNet, tape: GradientTape, lr: float, direction: str = "descent") -> DenseNet:
    """One plain gradient step; returns a new net, inputs untouched."""
    tape.check_congruent(net)
    if direction == "descent":
        sign = -1.0
    elif direction == "ascent":
        sign = 1.0
    else:
        raise ValueError(f"direction must be 'ascent' or 'descent', got {direction!r}")
    layers = []
    for layer, (dw, db) in zip(net.layers, tape.layers):
        layers.append(
            Layer(layer.weights + sign * lr * dw, layer.bias + sign * lr * db, layer.activation)
        )
    return DenseNet(layers)


_CHECKPOINT_HEADER = "shiftuq-densenet v1"


def _format_floats(values: np.ndarray) -> str:
    # repr() emits the shortest string that round-trips the exact double
    return " ".join(repr(float(v)) for v in values.reshape(-1))


def save_checkpoint(net: DenseNet, path):
    lines = [_CHECKPOINT_HEADER, f"layers {len(net.layers)}"]
    for layer in net.layers:
        out_w, in_w = layer.weights.shape
        lines.append(f"layer {in_w} {out_w} {layer.activation}")
        lines.append("weights " + _format_floats(layer.weights))
        lines.append("bias " + _format_floats(layer.bias))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> DenseNet:
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != _CHECKPOINT_HEADER:
        raise ValueError(f"{path}: not a {_CHECKPOINT_HEADER!r} checkpoint")
    n_layers = int(lines[1].split()[1])
    layers = []
    pos = 2
    for _ in range(n_layers):
        _, in_w, out_w, act = lines[pos].split()
        in_w, out_w = int(in_w), int(out_w)
        w_tokens = lines[pos + 1].split()[1:]
        b_tokens = lines[pos + 2].split()[1:]
        weights = np.array([float(t) for t in w_tokens]).reshape(out_w, in_w)
        bias = np.array([float(t) for t in b_tokens])
        layers.append(Layer(weights, bias, act))
        pos += 3
    return DenseNet(layers)
