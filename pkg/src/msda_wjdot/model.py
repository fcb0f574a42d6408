"""Small feed-forward networks with hand-written backpropagation.

A model is a stack of affine layers ``h -> act(h @ W.T + b)`` followed by an
optional softmax. A model with no layers and raw output is the identity map,
which is how the identity embedding ``g`` is represented.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError

ACTIVATIONS = ("identity", "tanh", "relu")
OUTPUTS = ("softmax", "raw")
LOSSES = ("squared", "cross_entropy")
_CE_FLOOR = 1e-12


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"


class FeedForwardModel:
    def __init__(self, layers, output="softmax", input_dim=None):
        if output not in OUTPUTS:
            raise InputError(f"unknown output kind {output!r}; expected one of {OUTPUTS}")
        layers = [
            Layer(np.array(l.weight, dtype=float), np.array(l.bias, dtype=float), l.activation)
            for l in layers
        ]
        for k, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise InputError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.weight.shape[0],):
                raise InputError(f"layer {k}: weight {layer.weight.shape} and bias {layer.bias.shape} disagree")
            if k and layer.weight.shape[1] != layers[k - 1].weight.shape[0]:
                raise InputError(
                    f"layer {k} expects {layer.weight.shape[1]} inputs, previous layer gives "
                    f"{layers[k - 1].weight.shape[0]}"
                )
        if layers:
            if input_dim is not None and input_dim != layers[0].weight.shape[1]:
                raise InputError(f"input_dim {input_dim} disagrees with first layer")
            input_dim = layers[0].weight.shape[1]
        elif input_dim is None:
            raise InputError("a model without layers needs an explicit input_dim")
        self.layers = layers
        self.output = output
        self.input_dim = int(input_dim)

    @classmethod
    def identity(cls, dim):
        return cls([], output="raw", input_dim=dim)

    @property
    def output_dim(self):
        return self.layers[-1].weight.shape[0] if self.layers else self.input_dim

    @property
    def is_identity(self):
        return not self.layers and self.output == "raw"

    def copy(self):
        return FeedForwardModel(self.layers, self.output, self.input_dim)

    def _check_input(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise InputError(f"model expects (N, {self.input_dim}) input, got {X.shape}")
        return X

    def _forward(self, X):
        cache = [X]
        h = X
        for layer in self.layers:
            z = h @ layer.weight.T + layer.bias
            if layer.activation == "tanh":
                h = np.tanh(z)
            elif layer.activation == "relu":
                h = np.maximum(z, 0.0)
            else:
                h = z
            cache.append(h)
        if self.output == "softmax":
            h = softmax(h)
        return h, cache

    def forward(self, X):
        """(N, input_dim) -> (N, output_dim)."""
        return self._forward(self._check_input(X))[0]

    __call__ = forward

    def backward(self, X, upstream):
        """Gradient of ``sum_n <upstream[n], forward(X)[n]>`` w.r.t. the parameters.

        Returns a list of ``(dW, db)`` pairs aligned with ``layers``.
        """
        X = self._check_input(X)
        upstream = np.asarray(upstream, dtype=float)
        out, cache = self._forward(X)
        if upstream.shape != out.shape:
            raise InputError(f"upstream has shape {upstream.shape}, output has shape {out.shape}")
        delta = upstream
        if self.output == "softmax":
            delta = out * (upstream - np.sum(upstream * out, axis=1, keepdims=True))
        grads = []
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            h = cache[k + 1]
            if layer.activation == "tanh":
                delta = delta * (1.0 - h * h)
            elif layer.activation == "relu":
                delta = delta * (h > 0)
            grads.append((delta.T @ cache[k], delta.sum(axis=0)))
            delta = delta @ layer.weight
        grads.reverse()
        return grads

    def input_gradient(self, X, upstream):
        """Gradient of ``sum_n <upstream[n], forward(X)[n]>`` w.r.t. ``X``."""
        X = self._check_input(X)
        out, cache = self._forward(X)
        delta = np.asarray(upstream, dtype=float)
        if self.output == "softmax":
            delta = out * (delta - np.sum(delta * out, axis=1, keepdims=True))
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            h = cache[k + 1]
            if layer.activation == "tanh":
                delta = delta * (1.0 - h * h)
            elif layer.activation == "relu":
                delta = delta * (h > 0)
            delta = delta @ layer.weight
        return delta

    def step(self, grads, rate):
        """In-place gradient descent update."""
        for layer, (dW, db) in zip(self.layers, grads):
            layer.weight -= rate * dW
            layer.bias -= rate * db

    def get_params(self):
        if not self.layers:
            return np.zeros(0)
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in self.layers])

    def set_params(self, flat):
        flat = np.asarray(flat, dtype=float)
        pos = 0
        for layer in self.layers:
            n = layer.weight.size
            layer.weight = flat[pos:pos + n].reshape(layer.weight.shape).copy()
            pos += n
            m = layer.bias.size
            layer.bias = flat[pos:pos + m].copy()
            pos += m
        if pos != flat.size:
            raise InputError(f"expected {pos} parameters, got {flat.size}")

    def params_equal(self, other):
        return (
            self.output == other.output
            and self.input_dim == other.input_dim
            and len(self.layers) == len(other.layers)
            and all(
                a.activation == b.activation
                and np.array_equal(a.weight, b.weight)
                and np.array_equal(a.bias, b.bias)
                for a, b in zip(self.layers, other.layers)
            )
        )


def flatten_grads(grads):
    if not grads:
        return np.zeros(0)
    return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in grads])


def add_grads(a, b):
    return [(dWa + dWb, dba + dbb) for (dWa, dba), (dWb, dbb) in zip(a, b)]


def softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def init_layers(sizes, activations, rng):
    """Uniform(-s, s) weights with ``s = 1/sqrt(fan_in)``; zero biases."""
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        s = 1.0 / np.sqrt(fan_in)
        layers.append(Layer(rng.uniform(-s, s, size=(fan_out, fan_in)), np.zeros(fan_out), act))
    return layers


def build_model(input_dim, n_outputs, hidden=(), activation="tanh", output="softmax", seed=0, rng=None):
    """``input_dim -> hidden... -> n_outputs``; hidden layers use ``activation``."""
    rng = np.random.default_rng(seed) if rng is None else rng
    sizes = [input_dim, *hidden, n_outputs]
    acts = [activation] * len(hidden) + ["identity"]
    return FeedForwardModel(init_layers(sizes, acts, rng), output=output)


def predict_labels(model, X):
    """Row-wise argmax of the model output; ties go to the lowest class index."""
    return np.argmax(model.forward(X), axis=1)


def accuracy(model, X, labels):
    return float(np.mean(predict_labels(model, X) == np.asarray(labels)))


# --- losses ---------------------------------------------------------------


def label_loss_matrix(Y, P, kind="squared"):
    """``L[i, j] = loss(Y[i], P[j])`` for label rows ``Y`` and predictions ``P``.

    ``squared``: ``||Y[i] - P[j]||^2``. ``cross_entropy``:
    ``-sum_k Y[i, k] log P[j, k]``. ``zero_one``: 0 when the argmaxes agree,
    1 otherwise (evaluation only, not differentiable).
    """
    Y = np.asarray(Y, dtype=float)
    P = np.asarray(P, dtype=float)
    if Y.shape[1] != P.shape[1]:
        raise InputError(f"label dimension mismatch: {Y.shape[1]} vs {P.shape[1]}")
    if kind == "squared":
        L = (Y * Y).sum(1)[:, None] + (P * P).sum(1)[None, :] - 2.0 * Y @ P.T
        return np.maximum(L, 0.0)
    if kind == "cross_entropy":
        return -Y @ np.log(np.maximum(P, _CE_FLOOR)).T
    if kind == "zero_one":
        return (np.argmax(Y, axis=1)[:, None] != np.argmax(P, axis=1)[None, :]).astype(float)
    raise InputError(f"unknown label loss {kind!r}")


def weighted_loss_gradient(Y, P, plan, kind="squared"):
    """``d/dP`` of ``sum_ij plan[i, j] * loss(Y[i], P[j])``, shape of ``P``."""
    if kind == "squared":
        col_mass = plan.sum(axis=0)
        return 2.0 * (col_mass[:, None] * P - plan.T @ Y)
    if kind == "cross_entropy":
        return -(plan.T @ Y) / np.maximum(P, _CE_FLOOR)
    raise InputError(f"label loss {kind!r} has no gradient")


def supervised_loss(P, Y, kind="squared"):
    """Mean per-sample loss and its gradient w.r.t. ``P``."""
    n = P.shape[0]
    if kind == "squared":
        diff = P - Y
        return float((diff * diff).sum() / n), 2.0 * diff / n
    if kind == "cross_entropy":
        Pc = np.maximum(P, _CE_FLOOR)
        return float(-(Y * np.log(Pc)).sum() / n), -Y / Pc / n
    raise InputError(f"unknown loss {kind!r}")


# --- training -------------------------------------------------------------


def compose(g, f):
    """Stack the layers of ``g`` (raw output) under ``f`` into one model."""
    if g.output != "raw":
        raise InputError("only a raw-output embedding can be composed")
    if g.output_dim != f.input_dim:
        raise InputError(f"embedding outputs {g.output_dim} features, classifier expects {f.input_dim}")
    return FeedForwardModel(g.layers + f.layers, f.output, g.input_dim)


def train_mtl_embedding(sources, hidden=(16,), embed_dim=None, activation="tanh", steps=500,
                        rate=0.5, seed=0, loss="squared"):
    """Shared embedding ``g`` with one linear softmax head per source.

    Minimises ``sum_j mean_i loss(f_j(g(x_j^i)), y_j^i)`` by full-batch
    gradient descent. ``hidden`` gives the embedding's hidden widths and
    ``embed_dim`` its output width (defaults to the last hidden width; the
    embedding's last layer is linear). Initialisation draws ``g`` first and
    then the heads in source order from one seeded generator.

    Returns
    -------
    g : FeedForwardModel
    heads : list of FeedForwardModel
    """
    sources = list(sources)
    if not sources:
        raise InputError("need at least one source")
    dims = {s.dim for s in sources}
    if len(dims) != 1:
        raise InputError(f"sources have different feature dimensions: {sorted(dims)}")
    for j, s in enumerate(sources):
        if len(s) == 0:
            raise InputError(f"source {j} is empty")
    d = dims.pop()
    K = max(s.n_classes for s in sources)
    hidden = list(hidden)
    if embed_dim is None:
        embed_dim = hidden[-1] if hidden else d
        hidden = hidden[:-1]
    rng = np.random.default_rng(seed)
    sizes = [d, *hidden, embed_dim]
    g = FeedForwardModel(init_layers(sizes, [activation] * len(hidden) + ["identity"], rng),
                         output="raw", input_dim=d)
    heads = [FeedForwardModel(init_layers([embed_dim, K], ["identity"], rng), "softmax") for _ in sources]
    targets = [np.eye(K)[s.labels] for s in sources]
    n_g = len(g.layers)

    for _ in range(steps):
        g_grad = None
        head_grads = []
        for s, f, Y in zip(sources, heads, targets):
            net = FeedForwardModel(g.layers + f.layers, "softmax", d)
            _, upstream = supervised_loss(net.forward(s.features), Y, loss)
            grads = net.backward(s.features, upstream)
            g_grad = grads[:n_g] if g_grad is None else add_grads(g_grad, grads[:n_g])
            head_grads.append(grads[n_g:])
        g.step(g_grad, rate)
        for f, grads in zip(heads, head_grads):
            f.step(grads, rate)
    return g, heads


def train_classifier(model, X, labels, steps, rate, loss="squared", validation=None, eval_every=10):
    """Full-batch gradient descent on the mean supervised loss, in place.

    With ``validation=(X_val, y_val)`` the parameters scoring the best
    validation accuracy (first one wins on ties) are restored at the end.
    """
    X = np.asarray(X, dtype=float)
    Y = np.eye(model.output_dim)[np.asarray(labels)]
    best_acc, best_params = -1.0, None
    for t in range(steps + 1):
        if validation is not None and (t % eval_every == 0 or t == steps):
            acc = accuracy(model, *validation)
            if acc > best_acc:
                best_acc, best_params = acc, model.get_params()
        if t == steps:
            break
        _, upstream = supervised_loss(model.forward(X), Y, loss)
        model.step(model.backward(X, upstream), rate)
    if best_params is not None:
        model.set_params(best_params)
    return model


# --- checkpoints ----------------------------------------------------------

_CHECKPOINT_MAGIC = "# msda-wjdot model v1"


def save_model(model, path):
    """Text checkpoint: a magic line, then ``key = <json value>`` lines.

    Keys: ``input_dim``, ``output``, ``n_layers``, and per layer
    ``layer<k>.activation``, ``layer<k>.weight`` (nested list, out x in),
    ``layer<k>.bias``. Floats are written with Python's shortest round-trip
    repr, so save/load is lossless.
    """
    lines = [
        _CHECKPOINT_MAGIC,
        f"input_dim = {model.input_dim}",
        f"output = {json.dumps(model.output)}",
        f"n_layers = {len(model.layers)}",
    ]
    for k, layer in enumerate(model.layers):
        lines.append(f"layer{k}.activation = {json.dumps(layer.activation)}")
        lines.append(f"layer{k}.weight = {json.dumps(layer.weight.tolist())}")
        lines.append(f"layer{k}.bias = {json.dumps(layer.bias.tolist())}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path):
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != _CHECKPOINT_MAGIC:
        raise ParseError("missing checkpoint header", 1)
    values = {}
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ParseError("expected 'key = value'", lineno)
        try:
            values[key.strip()] = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad value for {key.strip()}: {exc}", lineno) from None
    try:
        layers = [
            Layer(np.array(values[f"layer{k}.weight"], dtype=float).reshape(
                      len(values[f"layer{k}.weight"]), -1),
                  np.array(values[f"layer{k}.bias"], dtype=float),
                  values[f"layer{k}.activation"])
            for k in range(int(values["n_layers"]))
        ]
        return FeedForwardModel(layers, values["output"], int(values["input_dim"]))
    except KeyError as exc:
        raise ParseError(f"missing key {exc.args[0]}") from None
