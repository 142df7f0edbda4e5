"""
Motor mínimo de redes densas: almacenamiento de parámetros, forward, backward
(modo inverso) y el álgebra de vectores que usa el combinador.

Orden canónico de parámetros (layer-major): para cada capa l, primero W_l con
forma (fan_in, fan_out) en orden row-major y a continuación b_l (fan_out).
Todo en float64.
"""

from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from d4am.errors import ConfigError, ShapeError

ParamVector = npt.NDArray[np.float64]

ACTIVATIONS = ("tanh", "relu", "identity")
OUTPUT_ACTIVATIONS = ("identity", "softmax")


def validate_activation(name: str, allowed: tuple[str, ...] = ACTIVATIONS) -> str:
    if name not in allowed:
        raise ConfigError(f"Activación no válida: {name}. Opciones: {allowed}")
    return name


@dataclass(frozen=True)
class NetworkSpec:
    """Layer sizes plus one activation per hidden layer and an output head."""

    layer_dims: tuple[int, ...]
    activations: tuple[str, ...] = ()
    output_activation: str = "identity"
    _shapes: tuple[tuple[int, int], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2:
            raise ConfigError(f"layer_dims necesita al menos dos tamaños: {dims}")
        if any(d < 1 for d in dims):
            raise ConfigError(f"layer_dims debe ser positivo: {dims}")
        acts = tuple(self.activations)
        if len(acts) != len(dims) - 2:
            raise ConfigError(
                f"Se esperan {len(dims) - 2} activaciones ocultas para {dims}, hay {len(acts)}"
            )
        for a in acts:
            validate_activation(a)
        validate_activation(self.output_activation, OUTPUT_ACTIVATIONS)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "activations", acts)
        object.__setattr__(self, "_shapes", tuple(zip(dims[:-1], dims[1:])))

    @classmethod
    def build(
        cls,
        layer_dims: "list[int] | tuple[int, ...]",
        activation: str = "tanh",
        output_activation: str = "identity",
    ) -> "NetworkSpec":
        """Same hidden activation everywhere."""
        n_hidden = max(len(layer_dims) - 2, 0)
        return cls(tuple(layer_dims), (activation,) * n_hidden, output_activation)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def num_params(self) -> int:
        return sum(i * o + o for i, o in self._shapes)

    def with_output(self, output_activation: str) -> "NetworkSpec":
        return NetworkSpec(self.layer_dims, self.activations, output_activation)


def unpack(spec: NetworkSpec, params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views (W, b) per layer into `params`; no copies."""
    if params.ndim != 1 or params.shape[0] != spec.num_params:
        raise ShapeError(
            f"Vector de parámetros con forma {params.shape}, se esperaba ({spec.num_params},)"
        )
    layers = []
    offset = 0
    for fan_in, fan_out in spec._shapes:
        w = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def init_params(spec: NetworkSpec, seed: int) -> ParamVector:
    """Weights ~ N(0, 1/fan_in), biases zero. Deterministic in (spec, seed)."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.num_params, dtype=np.float64)
    for w, _b in unpack(spec, params):
        w[...] = rng.standard_normal(w.shape) / np.sqrt(w.shape[0])
    return params


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return upstream * (1.0 - a * a)
    if name == "relu":
        return upstream * (z > 0.0)
    return upstream


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(spec: NetworkSpec, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise ShapeError(f"Entrada con forma {x.shape}, se esperaba (..., {spec.input_dim})")
    return batch, single


def _forward_cache(spec: NetworkSpec, params: ParamVector, batch: np.ndarray):
    layers = unpack(spec, params)
    pre, post = [], [batch]
    a = batch
    last = len(layers) - 1
    for idx, (w, b) in enumerate(layers):
        z = a @ w + b
        name = spec.activations[idx] if idx < last else spec.output_activation
        a = softmax(z) if name == "softmax" else _activate(name, z)
        pre.append(z)
        post.append(a)
    return layers, pre, post


def forward(spec: NetworkSpec, params: ParamVector, x: np.ndarray) -> np.ndarray:
    """Accepts a single vector (D,) or a batch (B, D); output keeps the same rank."""
    batch, single = _as_batch(spec, x)
    _layers, _pre, post = _forward_cache(spec, params, batch)
    out = post[-1]
    return out[0] if single else out


def backward(
    spec: NetworkSpec,
    params: ParamVector,
    x: np.ndarray,
    upstream_grad: np.ndarray,
) -> tuple[ParamVector, np.ndarray]:
    """
    Gradiente de <upstream_grad, forward(x)> respecto a los parámetros y a la entrada.
    Con entradas en lote, el gradiente de parámetros es la suma sobre el lote.
    """
    batch, single = _as_batch(spec, x)
    up = np.asarray(upstream_grad, dtype=np.float64)
    up = up[None, :] if single and up.ndim == 1 else up
    if up.shape != (batch.shape[0], spec.output_dim):
        raise ShapeError(
            f"upstream_grad con forma {np.shape(upstream_grad)}, se esperaba salida de {spec.output_dim}"
        )
    layers, pre, post = _forward_cache(spec, params, batch)
    grad = np.zeros(spec.num_params, dtype=np.float64)
    grad_layers = unpack(spec, grad)

    last = len(layers) - 1
    delta = up
    for idx in range(last, -1, -1):
        name = spec.activations[idx] if idx < last else spec.output_activation
        a = post[idx + 1]
        if name == "softmax":
            delta = a * (delta - np.sum(delta * a, axis=1, keepdims=True))
        else:
            delta = _activation_grad(name, pre[idx], a, delta)
        gw, gb = grad_layers[idx]
        gw[...] = post[idx].T @ delta
        gb[...] = delta.sum(axis=0)
        delta = delta @ layers[idx][0].T
    return grad, (delta[0] if single else delta)


def _check_pair(a: ParamVector, b: ParamVector) -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"Longitudes distintas: {np.shape(a)} vs {np.shape(b)}")


def dot(a: ParamVector, b: ParamVector) -> float:
    _check_pair(a, b)
    return float(np.dot(a, b))


def norm_sq(a: ParamVector) -> float:
    return float(np.dot(a, a))


def axpy(alpha: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """y + alpha * x as a new vector."""
    _check_pair(x, y)
    return y + alpha * x
