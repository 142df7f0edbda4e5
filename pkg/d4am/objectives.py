"""
Objetivos del realzador: L_reg (ruidoso → limpio, MSE) y L_cls^φ (entropía cruzada
de la salida realzada a través de un modelo proxy congelado φ).

Ambos devuelven (pérdida, gradiente respecto a θ). Las pérdidas y gradientes se
promedian sobre el lote, de modo que la escala de los coeficientes no depende
del tamaño de lote.
"""

from dataclasses import dataclass

import numpy as np

from d4am.errors import DataError, ShapeError
from d4am.netcore import NetworkSpec, ParamVector, backward, forward


@dataclass(frozen=True)
class RegBatch:
    noisy: np.ndarray
    clean: np.ndarray

    def __post_init__(self) -> None:
        noisy = np.asarray(self.noisy, dtype=np.float64)
        clean = np.asarray(self.clean, dtype=np.float64)
        if noisy.ndim != 2 or noisy.shape != clean.shape:
            raise ShapeError(f"RegBatch: formas distintas {noisy.shape} vs {clean.shape}")
        if noisy.shape[0] < 1:
            raise ShapeError("RegBatch vacío")
        object.__setattr__(self, "noisy", noisy)
        object.__setattr__(self, "clean", clean)


@dataclass(frozen=True)
class ClsBatch:
    noisy: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        noisy = np.asarray(self.noisy, dtype=np.float64)
        labels = np.asarray(self.labels)
        if noisy.ndim != 2 or labels.shape != (noisy.shape[0],):
            raise ShapeError(f"ClsBatch: {noisy.shape} filas vs {labels.shape} etiquetas")
        if noisy.shape[0] < 1:
            raise ShapeError("ClsBatch vacío")
        if not np.issubdtype(labels.dtype, np.integer):
            raise DataError(f"Etiquetas no enteras: dtype {labels.dtype}")
        object.__setattr__(self, "noisy", noisy)
        object.__setattr__(self, "labels", labels.astype(np.int64))


class ProxyModel:
    """Frozen classifier: a softmax-head network whose parameters are read-only."""

    def __init__(self, spec: NetworkSpec, params: ParamVector, name: str = "proxy", seed: int | None = None):
        if spec.output_activation != "softmax":
            raise DataError(f"El modelo {name} necesita cabeza softmax, tiene {spec.output_activation}")
        frozen = np.array(params, dtype=np.float64, copy=True)
        if frozen.shape != (spec.num_params,):
            raise ShapeError(f"{name}: {frozen.shape} parámetros, se esperaban {spec.num_params}")
        frozen.flags.writeable = False
        self._spec = spec
        self._params = frozen
        self.name = name
        self.seed = seed

    @property
    def spec(self) -> NetworkSpec:
        return self._spec

    @property
    def params(self) -> ParamVector:
        return self._params

    @property
    def num_classes(self) -> int:
        return self._spec.output_dim

    def logits(self, x: np.ndarray) -> np.ndarray:
        return forward(self._spec.with_output("identity"), self._params, x)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return forward(self._spec, self._params, x)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=-1)

    def __repr__(self) -> str:
        return f"ProxyModel(name={self.name!r}, dims={self._spec.layer_dims}, seed={self.seed})"


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean NLL over the batch and its gradient w.r.t. the logits."""
    n, k = logits.shape
    if np.any(labels < 0) or np.any(labels >= k):
        bad = labels[(labels < 0) | (labels >= k)]
        raise DataError(f"Etiquetas fuera de rango [0, {k}): {bad[:5].tolist()}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    loss = float(-log_p[rows, labels].mean())
    dlogits = np.exp(log_p)
    dlogits[rows, labels] -= 1.0
    return loss, dlogits / n


def reg_loss_and_grad(
    enhancer_spec: NetworkSpec, theta: ParamVector, batch: RegBatch
) -> tuple[float, ParamVector]:
    if batch.noisy.shape[1] != enhancer_spec.input_dim or batch.clean.shape[1] != enhancer_spec.output_dim:
        raise ShapeError(
            f"RegBatch de dimensión {batch.noisy.shape[1]} para realzador {enhancer_spec.layer_dims}"
        )
    enhanced = forward(enhancer_spec, theta, batch.noisy)
    residual = enhanced - batch.clean
    scale = residual.size
    loss = float(np.sum(residual * residual) / scale)
    grad, _ = backward(enhancer_spec, theta, batch.noisy, 2.0 * residual / scale)
    return loss, grad


def cls_loss_and_grad(
    enhancer_spec: NetworkSpec,
    theta: ParamVector,
    proxy: ProxyModel,
    batch: ClsBatch,
) -> tuple[float, ParamVector]:
    """Gradient flows through the frozen proxy into θ; proxy parameters are never touched."""
    if proxy.spec.input_dim != enhancer_spec.output_dim:
        raise ShapeError(
            f"Proxy con entrada {proxy.spec.input_dim} y realzador con salida {enhancer_spec.output_dim}"
        )
    enhanced = forward(enhancer_spec, theta, batch.noisy)
    logit_spec = proxy.spec.with_output("identity")
    logits = forward(logit_spec, proxy.params, enhanced)
    loss, dlogits = softmax_cross_entropy(logits, batch.labels)
    _, d_enhanced = backward(logit_spec, proxy.params, enhanced, dlogits)
    grad, _ = backward(enhancer_spec, theta, batch.noisy, d_enhanced)
    return loss, grad


def classifier_loss_and_grad(
    spec: NetworkSpec, params: ParamVector, features: np.ndarray, labels: np.ndarray
) -> tuple[float, ParamVector]:
    """Cross-entropy gradient w.r.t. a classifier's own parameters (proxy/evaluator training)."""
    logit_spec = spec.with_output("identity")
    logits = forward(logit_spec, params, features)
    loss, dlogits = softmax_cross_entropy(logits, np.asarray(labels, dtype=np.int64))
    grad, _ = backward(logit_spec, params, features, dlogits)
    return loss, grad
