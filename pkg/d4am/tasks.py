"""
Análogo sintético del pipeline de datos: generación de señales limpias por clase,
mezcla de ruido con SNR controlado, proxy congelado y familia de evaluadores
"no vistos".

Los prototipos de clase dependen solo de TaskSpec.seed, así que train/val/test
comparten la misma tarea aunque se generen con rngs distintos.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from d4am.errors import ConfigError, DataError, TrainingFailure
from d4am.netcore import NetworkSpec, ParamVector, forward, init_params
from d4am.objectives import ProxyModel, classifier_loss_and_grad

logger = logging.getLogger("d4am.tasks")

CLEAN_GENERATORS = ("gaussian_classes", "sinusoid_bank")
NOISE_GENERATORS = ("gaussian", "impulsive", "structured")


@dataclass(frozen=True)
class TaskSpec:
    feature_dim: int = 8
    num_classes: int = 4
    snr_range_db: tuple[float, float] = (-4.0, 6.0)
    clean_generator: str = "gaussian_classes"
    noise_generator: str = "gaussian"
    train_size: int = 2000
    val_size: int = 400
    test_size: int = 1000
    label_fraction: float = 1.0
    seed: int = 0
    class_separation: float = 3.0
    class_spread: float = 0.5

    def __post_init__(self) -> None:
        low, high = self.snr_range_db
        if low > high:
            raise ConfigError(f"SNR_LOW_DB ({low}) mayor que SNR_HIGH_DB ({high})")
        if self.feature_dim < 1 or self.num_classes < 2:
            raise ConfigError(f"FEATURE_DIM >= 1 y NUM_CLASSES >= 2: {self.feature_dim}, {self.num_classes}")
        for name in ("train_size", "val_size", "test_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name.upper()} debe ser >= 1")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ConfigError(f"LABEL_FRACTION debe estar en (0, 1]: {self.label_fraction}")
        if self.clean_generator not in CLEAN_GENERATORS:
            raise ConfigError(f"CLEAN_GENERATOR no válido: {self.clean_generator}. Opciones: {CLEAN_GENERATORS}")
        if self.noise_generator not in NOISE_GENERATORS:
            raise ConfigError(f"NOISE_GENERATOR no válido: {self.noise_generator}. Opciones: {NOISE_GENERATORS}")
        if self.class_separation <= 0 or self.class_spread < 0:
            raise ConfigError("CLASS_SEPARATION > 0 y CLASS_SPREAD >= 0")


@dataclass(frozen=True)
class TestCondition:
    """Evaluation condition: noise type and SNR range of a held-out test set."""

    __test__ = False

    name: str
    noise_generator: str
    snr_range_db: tuple[float, float]


def default_test_conditions(task: TaskSpec) -> tuple[TestCondition, ...]:
    """matched (in-domain), mismatched (other noise type), high_snr (10..20 dB)."""
    other = next(g for g in NOISE_GENERATORS if g != task.noise_generator)
    return (
        TestCondition("matched", task.noise_generator, task.snr_range_db),
        TestCondition("mismatched", other, task.snr_range_db),
        TestCondition("high_snr", task.noise_generator, (10.0, 20.0)),
    )


@dataclass(frozen=True)
class ClassifierSpec:
    name: str
    network: NetworkSpec
    seed: int


@dataclass
class Evaluator:
    name: str
    model: ProxyModel
    clean_error: float


@dataclass
class EvaluatorSet:
    evaluators: list[Evaluator] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.evaluators)

    def __iter__(self):
        return iter(self.evaluators)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.evaluators]


# ---------------------------------------------------------------------------
# Señal limpia y ruido
# ---------------------------------------------------------------------------


def _class_prototypes(spec: TaskSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 7919])
    if spec.clean_generator == "gaussian_classes":
        return spec.class_separation * rng.standard_normal((spec.num_classes, spec.feature_dim))
    # sinusoid_bank: one frequency per class, amplitude class_separation
    d = np.arange(spec.feature_dim)
    freqs = 0.5 + np.arange(spec.num_classes)
    return spec.class_separation * np.sin(2 * np.pi * np.outer(freqs, d) / spec.feature_dim + 0.3)


def gen_clean(spec: TaskSpec, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Class-conditional clean features; labels balanced within one sample."""
    if n < 1:
        raise DataError(f"n debe ser >= 1: {n}")
    labels = rng.permutation(np.arange(n) % spec.num_classes)
    protos = _class_prototypes(spec)
    if spec.clean_generator == "gaussian_classes":
        features = protos[labels] + spec.class_spread * rng.standard_normal((n, spec.feature_dim))
    else:
        gain = 1.0 + spec.class_spread * 0.2 * rng.standard_normal((n, 1))
        features = gain * protos[labels] + spec.class_spread * rng.standard_normal((n, spec.feature_dim))
    return features, labels.astype(np.int64)


def gen_noise(kind: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Unit-scale noise rows; every row has nonzero power."""
    if kind == "gaussian":
        return rng.standard_normal(shape)
    if kind == "impulsive":
        mask = rng.random(shape) < 0.15
        rows, cols = shape
        mask[np.arange(rows), rng.integers(0, cols, size=rows)] = True
        spikes = rng.laplace(0.0, 1.0, size=shape)
        spikes[spikes == 0.0] = 1.0
        return mask * spikes
    if kind == "structured":
        rows, cols = shape
        d = np.arange(cols)
        freq = rng.uniform(0.2, 1.5, size=(rows, 1))
        phase = rng.uniform(0, 2 * np.pi, size=(rows, 1))
        tone = np.sin(2 * np.pi * freq * d / cols + phase)
        return tone + 0.3 * rng.standard_normal(shape)
    raise ConfigError(f"Generador de ruido no válido: {kind}. Opciones: {NOISE_GENERATORS}")


def _power(x: np.ndarray) -> np.ndarray:
    return np.mean(np.square(x), axis=-1)


def _snr_scale(p_clean: np.ndarray, p_noise: np.ndarray, snr_db) -> np.ndarray:
    return np.sqrt(p_clean / (p_noise * 10.0 ** (np.asarray(snr_db, dtype=np.float64) / 10.0)))


def mix_noise(clean: np.ndarray, noise: np.ndarray, snr_db) -> np.ndarray:
    """
    clean + s*noise with s chosen so that 10*log10(P_clean / P_scaled_noise) == snr_db.
    A matrix is mixed row by row; snr_db is then a scalar or one value per row.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if clean.shape != noise.shape or clean.ndim not in (1, 2):
        raise DataError(f"mix_noise: formas {clean.shape} vs {noise.shape}")
    if clean.ndim == 2 and np.ndim(snr_db) and np.shape(snr_db) != (clean.shape[0],):
        raise DataError(f"mix_noise: {np.shape(snr_db)} valores de SNR para {clean.shape[0]} filas")
    p_clean = _power(clean)
    p_noise = _power(noise)
    if np.any(p_clean == 0.0) or np.any(p_noise == 0.0):
        raise DataError("mix_noise: potencia nula en señal limpia o ruido")
    scale = _snr_scale(p_clean, p_noise, snr_db)
    if clean.ndim == 2:
        scale = scale[:, None]
    return clean + scale * noise


def make_noisy(
    clean: np.ndarray,
    noise_generator: str,
    snr_range_db: tuple[float, float],
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Mix each row at an SNR drawn uniformly from the range. Returns (noisy, snr_db)."""
    snr = rng.uniform(snr_range_db[0], snr_range_db[1], size=clean.shape[0])
    noise = gen_noise(noise_generator, clean.shape, rng)
    return mix_noise(clean, noise, snr), snr


def subsample_labels(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices of the labeled subset; at least one sample."""
    k = max(1, int(round(n * fraction)))
    return np.sort(rng.choice(n, size=k, replace=False))


# ---------------------------------------------------------------------------
# Clasificadores congelados
# ---------------------------------------------------------------------------


def accuracy(model: ProxyModel, features: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(model.predict(features) == labels))


def _fit_classifier(
    cspec: ClassifierSpec,
    features: np.ndarray,
    labels: np.ndarray,
    rng: np.random.Generator,
    floor: float,
    lr: float,
    batch_size: int,
    min_steps: int,
    max_steps: int,
    check_every: int = 250,
) -> ProxyModel:
    spec = cspec.network
    if features.shape[0] < 1:
        raise DataError(f"{cspec.name}: conjunto de entrenamiento vacío")
    params = init_params(spec, cspec.seed)
    n = features.shape[0]
    bs = min(batch_size, n)
    acc = 0.0
    for step in range(1, max_steps + 1):
        idx = rng.integers(0, n, size=bs)
        _loss, grad = classifier_loss_and_grad(spec, params, features[idx], labels[idx])
        params -= lr * grad
        if step % check_every == 0 or step == max_steps:
            model = ProxyModel(spec, params, name=cspec.name, seed=cspec.seed)
            acc = accuracy(model, features, labels)
            if step >= min_steps and acc >= floor:
                logger.info("%s: precisión limpia %.4f tras %d pasos", cspec.name, acc, step)
                return model
    model = ProxyModel(spec, params, name=cspec.name, seed=cspec.seed)
    acc = accuracy(model, features, labels)
    if acc < floor:
        raise TrainingFailure(
            f"{cspec.name}: precisión limpia {acc:.4f} < umbral {floor:.4f} tras {max_steps} pasos"
        )
    return model


def train_proxy(
    cspec: ClassifierSpec,
    clean_dataset: tuple[np.ndarray, np.ndarray],
    rng: Optional[np.random.Generator] = None,
    floor: float = 0.95,
    lr: float = 0.1,
    batch_size: int = 64,
    min_steps: int = 1000,
    max_steps: int = 10000,
) -> ProxyModel:
    """Train on clean data, then freeze. Fails loudly if the floor is not met."""
    if rng is None:
        rng = np.random.default_rng(cspec.seed)
    features, labels = clean_dataset
    min_steps = min(min_steps, max_steps)
    return _fit_classifier(cspec, features, labels, rng, floor, lr, batch_size, min_steps, max_steps)


def train_evaluators(
    specs: list[ClassifierSpec],
    clean_dataset: tuple[np.ndarray, np.ndarray],
    rng: Optional[np.random.Generator] = None,
    proxy: Optional[ProxyModel] = None,
    floor: float = 0.95,
    heldout: Optional[tuple[np.ndarray, np.ndarray]] = None,
    **fit_kwargs,
) -> EvaluatorSet:
    """
    Each evaluator must differ from the proxy in architecture or seed.

    clean_error is measured on held-out clean data. Without `heldout`, the last
    fifth of clean_dataset is kept out of training for that.
    """
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError(f"Nombres de evaluador repetidos: {names}")
    for s in specs:
        if proxy is not None and s.network == proxy.spec and s.seed == proxy.seed:
            raise ConfigError(f"El evaluador {s.name} es idéntico al proxy (arquitectura y semilla)")
    if rng is None:
        rng = np.random.default_rng([s.seed for s in specs] or [0])
    features, labels = clean_dataset
    if heldout is None and specs:
        cut = features.shape[0] - max(1, features.shape[0] // 5)
        if cut < 1:
            raise DataError("train_evaluators: hacen falta al menos 2 muestras sin conjunto held-out")
        clean_dataset, heldout = (features[:cut], labels[:cut]), (features[cut:], labels[cut:])
    out = EvaluatorSet()
    for s in specs:
        model = train_proxy(s, clean_dataset, rng, floor=floor, **fit_kwargs)
        out.evaluators.append(Evaluator(s.name, model, clean_error(model, heldout)))
    return out


def clean_error(model: ProxyModel, clean_data: tuple[np.ndarray, np.ndarray]) -> float:
    features, labels = clean_data
    return 1.0 - accuracy(model, features, labels)


def enhance(enhancer_spec: Optional[NetworkSpec], theta: Optional[ParamVector], noisy: np.ndarray) -> np.ndarray:
    """theta None means no enhancement (identity), the NOIS arm."""
    if theta is None:
        return noisy
    return forward(enhancer_spec, theta, noisy)


def evaluate(
    theta_enhancer: Optional[ParamVector],
    evaluator_set: EvaluatorSet,
    noisy_test: tuple[np.ndarray, np.ndarray],
    enhancer_spec: Optional[NetworkSpec] = None,
) -> dict[str, float]:
    """Classification error rate per evaluator on enhanced test features."""
    features, labels = noisy_test
    enhanced = enhance(enhancer_spec, theta_enhancer, features)
    return {e.name: 1.0 - accuracy(e.model, enhanced, labels) for e in evaluator_set}


# ---------------------------------------------------------------------------
# Bundle de tarea y persistencia
# ---------------------------------------------------------------------------


@dataclass
class Split:
    clean: np.ndarray
    noisy: np.ndarray
    labels: np.ndarray
    snr_db: np.ndarray


@dataclass
class TaskBundle:
    """Everything a fine-tuning run needs besides its own configuration."""

    task: TaskSpec
    enhancer_spec: NetworkSpec
    reg_train: Split
    cls_train: Split
    val: Split
    tests: dict[str, Split]
    proxy: ProxyModel
    evaluators: EvaluatorSet
    init_theta: Optional[ParamVector] = None
    proxy_clean_error: float = math.nan

    def recognizer_set(self) -> EvaluatorSet:
        """Proxy first (seen), then unseen evaluators."""
        seen = Evaluator("proxy", self.proxy, self.proxy_clean_error)
        return EvaluatorSet([seen] + list(self.evaluators))

    def recognizers(self) -> list[tuple[str, ProxyModel]]:
        return [(e.name, e.model) for e in self.recognizer_set()]


def _split(task: TaskSpec, n: int, rng: np.random.Generator, noise: str, snr: tuple[float, float]) -> Split:
    clean, labels = gen_clean(task, n, rng)
    noisy, snr_db = make_noisy(clean, noise, snr, rng)
    return Split(clean, noisy, labels, snr_db)


def build_bundle(
    task: TaskSpec,
    enhancer_spec: NetworkSpec,
    proxy_spec: ClassifierSpec,
    evaluator_specs: list[ClassifierSpec],
    conditions: Optional[tuple[TestCondition, ...]] = None,
    floor: float = 0.95,
) -> TaskBundle:
    """
    Genera los splits, entrena proxy y evaluadores sobre datos limpios.
    label_fraction solo reduce el conjunto de clasificación; el de regresión queda completo.
    """
    if enhancer_spec.input_dim != task.feature_dim or enhancer_spec.output_dim != task.feature_dim:
        raise ConfigError(f"Realzador {enhancer_spec.layer_dims} incompatible con FEATURE_DIM={task.feature_dim}")
    seq = np.random.SeedSequence(task.seed)
    train_rng, cls_rng, val_rng, test_rng, clf_rng = (np.random.default_rng(s) for s in seq.spawn(5))

    reg_train = _split(task, task.train_size, train_rng, task.noise_generator, task.snr_range_db)
    keep = subsample_labels(task.train_size, task.label_fraction, cls_rng)
    cls_noisy, cls_snr = make_noisy(reg_train.clean[keep], task.noise_generator, task.snr_range_db, cls_rng)
    cls_train = Split(reg_train.clean[keep], cls_noisy, reg_train.labels[keep], cls_snr)
    val = _split(task, task.val_size, val_rng, task.noise_generator, task.snr_range_db)

    conditions = conditions or default_test_conditions(task)
    test_clean, test_labels = gen_clean(task, task.test_size, test_rng)
    tests = {}
    for cond in conditions:
        noisy, snr_db = make_noisy(test_clean, cond.noise_generator, cond.snr_range_db, test_rng)
        tests[cond.name] = Split(test_clean, noisy, test_labels, snr_db)

    clean_train = (reg_train.clean, reg_train.labels)
    clean_test = (test_clean, test_labels)
    proxy = train_proxy(proxy_spec, clean_train, clf_rng, floor=floor)
    evaluators = train_evaluators(
        evaluator_specs, clean_train, clf_rng, proxy=proxy, floor=floor, heldout=clean_test
    )
    logger.info(
        "bundle: %d reg / %d cls / %d val / %d test, %d evaluadores",
        task.train_size, len(keep), task.val_size, task.test_size, len(evaluators),
    )
    return TaskBundle(
        task, enhancer_spec, reg_train, cls_train, val, tests, proxy, evaluators,
        proxy_clean_error=clean_error(proxy, clean_test),
    )


def save_dataset(directory: Path, name: str, split: Split, task: TaskSpec) -> Path:
    """`<name>.<field>.npy` matrices plus a `<name>.json` sidecar (spec, seed, sizes)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for fname in ("clean", "noisy", "labels", "snr_db"):
        np.save(directory / f"{name}.{fname}.npy", getattr(split, fname), allow_pickle=False)
    sidecar = {
        "name": name,
        "task": asdict(task),
        "seed": task.seed,
        "rows": int(split.clean.shape[0]),
        "feature_dim": int(split.clean.shape[1]),
        "files": [f"{name}.{f}.npy" for f in ("clean", "noisy", "labels", "snr_db")],
    }
    meta = directory / f"{name}.json"
    meta.write_text(json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")
    return meta


def load_dataset(directory: Path, name: str) -> tuple[Split, dict]:
    directory = Path(directory)
    meta_path = directory / f"{name}.json"
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        arrays = {
            f: np.load(directory / f"{name}.{f}.npy", allow_pickle=False)
            for f in ("clean", "noisy", "labels", "snr_db")
        }
    except (OSError, json.JSONDecodeError, ValueError) as e:
        raise DataError(f"Dataset {name} ilegible en {directory}: {e}") from e
    if arrays["clean"].shape[0] != meta["rows"]:
        raise DataError(f"Dataset {name}: {arrays['clean'].shape[0]} filas, sidecar dice {meta['rows']}")
    return Split(**arrays), meta
