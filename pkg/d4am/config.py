"""
Configuración de experimentos: fichero de texto plano KEY=VALUE (formato .env,
leído con python-dotenv) más valores por defecto tomados del entorno.

Claves desconocidas se rechazan; los errores nombran la clave afectada.
"""

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional

from dotenv import dotenv_values

from d4am.combiner import CombinerConfig
from d4am.errors import ConfigError
from d4am.netcore import NetworkSpec
from d4am.tasks import ClassifierSpec, TaskSpec, TestCondition, default_test_conditions
from d4am.trainer import EpsilonSchedule, TrainerConfig

ABLATION_MODES = ("NOIS", "INIT", "CLSO", "SRPR", "GCLB", "D4AM")
DEFAULT_GRID_WEIGHTS = (0.0, 0.1, 1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0)
TEST_CONDITION_NAMES = ("matched", "mismatched", "high_snr")


def get_default_jobs() -> int:
    """Workers for the run matrix. D4AM_JOBS, 1 by default."""
    raw = os.environ.get("D4AM_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def get_output_root() -> Path:
    raw = (os.environ.get("D4AM_OUTPUT_DIR") or "").strip()
    return Path(raw) if raw else Path("results")


def slow_tests_enabled() -> bool:
    return os.environ.get("D4AM_RUN_SLOW", "").strip().lower() in ("1", "true", "yes")


# ---------------------------------------------------------------------------
# Parsers por tipo de valor
# ---------------------------------------------------------------------------


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    return float(v)


def _str(v: str) -> str:
    return v.strip()


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"booleano no válido: {v!r}")


def _items(v: str) -> list[str]:
    return [p.strip() for p in v.split(",") if p.strip()]


def _int_list(v: str) -> list[int]:
    return [int(p) for p in _items(v)]


def _float_list(v: str) -> list[float]:
    return [float(p) for p in _items(v)]


def _str_list(v: str) -> list[str]:
    return _items(v)


def _hidden(v: str) -> list[int]:
    return [int(p) for p in _items(v)]


def _hidden_groups(v: str) -> list[list[int]]:
    return [_hidden(group) for group in v.split(";")]


SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    # tarea
    "FEATURE_DIM": (_int, 8),
    "NUM_CLASSES": (_int, 4),
    "SNR_LOW_DB": (_float, -4.0),
    "SNR_HIGH_DB": (_float, 6.0),
    "CLEAN_GENERATOR": (_str, "gaussian_classes"),
    "NOISE_GENERATOR": (_str, "gaussian"),
    "TRAIN_SIZE": (_int, 2000),
    "VAL_SIZE": (_int, 400),
    "TEST_SIZE": (_int, 1000),
    "LABEL_FRACTION": (_float, 1.0),
    "TASK_SEED": (_int, 0),
    "CLASS_SEPARATION": (_float, 3.0),
    "CLASS_SPREAD": (_float, 0.5),
    # redes
    "ENHANCER_HIDDEN": (_hidden, [32]),
    "ENHANCER_ACTIVATION": (_str, "tanh"),
    "PROXY_DIMS": (_hidden, [16]),
    "PROXY_ACTIVATION": (_str, "tanh"),
    "EVALUATOR_DIMS": (_hidden_groups, [[16], [32, 16], [8], []]),
    "EVALUATOR_ACTIVATIONS": (_str_list, ["relu", "tanh", "tanh", "identity"]),
    "ACCURACY_FLOOR": (_float, 0.95),
    # pre-entrenamiento
    "PRETRAIN_STEPS": (_int, 2000),
    "PRETRAIN_LR": (_float, 0.05),
    # ajuste fino
    "TOTAL_STEPS": (_int, 3000),
    "EPSILON": (_float, 1e-3),
    "EPSILON_FINAL": (_float, None),
    "LANGEVIN": (_bool, None),
    "LANGEVIN_TEMPERATURE": (_float, 1.0),
    "BATCH_SIZE_CLS": (_int, 16),
    "BATCH_SIZE_REG": (_int, 16),
    "EVAL_EVERY": (_int, 100),
    "GRAD_CLIP": (_float, None),
    # combinador
    "BETA": (_float, 0.05),
    "UPDATE_PERIOD": (_int, 16),
    "CLAMP_LO": (_float, -1.0),
    "CLAMP_HI": (_float, 1.0),
    "ALPHA_SRPR_INIT": (_float, 1.0),
    "EPS_GUARD": (_float, 1e-12),
    # harness
    "SEEDS": (_int_list, None),
    "MODES": (_str_list, list(ABLATION_MODES)),
    "GRID_WEIGHTS": (_float_list, list(DEFAULT_GRID_WEIGHTS)),
    "OUTPUT_DIR": (_str, None),
    "TEST_CONDITIONS": (_str_list, list(TEST_CONDITION_NAMES)),
    "JOBS": (_int, None),
}


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskSpec
    trainer: TrainerConfig
    pretrain: TrainerConfig
    enhancer_spec: NetworkSpec
    proxy_spec: ClassifierSpec
    evaluator_specs: tuple[ClassifierSpec, ...]
    ablation_modes: tuple[str, ...]
    grid_weights: tuple[float, ...]
    seeds: tuple[int, ...]
    output_dir: Path
    test_conditions: tuple[TestCondition, ...]
    jobs: int = 1
    accuracy_floor: float = 0.95
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("SEEDS: se necesita al menos una semilla")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"SEEDS: semillas duplicadas {list(self.seeds)}")
        if not self.ablation_modes and not self.grid_weights:
            raise ConfigError("MODES y GRID_WEIGHTS no pueden estar vacíos a la vez")
        for m in self.ablation_modes:
            if m not in ABLATION_MODES:
                raise ConfigError(f"MODES: modo no válido {m}. Opciones: {ABLATION_MODES}")
        if len(set(self.ablation_modes)) != len(self.ablation_modes):
            raise ConfigError(f"MODES: modos duplicados {list(self.ablation_modes)}")
        for w in self.grid_weights:
            if not w >= 0:
                raise ConfigError(f"GRID_WEIGHTS: pesos deben ser >= 0, recibido {w}")
        if self.jobs < 1:
            raise ConfigError(f"JOBS debe ser >= 1: {self.jobs}")
        if not 0.0 <= self.accuracy_floor <= 1.0:
            raise ConfigError(f"ACCURACY_FLOOR debe estar en [0, 1]: {self.accuracy_floor}")


def _parse_values(values: dict[str, Optional[str]], source: str) -> dict[str, Any]:
    unknown = sorted(set(values) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"{source}: claves desconocidas: {', '.join(unknown)}")
    parsed: dict[str, Any] = {}
    for key, (parser, default) in SCHEMA.items():
        raw = values.get(key)
        if raw is None or str(raw).strip() == "":
            parsed[key] = default
            continue
        try:
            parsed[key] = parser(str(raw))
        except ValueError as e:
            raise ConfigError(f"{source}: {key}: valor no válido {raw!r} ({e})") from e
    return parsed


def build_config(values: dict[str, Optional[str]], source: str = "<config>") -> ExperimentConfig:
    """Typed, validated ExperimentConfig from raw KEY=VALUE strings."""
    p = _parse_values(values, source)
    try:
        task = TaskSpec(
            feature_dim=p["FEATURE_DIM"],
            num_classes=p["NUM_CLASSES"],
            snr_range_db=(p["SNR_LOW_DB"], p["SNR_HIGH_DB"]),
            clean_generator=p["CLEAN_GENERATOR"],
            noise_generator=p["NOISE_GENERATOR"],
            train_size=p["TRAIN_SIZE"],
            val_size=p["VAL_SIZE"],
            test_size=p["TEST_SIZE"],
            label_fraction=p["LABEL_FRACTION"],
            seed=p["TASK_SEED"],
            class_separation=p["CLASS_SEPARATION"],
            class_spread=p["CLASS_SPREAD"],
        )
        d, k = task.feature_dim, task.num_classes
        enhancer = NetworkSpec.build([d, *p["ENHANCER_HIDDEN"], d], p["ENHANCER_ACTIVATION"])
        proxy = ClassifierSpec(
            "proxy",
            NetworkSpec.build([d, *p["PROXY_DIMS"], k], p["PROXY_ACTIVATION"], "softmax"),
            seed=task.seed * 1000 + 100,
        )
        groups, acts = p["EVALUATOR_DIMS"], p["EVALUATOR_ACTIVATIONS"]
        if len(acts) != len(groups):
            raise ConfigError(
                f"EVALUATOR_ACTIVATIONS: {len(acts)} activaciones para {len(groups)} evaluadores"
            )
        evaluators = tuple(
            ClassifierSpec(
                f"eval{i + 1}",
                NetworkSpec.build([d, *hidden, k], act, "softmax"),
                seed=task.seed * 1000 + 101 + i,
            )
            for i, (hidden, act) in enumerate(zip(groups, acts))
        )
        schedule = (
            EpsilonSchedule.constant(p["EPSILON"])
            if p["EPSILON_FINAL"] is None
            else EpsilonSchedule.linear_decay(p["EPSILON"], p["EPSILON_FINAL"])
        )
        combiner = CombinerConfig(
            beta=p["BETA"],
            update_period=p["UPDATE_PERIOD"],
            clamp_lo=p["CLAMP_LO"],
            clamp_hi=p["CLAMP_HI"],
            alpha_srpr_init=p["ALPHA_SRPR_INIT"],
            eps_guard=p["EPS_GUARD"],
        )
        trainer = TrainerConfig(
            mode="D4AM",
            total_steps=p["TOTAL_STEPS"],
            epsilon_schedule=schedule,
            langevin=p["LANGEVIN"],
            batch_size_cls=p["BATCH_SIZE_CLS"],
            batch_size_reg=p["BATCH_SIZE_REG"],
            combiner=combiner,
            eval_every=p["EVAL_EVERY"],
            langevin_temperature=p["LANGEVIN_TEMPERATURE"],
            grad_clip=p["GRAD_CLIP"],
        )
        pretrain = TrainerConfig(
            mode="INIT_PRETRAIN",
            total_steps=p["PRETRAIN_STEPS"],
            epsilon_schedule=EpsilonSchedule.constant(p["PRETRAIN_LR"]),
            batch_size_reg=p["BATCH_SIZE_REG"],
            grad_clip=p["GRAD_CLIP"],
        )
        known = {c.name: c for c in default_test_conditions(task)}
        for name in p["TEST_CONDITIONS"]:
            if name not in known:
                raise ConfigError(f"TEST_CONDITIONS: condición no válida {name}. Opciones: {TEST_CONDITION_NAMES}")
        conditions = tuple(known[name] for name in p["TEST_CONDITIONS"])
        if not conditions:
            raise ConfigError("TEST_CONDITIONS: se necesita al menos una condición")
        return ExperimentConfig(
            task=task,
            trainer=trainer,
            pretrain=pretrain,
            enhancer_spec=enhancer,
            proxy_spec=proxy,
            evaluator_specs=evaluators,
            ablation_modes=tuple(m.upper() for m in p["MODES"]),
            grid_weights=tuple(p["GRID_WEIGHTS"]),
            seeds=tuple(p["SEEDS"] or ()),
            output_dir=Path(p["OUTPUT_DIR"]) if p["OUTPUT_DIR"] else get_output_root(),
            test_conditions=conditions,
            jobs=p["JOBS"] if p["JOBS"] is not None else get_default_jobs(),
            accuracy_floor=p["ACCURACY_FLOOR"],
            raw={k: v for k, v in values.items() if v is not None},
        )
    except ConfigError as e:
        raise ConfigError(f"{source}: {e}") from e


def parse_config(path: Path, overrides: Optional[dict[str, str]] = None) -> ExperimentConfig:
    """`overrides` are raw KEY=VALUE strings applied on top of the file before validation."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Fichero de configuración no encontrado: {path}")
    values = dict(dotenv_values(path))
    values.update(overrides or {})
    return build_config(values, source=str(path))


def apply_overrides(
    cfg: ExperimentConfig,
    modes: Optional[list[str]] = None,
    seeds: Optional[list[int]] = None,
    output_dir: Optional[Path] = None,
    jobs: Optional[int] = None,
) -> ExperimentConfig:
    """CLI flags win over the file; the result is re-validated."""
    changes: dict[str, Any] = {}
    if modes is not None:
        changes["ablation_modes"] = tuple(m.upper() for m in modes)
    if seeds is not None:
        changes["seeds"] = tuple(seeds)
    if output_dir is not None:
        changes["output_dir"] = Path(output_dir)
    if jobs is not None:
        changes["jobs"] = jobs
    return replace(cfg, **changes) if changes else cfg
