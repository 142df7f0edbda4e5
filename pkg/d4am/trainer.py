"""
Protocolo en dos etapas: pre-entrenamiento solo con L_reg y ajuste fino conjunto
con la regla de actualización completa (coeficientes del combinador + ruido de
Langevin). Registra trazas por paso, evaluaciones periódicas y el checkpoint final.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd

from d4am.checkpoint import save_checkpoint
from d4am.combiner import JOINT_MODES, ADAPTIVE_MODES, CombinerConfig, CombinerState, update_coefficients
from d4am.errors import CheckpointError, ConfigError, NumericalFailure, RunError
from d4am.netcore import NetworkSpec, ParamVector, dot, init_params, norm_sq
from d4am.objectives import ClsBatch, ProxyModel, RegBatch, cls_loss_and_grad, reg_loss_and_grad
from d4am.tasks import TaskBundle

logger = logging.getLogger("d4am.trainer")

MODES = ("INIT_PRETRAIN",) + JOINT_MODES
SCHEDULES = ("constant", "linear_decay")


@dataclass(frozen=True)
class EpsilonSchedule:
    kind: str = "constant"
    eps0: float = 1e-3
    eps_final: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULES:
            raise ConfigError(f"Calendario de ε no válido: {self.kind}. Opciones: {SCHEDULES}")
        if not self.eps0 > 0:
            raise ConfigError(f"EPSILON debe ser > 0: {self.eps0}")
        if self.kind == "linear_decay" and not (self.eps_final is not None and self.eps_final > 0):
            raise ConfigError(f"EPSILON_FINAL debe ser > 0 con linear_decay: {self.eps_final}")

    @classmethod
    def constant(cls, eps: float) -> "EpsilonSchedule":
        return cls("constant", eps)

    @classmethod
    def linear_decay(cls, eps0: float, eps_final: float) -> "EpsilonSchedule":
        return cls("linear_decay", eps0, eps_final)


def epsilon_at(schedule: EpsilonSchedule, t: int, total: int) -> float:
    if schedule.kind == "constant" or total <= 1:
        return schedule.eps0
    frac = min(max(t / (total - 1), 0.0), 1.0)
    return schedule.eps0 + (schedule.eps_final - schedule.eps0) * frac


@dataclass(frozen=True)
class TrainerConfig:
    mode: str = "D4AM"
    total_steps: int = 3000
    epsilon_schedule: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    langevin: Optional[bool] = None
    seed: int = 0
    batch_size_cls: int = 16
    batch_size_reg: int = 16
    combiner: CombinerConfig = field(default_factory=CombinerConfig)
    eval_every: int = 100
    fixed_weight: float = 0.0
    langevin_temperature: float = 1.0
    grad_clip: Optional[float] = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"Modo no válido: {self.mode}. Opciones: {MODES}")
        if self.total_steps < 0:
            raise ConfigError(f"TOTAL_STEPS debe ser >= 0: {self.total_steps}")
        if self.batch_size_cls < 1 or self.batch_size_reg < 1:
            raise ConfigError("BATCH_SIZE_CLS y BATCH_SIZE_REG deben ser >= 1")
        if self.eval_every < 1:
            raise ConfigError(f"EVAL_EVERY debe ser >= 1: {self.eval_every}")
        if self.mode == "FIXED_WEIGHT" and not self.fixed_weight >= 0:
            raise ConfigError(f"FIXED_WEIGHT requiere w >= 0: {self.fixed_weight}")
        if not self.langevin_temperature > 0:
            raise ConfigError(f"LANGEVIN_TEMPERATURE debe ser > 0: {self.langevin_temperature}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError(f"GRAD_CLIP debe ser > 0: {self.grad_clip}")

    @property
    def langevin_enabled(self) -> bool:
        """Default: on for SRPR/D4AM, off elsewhere."""
        if self.langevin is None:
            return self.mode in ADAPTIVE_MODES
        return bool(self.langevin)

    @property
    def label(self) -> str:
        if self.mode == "FIXED_WEIGHT":
            return f"W={self.fixed_weight:g}"
        return self.mode


class StepRecord(NamedTuple):
    step: int
    epsilon: float
    cls_loss: float
    reg_loss: float
    alpha_gclb: float
    alpha_srpr: float
    criterion: float
    reg_norm_sq: float
    weight: float
    calibrated_inner: float
    calibrated_norm: float
    noise_applied: bool


@dataclass
class RunReport:
    label: str
    seed: int
    steps: list[StepRecord] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    checkpoint: Optional[str] = None
    failure: Optional[str] = None
    final_theta: Optional[np.ndarray] = field(default=None, repr=False)

    def steps_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.steps, columns=StepRecord._fields)

    def evals_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.evals)


def langevin_noise(dim: int, epsilon_t: float, rng: np.random.Generator) -> ParamVector:
    """η ~ N(0, 2 ε_t) i.i.d. per coordinate."""
    if not epsilon_t > 0:
        raise ConfigError(f"epsilon_t debe ser > 0: {epsilon_t}")
    return rng.normal(0.0, math.sqrt(2.0 * epsilon_t), size=dim)


def clip_norm(v: ParamVector, max_norm: Optional[float]) -> ParamVector:
    if max_norm is None:
        return v
    n = math.sqrt(norm_sq(v))
    return v * (max_norm / n) if n > max_norm else v


def _require_finite(step: int, **arrays) -> None:
    for name, value in arrays.items():
        if not np.all(np.isfinite(value)):
            raise NumericalFailure(f"Valor no finito en {name} en el paso {step}", step=step)


def joint_step(
    enhancer_spec: NetworkSpec,
    theta: ParamVector,
    proxy: ProxyModel,
    reg_batch: RegBatch,
    cls_batch: ClsBatch,
    state: CombinerState,
    cfg: TrainerConfig,
    t: int,
    rng: np.random.Generator,
    temperature: float = 1.0,
) -> tuple[ParamVector, CombinerState, StepRecord]:
    """
    θ^{t+1} = θ^t − ε_t (g_cls + w · g_reg) + η_t, con w según el modo.
    Los gradientes de α_srpr se toman en θ^t.
    """
    if cfg.mode not in JOINT_MODES:
        raise ConfigError(f"joint_step necesita un modo conjunto, recibido {cfg.mode}")
    cls_loss, g_cls = cls_loss_and_grad(enhancer_spec, theta, proxy, cls_batch)
    reg_loss, g_reg = reg_loss_and_grad(enhancer_spec, theta, reg_batch)
    _require_finite(t, g_cls=g_cls, g_reg=g_reg, losses=np.array([cls_loss, reg_loss]))

    coeffs, new_state = update_coefficients(
        g_cls, g_reg, state, cfg.mode, cfg.combiner, cfg.fixed_weight
    )
    g_star = g_cls + coeffs.alpha_gclb * g_reg if coeffs.alpha_gclb else g_cls
    direction = clip_norm(g_cls + coeffs.weight * g_reg, cfg.grad_clip)
    eps = epsilon_at(cfg.epsilon_schedule, t, cfg.total_steps)
    new_theta = theta - eps * direction
    noisy = cfg.langevin_enabled
    if noisy:
        new_theta = new_theta + langevin_noise(theta.shape[0], eps * temperature, rng)
    _require_finite(t, theta=new_theta)

    record = StepRecord(
        step=t,
        epsilon=eps,
        cls_loss=cls_loss,
        reg_loss=reg_loss,
        alpha_gclb=coeffs.alpha_gclb,
        alpha_srpr=coeffs.alpha_srpr,
        criterion=coeffs.criterion,
        reg_norm_sq=coeffs.reg_norm_sq,
        weight=coeffs.weight,
        calibrated_inner=dot(g_star, g_reg),
        calibrated_norm=math.sqrt(norm_sq(g_star)),
        noise_applied=noisy,
    )
    return new_theta, new_state, record


class PretrainResult(NamedTuple):
    theta: ParamVector
    losses: list[float]


def _batch_indices(n: int, size: int, rng: np.random.Generator) -> Optional[np.ndarray]:
    """None means the full set (deterministic full-batch step)."""
    if size >= n:
        return None
    return rng.integers(0, n, size=size)


def pretrain_with_trace(
    enhancer_spec: NetworkSpec,
    dataset_reg: tuple[np.ndarray, np.ndarray],
    cfg: TrainerConfig,
    theta0: Optional[ParamVector] = None,
) -> PretrainResult:
    """Plain gradient descent on L_reg: no noise, no α machinery."""
    noisy, clean = dataset_reg
    theta = init_params(enhancer_spec, cfg.seed) if theta0 is None else np.array(theta0, dtype=np.float64)
    rng = np.random.default_rng([cfg.seed, 1])
    n = noisy.shape[0]
    losses: list[float] = []
    for t in range(cfg.total_steps):
        idx = _batch_indices(n, cfg.batch_size_reg, rng)
        batch = RegBatch(noisy, clean) if idx is None else RegBatch(noisy[idx], clean[idx])
        loss, grad = reg_loss_and_grad(enhancer_spec, theta, batch)
        _require_finite(t, g_reg=grad, loss=np.array([loss]))
        theta = theta - epsilon_at(cfg.epsilon_schedule, t, cfg.total_steps) * clip_norm(grad, cfg.grad_clip)
        losses.append(loss)
    if losses:
        logger.info("pretrain seed=%d: L_reg %.5f → %.5f en %d pasos", cfg.seed, losses[0], losses[-1], len(losses))
    return PretrainResult(theta, losses)


def pretrain(
    enhancer_spec: NetworkSpec,
    dataset_reg: tuple[np.ndarray, np.ndarray],
    cfg: TrainerConfig,
    theta0: Optional[ParamVector] = None,
) -> ParamVector:
    if cfg.mode != "INIT_PRETRAIN":
        raise ConfigError(f"pretrain requiere modo INIT_PRETRAIN, recibido {cfg.mode}")
    return pretrain_with_trace(enhancer_spec, dataset_reg, cfg, theta0).theta


def evaluate_validation(bundle: TaskBundle, theta: ParamVector, step: int) -> dict:
    """Validation cls loss under every recognizer (proxy included) and validation L_reg."""
    spec = bundle.enhancer_spec
    val = bundle.val
    row: dict = {"step": step}
    cls_batch = ClsBatch(val.noisy, val.labels)
    for name, model in bundle.recognizers():
        loss, _ = cls_loss_and_grad(spec, theta, model, cls_batch)
        row[f"val_cls_{name}"] = loss
    row["val_reg"], _ = reg_loss_and_grad(spec, theta, RegBatch(val.noisy, val.clean))
    return row


def run(
    cfg: TrainerConfig,
    task_bundle: TaskBundle,
    checkpoint_path: Optional[Path] = None,
) -> RunReport:
    """
    Ajuste fino de `total_steps` pasos desde `task_bundle.init_theta`.
    Mini-lotes de T_cls y T_reg independientes en cada paso.
    """
    if cfg.mode not in JOINT_MODES:
        raise ConfigError(f"run necesita un modo conjunto, recibido {cfg.mode}")
    spec = task_bundle.enhancer_spec
    theta = (
        init_params(spec, cfg.seed)
        if task_bundle.init_theta is None
        else np.array(task_bundle.init_theta, dtype=np.float64)
    )
    cls_split, reg_split = task_bundle.cls_train, task_bundle.reg_train
    temperature = cfg.langevin_temperature
    batch_seq, noise_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    batch_rng, noise_rng = np.random.default_rng(batch_seq), np.random.default_rng(noise_seq)
    state = CombinerState.initial(cfg.combiner)
    report = RunReport(label=cfg.label, seed=cfg.seed)

    report.evals.append(evaluate_validation(task_bundle, theta, 0))
    n_cls, n_reg = cls_split.noisy.shape[0], reg_split.noisy.shape[0]
    for t in range(cfg.total_steps):
        ci = batch_rng.integers(0, n_cls, size=cfg.batch_size_cls)
        ri = batch_rng.integers(0, n_reg, size=cfg.batch_size_reg)
        try:
            theta, state, record = joint_step(
                spec,
                theta,
                task_bundle.proxy,
                RegBatch(reg_split.noisy[ri], reg_split.clean[ri]),
                ClsBatch(cls_split.noisy[ci], cls_split.labels[ci]),
                state,
                cfg,
                t,
                noise_rng,
                temperature,
            )
        except NumericalFailure as e:
            report.failure = f"numerical failure at step {t}: {e}"
            e.report = report
            logger.error("%s seed=%d: %s", cfg.label, cfg.seed, report.failure)
            raise
        report.steps.append(record)
        if (t + 1) % cfg.eval_every == 0 or t + 1 == cfg.total_steps:
            report.evals.append(evaluate_validation(task_bundle, theta, t + 1))

    if checkpoint_path is not None:
        try:
            report.checkpoint = str(save_checkpoint(theta, checkpoint_path))
        except CheckpointError as e:
            report.failure = f"checkpoint write failed: {e}"
            raise RunError(str(e), report=report) from e
    if report.steps:
        last = report.steps[-1]
        logger.info(
            "%s seed=%d: %d pasos, L_cls=%.4f L_reg=%.4f α_srpr=%.4f",
            cfg.label, cfg.seed, len(report.steps), last.cls_loss, last.reg_loss, last.alpha_srpr,
        )
    report.final_theta = theta
    return report


def finetune_config(base: TrainerConfig, mode: str, seed: int, fixed_weight: float = 0.0) -> TrainerConfig:
    return replace(base, mode=mode, seed=seed, fixed_weight=fixed_weight)
