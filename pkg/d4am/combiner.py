"""
Combinador de objetivos: criterio C, coeficiente de calibración α_gclb, gradiente
calibrado g* y el coeficiente de prior sustituto α_srpr con su actualización
acumulada y recortada.

Funciones puras salvo `accumulate_and_update_alpha`, que devuelve un estado nuevo.
"""

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from d4am.errors import ConfigError
from d4am.netcore import ParamVector, _check_pair, dot, norm_sq

JOINT_MODES = ("CLSO", "SRPR", "GCLB", "D4AM", "FIXED_WEIGHT")
ADAPTIVE_MODES = ("SRPR", "D4AM")
CALIBRATED_MODES = ("GCLB", "D4AM")


@dataclass(frozen=True)
class CombinerConfig:
    beta: float = 0.05
    update_period: int = 16
    clamp_lo: float = -1.0
    clamp_hi: float = 1.0
    alpha_srpr_init: float = 1.0
    eps_guard: float = 1e-12

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ConfigError(f"BETA debe ser > 0: {self.beta}")
        if int(self.update_period) != self.update_period or self.update_period < 1:
            raise ConfigError(f"UPDATE_PERIOD debe ser un entero >= 1: {self.update_period}")
        if not self.clamp_lo < self.clamp_hi:
            raise ConfigError(f"CLAMP_LO ({self.clamp_lo}) debe ser menor que CLAMP_HI ({self.clamp_hi})")
        if not self.eps_guard > 0:
            raise ConfigError(f"EPS_GUARD debe ser > 0: {self.eps_guard}")
        if not math.isfinite(self.alpha_srpr_init):
            raise ConfigError(f"ALPHA_SRPR_INIT no finito: {self.alpha_srpr_init}")


@dataclass(frozen=True)
class CombinerState:
    alpha_srpr: float
    accum_alpha_grad: float = 0.0
    steps_since_alpha_update: int = 0

    @classmethod
    def initial(cls, cfg: CombinerConfig) -> "CombinerState":
        return cls(alpha_srpr=float(cfg.alpha_srpr_init))


class Coefficients(NamedTuple):
    """What one step of the combiner decided."""

    weight: float
    alpha_gclb: float
    alpha_srpr: float
    criterion: float
    reg_norm_sq: float
    alpha_grad: float


def criterion(g_cls: ParamVector, g_reg: ParamVector) -> float:
    return dot(g_cls, g_reg)


def _gclb_from(c: float, n: float, eps_guard: float) -> float:
    if n <= eps_guard or not c < 0.0:
        return 0.0
    return -c / n


def alpha_gclb(g_cls: ParamVector, g_reg: ParamVector, eps_guard: float = 1e-12) -> float:
    """-[C < 0] * C / ||g_reg||^2, zero when ||g_reg||^2 <= eps_guard."""
    return _gclb_from(criterion(g_cls, g_reg), norm_sq(g_reg), eps_guard)


def calibrate(
    g_cls: ParamVector, g_reg: ParamVector, eps_guard: float = 1e-12
) -> tuple[ParamVector, float]:
    """Projection of g_cls onto {g : <g, g_reg> >= 0}. Returns (g_star, alpha_gclb)."""
    a = alpha_gclb(g_cls, g_reg, eps_guard)
    if a == 0.0:
        return np.array(g_cls, dtype=np.float64, copy=True), 0.0
    return g_cls + a * g_reg, a


def alpha_srpr_grad(
    g_cls: ParamVector, g_reg: ParamVector, alpha_gclb: float, alpha_srpr: float
) -> float:
    """d/dα ||g_cls + (α_gclb - α) g_reg||^2 evaluated at α = alpha_srpr."""
    _check_pair(g_cls, g_reg)
    return -2.0 * dot(g_cls, g_reg) - 2.0 * (alpha_gclb - alpha_srpr) * norm_sq(g_reg)


def clamp_alpha_grad(g_alpha: float, cfg: CombinerConfig) -> float:
    return min(max(g_alpha, cfg.clamp_lo), cfg.clamp_hi)


def accumulate_and_update_alpha(
    state: CombinerState, g_alpha_clamped: float, cfg: CombinerConfig
) -> CombinerState:
    """
    Acumula el gradiente ya recortado; cada `update_period` llamadas aplica
    α ← α − β · media(acumulado) y vacía el acumulador. α_srpr no se restringe a [0, 1].
    """
    accum = state.accum_alpha_grad + g_alpha_clamped
    count = state.steps_since_alpha_update + 1
    if count < cfg.update_period:
        return replace(state, accum_alpha_grad=accum, steps_since_alpha_update=count)
    alpha = state.alpha_srpr - cfg.beta * (accum / cfg.update_period)
    return CombinerState(alpha_srpr=alpha, accum_alpha_grad=0.0, steps_since_alpha_update=0)


def update_coefficients(
    g_cls: ParamVector,
    g_reg: ParamVector,
    state: CombinerState,
    mode: str,
    cfg: CombinerConfig,
    fixed_weight: float = 0.0,
) -> tuple[Coefficients, CombinerState]:
    """
    Decide the L_reg weight for one joint step and advance the α_srpr machinery.

    D4AM uses α_gclb + α_srpr, GCLB α_gclb, SRPR α_srpr, CLSO 0, FIXED_WEIGHT a
    constant. α_srpr only moves in SRPR and D4AM; its gradient is taken at θ^t.
    """
    if mode not in JOINT_MODES:
        raise ConfigError(f"Modo no conjunto: {mode}. Opciones: {JOINT_MODES}")
    c = criterion(g_cls, g_reg)
    n = norm_sq(g_reg)
    a_gclb = _gclb_from(c, n, cfg.eps_guard) if mode in CALIBRATED_MODES else 0.0
    a_srpr = state.alpha_srpr

    g_alpha = 0.0
    new_state = state
    if mode in ADAPTIVE_MODES:
        if n > cfg.eps_guard:
            g_alpha = alpha_srpr_grad(g_cls, g_reg, a_gclb, a_srpr)
        new_state = accumulate_and_update_alpha(state, clamp_alpha_grad(g_alpha, cfg), cfg)

    if mode == "D4AM":
        weight = a_gclb + a_srpr
    elif mode == "GCLB":
        weight = a_gclb
    elif mode == "SRPR":
        weight = a_srpr
    elif mode == "FIXED_WEIGHT":
        weight = float(fixed_weight)
    else:
        weight = 0.0
    return Coefficients(weight, a_gclb, a_srpr, c, n, g_alpha), new_state
