"""
Harness de experimentos: matriz de ablación (NOIS/INIT/CLSO/SRPR/GCLB/D4AM),
grid search de pesos fijos, estudio de sobreajuste con pocas etiquetas,
agregación multi-semilla y emisión de informes (CSV + JSON).

Cada celda (modo, semilla) es independiente: se ejecutan en un pool acotado de
hilos y los resultados se ordenan según el plan, no según el orden de llegada.
"""

import json
import logging
import math
import re
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from d4am.checkpoint import save_checkpoint
from d4am.config import ExperimentConfig
from d4am.errors import CheckpointError, D4AMError, NumericalFailure, RunError, TrainingFailure
from d4am.journal import RunJournal
from d4am.netcore import ParamVector
from d4am.tasks import TaskBundle, build_bundle, evaluate
from d4am.trainer import RunReport, finetune_config, pretrain, run

logger = logging.getLogger("d4am.harness")

SEEN = "proxy"
MEAN_UNSEEN = "mean_unseen"
BEST_K = 7
ALPHA_TAIL = 0.2


@dataclass(frozen=True)
class Cell:
    label: str
    mode: str
    seed: int
    weight: Optional[float] = None

    @property
    def key(self) -> str:
        return f"{self.label}/seed{self.seed}"


@dataclass
class CellResult:
    cell: Cell
    status: str = "ok"
    errors: dict[tuple[str, str], float] = field(default_factory=dict)
    report: Optional[RunReport] = None
    failure: Optional[str] = None
    failure_kind: Optional[str] = None


@dataclass
class AggregateReport:
    kind: str
    primary_condition: str
    recognizers: list[str]
    labels: list[str]
    raw: pd.DataFrame
    summary: pd.DataFrame
    results: list[CellResult]
    best_k: Optional[float] = None
    grid_means: dict[str, float] = field(default_factory=dict)
    alpha_stability: list[dict] = field(default_factory=list)
    overfit: list[dict] = field(default_factory=list)
    incidents: list[dict] = field(default_factory=list)

    @property
    def failures(self) -> list[dict]:
        return [
            {"cell": r.cell.key, "kind": r.failure_kind, "message": r.failure}
            for r in self.results
            if r.status != "ok"
        ]

    def mean_unseen(self, label: str, condition: Optional[str] = None) -> float:
        condition = condition or self.primary_condition
        rows = self.summary[
            (self.summary["label"] == label)
            & (self.summary["condition"] == condition)
            & (self.summary["recognizer"] == MEAN_UNSEEN)
        ]
        return float(rows["mean"].iloc[0]) if len(rows) else math.nan


# ---------------------------------------------------------------------------
# Plan
# ---------------------------------------------------------------------------


def _weight_label(w: float) -> str:
    return f"W={w:g}"


def plan_runs(cfg: ExperimentConfig, ablation: bool = True, grid: bool = False) -> list[Cell]:
    cells: list[Cell] = []
    if ablation:
        for mode in cfg.ablation_modes:
            cells.extend(Cell(mode, mode, s) for s in cfg.seeds)
    if grid:
        for w in cfg.grid_weights:
            cells.extend(Cell(_weight_label(w), "FIXED_WEIGHT", s, w) for s in cfg.seeds)
    return cells


def describe_plan(cfg: ExperimentConfig, cells: list[Cell]) -> str:
    """Human-readable run matrix for --dry-run."""
    seeds_needing_init = sorted({c.seed for c in cells if c.mode != "NOIS"})
    lines = [
        f"tarea: D={cfg.task.feature_dim} K={cfg.task.num_classes} SNR={cfg.task.snr_range_db} "
        f"ruido={cfg.task.noise_generator} label_fraction={cfg.task.label_fraction}",
        f"realzador: {cfg.enhancer_spec.layer_dims} ({cfg.enhancer_spec.num_params} parámetros)",
        f"proxy: {cfg.proxy_spec.network.layer_dims}; evaluadores: "
        + ", ".join(f"{s.name}{s.network.layer_dims}" for s in cfg.evaluator_specs),
        f"condiciones de test: {', '.join(c.name for c in cfg.test_conditions)}",
        f"pre-entrenamientos (INIT compartido): {len(seeds_needing_init)} → semillas {seeds_needing_init}",
        f"celdas: {len(cells)} (jobs={cfg.jobs}, pasos de ajuste fino={cfg.trainer.total_steps})",
    ]
    lines.extend(f"  {c.key}" for c in cells)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Ejecución
# ---------------------------------------------------------------------------


class ExperimentRunner:
    """Owns the shared task bundle and the per-seed INIT checkpoints."""

    def __init__(self, cfg: ExperimentConfig, journal: Optional[RunJournal] = None, progress: bool = False):
        self.cfg = cfg
        self.journal = journal
        self.progress = progress
        self._bundle: Optional[TaskBundle] = None
        self._init: dict[int, ParamVector] = {}
        self._init_errors: dict[int, BaseException] = {}
        self._lock = threading.Lock()
        self._seed_locks: dict[int, threading.Lock] = {}

    def _log(self, msg: str, level: str = "INFO") -> None:
        logger.log(logging.getLevelName(level), msg)
        if self.journal is not None:
            self.journal.log(msg, level)

    @property
    def bundle(self) -> TaskBundle:
        with self._lock:
            if self._bundle is None:
                cfg = self.cfg
                self._log("Construyendo tarea, proxy y evaluadores")
                self._bundle = build_bundle(
                    cfg.task,
                    cfg.enhancer_spec,
                    cfg.proxy_spec,
                    list(cfg.evaluator_specs),
                    cfg.test_conditions,
                    floor=cfg.accuracy_floor,
                )
            return self._bundle

    def init_theta(self, seed: int) -> ParamVector:
        """Pretrain once per seed; later callers reuse the checkpoint."""
        with self._lock:
            seed_lock = self._seed_locks.setdefault(seed, threading.Lock())
        with seed_lock:
            if seed in self._init_errors:
                raise self._init_errors[seed]
            if seed not in self._init:
                bundle = self.bundle
                try:
                    theta = pretrain(
                        bundle.enhancer_spec,
                        (bundle.reg_train.noisy, bundle.reg_train.clean),
                        replace(self.cfg.pretrain, seed=seed),
                    )
                    save_checkpoint(theta, self.cfg.output_dir / "checkpoints" / f"init_seed{seed}.ckpt")
                except D4AMError as e:
                    self._init_errors[seed] = e
                    raise
                self._init[seed] = theta
                self._log(f"INIT seed={seed}: checkpoint guardado")
            return self._init[seed]

    def score(self, theta: Optional[ParamVector]) -> dict[tuple[str, str], float]:
        """Error rate per (test condition, recognizer); theta None is the NOIS arm."""
        bundle = self.bundle
        recognizers = bundle.recognizer_set()
        out: dict[tuple[str, str], float] = {}
        for cond in self.cfg.test_conditions:
            split = bundle.tests[cond.name]
            errors = evaluate(theta, recognizers, (split.noisy, split.labels), bundle.enhancer_spec)
            out.update(((cond.name, name), err) for name, err in errors.items())
        return out

    def run_cell(self, cell: Cell) -> CellResult:
        result = CellResult(cell)
        try:
            if cell.mode == "NOIS":
                result.errors = self.score(None)
                return result
            theta0 = self.init_theta(cell.seed)
            if cell.mode == "INIT":
                result.errors = self.score(theta0)
                return result
            tcfg = finetune_config(self.cfg.trainer, cell.mode, cell.seed, cell.weight or 0.0)
            ckpt = self.cfg.output_dir / "checkpoints" / f"{_slug(cell.label)}_seed{cell.seed}.ckpt"
            report = run(tcfg, replace(self.bundle, init_theta=theta0), checkpoint_path=ckpt)
            result.report = report
            result.errors = self.score(report.final_theta)
        except NumericalFailure as e:
            self._fail(result, "numerical", e)
            result.report = e.report
        except (RunError, CheckpointError) as e:
            self._fail(result, "io", e)
            result.report = getattr(e, "report", None)
        except TrainingFailure as e:
            self._fail(result, "training", e)
        except Exception as e:
            self._fail(result, "error", e)
        return result

    def _fail(self, result: CellResult, kind: str, exc: BaseException) -> None:
        result.status = "failed"
        result.failure_kind = kind
        result.failure = str(exc)
        if self.journal is not None:
            self.journal.incident(kind, f"{result.cell.key}: {exc}", exc=exc, cell=result.cell.key)
        logger.error("celda %s fallida (%s): %s", result.cell.key, kind, exc)

    def execute(self, cells: list[Cell]) -> list[CellResult]:
        """Bounded pool; results come back in plan order."""
        self.bundle
        results: dict[Cell, CellResult] = {}
        total = len(cells)
        failed = 0
        with ThreadPoolExecutor(max_workers=self.cfg.jobs) as pool, tqdm(
            total=total, desc="celdas", disable=not self.progress, leave=False
        ) as bar:
            futures = {pool.submit(self.run_cell, c): c for c in cells}
            for fut in as_completed(futures):
                cell = futures[fut]
                res = fut.result()
                results[cell] = res
                failed += res.status != "ok"
                bar.update(1)
                if self.journal is not None:
                    self.journal.write_progress(len(results), total, failed, cell.key)
                    self.journal.log(f"celda {cell.key}: {res.status}")
        return [results[c] for c in cells]


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "", label.replace("=", "")).lower()


# ---------------------------------------------------------------------------
# Agregación
# ---------------------------------------------------------------------------


def raw_frame(results: list[CellResult]) -> pd.DataFrame:
    rows = []
    for r in results:
        if r.status != "ok":
            continue
        for (condition, recognizer), err in r.errors.items():
            rows.append(
                {
                    "label": r.cell.label,
                    "mode": r.cell.mode,
                    "weight": r.cell.weight,
                    "seed": r.cell.seed,
                    "condition": condition,
                    "recognizer": recognizer,
                    "seen": recognizer == SEEN,
                    "error": err,
                }
            )
    return pd.DataFrame(
        rows, columns=["label", "mode", "weight", "seed", "condition", "recognizer", "seen", "error"]
    )


def aggregate(raw: pd.DataFrame) -> pd.DataFrame:
    """
    Mean and population std across seeds per (label, condition, recognizer), plus
    a `mean_unseen` pseudo-recognizer: per seed, the mean over unseen recognizers.
    Pure function of the raw table.
    """
    cols = ["label", "condition", "recognizer", "mean", "std", "n"]
    if raw.empty:
        return pd.DataFrame(columns=cols)
    unseen = raw[~raw["seen"].astype(bool)]
    per_seed = (
        unseen.groupby(["label", "seed", "condition"], sort=False)["error"].mean().reset_index()
    )
    per_seed["recognizer"] = MEAN_UNSEEN
    stacked = pd.concat(
        [raw[["label", "seed", "condition", "recognizer", "error"]], per_seed], ignore_index=True
    )
    grouped = stacked.groupby(["label", "condition", "recognizer"], sort=False)["error"]
    summary = grouped.agg(mean="mean", std=lambda s: float(np.std(s.to_numpy(), ddof=0)), n="count")
    return summary.reset_index()[cols]


def best_k_average(per_weight_means: dict[str, float], k: int = BEST_K) -> Optional[float]:
    """Average of the k lowest per-weight mean errors (all of them if fewer than k)."""
    values = sorted(v for v in per_weight_means.values() if not math.isnan(v))
    if not values:
        return None
    top = values[:k]
    return float(sum(top) / len(top))


def alpha_stability(results: list[CellResult], tail: float = ALPHA_TAIL) -> list[dict]:
    """Mean/std of α_srpr over the final `tail` fraction of steps, SRPR and D4AM cells."""
    out = []
    for r in results:
        if r.report is None or r.cell.mode not in ("SRPR", "D4AM") or not r.report.steps:
            continue
        alphas = np.array([s.alpha_srpr for s in r.report.steps])
        start = int(math.floor(len(alphas) * (1.0 - tail)))
        window = alphas[start:]
        mean = float(np.mean(window))
        std = float(np.std(window))
        out.append(
            {
                "cell": r.cell.key,
                "mode": r.cell.mode,
                "seed": r.cell.seed,
                "alpha_mean": mean,
                "alpha_std": std,
                "relative_std": std / abs(mean) if mean != 0 else math.inf,
                "alpha_final": float(alphas[-1]),
            }
        )
    return out


def _assemble(kind: str, cfg: ExperimentConfig, runner: ExperimentRunner, results: list[CellResult]) -> AggregateReport:
    raw = raw_frame(results)
    summary = aggregate(raw)
    labels = list(dict.fromkeys(r.cell.label for r in results))
    keys = {r.cell.key for r in results}
    incidents = [i for i in runner.journal.incidents if i.get("cell") in keys] if runner.journal else []
    agg = AggregateReport(
        kind=kind,
        primary_condition=cfg.test_conditions[0].name,
        recognizers=[name for name, _m in runner.bundle.recognizers()],
        labels=labels,
        raw=raw,
        summary=summary,
        results=results,
        alpha_stability=alpha_stability(results),
        incidents=incidents,
    )
    grid_labels = [l for l in labels if l.startswith("W=")]
    if grid_labels:
        agg.grid_means = {l: agg.mean_unseen(l) for l in grid_labels}
        agg.best_k = best_k_average(agg.grid_means)
    return agg


def run_ablation(cfg: ExperimentConfig, runner: Optional[ExperimentRunner] = None) -> AggregateReport:
    runner = runner or ExperimentRunner(cfg)
    cells = plan_runs(cfg, ablation=True, grid=False)
    logger.info("ablación: %d celdas", len(cells))
    return _assemble("ablation", cfg, runner, runner.execute(cells))


def run_grid_search(cfg: ExperimentConfig, runner: Optional[ExperimentRunner] = None) -> AggregateReport:
    if not cfg.grid_weights:
        raise D4AMError("GRID_WEIGHTS vacío: no hay grid search que ejecutar")
    runner = runner or ExperimentRunner(cfg)
    cells = plan_runs(cfg, ablation=False, grid=True)
    logger.info("grid search: %d celdas", len(cells))
    return _assemble("grid", cfg, runner, runner.execute(cells))


def overfit_curve_summary(report: RunReport, column: str = f"val_cls_{SEEN}") -> dict:
    """Minimum over the trajectory, final value and relative rise of a validation curve."""
    curve = [row[column] for row in report.evals]
    lowest = float(min(curve))
    final = float(curve[-1])
    return {
        "min": lowest,
        "final": final,
        "step_of_min": int(report.evals[int(np.argmin(curve))]["step"]),
        "relative_rise": (final - lowest) / lowest if lowest > 0 else math.inf,
    }


def run_overfit_study(cfg: ExperimentConfig, runner: Optional[ExperimentRunner] = None) -> AggregateReport:
    """CLSO vs D4AM with the configured label fraction; validation proxy-loss curves per seed."""
    study_cfg = replace(cfg, ablation_modes=("CLSO", "D4AM"))
    runner = runner or ExperimentRunner(study_cfg)
    cells = plan_runs(study_cfg, ablation=True, grid=False)
    results = runner.execute(cells)
    agg = _assemble("overfit", study_cfg, runner, results)
    for r in results:
        if r.report is None or r.status != "ok":
            continue
        row = {"label": r.cell.label, "seed": r.cell.seed, "label_fraction": cfg.task.label_fraction}
        row.update(overfit_curve_summary(r.report))
        agg.overfit.append(row)
    return agg


# ---------------------------------------------------------------------------
# Emisión
# ---------------------------------------------------------------------------


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, lineterminator="\n")


def _clean(v):
    if isinstance(v, float) and (math.isnan(v) or math.isinf(v)):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_clean(x) for x in v]
    return v


def condition_table(agg: AggregateReport, condition: str, stat: str = "mean") -> pd.DataFrame:
    """Rows = labels, columns = recognizers (+ mean_unseen), in plan order."""
    sub = agg.summary[agg.summary["condition"] == condition]
    if sub.empty:
        return pd.DataFrame(columns=["label"])
    table = sub.pivot(index="label", columns="recognizer", values=stat)
    order = [l for l in agg.labels if l in table.index]
    columns = [c for c in agg.recognizers + [MEAN_UNSEEN] if c in table.columns]
    return table.loc[order, columns].reset_index()


def emit_reports(agg: AggregateReport, output_dir: Path) -> list[Path]:
    """CSV tables + JSON summary + raw per-run traces. No timestamps: same input, same bytes."""
    out = Path(output_dir)
    written: list[Path] = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        prefix = f"{agg.kind}_"

        path = out / f"{prefix}raw_errors.csv"
        _write_csv(agg.raw, path)
        written.append(path)
        path = out / f"{prefix}summary.csv"
        _write_csv(agg.summary, path)
        written.append(path)
        for condition in dict.fromkeys(agg.summary["condition"]):
            for stat in ("mean", "std"):
                path = out / f"{prefix}table_{condition}_{stat}.csv"
                _write_csv(condition_table(agg, condition, stat), path)
                written.append(path)
        if agg.grid_means:
            grid = pd.DataFrame(
                {"label": list(agg.grid_means), "mean_unseen": list(agg.grid_means.values())}
            )
            path = out / f"{prefix}grid.csv"
            _write_csv(grid, path)
            written.append(path)
        if agg.overfit:
            path = out / f"{prefix}overfit.csv"
            _write_csv(pd.DataFrame(agg.overfit), path)
            written.append(path)

        traces = out / "traces"
        traces.mkdir(exist_ok=True)
        for r in agg.results:
            if r.report is None:
                continue
            stem = f"{prefix}{_slug(r.cell.label)}_seed{r.cell.seed}"
            path = traces / f"{stem}_steps.csv"
            _write_csv(r.report.steps_frame(), path)
            written.append(path)
            path = traces / f"{stem}_evals.csv"
            _write_csv(r.report.evals_frame(), path)
            written.append(path)

        summary = {
            "kind": agg.kind,
            "primary_condition": agg.primary_condition,
            "recognizers": agg.recognizers,
            "seen_recognizer": SEEN,
            "labels": agg.labels,
            "mean_unseen": {l: agg.mean_unseen(l) for l in agg.labels},
            "best_k": {"k": BEST_K, "average": agg.best_k} if agg.grid_means else None,
            "grid_means": agg.grid_means,
            "alpha_stability": agg.alpha_stability,
            "overfit": agg.overfit,
            "failures": agg.failures,
            "incidents": len(agg.incidents),
        }
        path = out / f"{prefix}summary.json"
        path.write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
    except OSError as e:
        raise RunError(f"No se pudieron escribir los informes en {out}: {e}") from e
    logger.info("%d ficheros escritos en %s", len(written), out)
    return written
