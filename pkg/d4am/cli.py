"""
CLI del banco de pruebas D4AM. Punto de entrada: d4am.

Comandos: run (ablación, grid search de pesos fijos y estudio de sobreajuste).
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from d4am import __version__
from d4am.config import ABLATION_MODES, ExperimentConfig, apply_overrides, build_config, parse_config
from d4am.errors import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_TRAINING,
    EXIT_UNEXPECTED,
    D4AMError,
)
from d4am.harness import (
    AggregateReport,
    ExperimentRunner,
    describe_plan,
    emit_reports,
    plan_runs,
    run_ablation,
    run_grid_search,
    run_overfit_study,
)
from d4am.journal import RunJournal
from d4am.tasks import save_dataset

LOG_PREFIX = "[d4am]"
logger = logging.getLogger("d4am")

_FAILURE_EXIT = {"numerical": EXIT_NUMERICAL, "io": EXIT_IO, "training": EXIT_TRAINING, "error": EXIT_UNEXPECTED}

_HELP_EPILOG = """
Códigos de salida:
  0  todas las celdas terminaron
  1  error inesperado en alguna celda (ver harness.log)
  2  configuración no válida
  3  fallo numérico (gradiente o pérdida no finita) en alguna celda
  4  error de E/S (checkpoints, informes)
  5  un clasificador congelado no alcanzó la precisión mínima

Ejemplos:
  d4am run --seeds 0 --dry-run
  d4am run --config configs/example.env --modes CLSO D4AM --seeds 0 1 2
  d4am run --config configs/example.env --grid --jobs 4 --out results/grid
"""


def _load_env() -> None:
    """Carga .env del directorio actual y de la raíz del repositorio."""
    repo_root = Path(__file__).resolve().parent.parent
    load_dotenv()
    load_dotenv(repo_root / ".env")


def _configure_logging(level: int = logging.INFO) -> None:
    if not logger.handlers:
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter(LOG_PREFIX + " %(levelname)s %(name)s: %(message)s"))
        logger.addHandler(h)
    logger.setLevel(level)


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    seeds = {"SEEDS": ",".join(str(s) for s in args.seeds)} if args.seeds else {}
    cfg = parse_config(args.config, seeds) if args.config else build_config(seeds, source="<defaults>")
    return apply_overrides(cfg, modes=args.modes, output_dir=args.out, jobs=args.jobs)


def _exit_code(reports: list[AggregateReport]) -> int:
    """Worst failure across all cells, in the order numerical, I/O, training, unexpected."""
    kinds = {f["kind"] for agg in reports for f in agg.failures}
    for kind in ("numerical", "io", "training", "error"):
        if kind in kinds:
            return _FAILURE_EXIT[kind]
    return EXIT_OK if not kinds else EXIT_UNEXPECTED


def _save_data(runner: ExperimentRunner, out: Path) -> None:
    bundle = runner.bundle
    data_dir = out / "data"
    save_dataset(data_dir, "reg_train", bundle.reg_train, bundle.task)
    save_dataset(data_dir, "cls_train", bundle.cls_train, bundle.task)
    save_dataset(data_dir, "val", bundle.val, bundle.task)
    for name, split in bundle.tests.items():
        save_dataset(data_dir, f"test_{name}", split, bundle.task)
    logger.info("Datos sintéticos guardados en %s", data_dir)


def _print_headline(agg: AggregateReport) -> None:
    print(f"\n== {agg.kind} ({agg.primary_condition}) ==")
    for label in agg.labels:
        print(f"  {label:<12} mean_unseen={agg.mean_unseen(label):.4f}")
    if agg.best_k is not None:
        print(f"  media de los 7 mejores pesos: {agg.best_k:.4f}")
    for row in agg.overfit:
        print(
            f"  {row['label']} seed={row['seed']}: min={row['min']:.4f} final={row['final']:.4f} "
            f"subida={row['relative_rise']:+.1%}"
        )
    for f in agg.failures:
        print(f"  FALLO {f['cell']} ({f['kind']}): {f['message']}")


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    ablation = bool(cfg.ablation_modes) and not args.overfit
    cells = plan_runs(cfg, ablation=ablation, grid=args.grid)
    if args.dry_run:
        print(describe_plan(cfg, cells))
        return EXIT_OK

    out = cfg.output_dir
    journal = RunJournal(out / "harness.log", out / "progress.json")
    journal.log(f"d4am {__version__}: {len(cells)} celdas, semillas {list(cfg.seeds)}")
    runner = ExperimentRunner(cfg, journal, progress=not args.quiet)

    reports: list[AggregateReport] = []
    if args.overfit:
        reports.append(run_overfit_study(cfg, runner))
    elif ablation:
        reports.append(run_ablation(cfg, runner))
    if args.grid:
        reports.append(run_grid_search(cfg, runner))
    if args.save_data:
        _save_data(runner, out)

    for agg in reports:
        emit_reports(agg, out)
        if not args.quiet:
            _print_headline(agg)
    code = _exit_code(reports)
    journal.log(f"fin: código de salida {code}, incidentes={len(journal.incidents)}")
    if journal.has_incidents:
        logger.warning("%d incidentes; detalles en %s", len(journal.incidents), journal.log_path)
    return code


def main(argv: Optional[list[str]] = None) -> int:
    _load_env()
    parser = argparse.ArgumentParser(
        prog="d4am",
        description="Optimización conjunta realzador + reconocedor congelado (D4AM) sobre tareas sintéticas.",
        epilog=_HELP_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", help="Comandos disponibles")

    run_parser = subparsers.add_parser(
        "run",
        help="Ejecuta la matriz de experimentos y escribe los informes.",
        description="Ejecuta ablación (por defecto), grid search (--grid) o estudio de sobreajuste (--overfit).",
    )
    run_parser.add_argument("--config", type=Path, default=None, metavar="FILE", help="Fichero KEY=VALUE (formato .env)")
    run_parser.add_argument(
        "--modes",
        nargs="+",
        default=None,
        metavar="MODE",
        help="Brazos de la ablación: %s" % ", ".join(ABLATION_MODES),
    )
    run_parser.add_argument("--grid", action="store_true", help="Añade el grid search de peso fijo (GRID_WEIGHTS)")
    run_parser.add_argument("--overfit", action="store_true", help="Estudio CLSO vs D4AM con LABEL_FRACTION")
    run_parser.add_argument("--seeds", nargs="+", type=int, default=None, metavar="N", help="Semillas de las ejecuciones")
    run_parser.add_argument("--out", type=Path, default=None, metavar="DIR", help="Directorio de salida")
    run_parser.add_argument("--jobs", type=int, default=None, metavar="N", help="Celdas en paralelo (por defecto D4AM_JOBS)")
    run_parser.add_argument("--dry-run", action="store_true", help="Muestra la matriz de ejecuciones y sale")
    run_parser.add_argument("--save-data", action="store_true", help="Guarda los conjuntos sintéticos (.npy + .json)")
    verbosity = run_parser.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true", help="Solo avisos y errores")
    verbosity.add_argument("--verbose", action="store_true", help="Log DEBUG")
    run_parser.set_defaults(func=cmd_run)

    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_OK

    if getattr(args, "quiet", False):
        _configure_logging(logging.WARNING)
    elif getattr(args, "verbose", False):
        _configure_logging(logging.DEBUG)
    else:
        _configure_logging()

    try:
        return args.func(args)
    except D4AMError as e:
        logger.error("%s", e)
        return e.exit_code
    except OSError as e:
        logger.error("Error de E/S: %s", e)
        return EXIT_IO
    except ValueError as e:
        logger.error("%s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
