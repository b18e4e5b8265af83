"""
CLI Entry Point
Dataset generation, training, evaluation, benchmarking and reporting
"""

import argparse
import logging
import re
import shutil
import sys
from pathlib import Path
from typing import Callable, Optional

from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table
from rich.tree import Tree

from .checkpoint import load_checkpoint, save_checkpoint
from .config import get_settings, merge_run_config, read_config_file
from .dataset import DatasetIndex, generate_synthetic_category, load_images, load_mvtec_category
from .errors import D3RError, DataIntegrityError, UsageError, explain_error
from .metrics import hardware_descriptor
from .report import (
    IMAGE_ROC_FILE,
    REPORT_FILE,
    find_reports,
    plot_roc_svg,
    read_report_json,
    read_roc_csv,
    summarize,
    write_curve_csv,
    write_healing_png,
    write_manifest,
    write_panel_png,
    write_report_json,
    write_summary_tables,
)
from .schemas import Method, MetricsReport, RunConfig
from .scoring import write_map_png, write_map_raw
from .trainer import CategoryEvaluation, fit, healing_examples, run_evaluation

console = Console()
logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.d3r"
HEALING_PANELS = 4


class CLIParser(argparse.ArgumentParser):
    """argparse with usage errors raised as UsageError (exit code 1)"""

    def error(self, message):
        raise UsageError("bad_arguments", message, f"Run `{self.prog} --help` for usage")


def _csv_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    shared = CLIParser(add_help=False)
    shared.add_argument("--config", type=Path, help="INI run configuration ([run], [train], [corruption], [loss])")
    shared.add_argument("--root", type=Path, help="Dataset root (MVTec layout)")
    shared.add_argument("--out", dest="out_dir", type=Path, help="Output directory")
    shared.add_argument("--category", "--categories", dest="categories", type=_csv_list,
                        help="Category or comma-separated categories; 'mvtec' expands to all 15")
    shared.add_argument("--method", "--methods", dest="methods", type=_csv_list,
                        help="ae-mse, d3r-mse, d3r-fft, d3r-fft-ssim (comma-separated)")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--epochs", type=int)
    shared.add_argument("--batch-size", type=int)
    shared.add_argument("--lr", type=float)
    shared.add_argument("--image-side", type=int)
    shared.add_argument("--checkpoint-every", type=int)
    shared.add_argument("--w-mse", type=float)
    shared.add_argument("--w-fft", type=float)
    shared.add_argument("--w-ssim", type=float)
    shared.add_argument("--corrupt-prob", type=float)
    shared.add_argument("--max-regions", type=int)
    shared.add_argument("--n-thresholds", type=int)
    shared.add_argument("--strict", action="store_true", default=None, help="Nonzero exit when any metric is undefined")
    shared.add_argument("--threads", type=int, help="Image decoding workers; 1 = reference mode")
    shared.add_argument("--export-maps", action="store_true", default=None, help="Write a D3RMAP grid per test image")
    shared.add_argument("--panels", help="Heatmap panels to write: none, all or a count")
    shared.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = CLIParser(prog="d3r", description="Denoising dual-domain autoencoder for anomaly detection")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", parents=[shared], help="Write synthetic MVTec-layout categories")
    generate.add_argument("--force", action="store_true", help="Replace existing category trees")
    generate.add_argument("--n-train", type=int, default=64)
    generate.add_argument("--n-good-test", type=int, default=16)
    generate.add_argument("--n-defect-test", type=int, default=16)

    train = commands.add_parser("train", parents=[shared], help="Train one (category, method) pair")
    train.add_argument("--resume", action="store_true", help="Continue from the pair's checkpoint")

    commands.add_parser("eval", parents=[shared], help="Evaluate a trained checkpoint")
    commands.add_parser("bench", parents=[shared], help="Train and evaluate every category x method")
    commands.add_parser("report", parents=[shared], help="Aggregate existing reports into tables and ROC plots")
    return parser


_RUN_FIELDS = (
    "root", "categories", "methods", "seed", "epochs", "batch_size", "lr", "image_side", "checkpoint_every",
    "w_mse", "w_fft", "w_ssim", "corrupt_prob", "max_regions", "n_thresholds", "out_dir", "strict",
    "threads", "export_maps", "panels",
)


def load_run_config(args: argparse.Namespace) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {name: getattr(args, name, None) for name in _RUN_FIELDS}
    return merge_run_config(file_values, overrides)


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9._=,-]+", "_", label).strip("_")


def pair_dir(run: RunConfig, category: str, label: str) -> Path:
    """<out>/<category>/<method label>"""
    return run.out_dir / category / _slug(label)


def _single(values: list, what: str):
    if len(values) != 1:
        raise UsageError("bad_arguments", f"This command takes exactly one {what}, got {len(values)}",
                         f"Use bench for several {what}s")
    return values[0]


def _panel_count(panels: str, total: int) -> int:
    if panels == "none":
        return 0
    if panels == "all":
        return total
    return min(int(panels), total)


def _metrics_table(reports: list[MetricsReport], title: str) -> Table:
    table = Table(title=title)
    for column in ("Category", "Method", "Img AUC", "Img AP", "Px AUC", "Px AP", "PRO", "FPS"):
        table.add_column(column, justify="left" if column in ("Category", "Method") else "right")
    for r in reports:
        cells = [r.img_auc, r.img_ap, r.px_auc, r.px_ap, r.pro_auc]
        table.add_row(
            r.category, r.method,
            *("-" if v is None else f"{v:.3f}" for v in cells),
            "-" if r.fps is None else f"{r.fps:.1f}",
        )
    return table


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(run: RunConfig, args: argparse.Namespace) -> int:
    """Writes one seeded synthetic category per name under --out"""
    root = run.out_dir
    existing = [c for c in run.categories if (root / c).exists()]
    if existing and not args.force:
        raise UsageError(
            "tree_exists",
            f"Category tree already exists: {', '.join(str(root / c) for c in existing)}",
            "Pass --force to replace it",
        )

    tree = Tree(f"📁 {root}")
    artifacts: list[Path] = []
    for i, category in enumerate(run.categories):
        if (root / category).exists():
            shutil.rmtree(root / category)
        with console.status(f"[yellow]Generating {category}...", spinner="dots"):
            index = generate_synthetic_category(
                root, run.seed + i, args.n_train, args.n_good_test, args.n_defect_test, run.image_side, category,
            )
        branch = tree.add(f"{category}")
        branch.add(f"train/good: {len(index.train_samples)} images")
        by_type: dict[str, int] = {}
        for sample in index.test_samples:
            by_type[sample.defect_type] = by_type.get(sample.defect_type, 0) + 1
        for defect_type, count in by_type.items():
            branch.add(f"test/{defect_type}: {count} images")
        artifacts += list(index.train_samples) + [s.path for s in index.test_samples]
        artifacts += [s.mask_path for s in index.test_samples if s.mask_path is not None]

    console.print(tree)
    write_manifest(root, "generate", run.model_dump(mode="json"), artifacts, hardware_descriptor(run.threads), run.seed)
    return 0


def _train_pair(run: RunConfig, index: DatasetIndex, method: Method, images=None, resume: bool = False
                ) -> tuple[Path, list[Path]]:
    cfg, label = run.train_config(method)
    out = pair_dir(run, index.category, label)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out / CHECKPOINT_FILE

    resume_state = None
    if resume:
        params, optim_state, meta = load_checkpoint(checkpoint_path)
        resume_state = (params, optim_state, meta.epochs_completed)
        logger.info("Resuming %s/%s after epoch %d", index.category, label, meta.epochs_completed)

    with console.status(f"[yellow]Training {index.category} / {label}...", spinner="dots"):
        params, optim_state, log = fit(index, cfg, images=images, resume=resume_state, checkpoint_dir=out,
                                       threads=run.threads)
    artifacts = [save_checkpoint(params, optim_state, checkpoint_path, cfg.epochs,
                                 extra={"method": label, "category": index.category, "seed": cfg.seed})]
    log.to_csv(out / "train_log.csv", append=resume)
    log.write_summary(out / "summary.json")
    artifacts += [out / "train_log.csv", out / "summary.json"]
    final = log.steps[-1].loss.total if log.steps else float("nan")
    console.print(Panel(
        f"Steps: {len(log.steps)}\nFinal total loss: {final:.6f}\n"
        f"Parameters: {params.num_parameters():,} (latent width {params.latent_channels})\n"
        f"Checkpoint: {checkpoint_path}",
        title=f"[bold green]Trained {index.category} / {label}[/bold green]",
        border_style="green",
    ))
    return out, artifacts


def cmd_train(run: RunConfig, args: argparse.Namespace) -> int:
    category = _single(run.categories, "category")
    method = _single(run.methods, "method")
    index = load_mvtec_category(run.root, category, run.image_side)
    out, artifacts = _train_pair(run, index, method, resume=args.resume)
    write_manifest(out, "train", run.model_dump(mode="json"), artifacts, hardware_descriptor(run.threads), run.seed)
    return 0


def _evaluate_pair(run: RunConfig, index: DatasetIndex, method: Method) -> tuple[CategoryEvaluation, Path, list[Path]]:
    cfg, label = run.train_config(method)
    out = pair_dir(run, index.category, label)
    params, _, _ = load_checkpoint(out / CHECKPOINT_FILE)

    with console.status(f"[yellow]Evaluating {index.category} / {label}...", spinner="dots"):
        evaluation = run_evaluation(params, index, run.n_thresholds, method=label, weights=cfg.weights,
                                    threads=run.threads)
    artifacts = [write_report_json(evaluation.report, out / REPORT_FILE)]

    if evaluation.image_roc is not None:
        roc = evaluation.image_roc
        artifacts.append(write_curve_csv(out / IMAGE_ROC_FILE, ("threshold", "fpr", "tpr"),
                                         (roc.thresholds, roc.fprs, roc.values)))
    if evaluation.pro is not None:
        pro = evaluation.pro
        artifacts.append(write_curve_csv(out / "pro_curve.csv", ("threshold", "fpr", "pro"),
                                         (pro.thresholds, pro.fprs, pro.pros)))

    if run.export_maps:
        maps_dir = out / "maps"
        maps_dir.mkdir(exist_ok=True)
        for sample, scored, normalized in zip(index.test_samples, evaluation.scored, evaluation.normalized_maps):
            stem = f"{sample.defect_type}_{sample.path.stem}"
            write_map_raw(scored.anomaly_map, maps_dir / f"{stem}.d3rmap")
            write_map_png(normalized, maps_dir / f"{stem}.png")
            artifacts += [maps_dir / f"{stem}.d3rmap", maps_dir / f"{stem}.png"]

    n_panels = _panel_count(run.panels, len(index.test_samples))
    if n_panels:
        panels_dir = out / "panels"
        panels_dir.mkdir(exist_ok=True)
        images = load_images([s.path for s in index.test_samples[:n_panels]], index.image_side, threads=run.threads)
        for i, (sample, image) in enumerate(zip(index.test_samples, images)):
            scored = evaluation.scored[i]
            path = panels_dir / f"{i:03d}_{sample.defect_type}_{sample.path.stem}.png"
            artifacts.append(write_panel_png(image, scored.reconstruction, evaluation.normalized_maps[i].values, path))
        train_images = load_images(index.train_samples[:HEALING_PANELS], index.image_side, threads=run.threads)
        for i, (clean, corrupted, recon) in enumerate(healing_examples(params, train_images, cfg, HEALING_PANELS)):
            artifacts.append(write_healing_png(clean, corrupted, recon, panels_dir / f"healing_{i:02d}.png"))
    return evaluation, out, artifacts


def cmd_eval(run: RunConfig, args: argparse.Namespace) -> int:
    category = _single(run.categories, "category")
    method = _single(run.methods, "method")
    index = load_mvtec_category(run.root, category, run.image_side)
    evaluation, out, artifacts = _evaluate_pair(run, index, method)
    write_manifest(out, "eval", run.model_dump(mode="json"), artifacts, evaluation.report.hardware, run.seed)

    console.print(_metrics_table([evaluation.report], f"{category} / {evaluation.report.method}"))
    for warning in evaluation.report.warnings:
        console.print(f"[yellow]⚠️  {warning}[/yellow]")
    if run.strict and not evaluation.report.is_complete():
        console.print(f"[red]Undefined metrics: {', '.join(evaluation.report.undefined) or 'fps'}[/red]")
        return 3
    return 0


def cmd_bench(run: RunConfig, args: argparse.Namespace) -> int:
    """Every category x method with the shared seed, then the summary tables"""
    reports: list[MetricsReport] = []
    labels = [run.train_config(m)[1] for m in run.methods]
    artifacts: list[Path] = []
    failures: list[str] = []

    for category in run.categories:
        try:
            index = load_mvtec_category(run.root, category, run.image_side)
            images = load_images(index.train_samples, run.image_side, threads=run.threads)
        except D3RError as e:
            failures.append(f"{category}: {e.message}")
            logger.error("Skipping %s: %s", category, e.message)
            continue
        for method in run.methods:
            try:
                _, train_artifacts = _train_pair(run, index, method, images=images)
                evaluation, _, eval_artifacts = _evaluate_pair(run, index, method)
            except D3RError as e:
                failures.append(f"{category}/{method.value}: {e.message}")
                logger.error("%s/%s failed: %s", category, method.value, e.message)
                continue
            except Exception as e:
                failures.append(f"{category}/{method.value}: {e}")
                logger.exception("%s/%s failed", category, method.value)
                continue
            reports.append(evaluation.report)
            artifacts += train_artifacts + eval_artifacts

    summary = summarize(reports, run.categories, labels)
    artifacts += write_summary_tables(summary, run.out_dir / "summary")
    write_manifest(run.out_dir, "bench", run.model_dump(mode="json"), artifacts, hardware_descriptor(run.threads), run.seed)

    console.print(_metrics_table(reports, "Benchmark"))
    means = [
        MetricsReport(category="mean", method=m, **{k: v for k, v in summary.means[m].items()})
        for m in summary.methods
    ]
    console.print(_metrics_table(means, "Method means over categories"))
    if summary.missing:
        console.print(f"[yellow]Missing cells: {', '.join(summary.missing)}[/yellow]")
    for failure in failures:
        console.print(f"[red]❌ {failure}[/red]")

    if run.strict and (failures or summary.missing):
        return 3
    return 0


def cmd_report(run: RunConfig, args: argparse.Namespace) -> int:
    """ROC SVG per category and summary tables from existing report.json files"""
    paths = find_reports(run.out_dir)
    if not paths:
        raise DataIntegrityError("no_reports", f"No {REPORT_FILE} found under {run.out_dir}",
                                 "Run eval or bench first, or point --out at their output directory")

    loaded = [(path, read_report_json(path)) for path in paths]
    reports = [r for _, r in loaded]
    if args.methods:
        expected = [run.train_config(m)[1] for m in run.methods]
    else:
        expected = list(dict.fromkeys(r.method for r in reports))

    report_dir = run.out_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    artifacts: list[Path] = []
    categories = list(dict.fromkeys(r.category for r in reports))
    for category in categories:
        curves = {}
        for path, report in loaded:
            roc_path = path.parent / IMAGE_ROC_FILE
            if report.category == category and report.method in expected and roc_path.is_file():
                curves[report.method] = read_roc_csv(roc_path)
        missing = [m for m in expected if m not in curves]
        artifacts.append(plot_roc_svg(category, curves, missing, report_dir / f"roc_{_slug(category)}.svg"))

    summary = summarize([r for r in reports if r.method in expected], categories, expected)
    artifacts += write_summary_tables(summary, report_dir)
    write_manifest(report_dir, "report", run.model_dump(mode="json"), artifacts, hardware_descriptor(run.threads), run.seed)

    console.print(_metrics_table(summary.rows, "Collected reports"))
    console.print(f"[green]Wrote {len(artifacts)} files to {report_dir}[/green]")
    return 0


COMMANDS: dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv: Optional[list[str]] = None) -> int:
    """Runs one command and returns its exit code (0 ok, 1 usage, 2 data, 3 runtime)"""
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level or get_settings().log_level)
        run = load_run_config(args)
        return COMMANDS[args.command](run, args)
    except D3RError as e:
        console.print(Panel(explain_error(e), title=f"[bold red]{type(e).__name__}[/bold red]", border_style="red"))
        return e.exit_code
    except KeyboardInterrupt:
        console.print("\n[yellow]Interrupted.[/yellow]")
        return 3
    except Exception as e:
        logger.exception("Unexpected failure")
        console.print(f"\n[red]❌ Fatal error: {str(e)}[/red]")
        return 3


if __name__ == "__main__":
    sys.exit(main())
