"""
Run artifacts: report JSON, curve CSVs, benchmark tables, ROC plots,
heatmap panels and run manifests
"""

import csv
import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image
from scipy.integrate import trapezoid
from pydantic import BaseModel, Field, ValidationError

from .errors import DataIntegrityError
from .metrics import Curve
from .schemas import MetricsReport

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
IMAGE_ROC_FILE = "image_roc.csv"

SUMMARY_COLUMNS = (
    ("img_auc", "Img AUC"),
    ("img_ap", "Img AP"),
    ("px_auc", "Px AUC"),
    ("px_ap", "Px AP"),
    ("pro_auc", "PRO"),
    ("fps", "FPS"),
)
CATEGORY_COLUMNS = SUMMARY_COLUMNS[:5]

# Published MVTec AD numbers, kept for side-by-side reading only
REFERENCE_AVERAGE = {
    "ae-mse": (0.708, 0.859, 0.733, 0.152, 0.417, 19.8),
    "d3r-mse": (0.720, 0.867, 0.738, 0.177, 0.441, 21.5),
    "d3r-fft": (0.706, 0.867, 0.751, 0.166, 0.468, 20.3),
    "d3r-fft-ssim": (0.657, 0.840, 0.625, 0.127, 0.346, 20.5),
}
REFERENCE_CATEGORY = {
    "hazelnut": {
        "ae-mse": (0.936, 0.961, 0.914, 0.468, 0.603),
        "d3r-mse": (0.928, 0.956, 0.925, 0.490, 0.606),
        "d3r-fft": (0.923, 0.956, 0.882, 0.428, 0.687),
        "d3r-fft-ssim": (0.739, 0.858, 0.858, 0.260, 0.616),
    },
    "leather": {
        "ae-mse": (0.846, 0.945, 0.748, 0.113, 0.445),
        "d3r-mse": (0.849, 0.946, 0.790, 0.171, 0.467),
        "d3r-fft": (0.659, 0.867, 0.772, 0.061, 0.471),
        "d3r-fft-ssim": (0.690, 0.898, 0.885, 0.222, 0.599),
    },
}
REFERENCE_PRO = {
    "tile": {"ae-mse": 0.412, "d3r-mse": 0.449, "d3r-fft": 0.453},
    "wood": {"ae-mse": 0.495, "d3r-mse": 0.555, "d3r-fft": 0.608},
    "pill": {"ae-mse": 0.534, "d3r-mse": 0.619, "d3r-fft": 0.721},
    "carpet": {"ae-mse": 0.255, "d3r-mse": 0.337, "d3r-fft": 0.316},
    "screw": {"ae-mse": 0.356, "d3r-mse": 0.427, "d3r-fft": 0.588},
}
REFERENCE_LABEL = "published reference (not measured here)"


# ---------------------------------------------------------------------------
# Reports and curves
# ---------------------------------------------------------------------------

def write_report_json(report: MetricsReport, path: Path) -> Path:
    Path(path).write_text(report.model_dump_json(indent=2))
    return Path(path)


def read_report_json(path: Path) -> MetricsReport:
    try:
        return MetricsReport.model_validate_json(Path(path).read_text())
    except (OSError, ValidationError) as e:
        raise DataIntegrityError("bad_report", f"Cannot read report {path}: {e}") from e


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_curve_csv(path: Path, header: Sequence[str], columns: Sequence[Sequence]) -> Path:
    """One row per curve point; floats written with repr"""
    if len({len(c) for c in columns}) > 1:
        raise ValueError("Curve columns differ in length")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([_cell(v) for v in row])
    return Path(path)


def read_roc_csv(path: Path) -> Curve:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise DataIntegrityError("bad_curve", f"{path} holds no curve points")
    return Curve(
        thresholds=np.array([float(r["threshold"]) for r in rows]),
        fprs=np.array([float(r["fpr"]) for r in rows]),
        values=np.array([float(r["tpr"]) for r in rows]),
    )


def find_reports(out_dir: Path) -> list[Path]:
    """Every report.json below out_dir, in sorted order"""
    return sorted(Path(out_dir).rglob(REPORT_FILE))


# ---------------------------------------------------------------------------
# Benchmark summary
# ---------------------------------------------------------------------------

class BenchmarkSummary(BaseModel):
    """
    Per (category, method) reports plus per-method arithmetic means over categories
    Means skip undefined cells; every skipped or absent cell is listed in `missing`
    """
    categories: list[str]
    methods: list[str]
    rows: list[MetricsReport]
    means: dict[str, dict[str, Optional[float]]]
    missing: list[str] = Field(default_factory=list)

    def row(self, category: str, method: str) -> Optional[MetricsReport]:
        for r in self.rows:
            if r.category == category and r.method == method:
                return r
        return None


def _ordered(values: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(values))


def summarize(reports: Sequence[MetricsReport], categories: Optional[Sequence[str]] = None,
              methods: Optional[Sequence[str]] = None) -> BenchmarkSummary:
    """
    Builds the benchmark summary

    Args:
        reports: One report per evaluated (category, method)
        categories: Expected categories (default: those present, in order)
        methods: Expected methods (default: those present, in order)

    Returns:
        BenchmarkSummary with method means and missing cells
    """
    categories = list(categories) if categories else _ordered(r.category for r in reports)
    methods = list(methods) if methods else _ordered(r.method for r in reports)
    by_key = {(r.category, r.method): r for r in reports}

    missing: list[str] = []
    means: dict[str, dict[str, Optional[float]]] = {}
    for method in methods:
        means[method] = {}
        for field, _ in SUMMARY_COLUMNS:
            values = []
            for category in categories:
                report = by_key.get((category, method))
                value = getattr(report, field) if report is not None else None
                if value is None:
                    if report is not None:
                        missing.append(f"{category}/{method}/{field}")
                else:
                    values.append(value)
            means[method][field] = float(np.mean(values)) if values else None
        missing += [f"{c}/{method}" for c in categories if (c, method) not in by_key]

    rows = [by_key[(c, m)] for c in categories for m in methods if (c, m) in by_key]
    return BenchmarkSummary(categories=categories, methods=methods, rows=rows, means=means, missing=missing)


def _fmt(value: Optional[float], digits: int = 3) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else _cell(v) for v in row])
    return path


def _markdown_table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines)


def write_summary_tables(summary: BenchmarkSummary, out_dir: Path) -> list[Path]:
    """
    Writes the average table, per-category tables, the PRO table, the
    published reference tables and a markdown digest

    Returns:
        Written paths
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = [label for _, label in SUMMARY_COLUMNS]
    written = [
        _write_rows(out_dir / "summary_average.csv", ["Method", *labels],
                    ([m, *(summary.means[m][f] for f, _ in SUMMARY_COLUMNS)] for m in summary.methods)),
    ]

    cat_labels = [label for _, label in CATEGORY_COLUMNS]
    for category in summary.categories:
        rows = []
        for method in summary.methods:
            r = summary.row(category, method)
            rows.append([method, *((getattr(r, f) if r else None) for f, _ in CATEGORY_COLUMNS)])
        written.append(_write_rows(out_dir / f"category_{category}.csv", ["Method", *cat_labels], rows))

    pro_rows = []
    for category in summary.categories:
        cells = [summary.row(category, m) for m in summary.methods]
        pro_rows.append([category, *(r.pro_auc if r else None for r in cells)])
    written.append(_write_rows(out_dir / "pro_table.csv", ["Category", *summary.methods], pro_rows))

    written += write_reference_tables(out_dir)

    md = [
        "# Benchmark summary",
        "",
        f"Categories: {', '.join(summary.categories)}",
        "",
        "## Average over categories (measured)",
        "",
        _markdown_table(["Method", *labels], (
            [m, *(_fmt(summary.means[m][f], 1 if f == "fps" else 3) for f, _ in SUMMARY_COLUMNS)]
            for m in summary.methods
        )),
        "",
        "## PRO AUC per category (measured)",
        "",
        _markdown_table(["Category", *summary.methods], (
            [row[0], *(_fmt(v) for v in row[1:])] for row in pro_rows
        )),
        "",
        f"## MVTec AD average, {REFERENCE_LABEL}",
        "",
        _markdown_table(["Method", *labels], (
            [m, *(f"{v:g}" for v in values)] for m, values in REFERENCE_AVERAGE.items()
        )),
    ]
    if summary.missing:
        md += ["", "## Missing cells", ""] + [f"- {cell}" for cell in summary.missing]
    md_path = out_dir / "summary.md"
    md_path.write_text("\n".join(md) + "\n")
    written.append(md_path)
    return written


def write_reference_tables(out_dir: Path) -> list[Path]:
    """The published MVTec AD rows as CSV, each labelled as reference"""
    out_dir = Path(out_dir)
    labels = [label for _, label in SUMMARY_COLUMNS]
    cat_labels = [label for _, label in CATEGORY_COLUMNS]
    written = [
        _write_rows(out_dir / "reference_average.csv", ["Method", *labels, "Source"],
                    ([m, *values, REFERENCE_LABEL] for m, values in REFERENCE_AVERAGE.items())),
    ]
    for category, rows in REFERENCE_CATEGORY.items():
        written.append(_write_rows(out_dir / f"reference_category_{category}.csv", ["Method", *cat_labels, "Source"],
                                   ([m, *values, REFERENCE_LABEL] for m, values in rows.items())))
    pro_methods = ["ae-mse", "d3r-mse", "d3r-fft"]
    written.append(_write_rows(out_dir / "reference_pro.csv", ["Category", *pro_methods, "Source"],
                               ([c, *(row[m] for m in pro_methods), REFERENCE_LABEL] for c, row in REFERENCE_PRO.items())))
    return written


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def _curve_area(curve: Curve) -> float:
    return float(trapezoid(curve.values, curve.fprs))


def plot_roc_svg(category: str, curves: Mapping[str, Curve], missing: Sequence[str], path: Path) -> Path:
    """
    Image-level ROC curves of several methods in one SVG

    Output is byte-identical for identical inputs.
    """
    with plt.rc_context({"svg.hashsalt": "d3r-roc", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot([0, 1], [0, 1], linestyle="--", color="0.7", linewidth=1)
        for method in sorted(curves):
            curve = curves[method]
            ax.plot(curve.fprs, curve.values, linewidth=1.5, label=f"{method} (AUC {_curve_area(curve):.3f})")
        for method in sorted(missing):
            ax.plot([], [], linestyle="none", label=f"{method}: no report")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        ax.set_title(f"Image-level ROC: {category}")
        ax.legend(loc="lower right", fontsize=8)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return Path(path)


def _to_rgb8(image: np.ndarray) -> np.ndarray:
    """(3, H, W) floats in [0, 1] -> (H, W, 3) uint8"""
    return np.round(np.clip(np.transpose(image, (1, 2, 0)), 0.0, 1.0) * 255.0).astype(np.uint8)


def _heatmap_rgb8(values: np.ndarray) -> np.ndarray:
    rgba = matplotlib.colormaps["jet"](np.clip(values, 0.0, 1.0))
    return np.round(rgba[..., :3] * 255.0).astype(np.uint8)


def _strip(tiles: Sequence[Image.Image], gap: int = 4) -> Image.Image:
    w, h = tiles[0].size
    canvas = Image.new("RGB", (len(tiles) * w + (len(tiles) - 1) * gap, h), (255, 255, 255))
    for i, tile in enumerate(tiles):
        canvas.paste(tile, (i * (w + gap), 0))
    return canvas


def write_panel_png(input_image: np.ndarray, recon: np.ndarray, map_values: np.ndarray, path: Path) -> Path:
    """input | reconstruction | anomaly map | overlay, left to right"""
    source = Image.fromarray(_to_rgb8(input_image))
    heat = Image.fromarray(_heatmap_rgb8(map_values))
    overlay = Image.blend(source, heat, alpha=0.5)
    _strip([source, Image.fromarray(_to_rgb8(recon)), heat, overlay]).save(path, format="PNG")
    return Path(path)


def write_healing_png(clean: np.ndarray, corrupted: np.ndarray, recon: np.ndarray, path: Path) -> Path:
    """clean | corrupted | reconstruction"""
    _strip([Image.fromarray(_to_rgb8(a)) for a in (clean, corrupted, recon)]).save(path, format="PNG")
    return Path(path)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, command: str, config: Mapping, artifacts: Iterable[Path],
                   hardware: Optional[Mapping[str, str]] = None, seed: Optional[int] = None) -> Path:
    """
    manifest.json: command, config snapshot, seed, sha256 per artifact, hardware

    Artifact paths are stored relative to out_dir when possible.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for artifact in sorted({Path(a) for a in artifacts}):
        if not artifact.is_file():
            continue
        try:
            key = artifact.relative_to(out_dir).as_posix()
        except ValueError:
            key = artifact.as_posix()
        hashes[key] = sha256_file(artifact)

    manifest = {
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "seed": seed,
        "config": json.loads(json.dumps(dict(config), default=str)),
        "artifacts": hashes,
        "hardware": dict(hardware or {}),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.debug("Manifest %s lists %d artifacts", path, len(hashes))
    return path
