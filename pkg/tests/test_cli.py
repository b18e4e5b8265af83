"""
End-to-end tests of the d3r command line on tiny synthetic categories
"""

import json
import shutil

import pytest

from src.config import get_settings
from src.dataset import load_mvtec_category
from src.main import CHECKPOINT_FILE, main
from src.report import REPORT_FILE
from src.schemas import Method

SMALL = ["--image-side", "32", "--epochs", "1", "--batch-size", "4", "--n-thresholds", "20"]
GEN_SMALL = ["--image-side", "32", "--n-train", "8", "--n-good-test", "4", "--n-defect-test", "4"]


@pytest.fixture(autouse=True)
def fresh_settings():
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture(scope="module")
def data_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["generate", "--out", str(root), "--categories", "tex-a,tex-b", "--seed", "7", *GEN_SMALL]) == 0
    return root


@pytest.fixture(scope="module")
def bench_out(data_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    methods = ",".join(m.value for m in Method)
    code = main(["bench", "--root", str(data_root), "--out", str(out), "--categories", "tex-a,tex-b",
                 "--methods", methods, *SMALL])
    assert code == 0
    return out


class TestGenerate:

    def test_trees_load(self, data_root):
        for category in ("tex-a", "tex-b"):
            index = load_mvtec_category(data_root, category, 32)
            assert len(index.train_samples) == 8 and len(index.test_samples) == 8
        assert (data_root / "manifest.json").is_file()

    def test_refuses_existing_tree(self, data_root):
        assert main(["generate", "--out", str(data_root), "--categories", "tex-a", *GEN_SMALL]) == 1

    def test_force_replaces(self, tmp_path):
        args = ["generate", "--out", str(tmp_path), "--categories", "tex-a", "--seed", "1", *GEN_SMALL]
        assert main(args) == 0
        assert main([*args, "--force"]) == 0


class TestTrainAndEval:

    def test_train_then_eval(self, data_root, tmp_path):
        common = ["--root", str(data_root), "--out", str(tmp_path), "--category", "tex-a", "--method", "d3r-fft", *SMALL]
        assert main(["train", *common]) == 0
        pair = tmp_path / "tex-a" / "d3r-fft"
        assert (pair / CHECKPOINT_FILE).is_file()
        # 8 images at batch 4 -> 2 steps
        assert len((pair / "train_log.csv").read_text().splitlines()) == 3

        assert main(["eval", *common, "--panels", "all", "--export-maps"]) == 0
        report = json.loads((pair / REPORT_FILE).read_text())
        for field in ("img_auc", "img_ap", "px_auc", "px_ap", "pro_auc", "fps"):
            assert report[field] is not None
        assert (pair / "image_roc.csv").is_file() and (pair / "pro_curve.csv").is_file()
        assert len(list((pair / "maps").glob("*.d3rmap"))) == 8
        panels = [p for p in (pair / "panels").glob("*.png") if not p.name.startswith("healing_")]
        assert len(panels) == 8
        manifest = json.loads((pair / "manifest.json").read_text())
        assert manifest["seed"] == 0 and REPORT_FILE in manifest["artifacts"]

    def test_resume_appends_log(self, data_root, tmp_path):
        common = ["--root", str(data_root), "--out", str(tmp_path), "--category", "tex-a", "--method", "ae-mse",
                  "--image-side", "32", "--batch-size", "4"]
        assert main(["train", *common, "--epochs", "1"]) == 0
        assert main(["train", *common, "--epochs", "2", "--resume"]) == 0
        lines = (tmp_path / "tex-a" / "ae-mse" / "train_log.csv").read_text().splitlines()
        assert [line.split(",")[1] for line in lines[1:]] == ["1", "2", "3", "4"]

    def test_override_uses_custom_directory(self, data_root, tmp_path):
        assert main(["train", "--root", str(data_root), "--out", str(tmp_path), "--category", "tex-a",
                     "--method", "d3r-fft", "--w-ssim", "0.25", *SMALL]) == 0
        (pair,) = list((tmp_path / "tex-a").iterdir())
        assert pair.name.startswith("custom")

    def test_missing_checkpoint(self, data_root, tmp_path):
        assert main(["eval", "--root", str(data_root), "--out", str(tmp_path), "--category", "tex-a", *SMALL]) == 2

    def test_missing_category(self, data_root, tmp_path):
        assert main(["train", "--root", str(data_root), "--out", str(tmp_path), "--category", "nope", *SMALL]) == 2

    def test_two_categories_rejected_by_train(self, data_root, tmp_path):
        assert main(["train", "--root", str(data_root), "--out", str(tmp_path), "--categories", "tex-a,tex-b",
                     *SMALL]) == 1


class TestUsage:

    @pytest.mark.parametrize("argv", [
        ["train", "--bogus"],
        [],
        ["train", "--epochs", "zero"],
        ["train", "--batch-size", "1"],
        ["eval", "--panels", "some"],
        ["train", "--image-side", "40"],
        ["generate", "--image-side", "40"],
        ["bench", "--image-side", "40"],
        ["train", "--w-mse", "0", "--w-fft", "0", "--w-ssim", "0"],
        ["eval", "--method", "ae-mse", "--w-mse", "0"],
    ])
    def test_usage_errors(self, argv, tmp_path):
        assert main([*argv, "--out", str(tmp_path)] if argv else argv) == 1


class TestBench:

    def test_eight_reports_and_summary(self, bench_out):
        assert len(list(bench_out.rglob(REPORT_FILE))) == 8
        assert (bench_out / "summary" / "summary_average.csv").is_file()
        assert (bench_out / "summary" / "category_tex-a.csv").is_file()
        assert (bench_out / "manifest.json").is_file()

    def test_summary_rows_are_method_means(self, bench_out):
        lines = (bench_out / "summary" / "summary_average.csv").read_text().splitlines()
        assert lines[0].split(",")[:2] == ["Method", "Img AUC"]
        means = {row.split(",")[0]: row.split(",")[1:] for row in lines[1:]}
        for method in Method:
            values = [json.loads((bench_out / c / method.value / REPORT_FILE).read_text())["px_auc"]
                      for c in ("tex-a", "tex-b")]
            assert float(means[method.value][2]) == pytest.approx(sum(values) / 2, abs=1e-12)


class TestReport:

    def test_svg_per_category_and_deterministic(self, bench_out):
        assert main(["report", "--out", str(bench_out)]) == 0
        svgs = sorted((bench_out / "report").glob("roc_*.svg"))
        assert [p.name for p in svgs] == ["roc_tex-a.svg", "roc_tex-b.svg"]
        first = [p.read_bytes() for p in svgs]
        assert main(["report", "--out", str(bench_out)]) == 0
        assert [p.read_bytes() for p in svgs] == first

    def test_missing_method_noted(self, bench_out, tmp_path):
        copy = tmp_path / "copy"
        shutil.copytree(bench_out, copy)
        shutil.rmtree(copy / "tex-a" / "d3r-fft-ssim")
        methods = ",".join(m.value for m in Method)
        assert main(["report", "--out", str(copy), "--methods", methods]) == 0
        svg = (copy / "report" / "roc_tex-a.svg").read_text()
        assert "d3r-fft-ssim: no report" in svg
        assert "d3r-fft-ssim: no report" not in (copy / "report" / "roc_tex-b.svg").read_text()

    def test_no_reports(self, tmp_path):
        assert main(["report", "--out", str(tmp_path)]) == 2


class TestBenchPartialFailure:

    @pytest.fixture
    def degenerate_root(self, tmp_path):
        root = tmp_path / "data"
        assert main(["generate", "--out", str(root), "--categories", "tex-a,tex-b", "--seed", "7", *GEN_SMALL]) == 0
        for child in (root / "tex-b" / "test").iterdir():
            shutil.rmtree(child)
        return root

    def test_empty_test_split_does_not_stop_the_run(self, degenerate_root, tmp_path):
        out = tmp_path / "bench"
        argv = ["bench", "--root", str(degenerate_root), "--out", str(out), "--categories", "tex-a,tex-b",
                "--methods", "ae-mse", *SMALL]
        assert main(argv) == 0
        complete = json.loads((out / "tex-a" / "ae-mse" / REPORT_FILE).read_text())
        assert complete["px_auc"] is not None and complete["undefined"] == []
        degenerate = json.loads((out / "tex-b" / "ae-mse" / REPORT_FILE).read_text())
        assert degenerate["px_auc"] is None and "px_auc" in degenerate["undefined"]
        assert (out / "summary" / "summary_average.csv").is_file()
        assert (out / "summary" / "category_tex-a.csv").is_file()

    def test_strict_flags_the_missing_cells(self, degenerate_root, tmp_path):
        argv = ["bench", "--root", str(degenerate_root), "--out", str(tmp_path / "bench"),
                "--categories", "tex-a,tex-b", "--methods", "ae-mse", "--strict", *SMALL]
        assert main(argv) == 3
