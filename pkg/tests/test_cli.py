import json
import shutil
import subprocess

import numpy as np
import pytest

from lowdose import io
from lowdose.cli import EXIT_CODES, main

GEOM = ["--size", "32", "--views", "30", "--pixel-size", "0.04"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), (json.loads(err) if err.strip() else None)


@pytest.fixture
def files(tmp_path, capsys):
    """Phantom, two templates and simulated counts for a 32 x 32 problem."""
    p = lambda name: str(tmp_path / name)
    change = "12,18,4,-0.3"
    assert run(capsys, "phantom", "--size", 32, "--which", "test", "--change", change, "--out", p("test.raw"), "--pgm", p("test.pgm"))[0] == 0
    for k in range(3):
        assert run(capsys, "phantom", "--size", 32, "--which", k, "--templates", 3, "--out", p(f"t{k}.raw"))[0] == 0
    assert run(capsys, "simulate", *GEOM, "--image", p("test.raw"), "--i0", 500, "--level", 0.001, "--noise-kind", "std", "--seed", 1, "--out", p("y.raw"))[0] == 0
    return p


class TestSubcommands:
    def test_phantom_outputs(self, files):
        grid = io.read_raw(files("test.raw"), "image")
        assert grid.data.shape == (32, 32) and grid.stage == "attenuation"
        assert io.read_pgm(files("test.pgm")).shape == (32, 32)

    def test_simulate(self, files, capsys):
        grid = io.read_raw(files("y.raw"), "sinogram")
        assert grid.stage == "counts" and grid.data.shape == (30, 46)

    @pytest.mark.parametrize("method", ["fbp", "rnlls-pg", "pg-nll"])
    def test_reconstruct_and_metrics(self, files, capsys, tmp_path, method):
        code, out, _ = run(
            capsys, "reconstruct", *GEOM, "--method", method, "--counts", files("y.raw"), "--i0", 500, "--sigma", 0.5,
            "--lambda1", 0.5, "--max-iters", 20, "--trace", files("trace.csv"), "--out", files("rec.raw"),
        )
        assert code == 0 and out["method"] == method
        code, out, _ = run(capsys, "metrics", "--truth", files("test.raw"), "--image", files("rec.raw"), "--roi", "4,4,20,20", "--out", files("m.csv"))
        assert code == 0 and -1 <= out["ssim"] <= 1 and out["rel_mse"] >= 0
        assert io.read_table(files("m.csv"))[0] == ["ssim", "rel_mse", "rmse"]

    def test_change_pipeline(self, files, capsys):
        templates = [files(f"t{k}.raw") for k in range(3)]
        code, out, _ = run(
            capsys, "weights-map", *GEOM, "--counts", files("y.raw"), "--templates", *templates, "--i0", 500,
            "--out", files("w.raw"), "--pvalues-out", files("p.raw"),
        )
        assert code == 0 and 0 <= out["flagged_fraction"] <= 1
        assert io.read_raw(files("p.raw"), "pvalues").stage == "p-value"
        common = ["--counts", files("y.raw"), "--templates", *templates, "--i0", 500, "--lambda1", 0.5, "--max-iters", 20, "--outer-iters", 2]
        for extra in ([], ["--unweighted"], ["--weights", files("w.raw")]):
            code, out, _ = run(capsys, "prior-recon", *GEOM, *common, *extra, "--out", files("prior.raw"))
            assert code == 0 and out["outer_iters"] >= 1
        code, out, _ = run(
            capsys, "reirradiate", *GEOM, *common, "--truth", files("test.raw"), "--boost", 2, "--max-fraction", 0.2,
            "--mask-out", files("mask.raw"), "--out", files("re.raw"),
        )
        assert code == 0 and out["selected_fraction"] <= 0.2
        assert out["extra_dose"] == pytest.approx(out["selected_fraction"])
        assert io.read_raw(files("mask.raw"), "mask").data.max() == 1.0

    def test_tune(self, files, capsys):
        code, out, _ = run(
            capsys, "tune", *GEOM, "--counts", files("y.raw"), "--i0", 500, "--grid", "1,0.1", "--truth", files("test.raw"),
            "--max-iters", 15, "--out", files("tune.csv"),
        )
        assert code == 0 and out["chosen_lambda"] in (0.1, 1.0)
        header, rows = io.read_table(files("tune.csv"))
        assert header == ["lambda1", "D", "rel_mse"] and [r[0] for r in rows] == ["0.1", "1.0"]

    def test_compare(self, tmp_path, capsys):
        out_path = tmp_path / "cmp.csv"
        code, out, _ = run(
            capsys, "compare", "--size", 16, "--views", 10, "--doses", "20,620", "--methods", "fbp,rnlls",
            "--seeds", "0,1", "--mass", 3, "--lambda-grid", "1", "--max-iters", 10, "--out", out_path,
        )
        assert code == 0 and set(out["median_ssim"]) == {"fbp", "rnlls"}
        header, rows = io.read_table(out_path)
        assert len(rows) == 8 and header[0] == "scenario_hash"

    def test_config_file(self, files, capsys, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"method = fbp\ncounts = {files('y.raw')}\ni0 = 500\nsize = 32\nviews = 30\npixel-size = 0.04\n")
        code, out, _ = run(capsys, "reconstruct", "--config", cfg, "--out", files("c.raw"))
        assert code == 0 and out["method"] == "fbp"
        # flags override the config
        code, out, _ = run(capsys, "reconstruct", "--config", cfg, "--method", "rnlls", "--max-iters", 3, "--out", files("c.raw"))
        assert code == 0 and out["method"] == "rnlls"


class TestErrors:
    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "metrics", "--truth", tmp_path / "nope.raw", "--image", tmp_path / "nope.raw")
        assert code == EXIT_CODES["io"] and err["error"] == "io"

    def test_bad_header(self, capsys, tmp_path):
        (tmp_path / "bad.raw").write_bytes(b"garbage\n")
        code, _, err = run(capsys, "metrics", "--truth", tmp_path / "bad.raw", "--image", tmp_path / "bad.raw")
        assert code == EXIT_CODES["format"] and "line 1" in err["message"]

    def test_bad_config(self, capsys, tmp_path):
        (tmp_path / "c.cfg").write_text("colour = blue\n")
        code, _, err = run(capsys, "metrics", "--config", tmp_path / "c.cfg", "--truth", "a", "--image", "b")
        assert code == EXIT_CODES["format"] and "unknown key" in err["message"]

    def test_wrong_stage(self, files, capsys):
        code, _, err = run(capsys, "reconstruct", *GEOM, "--method", "fbp", "--counts", files("y.raw").replace("y.raw", "test.raw"), "--i0", 1, "--out", files("x.raw"))
        assert code == EXIT_CODES["format"] and err["error"] == "format"

    def test_geometry_mismatch(self, files, capsys):
        code, _, err = run(capsys, "reconstruct", "--size", 16, "--views", 30, "--method", "fbp", "--counts", files("y.raw"), "--i0", 1, "--out", files("x.raw"))
        assert code == EXIT_CODES["invalid-input"]

    def test_missing_out(self, files, capsys):
        code, _, err = run(capsys, "simulate", *GEOM, "--image", files("test.raw"), "--i0", 10)
        assert code == EXIT_CODES["invalid-input"] and "--out" in err["message"]

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["reconstruct", "--method", "sirt"])
        assert exc.value.code == 2


@pytest.mark.skipif(shutil.which("lowdose") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["lowdose", "phantom", "--size", "16", "--out", str(tmp_path / "p.raw")], capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["shape"] == [16, 16]
