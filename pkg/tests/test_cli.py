import csv

import numpy as np
import pytest

from pcrkit import geometry as geo
from pcrkit import meshio, shapes
from pcrkit.cli import main


@pytest.fixture
def off_file(tmp_path):
    path = tmp_path / "chair.off"
    path.write_text(shapes.chair_off())
    return path


@pytest.fixture
def cloud_dir(tmp_path, off_file):
    d = tmp_path / "clouds"
    d.mkdir()
    assert main(["sample", "--off", str(off_file), "--points", "64", "--seed", "1", "--out", str(d / "chair.pcrc")]) == 0
    return d


@pytest.fixture
def tiny_ckpt(tmp_path, cloud_dir):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("preset = tiny\npoints = 64\nepochs = 1\nbatch_size = 4\npairs_per_epoch = 4\nunroll = 2\nwidth_divisor = 32\n")
    out = tmp_path / "model.ckpt"
    assert main(["train", "--config", str(cfg), "--data", str(cloud_dir), "--out", str(out)]) == 0
    return out


class TestSample:
    def test_writes_n_points(self, cloud_dir):
        cloud = meshio.load_cloud(cloud_dir / "chair.pcrc")
        assert cloud.shape == (64, 3)
        assert (cloud_dir / "chair.pcrc").stat().st_size == 8 + 64 * 12

    def test_missing_file(self, tmp_path, capsys):
        assert main(["sample", "--off", str(tmp_path / "nope.off"), "--out", str(tmp_path / "x.pcrc")]) == 2
        assert "not found" in capsys.readouterr().err

    def test_same_seed_same_bytes(self, off_file, tmp_path):
        for name in ("a.pcrc", "b.pcrc"):
            main(["sample", "--off", str(off_file), "--points", "32", "--seed", "5", "--out", str(tmp_path / name)])
        assert (tmp_path / "a.pcrc").read_bytes() == (tmp_path / "b.pcrc").read_bytes()

    def test_seed_from_environment(self, off_file, tmp_path, monkeypatch):
        monkeypatch.setenv("PCR_SEED", "5")
        main(["sample", "--off", str(off_file), "--points", "32", "--out", str(tmp_path / "env.pcrc")])
        main(["sample", "--off", str(off_file), "--points", "32", "--seed", "5", "--out", str(tmp_path / "arg.pcrc")])
        assert (tmp_path / "env.pcrc").read_bytes() == (tmp_path / "arg.pcrc").read_bytes()

    def test_xyz_output(self, off_file, tmp_path):
        assert main(["sample", "--off", str(off_file), "--points", "16", "--out", str(tmp_path / "c.xyz")]) == 0
        assert len((tmp_path / "c.xyz").read_text().splitlines()) == 16

    def test_bad_off(self, tmp_path):
        bad = tmp_path / "bad.off"
        bad.write_text("OFF\n3 1 0\n0 0 0\n")
        assert main(["sample", "--off", str(bad), "--out", str(tmp_path / "x.pcrc")]) == 2


class TestTrain:
    def test_writes_checkpoint_and_history(self, tiny_ckpt):
        assert tiny_ckpt.exists() and tiny_ckpt.with_name("model.ckpt.bin").exists()
        rows = list(csv.reader(open(f"{tiny_ckpt}.history.csv")))
        assert rows[0] == ["epoch", "mean_loss", "lr"] and len(rows) == 2

    def test_resume(self, tiny_ckpt, tmp_path, cloud_dir):
        cfg = tmp_path / "train.cfg"
        cfg.write_text(cfg.read_text().replace("epochs = 1", "epochs = 2"))
        assert main(["train", "--config", str(cfg), "--data", str(cloud_dir), "--out", str(tiny_ckpt), "--resume"]) == 0
        rows = list(csv.reader(open(f"{tiny_ckpt}.history.csv")))
        assert [r[0] for r in rows[1:]] == ["1", "2"]

    @pytest.mark.parametrize("line,key", [("bogus = 3", "bogus"), ("loss = hinge", "loss")])
    def test_bad_config(self, tmp_path, cloud_dir, capsys, line, key):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(f"preset = tiny\n{line}\n")
        assert main(["train", "--config", str(cfg), "--data", str(cloud_dir), "--out", str(tmp_path / "m")]) == 2
        assert key in capsys.readouterr().err

    def test_empty_data_dir(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("preset = tiny\n")
        (tmp_path / "empty").mkdir()
        assert main(["train", "--config", str(cfg), "--data", str(tmp_path / "empty"), "--out", str(tmp_path / "m")]) == 2


class TestRegister:
    def test_icp_identity(self, cloud_dir, capsys):
        c = str(cloud_dir / "chair.pcrc")
        assert main(["register", "--method", "icp", "--source", c, "--template", c]) == 0
        lines = capsys.readouterr().out.splitlines()
        matrix = np.array([[float(v) for v in line.split()] for line in lines[:4]])
        np.testing.assert_allclose(matrix, np.eye(4), atol=1e-9)

    def test_pcrnet_needs_ckpt(self, cloud_dir, capsys):
        c = str(cloud_dir / "chair.pcrc")
        assert main(["register", "--method", "pcrnet-iter", "--source", c, "--template", c]) == 2
        assert "--ckpt" in capsys.readouterr().err

    def test_variant_mismatch(self, cloud_dir, tiny_ckpt):
        c = str(cloud_dir / "chair.pcrc")
        assert main(["register", "--method", "pcrnet", "--ckpt", str(tiny_ckpt), "--source", c, "--template", c]) == 2

    def test_pcrnet_iter_with_gt(self, cloud_dir, tiny_ckpt, tmp_path, capsys):
        tmpl = meshio.load_cloud(cloud_dir / "chair.pcrc")
        gt = geo.random_transform(np.random.default_rng(0), 20, 0.2)
        src = tmp_path / "src.pcrc"
        meshio.save_cloud(src, geo.apply_transform(gt, tmpl))
        gt_file = tmp_path / "gt.txt"
        gt_file.write_text(gt.inverse().to_text())
        argv = ["register", "--method", "pcrnet-iter", "--ckpt", str(tiny_ckpt), "--source", str(src),
                "--template", str(cloud_dir / "chair.pcrc"), "--gt", str(gt_file), "--max-iter", "3"]
        assert main(argv) == 0
        out = capsys.readouterr().out
        assert "rot_err_deg" in out and "trans_err" in out and "time_ms" in out
        assert "iterations 3" in out or "converged 1" in out


class TestBenchmark:
    def run(self, cloud_dir, out, *extra):
        return main(["benchmark", "--methods", "icp", "--templates", str(cloud_dir), "--pairs", "10",
                     "--noise-sigma", "0.01", "--seed", "3", "--out", str(out), *extra])

    def test_icp_rows(self, cloud_dir, tmp_path):
        assert self.run(cloud_dir, tmp_path / "r") == 0
        assert len(list(csv.reader((tmp_path / "r" / "detail.csv").open()))) == 11
        assert len(list(csv.reader((tmp_path / "r" / "summary.csv").open()))) == 2

    def test_reproducible(self, cloud_dir, tmp_path):
        for d in ("a", "b"):
            assert self.run(cloud_dir, tmp_path / d, "--no-timing") == 0
        for name in ("detail.csv", "summary.csv", "curve_icp.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_untrained_pcrnet_runs(self, cloud_dir, tmp_path, capsys):
        argv = ["benchmark", "--methods", "pcrnet,icp", "--templates", str(cloud_dir), "--pairs", "3",
                "--seed", "1", "--out", str(tmp_path / "u")]
        assert main(argv) == 0
        assert "untrained" in capsys.readouterr().err
        rows = list(csv.DictReader((tmp_path / "u" / "detail.csv").open()))
        assert {r["method"] for r in rows} == {"pcrnet", "icp"}

    def test_empty_templates(self, tmp_path):
        (tmp_path / "none").mkdir()
        assert main(["benchmark", "--methods", "icp", "--templates", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 2

    def test_unknown_method(self, cloud_dir, tmp_path):
        assert main(["benchmark", "--methods", "lk", "--templates", str(cloud_dir), "--out", str(tmp_path / "o")]) == 2


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["register"])
    assert exc.value.code == 2
