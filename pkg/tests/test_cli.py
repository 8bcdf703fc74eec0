import json
import os

import numpy as np
import pytest

from tain.cli import load_config_file, main, resolve_configs
from tain.data import save_image
from tain.model import ModelConfig, TainModel
from tain.training import save_checkpoint

from synthdata import moving_triplet


def write_triplet_dir(root, n=2, size=16):
    for i in range(n):
        t = moving_triplet(i, size=size)
        d = root / f"clip{i}"
        d.mkdir(parents=True)
        save_image(d / "frame0.png", t.i0)
        save_image(d / "frame1.png", t.it)
        save_image(d / "frame2.png", t.i1)


def toy_ckpt(tmp_path, **overrides):
    cfg = dict(scale=2, channels=8, n_groups=2, n_blocks=1, reduction=4, seed=0)
    cfg.update(overrides)
    model = TainModel(ModelConfig(**cfg))
    path = tmp_path / "model.tain"
    save_checkpoint(path, model, step=0)
    return path, model


class TestConfigFiles:
    def test_sections_parse_with_types(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(
            "[model]\nscale = 2\nchannels = 8\nreduction = 4\nenable_cs = false\n"
            "[train]\nlr = 5e-4\nmax_steps = 7\n"
            "[augment]\ncrop_size = 8x12\nflip_h = 0\n"
        )
        model_cfg, train_cfg, aug_cfg = resolve_configs(str(p), toy=False)
        assert model_cfg.scale == 2 and model_cfg.channels == 8
        assert model_cfg.enable_cs is False
        assert train_cfg.lr == 5e-4 and train_cfg.max_steps == 7
        assert aug_cfg.crop_size == (8, 12) and aug_cfg.flip_h == 0.0

    def test_unknown_key_is_named_in_error(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("[model]\nscalee = 2\n")
        with pytest.raises(Exception, match="scalee"):
            load_config_file(str(p))

    def test_unknown_section_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("[optimizer]\nlr = 1\n")
        with pytest.raises(Exception, match="optimizer"):
            load_config_file(str(p))

    def test_bad_value_names_key(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("[train]\nlr = fast\n")
        with pytest.raises(Exception, match="train.lr"):
            load_config_file(str(p))

    def test_toy_preset_overrides_file(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("[model]\nscale = 8\nchannels = 64\n")
        model_cfg, _, aug_cfg = resolve_configs(str(p), toy=True)
        assert model_cfg.scale == 2
        assert model_cfg.channels == 16
        assert model_cfg.n_groups == 2
        assert aug_cfg.crop_size == (64, 64)


class TestTrainCommand:
    def test_toy_train_writes_artifacts(self, tmp_path, capsys):
        data = tmp_path / "data"
        write_triplet_dir(data, n=2, size=16)
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "[model]\nscale = 2\nchannels = 8\nn_groups = 2\nn_blocks = 1\nreduction = 4\n"
            "[train]\nmax_steps = 3\ncheckpoint_every = 2\nbatch_size = 1\n"
            "[augment]\ncrop_size = 16\nflip_h = 0\n"
        )
        out = tmp_path / "run"
        rc = main([
            "train", "--config", str(cfg),
            "--data", str(data), "--out", str(out),
        ])
        assert rc == 0
        assert (out / "loss.csv").exists()
        assert (out / "checkpoint_final.tain").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["model"]["channels"] == 8
        assert manifest["train"]["max_steps"] == 3
        assert "final_loss" in manifest["results"]
        assert "trained 3 steps" in capsys.readouterr().out

    def test_missing_data_dir_errors(self, tmp_path, capsys):
        rc = main(["train", "--toy", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
        assert rc != 0
        err = capsys.readouterr().err
        assert err.startswith("error: ") and err.count("\n") == 1

    def test_bad_config_key_errors(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("[model]\nwidth = 3\n")
        data = tmp_path / "data"
        write_triplet_dir(data, n=1)
        rc = main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "o")])
        assert rc != 0
        assert "width" in capsys.readouterr().err


class TestInferCommand:
    def test_writes_png_and_manifest(self, tmp_path, capsys):
        ckpt, _ = toy_ckpt(tmp_path)
        t = moving_triplet(0, size=16)
        save_image(tmp_path / "f0.png", t.i0)
        save_image(tmp_path / "f1.png", t.i1)
        out = tmp_path / "pred.png"
        rc = main([
            "infer", "--ckpt", str(ckpt),
            "--frame0", str(tmp_path / "f0.png"), "--frame1", str(tmp_path / "f1.png"),
            "--out", str(out),
        ])
        assert rc == 0
        from PIL import Image
        with Image.open(out) as im:
            assert im.size == (16, 16) and im.mode == "RGB"
        manifest = json.loads((tmp_path / "pred.manifest.json").read_text())
        assert manifest["command"] == "infer"
        assert manifest["artifacts"]["prediction"] == str(out)

    def test_repeat_runs_are_byte_identical(self, tmp_path):
        ckpt, _ = toy_ckpt(tmp_path)
        t = moving_triplet(1, size=16)
        save_image(tmp_path / "f0.png", t.i0)
        save_image(tmp_path / "f1.png", t.i1)
        args = [
            "infer", "--ckpt", str(ckpt),
            "--frame0", str(tmp_path / "f0.png"), "--frame1", str(tmp_path / "f1.png"),
        ]
        assert main(args + ["--out", str(tmp_path / "a.png")]) == 0
        assert main(args + ["--out", str(tmp_path / "b.png")]) == 0
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_odd_sizes_go_through_padding(self, tmp_path):
        ckpt, _ = toy_ckpt(tmp_path)
        rng = np.random.default_rng(0)
        save_image(tmp_path / "f0.png", rng.uniform(0, 1, (15, 17, 3)))
        save_image(tmp_path / "f1.png", rng.uniform(0, 1, (15, 17, 3)))
        out = tmp_path / "pred.png"
        rc = main([
            "infer", "--ckpt", str(ckpt),
            "--frame0", str(tmp_path / "f0.png"), "--frame1", str(tmp_path / "f1.png"),
            "--out", str(out),
        ])
        assert rc == 0
        from PIL import Image
        with Image.open(out) as im:
            assert im.size == (17, 15)

    def test_mismatched_frames_error(self, tmp_path, capsys):
        ckpt, _ = toy_ckpt(tmp_path)
        rng = np.random.default_rng(0)
        save_image(tmp_path / "f0.png", rng.uniform(0, 1, (16, 16, 3)))
        save_image(tmp_path / "f1.png", rng.uniform(0, 1, (16, 18, 3)))
        rc = main([
            "infer", "--ckpt", str(ckpt),
            "--frame0", str(tmp_path / "f0.png"), "--frame1", str(tmp_path / "f1.png"),
            "--out", str(tmp_path / "pred.png"),
        ])
        assert rc != 0
        assert "error:" in capsys.readouterr().err


class TestEvalCommand:
    def test_identity_maxes_all_metrics(self, tmp_path, capsys):
        data = tmp_path / "data"
        write_triplet_dir(data, n=2)
        report_path = tmp_path / "report.json"
        rc = main(["eval", "--identity", "--data", str(data), "--report", str(report_path)])
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert report["aggregate"]["psnr"] == 100.0
        assert report["aggregate"]["ssim"] == 1.0
        assert report["aggregate"]["ie"] == 0.0
        assert len(report["items"]) == 2

    def test_checkpoint_eval_writes_report_and_manifest(self, tmp_path):
        data = tmp_path / "data"
        write_triplet_dir(data, n=2)
        ckpt, _ = toy_ckpt(tmp_path)
        report_path = tmp_path / "report.json"
        rc = main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--report", str(report_path)])
        assert rc == 0
        report = json.loads(report_path.read_text())
        items = report["items"]
        agg = report["aggregate"]
        assert agg["psnr"] == pytest.approx(np.mean([it["psnr"] for it in items]), abs=1e-9)
        manifest = json.loads((tmp_path / "report.manifest.json").read_text())
        assert manifest["results"]["psnr"] == agg["psnr"]

    def test_report_json_key_order_is_stable(self, tmp_path):
        data = tmp_path / "data"
        write_triplet_dir(data, n=1)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["eval", "--identity", "--data", str(data), "--report", str(a)]) == 0
        assert main(["eval", "--identity", "--data", str(data), "--report", str(b)]) == 0
        assert a.read_text() == b.read_text()

    def test_needs_ckpt_or_identity(self, tmp_path, capsys):
        data = tmp_path / "data"
        write_triplet_dir(data, n=1)
        rc = main(["eval", "--data", str(data), "--report", str(tmp_path / "r.json")])
        assert rc != 0
        assert "--ckpt" in capsys.readouterr().err


class TestBenchCommand:
    def test_toy_bench_prints_and_writes_manifest(self, tmp_path, capsys):
        out = tmp_path / "bench.json"
        rc = main(["bench", "--toy", "--size", "16", "--n", "3", "--out", str(out)])
        assert rc == 0
        line = capsys.readouterr().out.strip()
        assert "ms" in line and "+-" in line
        doc = json.loads(out.read_text())
        assert doc["results"]["n"] == 3
        assert doc["results"]["mean_ms"] > 0
        assert doc["model"]["channels"] == 16

    def test_needs_a_model_source(self, tmp_path, capsys):
        rc = main(["bench", "--n", "2", "--out", str(tmp_path / "b.json")])
        assert rc != 0
        assert "error:" in capsys.readouterr().err


class TestVisualizeCommand:
    def run_viz(self, tmp_path, extra=(), size=16):
        ckpt, _ = toy_ckpt(tmp_path)
        t = moving_triplet(0, size=size)
        save_image(tmp_path / "f0.png", t.i0)
        save_image(tmp_path / "f1.png", t.i1)
        out = tmp_path / "viz"
        rc = main([
            "visualize", "--ckpt", str(ckpt),
            "--frame0", str(tmp_path / "f0.png"), "--frame1", str(tmp_path / "f1.png"),
            "--out", str(out), *extra,
        ])
        return rc, out

    def test_writes_one_intermediate_per_group(self, tmp_path):
        rc, out = self.run_viz(tmp_path)
        assert rc == 0
        names = sorted(os.listdir(out))
        assert "intermediate_1.png" in names
        assert "intermediate_2.png" in names
        assert "intermediate_3.png" not in names  # 2 groups in the toy model
        assert {"d0_stage1.png", "d1_stage1.png", "a0_stage1.png", "a1_stage1.png"} <= set(names)
        assert "manifest.json" in names

    def test_attention_maps_sum_to_white(self, tmp_path):
        from PIL import Image

        rc, out = self.run_viz(tmp_path)
        assert rc == 0
        with Image.open(out / "a0_stage1.png") as im:
            a0 = np.asarray(im, dtype=np.int32)
        with Image.open(out / "a1_stage1.png") as im:
            a1 = np.asarray(im, dtype=np.int32)
        total = a0 + a1
        assert np.all(np.abs(total - 255) <= 1)

    def test_query_out_of_bounds_errors(self, tmp_path, capsys):
        rc, _ = self.run_viz(tmp_path, extra=["--query", "99,3"])
        assert rc != 0
        assert "outside" in capsys.readouterr().err

    def test_malformed_query_errors(self, tmp_path, capsys):
        rc, _ = self.run_viz(tmp_path, extra=["--query", "center"])
        assert rc != 0
        assert "x,y" in capsys.readouterr().err

    def test_bad_resgroup_errors(self, tmp_path, capsys):
        rc, _ = self.run_viz(tmp_path, extra=["--resgroup", "5"])
        assert rc != 0
        assert "1..1" in capsys.readouterr().err

    def test_d_map_is_grayscale_with_marker(self, tmp_path):
        from PIL import Image

        rc, out = self.run_viz(tmp_path, extra=["--query", "8,8"])
        assert rc == 0
        with Image.open(out / "d0_stage1.png") as im:
            assert im.mode == "L"
            d = np.asarray(im)
        assert d.shape == (8, 8)  # 16x16 frame on the scale-2 grid
        assert d.max() == 255  # the argmax cell is burned to white

    def test_manifest_records_default_query(self, tmp_path):
        rc, out = self.run_viz(tmp_path)
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["inputs"]["query"] == [8, 8]
        assert manifest["inputs"]["resgroup"] == 1


class TestEntryPoint:
    def test_console_script_runs(self, tmp_path):
        import subprocess, sys

        proc = subprocess.run(
            [sys.executable, "-m", "tain.cli", "--version"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "tain" in proc.stdout

    def test_subprocess_error_is_single_line(self, tmp_path):
        import subprocess, sys

        proc = subprocess.run(
            [sys.executable, "-m", "tain.cli", "infer",
             "--ckpt", str(tmp_path / "missing.tain"),
             "--frame0", "x.png", "--frame1", "y.png", "--out", "z.png"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 2
        assert proc.stderr.startswith("error: ")
        assert proc.stderr.strip().count("\n") == 0
