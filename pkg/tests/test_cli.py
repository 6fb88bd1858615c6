import csv
import hashlib

import numpy as np
import pytest

from noiseinit import formats, nets
from noiseinit.cli import main
from noiseinit.config import RunConfig, parse_text
from noiseinit.errors import ConfigError

SMALL_SIREN = ["--hidden-dim", "8", "--num-hidden-layers", "2"]
SMALL_CNN = ["--encoder-channels", "4,4", "--decoder-channels", "4,4", "--input-channels", "2",
             "--skip-channels", "2"]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_rows(path):
    with open(path) as f:
        return list(csv.reader(f))


@pytest.fixture
def image(tmp_path):
    yy, xx = np.mgrid[0:16, 0:16] / 15.0
    path = tmp_path / "img.pgm"
    formats.save_image(0.5 + 0.4 * np.sin(4 * xx + yy), path)
    return str(path)


class TestConfig:
    def test_parse_and_precedence(self, tmp_path):
        values = parse_text("seed = 4  # master\n\nhidden_dim = 16\nencoder_channels = 8,8\n")
        assert values == {"seed": 4, "hidden_dim": 16, "encoder_channels": (8, 8)}
        cfg = RunConfig(values)
        cfg.update({"seed": 9})
        assert cfg["seed"] == 9 and cfg["hidden_dim"] == 16 and cfg["omega0"] == 30.0

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            parse_text("bogus = 1\n")

    def test_dump_round_trip(self):
        cfg = RunConfig({"noise": "gaussian:0,1", "lr": 1e-4, "resample_each_iter": True})
        assert parse_text(cfg.dumps()) == cfg.values


class TestCommands:
    def test_init_then_pretrain_zero_iters(self, tmp_path):
        assert main(["init", "--size", "8", *SMALL_SIREN, "--out", str(tmp_path / "i")]) == 0
        assert main(["pretrain", "--size", "8", *SMALL_SIREN, "--iters", "0", "--noise", "gaussian:0,1",
                     "--out", str(tmp_path / "p")]) == 0
        assert (tmp_path / "i" / "init.params").read_bytes() == (tmp_path / "p" / "pretrained.params").read_bytes()
        assert (tmp_path / "p" / "config.resolved.txt").exists()

    def test_pretrain_writes_params_and_trace(self, tmp_path):
        args = ["pretrain", "--net", "siren", "--size", "8", *SMALL_SIREN, "--iters", "20", "--lr", "1e-4",
                "--noise", "gaussian:0,1", "--out", str(tmp_path)]
        assert main(args) == 0
        rows = read_rows(tmp_path / "pretrain_trace.csv")
        assert rows[0] == ["iter", "loss", "psnr"] and len(rows) == 21
        spec = nets.MlpSpec(hidden_dim=8, num_hidden_layers=2)
        assert len(formats.load_params(tmp_path / "pretrained.params", spec)) == nets.num_params(spec)

    def test_missing_noise(self, tmp_path, capsys):
        assert main(["pretrain", "--size", "8", "--out", str(tmp_path)]) == 2
        assert "'noise'" in capsys.readouterr().err

    def test_train_row_count_and_determinism(self, tmp_path, image):
        args = ["train", "represent", "--image", image, *SMALL_SIREN, "--iters", "12"]
        assert main([*args, "--out", str(tmp_path / "a")]) == 0
        assert main([*args, "--out", str(tmp_path / "b")]) == 0
        assert len(read_rows(tmp_path / "a" / "trace.csv")) == 1 + 13
        assert sha(tmp_path / "a" / "trace.csv") == sha(tmp_path / "b" / "trace.csv")
        assert formats.load_image(tmp_path / "a" / "output.pgm").pixels.shape == (16, 16)

    def test_train_from_config_file(self, tmp_path, image):
        assert main(["train", "denoise", "--image", image, *SMALL_CNN, "--iters", "3",
                     "--out", str(tmp_path / "a")]) == 0
        cfg = str(tmp_path / "a" / "config.resolved.txt")
        assert main(["train", "denoise", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
        assert sha(tmp_path / "a" / "trace.csv") == sha(tmp_path / "b" / "trace.csv")

    def test_train_superres_and_init_params(self, tmp_path, image):
        assert main(["init", "--net", "cnn", "--size", "64", *SMALL_CNN, "--out", str(tmp_path / "i")]) == 0
        args = ["train", "superres", "--image", image, *SMALL_CNN, "--factor", "4", "--iters", "2",
                "--init-params", str(tmp_path / "i" / "init.params"), "--out", str(tmp_path / "s")]
        assert main(args) == 0
        assert formats.load_image(tmp_path / "s" / "output.pgm").pixels.shape == (64, 64)

    def test_inpaint_needs_mask(self, tmp_path, image, capsys):
        assert main(["train", "inpaint", "--image", image, "--out", str(tmp_path)]) == 2
        assert "'mask'" in capsys.readouterr().err

    def test_inpaint_with_mask(self, tmp_path, image):
        m = np.ones((16, 16))
        m[4:8, 4:12] = 0
        formats.save_image(m, tmp_path / "mask.pgm")
        assert main(["train", "inpaint", "--image", image, "--mask", str(tmp_path / "mask.pgm"), *SMALL_CNN,
                     "--iters", "2", "--out", str(tmp_path / "o")]) == 0

    def test_bad_config_key_and_params(self, tmp_path):
        (tmp_path / "c.txt").write_text("colour = red\n")
        assert main(["init", "--config", str(tmp_path / "c.txt"), "--out", str(tmp_path)]) == 2
        (tmp_path / "junk.params").write_bytes(b"nope")
        assert main(["ntk", "--params", str(tmp_path / "junk.params"), "--out", str(tmp_path)]) == 2

    def test_ntk_outputs(self, tmp_path):
        assert main(["ntk", "--size", "16", *SMALL_SIREN, "--probe-size", "8", "--top-modes", "3",
                     "--out", str(tmp_path)]) == 0
        vals = [float(r[1]) for r in read_rows(tmp_path / "eigenvalues.csv")[1:]]
        assert len(vals) == 64 and vals == sorted(vals, reverse=True)
        report = dict(read_rows(tmp_path / "report.csv")[1:])
        assert float(report["band_width"]) >= 1 and 1 <= float(report["effective_rank"]) <= 64
        assert formats.load_matrix(tmp_path / "K.mat").shape == (64, 64)
        assert sorted(p.name for p in tmp_path.glob("mode_*.pgm")) == [
            "mode_001_power.pgm", "mode_002_power.pgm", "mode_003_power.pgm"]

    def test_ntk_probe_cap(self, tmp_path):
        assert main(["ntk", "--size", "16", *SMALL_SIREN, "--probe-size", "16", "--probe-cap", "100",
                     "--out", str(tmp_path)]) == 3

    def test_ntk_rejects_cnn(self, tmp_path):
        assert main(["ntk", "--net", "cnn", "--size", "16", "--out", str(tmp_path)]) == 2


class TestCompare:
    def test_schema_and_shared_targets(self, tmp_path, image):
        out = tmp_path / "c"
        assert main(["compare", "--task", "denoise", "--image", image, *SMALL_CNN, "--iters", "4",
                     "--pretrain-iters", "3", "--out", str(out)]) == 0
        summary = dict(read_rows(out / "summary.csv")[1:])
        for key in ("crossover_iter", "peak_psnr_iter_A", "peak_psnr_iter_B", "final_psnr_A", "final_psnr_B"):
            assert key in summary
        assert (out / "A" / "target.mat").read_bytes() == (out / "B" / "target.mat").read_bytes()
        assert len(read_rows(out / "B" / "pretrain_trace.csv")) == 1 + 3
        assert len(read_rows(out / "A" / "trace.csv")) == 1 + 5

    def test_represent_reports_ntk_pair(self, tmp_path, image):
        out = tmp_path / "r"
        assert main(["compare", "--task", "represent", "--image", image, *SMALL_SIREN, "--iters", "3",
                     "--pretrain-iters", "3", "--probe-size", "8", "--out", str(out)]) == 0
        summary = dict(read_rows(out / "summary.csv")[1:])
        assert "band_width_init" in summary and "effective_rank_pretrained" in summary
        assert (out / "A" / "ntk" / "report.csv").exists() and (out / "B" / "ntk" / "report.csv").exists()

    def test_rerun_from_resolved_config(self, tmp_path, image):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["compare", "--task", "inpaint", "--image", image, *SMALL_CNN, "--iters", "3",
                     "--pretrain-iters", "2", "--out", str(a)]) == 0
        assert main(["compare", "--config", str(a / "config.resolved.txt"), "--out", str(b)]) == 0
        for name in ("A/trace.csv", "B/trace.csv", "B/pretrain_trace.csv", "summary.csv"):
            assert sha(a / name) == sha(b / name)
