import numpy as np
import pytest

from noiseinit import formats, nets
from noiseinit.errors import FormatError
from noiseinit.tasks import TrainingTrace
from noiseinit.tensor import Rng


def write_bytes(path, data):
    path.write_bytes(data)
    return path


class TestImages:
    def test_p5_scaling(self, tmp_path):
        p = write_bytes(tmp_path / "a.pgm", b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
        img = formats.load_image(p)
        assert img.source_depth == 8 and img.pixels.shape == (2, 2)
        assert np.array_equal(img.pixels.ravel(), np.array([0, 128, 255, 64]) / 255)
        assert img.pixels[0, 1] == pytest.approx(0.50196, abs=1e-5)

    def test_header_comments_and_16_bit(self, tmp_path):
        payload = np.array([0, 1000, 65535], dtype=">u2").tobytes()
        p = write_bytes(tmp_path / "b.pgm", b"P5 # comment\n3 # w\n1\n65535\n" + payload)
        img = formats.load_image(p)
        assert img.source_depth == 16
        assert np.allclose(img.pixels, [[0, 1000 / 65535, 1.0]])

    def test_ppm_luma(self, tmp_path):
        p = write_bytes(tmp_path / "c.ppm", b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        img = formats.load_image(p)
        assert img.is_color and img.grayscale()[0, 0] == pytest.approx(0.299, abs=1e-15)

    def test_round_trip_bytes(self, tmp_path):
        raw = np.random.default_rng(0).integers(0, 256, (7, 5)).astype(np.uint8)
        p = write_bytes(tmp_path / "d.pgm", b"P5\n5 7\n255\n" + raw.tobytes())
        formats.save_image(formats.load_image(p).pixels, tmp_path / "e.pgm")
        again = formats.load_image(tmp_path / "e.pgm").pixels
        assert np.array_equal(np.round(again * 255).astype(np.uint8), raw)
        assert (tmp_path / "e.pgm").read_bytes() == p.read_bytes()

    def test_color_round_trip(self, tmp_path):
        img = np.random.default_rng(1).integers(0, 256, (3, 4, 2)) / 255.0
        formats.save_image(img, tmp_path / "f.ppm")
        assert np.array_equal(formats.load_image(tmp_path / "f.ppm").pixels, img)

    def test_quantize_rules(self):
        q = formats.quantize(np.array([0.0, 0.5, 1.0, 1.2, -0.3, 0.25]))
        assert list(q) == [0, 128, 255, 255, 0, 64]

    @pytest.mark.parametrize("data,match", [
        (b"P3\n1 1\n255\n0", "magic"),
        (b"P5\n2 2\n", "byte"),
        (b"P5\n2 x\n255\n\x00\x00\x00\x00", "byte"),
        (b"P5\n2 2\n255\n\x00", "truncated"),
    ])
    def test_malformed(self, tmp_path, data, match):
        with pytest.raises(FormatError, match=match):
            formats.load_image(write_bytes(tmp_path / "bad.pgm", data))


class TestMatrices:
    def test_round_trip(self, tmp_path):
        m = np.random.default_rng(2).normal(size=(32, 32))
        formats.save_matrix(m, tmp_path / "m.mat")
        back = formats.load_matrix(tmp_path / "m.mat")
        assert back.tobytes() == m.tobytes()

    def test_layout(self, tmp_path):
        formats.save_matrix(np.array([[1.0, 2.0, 3.0]]), tmp_path / "m.mat")
        data = (tmp_path / "m.mat").read_bytes()
        assert data[:4] == b"NTKM"
        assert data[4:8] == (2).to_bytes(4, "little")
        assert data[8:24] == (1).to_bytes(8, "little") + (3).to_bytes(8, "little")
        assert np.frombuffer(data[24:], "<f8").tolist() == [1.0, 2.0, 3.0]

    def test_empty(self, tmp_path):
        formats.save_matrix(np.zeros((0, 0)), tmp_path / "z.mat")
        assert formats.load_matrix(tmp_path / "z.mat").shape == (0, 0)

    def test_truncated(self, tmp_path):
        formats.save_matrix(np.ones((4, 4)), tmp_path / "t.mat")
        data = (tmp_path / "t.mat").read_bytes()
        for cut in (2, 6, 12, len(data) - 3):
            write_bytes(tmp_path / "cut.mat", data[:cut])
            with pytest.raises(FormatError):
                formats.load_matrix(tmp_path / "cut.mat")


class TestParams:
    def test_round_trip_and_spec_check(self, tmp_path):
        spec = nets.MlpSpec(hidden_dim=6, num_hidden_layers=2)
        p = nets.init_params(spec, Rng(0))
        formats.save_params(p, spec, tmp_path / "p.params")
        assert formats.load_params(tmp_path / "p.params", spec).values.tobytes() == p.values.tobytes()
        with pytest.raises(FormatError, match="different network"):
            formats.load_params(tmp_path / "p.params", nets.MlpSpec(hidden_dim=7, num_hidden_layers=2))

    def test_truncated(self, tmp_path):
        spec = nets.MlpSpec(hidden_dim=3, num_hidden_layers=1)
        formats.save_params(nets.zeros(spec), spec, tmp_path / "p.params")
        data = (tmp_path / "p.params").read_bytes()
        write_bytes(tmp_path / "q.params", data[:-8])
        with pytest.raises(FormatError):
            formats.load_params(tmp_path / "q.params", spec)


class TestTraceCsv:
    def test_empty(self, tmp_path):
        formats.write_trace_csv(TrainingTrace(), tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text() == "iter,loss,psnr\n"
        assert len(formats.read_trace_csv(tmp_path / "t.csv")) == 0

    def test_single_record(self, tmp_path):
        t = TrainingTrace()
        t.append(0, 0.5, 20.0)
        formats.write_trace_csv(t, tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().splitlines() == ["iter,loss,psnr", "0,0.5,20"]
        back = formats.read_trace_csv(tmp_path / "t.csv")
        assert back.records == t.records

    def test_thousand_records_exact(self, tmp_path):
        g = np.random.default_rng(3)
        t = TrainingTrace()
        for i in range(1000):
            t.append(2 * i, float(g.random()), None if i % 7 == 0 else float(g.normal() * 30))
        formats.write_trace_csv(t, tmp_path / "t.csv")
        back = formats.read_trace_csv(tmp_path / "t.csv")
        assert len(back) == 1000 and np.all(np.diff(back.iters) > 0)
        assert back.records == t.records
