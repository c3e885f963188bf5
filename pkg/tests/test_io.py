import numpy as np
import pytest

from nsamp import io


class TestCsv:
    def test_round_trip_is_exact(self, tmp_path):
        vals = np.random.default_rng(0).standard_normal(5) * 1e-7
        rows = [{"t": i, "x": v} for i, v in enumerate(vals)]
        path = tmp_path / "a.csv"
        io.write_csv(path, ["t", "x"], rows)
        cols = io.read_csv(path, required=("t", "x"))
        np.testing.assert_array_equal(cols["t"], np.arange(5))
        np.testing.assert_array_equal(cols["x"], vals)
        assert cols["t"].dtype.kind == "i"

    def test_nan_written_and_read(self, tmp_path):
        path = tmp_path / "a.csv"
        io.write_csv(path, ["t", "x"], [{"t": 0, "x": float("nan")}])
        assert "nan" in path.read_text()
        assert np.isnan(io.read_csv(path)["x"][0])

    def test_missing_column(self, tmp_path):
        path = tmp_path / "a.csv"
        io.write_csv(path, ["t"], [{"t": 0}])
        with pytest.raises(io.SchemaError, match="missing column"):
            io.read_csv(path, required=("t", "tau_sq"))

    def test_empty_file(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("")
        with pytest.raises(io.SchemaError, match="empty"):
            io.read_csv(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("t,x\n0,abc\n")
        with pytest.raises(io.SchemaError, match="column x"):
            io.read_csv(path)

    def test_format(self):
        assert io.fmt(3) == "3"
        assert io.fmt(np.int64(7)) == "7"
        assert float(io.fmt(0.1)) == 0.1


class TestPgm:
    def test_round_trip(self, tmp_path):
        img = np.random.default_rng(1).integers(0, 256, (5, 7)) / 255.0
        path = tmp_path / "a.pgm"
        io.write_pgm(path, img)
        out = io.read_pgm(path)
        assert out.shape == (5, 7)
        np.testing.assert_allclose(out, img, atol=1e-15)

    def test_comments_in_header(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 1\n# max\n255\n" + bytes([0, 255]))
        np.testing.assert_array_equal(io.read_pgm(path), [[0.0, 1.0]])

    def test_ascii_pgm_rejected(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_bytes(b"P2\n1 1\n255\n0\n")
        with pytest.raises(io.SchemaError, match="binary PGM"):
            io.read_pgm(path)

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(io.SchemaError, match="8-bit"):
            io.read_pgm(path)

    def test_non_2d_rejected(self, tmp_path):
        with pytest.raises(io.SchemaError):
            io.write_pgm(tmp_path / "a.pgm", np.zeros(3))
