import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lowdose.io import (
    FormatError,
    parse_config,
    read_config,
    read_pgm,
    read_raw,
    read_table,
    write_pgm,
    write_raw,
    write_table,
)


class TestRaw:
    @settings(max_examples=30, deadline=None)
    @given(
        data=arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.floats(-1e6, 1e6, width=32)),
        kind=st.sampled_from(["image", "sinogram", "weights", "mask", "pvalues"]),
    )
    def test_round_trip_bit_exact(self, tmp_path_factory, data, kind):
        path = tmp_path_factory.mktemp("raw") / "g.raw"
        write_raw(path, data, kind, "counts")
        got = read_raw(path, kind)
        assert got.data.tobytes() == data.astype("<f4").tobytes()
        assert (got.kind, got.stage) == (kind, "counts")

    def test_header_layout(self, tmp_path):
        write_raw(tmp_path / "a.raw", np.zeros((2, 3)), "image")
        blob = (tmp_path / "a.raw").read_bytes()
        assert blob.startswith(b"LDCT1 image 2 3 none\n")
        assert len(blob) == len(b"LDCT1 image 2 3 none\n") + 24

    def test_write_rejects(self, tmp_path):
        with pytest.raises(ValueError):
            write_raw(tmp_path / "a", np.zeros(3), "image")
        with pytest.raises(ValueError):
            write_raw(tmp_path / "a", np.zeros((2, 2)), "volume")
        with pytest.raises(ValueError):
            write_raw(tmp_path / "a", np.zeros((2, 2)), "image", "two words")

    @pytest.mark.parametrize(
        "blob, where",
        [
            (b"LDCT2 image 1 1 x\n\0\0\0\0", "byte 0"),
            (b"LDCT1 image 1\n", "line 1"),
            (b"LDCT1 image a 1 x\n\0\0\0\0", "line 1"),
            (b"LDCT1 image 2 2 x\n\0\0\0\0", "byte offset 18"),
            (b"LDCT1 cube 1 1 x\n\0\0\0\0", "line 1"),
            (b"LDCT1 image 0 1 x\n", "line 1"),
            (b"no newline at all", "line 1"),
        ],
    )
    def test_malformed(self, tmp_path, blob, where):
        path = tmp_path / "bad.raw"
        path.write_bytes(blob)
        with pytest.raises(FormatError, match=where):
            read_raw(path)

    def test_kind_enforced(self, tmp_path):
        write_raw(tmp_path / "a.raw", np.zeros((2, 2)), "image")
        with pytest.raises(FormatError, match="expected a sinogram"):
            read_raw(tmp_path / "a.raw", "sinogram")


class TestTable:
    def test_round_trip(self, tmp_path):
        write_table(tmp_path / "t.csv", ["a", "b"], [(0.1, "x"), (2, "y")])
        header, rows = read_table(tmp_path / "t.csv")
        assert header == ["a", "b"] and rows == [["0.1", "x"], ["2", "y"]]

    def test_column_count_fixed(self, tmp_path):
        with pytest.raises(ValueError):
            write_table(tmp_path / "t.csv", ["a", "b"], [(1, 2, 3)])
        (tmp_path / "bad.csv").write_text("a,b\n1,2\n3\n")
        with pytest.raises(FormatError, match="line 3"):
            read_table(tmp_path / "bad.csv")
        (tmp_path / "empty.csv").write_text("")
        with pytest.raises(FormatError):
            read_table(tmp_path / "empty.csv")


class TestPGM:
    def test_inverse_rescale(self, tmp_path, rng):
        img = rng.uniform(-0.3, 2.0, size=(7, 11))
        vmin, vmax = write_pgm(tmp_path / "a.pgm", img)
        back = read_pgm(tmp_path / "a.pgm")
        assert back.shape == (7, 11)
        assert np.abs(back - img).max() <= (vmax - vmin) / 65535
        raw = read_pgm(tmp_path / "a.pgm", rescale=False)
        assert raw.min() == 0 and raw.max() == 65535

    def test_clamps(self, tmp_path):
        img = np.array([[-1.0, 0.5], [2.0, 1.0]])
        write_pgm(tmp_path / "a.pgm", img, vmin=0.0, vmax=1.0)
        np.testing.assert_allclose(read_pgm(tmp_path / "a.pgm"), [[0.0, 0.5], [1.0, 1.0]], atol=1e-5)

    def test_constant_image(self, tmp_path):
        assert write_pgm(tmp_path / "a.pgm", np.full((3, 3), 2.0)) == (2.0, 3.0)

    def test_bad_file(self, tmp_path):
        (tmp_path / "a.pgm").write_bytes(b"P2\n2 2\n65535\n0 0 0 0")
        with pytest.raises(FormatError):
            read_pgm(tmp_path / "a.pgm")


class TestConfig:
    SCHEMA = {"i0": float, "seed": int, "method": str, "unweighted": bool}

    def test_parse(self):
        text = "# comment\ni0 = 20   # inline\n\nseed=3\nmethod = pg-nll\nunweighted = yes\n"
        assert parse_config(text, self.SCHEMA) == {"i0": 20.0, "seed": 3, "method": "pg-nll", "unweighted": True}

    def test_dashes(self):
        assert parse_config("max-iters = 5", {"max_iters": int}) == {"max_iters": 5}

    @pytest.mark.parametrize(
        "text, where",
        [("i0 20", "line 1"), ("\nbogus = 1", "line 2"), ("seed = 1.5", "line 1"), ("i0 = nan", "line 1"), (" = 3", "line 1"), ("unweighted = maybe", "line 1")],
    )
    def test_errors(self, text, where):
        with pytest.raises(FormatError, match=where):
            parse_config(text, self.SCHEMA)

    def test_read_file(self, tmp_path):
        (tmp_path / "c.cfg").write_text("seed = 9\n")
        assert read_config(tmp_path / "c.cfg", self.SCHEMA) == {"seed": 9}
        assert parse_config("anything = goes") == {"anything": "goes"}
