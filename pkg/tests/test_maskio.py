import numpy as np
import pytest
from hypothesis import given, strategies as st

from jointcbf.maskio import MAGIC, MaskFormatError, read_masks, write_masks


def test_round_trip_with_header(tmp_path, rng):
    masks = rng.uniform(0, 1, (2, 9, 5))
    path = tmp_path / "m.bin"
    write_masks(path, masks, 16, 4, dtype="float64")
    back, header = read_masks(path, with_header=True)
    np.testing.assert_array_equal(back, masks)
    assert header == dict(dtype="float64", sources=2, frames=9, bins=5, frame_len=16,
                          frame_shift=4)


def test_exact_bytes(tmp_path):
    path = tmp_path / "m.bin"
    write_masks(path, np.array([[[0.5, 1.0]]]))
    raw = path.read_bytes()
    header = (f"{MAGIC}\ndtype float32\nsources 1\nframes 1\nbins 2\nend\n").encode()
    assert raw == header + np.array([0.5, 1.0], "<f4").tobytes()


def test_two_dimensional_input_is_one_source(tmp_path, rng):
    path = tmp_path / "m.bin"
    write_masks(path, rng.uniform(0, 1, (4, 3)))
    assert read_masks(path).shape == (1, 4, 3)


@given(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6), st.sampled_from(["float32", "float64"]))
def test_round_trip_property(tmp_path_factory, I, T, F, dtype):
    path = tmp_path_factory.mktemp("m") / "m.bin"
    masks = np.random.default_rng(I * 100 + T * 10 + F).uniform(0, 1, (I, T, F))
    write_masks(path, masks, dtype=dtype)
    tol = 1e-7 if dtype == "float32" else 0
    np.testing.assert_allclose(read_masks(path), masks, atol=tol)


def write_raw(path, header, payload=b""):
    path.write_bytes(header.encode() + payload)
    return path


@pytest.mark.parametrize("header,payload", [
    ("NOPE 1\ndtype float32\nsources 1\nframes 1\nbins 1\nend\n", b"\0" * 4),
    ("JCBF-MASK 1\ndtype float16\nsources 1\nframes 1\nbins 1\nend\n", b"\0" * 2),
    ("JCBF-MASK 1\ndtype float32\nsources 1\nbins 1\nend\n", b"\0" * 4),
    ("JCBF-MASK 1\ndtype float32\nsources 1\nframes 1\nbins 1\nend\n", b"\0" * 3),
    ("JCBF-MASK 1\ndtype float32\nsources 1\nframes 1\nbins 1\nend\n", b"\0" * 8),
    ("JCBF-MASK 1\ndtype float32\nsources x\nframes 1\nbins 1\nend\n", b"\0" * 4),
    ("JCBF-MASK 1\ndtype float32\nsources 1\nframes 1\nbins 1\n", b"\0" * 4),
    ("JCBF-MASK 1\ndtype float32\nsources 1 2\nframes 1\nbins 1\nend\n", b"\0" * 4),
    ("JCBF-MASK 1\ndtype float32\nsources 1\nframes 1\nbins 1\nend\n",
     np.array([np.nan], "<f4").tobytes()),
])
def test_malformed_files(tmp_path, header, payload):
    with pytest.raises(MaskFormatError):
        read_masks(write_raw(tmp_path / "bad.bin", header, payload))


def test_format_error_is_value_error():
    assert issubclass(MaskFormatError, ValueError)


def test_writer_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        write_masks(tmp_path / "m.bin", np.zeros((1, 2, 3, 4)))
    with pytest.raises(ValueError):
        write_masks(tmp_path / "m.bin", np.zeros((1, 2, 3)), dtype="int8")
