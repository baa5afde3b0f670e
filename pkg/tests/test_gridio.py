import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from nfd.errors import FormatError, InvalidArgument
from nfd.grid import GridTensor, LabeledDataset
from nfd.gridio import (dataset_from_bytes, dataset_to_bytes, grid_from_bytes, grid_to_bytes, load_external,
                        parse_cifar10, parse_idx, read_dataset, read_grid, write_dataset, write_grid)

f32_grids = hnp.arrays(
    np.float32,
    st.tuples(st.integers(1, 3), st.integers(1, 5)).flatmap(
        lambda t: st.tuples(st.just(t[0]), *[st.integers(1, 4)] * t[1])),
    elements=st.floats(-1e6, 1e6, width=32),
)


@settings(max_examples=60)
@given(f32_grids)
def test_grid_roundtrip_bit_exact(arr):
    g = GridTensor(arr.astype(np.float64))
    buf = grid_to_bytes(g)
    back = grid_from_bytes(buf)
    assert back == g
    assert grid_to_bytes(back) == buf


def test_grid_header_layout():
    g = GridTensor(np.zeros((2, 3, 1)))
    buf = grid_to_bytes(g)
    assert buf[:4] == b"GRD1"
    assert struct.unpack("<BBH2I", buf[4:16]) == (2, 0, 2, 3, 1)
    assert len(buf) == 16 + 4 * 6


def test_files_roundtrip(tmp_path, rng):
    g = GridTensor(rng.random((3, 4, 5)).astype(np.float32))
    write_grid(g, tmp_path / "a.grd")
    assert read_grid(tmp_path / "a.grd") == g
    ds = LabeledDataset([g, g], [1, 0], 2)
    write_dataset(ds, tmp_path / "d.lds")
    raw = (tmp_path / "d.lds").read_bytes()
    back = read_dataset(tmp_path / "d.lds")
    assert back == ds
    assert dataset_to_bytes(back) == raw


@pytest.mark.parametrize("mutate,offset", [
    (lambda b: b"XRD1" + b[4:], 0),
    (lambda b: b[:-3], 12),
    (lambda b: b[:10], 8),
    (lambda b: b + b"\0", 20),
])
def test_grid_format_errors(mutate, offset):
    buf = grid_to_bytes(GridTensor(np.zeros((1, 2))))
    with pytest.raises(FormatError) as info:
        grid_from_bytes(mutate(buf))
    assert info.value.offset == offset
    assert info.value.kind == "format-error"


def test_grid_dim_overflow():
    buf = b"GRD1" + struct.pack("<BBH2I", 2, 0, 1, 0xFFFFFFFF, 0xFFFFFFFF)
    with pytest.raises(FormatError) as info:
        grid_from_bytes(buf)
    assert info.value.offset == 8


def test_dataset_bad_label():
    ds = LabeledDataset([GridTensor(np.zeros((1, 1)))], [0], 1)
    buf = bytearray(dataset_to_bytes(ds))
    buf[12] = 5
    with pytest.raises(FormatError) as info:
        dataset_from_bytes(bytes(buf))
    assert info.value.offset == 12


def test_cifar_record():
    pixels = np.arange(3072, dtype=np.uint8)
    record = bytes([7]) + pixels.tobytes()
    ds = parse_cifar10(record * 2)
    assert len(ds) == 2 and ds.labels == [7, 7] and ds.class_count == 10
    g = ds.instances[0]
    assert g.channels == 3 and g.shape == (32, 32)
    assert g.data[0, 0, 1] == pytest.approx(1 / 255)
    assert g.data[1, 0, 0] == pytest.approx((1024 % 256) / 255)
    assert g.data[2, 31, 31] == pytest.approx((3071 % 256) / 255)


def test_cifar_truncated():
    with pytest.raises(FormatError) as info:
        parse_cifar10(bytes(3073 + 10))
    assert info.value.offset == 3073


def test_idx_images_and_labels(tmp_path):
    img = bytes([0, 0, 8, 3]) + struct.pack(">3I", 1, 2, 2) + bytes([0, 255, 51, 102])
    lab = bytes([0, 0, 8, 1]) + struct.pack(">I", 1) + bytes([4])
    assert parse_idx(img).shape == (1, 2, 2)
    (tmp_path / "i").write_bytes(img)
    (tmp_path / "l").write_bytes(lab)
    ds = load_external(tmp_path / "i", "idx", tmp_path / "l")
    assert ds.labels == [4] and ds.class_count == 5
    np.testing.assert_allclose(ds.instances[0].data, [[[0, 1], [0.2, 0.4]]])


def test_idx_errors(tmp_path):
    with pytest.raises(FormatError):
        parse_idx(bytes([1, 0, 8, 1, 0, 0, 0, 1, 0]))
    with pytest.raises(FormatError) as info:
        parse_idx(bytes([0, 0, 8, 2]) + struct.pack(">2I", 1000, 1000))
    assert info.value.offset == 4
    (tmp_path / "x").write_bytes(b"")
    with pytest.raises(InvalidArgument):
        load_external(tmp_path / "x", "png")
