import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roadadapt import io
from roadadapt.exceptions import FormatError, UsageError
from roadadapt.synth import generate_domain, preset

rasters = arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.floats(0, 1, width=32))


@settings(max_examples=100)
@given(rasters)
def test_raster_round_trip_bit_exact(values):
    assert io.decode_raster(io.encode_raster(values)).tobytes() == values.tobytes()


def test_raster_layout(tmp_path):
    values = np.array([[0.0, 0.5, 1.0]], np.float32)
    path = io.write_raster(tmp_path / "r.f32", values)
    data = path.read_bytes()
    assert data[:4] == b"F32R"
    assert struct.unpack("<III", data[4:16]) == (3, 1, 0)
    assert len(data) == 16 + 4 * 3
    assert np.frombuffer(data[16:], "<f4").tolist() == [0.0, 0.5, 1.0]
    np.testing.assert_array_equal(io.read_raster(path), values)


@pytest.mark.parametrize(
    "mutate, offset",
    [
        (lambda d: b"F32X" + d[4:], 0),
        (lambda d: d[:10], 10),
        (lambda d: d[:-1], 51),
        (lambda d: d + b"\0", 52),
        (lambda d: d[:12] + b"\1\0\0\0" + d[16:], 12),
    ],
)
def test_raster_rejects_malformed(mutate, offset):
    data = io.encode_raster(np.zeros((3, 3), np.float32))
    with pytest.raises(FormatError) as err:
        io.decode_raster(mutate(data))
    assert err.value.offset == offset


def test_mask_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tri = rng.integers(0, 3, (7, 5)).astype(np.uint8)
    binary = rng.integers(0, 2, (7, 5)).astype(np.uint8)
    np.testing.assert_array_equal(io.read_mask(io.write_mask(tmp_path / "t.pgm", tri, True), True), tri)
    np.testing.assert_array_equal(io.read_mask(io.write_mask(tmp_path / "b.pgm", binary)), binary)
    data = (tmp_path / "t.pgm").read_bytes()
    assert data.startswith(b"P5\n5 7\n255\n")
    assert set(data[len(b"P5\n5 7\n255\n") :]) <= {0, 128, 255}


def test_mask_with_header_comment():
    data = b"P5\n# made by hand\n2 1\n255\n\x00\xff"
    np.testing.assert_array_equal(io.decode_mask(data), [[0, 1]])


def test_illegal_mask_byte_is_named():
    data = b"P5\n3 1\n255\n\x00\x07\xff"
    with pytest.raises(FormatError, match="byte 7") as err:
        io.decode_mask(data, tristate=True)
    assert err.value.offset == len(b"P5\n3 1\n255\n") + 1
    with pytest.raises(FormatError, match="byte 128"):
        io.decode_mask(b"P5\n1 1\n255\n\x80")


@pytest.mark.parametrize(
    "data", [b"P6\n1 1\n255\n\x00", b"P5\n1 1\n65535\n\x00", b"P5\n2 2\n255\n\x00", b"P5\n1", b"P5\nx 1\n255\n\x00"]
)
def test_mask_rejects_malformed(data):
    with pytest.raises(FormatError):
        io.decode_mask(data)


def test_encode_mask_rejects_values():
    with pytest.raises(UsageError):
        io.encode_mask(np.array([[2]]))


def test_params_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    groups = {"model": {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=1)}, "disc": {"v": rng.normal(size=4)}}
    path = io.save_params(tmp_path / "m.f64", groups)
    assert path.stat().st_size == 8 * (6 + 1 + 4)
    meta = json.loads(io.sidecar_path(path).read_text())
    assert meta["arrays"][0] == {"group": "model", "name": "w", "shape": [3, 2]}
    back = io.load_params(path)
    for g in groups:
        for k in groups[g]:
            assert back[g][k].tobytes() == groups[g][k].tobytes()
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FormatError):
        io.load_params(path)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    io.atomic_write(tmp_path / "a" / "x.txt", "hello")
    io.atomic_write(tmp_path / "a" / "x.txt", "again")
    assert [p.name for p in (tmp_path / "a").iterdir()] == ["x.txt"]
    assert (tmp_path / "a" / "x.txt").read_text() == "again"


def test_jsonl_and_manifest(tmp_path):
    io.append_jsonl(tmp_path / "log.jsonl", {"round": 0, "iou": np.float64(0.5)})
    io.append_jsonl(tmp_path / "log.jsonl", {"round": 1})
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert [json.loads(x)["round"] for x in lines] == [0, 1]
    io.write_manifest(tmp_path, "test", {"a": 1}, {"s": 2}, [tmp_path / "log.jsonl"])
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["outputs"] == {"log.jsonl": io.sha256_file(tmp_path / "log.jsonl")}


def test_tiles_round_trip(tmp_path):
    tiles = generate_domain(preset("src", tile_size=[64, 64]), 2)
    io.save_tiles(tmp_path, tiles)
    back = io.load_tiles(tmp_path)
    for t, b in zip(tiles, back):
        np.testing.assert_array_equal(b.image, t.image.astype(np.float32))
        np.testing.assert_array_equal(b.gt_mask, t.gt_mask)
        np.testing.assert_array_equal(b.gt_skeleton, t.gt_skeleton)
    with pytest.raises(UsageError):
        io.load_tiles(tmp_path / "missing")
