import io as _io
import json
import struct

import numpy as np
import pytest

from spadesct import io
from spadesct.afbp import init_bank
from spadesct.core import RoiSpec, ScanGeometry
from spadesct.nnfusion import FeatureLayout, FusionNet, Normalization
from spadesct.noisesim import ScanProtocol


def test_image_bytes_fixed_layout():
    f = np.array([[1.0, -2.5]])
    expected = b"CTIMG1" + b"\x01" + struct.pack("<IIIB", 1, 1, 2, 0) + struct.pack("<2d", 1.0, -2.5)
    assert io.image_to_bytes(f) == expected


def test_image_roundtrip_random():
    gen = np.random.default_rng(0)
    for shape in [(5, 7), (3, 4, 4)]:
        a = gen.standard_normal(shape)
        b = io.image_from_bytes(io.image_to_bytes(a))
        assert b.shape == a.shape
        np.testing.assert_array_equal(a, b)


def test_big_endian_input_is_normalized():
    a = np.arange(6, dtype=">f8").reshape(2, 3)
    assert io.image_to_bytes(a) == io.image_to_bytes(a.astype("<f8"))


def test_sinogram_and_counts_roundtrip():
    geo = ScanGeometry(6, 9, 8, 4.5)
    g = np.random.default_rng(1).random((2,) + geo.sinogram_shape)
    g2, geo2 = io.sinogram_from_bytes(io.sinogram_to_bytes(g, geo))
    np.testing.assert_array_equal(g, g2)
    assert geo2 == geo
    prot = ScanProtocol(1200.0, 60.0, 0.37)
    y = np.floor(g[0] * 1000)
    y2, geo3, prot2 = io.counts_from_bytes(io.counts_to_bytes(y, geo, prot))
    np.testing.assert_array_equal(y, y2)
    assert geo3 == geo and prot2 == prot


def test_kernels_roundtrip():
    geo = ScanGeometry(12, 23, 16)
    bank = init_bank(geo, RoiSpec(5.0), 3, 3, 5, 3)
    bank.sino_kernels = np.random.default_rng(2).standard_normal(bank.sino_kernels.shape)
    back = io.kernels_from_bytes(io.kernels_to_bytes(bank))
    assert back.geometry == geo and back.roi == bank.roi
    np.testing.assert_array_equal(back.segments, bank.segments)
    np.testing.assert_array_equal(back.sino_kernels, bank.sino_kernels)
    np.testing.assert_array_equal(back.image_kernel, bank.image_kernel)
    assert back.tag == bank.tag


@pytest.mark.parametrize("with_norm", [True, False])
def test_network_roundtrip(with_norm):
    gen = np.random.default_rng(3)
    layout = FeatureLayout(3, 1)
    k = layout.n_features
    norm = Normalization(gen.random(k), gen.random(k) + 0.5, 2.5) if with_norm else None
    net = FusionNet(gen.standard_normal((k + 1, 4)), gen.standard_normal(4), norm, layout, ("a", "b:ü", "c"))
    back = io.network_from_bytes(io.network_to_bytes(net))
    np.testing.assert_array_equal(back.w, net.w)
    np.testing.assert_array_equal(back.v, net.v)
    assert back.layout == layout and back.tags == net.tags
    if with_norm:
        np.testing.assert_array_equal(back.normalization.feature_min, norm.feature_min)
        assert back.normalization.target_scale == 2.5
    else:
        assert back.normalization is None


def test_corrupt_magic_offset_zero():
    data = bytearray(io.image_to_bytes(np.zeros((2, 2))))
    data[0:6] = b"XXXXXX"
    with pytest.raises(io.FormatError) as exc:
        io.image_from_bytes(bytes(data))
    assert exc.value.offset == 0


def test_wrong_container_kind():
    with pytest.raises(io.FormatError) as exc:
        io.sinogram_from_bytes(io.image_to_bytes(np.zeros((2, 2))))
    assert exc.value.offset == 0


def test_three_byte_file(tmp_path):
    p = tmp_path / "short.img"
    p.write_bytes(b"CTI")
    with pytest.raises(io.FormatError) as exc:
        io.read_image(p)
    assert exc.value.offset == 0


def test_truncated_payload_and_trailing_bytes():
    data = io.image_to_bytes(np.ones((3, 3)))
    with pytest.raises(io.FormatError) as exc:
        io.image_from_bytes(data[:-4])
    assert exc.value.offset == 7 + 13
    with pytest.raises(io.FormatError):
        io.image_from_bytes(data + b"\x00")


def test_bad_version():
    data = bytearray(io.image_to_bytes(np.ones((1, 1))))
    data[6] = 9
    with pytest.raises(io.FormatError) as exc:
        io.image_from_bytes(bytes(data))
    assert exc.value.offset == 6


def test_dimension_overflow():
    data = b"CTIMG1\x01" + struct.pack("<IIIB", 1 << 20, 1 << 20, 4, 1)
    with pytest.raises(io.FormatError):
        io.image_from_bytes(data)


def test_file_objects_and_sniff(tmp_path):
    buf = _io.BytesIO()
    io.write_image(buf, np.eye(3))
    buf.seek(0)
    np.testing.assert_array_equal(io.read_image(buf), np.eye(3))
    assert io.sniff(buf.getvalue()) == io.MAGIC_IMAGE
    p = tmp_path / "x.img"
    io.write_image(p, np.eye(2))
    kind, value = io.read_any(p)
    assert kind == io.MAGIC_IMAGE
    np.testing.assert_array_equal(value, np.eye(2))


def test_json_is_canonical(tmp_path):
    text = io.to_json({"b": 1, "a": [1.5, 2]})
    assert text == '{\n  "a": [\n    1.5,\n    2\n  ],\n  "b": 1\n}\n'
    with pytest.raises(ValueError):
        io.to_json({"x": float("nan")})
    io.write_sidecar(tmp_path / "s.json", {"k": 2})
    assert io.read_sidecar(tmp_path / "s.json") == {"k": 2}


def test_pgm(tmp_path):
    p = tmp_path / "x.pgm"
    io.write_pgm(p, np.array([[0.0, 1.0], [0.5, 1.0]]))
    data = p.read_bytes()
    assert data.startswith(b"P5\n2 2\n255\n")
    assert data[-4:] == bytes([0, 255, 128, 255])
