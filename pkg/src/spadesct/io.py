"""Binary containers for images, sinograms, counts, kernel banks and networks.

Every container starts with a 6-byte ASCII magic and a version byte,
followed by a little-endian header and a row-major little-endian float64
payload.  ``FormatError.offset`` is the byte offset where parsing failed.

Layouts (``u32``/``i32``/``f64``/``u8`` little-endian)::

    CTIMG1 v  u32 count, u32 rows, u32 cols, u8 stacked | count*rows*cols f64
    CTSIN1 v  geometry, u32 count, u8 stacked           | count*n_angles*n_bins f64
    CTCNT1 v  geometry, u32 count, u8 stacked,
              f64 I0, f64 y_min, f64 scale              | counts as f64
    AFBPK1 v  geometry, f64 roi_radius, f64 measurement_radius,
              u32 d, u32 A, u32 B, u32 m, d*2 f64 segments
                                                        | d*A*B f64, m*m f64
    SPNN1\\0 v u32 n_estimates, u32 best_index, u32 n_offsets,
              n_offsets*2 i32, u32 K, u32 N, u8 has_norm,
              [K f64 min, K f64 range, f64 target_scale],
              u32 n_tags, (u32 len, utf-8 bytes)*n_tags
                                                        | (K+1)*N f64 w, N f64 v

``geometry`` is ``u32 n_angles, u32 n_bins, u32 image_size, f64 support_radius``.
"""
from __future__ import annotations

import io as _io
import json
import struct
from pathlib import Path

import numpy as np

from .core import RoiSpec, ScanGeometry
from .noisesim import ScanProtocol

VERSION = 1
MAGIC_IMAGE = b"CTIMG1"
MAGIC_SINOGRAM = b"CTSIN1"
MAGIC_COUNTS = b"CTCNT1"
MAGIC_KERNELS = b"AFBPK1"
MAGIC_NETWORK = b"SPNN1\x00"
MAGICS = (MAGIC_IMAGE, MAGIC_SINOGRAM, MAGIC_COUNTS, MAGIC_KERNELS, MAGIC_NETWORK)
MAX_ELEMENTS = 1 << 31


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"truncated {what}: need {n} bytes, have {len(self.data) - self.pos}", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))

    def floats(self, count: int, what: str) -> np.ndarray:
        if count > MAX_ELEMENTS:
            raise FormatError(f"{what} dimension overflow ({count} elements)", self.pos)
        raw = self.take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def end(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes", self.pos)


def _header(magic: bytes, r: _Reader):
    got = r.take(6, "magic")
    if got not in MAGICS:
        raise FormatError(f"unknown magic {got!r}", 0)
    if got != magic:
        raise FormatError(f"expected {magic!r}, found {got!r}", 0)
    (version,) = r.unpack("B", "version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 6)


def _dims(r: _Reader, *dims: int):
    total = 1
    for d in dims:
        total *= d
    if total > MAX_ELEMENTS:
        raise FormatError(f"dimension overflow {dims}", r.pos)
    return total


def _pack_geometry(geo: ScanGeometry) -> bytes:
    return struct.pack("<IIId", geo.n_angles, geo.n_bins, geo.image_size, geo.support_radius)


def _read_geometry(r: _Reader) -> ScanGeometry:
    start = r.pos
    n_angles, n_bins, size, radius = r.unpack("IIId", "geometry header")
    try:
        return ScanGeometry(n_angles, n_bins, size, radius)
    except ValueError as exc:
        raise FormatError(f"invalid geometry: {exc}", start) from None


def _stack(a: np.ndarray, ndim: int):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == ndim:
        return a[None], 0
    if a.ndim == ndim + 1:
        return a, 1
    raise ValueError(f"expected a {ndim}-D array or a stack of them, got shape {a.shape}")


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


# ----------------------------------------------------------------- bytes level

def image_to_bytes(f) -> bytes:
    a, stacked = _stack(f, 2)
    return MAGIC_IMAGE + bytes([VERSION]) + struct.pack("<IIIB", *a.shape, stacked) + _f64(a)


def image_from_bytes(data: bytes) -> np.ndarray:
    r = _Reader(data)
    _header(MAGIC_IMAGE, r)
    count, rows, cols, stacked = r.unpack("IIIB", "image header")
    a = r.floats(_dims(r, count, rows, cols), "image payload").reshape(count, rows, cols)
    r.end()
    return a if stacked else a[0]


def sinogram_to_bytes(g, geometry: ScanGeometry) -> bytes:
    a, stacked = _stack(geometry.check_sinogram(g), 2)
    return MAGIC_SINOGRAM + bytes([VERSION]) + _pack_geometry(geometry) + struct.pack("<IB", len(a), stacked) + _f64(a)


def sinogram_from_bytes(data: bytes) -> tuple[np.ndarray, ScanGeometry]:
    r = _Reader(data)
    _header(MAGIC_SINOGRAM, r)
    geo = _read_geometry(r)
    count, stacked = r.unpack("IB", "sinogram header")
    a = r.floats(_dims(r, count, geo.n_angles, geo.n_bins), "sinogram payload")
    r.end()
    a = a.reshape((count,) + geo.sinogram_shape)
    return (a if stacked else a[0]), geo


def counts_to_bytes(y, geometry: ScanGeometry, protocol: ScanProtocol) -> bytes:
    a, stacked = _stack(geometry.check_sinogram(y), 2)
    head = _pack_geometry(geometry) + struct.pack(
        "<IBddd", len(a), stacked, protocol.source_intensity, protocol.min_count_target, protocol.scale
    )
    return MAGIC_COUNTS + bytes([VERSION]) + head + _f64(a)


def counts_from_bytes(data: bytes) -> tuple[np.ndarray, ScanGeometry, ScanProtocol]:
    r = _Reader(data)
    _header(MAGIC_COUNTS, r)
    geo = _read_geometry(r)
    start = r.pos
    count, stacked, i0, ymin, scale = r.unpack("IBddd", "counts header")
    try:
        prot = ScanProtocol(i0, ymin, scale)
    except ValueError as exc:
        raise FormatError(f"invalid protocol: {exc}", start) from None
    a = r.floats(_dims(r, count, geo.n_angles, geo.n_bins), "counts payload")
    r.end()
    a = a.reshape((count,) + geo.sinogram_shape)
    return (a if stacked else a[0]), geo, prot


def kernels_to_bytes(bank) -> bytes:
    d, a, b = bank.sino_kernels.shape
    m = bank.image_kernel.shape[0]
    head = _pack_geometry(bank.geometry) + struct.pack(
        "<ddIIII", bank.roi.roi_radius, bank.roi.measurement_radius, d, a, b, m
    )
    return (MAGIC_KERNELS + bytes([VERSION]) + head + _f64(bank.segments)
            + _f64(bank.sino_kernels) + _f64(bank.image_kernel))


def kernels_from_bytes(data: bytes):
    from .afbp import KernelBank

    r = _Reader(data)
    _header(MAGIC_KERNELS, r)
    geo = _read_geometry(r)
    start = r.pos
    roi_r, meas_r, d, a, b, m = r.unpack("ddIIII", "kernel header")
    segments = r.floats(_dims(r, d, 2), "segment table").reshape(d, 2)
    sino = r.floats(_dims(r, d, a, b), "sinogram kernels").reshape(d, a, b)
    img = r.floats(_dims(r, m, m), "image kernel").reshape(m, m)
    r.end()
    try:
        return KernelBank(geo, RoiSpec(roi_r, meas_r), segments, sino, img)
    except ValueError as exc:
        raise FormatError(f"invalid kernel bank: {exc}", start) from None


def network_to_bytes(net) -> bytes:
    from .nnfusion import FeatureLayout

    lay = net.layout or FeatureLayout(1, 0)
    k1, n = net.w.shape
    parts = [struct.pack("<III", lay.n_estimates, lay.best_index, len(lay.neighborhood))]
    parts += [struct.pack("<ii", dy, dx) for dy, dx in lay.neighborhood]
    parts.append(struct.pack("<IIB", k1 - 1, n, net.normalization is not None))
    if net.normalization is not None:
        nz = net.normalization
        parts += [_f64(nz.feature_min), _f64(nz.feature_range), struct.pack("<d", nz.target_scale)]
    parts.append(struct.pack("<I", len(net.tags)))
    for tag in net.tags:
        raw = tag.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    return MAGIC_NETWORK + bytes([VERSION]) + b"".join(parts) + _f64(net.w) + _f64(net.v)


def network_from_bytes(data: bytes):
    from .nnfusion import FeatureLayout, FusionNet, Normalization

    r = _Reader(data)
    _header(MAGIC_NETWORK, r)
    start = r.pos
    n_est, best, n_off = r.unpack("III", "layout header")
    _dims(r, n_off, 2)
    offsets = tuple(r.unpack("ii", "neighborhood") for _ in range(n_off))
    k, n, has_norm = r.unpack("IIB", "network header")
    norm = None
    if has_norm:
        lo = r.floats(k, "feature minima")
        rng = r.floats(k, "feature ranges")
        (scale,) = r.unpack("d", "target scale")
        norm = Normalization(lo, rng, scale)
    (n_tags,) = r.unpack("I", "tag count")
    tags = []
    for _ in range(n_tags):
        (length,) = r.unpack("I", "tag length")
        pos = r.pos
        try:
            tags.append(r.take(length, "tag").decode("utf-8"))
        except UnicodeDecodeError:
            raise FormatError("tag is not valid utf-8", pos) from None
    w = r.floats(_dims(r, k + 1, n), "input weights").reshape(k + 1, n)
    v = r.floats(n, "output weights")
    r.end()
    try:
        layout = FeatureLayout(n_est, best, offsets)
    except ValueError as exc:
        raise FormatError(f"invalid feature layout: {exc}", start) from None
    return FusionNet(w, v, norm, layout, tuple(tags))


# ------------------------------------------------------------------ file level

def _write(target, data: bytes) -> None:
    if hasattr(target, "write"):
        buf = getattr(target, "buffer", target)
        buf.write(data)
        buf.flush()
    else:
        Path(target).write_bytes(data)


def _read(source) -> bytes:
    if hasattr(source, "read"):
        buf = getattr(source, "buffer", source)
        return buf.read()
    return Path(source).read_bytes()


def write_image(target, f) -> None:
    _write(target, image_to_bytes(f))


def read_image(source) -> np.ndarray:
    return image_from_bytes(_read(source))


def write_sinogram(target, g, geometry: ScanGeometry) -> None:
    _write(target, sinogram_to_bytes(g, geometry))


def read_sinogram(source):
    return sinogram_from_bytes(_read(source))


def write_counts(target, y, geometry: ScanGeometry, protocol: ScanProtocol) -> None:
    _write(target, counts_to_bytes(y, geometry, protocol))


def read_counts(source):
    return counts_from_bytes(_read(source))


def write_kernels(target, bank) -> None:
    _write(target, kernels_to_bytes(bank))


def read_kernels(source):
    return kernels_from_bytes(_read(source))


def write_network(target, net) -> None:
    _write(target, network_to_bytes(net))


def read_network(source):
    return network_from_bytes(_read(source))


def sniff(data: bytes) -> bytes:
    """Magic tag of a container, validated against the known set."""
    if len(data) < 6:
        raise FormatError("truncated magic", len(data))
    if data[:6] not in MAGICS:
        raise FormatError(f"unknown magic {data[:6]!r}", 0)
    return data[:6]


def read_any(source):
    """Parse any container; returns ``(magic, value)``."""
    data = _read(source)
    magic = sniff(data)
    parser = {
        MAGIC_IMAGE: image_from_bytes,
        MAGIC_SINOGRAM: sinogram_from_bytes,
        MAGIC_COUNTS: counts_from_bytes,
        MAGIC_KERNELS: kernels_from_bytes,
        MAGIC_NETWORK: network_from_bytes,
    }[magic]
    return magic, parser(data)


def to_json(obj) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_sidecar(path, obj) -> None:
    Path(path).write_text(to_json(obj))


def read_sidecar(path) -> dict:
    return json.loads(Path(path).read_text())


def write_pgm(target, f, lo: float | None = None, hi: float | None = None) -> None:
    """8-bit binary PGM preview, linearly mapped from ``[lo, hi]``."""
    f = np.asarray(f, dtype=np.float64)
    lo = float(f.min()) if lo is None else lo
    hi = float(f.max()) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    pix = np.clip(np.round((f - lo) / span * 255.0), 0, 255).astype(np.uint8)
    out = _io.BytesIO()
    out.write(f"P5\n{f.shape[1]} {f.shape[0]}\n255\n".encode("ascii"))
    out.write(pix.tobytes())
    _write(target, out.getvalue())
