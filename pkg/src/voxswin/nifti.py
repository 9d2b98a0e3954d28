"""Single-file NIfTI-1 reader/writer.

Covers exactly what the ingestion path needs: magic ``n+1`` (.nii), header
fields at their canonical offsets, datatypes int16/float32/float64, 3-D or
4-D volumes, both byte orders (detected via ``dim[0]`` in 1..7), and the
``scl_slope``/``scl_inter`` affine. Pair files (``ni1``), NIfTI-2, and
extensions are rejected explicitly.

On-disk sample order is Fortran-style (x fastest, t slowest); arrays are
returned time-major as (T, X, Y, Z) with the channel axis appended by the
caller. Field offsets: dim@40 (8 x int16), datatype@70, bitpix@72,
pixdim@76 (8 x float32), vox_offset@108, scl_slope@112, scl_inter@116,
magic@344.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

HEADER_SIZE = 348
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# datatype code -> numpy dtype (unscaled, byte order applied separately)
SUPPORTED_DTYPES = {4: "i2", 16: "f4", 64: "f8"}
BITPIX = {4: 16, 16: 32, 64: 64}


class NiftiError(ValueError):
    """Base class for NIfTI ingestion failures."""


class NiftiFormatError(NiftiError):
    """Not a single-file NIfTI-1 stream (bad magic, bad header geometry)."""


class NiftiUnsupportedError(NiftiError):
    """Valid NIfTI-1 but outside the supported subset."""


class NiftiTruncatedError(NiftiError):
    """Data section shorter than the header promises."""


@dataclass
class Nifti1Header:
    sizeof_hdr: int = HEADER_SIZE
    dim: tuple[int, ...] = (3, 1, 1, 1, 1, 1, 1, 1)
    datatype: int = 64
    bitpix: int = 64
    pixdim: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0)
    vox_offset: float = 352.0
    scl_slope: float = 0.0
    scl_inter: float = 0.0
    magic: bytes = MAGIC_SINGLE
    byteorder: str = "<"  # struct prefix after resolution
    descrip: bytes = field(default=b"", repr=False)

    def data_shape(self) -> tuple[int, ...]:
        """(X, Y, Z[, T]) extents declared by dim."""
        return tuple(self.dim[1 : 1 + self.dim[0]])

    def n_voxels(self) -> int:
        return int(np.prod(self.data_shape(), dtype=np.int64))


def _resolve_byteorder(raw: bytes) -> str:
    for order in ("<", ">"):
        (dim0,) = struct.unpack(order + "h", raw[40:42])
        if 1 <= dim0 <= 7:
            return order
    raise NiftiFormatError("cannot resolve byte order: dim[0] outside 1..7 in both orders")


def parse_header(raw: bytes) -> Nifti1Header:
    if len(raw) < HEADER_SIZE:
        raise NiftiFormatError(f"header needs {HEADER_SIZE} bytes, got {len(raw)}")
    magic = raw[344:348]
    if magic == MAGIC_PAIR:
        raise NiftiFormatError("pair-file NIfTI-1 ('ni1') unsupported; single-file 'n+1' only")
    if magic != MAGIC_SINGLE:
        raise NiftiFormatError(f"bad magic {magic!r}; expected {MAGIC_SINGLE!r}")
    order = _resolve_byteorder(raw)
    (sizeof_hdr,) = struct.unpack(order + "i", raw[0:4])
    if sizeof_hdr != HEADER_SIZE:
        raise NiftiFormatError(f"sizeof_hdr {sizeof_hdr} != {HEADER_SIZE}")
    dim = struct.unpack(order + "8h", raw[40:56])
    (datatype,) = struct.unpack(order + "h", raw[70:72])
    (bitpix,) = struct.unpack(order + "h", raw[72:74])
    pixdim = struct.unpack(order + "8f", raw[76:108])
    (vox_offset,) = struct.unpack(order + "f", raw[108:112])
    (scl_slope,) = struct.unpack(order + "f", raw[112:116])
    (scl_inter,) = struct.unpack(order + "f", raw[116:120])
    descrip = raw[148:228].rstrip(b"\x00")
    return Nifti1Header(
        sizeof_hdr=sizeof_hdr,
        dim=tuple(int(d) for d in dim),
        datatype=int(datatype),
        bitpix=int(bitpix),
        pixdim=tuple(float(p) for p in pixdim),
        vox_offset=float(vox_offset),
        scl_slope=float(scl_slope),
        scl_inter=float(scl_inter),
        magic=MAGIC_SINGLE,
        byteorder=order,
        descrip=descrip,
    )


def serialize_header(h: Nifti1Header) -> bytes:
    """348-byte header; supported fields roundtrip bit-exactly through parse."""
    raw = bytearray(HEADER_SIZE)
    o = h.byteorder
    struct.pack_into(o + "i", raw, 0, HEADER_SIZE)
    struct.pack_into(o + "8h", raw, 40, *h.dim)
    struct.pack_into(o + "h", raw, 70, h.datatype)
    struct.pack_into(o + "h", raw, 72, h.bitpix)
    struct.pack_into(o + "8f", raw, 76, *h.pixdim)
    struct.pack_into(o + "f", raw, 108, h.vox_offset)
    struct.pack_into(o + "f", raw, 112, h.scl_slope)
    struct.pack_into(o + "f", raw, 116, h.scl_inter)
    descrip = h.descrip[:79]
    raw[148 : 148 + len(descrip)] = descrip
    raw[344:348] = MAGIC_SINGLE
    return bytes(raw)


def parse(raw: bytes) -> tuple[Nifti1Header, np.ndarray]:
    """Decode a single-file NIfTI-1 stream into (header, float64 (T,X,Y,Z) array).

    3-D inputs come back with T=1. Values are scaled by
    ``scl_slope * v + scl_inter`` when ``scl_slope != 0``.
    """
    h = parse_header(raw)
    if h.datatype not in SUPPORTED_DTYPES:
        raise NiftiUnsupportedError(
            f"datatype code {h.datatype} unsupported (int16=4, float32=16, float64=64)"
        )
    if h.bitpix != BITPIX[h.datatype]:
        raise NiftiFormatError(f"bitpix {h.bitpix} inconsistent with datatype {h.datatype}")
    if h.dim[0] not in (3, 4):
        raise NiftiUnsupportedError(f"dim[0]={h.dim[0]} unsupported; need a 3-D or 4-D volume")
    shape = h.data_shape()
    if any(d < 1 for d in shape):
        raise NiftiFormatError(f"non-positive extent in dim {shape}")
    offset = int(h.vox_offset)
    if offset < HEADER_SIZE:
        raise NiftiFormatError(f"vox_offset {offset} inside the header")
    nbytes = h.n_voxels() * h.bitpix // 8
    if len(raw) < offset + nbytes:
        raise NiftiTruncatedError(
            f"data section truncated: need {offset + nbytes} bytes, have {len(raw)}"
        )
    dt = np.dtype(SUPPORTED_DTYPES[h.datatype]).newbyteorder(h.byteorder)
    flat = np.frombuffer(raw, dtype=dt, count=h.n_voxels(), offset=offset)
    x, y, z = shape[0], shape[1], shape[2]
    t = shape[3] if h.dim[0] == 4 else 1
    # disk order: x fastest, t slowest
    arr = flat.reshape(t, z, y, x).transpose(0, 3, 2, 1)
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    if h.scl_slope != 0.0:
        arr = h.scl_slope * arr + h.scl_inter
    return h, arr


def serialize(arr: np.ndarray, voxel_size_mm=(1.0, 1.0, 1.0), tr_seconds: float = 1.0,
              datatype: int = 64, descrip: bytes = b"") -> bytes:
    """Encode a (T, X, Y, Z) float array as single-file NIfTI-1 bytes."""
    if arr.ndim != 4:
        raise ValueError(f"expected (T, X, Y, Z), got shape {arr.shape}")
    if datatype not in SUPPORTED_DTYPES:
        raise NiftiUnsupportedError(f"cannot write datatype code {datatype}")
    t, x, y, z = arr.shape
    header = Nifti1Header(
        dim=(4, x, y, z, t, 1, 1, 1),
        datatype=datatype,
        bitpix=BITPIX[datatype],
        pixdim=(1.0, float(voxel_size_mm[0]), float(voxel_size_mm[1]),
                float(voxel_size_mm[2]), float(tr_seconds), 0.0, 0.0, 0.0),
        vox_offset=352.0,
        scl_slope=0.0,
        scl_inter=0.0,
        descrip=descrip,
    )
    disk = arr.transpose(0, 3, 2, 1).astype(SUPPORTED_DTYPES[datatype])
    raw = serialize_header(header) + b"\x00" * 4 + disk.tobytes()
    return raw


def read_file(path) -> tuple[Nifti1Header, np.ndarray]:
    with open(path, "rb") as fh:
        return parse(fh.read())


def write_file(path, arr: np.ndarray, **kwargs) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(arr, **kwargs))
