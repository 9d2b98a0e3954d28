import struct

import numpy as np
import pytest

from voxswin import nifti
from voxswin.nifti import (
    Nifti1Header,
    NiftiFormatError,
    NiftiTruncatedError,
    NiftiUnsupportedError,
)
from voxswin.volumes import parse_nifti


def minimal_nii(values: np.ndarray, scl_slope=0.0, scl_inter=0.0, datatype=16,
                dim0=3, magic=nifti.MAGIC_SINGLE, byteorder="<") -> bytes:
    """Hand-built fixture: 348-byte header + padding + raw samples."""
    raw = bytearray(348)
    x, y, z = values.shape[-3:] if values.ndim >= 3 else (2, 2, 2)
    t = values.shape[0] if values.ndim == 4 else 1
    dim = (dim0, x, y, z, t, 1, 1, 1) if dim0 == 4 else (dim0, x, y, z, 1, 1, 1, 1)
    struct.pack_into(byteorder + "i", raw, 0, 348)
    struct.pack_into(byteorder + "8h", raw, 40, *dim)
    struct.pack_into(byteorder + "h", raw, 70, datatype)
    struct.pack_into(byteorder + "h", raw, 72, nifti.BITPIX[datatype])
    struct.pack_into(byteorder + "8f", raw, 76, 1.0, 1.0, 1.0, 1.0, 2.0, 0, 0, 0)
    struct.pack_into(byteorder + "f", raw, 108, 352.0)
    struct.pack_into(byteorder + "f", raw, 112, scl_slope)
    struct.pack_into(byteorder + "f", raw, 116, scl_inter)
    raw[344:348] = magic
    dt = np.dtype(nifti.SUPPORTED_DTYPES[datatype]).newbyteorder(byteorder)
    if values.ndim == 3:
        disk = values.transpose(2, 1, 0)
    else:
        disk = values.transpose(0, 3, 2, 1)
    return bytes(raw) + b"\x00" * 4 + np.ascontiguousarray(disk, dtype=dt).tobytes()


def test_parse_minimal_ones_volume():
    blob = minimal_nii(np.ones((2, 2, 2), dtype=np.float32))
    header, vol = parse_nifti(blob)
    assert header.dim[0] == 3
    assert vol.frames == 1
    assert vol.data.shape == (1, 2, 2, 2, 1)
    assert np.all(vol.voxels() == 1.0)


def test_parse_applies_slope_intercept():
    blob = minimal_nii(np.ones((2, 2, 2), dtype=np.float32), scl_slope=2.0, scl_inter=1.0)
    _, vol = parse_nifti(blob)
    assert np.all(vol.voxels() == 3.0)  # 2*1 + 1


def test_pair_magic_rejected():
    blob = minimal_nii(np.ones((2, 2, 2), dtype=np.float32), magic=nifti.MAGIC_PAIR)
    with pytest.raises(NiftiFormatError, match="pair"):
        nifti.parse(blob)


def test_unknown_magic_rejected():
    blob = minimal_nii(np.ones((2, 2, 2), dtype=np.float32), magic=b"nope")
    with pytest.raises(NiftiFormatError):
        nifti.parse(blob)


def test_unsupported_datatype_code():
    blob = bytearray(minimal_nii(np.ones((2, 2, 2), dtype=np.float32)))
    struct.pack_into("<h", blob, 70, 2)  # uint8: outside the supported set
    struct.pack_into("<h", blob, 72, 8)
    with pytest.raises(NiftiUnsupportedError):
        nifti.parse(bytes(blob))


def test_truncated_data_section():
    blob = minimal_nii(np.ones((4, 4, 4), dtype=np.float32))
    with pytest.raises(NiftiTruncatedError):
        nifti.parse(blob[:-16])


def test_big_endian_autodetected():
    values = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    blob = minimal_nii(values, byteorder=">")
    header, arr = nifti.parse(blob)
    assert header.byteorder == ">"
    assert np.array_equal(arr[0], values.astype(np.float64))


def test_4d_and_int16_roundtrip_values():
    values = np.arange(5 * 2 * 3 * 4, dtype=np.int16).reshape(5, 2, 3, 4)
    blob = minimal_nii(values, datatype=4, dim0=4)
    header, arr = nifti.parse(blob)
    assert header.data_shape() == (2, 3, 4, 5)
    assert arr.shape == (5, 2, 3, 4)
    assert np.array_equal(arr, values.astype(np.float64))


def test_serialize_parse_roundtrip_array():
    rng = np.random.default_rng(0)
    arr = rng.standard_normal((3, 4, 5, 6))
    blob = nifti.serialize(arr, voxel_size_mm=(2.0, 2.0, 3.5), tr_seconds=0.72)
    header, back = nifti.parse(blob)
    assert np.array_equal(back, arr)
    assert header.pixdim[1:4] == (2.0, 2.0, 3.5)
    assert header.pixdim[4] == pytest.approx(0.72, rel=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_header_roundtrip_bit_exact(seed):
    rng = np.random.default_rng(seed)
    h = random_header(rng)
    back = nifti.parse_header(nifti.serialize_header(h))
    assert back.dim == h.dim
    assert back.datatype == h.datatype
    assert back.bitpix == h.bitpix
    assert struct.pack("<8f", *back.pixdim) == struct.pack("<8f", *h.pixdim)
    assert struct.pack("<f", back.vox_offset) == struct.pack("<f", h.vox_offset)
    assert struct.pack("<f", back.scl_slope) == struct.pack("<f", h.scl_slope)
    assert struct.pack("<f", back.scl_inter) == struct.pack("<f", h.scl_inter)
    assert back.byteorder == h.byteorder


def random_header(rng: np.random.Generator) -> Nifti1Header:
    dim0 = int(rng.integers(3, 5))
    extents = [int(e) for e in rng.integers(1, 32, size=4)]
    if dim0 == 3:
        extents[3] = 1
    datatype = int(rng.choice([4, 16, 64]))
    # float32 header fields: draw values representable in f4 so roundtrip is exact
    pix = np.float32(rng.uniform(0.25, 4.0, size=8))
    return Nifti1Header(
        dim=(dim0, extents[0], extents[1], extents[2], extents[3], 1, 1, 1),
        datatype=datatype,
        bitpix=nifti.BITPIX[datatype],
        pixdim=tuple(float(p) for p in pix),
        vox_offset=float(np.float32(352 + 16 * int(rng.integers(0, 4)))),
        scl_slope=float(np.float32(rng.uniform(0, 2))),
        scl_inter=float(np.float32(rng.uniform(-1, 1))),
        byteorder=str(rng.choice(["<", ">"])),
    )
