import numpy as np
import pytest

from koopmap.exceptions import DimensionMismatchError, MatrixFormatError
from koopmap.kmatio import read_matrix, write_matrix


def test_binary_roundtrip_real(tmp_path):
    a = np.array([[1.0, -2.5], [3.25, 4.0], [0.1, 1e-300]])
    p = tmp_path / "m.kmat"
    write_matrix(a, p)
    b = read_matrix(p)
    np.testing.assert_array_equal(a, b)
    assert b.dtype == np.float64


def test_binary_roundtrip_complex(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 3)) + 1j * rng.normal(size=(4, 3))
    p = tmp_path / "m.kmat"
    write_matrix(a, p)
    b = read_matrix(p)
    np.testing.assert_array_equal(a, b)
    assert np.iscomplexobj(b)


def test_csv_roundtrip_and_format_equivalence(tmp_path):
    rng = np.random.default_rng(1)
    a = rng.normal(size=(5, 2))
    write_matrix(a, tmp_path / "m.csv")
    write_matrix(a, tmp_path / "m.kmat")
    np.testing.assert_array_equal(read_matrix(tmp_path / "m.csv"), read_matrix(tmp_path / "m.kmat"))


def test_vector_stored_as_column(tmp_path):
    v = np.array([1.0, 2.0, 3.0])
    write_matrix(v, tmp_path / "v.kmat")
    out = read_matrix(tmp_path / "v.kmat")
    assert out.shape == (3, 1)


def test_zero_rows_rejected(tmp_path):
    p = tmp_path / "bad.kmat"
    blob = b"KMAT" + bytes([1]) + (0).to_bytes(8, "little") + (3).to_bytes(8, "little")
    p.write_bytes(blob)
    with pytest.raises(DimensionMismatchError):
        read_matrix(p)


def test_truncated_payload_rejected(tmp_path):
    p = tmp_path / "bad.kmat"
    blob = b"KMAT" + bytes([1]) + (2).to_bytes(8, "little") + (2).to_bytes(8, "little")
    blob += b"\x00" * 24  # 3 of 4 doubles
    p.write_bytes(blob)
    with pytest.raises(DimensionMismatchError):
        read_matrix(p)


def test_bad_magic_falls_back_to_csv_and_fails(tmp_path):
    p = tmp_path / "bad.kmat"
    p.write_bytes(b"NOPE" + b"\x00" * 30)
    with pytest.raises(MatrixFormatError):
        read_matrix(p)


def test_csv_header_mismatch(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("2,2\n1.0,2.0\n")
    with pytest.raises(DimensionMismatchError):
        read_matrix(p)


def test_missing_file(tmp_path):
    with pytest.raises(MatrixFormatError):
        read_matrix(tmp_path / "absent.kmat")


def test_complex_csv_rejected(tmp_path):
    with pytest.raises(MatrixFormatError):
        write_matrix(np.array([[1 + 2j]]), tmp_path / "c.csv")
