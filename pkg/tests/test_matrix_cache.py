# tests/test_matrix_cache.py

import numpy as np
import pytest

from hallab import matrix_cache
from hallab.exceptions import CacheError
from hallab.matrix_cache import MatrixCache, cached_eigh, matrix_digest, read_matrix, write_matrix


@pytest.fixture
def hermitian(rng):
    m = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    return m + m.conj().T


def test_written_matrix_is_read_back_exactly(tmp_path, hermitian):
    path = tmp_path / "m.vecs"
    write_matrix(path, hermitian)
    assert path.read_bytes()[:4] == b"HLB1"
    assert np.array_equal(read_matrix(path), hermitian)


@pytest.mark.parametrize("payload, message", [
    (b"HL", "truncated"),
    (b"XXXX" + bytes(8), "bad magic"),
    (b"HLB1" + np.array([2, 2], dtype="<u4").tobytes() + bytes(16), "expected"),
])
def test_malformed_files_are_rejected(tmp_path, payload, message):
    path = tmp_path / "broken.vals"
    path.write_bytes(payload)
    with pytest.raises(CacheError, match=message):
        read_matrix(path)


def test_digest_depends_on_shape_and_content(hermitian):
    assert matrix_digest(hermitian) == matrix_digest(hermitian.copy())
    assert matrix_digest(hermitian) != matrix_digest(hermitian.reshape(4, 16))
    assert matrix_digest(hermitian) != matrix_digest(2 * hermitian)


def test_second_call_is_a_hit(tmp_path, hermitian):
    cache = MatrixCache(tmp_path)
    vals, vecs = cache.eigh(hermitian)
    again_vals, again_vecs = cache.eigh(hermitian)
    assert (cache.hits, cache.misses) == (1, 1)
    assert np.array_equal(vals, again_vals)
    assert np.array_equal(vecs, again_vecs)


def test_corrupt_entry_is_bypassed(tmp_path, hermitian):
    cache = MatrixCache(tmp_path)
    cache.eigh(hermitian)
    for path in tmp_path.glob("*.vecs"):
        path.write_bytes(b"HLB1garbage")
    vals, vecs = cache.eigh(hermitian)
    assert cache.misses == 2
    assert np.allclose((vecs * vals[None, :]) @ vecs.conj().T, hermitian, atol=1e-10)


def test_stale_entry_fails_validation(tmp_path, hermitian):
    cache = MatrixCache(tmp_path)
    cache.eigh(hermitian)
    for path in tmp_path.glob("*.vecs"):
        write_matrix(path, np.eye(8))
    cache.eigh(hermitian)
    assert cache.hits == 0
    assert cache.misses == 2


def test_cached_eigh_without_cache(hermitian):
    vals, _ = cached_eigh(hermitian)
    assert np.allclose(vals, np.linalg.eigvalsh(hermitian))


def test_write_leaves_no_temporary_files(tmp_path, hermitian):
    path = tmp_path / "m.vecs"
    write_matrix(path, hermitian)
    write_matrix(path, 2 * hermitian)
    assert [p.name for p in tmp_path.iterdir()] == ["m.vecs"]
    assert np.array_equal(read_matrix(path), 2 * hermitian)


def test_failed_write_keeps_the_previous_entry(tmp_path, hermitian, monkeypatch):
    path = tmp_path / "m.vecs"
    write_matrix(path, hermitian)

    def broken_replace(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(matrix_cache.os, "replace", broken_replace)
    with pytest.raises(OSError, match="disk full"):
        write_matrix(path, 2 * hermitian)
    assert np.array_equal(read_matrix(path), hermitian)
    assert [p.name for p in tmp_path.iterdir()] == ["m.vecs"]


def test_store_survives_a_failed_write(tmp_path, hermitian, monkeypatch):
    def read_only(src, dst):
        raise OSError("read-only")

    monkeypatch.setattr(matrix_cache.os, "replace", read_only)
    cache = MatrixCache(tmp_path)
    vals, _ = cache.eigh(hermitian)
    assert np.allclose(vals, np.linalg.eigvalsh(hermitian))
    assert list(tmp_path.iterdir()) == []
    assert cache.load(matrix_digest(hermitian)) is None
