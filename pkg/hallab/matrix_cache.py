# hallab/matrix_cache.py

"""
On-disk cache for eigendecompositions.

Entries are keyed by the SHA-256 digest of the matrix content. Each entry is
two files in the documented binary matrix format:

    magic  b"HLB1"            4 bytes
    rows   uint32 little-endian
    cols   uint32 little-endian
    data   rows*cols complex128 little-endian, row-major

`<key>.vals` holds the eigenvalues as a 1 x n matrix, `<key>.vecs` the
eigenvectors. Entries are validated by their reconstruction residual before
use; anything that fails to decode or validate is recomputed. Files are written
to a temporary sibling and renamed into place, so a crashed or concurrent
writer never leaves a partial entry behind.
"""

import hashlib
import os
import struct
import tempfile
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from hallab.exceptions import CacheError
from hallab.utils.log import get_logger
from hallab.utils.settings import CACHE_DIR, TOL_IDENTITY

logger = get_logger(__name__)

MAGIC = b"HLB1"
_HEADER = struct.Struct("<4sII")


# === Binary matrix format ===
def write_matrix(path: Path, matrix: np.ndarray) -> None:
    """Write `matrix` to `path` atomically: readers see either the old file or the complete new one."""
    m = np.atleast_2d(np.asarray(matrix, dtype="<c16"))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = tempfile.NamedTemporaryFile(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp", delete=False)
    try:
        with tmp as f:
            f.write(_HEADER.pack(MAGIC, m.shape[0], m.shape[1]))
            f.write(np.ascontiguousarray(m).tobytes(order="C"))
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp.name, path)
    except BaseException:
        Path(tmp.name).unlink(missing_ok=True)
        raise


def read_matrix(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CacheError(f"{path.name}: truncated header")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CacheError(f"{path.name}: bad magic {magic!r}")
    expected = _HEADER.size + rows * cols * 16
    if len(raw) != expected:
        raise CacheError(f"{path.name}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    return data.reshape(rows, cols).astype(complex)


def matrix_digest(matrix: np.ndarray) -> str:
    m = np.ascontiguousarray(np.asarray(matrix, dtype="<c16"))
    h = hashlib.sha256()
    h.update(struct.pack("<II", *m.shape))
    h.update(m.tobytes(order="C"))
    return h.hexdigest()


# === Cache ===
class MatrixCache:
    """
    Eigendecomposition cache; entries are replaced atomically, so readers never see a partial file.

    Args:
        directory (Path | None): cache folder, defaults to CACHE_DIR.
    """

    def __init__(self, directory: Optional[Path] = None):
        self.directory = Path(directory) if directory is not None else CACHE_DIR
        self.hits = 0
        self.misses = 0

    def _paths(self, key: str) -> Tuple[Path, Path]:
        return self.directory / f"{key}.vals", self.directory / f"{key}.vecs"

    def load(self, key: str) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        vals_path, vecs_path = self._paths(key)
        if not (vals_path.exists() and vecs_path.exists()):
            return None
        try:
            vals = np.real(read_matrix(vals_path)[0])
            vecs = read_matrix(vecs_path)
        except (CacheError, ValueError, OSError) as e:
            logger.warning(f"⚠️ cache entry {key[:12]} unreadable, bypassing: {e}")
            return None
        return vals, vecs

    def store(self, key: str, vals: np.ndarray, vecs: np.ndarray) -> None:
        vals_path, vecs_path = self._paths(key)
        try:
            write_matrix(vals_path, np.asarray(vals)[None, :])
            write_matrix(vecs_path, vecs)
            logger.debug(f"💾 cached eigendecomposition {key[:12]}")
        except OSError as e:
            logger.warning(f"⚠️ could not write cache entry {key[:12]}: {e}")

    def eigh(self, matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Eigendecomposition of a hermitian matrix, served from the cache when valid."""
        key = matrix_digest(matrix)
        hit = self.load(key)
        if hit is not None:
            vals, vecs = hit
            if vecs.shape == matrix.shape and reconstruction_residual(matrix, vals, vecs) <= TOL_IDENTITY:
                self.hits += 1
                logger.debug(f"🔍 cache hit {key[:12]}")
                return vals, vecs
            logger.warning(f"⚠️ cache entry {key[:12]} failed validation, recomputing")
        self.misses += 1
        vals, vecs = linalg.eigh(matrix)
        self.store(key, vals, vecs)
        return vals, vecs


def reconstruction_residual(matrix: np.ndarray, vals: np.ndarray, vecs: np.ndarray) -> float:
    """||H - U diag(vals) U*|| / max(1, ||H||) in the Frobenius norm."""
    rebuilt = (vecs * vals[None, :]) @ vecs.conj().T
    scale = max(1.0, float(np.linalg.norm(matrix)))
    return float(np.linalg.norm(matrix - rebuilt)) / scale


def cached_eigh(matrix: np.ndarray, cache: Optional[MatrixCache] = None) -> Tuple[np.ndarray, np.ndarray]:
    if cache is None:
        return linalg.eigh(matrix)
    return cache.eigh(matrix)
