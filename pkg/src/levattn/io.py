"""File formats.

LMAT (binary matrix)::

    b"LMAT" | u32 version=1 | u64 rows | u64 cols | rows*cols f64, row-major

all little-endian. CSV matrices start with ``# rows cols`` and hold one row
per line. Universal sets are text: ``# epsilon budget estimator`` then one
index per line. Query engines persist as a versioned ``LENG`` blob.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from levattn.linalg import as_matrix
from levattn.sensitivities import SensitivityVector
from levattn.universal_set import QueryEngine, SampledNormalizer, UniversalSet

LMAT_MAGIC = b"LMAT"
LMAT_VERSION = 1
_LMAT_HEADER = struct.Struct("<4sIQQ")

ENGINE_MAGIC = b"LENG"
ENGINE_VERSION = 1


class FormatError(ValueError):
    pass


def write_lmat(path, M):
    M = as_matrix(M)
    with open(path, "wb") as fh:
        fh.write(_LMAT_HEADER.pack(LMAT_MAGIC, LMAT_VERSION, M.shape[0], M.shape[1]))
        fh.write(M.astype("<f8").tobytes())


def _read_lmat_header(fh, path):
    raw = fh.read(_LMAT_HEADER.size)
    if len(raw) != _LMAT_HEADER.size:
        raise FormatError(f"{path}: truncated LMAT header")
    magic, version, rows, cols = _LMAT_HEADER.unpack(raw)
    if magic != LMAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != LMAT_VERSION:
        raise FormatError(f"{path}: unsupported LMAT version {version}")
    return rows, cols


def read_lmat(path):
    with open(path, "rb") as fh:
        rows, cols = _read_lmat_header(fh, path)
        data = fh.read()
    if len(data) != rows * cols * 8:
        raise FormatError(f"{path}: expected {rows * cols} values, found {len(data) // 8}")
    return np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(rows, cols)


class LmatRows:
    """Replayable row stream over an LMAT file; reads one row at a time."""

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            self.rows, self.cols = _read_lmat_header(fh, self.path)

    def __len__(self):
        return self.rows

    def __iter__(self):
        width = self.cols * 8
        with open(self.path, "rb") as fh:
            _read_lmat_header(fh, self.path)
            for _ in range(self.rows):
                raw = fh.read(width)
                if len(raw) != width:
                    raise FormatError(f"{self.path}: truncated row data")
                yield np.frombuffer(raw, dtype="<f8").astype(np.float64)


def write_matrix_csv(path, M):
    M = as_matrix(M)
    lines = [f"# {M.shape[0]} {M.shape[1]}"]
    lines += [",".join(repr(float(x)) for x in row) for row in M]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path):
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise FormatError(f"{path}: missing '# rows cols' header")
    try:
        rows, cols = (int(t) for t in lines[0][1:].split())
    except ValueError as exc:
        raise FormatError(f"{path}: bad header {lines[0]!r}") from exc
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != rows:
        raise FormatError(f"{path}: header says {rows} rows, found {len(body)}")
    M = np.array([[float(t) for t in ln.split(",")] for ln in body]) if rows else np.zeros((0, cols))
    if M.shape != (rows, cols):
        raise FormatError(f"{path}: expected shape {(rows, cols)}, got {M.shape}")
    return as_matrix(M) if rows else M


def read_matrix(path):
    """LMAT or CSV, chosen by the file's leading bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_lmat(path) if head == LMAT_MAGIC else read_matrix_csv(path)


def write_matrix(path, M):
    if str(path).endswith(".csv"):
        write_matrix_csv(path, M)
    else:
        write_lmat(path, M)


def row_stream(path):
    """Replayable row iterable for LMAT (streamed) or CSV (loaded) files."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    return LmatRows(path) if head == LMAT_MAGIC else read_matrix_csv(path)


def write_uset(path, U: UniversalSet):
    lines = [f"# {U.epsilon!r} {U.budget!r} {U.estimator}"]
    lines += [str(int(j)) for j in U.indices]
    Path(path).write_text("\n".join(lines) + "\n")


def read_uset(path) -> UniversalSet:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise FormatError(f"{path}: missing universal-set header")
    parts = lines[0][1:].split()
    if len(parts) != 3:
        raise FormatError(f"{path}: header must be '# epsilon budget estimator'")
    idx = [int(ln) for ln in lines[1:] if ln.strip()]
    return UniversalSet(idx, float(parts[0]), float(parts[1]), parts[2])


def write_sensitivities(path, sv: SensitivityVector):
    lines = [f"# {sv.estimator} {sv.p!r} {sv.tol!r}"]
    lines += [f"{i},{float(s)!r}" for i, s in enumerate(sv.scores)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_sensitivities(path) -> SensitivityVector:
    lines = Path(path).read_text().splitlines()
    est, p, tol = lines[0][1:].split()
    scores = [float(ln.split(",")[1]) for ln in lines[1:] if ln.strip()]
    return SensitivityVector(np.array(scores), est, float(p), float(tol))


def write_indices(path, idx):
    Path(path).write_text("".join(f"{int(j)}\n" for j in idx))


def read_indices(path):
    return np.array([int(t) for t in Path(path).read_text().split()], dtype=np.int64)


def _pack_array(parts, a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    parts.append(struct.pack("<Q", a.ndim))
    parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
    parts.append(a.tobytes())


def _unpack_array(buf, off, dtype):
    (ndim,) = struct.unpack_from("<Q", buf, off)
    off += 8
    shape = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    size = count * np.dtype(dtype).itemsize
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(shape).copy()
    return arr, off + size


def engine_to_bytes(engine: QueryEngine) -> bytes:
    U = engine.uset
    est = U.estimator.encode()
    mode = engine.mode.encode()
    parts = [
        ENGINE_MAGIC,
        struct.pack("<I", ENGINE_VERSION),
        struct.pack("<ddddQ", engine.p, U.epsilon, U.budget, U.slack, engine.d),
        struct.pack("<H", len(mode)),
        mode,
        struct.pack("<H", len(est)),
        est,
    ]
    _pack_array(parts, U.indices, "<i8")
    _pack_array(parts, engine.keys, "<f8")
    if engine.mode == "exact":
        _pack_array(parts, engine.sigma_vt, "<f8")
    else:
        s = engine.sampler
        parts.append(struct.pack("<dd", s.eps_norm, s.constant))
        _pack_array(parts, s.indices, "<i8")
        _pack_array(parts, s.probs, "<f8")
        _pack_array(parts, s.rows, "<f8")
    return b"".join(parts)


def engine_from_bytes(buf: bytes) -> QueryEngine:
    if buf[:4] != ENGINE_MAGIC:
        raise FormatError("not a LENG engine blob")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != ENGINE_VERSION:
        raise FormatError(f"unsupported engine version {version}")
    off = 8
    p, eps, budget, slack, d = struct.unpack_from("<ddddQ", buf, off)
    off += struct.calcsize("<ddddQ")
    (ml,) = struct.unpack_from("<H", buf, off)
    mode = buf[off + 2 : off + 2 + ml].decode()
    off += 2 + ml
    (el,) = struct.unpack_from("<H", buf, off)
    est = buf[off + 2 : off + 2 + el].decode()
    off += 2 + el
    idx, off = _unpack_array(buf, off, "<i8")
    keys, off = _unpack_array(buf, off, "<f8")
    U = UniversalSet(idx, eps, budget, est, p, slack)
    if mode == "exact":
        svt, off = _unpack_array(buf, off, "<f8")
        return QueryEngine(U, keys, p, mode, d, sigma_vt=svt)
    eps_norm, const = struct.unpack_from("<dd", buf, off)
    off += 16
    sidx, off = _unpack_array(buf, off, "<i8")
    probs, off = _unpack_array(buf, off, "<f8")
    rows, off = _unpack_array(buf, off, "<f8")
    sampler = SampledNormalizer(sidx, probs, rows, p, eps_norm, const)
    return QueryEngine(U, keys, p, mode, d, sampler=sampler)


def save_engine(path, engine: QueryEngine):
    Path(path).write_bytes(engine_to_bytes(engine))


def load_engine(path) -> QueryEngine:
    return engine_from_bytes(Path(path).read_bytes())
