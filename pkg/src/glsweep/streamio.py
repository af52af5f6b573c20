"""Binary matrix/result formats and the double-buffered block pipeline.

Matrix file (``GWASMAT1``), little-endian, 64-byte header::

    0   8s   magic  b"GWASMAT1"
    8   u8   dtype  (0 = float64)
    9   u8   layout (0 = column-major)
    10  u64  rows
    18  u64  cols
    26  38x  reserved, zero

followed by ``rows * cols`` float64 values in column-major order, so a run
of consecutive columns (SNPs) is one contiguous byte range.

Result file (``GWASRES1``), 64-byte header::

    0   8s   magic  b"GWASRES1"
    8   u8   dtype  (0 = float64)
    9   u8   state  (0 = complete, 1 = partial)
    10  u16  w
    12  u64  m
    20  u64  t      number of trait sections in the file
    28  36x  reserved, zero

followed by ``m * t`` fixed-length records (trait-major, SNP-minor)::

    u64 snp_index, u32 trait_index, u32 status, w x f64 beta, w x f64 stderr
"""

from __future__ import annotations

import math
import os
import queue
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, StreamIOError, StructuralError
from .model import GenotypeBlock

HEADER_BYTES = 64
MATRIX_MAGIC = b"GWASMAT1"
RESULT_MAGIC = b"GWASRES1"
DTYPE_F64 = 0
LAYOUT_COLMAJOR = 0
STATE_COMPLETE = 0
STATE_PARTIAL = 1
DEFAULT_BLOCK_SIZE = 256
BUFFER_COUNT = 2

_MATRIX_HEADER = struct.Struct("<8sBBQQ38x")
_RESULT_HEADER = struct.Struct("<8sBBHQQ36x")
assert _MATRIX_HEADER.size == HEADER_BYTES and _RESULT_HEADER.size == HEADER_BYTES


def scratch_dir(override=None) -> Path:
    """Scratch location: explicit override, ``GLS_SCRATCH_DIR``, or the temp dir."""
    import tempfile

    if override:
        return Path(override)
    env = os.environ.get("GLS_SCRATCH_DIR")
    return Path(env) if env else Path(tempfile.gettempdir())


# -- matrix files -------------------------------------------------------------------


@dataclass(frozen=True)
class MatrixFileHeader:
    rows: int
    cols: int
    dtype: int = DTYPE_F64
    layout: int = LAYOUT_COLMAJOR

    @property
    def data_bytes(self) -> int:
        return self.rows * self.cols * 8

    def pack(self) -> bytes:
        return _MATRIX_HEADER.pack(MATRIX_MAGIC, self.dtype, self.layout, self.rows, self.cols)


def read_header(path) -> MatrixFileHeader:
    path = Path(path)
    try:
        size = path.stat().st_size
        with open(path, "rb") as fh:
            raw = fh.read(HEADER_BYTES)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise StreamIOError(f"cannot read {path}: {exc}") from exc
    if len(raw) < HEADER_BYTES:
        raise FormatError(f"file is {len(raw)} bytes, shorter than the {HEADER_BYTES}-byte header", path, len(raw))
    magic, dtype, layout, rows, cols = _MATRIX_HEADER.unpack(raw)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MATRIX_MAGIC!r}", path, 0)
    if dtype != DTYPE_F64:
        raise FormatError(f"unsupported dtype code {dtype}", path, 8)
    if layout != LAYOUT_COLMAJOR:
        raise FormatError(f"unsupported layout code {layout}", path, 9)
    hdr = MatrixFileHeader(rows=rows, cols=cols)
    expected = HEADER_BYTES + hdr.data_bytes
    if size != expected:
        raise FormatError(f"size mismatch: file has {size} bytes, header implies {expected}", path, min(size, expected))
    return hdr


def write_matrix(path, array) -> int:
    """Write a 2-D array (or 1-D as a single column). Returns bytes written."""
    a = np.asarray(array, dtype="<f8")
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise StructuralError(f"expected a 2-D array, got {a.ndim} dims")
    hdr = MatrixFileHeader(rows=a.shape[0], cols=a.shape[1])
    with open(path, "wb") as fh:
        fh.write(hdr.pack())
        fh.write(np.asfortranarray(a).tobytes(order="F"))
        fh.flush()
        os.fsync(fh.fileno())
    return HEADER_BYTES + hdr.data_bytes


def read_matrix(path) -> np.ndarray:
    """Read a whole matrix file; the result is Fortran-ordered (rows, cols)."""
    hdr = read_header(path)
    data = np.fromfile(path, dtype="<f8", offset=HEADER_BYTES, count=hdr.rows * hdr.cols)
    return data.reshape((hdr.rows, hdr.cols), order="F").astype(np.float64, copy=False)


class MatrixFile:
    """Random-access column reader over a matrix file."""

    def __init__(self, path):
        self.path = Path(path)
        self.header = read_header(self.path)
        self._fd = os.open(self.path, os.O_RDONLY)

    @property
    def n_rows(self) -> int:
        return self.header.rows

    @property
    def n_cols(self) -> int:
        return self.header.cols

    def read_into(self, start: int, stop: int, out: np.ndarray) -> None:
        """Fill ``out`` (C-ordered, shape (stop - start, rows)) with columns start:stop."""
        nbytes = (stop - start) * self.n_rows * 8
        view = memoryview(out).cast("B")[:nbytes]
        offset = HEADER_BYTES + start * self.n_rows * 8
        got = 0
        while got < nbytes:
            k = os.preadv(self._fd, [view[got:]], offset + got)
            if k <= 0:
                raise StreamIOError(f"unexpected end of file in {self.path} at byte {offset + got}")
            got += k

    def read_all(self) -> np.ndarray:
        return read_matrix(self.path)

    def close(self):
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


class ArraySource:
    """Block source over an in-memory (rows, cols) array."""

    def __init__(self, array):
        a = np.asarray(array, dtype=np.float64)
        if a.ndim == 1:
            a = a[:, None]
        self.array = a

    @property
    def n_rows(self) -> int:
        return self.array.shape[0]

    @property
    def n_cols(self) -> int:
        return self.array.shape[1]

    def read_into(self, start, stop, out):
        out[: stop - start] = self.array[:, start:stop].T

    def read_all(self):
        return self.array

    def close(self):
        pass


def as_source(obj):
    """Accept a path, an ndarray, or anything with ``read_into``."""
    if hasattr(obj, "read_into"):
        return obj
    if isinstance(obj, (str, os.PathLike)):
        return MatrixFile(obj)
    return ArraySource(obj)


# -- block planning and streaming -----------------------------------------------------


@dataclass(frozen=True)
class BlockPlan:
    m: int
    block_size: int
    n_rows: int
    buffer_count: int = BUFFER_COUNT

    def __post_init__(self):
        if self.block_size < 1:
            raise StructuralError(f"block size must be >= 1, got {self.block_size}")
        if self.m < 0:
            raise StructuralError(f"m must be >= 0, got {self.m}")

    @property
    def num_blocks(self) -> int:
        return math.ceil(self.m / self.block_size)

    def ranges(self) -> list[tuple[int, int]]:
        k = self.block_size
        return [(s, min(s + k, self.m)) for s in range(0, self.m, k)]

    @property
    def widths(self) -> list[int]:
        return [b - a for a, b in self.ranges()]

    @property
    def offsets(self) -> list[int]:
        """Byte offset of each block inside a matrix file."""
        return [HEADER_BYTES + a * self.n_rows * 8 for a, _ in self.ranges()]


def make_plan(source, block_size=DEFAULT_BLOCK_SIZE) -> BlockPlan:
    return BlockPlan(m=source.n_cols, block_size=min(block_size, max(source.n_cols, 1)), n_rows=source.n_rows)


@dataclass
class IOStats:
    """Busy seconds of the I/O flows, accumulated across threads."""

    read_seconds: float = 0.0
    write_seconds: float = 0.0
    blocks_read: int = 0
    bytes_written: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add_read(self, dt):
        with self._lock:
            self.read_seconds += dt
            self.blocks_read += 1

    def add_write(self, dt, nbytes=0):
        with self._lock:
            self.write_seconds += dt
            self.bytes_written += nbytes


_DONE = object()


class _ReaderFailure:
    def __init__(self, block, exc):
        self.block = block
        self.exc = exc


def stream_blocks(source, plan: BlockPlan, prefetch: bool = True, stats: IOStats | None = None):
    """Yield :class:`GenotypeBlock` objects in column order.

    With ``prefetch`` a reader thread fills the second of two buffers while
    the consumer works on the first. A yielded block's array is only valid
    until the next one is requested; copy it to keep it.
    """
    source = as_source(source)
    if source.n_rows != plan.n_rows or source.n_cols != plan.m:
        raise StructuralError(
            f"plan ({plan.n_rows} x {plan.m}) does not match source ({source.n_rows} x {source.n_cols})"
        )
    stats = stats if stats is not None else IOStats()
    ranges = plan.ranges()
    n, k = plan.n_rows, plan.block_size

    if not prefetch:
        buf = np.empty((k, n))
        for b, (start, stop) in enumerate(ranges):
            t0 = time.perf_counter()
            try:
                source.read_into(start, stop, buf)
            except StreamIOError:
                raise
            except OSError as exc:
                raise StreamIOError(f"read failed: {exc}", b) from exc
            stats.add_read(time.perf_counter() - t0)
            yield GenotypeBlock(buf[: stop - start].T, start)
        return

    free: queue.Queue = queue.Queue()
    ready: queue.Queue = queue.Queue()
    for _ in range(plan.buffer_count):
        free.put(np.empty((k, n)))
    halt = threading.Event()

    def reader():
        b = -1
        try:
            for b, (start, stop) in enumerate(ranges):
                while True:
                    if halt.is_set():
                        return
                    try:
                        buf = free.get(timeout=0.05)
                        break
                    except queue.Empty:
                        continue
                t0 = time.perf_counter()
                source.read_into(start, stop, buf)
                stats.add_read(time.perf_counter() - t0)
                ready.put((start, stop, buf))
            ready.put(_DONE)
        except BaseException as exc:  # handed to the consumer
            ready.put(_ReaderFailure(b, exc))

    thread = threading.Thread(target=reader, name="glsweep-reader", daemon=True)
    thread.start()
    held = None
    try:
        while True:
            if held is not None:
                free.put(held)
                held = None
            item = ready.get()
            if item is _DONE:
                return
            if isinstance(item, _ReaderFailure):
                if isinstance(item.exc, StreamIOError):
                    raise item.exc
                raise StreamIOError(f"read failed: {item.exc}", item.block) from item.exc
            start, stop, held = item
            yield GenotypeBlock(held[: stop - start].T, start)
    finally:
        halt.set()
        thread.join()


# -- background writing ----------------------------------------------------------------


class _BackgroundWriter:
    """Single writer thread fed through a bounded queue."""

    def __init__(self, write_fn, stats: IOStats, background=True, depth=1):
        self._write_fn = write_fn
        self.stats = stats
        self.background = background
        self.error: BaseException | None = None
        if background:
            self._q: queue.Queue = queue.Queue(maxsize=depth)
            self._thread = threading.Thread(target=self._run, name="glsweep-writer", daemon=True)
            self._thread.start()

    def _do(self, item):
        t0 = time.perf_counter()
        nbytes = self._write_fn(item)
        self.stats.add_write(time.perf_counter() - t0, nbytes or 0)

    def _run(self):
        while True:
            item = self._q.get()
            if item is _DONE:
                return
            if self.error is not None:
                continue
            try:
                self._do(item)
            except BaseException as exc:
                self.error = exc

    def submit(self, item):
        self._raise()
        if self.background:
            self._q.put(item)
        else:
            try:
                self._do(item)
            except BaseException as exc:
                self.error = exc
                self._raise()

    def finish(self):
        if self.background and self._thread.is_alive():
            self._q.put(_DONE)
            self._thread.join()
        self._raise()

    def _raise(self):
        if self.error is not None:
            exc = self.error
            if isinstance(exc, StreamIOError):
                raise exc
            raise StreamIOError(f"write failed: {exc}") from exc


class MatrixWriter:
    """Sequential column writer for a matrix file of known shape."""

    def __init__(self, path, rows, cols, background=False, stats: IOStats | None = None):
        self.path = Path(path)
        self.rows, self.cols = int(rows), int(cols)
        self.stats = stats if stats is not None else IOStats()
        self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
        os.pwrite(self._fd, MatrixFileHeader(self.rows, self.cols).pack(), 0)
        self._next_col = 0
        self._worker = _BackgroundWriter(self._write, self.stats, background=background)

    def _write(self, item):
        start, data = item
        payload = np.asarray(data, dtype="<f8").tobytes(order="F")
        off = HEADER_BYTES + start * self.rows * 8
        view = memoryview(payload)
        done = 0
        while done < len(view):
            done += os.pwrite(self._fd, view[done:], off + done)
        return len(payload)

    def write_columns(self, block) -> None:
        """Append ``block`` (rows, k). Ownership passes to the writer."""
        block = np.asarray(block)
        if block.ndim == 1:
            block = block[:, None]
        if block.shape[0] != self.rows or self._next_col + block.shape[1] > self.cols:
            raise StructuralError(f"block {block.shape} does not fit matrix {self.rows} x {self.cols}")
        start = self._next_col
        self._next_col += block.shape[1]
        self._worker.submit((start, block))

    def close(self):
        if self._fd < 0:
            return
        try:
            self._worker.finish()
            if self._next_col != self.cols:
                raise FormatError(f"wrote {self._next_col} of {self.cols} columns", self.path)
            os.fsync(self._fd)
        finally:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# -- result files ---------------------------------------------------------------------


def record_dtype(w: int) -> np.dtype:
    return np.dtype(
        [("snp", "<u8"), ("trait", "<u4"), ("status", "<u4"), ("beta", "<f8", (w,)), ("stderr", "<f8", (w,))]
    )


def record_size(w: int) -> int:
    return 16 + 16 * w


@dataclass(frozen=True)
class ResultFileHeader:
    w: int
    m: int
    t: int
    state: int = STATE_COMPLETE

    def pack(self) -> bytes:
        return _RESULT_HEADER.pack(RESULT_MAGIC, DTYPE_F64, self.state, self.w, self.m, self.t)


class ResultWriter:
    """Result sink writing canonical-order records from any production order.

    Each (trait section, SNP) pair owns a fixed slot, so blocks may arrive out
    of order. The header says ``partial`` until :meth:`close` has seen every
    record and flushed.
    """

    def __init__(self, path, m, w, traits, background=True, stats: IOStats | None = None):
        self.path = Path(path)
        self.m, self.w = int(m), int(w)
        self.traits = [int(j) for j in traits]
        self._pos = {j: i for i, j in enumerate(self.traits)}
        self.stats = stats if stats is not None else IOStats()
        self.dtype = record_dtype(self.w)
        self.records_written = 0
        self._lock = threading.Lock()
        try:
            self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
        except OSError as exc:
            raise StreamIOError(f"cannot open result file {self.path}: {exc}") from exc
        self._header(STATE_PARTIAL)
        self._worker = _BackgroundWriter(self._write, self.stats, background=background, depth=2)

    @property
    def total_records(self) -> int:
        return self.m * len(self.traits)

    def _header(self, state):
        os.pwrite(self._fd, ResultFileHeader(self.w, self.m, len(self.traits), state).pack(), 0)

    def _write(self, block):
        recs = np.zeros(block.k, dtype=self.dtype)
        recs["snp"] = np.arange(block.first_snp, block.first_snp + block.k)
        recs["trait"] = block.trait_index
        recs["status"] = block.status
        recs["beta"] = block.beta
        recs["stderr"] = block.stderr
        payload = recs.tobytes()
        slot = self._pos[block.trait_index] * self.m + block.first_snp
        off = HEADER_BYTES + slot * self.dtype.itemsize
        view = memoryview(payload)
        done = 0
        while done < len(view):
            done += os.pwrite(self._fd, view[done:], off + done)
        with self._lock:
            self.records_written += block.k
        return len(payload)

    def write_block(self, block) -> None:
        if block.trait_index not in self._pos:
            raise StructuralError(f"trait {block.trait_index} is not part of this result file")
        if block.first_snp + block.k > self.m:
            raise StructuralError(f"SNPs {block.first_snp}..{block.first_snp + block.k} exceed m={self.m}")
        self._worker.submit(block)

    def close(self, abort=False) -> int:
        """Flush, mark complete and return the file size in bytes."""
        if self._fd < 0:
            return HEADER_BYTES + self.records_written * self.dtype.itemsize
        try:
            self._worker.finish()
            if abort:
                return HEADER_BYTES + self.records_written * self.dtype.itemsize
            if self.records_written != self.total_records:
                raise StreamIOError(
                    f"result file {self.path} incomplete: {self.records_written} of {self.total_records} records"
                )
            os.fsync(self._fd)
            self._header(STATE_COMPLETE)
            os.fsync(self._fd)
            return HEADER_BYTES + self.total_records * self.dtype.itemsize
        finally:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close(abort=exc_type is not None)


@dataclass
class ResultTable:
    header: ResultFileHeader
    records: np.ndarray

    @property
    def w(self):
        return self.header.w

    def grid(self, field_name):
        """Field reshaped to (t, m[, w])."""
        a = self.records[field_name]
        return a.reshape((self.header.t, self.header.m) + a.shape[1:])


def read_results(path) -> ResultTable:
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_BYTES)
    if len(raw) < HEADER_BYTES:
        raise FormatError("result file shorter than its header", path, len(raw))
    magic, dtype, state, w, m, t = _RESULT_HEADER.unpack(raw)
    if magic != RESULT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {RESULT_MAGIC!r}", path, 0)
    if dtype != DTYPE_F64:
        raise FormatError(f"unsupported dtype code {dtype}", path, 8)
    if state != STATE_COMPLETE:
        raise FormatError("result file is marked partial (run aborted)", path, 9)
    expected = HEADER_BYTES + m * t * record_size(w)
    if size != expected:
        raise FormatError(f"size mismatch: file has {size} bytes, header implies {expected}", path, min(size, expected))
    recs = np.fromfile(path, dtype=record_dtype(w), offset=HEADER_BYTES, count=m * t)
    return ResultTable(ResultFileHeader(w=w, m=m, t=t, state=state), recs)


def write_results(path, records, m, w, traits) -> int:
    """Write an iterable of :class:`~glsweep.model.GlsResult` (any order).

    Returns the byte count of the finished file.
    """
    from .results import ResultBlock

    with ResultWriter(path, m, w, traits, background=False) as sink:
        for r in records:
            sink.write_block(
                ResultBlock(
                    trait_index=r.trait_index,
                    first_snp=r.snp_index,
                    beta=np.asarray(r.beta, dtype=np.float64)[None, :],
                    stderr=np.asarray(r.stderr, dtype=np.float64)[None, :],
                    status=np.array([r.status], dtype=np.uint32),
                )
            )
        return sink.close()


def overlap_report(compute_seconds, stats: IOStats, wall_seconds) -> dict:
    """Per-flow busy times, wall time and overlap efficiency.

    Efficiency is ``(compute + read + write - wall) / min(compute, read + write)``:
    1 means the smaller side was fully hidden, 0 means nothing overlapped.
    """
    io = stats.read_seconds + stats.write_seconds
    denom = min(compute_seconds, io)
    eff = (compute_seconds + io - wall_seconds) / denom if denom > 0 else float("nan")
    return {
        "compute_seconds": compute_seconds,
        "read_seconds": stats.read_seconds,
        "write_seconds": stats.write_seconds,
        "wall_seconds": wall_seconds,
        "overlap_efficiency": eff,
    }
