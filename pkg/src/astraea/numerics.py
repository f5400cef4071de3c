"""Dense float64 substrate: matrices, matmul, softmax with sum-exp scores, and a seeded RNG.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Every
matrix product in the package goes through :func:`matmul` so that an active
:class:`FlopCounter` sees it, and every attention-map buffer is reported to an
active :class:`BufferTracker`.

The random generator is SplitMix64::

    state <- state + 0x9E3779B97F4A7C15            (mod 2**64)
    z <- state
    z <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9      (mod 2**64)
    z <- (z ^ (z >> 27)) * 0x94D049BB133111EB      (mod 2**64)
    out <- z ^ (z >> 31)

A uniform double is ``(out >> 11) * 2**-53``. Gaussian draws use the cosine
branch of Box-Muller on two consecutive uniforms ``u1, u2``:
``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import DomainError, ShapeError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate ``data`` as a finite 2-D float64 matrix, optionally with a fixed shape."""
    m = np.asarray(data, dtype=np.float64)
    if m.ndim == 1 and rows is not None and cols is not None:
        if m.size != rows * cols:
            raise ShapeError(f"data length {m.size} != {rows}x{cols}")
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if (rows is not None and m.shape[0] != rows) or (cols is not None and m.shape[1] != cols):
        raise ShapeError(f"expected {rows}x{cols}, got {m.shape[0]}x{m.shape[1]}")
    if not np.all(np.isfinite(m)):
        raise DomainError("matrix has non-finite entries")
    return m


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float64)


# -- instrumentation ---------------------------------------------------------


@dataclass
class FlopCounter:
    """Counts ``2*m*n*k`` floating point operations per ``m x n @ n x k`` product."""

    total: int = 0
    calls: list[tuple[str, int, int, int]] = field(default_factory=list)

    def add(self, tag: str, m: int, n: int, k: int) -> None:
        self.total += 2 * m * n * k
        self.calls.append((tag, m, n, k))

    def by_tag(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for tag, m, n, k in self.calls:
            out[tag] = out.get(tag, 0) + 2 * m * n * k
        return out


@dataclass
class BufferTracker:
    """Records the shape of every transient attention-map buffer."""

    shapes: list[tuple[int, int]] = field(default_factory=list)

    @property
    def peak_elements(self) -> int:
        return max((r * c for r, c in self.shapes), default=0)


_counter: contextvars.ContextVar[FlopCounter | None] = contextvars.ContextVar(
    "flop_counter", default=None
)
_tracker: contextvars.ContextVar[BufferTracker | None] = contextvars.ContextVar(
    "buffer_tracker", default=None
)


@contextmanager
def count_flops() -> Iterator[FlopCounter]:
    counter = FlopCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


@contextmanager
def track_buffers() -> Iterator[BufferTracker]:
    tracker = BufferTracker()
    token = _tracker.set(tracker)
    try:
        yield tracker
    finally:
        _tracker.reset(token)


def note_buffer(shape: tuple[int, int]) -> None:
    tracker = _tracker.get()
    if tracker is not None:
        tracker.shapes.append((int(shape[0]), int(shape[1])))


# -- linear algebra ----------------------------------------------------------


def matmul(a: np.ndarray, b: np.ndarray, tag: str = "matmul") -> np.ndarray:
    """Matrix product ``a @ b``.

    Raises :class:`ShapeError` when the inner dimensions differ. The product
    is delegated to numpy; results are bit-stable for a given shape on a given
    BLAS build.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    counter = _counter.get()
    if counter is not None:
        counter.add(tag, a.shape[0], a.shape[1], b.shape[1])
    return a @ b


def softmax_rows_with_lse(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row softmax plus the per-row sum of exponentials.

    The sum-exp score of row ``i`` is ``sum_k exp(a[i, k])``. It is computed in
    the log domain with a max shift and exponentiated on return, so it may
    overflow to ``inf`` for very large logits while the probabilities stay
    finite.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    shift = a.max(axis=1, keepdims=True)
    e = np.exp(a - shift)
    s = e.sum(axis=1, keepdims=True)
    probs = e / s
    lse = shift[:, 0] + np.log(s[:, 0])
    with np.errstate(over="ignore"):
        sumexp = np.exp(lse)
    return probs, sumexp


# -- randomness --------------------------------------------------------------


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 generator. Single owner; not safe to share across threads."""

    algorithm = "splitmix64"

    def __init__(self, seed: int) -> None:
        self.state = int(seed) & _MASK64

    def next_u64_array(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * _GOLDEN
            out = _mix(states)
        self.state = (self.state + n * 0x9E3779B97F4A7C15) & _MASK64
        return out

    def next_u64(self) -> int:
        return int(self.next_u64_array(1)[0])

    def uniform_array(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if lo > hi:
            raise DomainError(f"lo={lo} > hi={hi}")
        u = (self.next_u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return lo + (hi - lo) * u

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return float(self.uniform_array(1, lo, hi)[0])

    def choice(self, n: int) -> int:
        if n < 1:
            raise DomainError("choice needs n >= 1")
        return min(int(self.uniform() * n), n - 1)

    def gauss_array(self, n: int) -> np.ndarray:
        u = self.uniform_array(2 * n).reshape(n, 2)
        return np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])

    def gauss(self) -> float:
        return float(self.gauss_array(1)[0])

    def gauss_matrix(self, rows: int, cols: int, scale: float = 1.0) -> np.ndarray:
        return self.gauss_array(rows * cols).reshape(rows, cols) * scale

    def spawn(self, tag: int) -> "Rng":
        """Independent child stream derived from the current state and ``tag``."""
        child = Rng(self.state ^ ((tag * 0xD1B54A32D192ED03) & _MASK64))
        child.next_u64()
        return child


def rng_uniform(rng: Rng, lo: float, hi: float) -> float:
    return rng.uniform(lo, hi)


def rng_choice(rng: Rng, n: int) -> int:
    return rng.choice(n)


def rng_gauss(rng: Rng) -> float:
    return rng.gauss()
