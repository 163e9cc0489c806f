"""Static-model range coder with 16-bit frequency tables.

The coder keeps a 64-bit ``low``/``range`` pair and renormalizes carry-free
(Subbotin style): a byte is emitted once the top byte of ``low`` and
``low + range`` agree, and when the range underflows across a byte boundary
it is shrunk to end at that boundary. Bytes are written most significant
first. Each symbol is coded with its own table.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .numerics import ConfigurationError, ContractError

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 56
_BOT = 1 << 32
_MASK = (1 << 64) - 1
_STATE_BYTES = 8


class CoderError(ContractError):
    """Symbol outside its alphabet."""


class DecodeError(ValueError):
    """Truncated or corrupt payload."""


@dataclass(frozen=True)
class CdfTable:
    """Cumulative frequencies, one row per coded symbol (or one shared row).

    ``cdf[m, 0] == 0``, ``cdf[m, -1] == TOTAL`` and rows strictly increase.
    """

    cdf: np.ndarray  # (M, n + 1) int64

    @property
    def alphabet_size(self) -> int:
        return self.cdf.shape[1] - 1

    def __len__(self) -> int:
        return self.cdf.shape[0]

    def freqs(self) -> np.ndarray:
        return np.diff(self.cdf, axis=1)

    def ideal_bits(self, symbols) -> float:
        """Code length implied by the quantized frequencies."""
        s = np.asarray(symbols, dtype=np.int64)
        rows = np.arange(s.size) if len(self) > 1 else np.zeros(s.size, dtype=np.int64)
        f = self.freqs()[rows, s]
        return float(-np.log2(f / TOTAL).sum())


def build_cdf(pmf) -> CdfTable:
    """Quantize probability rows to integer frequencies summing to ``2**16``.

    Each frequency starts as ``max(1, round(p * 2**16))``. A shortfall goes to
    the symbols with the largest rounding remainders; an excess is removed in
    proportion to each symbol's headroom above 1, with leftover units assigned
    by largest remainder. Ties resolve to the lower symbol index.
    """
    p = np.atleast_2d(np.asarray(pmf, dtype=np.float64))
    m, n = p.shape
    if n < 1 or n > TOTAL:
        raise ConfigurationError(f"alphabet of {n} symbols cannot give each symbol frequency >= 1")
    if (p < 0).any() or not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
        raise ConfigurationError("pmf rows must be non-negative and sum to 1")
    scaled = p * TOTAL
    freq = np.maximum(1, np.rint(scaled)).astype(np.int64)
    diff = TOTAL - freq.sum(axis=1)

    grow = diff > 0
    if grow.any():
        rem = np.where(grow[:, None], scaled - freq, -np.inf)
        rank = _rank_desc(rem)
        freq += (rank < diff[:, None]) & grow[:, None]

    shrink = diff < 0
    if shrink.any():
        need = np.where(shrink, -diff, 0)[:, None]
        cap = np.where(shrink[:, None], freq - 1, 0)
        total_cap = np.maximum(cap.sum(axis=1, keepdims=True), 1)
        share = need * cap / total_cap
        take = np.floor(share).astype(np.int64)
        left = need[:, 0] - take.sum(axis=1)
        frac = np.where(cap - take > 0, share - take, -np.inf)
        rank = _rank_desc(frac)
        take += (rank < left[:, None]) & np.isfinite(frac)
        freq -= take

    cdf = np.zeros((m, n + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cdf[:, 1:])
    assert (cdf[:, -1] == TOTAL).all() and (freq >= 1).all()
    return CdfTable(cdf)


def _rank_desc(values: np.ndarray) -> np.ndarray:
    """Per-row rank of each entry when sorted descending (stable on index)."""
    order = np.argsort(-values, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(values.shape[1])[None, :].repeat(values.shape[0], 0), axis=1)
    return rank


def _rows(tables: CdfTable, count: int) -> list[list[int]]:
    if len(tables) == 1:
        row = tables.cdf[0].tolist()
        return [row] * count
    if len(tables) != count:
        raise CoderError(f"{count} symbols but {len(tables)} tables")
    return tables.cdf.tolist()


def rc_encode(symbols, tables: CdfTable) -> bytes:
    symbols = [int(s) for s in np.asarray(symbols).reshape(-1)]
    if not symbols:
        return b""
    rows = _rows(tables, len(symbols))
    n = tables.alphabet_size
    out = bytearray()
    low, rng = 0, _MASK
    for s, cdf in zip(symbols, rows):
        if not 0 <= s < n:
            raise CoderError(f"symbol {s} outside alphabet of size {n}")
        r = rng >> PRECISION
        low += r * cdf[s]
        rng = r * (cdf[s + 1] - cdf[s])
        while True:
            if (low ^ (low + rng)) >= _TOP:
                if rng >= _BOT:
                    break
                rng = (-low) & (_BOT - 1)
            out.append(low >> 56)
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK
    out += low.to_bytes(_STATE_BYTES, "big")
    return bytes(out)


def rc_decode(data: bytes, tables: CdfTable, count: int | None = None) -> list[int]:
    """Decode ``count`` symbols (default: one per table row).

    Raises :class:`DecodeError` if the payload is shorter than the stream
    needs, if a decoded value falls outside the table, or if bytes are left
    over at the end.
    """
    count = len(tables) if count is None else count
    if count == 0:
        if data:
            raise DecodeError("payload for an empty symbol sequence must be empty")
        return []
    rows = _rows(tables, count)
    if len(data) < _STATE_BYTES:
        raise DecodeError("payload shorter than the coder state")
    code = int.from_bytes(data[:_STATE_BYTES], "big")
    pos = _STATE_BYTES
    size = len(data)
    low, rng = 0, _MASK
    out = []
    for cdf in rows:
        r = rng >> PRECISION
        v = (code - low) // r
        if not 0 <= v < TOTAL:
            raise DecodeError("corrupt payload: code value outside the coding interval")
        s = bisect_right(cdf, v) - 1
        out.append(s)
        low += r * cdf[s]
        rng = r * (cdf[s + 1] - cdf[s])
        while True:
            if (low ^ (low + rng)) >= _TOP:
                if rng >= _BOT:
                    break
                rng = (-low) & (_BOT - 1)
            if pos >= size:
                raise DecodeError("truncated payload")
            code = ((code << 8) | data[pos]) & _MASK
            pos += 1
            low = (low << 8) & _MASK
            rng = (rng << 8) & _MASK
    if pos != size:
        raise DecodeError(f"{size - pos} trailing bytes after the last symbol")
    return out
