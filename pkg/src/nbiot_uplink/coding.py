"""Uplink bit-level chain: CRC-24, rate-1/3 turbo code with QPP
interleaving, circular-buffer rate matching, Gold-sequence scrambling,
and the LLR combining used ahead of the decoder.

Conventions frozen here and relied on everywhere else:

* LLR sign: positive means bit 0 is more likely.
* Turbo mother word is stream-major, ``[d0 | d1 | d2]`` with each
  stream K+4 long (systematic/parity plus interleaved tail bits).
* Scrambling is a length-31 Gold sequence; identical slot repetitions
  of one resource unit reuse the same sequence so their LLRs can be
  combined before descrambling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from ._kernels import crc_remainder, gold31, max_log_bcjr, rsc_encode
from .errors import ConfigurationError, DegenerateInputError

CRC24_WIDTH = 24
# x^24 + x^23 + x^18 + x^17 + x^14 + x^11 + x^10 + x^7 + x^6 + x^5 + x^4 + x^3 + x + 1
CRC24_POLY_LOW = 0x864CFB

_SUBBLOCK_COLUMNS = 32
_SUBBLOCK_PERM = np.array(
    [0, 16, 8, 24, 4, 20, 12, 28, 2, 18, 10, 26, 6, 22, 14, 30,
     1, 17, 9, 25, 5, 21, 13, 29, 3, 19, 11, 27, 7, 23, 15, 31], dtype=np.int64)

DEFAULT_HALF_ITERATIONS = 8
EXTRINSIC_SCALE = 0.75


def _load_qpp_table() -> dict[int, tuple[int, int]]:
    table = {}
    text = resources.files("nbiot_uplink.data").joinpath("turbo_qpp.txt").read_text()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        k, f1, f2 = (int(v) for v in line.split())
        table[k] = (f1, f2)
    return table


QPP_TABLE = _load_qpp_table()


@lru_cache(maxsize=64)
def qpp_permutation(k: int) -> np.ndarray:
    """pi(i) = (f1*i + f2*i^2) mod K for a table-supported block size."""
    if k not in QPP_TABLE:
        raise ConfigurationError(f"tbs: no interleaver for block size K={k}")
    f1, f2 = QPP_TABLE[k]
    i = np.arange(k, dtype=np.int64)
    return (f1 * i + f2 * i * i) % k


# ---------------------------------------------------------------------------
# CRC
# ---------------------------------------------------------------------------

def crc24_attach(bits: np.ndarray) -> np.ndarray:
    """Append the 24 CRC parity bits to a payload."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size == 0:
        raise ConfigurationError("payload: must be non-empty")
    rem = crc_remainder(bits, CRC24_POLY_LOW, CRC24_WIDTH)
    parity = (rem >> np.arange(CRC24_WIDTH - 1, -1, -1)) & 1
    return np.concatenate([bits, parity.astype(np.uint8)])


def crc24_check(bits: np.ndarray) -> bool:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size <= CRC24_WIDTH:
        return False
    return crc_remainder(bits, CRC24_POLY_LOW, CRC24_WIDTH) == 0


# ---------------------------------------------------------------------------
# Turbo code
# ---------------------------------------------------------------------------

def turbo_encode(bits: np.ndarray) -> np.ndarray:
    """Rate-1/3 parallel concatenated encode.

    Returns the stream-major mother word [d0 | d1 | d2], each stream
    K+4 bits: K payload positions followed by the four tail positions
    interleaved across streams.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    k = bits.size
    perm = qpp_permutation(k)

    enc1 = rsc_encode(bits)
    enc2 = rsc_encode(bits[perm])
    x_tail1, z_tail1 = enc1[2 * k:2 * k + 3], enc1[2 * k + 3:]
    x_tail2, z_tail2 = enc2[2 * k:2 * k + 3], enc2[2 * k + 3:]

    d0 = np.empty(k + 4, dtype=np.uint8)
    d1 = np.empty(k + 4, dtype=np.uint8)
    d2 = np.empty(k + 4, dtype=np.uint8)
    d0[:k] = enc1[:k]
    d1[:k] = enc1[k:2 * k]
    d2[:k] = enc2[k:2 * k]
    d0[k:] = (x_tail1[0], z_tail1[1], x_tail2[0], z_tail2[1])
    d1[k:] = (z_tail1[0], x_tail1[2], z_tail2[0], x_tail2[2])
    d2[k:] = (x_tail1[1], z_tail1[2], x_tail2[1], z_tail2[2])
    return np.concatenate([d0, d1, d2])


def _tail_llrs(d0, d1, d2, k):
    """Per-constituent systematic/parity tail LLRs from the stream tails."""
    sys1 = np.array([d0[k], d2[k], d1[k + 1]])
    par1 = np.array([d1[k], d0[k + 1], d2[k + 1]])
    sys2 = np.array([d0[k + 2], d2[k + 2], d1[k + 3]])
    par2 = np.array([d1[k + 2], d0[k + 3], d2[k + 3]])
    return sys1, par1, sys2, par2


def turbo_decode(mother_llrs: np.ndarray, k: int,
                 half_iterations: int = DEFAULT_HALF_ITERATIONS,
                 extrinsic_scale: float = EXTRINSIC_SCALE,
                 crc_early_stop: bool = True):
    """Iterative max-log-MAP decode of a stream-major mother word.

    Returns (bits, converged, iterations_used). ``converged`` is True
    when the CRC passed (early stop) before the iteration budget ran
    out; with ``crc_early_stop`` off it reports False.
    """
    mother_llrs = np.asarray(mother_llrs, dtype=np.float64)
    if mother_llrs.size != 3 * (k + 4):
        raise ConfigurationError(
            f"llrs: expected {3 * (k + 4)} mother positions, got {mother_llrs.size}")
    perm = qpp_permutation(k)
    inv_perm = np.empty_like(perm)
    inv_perm[perm] = np.arange(k)

    d0, d1, d2 = np.split(mother_llrs, 3)
    sys_t1, par_t1, sys_t2, par_t2 = _tail_llrs(d0, d1, d2, k)
    sys1 = np.concatenate([d0[:k], sys_t1])
    par1 = np.concatenate([d1[:k], par_t1])
    sys2 = np.concatenate([d0[:k][perm], sys_t2])
    par2 = np.concatenate([d2[:k], par_t2])

    ext2 = np.zeros(k + 3)
    full_iters = max(1, (half_iterations + 1) // 2)
    bits = np.zeros(k, dtype=np.uint8)
    for it in range(full_iters):
        post1 = max_log_bcjr(sys1, par1, ext2, k)
        ext1 = extrinsic_scale * (post1 - ext2[:k] - d0[:k])
        apriori2 = np.zeros(k + 3)
        apriori2[:k] = ext1[perm]
        post2 = max_log_bcjr(sys2, par2, apriori2, k)
        ext2_int = extrinsic_scale * (post2 - apriori2[:k] - sys2[:k])
        ext2 = np.zeros(k + 3)
        ext2[:k] = ext2_int[inv_perm]
        bits = (post2[inv_perm] < 0).astype(np.uint8)
        if crc_early_stop and crc24_check(bits):
            return bits, True, it + 1
    return bits, crc24_check(bits), full_iters


# ---------------------------------------------------------------------------
# Rate matching
# ---------------------------------------------------------------------------

def _subblock_indices(length: int, shifted: bool) -> np.ndarray:
    """Read order of one interleaved stream, -1 marking dummy positions.

    Streams are written row-wise into an R x 32 matrix front-padded
    with dummies, the columns permuted, and read column-wise. The
    third stream reads with an extra +1 cyclic shift.
    """
    cols = _SUBBLOCK_COLUMNS
    rows = -(-length // cols)
    total = rows * cols
    pad = total - length
    src = np.full(total, -1, dtype=np.int64)
    src[pad:] = np.arange(length)
    if not shifted:
        matrix = src.reshape(rows, cols)
        return matrix[:, _SUBBLOCK_PERM].T.ravel()
    k = np.arange(total, dtype=np.int64)
    pos = (_SUBBLOCK_PERM[k // rows] + cols * (k % rows) + 1) % total
    return src[pos]


@lru_cache(maxsize=64)
def _circular_buffer_map(k: int) -> np.ndarray:
    """Mother-word index per circular-buffer position (-1 for dummies)."""
    kpi = k + 4
    v0 = _subblock_indices(kpi, shifted=False)
    v1 = _subblock_indices(kpi, shifted=False)
    v2 = _subblock_indices(kpi, shifted=True)
    v0 = np.where(v0 >= 0, v0, -1)
    v1 = np.where(v1 >= 0, v1 + kpi, -1)
    v2 = np.where(v2 >= 0, v2 + 2 * kpi, -1)
    buf = np.empty(3 * v0.size, dtype=np.int64)
    buf[:v0.size] = v0
    buf[v0.size::2] = v1
    buf[v0.size + 1::2] = v2
    return buf


@lru_cache(maxsize=128)
def _selection_map(k: int, e: int, rv: int) -> np.ndarray:
    """Mother-word index feeding each of the E rate-matched positions."""
    if rv not in (0, 1, 2, 3):
        raise ConfigurationError(f"rv: {rv} not a redundancy version")
    buf = _circular_buffer_map(k)
    n_cb = buf.size
    rows = -(-(k + 4) // _SUBBLOCK_COLUMNS)
    k0 = rows * (2 * (-(-n_cb // (8 * rows))) * rv + 2)
    order = buf[(k0 + np.arange(n_cb)) % n_cb]
    valid = order[order >= 0]
    reps = -(-e // valid.size)
    return np.tile(valid, reps)[:e]


def rate_match(mother_bits: np.ndarray, e: int, rv: int = 0) -> np.ndarray:
    """Select E bits from the circular buffer starting at version rv."""
    mother_bits = np.asarray(mother_bits, dtype=np.uint8)
    if e <= 0:
        raise ConfigurationError("e: output size must be positive")
    k = mother_bits.size // 3 - 4
    return mother_bits[_selection_map(k, e, rv)]


def rate_dematch(llrs: np.ndarray, k: int, rv: int = 0) -> np.ndarray:
    """Accumulate E received LLRs back onto the mother word."""
    llrs = np.asarray(llrs, dtype=np.float64)
    mother = np.zeros(3 * (k + 4))
    np.add.at(mother, _selection_map(k, llrs.size, rv), llrs)
    return mother


# ---------------------------------------------------------------------------
# Scrambling
# ---------------------------------------------------------------------------

def _scramble_seed(rnti: int, slot: int) -> int:
    return ((rnti << 14) + slot) & 0x7FFFFFFF


def scramble_bits(bits: np.ndarray, rnti: int, slot: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    seq = gold31(_scramble_seed(rnti, slot), bits.size)
    return bits ^ seq


def scramble_llrs(llrs: np.ndarray, rnti: int, slot: int) -> np.ndarray:
    """Descramble soft values: sequence bit 1 flips the LLR sign."""
    llrs = np.asarray(llrs, dtype=np.float64)
    seq = gold31(_scramble_seed(rnti, slot), llrs.size)
    return llrs * (1.0 - 2.0 * seq.astype(np.float64))


descramble_bits = scramble_bits  # involution
descramble_llrs = scramble_llrs


# ---------------------------------------------------------------------------
# Combining
# ---------------------------------------------------------------------------

@dataclass
class SoftBits:
    """Coded-bit LLRs plus how many observations went into them."""

    llrs: np.ndarray
    count: int = 1


def combine_identical(llr_sets) -> SoftBits:
    """Positionwise sum of same-length LLR vectors (pre-descrambling)."""
    arrays = [s.llrs if isinstance(s, SoftBits) else np.asarray(s, dtype=np.float64)
              for s in llr_sets]
    if not arrays:
        raise DegenerateInputError("no LLR sets to combine")
    n = arrays[0].size
    if any(a.size != n for a in arrays):
        raise ConfigurationError("llr_sets: length mismatch")
    total = np.sum(arrays, axis=0)
    count = sum(s.count if isinstance(s, SoftBits) else 1 for s in llr_sets)
    return SoftBits(total, count)


@dataclass
class HarqBuffer:
    """Accumulated mother-word LLRs across HARQ transmissions."""

    k: int
    llrs: np.ndarray = field(default=None)
    transmissions: int = 0

    def __post_init__(self):
        if self.llrs is None:
            self.llrs = np.zeros(3 * (self.k + 4))

    def accumulate(self, mother_llrs: np.ndarray) -> np.ndarray:
        if mother_llrs.size != self.llrs.size:
            raise ConfigurationError("harq: mother length mismatch")
        self.llrs = self.llrs + mother_llrs
        self.transmissions += 1
        return self.llrs


def f2_repeat(ack: int, n_symbols: int) -> np.ndarray:
    """Repetition-code the single ACK/NACK bit onto every data symbol."""
    if ack not in (0, 1):
        raise ConfigurationError(f"ack: {ack} not a bit")
    return np.full(n_symbols, ack, dtype=np.uint8)
