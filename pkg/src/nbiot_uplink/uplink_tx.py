"""UE-side baseband generation for NPRACH and NPUSCH formats 1 and 2.

Grid conventions shared with the receivers:

* NPUSCH tones sit on a centered 128-point grid at 1.92 Msps: assigned
  tone j of an allocation starting at ``tone_offset`` maps to FFT bin
  (tone_offset + j - 6) mod 128, i.e. the 12-tone NB-IoT band occupies
  bins -6..5. The half-subcarrier offset of in-band deployment is not
  applied here; the front-end half-tone shift owns it.
* NPRACH subcarriers sit on a centered 64-point grid at 240 ksps:
  absolute subcarrier a in [0, 48) maps to bin (a - 24) mod 64.
* Transmit power is normalized to unit average power per active tone;
  campaign SNR is set entirely by the channel module.
* A symbol-group is one continuous tone: CP plus five identical
  symbols, phase-referenced to the waveform origin.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import coding
from .errors import ConfigurationError
from .numerology import (
    DATA_SYMBOLS_PER_SLOT,
    F1_PILOT_SYMBOL,
    F2_DATA_SYMBOLS,
    F2_PILOT_SYMBOLS,
    NPRACH_NUMEROLOGY,
    NPRACH_RATE_HZ,
    NPRACH_SC_SPACING_HZ,
    NPRACH_TOTAL_SUBCARRIERS,
    NPUSCH_RATE_HZ,
    NPUSCH_SC_SPACING_HZ,
    SLOT_SAMPLES,
    SYMBOLS_PER_SLOT,
    NprachConfig,
    NpuschF1Config,
    NpuschF2Config,
    slot_symbol_shapes,
)

N_FFT = 128
NPRACH_CENTER_SC = 24
NPUSCH_CENTER_TONE = 6

_BPSK_BASE = (1.0 + 1.0j) / np.sqrt(2.0)


@dataclass
class ComplexGrid:
    """Time-domain complex baseband samples, one row per antenna."""

    samples: np.ndarray
    rate_hz: int
    tone_bw_hz: int
    tone_power: float = 1.0

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.complex128))

    @property
    def n_antennas(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def copy_with(self, samples: np.ndarray) -> "ComplexGrid":
        return replace(self, samples=samples)


def write_iq(path, grid: ComplexGrid) -> None:
    """Dump interleaved float32 I/Q with a one-line text header."""
    with open(path, "wb") as fh:
        fh.write(f"{grid.rate_hz},{grid.n_antennas},{grid.n_samples}\n".encode())
        inter = np.empty((grid.n_antennas, 2 * grid.n_samples), dtype=np.float32)
        inter[:, 0::2] = grid.samples.real
        inter[:, 1::2] = grid.samples.imag
        inter.tofile(fh)


def read_iq(path, tone_bw_hz: int = NPUSCH_SC_SPACING_HZ) -> ComplexGrid:
    with open(path, "rb") as fh:
        header = fh.readline().decode().strip()
        rate_hz, n_ant, n_samp = (int(v) for v in header.split(","))
        inter = np.fromfile(fh, dtype=np.float32).reshape(n_ant, 2 * n_samp)
    samples = inter[:, 0::2].astype(np.float64) + 1j * inter[:, 1::2].astype(np.float64)
    return ComplexGrid(samples, rate_hz, tone_bw_hz)


# ---------------------------------------------------------------------------
# modulation and phase rotation
# ---------------------------------------------------------------------------

def modulate(bits: np.ndarray, modulation: str) -> np.ndarray:
    """Map bits to unit-modulus symbols.

    QPSK packs bit pairs as ((2*b0-1) + j*(2*b1-1))/sqrt(2); BPSK uses
    the diagonal points. A positive soft value -Re(e) (or -Im) then
    votes for bit 0, matching the receiver's LLR convention.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if modulation == "pi2-bpsk":
        return (2.0 * bits - 1.0) * _BPSK_BASE
    if modulation == "pi4-qpsk":
        if bits.size % 2:
            raise ConfigurationError("bits: QPSK needs an even bit count")
        b = bits.reshape(-1, 2).astype(np.float64)
        return ((2.0 * b[:, 0] - 1.0) + 1j * (2.0 * b[:, 1] - 1.0)) / np.sqrt(2.0)
    raise ConfigurationError(f"modulation: unknown {modulation!r}")


@dataclass
class PhaseRotation:
    """Per-symbol phase applied over a contiguous transmission."""

    phi: np.ndarray  # radians, one entry per SC-FDMA symbol


def phase_rotation_sequence(modulation: str, symbol_count: int,
                            tone: int | None = None) -> PhaseRotation:
    """Modulation-based rotation: pi/2 (BPSK) or pi/4 (QPSK) on odd
    symbols, plus the accumulated boundary-continuity term when a
    single tone index is given.

    The continuity term advances by 2*pi*tone*N_cp(l)/N at each symbol
    so the underlying tone stays continuous across the CP insertion;
    it has no single-tone meaning for multi-tone allocations and is
    skipped there (``tone=None``).
    """
    step = np.pi / 2 if modulation == "pi2-bpsk" else np.pi / 4
    shapes = slot_symbol_shapes()
    phi = np.zeros(symbol_count)
    acc = 0.0
    for l in range(symbol_count):
        if tone is not None and l > 0:
            n_cp = shapes[l % SYMBOLS_PER_SLOT].n_cp
            acc += 2.0 * np.pi * tone * n_cp / N_FFT
        phi[l] = step * (l % 2) + acc
    return PhaseRotation(phi=np.mod(phi, 2.0 * np.pi))


# ---------------------------------------------------------------------------
# pilots
# ---------------------------------------------------------------------------

def pilot_sequence(fmt: str, slot: int, config) -> np.ndarray:
    """Unit-modulus reference symbols for one slot.

    Format 1 returns the ``n_tones`` values of the single pilot symbol
    (l = 3); format 2 returns the three single-tone pilots (l = 2, 3, 4).
    The default construction draws a deterministic Gold-seeded QPSK or
    BPSK pattern; any unit-modulus sequence agreed between transmitter
    and receiver works, so conformance tables can be swapped in.
    """
    if fmt == "f1":
        n_tones = config.n_tones
        if n_tones > 1:
            bits = coding.gold31(1009 + n_tones, 2 * n_tones)
            return modulate(bits, "pi4-qpsk")
        bit = coding.gold31(2003 + slot, 1)
        return modulate(bit, "pi2-bpsk")
    if fmt == "f2":
        bits = coding.gold31(3001 + slot, 3)
        return modulate(bits, "pi2-bpsk")
    raise ConfigurationError(f"fmt: unknown pilot format {fmt!r}")


# ---------------------------------------------------------------------------
# NPRACH
# ---------------------------------------------------------------------------

@dataclass
class HopSequence:
    """Absolute subcarrier index per symbol group."""

    subcarriers: np.ndarray
    start: int
    cell_id: int

    @property
    def deltas(self) -> np.ndarray:
        """Within-repetition deltas H_m; the fourth wraps to the
        repetition's own first group."""
        sc = self.subcarriers.reshape(-1, 4)
        h = np.empty_like(sc)
        h[:, :3] = sc[:, 1:] - sc[:, :3]
        h[:, 3] = sc[:, 0] - sc[:, 3]
        return h.ravel()


def nprach_hop_sequence(config: NprachConfig, rho: int,
                        reps: int | None = None) -> HopSequence:
    """Deterministic single-tone hopping for start subcarrier ``rho``.

    Inner hopping moves by one subcarrier between groups 0-1 and 2-3
    and by six between groups 1-2, confined to a 12-subcarrier slice;
    the start of every 4-group repetition follows a Gold-seeded
    pseudo-random pattern keyed by the cell id.
    """
    reps = config.repetitions if reps is None else reps
    if not 0 <= rho < config.num_subcarriers:
        raise ConfigurationError(f"rho: {rho} outside [0, {config.num_subcarriers})")
    n_groups = 4 * reps
    base = config.subcarrier_offset + 12 * (rho // 12)
    tilde0 = rho % 12
    # f(t) accumulates nine Gold bits per repetition boundary
    gold = coding.gold31(config.cell_id, 10 * (reps + 1))
    sc = np.empty(n_groups, dtype=np.int64)
    f_t = 0
    tilde = tilde0
    for i in range(n_groups):
        step = i % 4
        if step == 0:
            if i > 0:
                t = i // 4
                c = gold[10 * t + 1:10 * t + 10].astype(np.int64)
                p = int(np.sum(c << np.arange(9))) % 11
                f_t = (f_t + p + 1) % 12
                tilde = (tilde0 + f_t) % 12
        elif step in (1, 3):
            tilde = tilde + 1 if tilde % 2 == 0 else tilde - 1
        else:
            tilde = tilde + 6 if tilde < 6 else tilde - 6
        sc[i] = base + tilde
    return HopSequence(subcarriers=sc, start=rho, cell_id=config.cell_id)


def nprach_waveform(config: NprachConfig, hop: HopSequence) -> ComplexGrid:
    """Symbol groups as continuous tones at 240 ksps.

    Each group is one CP plus five identical 64-sample symbols of the
    hopped tone, phase-referenced to the waveform origin so that the
    receiver's global-index demodulation sees the delay phase alone.
    """
    num = NPRACH_NUMEROLOGY
    n_groups = hop.subcarriers.size
    n = np.arange(n_groups * num.n_group).reshape(n_groups, num.n_group)
    bins = (hop.subcarriers - NPRACH_CENTER_SC)[:, None]
    samples = np.exp(2j * np.pi * bins * n / num.n)
    return ComplexGrid(samples.ravel()[None, :], NPRACH_RATE_HZ,
                       NPRACH_SC_SPACING_HZ)


# ---------------------------------------------------------------------------
# NPUSCH slot assembly
# ---------------------------------------------------------------------------

def _synthesize_slot(tones_by_symbol: np.ndarray, tone_offset: int,
                     phi: np.ndarray) -> np.ndarray:
    """One 960-sample slot from per-symbol tone values.

    ``tones_by_symbol`` is (7, n_tones); ``phi`` the per-symbol phase
    rotation. CP lengths follow the slot symbol shapes.
    """
    n_tones = tones_by_symbol.shape[1]
    out = np.empty(SLOT_SAMPLES, dtype=np.complex128)
    pos = 0
    bins = (tone_offset + np.arange(n_tones) - NPUSCH_CENTER_TONE) % N_FFT
    for shape in slot_symbol_shapes():
        spectrum = np.zeros(N_FFT, dtype=np.complex128)
        spectrum[bins] = tones_by_symbol[shape.l] * np.exp(1j * phi[shape.l])
        data = np.fft.ifft(spectrum) * N_FFT
        out[pos:pos + shape.n_cp] = data[N_FFT - shape.n_cp:]
        out[pos + shape.n_cp:pos + shape.total] = data
        pos += shape.total
    return out


@dataclass
class TransportBlock:
    """Payload bits plus their 24-bit checksum."""

    bits: np.ndarray
    crc: np.ndarray

    @classmethod
    def from_payload(cls, payload: np.ndarray) -> "TransportBlock":
        with_crc = coding.crc24_attach(payload)
        return cls(bits=with_crc[:-24], crc=with_crc[-24:])

    @property
    def with_crc(self) -> np.ndarray:
        return np.concatenate([self.bits, self.crc])


def f1_slot_map(config: NpuschF1Config) -> np.ndarray:
    """(cycle, ru, copy, slot_in_ru) per transmitted slot.

    Within a cycle every RU's run of slots is sent m_identical times
    back to back before the next RU starts.
    """
    rows = []
    for c in range(config.n_cycles):
        for u in range(config.n_ru):
            for m in range(config.m_identical):
                for j in range(config.slots_per_ru):
                    rows.append((c, u, m, j))
    return np.array(rows, dtype=np.int64)


def f1_slot_schedule(config: NpuschF1Config, gap_plan=None) -> np.ndarray:
    """Absolute sample offset of each slot, honouring planned gaps."""
    offsets = np.arange(config.total_slots, dtype=np.int64) * SLOT_SAMPLES
    if gap_plan is not None:
        for gap in gap_plan.gaps:
            gap_start = int(round(gap.start_ms * 2)) * SLOT_SAMPLES
            shift = int(round(gap.length_ms * 2)) * SLOT_SAMPLES
            offsets = np.where(offsets >= gap_start, offsets + shift, offsets)
    return offsets


def build_f1_transmission(tb: TransportBlock, config: NpuschF1Config,
                          rv: int = 0, gap_plan=None) -> tuple[ComplexGrid, np.ndarray]:
    """Waveform plus slot schedule for one NPUSCH format 1 transmission."""
    k = config.tbs_bits + 24
    if tb.with_crc.size != k:
        raise ConfigurationError(
            f"tbs_bits: transport block is {tb.with_crc.size} bits, config says {k}")
    mother = coding.turbo_encode(tb.with_crc)
    ebits = coding.rate_match(mother, config.codeword_bits, rv)

    n_tones = config.n_tones
    bits_per_slot = DATA_SYMBOLS_PER_SLOT * n_tones * config.bits_per_symbol
    slot_map = f1_slot_map(config)
    schedule = f1_slot_schedule(config, gap_plan)
    total = int(schedule[-1]) + SLOT_SAMPLES
    wave = np.zeros(total, dtype=np.complex128)

    tone_signed = config.tone_offset - NPUSCH_CENTER_TONE if n_tones == 1 else None
    rot = phase_rotation_sequence(config.modulation,
                                  config.total_slots * SYMBOLS_PER_SLOT, tone_signed)

    scrambled = {c: coding.scramble_bits(ebits, config.rnti, c)
                 for c in range(config.n_cycles)}
    data_symbol_indices = [l for l in range(SYMBOLS_PER_SLOT) if l != F1_PILOT_SYMBOL]
    for t, (c, u, _m, j) in enumerate(slot_map):
        sl = u * config.slots_per_ru + j  # slot within the codeword
        chunk = scrambled[c][sl * bits_per_slot:(sl + 1) * bits_per_slot]
        syms = modulate(chunk, config.modulation).reshape(
            DATA_SYMBOLS_PER_SLOT, n_tones)
        grid = np.empty((SYMBOLS_PER_SLOT, n_tones), dtype=np.complex128)
        for row, l in enumerate(data_symbol_indices):
            if n_tones > 1:
                grid[l] = np.fft.fft(syms[row]) / np.sqrt(n_tones)
            else:
                grid[l] = syms[row]
        grid[F1_PILOT_SYMBOL] = pilot_sequence("f1", t, config)
        phi = rot.phi[t * SYMBOLS_PER_SLOT:(t + 1) * SYMBOLS_PER_SLOT]
        wave[schedule[t]:schedule[t] + SLOT_SAMPLES] = _synthesize_slot(
            grid, config.tone_offset, phi)
    return ComplexGrid(wave[None, :], NPUSCH_RATE_HZ, NPUSCH_SC_SPACING_HZ), schedule


def f2_scrambling(config: NpuschF2Config) -> np.ndarray:
    """+/-1 scrambling for every data symbol of the transmission."""
    n_data = len(F2_DATA_SYMBOLS) * config.total_slots
    bits = coding.gold31(coding._scramble_seed(config.rnti, 0), n_data)
    return 1.0 - 2.0 * bits.astype(np.float64)


def build_f2_transmission(ack: int, config: NpuschF2Config) -> tuple[ComplexGrid, np.ndarray]:
    """pi/2-BPSK single-tone ACK/NACK waveform, 2 ms per RU."""
    data_bits = coding.f2_repeat(ack, len(F2_DATA_SYMBOLS) * config.total_slots)
    u_syms = modulate(data_bits, "pi2-bpsk")
    t_l = f2_scrambling(config)

    tone_signed = config.tone_index - NPUSCH_CENTER_TONE
    rot = phase_rotation_sequence("pi2-bpsk",
                                  config.total_slots * SYMBOLS_PER_SLOT, tone_signed)
    schedule = np.arange(config.total_slots, dtype=np.int64) * SLOT_SAMPLES
    wave = np.zeros(config.total_slots * SLOT_SAMPLES, dtype=np.complex128)
    for s in range(config.total_slots):
        grid = np.empty((SYMBOLS_PER_SLOT, 1), dtype=np.complex128)
        pilots = pilot_sequence("f2", s, config)
        for i, l in enumerate(F2_PILOT_SYMBOLS):
            grid[l, 0] = pilots[i]
        for i, l in enumerate(F2_DATA_SYMBOLS):
            idx = s * len(F2_DATA_SYMBOLS) + i
            grid[l, 0] = u_syms[idx] * t_l[idx]
        phi = rot.phi[s * SYMBOLS_PER_SLOT:(s + 1) * SYMBOLS_PER_SLOT]
        wave[schedule[s]:schedule[s] + SLOT_SAMPLES] = _synthesize_slot(
            grid, config.tone_index, phi)
    return ComplexGrid(wave[None, :], NPUSCH_RATE_HZ, NPUSCH_SC_SPACING_HZ), schedule
