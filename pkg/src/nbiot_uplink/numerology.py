"""Timing constants, higher-layer configuration and resource-unit geometry.

Everything here is shared between the transmitter, channel and receiver
modules: sample rates, CP/symbol sample counts, NPRACH symbol-group
constants, NPUSCH resource-unit shapes, and the key=value config-file
reader used by the campaign harness.

The NPRACH path runs natively at 240 ksps (symbol N = 64, CP = 16,
group = 336 samples = 1.4 ms); the NPUSCH paths run at 1.92 Msps
(slot = 960 samples = 0.5 ms, symbol N = 128, CP = 10/9).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import ConfigurationError

# Sample rates the library operates at.
NPRACH_RATE_HZ = 240_000
NPUSCH_RATE_HZ = 1_920_000

NPRACH_SC_SPACING_HZ = 3750
NPUSCH_SC_SPACING_HZ = 15_000

# One 0.5 ms slot at 1.92 Msps.
SLOT_SAMPLES = 960
SYMBOLS_PER_SLOT = 7

# NB-IoT occupies 180 kHz: 48 subcarriers at 3.75 kHz, 12 at 15 kHz.
NPRACH_TOTAL_SUBCARRIERS = 48
NPUSCH_TOTAL_SUBCARRIERS = 12

_PERIODICITY_SET = {40, 80, 160, 240, 320, 640, 1280, 2560}
_REPETITION_SET = {1, 2, 4, 8, 16, 32, 64, 128}
_SC_OFFSET_SET = {0, 12, 24, 36, 2, 18, 34}
_NUM_SC_SET = {12, 24, 36, 48}
_START_TIME_SET = {8, 16, 32, 64, 128, 256, 512, 1024}
_N_RU_SET = {1, 2, 3, 4, 5, 6, 8, 10}

# Slots per resource unit at 15 kHz, keyed by assigned tone count.
RU_SLOTS = {1: 16, 3: 8, 6: 4, 12: 2}
DATA_SYMBOLS_PER_SLOT = 6  # 7 symbols minus the single pilot
F1_PILOT_SYMBOL = 3
F2_PILOT_SYMBOLS = (2, 3, 4)
F2_DATA_SYMBOLS = (0, 1, 5, 6)


@dataclass(frozen=True)
class SampleRate:
    """Sampling rate of a baseband path."""

    hz: int

    def __post_init__(self):
        if self.hz not in (NPRACH_RATE_HZ, NPUSCH_RATE_HZ):
            raise ConfigurationError(f"sample rate {self.hz} unsupported")


@dataclass(frozen=True)
class SymbolShape:
    """CP and data sample counts of one SC-FDMA symbol."""

    l: int
    n_cp: int
    n: int

    @property
    def total(self) -> int:
        return self.n_cp + self.n


@dataclass(frozen=True)
class NprachNumerology:
    """Fixed preamble format 0 constants at 240 ksps."""

    n: int = 64
    n_cp: int = 16
    n_group: int = 336
    symbols_per_group: int = 5
    groups_per_rep: int = 4
    subcarrier_spacing_hz: int = NPRACH_SC_SPACING_HZ

    def __post_init__(self):
        if self.n_group != self.n_cp + self.symbols_per_group * self.n:
            raise ConfigurationError("symbol group must be CP plus five symbols")

    @property
    def group_duration_s(self) -> float:
        return self.n_group / NPRACH_RATE_HZ

    @property
    def preamble_duration_s(self) -> float:
        """Duration of one repetition (4 symbol groups)."""
        return self.groups_per_rep * self.group_duration_s


NPRACH_NUMEROLOGY = NprachNumerology()


def symbol_sample_counts(l: int, spacing_hz: int, rate: SampleRate | int) -> SymbolShape:
    """CP/data sample counts of symbol ``l`` for a (spacing, rate) pair.

    Supports the two configurations the library runs at: 15 kHz at
    1.92 Msps (slot symbols), and 3.75 kHz at 240 ksps (NPRACH symbol,
    CP given at group level).
    """
    hz = rate.hz if isinstance(rate, SampleRate) else SampleRate(rate).hz
    if spacing_hz == NPUSCH_SC_SPACING_HZ and hz == NPUSCH_RATE_HZ:
        if not 0 <= l < SYMBOLS_PER_SLOT:
            raise ConfigurationError(f"symbol index {l} outside [0, 7)")
        return SymbolShape(l=l, n_cp=10 if l == 0 else 9, n=128)
    if spacing_hz == NPRACH_SC_SPACING_HZ and hz == NPRACH_RATE_HZ:
        return SymbolShape(l=0, n_cp=NPRACH_NUMEROLOGY.n_cp, n=NPRACH_NUMEROLOGY.n)
    raise ConfigurationError(f"unsupported spacing/rate pair ({spacing_hz}, {hz})")


def slot_symbol_shapes() -> tuple[SymbolShape, ...]:
    """The seven symbol shapes of a 0.5 ms slot at 1.92 Msps."""
    return tuple(
        symbol_sample_counts(l, NPUSCH_SC_SPACING_HZ, NPUSCH_RATE_HZ)
        for l in range(SYMBOLS_PER_SLOT)
    )


def identical_repetitions(n_rep: int, n_sc_ru: int) -> int:
    """Number of back-to-back identical slot repetitions.

    Multi-tone allocations repeat each run of slots min(N_rep/2, 4)
    times inside a repetition cycle; single tone never does.
    """
    if n_rep not in _REPETITION_SET:
        raise ConfigurationError(f"repetitions {n_rep} not in {sorted(_REPETITION_SET)}")
    if n_sc_ru == 1:
        return 1
    return max(1, min(n_rep // 2, 4))


@dataclass(frozen=True)
class NprachConfig:
    """Higher-layer random access configuration (preamble format 0)."""

    periodicity_ms: int = 40
    repetitions: int = 1
    subcarrier_offset: int = 0
    num_subcarriers: int = 12
    start_time_ms: int = 8
    cell_id: int = 0
    preamble_format: int = 0

    def __post_init__(self):
        checks = [
            ("periodicity_ms", self.periodicity_ms, _PERIODICITY_SET),
            ("repetitions", self.repetitions, _REPETITION_SET),
            ("subcarrier_offset", self.subcarrier_offset, _SC_OFFSET_SET),
            ("num_subcarriers", self.num_subcarriers, _NUM_SC_SET),
            ("start_time_ms", self.start_time_ms, _START_TIME_SET),
        ]
        for key, value, allowed in checks:
            if value not in allowed:
                raise ConfigurationError(f"{key}: {value} not in {sorted(allowed)}")
        if self.subcarrier_offset + self.num_subcarriers > NPRACH_TOTAL_SUBCARRIERS:
            raise ConfigurationError(
                "subcarrier_offset: offset plus num_subcarriers exceeds 48")
        if self.preamble_format != 0:
            raise ConfigurationError(
                f"preamble_format: only format 0 supported, got {self.preamble_format}")
        if self.cell_id < 0:
            raise ConfigurationError("cell_id: must be non-negative")

    @property
    def total_groups(self) -> int:
        return NPRACH_NUMEROLOGY.groups_per_rep * self.repetitions

    @property
    def total_samples(self) -> int:
        return self.total_groups * NPRACH_NUMEROLOGY.n_group

    @property
    def duration_ms(self) -> float:
        return self.total_samples / NPRACH_RATE_HZ * 1e3


class NprachWindow(NamedTuple):
    active: bool
    start_subframe: int


def nprach_window(config: NprachConfig, frame: int) -> NprachWindow:
    """Whether radio frame ``frame`` opens an NPRACH opportunity.

    Opportunities start ``start_time_ms`` subframes after the first
    subframe of frames satisfying mod(n_f, periodicity/10) = 0.
    """
    if frame < 0:
        raise ConfigurationError("frame: must be non-negative")
    active = frame % (config.periodicity_ms // 10) == 0
    return NprachWindow(active, config.start_time_ms if active else 0)


@dataclass(frozen=True)
class NpuschF1Config:
    """NPUSCH format 1 allocation: tones, RUs, repetitions, transport block."""

    n_tones: int = 1
    tone_offset: int = 0
    n_ru: int = 1
    n_rep: int = 1
    tbs_bits: int = 256
    modulation: str = "pi4-qpsk"
    rnti: int = 1
    subcarrier_spacing_hz: int = NPUSCH_SC_SPACING_HZ

    def __post_init__(self):
        if self.subcarrier_spacing_hz != NPUSCH_SC_SPACING_HZ:
            raise ConfigurationError(
                "subcarrier_spacing_hz: only 15 kHz supported, 3.75 kHz rejected")
        if self.n_tones not in RU_SLOTS:
            raise ConfigurationError(f"n_tones: {self.n_tones} not in {sorted(RU_SLOTS)}")
        if not 0 <= self.tone_offset <= NPUSCH_TOTAL_SUBCARRIERS - self.n_tones:
            raise ConfigurationError(
                f"tone_offset: {self.tone_offset} outside [0, {12 - self.n_tones}]")
        if self.n_ru not in _N_RU_SET:
            raise ConfigurationError(f"n_ru: {self.n_ru} not in {sorted(_N_RU_SET)}")
        if self.n_rep not in _REPETITION_SET:
            raise ConfigurationError(
                f"n_rep: {self.n_rep} not in {sorted(_REPETITION_SET)}")
        if self.modulation not in ("pi2-bpsk", "pi4-qpsk"):
            raise ConfigurationError(f"modulation: unknown {self.modulation!r}")
        if self.n_tones > 1 and self.modulation != "pi4-qpsk":
            raise ConfigurationError("modulation: multi-tone requires pi4-qpsk")
        if self.tbs_bits <= 0:
            raise ConfigurationError("tbs_bits: must be positive")
        rate = (self.tbs_bits + 24) / self.codeword_bits
        if rate > 0.93:
            raise ConfigurationError(
                f"tbs_bits: code rate {rate:.2f} exceeds 0.93, allocation too small")

    @property
    def bits_per_symbol(self) -> int:
        return 1 if self.modulation == "pi2-bpsk" else 2

    @property
    def slots_per_ru(self) -> int:
        return RU_SLOTS[self.n_tones]

    @property
    def m_identical(self) -> int:
        return identical_repetitions(self.n_rep, self.n_tones)

    @property
    def n_cycles(self) -> int:
        """Repetition cycles; each cycle carries every RU m_identical times."""
        return self.n_rep // self.m_identical

    @property
    def codeword_bits(self) -> int:
        """Rate-matched bits carried by one repetition of the codeword."""
        return (self.n_ru * self.slots_per_ru * DATA_SYMBOLS_PER_SLOT
                * self.n_tones * self.bits_per_symbol)

    @property
    def ru_bits(self) -> int:
        return self.codeword_bits // self.n_ru

    @property
    def total_slots(self) -> int:
        return self.n_rep * self.n_ru * self.slots_per_ru

    @property
    def duration_ms(self) -> float:
        return self.total_slots * 0.5


@dataclass(frozen=True)
class NpuschF2Config:
    """NPUSCH format 2 allocation: one tone, 2 ms RUs, P repetitions."""

    tone_index: int = 0
    repetitions: int = 1
    rnti: int = 1
    subcarrier_spacing_hz: int = NPUSCH_SC_SPACING_HZ

    def __post_init__(self):
        if self.subcarrier_spacing_hz != NPUSCH_SC_SPACING_HZ:
            raise ConfigurationError(
                "subcarrier_spacing_hz: only 15 kHz supported for format 2")
        if not 0 <= self.tone_index < NPUSCH_TOTAL_SUBCARRIERS:
            raise ConfigurationError(f"tone_index: {self.tone_index} outside [0, 12)")
        if self.repetitions not in _REPETITION_SET:
            raise ConfigurationError(
                f"repetitions: {self.repetitions} not in {sorted(_REPETITION_SET)}")

    slots_per_ru: int = field(default=4, init=False)

    @property
    def total_slots(self) -> int:
        return self.repetitions * self.slots_per_ru

    @property
    def duration_ms(self) -> float:
        return self.total_slots * 0.5


# ---------------------------------------------------------------------------
# key=value config files
# ---------------------------------------------------------------------------

def parse_config_file(path) -> dict[str, str]:
    """Read a key=value config file; '#' starts a comment."""
    mapping: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            mapping[key.strip()] = value.strip()
    return mapping


def _get_int(mapping: dict[str, str], key: str, default=None) -> int:
    if key not in mapping:
        if default is None:
            raise ConfigurationError(f"{key}: missing required key")
        return default
    try:
        return int(mapping[key])
    except ValueError:
        raise ConfigurationError(f"{key}: not an integer: {mapping[key]!r}") from None


def nprach_config_from_mapping(mapping: dict[str, str]) -> NprachConfig:
    return NprachConfig(
        periodicity_ms=_get_int(mapping, "periodicity_ms", 40),
        repetitions=_get_int(mapping, "repetitions", 1),
        subcarrier_offset=_get_int(mapping, "subcarrier_offset", 0),
        num_subcarriers=_get_int(mapping, "num_subcarriers", 12),
        start_time_ms=_get_int(mapping, "start_time_ms", 8),
        cell_id=_get_int(mapping, "cell_id", 0),
        preamble_format=_get_int(mapping, "preamble_format", 0),
    )


def f1_config_from_mapping(mapping: dict[str, str]) -> NpuschF1Config:
    return NpuschF1Config(
        n_tones=_get_int(mapping, "tones", 1),
        tone_offset=_get_int(mapping, "tone_offset", 0),
        n_ru=_get_int(mapping, "n_ru", 1),
        n_rep=_get_int(mapping, "repetitions", 1),
        tbs_bits=_get_int(mapping, "tbs_bits", 256),
        modulation=mapping.get("modulation", "pi4-qpsk"),
        rnti=_get_int(mapping, "rnti", 1),
    )


def f2_config_from_mapping(mapping: dict[str, str]) -> NpuschF2Config:
    return NpuschF2Config(
        tone_index=_get_int(mapping, "tone_index", 0),
        repetitions=_get_int(mapping, "repetitions", 1),
        rnti=_get_int(mapping, "rnti", 1),
    )
