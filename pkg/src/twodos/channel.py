"""TwoDOS nonlinear readback model.

The noiseless readback of a cell depends only on its own bit and on how many
of its six neighbours are ones, so the whole nonlinear interference is a
14-entry lookup table.  Noise is additive white Gaussian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import HexGrid, neighbor_counts

N_COUNTS = 7  # 0..6 nonzero neighbours


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class SignalLevelTable:
    """Noiseless intensities ``s0[n]`` (central bit 0) and ``s1[n]`` (central bit 1)."""

    s0: tuple[float, ...]
    s1: tuple[float, ...]
    levels: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        s0 = tuple(float(v) for v in self.s0)
        s1 = tuple(float(v) for v in self.s1)
        if len(s0) != N_COUNTS or len(s1) != N_COUNTS:
            raise ChannelError("signal table needs exactly 7 levels per central bit")
        arr = np.array([s0, s1])
        if not np.all((arr >= 0.0) & (arr <= 1.0)):
            raise ChannelError("signal levels must lie in [0, 1]")
        if np.any(np.diff(arr, axis=1) >= 0):
            raise ChannelError("signal levels must strictly decrease with the neighbour count")
        if np.any(arr[0] <= arr[1]):
            raise ChannelError("s0[n] must exceed s1[n] for every n")
        arr.setflags(write=False)
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "s1", s1)
        object.__setattr__(self, "levels", arr)

    def mean_energy(self) -> float:
        """Average signal energy over uniformly random 7-bit neighbourhoods."""
        w = np.array([math.comb(6, n) for n in range(N_COUNTS)], dtype=float)
        return float((w * (self.levels[0] ** 2 + self.levels[1] ** 2)).sum() / 2**7)


TWODOS_TABLE = SignalLevelTable(
    s0=(0.95, 0.80, 0.70, 0.55, 0.45, 0.35, 0.25),
    s1=(0.50, 0.35, 0.30, 0.20, 0.15, 0.10, 0.05),
)

_TABLE_KEYS = [f"s{b}_{n}" for b in (0, 1) for n in range(N_COUNTS)]


def parse_signal_table(text: str) -> SignalLevelTable:
    """Parse ``key = value`` lines with keys ``s0_0..s0_6, s1_0..s1_6``.

    Blank lines and ``#`` comments are ignored; missing, duplicate or unknown
    keys are rejected.
    """
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ChannelError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _TABLE_KEYS:
            raise ChannelError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ChannelError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = float(val)
        except ValueError as exc:
            raise ChannelError(f"line {lineno}: bad value {val!r}") from exc
    missing = [k for k in _TABLE_KEYS if k not in values]
    if missing:
        raise ChannelError(f"missing keys: {', '.join(missing)}")
    return SignalLevelTable(
        s0=tuple(values[f"s0_{n}"] for n in range(N_COUNTS)),
        s1=tuple(values[f"s1_{n}"] for n in range(N_COUNTS)),
    )


def load_signal_table(path: str | Path) -> SignalLevelTable:
    return parse_signal_table(Path(path).read_text())


def format_signal_table(table: SignalLevelTable) -> str:
    lines = [f"s0_{n} = {table.s0[n]!r}" for n in range(N_COUNTS)]
    lines += [f"s1_{n} = {table.s1[n]!r}" for n in range(N_COUNTS)]
    return "\n".join(lines) + "\n"


def signal_level(table: SignalLevelTable, central: int, n: int) -> float:
    if central not in (0, 1):
        raise ChannelError(f"central bit must be 0 or 1, got {central}")
    if not 0 <= n <= 6:
        raise ChannelError(f"neighbour count must be in [0, 6], got {n}")
    return table.levels[central, n]


@dataclass(frozen=True)
class NoisyReadback:
    intensities: np.ndarray
    sigma2: float


def noiseless_readback(bits: np.ndarray, table: SignalLevelTable, periodic: bool = False) -> np.ndarray:
    bits = np.asarray(bits)
    return table.levels[bits.astype(np.int64), neighbor_counts(bits, periodic=periodic)]


def readback(
    grid: HexGrid | np.ndarray,
    table: SignalLevelTable,
    sigma2: float,
    rng_seed=None,
    periodic: bool = False,
) -> NoisyReadback:
    """Noisy readback of every cell; guard rows are read like any other row.

    ``rng_seed`` may be anything accepted by :func:`numpy.random.default_rng`
    (PCG64), including an existing Generator.
    """
    if sigma2 < 0:
        raise ChannelError(f"noise variance must be non-negative, got {sigma2}")
    bits = grid.bits if isinstance(grid, HexGrid) else np.asarray(grid)
    clean = noiseless_readback(bits, table, periodic=periodic)
    if sigma2 > 0:
        rng = np.random.default_rng(rng_seed)
        clean = clean + rng.normal(0.0, math.sqrt(sigma2), size=clean.shape)
    return NoisyReadback(clean, float(sigma2))


def likelihood(r, central: int, n: int, table: SignalLevelTable, sigma2: float):
    """Gaussian density of readback ``r`` given the central bit and neighbour count."""
    if sigma2 <= 0:
        raise ChannelError(f"noise variance must be positive, got {sigma2}")
    mu = signal_level(table, central, n)
    r = np.asarray(r, dtype=float)
    out = np.exp(-((r - mu) ** 2) / (2 * sigma2)) / math.sqrt(2 * math.pi * sigma2)
    return out if out.ndim else float(out)


def scaled_likelihoods(r: np.ndarray, table: SignalLevelTable, sigma2: float) -> np.ndarray:
    """Likelihoods ``p(r | b, n)`` for every sample, shape ``(len(r), 2, 7)``.

    Each sample's row is rescaled so its largest entry is 1; the common factor
    cancels in every normalized message and keeps tiny noise variances from
    underflowing.
    """
    if sigma2 <= 0:
        raise ChannelError(f"noise variance must be positive, got {sigma2}")
    r = np.asarray(r, dtype=float).ravel()
    expo = -((r[:, None, None] - table.levels[None]) ** 2) / (2 * sigma2)
    expo -= expo.max(axis=(1, 2), keepdims=True)
    return np.exp(expo)


def snr_db(table: SignalLevelTable, rate: float, sigma2: float) -> float:
    """Eb/N0 in dB: mean signal energy over ``rate * 2 * sigma2``."""
    if rate <= 0 or sigma2 <= 0:
        raise ChannelError("rate and noise variance must be positive")
    return 10.0 * math.log10(table.mean_energy() / (rate * 2.0 * sigma2))


def sigma2_from_snr(table: SignalLevelTable, rate: float, snr: float) -> float:
    if rate <= 0:
        raise ChannelError("rate must be positive")
    return table.mean_energy() / (rate * 2.0 * 10.0 ** (snr / 10.0))
