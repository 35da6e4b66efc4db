"""Density evolution for full-graph decoding on the TwoDOS channel.

Message densities are tracked as distributions of the *sign-adjusted* LLR
``(1 - 2x) * L``, i.e. positive values are messages that favour the true
bit.  The channel is not output-symmetric, so the all-zero-codeword shortcut
does not apply; sign adjustment keeps the bookkeeping valid for any codeword.

Pipeline per iteration, in decoder order:

* variable -> check: FFT convolution of check and measured densities,
* check -> variable: two-input boxplus table, powered to ``dc - 1`` inputs,
* variable -> measured: FFT convolution again,
* measured -> variable: Monte Carlo on a random periodic lattice using the
  decoder's own measured-node update, histogrammed back onto the grid.

Two measured-side densities are kept: messages a node sends to its central
bit and those it sends to neighbouring bits.  Every bit receives one of the
former and six of the latter.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numba
import numpy as np
from scipy import fft as sfft
from scipy.special import expit

from .channel import SignalLevelTable, TWODOS_TABLE, scaled_likelihoods
from .fullgraph import CLIP, measured_update
from .lattice import neighbor_counts, neighbor_index_table

log = logging.getLogger(__name__)

CHANNEL_DEGREE = 7


class DensityError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


class BracketError(RuntimeError):
    pass


@dataclass(frozen=True)
class LLRGrid:
    """Uniform LLR lattice ``-llr_max + i * step`` for ``i = 0..intervals``.

    ``intervals`` must be even so that 0 is a grid point and sums of grid
    points land on the lattice exactly.
    """

    llr_max: float = 30.0
    intervals: int = 4096

    def __post_init__(self):
        if self.intervals < 2 or self.intervals % 2:
            raise DensityError("intervals must be an even integer >= 2")
        if self.llr_max <= 0:
            raise DensityError("llr_max must be positive")

    @property
    def size(self) -> int:
        return self.intervals + 1

    @property
    def step(self) -> float:
        return 2.0 * self.llr_max / self.intervals

    @property
    def zero_index(self) -> int:
        return self.intervals // 2

    @property
    def points(self) -> np.ndarray:
        return -self.llr_max + self.step * np.arange(self.size)

    def index_of(self, values) -> np.ndarray:
        """Nearest grid index; ``-1`` for values below range, ``size`` above."""
        v = np.asarray(values, dtype=float)
        idx = np.rint((v + self.llr_max) / self.step)
        idx = np.where(np.isnan(idx), self.zero_index, idx)
        idx = np.clip(idx, -1, self.size)
        return idx.astype(np.int64)


DEFAULT_GRID = LLRGrid()


@dataclass(eq=False)
class QuantizedDensity:
    """Probability masses on an :class:`LLRGrid` plus saturation cells at ``±inf``."""

    grid: LLRGrid
    mass: np.ndarray
    neg_inf: float = 0.0
    pos_inf: float = 0.0

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != (self.grid.size,):
            raise DensityError(f"mass must have {self.grid.size} entries")

    @property
    def total(self) -> float:
        return float(self.mass.sum() + self.neg_inf + self.pos_inf)

    def extended(self) -> np.ndarray:
        """Masses as one vector: grid points, then ``-inf``, then ``+inf``."""
        return np.concatenate([self.mass, [self.neg_inf, self.pos_inf]])

    @classmethod
    def from_extended(cls, grid: LLRGrid, ext: np.ndarray) -> "QuantizedDensity":
        return cls(grid, ext[: grid.size].copy(), float(ext[grid.size]), float(ext[grid.size + 1]))

    @classmethod
    def point(cls, grid: LLRGrid, value: float) -> "QuantizedDensity":
        mass = np.zeros(grid.size)
        if value == math.inf:
            return cls(grid, mass, 0.0, 1.0)
        if value == -math.inf:
            return cls(grid, mass, 1.0, 0.0)
        i = int(grid.index_of(value))
        if i < 0:
            return cls(grid, mass, 1.0, 0.0)
        if i >= grid.size:
            return cls(grid, mass, 0.0, 1.0)
        mass[i] = 1.0
        return cls(grid, mass)

    @classmethod
    def from_samples(cls, grid: LLRGrid, samples) -> "QuantizedDensity":
        s = np.asarray(samples, dtype=float).ravel()
        if s.size == 0:
            raise DensityError("no samples")
        counts = histogram_counts(grid, s)
        return cls.from_counts(grid, counts)

    @classmethod
    def from_counts(cls, grid: LLRGrid, counts: np.ndarray) -> "QuantizedDensity":
        counts = np.asarray(counts, dtype=np.int64)
        return cls.from_extended(grid, counts / counts.sum())

    @classmethod
    def gaussian(cls, grid: LLRGrid, mean: float, var: float) -> "QuantizedDensity":
        """Normal law integrated over each grid cell; tails go to the saturation cells."""
        from scipy.stats import norm

        sd = math.sqrt(var)
        edges = np.concatenate([[-np.inf], grid.points[:-1] + grid.step / 2, [np.inf]])
        edges = np.clip(edges, -grid.llr_max - grid.step / 2, grid.llr_max + grid.step / 2)
        cdf = norm.cdf(edges, loc=mean, scale=sd)
        mass = np.diff(cdf)
        lo = float(norm.cdf(-grid.llr_max - grid.step / 2, loc=mean, scale=sd))
        hi = float(norm.sf(grid.llr_max + grid.step / 2, loc=mean, scale=sd))
        return cls(grid, mass, lo, hi)

    def mean(self) -> float:
        """Mean over the finite part (saturation cells excluded)."""
        m = self.mass.sum()
        return float((self.mass * self.grid.points).sum() / m) if m > 0 else float("nan")

    def mean_abs(self) -> float:
        m = self.mass.sum()
        return float((self.mass * np.abs(self.grid.points)).sum() / m) if m > 0 else float("nan")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        ext = self.extended()
        cdf = np.cumsum(ext)
        cdf /= cdf[-1]
        idx = np.searchsorted(cdf, rng.random(size), side="right")
        idx = np.minimum(idx, ext.size - 1)
        values = np.concatenate([self.grid.points, [-np.inf, np.inf]])
        return values[idx]

    def tv_distance(self, other: "QuantizedDensity") -> float:
        return 0.5 * float(np.abs(self.extended() - other.extended()).sum())


def histogram_counts(grid: LLRGrid, samples: np.ndarray) -> np.ndarray:
    """Integer counts on the extended layout (grid points, ``-inf``, ``+inf``)."""
    idx = grid.index_of(samples)
    idx = np.where(idx < 0, grid.size, idx)
    idx = np.where(idx > grid.size - 1, grid.size + 1, idx)
    idx = np.where(np.isposinf(samples), grid.size + 1, idx)
    idx = np.where(np.isneginf(samples), grid.size, idx)
    return np.bincount(idx, minlength=grid.size + 2)


def _check_grids(densities: Iterable[QuantizedDensity]) -> LLRGrid:
    grids = {d.grid for d in densities}
    if len(grids) != 1:
        raise DensityError("densities live on different grids")
    return grids.pop()


def convolve(terms: Sequence[tuple[QuantizedDensity, int]]) -> QuantizedDensity:
    """Density of the sum of independent LLRs, ``count`` copies of each density.

    The finite parts are convolved with one FFT on the full (unclipped) sum
    lattice; results beyond the range move to the saturation cells.  An
    infinite summand dominates any finite total; ``+inf`` meeting ``-inf`` is
    sent to 0.
    """
    terms = [(d, int(k)) for d, k in terms if int(k) > 0]
    if not terms:
        raise DensityError("nothing to convolve")
    grid = _check_grids(d for d, _ in terms)
    N = grid.size
    total_terms = sum(k for _, k in terms)
    out_len = total_terms * (N - 1) + 1
    L = sfft.next_fast_len(out_len, real=True)

    spec = np.ones(L // 2 + 1, dtype=complex)
    finite = 1.0
    no_neg = 1.0
    no_pos = 1.0
    for d, k in terms:
        f = d.mass.sum()
        finite *= f**k
        no_neg *= (1.0 - d.neg_inf) ** k
        no_pos *= (1.0 - d.pos_inf) ** k
        if f > 0:
            spec *= sfft.rfft(d.mass, L) ** k
    if finite > 0:
        full = sfft.irfft(spec, L)[:out_len]
        np.maximum(full, 0.0, out=full)
        s = full.sum()
        if s > 0:
            full *= finite / s
    else:
        full = np.zeros(out_len)

    offset = (total_terms - 1) * grid.zero_index
    mass = full[offset : offset + N].copy()
    below = float(full[:offset].sum())
    above = float(full[offset + N :].sum())
    pos = max(no_neg - finite, 0.0)
    neg = max(no_pos - finite, 0.0)
    both = max(1.0 - finite - pos - neg, 0.0)
    mass[grid.zero_index] += both
    return _renormalized(QuantizedDensity(grid, mass, neg + below, pos + above))


def _renormalized(d: QuantizedDensity) -> QuantizedDensity:
    # roundoff would otherwise be amplified by the degree powers every iteration
    t = d.total
    if not (t > 0 and math.isfinite(t)):
        raise DensityError(f"density lost its mass (total={t})")
    return QuantizedDensity(d.grid, d.mass / t, d.neg_inf / t, d.pos_inf / t)


def convolve_direct(a: QuantizedDensity, b: QuantizedDensity) -> QuantizedDensity:
    """Quadratic-time two-term convolution, same saturation rules as :func:`convolve`."""
    grid = _check_grids((a, b))
    N = grid.size
    full = np.convolve(a.mass, b.mass)
    off = grid.zero_index
    mass = full[off : off + N].copy()
    pos = a.pos_inf * (1 - b.neg_inf) + b.pos_inf * (1 - a.neg_inf) - a.pos_inf * b.pos_inf
    neg = a.neg_inf * (1 - b.pos_inf) + b.neg_inf * (1 - a.pos_inf) - a.neg_inf * b.neg_inf
    both = a.pos_inf * b.neg_inf + a.neg_inf * b.pos_inf
    mass[grid.zero_index] += both
    return QuantizedDensity(grid, mass, neg + full[:off].sum(), pos + full[off + N :].sum())


def var_node_density(
    check_in: QuantizedDensity,
    check_count: int,
    measured: Sequence[tuple[QuantizedDensity, int]] = (),
) -> QuantizedDensity:
    """Variable-node output: sum of ``check_count`` check LLRs and the given measured LLRs."""
    terms = [(check_in, check_count), *measured]
    if all(k == 0 for _, k in terms):
        return QuantizedDensity.point(check_in.grid, 0.0)
    return convolve(terms)


def boxplus(a, b):
    """Exact ``2 atanh(tanh(a/2) tanh(b/2))`` without overflow."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(invalid="ignore"):
        out = (
            np.sign(a) * np.sign(b) * np.minimum(np.abs(a), np.abs(b))
            + np.log1p(np.exp(-np.abs(a + b)))
            - np.log1p(np.exp(-np.abs(a - b)))
        )
    return out


@lru_cache(maxsize=4)
def boxplus_table(grid: LLRGrid) -> np.ndarray:
    """Output index for every pair of extended input indices, shape ``(N+2, N+2)``."""
    N = grid.size
    pts = grid.points
    table = np.empty((N + 2, N + 2), dtype=np.int32)
    for start in range(0, N, 512):
        rows = pts[start : start + 512, None]
        table[start : start + 512, :N] = grid.index_of(boxplus(rows, pts[None, :]))
    idx = np.arange(N)
    mirror = (N - 1) - idx
    # -inf flips the sign of the other input, +inf passes it through
    table[:N, N] = mirror
    table[:N, N + 1] = idx
    table[N, :N] = mirror
    table[N + 1, :N] = idx
    table[N, N] = N + 1
    table[N + 1, N + 1] = N + 1
    table[N, N + 1] = N
    table[N + 1, N] = N
    return table


@numba.njit(cache=True, nogil=True)
def _apply_table(table, a, b):
    out = np.zeros(a.size)
    for i in range(a.size):
        ai = a[i]
        if ai == 0.0:
            continue
        row = table[i]
        for j in range(b.size):
            bj = b[j]
            if bj != 0.0:
                out[row[j]] += ai * bj
    return out


def check_pair_density(a: QuantizedDensity, b: QuantizedDensity) -> QuantizedDensity:
    grid = _check_grids((a, b))
    ext = _apply_table(boxplus_table(grid), a.extended(), b.extended())
    return _renormalized(QuantizedDensity.from_extended(grid, ext))


def check_node_density(d: QuantizedDensity, dc: int, sequential: bool = False) -> QuantizedDensity:
    """Check-node output density for ``dc - 1`` independent inputs drawn from ``d``.

    By default the two-input table is applied by repeated squaring
    (``O(log dc)`` applications); ``sequential=True`` folds one input at a
    time.  Both agree up to quantization.
    """
    k = dc - 1
    if k < 1:
        raise DensityError("check degree must be at least 2")
    if sequential:
        acc = d
        for _ in range(k - 1):
            acc = check_pair_density(acc, d)
        return acc
    acc: Optional[QuantizedDensity] = None
    base = d
    while k:
        if k & 1:
            acc = base if acc is None else check_pair_density(acc, base)
        k >>= 1
        if k:
            base = check_pair_density(base, base)
    return acc


def error_probability(d: QuantizedDensity) -> float:
    """Mass on negative LLRs, half the mass at 0, plus the ``-inf`` cell."""
    z = d.grid.zero_index
    return float(d.mass[:z].sum() + 0.5 * d.mass[z] + d.neg_inf)


@dataclass(frozen=True)
class MeasuredDensities:
    central: QuantizedDensity
    neighbor: QuantizedDensity

    def pooled(self) -> QuantizedDensity:
        g = self.central.grid
        ext = (self.central.extended() + 6 * self.neighbor.extended()) / 7
        return QuantizedDensity.from_extended(g, ext)


def _llr_to_pairs(llr: np.ndarray) -> np.ndarray:
    p = np.stack([expit(llr), expit(-llr)], axis=-1)
    return np.clip(p, CLIP, 1.0)


def _mc_tile(
    central_in: QuantizedDensity,
    neighbor_in: QuantizedDensity,
    table: SignalLevelTable,
    sigma2: float,
    shape: tuple[int, int],
    seed_seq: np.random.SeedSequence,
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed_seq)
    rows, cols = shape
    R = rows * cols
    bits = rng.integers(0, 2, size=shape, dtype=np.int64)
    clean = table.levels[bits, neighbor_counts(bits, periodic=True)]
    r = (clean + rng.normal(0.0, math.sqrt(sigma2), size=shape)).ravel()
    flat = bits.ravel()
    nbr = neighbor_index_table(rows, cols, periodic=True)
    slot_bits = np.concatenate([flat[:, None], flat[nbr]], axis=1)  # (R, 7)
    sign = 1.0 - 2.0 * slot_bits
    llr_in = np.empty((R, 7))
    llr_in[:, 0] = central_in.sample(rng, R)
    llr_in[:, 1:] = neighbor_in.sample(rng, (R, 6))
    x2r = _llr_to_pairs(sign * llr_in)
    out = measured_update(scaled_likelihoods(r, table, sigma2), x2r)
    with np.errstate(divide="ignore"):
        llr_out = np.log(out[..., 0]) - np.log(out[..., 1])
    adj = sign * llr_out
    grid = central_in.grid
    return histogram_counts(grid, adj[:, 0]), histogram_counts(grid, adj[:, 1:].ravel())


def measured_node_density_mc(
    central_in: QuantizedDensity,
    table: SignalLevelTable,
    sigma2: float,
    mc_samples: int,
    seed,
    neighbor_in: Optional[QuantizedDensity] = None,
    tile: int = 250,
    threads: int = 1,
) -> MeasuredDensities:
    """Monte Carlo estimate of the measured -> variable densities.

    A random periodic lattice of about ``mc_samples`` cells is split into
    square tiles (each its own torus, each with its own seed derived from
    ``seed``).  Incoming messages are drawn i.i.d. from ``central_in`` /
    ``neighbor_in`` and sign-flipped by the true bit of their slot.  Counts are
    summed in tile order, so the result does not depend on ``threads``.
    """
    if sigma2 <= 0:
        raise DensityError("noise variance must be positive")
    if mc_samples < 1000:
        raise SamplingError(
            f"mc_samples = {mc_samples} gives fewer than 100 samples per decile; raise mc_samples"
        )
    neighbor_in = central_in if neighbor_in is None else neighbor_in
    side = max(int(round(math.sqrt(mc_samples))), 1)
    tile = min(tile, side)
    n_tiles = max(int(round(mc_samples / (tile * tile))), 1)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seqs = root.spawn(n_tiles)

    def work(s):
        return _mc_tile(central_in, neighbor_in, table, sigma2, (tile, tile), s)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, seqs))
    else:
        parts = [work(s) for s in seqs]
    cc = sum(p[0] for p in parts)
    cn = sum(p[1] for p in parts)
    if not np.isfinite(cc).all() or cc.sum() == 0:
        raise SamplingError("empty Monte Carlo histogram; raise mc_samples")
    grid = central_in.grid
    return MeasuredDensities(QuantizedDensity.from_counts(grid, cc), QuantizedDensity.from_counts(grid, cn))


class _LatticeTile:
    """Persistent channel-graph message passing on one periodic tile."""

    def __init__(self, table: SignalLevelTable, sigma2: float, side: int, seed_seq: np.random.SeedSequence):
        rng = np.random.default_rng(seed_seq)
        bits = rng.integers(0, 2, size=(side, side), dtype=np.int64)
        clean = table.levels[bits, neighbor_counts(bits, periodic=True)]
        r = (clean + rng.normal(0.0, math.sqrt(sigma2), size=bits.shape)).ravel()
        R = side * side
        self.sign = 1.0 - 2.0 * bits.ravel()
        self.lik = scaled_likelihoods(r, table, sigma2)
        self.nbr = neighbor_index_table(side, side, periodic=True)
        # inv[v, k]: the node that sees cell v in its neighbour slot k
        self.inv = np.empty_like(self.nbr)
        for k in range(self.nbr.shape[1]):
            self.inv[self.nbr[:, k], k] = np.arange(R)
        self.r2x = np.zeros((R, 7))
        self.chan = np.zeros(R)

    def step(self, check_sum: QuantizedDensity, seed_seq: np.random.SeedSequence) -> np.ndarray:
        rng = np.random.default_rng(seed_seq)
        R = self.sign.size
        total = self.chan + self.sign * check_sum.sample(rng, R)
        x2r = np.empty((R, 7))
        x2r[:, 0] = total - self.r2x[:, 0]
        x2r[:, 1:] = total[self.nbr] - self.r2x[:, 1:]
        with np.errstate(invalid="ignore"):
            x2r = np.where(np.isnan(x2r), 0.0, x2r)
        out = np.clip(measured_update(self.lik, _llr_to_pairs(x2r)), CLIP, 1.0)
        self.r2x = np.log(out[..., 0]) - np.log(out[..., 1])
        self.chan = self.r2x[:, 0] + self.r2x[self.inv, np.arange(1, 7)].sum(axis=1)
        return histogram_counts(check_sum.grid, self.sign * self.chan)


class ChannelLattice:
    """Channel-graph message passing on a long random lattice, for density evolution.

    The lattice (bits and noise) is fixed for the whole run and measured-node
    messages persist between iterations, so the channel graph keeps its short
    cycles.  Each iteration every bit receives a fresh sum of ``dv`` check
    LLRs drawn from the current check density; the returned density is that
    of the sign-adjusted sum of the seven measured -> variable LLRs per bit.
    """

    def __init__(
        self,
        table: SignalLevelTable,
        sigma2: float,
        mc_samples: int,
        seed,
        tile: int = 250,
        threads: int = 1,
    ):
        if sigma2 <= 0:
            raise DensityError("noise variance must be positive")
        if mc_samples < 1000:
            raise SamplingError(
                f"mc_samples = {mc_samples} gives fewer than 100 samples per decile; raise mc_samples"
            )
        side = max(int(round(math.sqrt(mc_samples))), 1)
        tile = min(tile, side)
        n_tiles = max(int(round(mc_samples / (tile * tile))), 1)
        self.root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self.threads = threads
        self.iteration = 0
        seqs = np.random.SeedSequence(self.root.entropy, spawn_key=(0,)).spawn(n_tiles)
        self.tiles = [_LatticeTile(table, sigma2, tile, s) for s in seqs]

    @property
    def size(self) -> int:
        return sum(t.sign.size for t in self.tiles)

    def step(self, check_sum: QuantizedDensity) -> QuantizedDensity:
        self.iteration += 1
        seqs = np.random.SeedSequence(self.root.entropy, spawn_key=(1, self.iteration)).spawn(len(self.tiles))
        jobs = list(zip(self.tiles, seqs))
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as ex:
                parts = list(ex.map(lambda ts: ts[0].step(check_sum, ts[1]), jobs))
        else:
            parts = [t.step(check_sum, s) for t, s in jobs]
        return QuantizedDensity.from_counts(check_sum.grid, sum(parts))


CHANNEL_MODELS = ("pooled", "iid", "lattice")


@dataclass
class DEConfig:
    dv: int
    dc: int
    sigma2: float
    table: SignalLevelTable = TWODOS_TABLE
    grid: LLRGrid = DEFAULT_GRID
    mc_samples: int = 1_000_000
    mc_tile: int = 250
    max_de_iters: int = 200
    pe_target: float = 1e-6
    patience: int = 40
    min_improvement: float = 0.01
    seed: int = 0
    threads: int = 1
    channel_model: str = "pooled"

    def __post_init__(self):
        if self.channel_model not in CHANNEL_MODELS:
            raise DensityError(f"channel_model must be one of {CHANNEL_MODELS}")
        if self.pe_target <= 0:
            raise DensityError("pe_target must be positive")
        if self.dv < 1 or self.dc < 2:
            raise DensityError("need dv >= 1 and dc >= 2")
        if self.sigma2 <= 0:
            raise DensityError("sigma2 must be positive")
        if self.mc_samples < 1000:
            raise SamplingError("mc_samples must be at least 1000 (100 samples per decile)")


@dataclass
class EvolveResult:
    converged: bool
    pe: list[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.pe)


def evolve(cfg: DEConfig) -> EvolveResult:
    """Run density evolution; converged once ``p_e < pe_target``.

    ``pe[l-1]`` is the error probability of the variable-to-check density
    entering iteration ``l + 1``.  A run whose best ``p_e`` has not improved by
    the relative factor ``min_improvement`` within ``patience`` iterations is
    declared non-convergent early.

    ``channel_model`` selects the measured-node step:

    * ``"pooled"`` (default): fresh i.i.d. incoming messages every iteration
      (:func:`measured_node_density_mc`), i.e. a cycle-free channel graph,
      with one density for all seven slots in each direction;
    * ``"iid"``: the same, tracking messages to the central bit and to
      neighbouring bits as two densities;
    * ``"lattice"``: message passing on one persistent lattice
      (:class:`ChannelLattice`), which keeps the channel graph's cycles.
    """
    grid = cfg.grid
    zero = QuantizedDensity.point(grid, 0.0)
    root = np.random.SeedSequence(cfg.seed)
    lattice = None
    if cfg.channel_model == "lattice":
        lattice = ChannelLattice(cfg.table, cfg.sigma2, cfg.mc_samples, root, cfg.mc_tile, cfg.threads)
        channel_terms = [(zero, 1)]
    elif cfg.channel_model == "pooled":
        channel_terms = [(zero, CHANNEL_DEGREE)]
    else:
        meas = MeasuredDensities(zero, zero)
        channel_terms = [(meas.central, 1), (meas.neighbor, 6)]
    c2x = zero
    pe_hist: list[float] = []
    best = math.inf
    best_at = 0
    for it in range(1, cfg.max_de_iters + 1):
        x2c = var_node_density(c2x, cfg.dv - 1, channel_terms)
        c2x = check_node_density(x2c, cfg.dc)
        if lattice is not None:
            chan = lattice.step(var_node_density(c2x, cfg.dv))
            channel_terms = [(chan, 1)]
        elif cfg.channel_model == "pooled":
            pooled = channel_terms[0][0]
            to_meas = var_node_density(c2x, cfg.dv, [(pooled, CHANNEL_DEGREE - 1)])
            pooled = measured_node_density_mc(
                to_meas,
                cfg.table,
                cfg.sigma2,
                cfg.mc_samples,
                np.random.SeedSequence(root.entropy, spawn_key=(it,)),
                tile=cfg.mc_tile,
                threads=cfg.threads,
            ).pooled()
            channel_terms = [(pooled, CHANNEL_DEGREE)]
        else:
            to_central = var_node_density(c2x, cfg.dv, [(meas.neighbor, 6)])
            to_neighbor = var_node_density(c2x, cfg.dv, [(meas.central, 1), (meas.neighbor, 5)])
            meas = measured_node_density_mc(
                to_central,
                cfg.table,
                cfg.sigma2,
                cfg.mc_samples,
                np.random.SeedSequence(root.entropy, spawn_key=(it,)),
                neighbor_in=to_neighbor,
                tile=cfg.mc_tile,
                threads=cfg.threads,
            )
            channel_terms = [(meas.central, 1), (meas.neighbor, 6)]
        nxt = var_node_density(c2x, cfg.dv - 1, channel_terms)
        pe = error_probability(nxt)
        pe_hist.append(pe)
        log.debug("sigma2=%.6g it=%d pe=%.3e", cfg.sigma2, it, pe)
        if pe < cfg.pe_target:
            return EvolveResult(True, pe_hist)
        if pe < best * (1.0 - cfg.min_improvement):
            best, best_at = pe, it
        elif it - best_at >= cfg.patience:
            break
    return EvolveResult(False, pe_hist)


@dataclass
class ThresholdResult:
    dv: int
    dc: int
    sigma2_star: float
    lower: float
    upper: float
    evaluations: list[tuple[float, bool, int]] = field(default_factory=list)


def threshold_search(
    dv: int,
    dc: int,
    lo: float = 1e-3,
    hi: float = 0.1,
    rel_width: float = 0.01,
    **de_params,
) -> ThresholdResult:
    """Largest convergent noise variance, by geometric bisection.

    ``lo`` must converge and ``hi`` must not; otherwise :class:`BracketError`.
    Stops when ``hi / lo - 1 <= rel_width`` and returns ``lo``.
    """
    evals: list[tuple[float, bool, int]] = []

    def ok(s2: float) -> bool:
        res = evolve(DEConfig(dv=dv, dc=dc, sigma2=s2, **de_params))
        evals.append((s2, res.converged, res.iterations))
        log.info("(%d,%d) sigma2=%.6g %s after %d its", dv, dc, s2, "ok" if res.converged else "fail", res.iterations)
        return res.converged

    if not ok(lo):
        raise BracketError(f"lower bound sigma2={lo} does not converge")
    if ok(hi):
        raise BracketError(f"upper bound sigma2={hi} converges")
    while hi / lo - 1.0 > rel_width:
        mid = math.sqrt(lo * hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return ThresholdResult(dv, dc, lo, lo, hi, evals)
