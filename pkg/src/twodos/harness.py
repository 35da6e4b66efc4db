"""Experiment engine: BER sweeps, uncoded baseline, threshold tables, self-checks.

Configuration is a flat ``key = value`` text file (``#`` starts a comment,
lists are comma separated).  Every codeword trial draws its randomness from
``SeedSequence(seed, spawn_key=(stream, point, trial))`` and results are
reduced in trial order, so outputs do not depend on the number of threads.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import oracles
from .channel import TWODOS_TABLE, SignalLevelTable, load_signal_table, readback, sigma2_from_snr, snr_db
from .denevo import CHANNEL_MODELS, BracketError, LLRGrid, threshold_search
from .fullgraph import FactorGraph, decode, uncoded_graph
from .lattice import codeword_to_grid, data_cell_count
from .ldpc import SystematicEncoder, construct_regular, encode, read_alist, to_systematic

log = logging.getLogger(__name__)

CODED_STREAM = 0
UNCODED_STREAM = 1

UNCODED_DETECTOR = (
    "channel-graph-only sum-product detection: measured and variable nodes, no parity checks, "
    "run for exactly max_iters iterations"
)


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_list(conv):
    def parse(s: str):
        items = [x.strip() for x in s.split(",") if x.strip()]
        if not items:
            raise ValueError("empty list")
        return tuple(conv(x) for x in items)

    return parse


def _parse_ensemble(s: str) -> tuple[int, int]:
    dv, dc = s.split(":")
    return int(dv), int(dc)


def _optional_int(s: str) -> Optional[int]:
    return None if s.lower() in ("", "none") else int(s)


@dataclass
class ExperimentConfig:
    mode: Optional[str] = None
    # code
    n: int = 10000
    dv: int = 3
    dc: int = 30
    code_seed: int = 0
    alist: Optional[str] = None
    # lattice
    rows: Optional[int] = None
    cols: Optional[int] = None
    track_height: Optional[int] = None
    signal_table: Optional[str] = None
    # operating points
    snr_db: Optional[tuple[float, ...]] = None
    sigma2: Optional[tuple[float, ...]] = None
    max_iters: tuple[int, ...] = (1, 2, 3, 4, 5)
    min_bit_errors: int = 100
    max_codewords: int = 1000
    record_wall_time: bool = False
    # run control
    output: Optional[str] = None
    seed: int = 0
    threads: int = 1
    # threshold search
    ensembles: tuple[tuple[int, int], ...] = ((3, 6), (3, 9), (3, 30))
    sigma2_lo: float = 0.002
    sigma2_hi: float = 0.08
    rel_width: float = 0.01
    mc_samples: int = 1_000_000
    mc_tile: int = 250
    max_de_iters: int = 200
    pe_target: float = 1e-6
    patience: int = 40
    channel_model: str = "pooled"
    llr_max: float = 30.0
    llr_intervals: int = 4096
    base_dir: Path = field(default=Path("."), repr=False)

    def validate(self, mode: Optional[str] = None) -> None:
        mode = mode or self.mode
        if self.mode is not None and mode != self.mode:
            raise ConfigError("mode", f"config is for {self.mode!r}, not {mode!r}")
        for key in ("n", "dv", "dc", "min_bit_errors", "max_codewords", "threads", "mc_samples", "mc_tile",
                    "max_de_iters", "patience", "llr_intervals"):
            if getattr(self, key) <= 0:
                raise ConfigError(key, "must be positive")
        for key in ("rows", "cols", "track_height"):
            v = getattr(self, key)
            if v is not None and v <= 0:
                raise ConfigError(key, "must be positive")
        if any(m <= 0 for m in self.max_iters):
            raise ConfigError("max_iters", "all entries must be positive")
        if mode in ("ber", "uncoded"):
            if (self.snr_db is None) == (self.sigma2 is None):
                raise ConfigError("snr_db", "give exactly one of snr_db and sigma2")
            if self.sigma2 is not None and any(s <= 0 for s in self.sigma2):
                raise ConfigError("sigma2", "all entries must be positive")
            if self.snr_db is not None and any(not math.isfinite(s) for s in self.snr_db):
                raise ConfigError("snr_db", "entries must be finite")
        if mode == "threshold":
            if not 0 < self.sigma2_lo < self.sigma2_hi:
                raise ConfigError("sigma2_lo", "need 0 < sigma2_lo < sigma2_hi")
            if self.rel_width <= 0:
                raise ConfigError("rel_width", "must be positive")
            if self.pe_target <= 0:
                raise ConfigError("pe_target", "must be positive")
            if self.channel_model not in CHANNEL_MODELS:
                raise ConfigError("channel_model", f"must be one of {CHANNEL_MODELS}")
            for dv, dc in self.ensembles:
                if dv < 2 or dc <= dv:
                    raise ConfigError("ensembles", f"invalid ensemble ({dv},{dc})")

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def table(self) -> SignalLevelTable:
        p = self.resolve(self.signal_table)
        return TWODOS_TABLE if p is None else load_signal_table(p)

    def geometry(self, n: int) -> tuple[int, int]:
        """Lattice shape holding ``n`` data cells (square by default)."""
        rows, cols = self.rows, self.cols
        if rows is None and cols is None:
            if self.track_height is None:
                side = math.isqrt(n)
                if side * side != n:
                    raise ConfigError("rows", f"n = {n} is not a square; give rows and cols")
                rows, cols = side, side
            else:
                raise ConfigError("rows", "rows and cols are required with track_height")
        elif rows is None or cols is None:
            raise ConfigError("rows" if rows is None else "cols", "give both rows and cols")
        if data_cell_count(rows, cols, self.track_height) != n:
            raise ConfigError(
                "rows", f"{rows}x{cols} lattice has {data_cell_count(rows, cols, self.track_height)} data cells, need {n}"
            )
        return rows, cols


_SCHEMA: dict[str, Callable[[str], object]] = {
    "mode": str,
    "n": int,
    "dv": int,
    "dc": int,
    "code_seed": int,
    "alist": str,
    "rows": _optional_int,
    "cols": _optional_int,
    "track_height": _optional_int,
    "signal_table": str,
    "snr_db": _parse_list(float),
    "sigma2": _parse_list(float),
    "max_iters": _parse_list(int),
    "min_bit_errors": int,
    "max_codewords": int,
    "record_wall_time": _parse_bool,
    "output": str,
    "seed": int,
    "threads": int,
    "ensembles": _parse_list(_parse_ensemble),
    "sigma2_lo": float,
    "sigma2_hi": float,
    "rel_width": float,
    "mc_samples": int,
    "mc_tile": int,
    "max_de_iters": int,
    "pe_target": float,
    "patience": int,
    "channel_model": str,
    "llr_max": float,
    "llr_intervals": int,
}


def parse_config(text: str, base_dir: Path | str = ".") -> ExperimentConfig:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(key, "unknown key")
        if key in values:
            raise ConfigError(key, "given twice")
        try:
            values[key] = _SCHEMA[key](value)
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    return ExperimentConfig(base_dir=Path(base_dir), **values)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


@dataclass(frozen=True)
class BerRecord:
    snr_db: float
    sigma2: float
    max_iters: int
    codewords_run: int
    bit_errors: int
    ber: float
    frame_errors: int
    wall_time: float


BER_FIELDS = [f.name for f in fields(BerRecord)]


def binomial_ci(errors: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion (95% by default)."""
    if trials <= 0:
        return 0.0, 1.0
    p = errors / trials
    den = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class CodeSetup:
    encoder: Optional[SystematicEncoder]
    graph: FactorGraph
    rows: int
    cols: int
    info_positions: np.ndarray

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def k(self) -> int:
        return int(self.info_positions.size)

    @property
    def rate(self) -> float:
        return self.k / self.n


def build_code(cfg: ExperimentConfig) -> CodeSetup:
    alist = cfg.resolve(cfg.alist)
    H = read_alist(alist) if alist is not None else construct_regular(cfg.n, cfg.dv, cfg.dc, seed=cfg.code_seed)
    enc = to_systematic(H)
    rows, cols = cfg.geometry(H.n)
    return CodeSetup(enc, FactorGraph(H, rows, cols, cfg.track_height), rows, cols, np.sort(enc.info_cols))


def build_uncoded(cfg: ExperimentConfig) -> CodeSetup:
    n = cfg.n
    if cfg.rows is not None and cfg.cols is not None:
        n = data_cell_count(cfg.rows, cfg.cols, cfg.track_height)
    rows, cols = cfg.geometry(n)
    g = uncoded_graph(rows, cols, cfg.track_height)
    return CodeSetup(None, g, rows, cols, np.arange(g.n))


@dataclass
class TrialOutcome:
    errors: list[int]  # info-bit errors for each entry of the iteration list
    seconds: float


def _trial_seed(master: int, stream: int, point: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(stream, point, trial))


def _run_trial(
    setup: CodeSetup,
    table: SignalLevelTable,
    sigma2: float,
    iters: Sequence[int],
    seed: np.random.SeedSequence,
    coded: bool,
) -> TrialOutcome:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    if coded:
        word = encode(setup.encoder, rng.integers(0, 2, setup.k, dtype=np.uint8))
    else:
        word = rng.integers(0, 2, setup.n, dtype=np.uint8)
    grid = codeword_to_grid(word, setup.rows, setup.cols, setup.graph.track_height)
    r = readback(grid, table, sigma2, rng_seed=rng).intensities
    res = decode(
        setup.graph,
        r,
        table,
        sigma2,
        max(iters),
        reference=word,
        use_checks=coded,
        error_positions=setup.info_positions,
    )
    # trajectories are identical up to the stopping iteration, so one decode
    # with the largest limit serves every smaller limit
    per = [res.bit_errors[min(m, res.iterations_used) - 1] for m in iters]
    return TrialOutcome(per, time.perf_counter() - t0)


def _sweep_point(
    setup: CodeSetup,
    table: SignalLevelTable,
    snr: float,
    sigma2: float,
    cfg: ExperimentConfig,
    stream: int,
    point: int,
    coded: bool,
    pool: Optional[ThreadPoolExecutor],
) -> list[BerRecord]:
    iters = list(cfg.max_iters)
    ncell = len(iters)
    bits = [0] * ncell
    frames = [0] * ncell
    runs = [0] * ncell
    secs = [0.0] * ncell
    open_cells = set(range(ncell))
    batch = max(cfg.threads, 1) * 2
    trial = 0
    while open_cells and trial < cfg.max_codewords:
        idx = range(trial, min(trial + batch, cfg.max_codewords))

        def work(t):
            return _run_trial(setup, table, sigma2, iters, _trial_seed(cfg.seed, stream, point, t), coded)

        outcomes = list(pool.map(work, idx)) if pool is not None else [work(t) for t in idx]
        for out in outcomes:  # trial order
            for c in list(open_cells):
                e = out.errors[c]
                bits[c] += e
                frames[c] += int(e > 0)
                runs[c] += 1
                secs[c] += out.seconds
                if bits[c] >= cfg.min_bit_errors:
                    open_cells.discard(c)
        trial = idx.stop
    records = []
    for c, m in enumerate(iters):
        records.append(
            BerRecord(
                snr_db=snr,
                sigma2=sigma2,
                max_iters=m,
                codewords_run=runs[c],
                bit_errors=bits[c],
                ber=bits[c] / (runs[c] * setup.k),
                frame_errors=frames[c],
                wall_time=round(secs[c], 6) if cfg.record_wall_time else 0.0,
            )
        )
        log.info("snr=%.3f dB sigma2=%.5g iters=%d: %d errors in %d words", snr, sigma2, m, bits[c], runs[c])
    return records


def _operating_points(cfg: ExperimentConfig, table: SignalLevelTable, rate: float) -> list[tuple[float, float]]:
    if cfg.sigma2 is not None:
        return [(snr_db(table, rate, s), s) for s in cfg.sigma2]
    return [(s, sigma2_from_snr(table, rate, s)) for s in cfg.snr_db]


def _sweep(cfg: ExperimentConfig, setup: CodeSetup, coded: bool) -> list[BerRecord]:
    table = cfg.table()
    points = _operating_points(cfg, table, setup.rate)
    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        out: list[BerRecord] = []
        stream = CODED_STREAM if coded else UNCODED_STREAM
        for p, (snr, s2) in enumerate(points):
            out.extend(_sweep_point(setup, table, snr, s2, cfg, stream, p, coded, pool))
        return out
    finally:
        if pool is not None:
            pool.shutdown()


def run_ber(cfg: ExperimentConfig, setup: Optional[CodeSetup] = None) -> list[BerRecord]:
    """Coded BER for every (operating point, iteration limit) cell.

    Bit errors are counted on the k information positions of the systematic
    codeword; a cell stops once it has ``min_bit_errors`` errors or after
    ``max_codewords`` words.  All cells at one operating point share the same
    transmitted words.
    """
    cfg.validate("ber")
    return _sweep(cfg, setup or build_code(cfg), coded=True)


def run_uncoded_baseline(cfg: ExperimentConfig, setup: Optional[CodeSetup] = None) -> list[BerRecord]:
    """BER of random uncoded grids under channel-graph-only detection.

    SNR uses rate 1, so equal ``snr_db`` means equal energy per information bit
    as in :func:`run_ber`.
    """
    cfg.validate("uncoded")
    return _sweep(cfg, setup or build_uncoded(cfg), coded=False)


def format_ber_csv(records: Sequence[BerRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BER_FIELDS)
    for r in records:
        w.writerow([_fmt(v) for v in asdict(r).values()])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


THRESHOLD_FIELDS = ["dv", "dc", "rate", "sigma2_star", "sigma2_upper", "snr_db", "snr_db_no_rate", "status"]


@dataclass(frozen=True)
class ThresholdRow:
    dv: int
    dc: int
    rate: float
    sigma2_star: Optional[float]
    sigma2_upper: Optional[float]
    snr_db: Optional[float]
    snr_db_no_rate: Optional[float]
    status: str


def run_threshold(cfg: ExperimentConfig) -> list[ThresholdRow]:
    """Density-evolution threshold for each configured ensemble.

    The rate column is the nominal ``1 - dv/dc``; SNR is reported both with
    that rate and with rate 1.  A bracketing failure is reported in the
    ``status`` column instead of aborting the table.
    """
    cfg.validate("threshold")
    table = cfg.table()
    grid = LLRGrid(cfg.llr_max, cfg.llr_intervals)
    rows = []
    for dv, dc in cfg.ensembles:
        rate = 1.0 - dv / dc
        try:
            res = threshold_search(
                dv,
                dc,
                cfg.sigma2_lo,
                cfg.sigma2_hi,
                cfg.rel_width,
                table=table,
                grid=grid,
                mc_samples=cfg.mc_samples,
                mc_tile=cfg.mc_tile,
                max_de_iters=cfg.max_de_iters,
                pe_target=cfg.pe_target,
                patience=cfg.patience,
                seed=cfg.seed,
                threads=cfg.threads,
                channel_model=cfg.channel_model,
            )
        except BracketError as exc:
            rows.append(ThresholdRow(dv, dc, rate, None, None, None, None, f"bracket error: {exc}"))
            continue
        s = res.sigma2_star
        rows.append(
            ThresholdRow(dv, dc, rate, s, res.upper, snr_db(table, rate, s), snr_db(table, 1.0, s), "ok")
        )
    return rows


def format_threshold_csv(rows: Sequence[ThresholdRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(THRESHOLD_FIELDS)
    for r in rows:
        vals = []
        for name in THRESHOLD_FIELDS:
            v = getattr(r, name)
            if name == "rate":
                vals.append(f"{v:.3f}")
            elif v is None:
                vals.append("")
            else:
                vals.append(_fmt(v))
        w.writerow(vals)
    return buf.getvalue()


def run_validate(cfg: Optional[ExperimentConfig] = None) -> list[oracles.SuiteResult]:
    seed = 0 if cfg is None else cfg.seed
    return oracles.run_all(seed=seed)


def ber_metadata(cfg: ExperimentConfig, setup: CodeSetup, coded: bool) -> dict:
    """Run description written next to a BER CSV."""
    meta = {
        "kind": "coded" if coded else "uncoded",
        "n": setup.n,
        "k": setup.k,
        "rate": setup.rate,
        "rows": setup.rows,
        "cols": setup.cols,
        "track_height": cfg.track_height,
        "seed": cfg.seed,
        "min_bit_errors": cfg.min_bit_errors,
        "max_codewords": cfg.max_codewords,
        "ber_counts": "information bits only",
    }
    if coded:
        meta.update(dv=cfg.dv, dc=cfg.dc, code_seed=cfg.code_seed, alist=cfg.alist)
        meta["detector"] = "full-graph sum-product, flooding schedule, syndrome stop"
    else:
        meta["detector"] = UNCODED_DETECTOR
    return meta


def write_metadata(path: Path, meta: dict) -> None:
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
