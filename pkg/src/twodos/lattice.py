"""Hexagonal bit lattice stored as a plain rectangular array.

Cells are addressed by axial coordinates ``(row, col)``.  The six nearest
neighbours of a cell are obtained by adding the offsets in
:data:`AXIAL_OFFSETS`; no row-parity case analysis is needed.  Cells that fall
outside the array are treated as stored zeros.

Optional guard bands: with ``track_height = t`` every row whose index is
congruent to ``t`` modulo ``t + 1`` is an empty (all-zero) guard row, so a
track is ``t`` data rows followed by one guard row.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

AXIAL_OFFSETS: tuple[tuple[int, int], ...] = (
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, -1),
    (-1, 1),
)


class LatticeError(ValueError):
    """Raised for out-of-bounds coordinates or mismatched shapes."""


def guard_row_mask(rows: int, track_height: Optional[int]) -> np.ndarray:
    """Boolean vector, True for guard rows."""
    r = np.arange(rows)
    if track_height is None:
        return np.zeros(rows, dtype=bool)
    if track_height < 1:
        raise LatticeError(f"track_height must be positive, got {track_height}")
    return (r % (track_height + 1)) == track_height


def data_cell_count(rows: int, cols: int, track_height: Optional[int]) -> int:
    return int((~guard_row_mask(rows, track_height)).sum()) * cols


@dataclass(frozen=True)
class HexGrid:
    bits: np.ndarray
    track_height: Optional[int] = None

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise LatticeError(f"bits must be a non-empty 2D array, got shape {bits.shape}")
        if not np.isin(bits, (0, 1)).all():
            raise LatticeError("bits must contain only 0 and 1")
        bits = bits.astype(np.uint8)
        guard = guard_row_mask(bits.shape[0], self.track_height)
        if bits[guard].any():
            raise LatticeError("guard rows must be all-zero")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def guard_rows(self) -> np.ndarray:
        return guard_row_mask(self.rows, self.track_height)

    def in_bounds(self, coord: tuple[int, int]) -> bool:
        i, j = coord
        return 0 <= i < self.rows and 0 <= j < self.cols

    def __str__(self) -> str:
        return dump_grid(self)


def _check_coord(grid: HexGrid, coord) -> tuple[int, int]:
    i, j = int(coord[0]), int(coord[1])
    if not grid.in_bounds((i, j)):
        raise LatticeError(f"coordinate {(i, j)} outside {grid.rows}x{grid.cols} grid")
    return i, j


def neighbors(grid: HexGrid, coord) -> list[tuple[int, int]]:
    """In-bounds nearest neighbours of ``coord`` (guard rows included)."""
    i, j = _check_coord(grid, coord)
    out = []
    for di, dj in AXIAL_OFFSETS:
        c = (i + di, j + dj)
        if grid.in_bounds(c):
            out.append(c)
    return out


def count_nonzero_neighbors(grid: HexGrid, coord) -> int:
    return int(sum(grid.bits[c] for c in neighbors(grid, coord)))


def neighbor_counts(bits: np.ndarray, periodic: bool = False) -> np.ndarray:
    """Number of nonzero neighbours of every cell, for the whole array at once."""
    bits = np.asarray(bits, dtype=np.int64)
    if periodic:
        total = np.zeros_like(bits)
        for di, dj in AXIAL_OFFSETS:
            total += np.roll(bits, shift=(-di, -dj), axis=(0, 1))
        return total
    rows, cols = bits.shape
    padded = np.zeros((rows + 2, cols + 2), dtype=np.int64)
    padded[1:-1, 1:-1] = bits
    total = np.zeros_like(bits)
    for di, dj in AXIAL_OFFSETS:
        total += padded[1 + di : 1 + di + rows, 1 + dj : 1 + dj + cols]
    return total


def neighbor_index_table(rows: int, cols: int, periodic: bool = False) -> np.ndarray:
    """Flat indices of the six neighbours of every cell, shape ``(rows*cols, 6)``.

    Out-of-bounds neighbours are marked with -1 (never when ``periodic``).
    Column ``k`` corresponds to ``AXIAL_OFFSETS[k]``.
    """
    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    table = np.empty((rows * cols, len(AXIAL_OFFSETS)), dtype=np.int64)
    for k, (di, dj) in enumerate(AXIAL_OFFSETS):
        ni, nj = ii + di, jj + dj
        if periodic:
            table[:, k] = (ni % rows) * cols + (nj % cols)
        else:
            ok = (ni >= 0) & (ni < rows) & (nj >= 0) & (nj < cols)
            table[:, k] = np.where(ok, ni * cols + nj, -1)
    return table


def codeword_to_grid(code_bits, rows: int, cols: int, track_height: Optional[int] = None) -> HexGrid:
    """Raster-fill the non-guard cells with ``code_bits``."""
    v = np.asarray(code_bits).ravel()
    guard = guard_row_mask(rows, track_height)
    need = int((~guard).sum()) * cols
    if v.size != need:
        raise LatticeError(f"codeword length {v.size} != {need} data cells")
    bits = np.zeros((rows, cols), dtype=np.uint8)
    bits[~guard] = v.reshape(-1, cols)
    return HexGrid(bits, track_height)


def grid_to_codeword(grid: HexGrid) -> np.ndarray:
    return grid.bits[~grid.guard_rows()].ravel().copy()


def data_cell_indices(rows: int, cols: int, track_height: Optional[int] = None) -> np.ndarray:
    """Flat cell index of codeword bit ``t`` for every ``t`` (raster order)."""
    guard = guard_row_mask(rows, track_height)
    cells = np.arange(rows * cols).reshape(rows, cols)
    return cells[~guard].ravel()


def dump_grid(grid: HexGrid) -> str:
    return "\n".join("".join(str(b) for b in row) for row in grid.bits) + "\n"


def load_grid(text: str | Path | Iterable[str], track_height: Optional[int] = None) -> HexGrid:
    if isinstance(text, Path):
        text = text.read_text()
    lines = text.splitlines() if isinstance(text, str) else list(text)
    lines = [ln.strip() for ln in lines if ln.strip()]
    if not lines or any(len(ln) != len(lines[0]) for ln in lines):
        raise LatticeError("grid dump must have equal-length, non-empty rows")
    if any(ch not in "01" for ln in lines for ch in ln):
        raise LatticeError("grid dump may only contain '0' and '1'")
    bits = np.array([[int(ch) for ch in ln] for ln in lines], dtype=np.uint8)
    return HexGrid(bits, track_height)
