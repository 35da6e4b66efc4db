"""Joint LDPC decoding and 2D intersymbol-interference detection on a hexagonal lattice."""
from .channel import TWODOS_TABLE, SignalLevelTable, readback, snr_db, sigma2_from_snr
from .fullgraph import FactorGraph, decode
from .lattice import HexGrid, codeword_to_grid, grid_to_codeword
from .ldpc import construct_regular, encode, to_systematic

__all__ = [
    "TWODOS_TABLE",
    "SignalLevelTable",
    "readback",
    "snr_db",
    "sigma2_from_snr",
    "FactorGraph",
    "decode",
    "HexGrid",
    "codeword_to_grid",
    "grid_to_codeword",
    "construct_regular",
    "encode",
    "to_systematic",
]
