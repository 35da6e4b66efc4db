import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twodos.lattice import (
    AXIAL_OFFSETS,
    HexGrid,
    LatticeError,
    codeword_to_grid,
    count_nonzero_neighbors,
    data_cell_count,
    dump_grid,
    grid_to_codeword,
    load_grid,
    neighbor_counts,
    neighbor_index_table,
    neighbors,
)


def _brute_neighbors(rows, cols, i, j):
    return [
        (i + di, j + dj)
        for di, dj in AXIAL_OFFSETS
        if 0 <= i + di < rows and 0 <= j + dj < cols
    ]


def test_interior_has_six_neighbors():
    g = HexGrid(np.zeros((10, 10), dtype=np.uint8))
    assert len(neighbors(g, (5, 5))) == 6
    assert len(set(neighbors(g, (5, 5)))) == 6


@pytest.mark.parametrize("coord", [(0, 0), (0, 9), (9, 0), (9, 9), (0, 4), (4, 0)])
def test_edge_neighbors_match_bounds_check(coord):
    g = HexGrid(np.zeros((10, 10), dtype=np.uint8))
    got = neighbors(g, coord)
    assert sorted(got) == sorted(_brute_neighbors(10, 10, *coord))
    if coord in ((0, 0), (9, 9)):
        assert len(got) == 2
    if coord in ((0, 9), (9, 0)):
        assert len(got) == 3


def test_out_of_bounds_rejected():
    g = HexGrid(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(LatticeError):
        neighbors(g, (4, 0))
    with pytest.raises(LatticeError):
        count_nonzero_neighbors(g, (-1, 2))


def test_neighbor_relation_is_symmetric():
    rng = np.random.default_rng(7)
    g = HexGrid(np.zeros((12, 9), dtype=np.uint8))
    for _ in range(1000):
        a = tuple(int(x) for x in rng.integers((0, 0), (12, 9)))
        b = tuple(int(x) for x in rng.integers((0, 0), (12, 9)))
        assert (a in neighbors(g, b)) == (b in neighbors(g, a))
    # and exhaustively over actual neighbour pairs
    for i in range(12):
        for j in range(9):
            for nb in neighbors(g, (i, j)):
                assert (i, j) in neighbors(g, nb)


def test_count_nonzero_neighbors_extremes():
    zero = HexGrid(np.zeros((6, 6), dtype=np.uint8))
    ones = HexGrid(np.ones((6, 6), dtype=np.uint8))
    assert count_nonzero_neighbors(zero, (3, 3)) == 0
    assert count_nonzero_neighbors(ones, (3, 3)) == 6
    assert count_nonzero_neighbors(ones, (0, 0)) == 2


def test_vectorized_counts_match_direct_summation():
    rng = np.random.default_rng(1)
    bits = rng.integers(0, 2, (9, 13)).astype(np.uint8)
    g = HexGrid(bits)
    vec = neighbor_counts(bits)
    for i in range(9):
        for j in range(13):
            brute = sum(int(bits[c]) for c in _brute_neighbors(9, 13, i, j))
            assert count_nonzero_neighbors(g, (i, j)) == brute == vec[i, j]


def test_periodic_counts_and_index_table():
    rng = np.random.default_rng(2)
    bits = rng.integers(0, 2, (7, 5))
    per = neighbor_counts(bits, periodic=True)
    tab = neighbor_index_table(7, 5, periodic=True)
    assert (tab >= 0).all()
    np.testing.assert_array_equal(bits.ravel()[tab].sum(axis=1), per.ravel())
    open_tab = neighbor_index_table(7, 5)
    assert (open_tab[0] >= 0).sum() == 2


def test_plain_rectangle_row_major_fill():
    v = np.arange(12) % 2
    g = codeword_to_grid(v, 3, 4)
    np.testing.assert_array_equal(g.bits.ravel(), v)


def test_guard_row_layout():
    v = np.ones(12, dtype=np.uint8)
    v[::5] = 0
    g = codeword_to_grid(v, 4, 4, track_height=3)
    assert not g.bits[3].any()
    np.testing.assert_array_equal(g.bits[:3].ravel(), v)
    np.testing.assert_array_equal(g.guard_rows(), [False, False, False, True])


def test_guard_rows_repeat_every_track():
    assert data_cell_count(9, 2, track_height=2) == 12
    g = codeword_to_grid(np.ones(12, dtype=np.uint8), 9, 2, track_height=2)
    assert not g.bits[[2, 5, 8]].any()
    assert g.bits[[0, 1, 3, 4, 6, 7]].all()


def test_length_mismatch_rejected():
    with pytest.raises(LatticeError):
        codeword_to_grid(np.zeros(11), 3, 4)


def test_nonzero_guard_row_rejected():
    bits = np.ones((4, 3), dtype=np.uint8)
    with pytest.raises(LatticeError):
        HexGrid(bits, track_height=3)


@settings(max_examples=100, deadline=None)
@given(
    rows=st.integers(1, 12),
    cols=st.integers(1, 12),
    th=st.one_of(st.none(), st.integers(1, 5)),
    seed=st.integers(0, 2**32 - 1),
)
def test_round_trip(rows, cols, th, seed):
    k = data_cell_count(rows, cols, th)
    v = np.random.default_rng(seed).integers(0, 2, k).astype(np.uint8)
    g = codeword_to_grid(v, rows, cols, th)
    np.testing.assert_array_equal(grid_to_codeword(g), v)
    assert not g.bits[g.guard_rows()].any()


def test_dump_and_load():
    bits = np.array([[0, 1, 1], [1, 0, 0], [0, 0, 0]], dtype=np.uint8)
    g = HexGrid(bits, track_height=2)
    text = dump_grid(g)
    assert text == "011\n100\n000\n"
    g2 = load_grid(text, track_height=2)
    np.testing.assert_array_equal(g2.bits, bits)
    with pytest.raises(LatticeError):
        load_grid("01\n1\n")
    with pytest.raises(LatticeError):
        load_grid("02\n")
