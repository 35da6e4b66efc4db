import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twodos.channel import (
    TWODOS_TABLE,
    ChannelError,
    SignalLevelTable,
    format_signal_table,
    likelihood,
    load_signal_table,
    parse_signal_table,
    readback,
    scaled_likelihoods,
    sigma2_from_snr,
    signal_level,
    snr_db,
)
from twodos.lattice import HexGrid, count_nonzero_neighbors

TABLE_I = {
    0: (0.95, 0.50),
    1: (0.80, 0.35),
    2: (0.70, 0.30),
    3: (0.55, 0.20),
    4: (0.45, 0.15),
    5: (0.35, 0.10),
    6: (0.25, 0.05),
}


@pytest.mark.parametrize("n", range(7))
def test_signal_levels_match_table(n):
    assert signal_level(TWODOS_TABLE, 0, n) == TABLE_I[n][0]
    assert signal_level(TWODOS_TABLE, 1, n) == TABLE_I[n][1]


def test_signal_level_range_checked():
    with pytest.raises(ChannelError):
        signal_level(TWODOS_TABLE, 0, 7)
    with pytest.raises(ChannelError):
        signal_level(TWODOS_TABLE, 2, 0)


@pytest.mark.parametrize(
    "s0, s1",
    [
        ((0.95, 0.80, 0.80, 0.55, 0.45, 0.35, 0.25), TWODOS_TABLE.s1),  # not strictly decreasing
        (TWODOS_TABLE.s0, (0.50, 0.35, 0.30, 0.20, 0.15, 0.10, 0.30)),  # s1 rises
        ((0.45, 0.40, 0.35, 0.30, 0.25, 0.20, 0.15), (0.50, 0.35, 0.30, 0.20, 0.15, 0.10, 0.05)),
        ((1.2, 0.80, 0.70, 0.55, 0.45, 0.35, 0.25), TWODOS_TABLE.s1),
        (TWODOS_TABLE.s0[:6], TWODOS_TABLE.s1),
    ],
)
def test_malformed_tables_rejected(s0, s1):
    with pytest.raises(ChannelError):
        SignalLevelTable(s0, s1)


def test_table_file_round_trip(tmp_path):
    p = tmp_path / "levels.txt"
    p.write_text("# TwoDOS\n" + format_signal_table(TWODOS_TABLE))
    assert load_signal_table(p) == TWODOS_TABLE


def test_table_file_rejects_missing_and_extra_keys():
    text = format_signal_table(TWODOS_TABLE)
    with pytest.raises(ChannelError, match="missing"):
        parse_signal_table("\n".join(text.splitlines()[1:]))
    with pytest.raises(ChannelError, match="unknown"):
        parse_signal_table(text + "s2_0 = 0.1\n")
    with pytest.raises(ChannelError, match="duplicate"):
        parse_signal_table(text + "s0_0 = 0.9\n")


def test_noiseless_readback_reproduces_table():
    zeros = HexGrid(np.zeros((8, 8), dtype=np.uint8))
    ones = HexGrid(np.ones((8, 8), dtype=np.uint8))
    np.testing.assert_array_equal(readback(zeros, TWODOS_TABLE, 0.0).intensities[1:-1, 1:-1], 0.95)
    np.testing.assert_array_equal(readback(ones, TWODOS_TABLE, 0.0).intensities[1:-1, 1:-1], 0.05)
    rng = np.random.default_rng(3)
    g = HexGrid(rng.integers(0, 2, (9, 7)).astype(np.uint8))
    r = readback(g, TWODOS_TABLE, 0.0).intensities
    for i in range(9):
        for j in range(7):
            n = count_nonzero_neighbors(g, (i, j))
            assert r[i, j] == signal_level(TWODOS_TABLE, int(g.bits[i, j]), n)


def test_readback_deterministic_and_validated():
    g = HexGrid(np.random.default_rng(0).integers(0, 2, (20, 20)).astype(np.uint8))
    a = readback(g, TWODOS_TABLE, 0.01, rng_seed=42).intensities
    b = readback(g, TWODOS_TABLE, 0.01, rng_seed=42).intensities
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, readback(g, TWODOS_TABLE, 0.01, rng_seed=43).intensities)
    with pytest.raises(ChannelError):
        readback(g, TWODOS_TABLE, -1e-3)


def test_empirical_noise_variance():
    g = HexGrid(np.random.default_rng(1).integers(0, 2, (1000, 1000)).astype(np.uint8))
    s2 = 0.02
    noisy = readback(g, TWODOS_TABLE, s2, rng_seed=5).intensities
    clean = readback(g, TWODOS_TABLE, 0.0).intensities
    assert abs((noisy - clean).var() / s2 - 1) < 0.01


def test_likelihood_at_mean_and_symmetry():
    s2 = 0.013
    assert likelihood(0.95, 0, 0, TWODOS_TABLE, s2) == pytest.approx(1 / math.sqrt(2 * math.pi * s2))
    for r in (0.1, 0.4, 0.77, 1.3):
        for c in (0, 1):
            for n in range(7):
                mu = signal_level(TWODOS_TABLE, c, n)
                assert likelihood(r, c, n, TWODOS_TABLE, s2) == pytest.approx(
                    likelihood(2 * mu - r, c, n, TWODOS_TABLE, s2), rel=1e-12
                )
    with pytest.raises(ChannelError):
        likelihood(0.5, 0, 0, TWODOS_TABLE, 0.0)


@settings(max_examples=200, deadline=None)
@given(r=st.floats(-0.5, 1.5), s2=st.floats(0.005, 0.5))
def test_likelihood_ratio_closed_form(r, s2):
    ratio = likelihood(r, 0, 0, TWODOS_TABLE, s2) / likelihood(r, 1, 0, TWODOS_TABLE, s2)
    expected = math.exp(((r - 0.50) ** 2 - (r - 0.95) ** 2) / (2 * s2))
    assert ratio == pytest.approx(expected, rel=1e-9)


def test_scaled_likelihoods_proportional_to_pdf():
    r = np.array([0.1, 0.52, 0.9])
    s2 = 0.02
    sc = scaled_likelihoods(r, TWODOS_TABLE, s2)
    assert sc.shape == (3, 2, 7)
    for i, ri in enumerate(r):
        raw = np.array([[likelihood(ri, b, n, TWODOS_TABLE, s2) for n in range(7)] for b in (0, 1)])
        np.testing.assert_allclose(sc[i], raw / raw.max(), rtol=1e-12)


def test_snr_definition():
    # direct sum over the level table
    num = sum(math.comb(6, n) * (TABLE_I[n][0] ** 2 + TABLE_I[n][1] ** 2) for n in range(7))
    assert num == pytest.approx(25.5125)
    assert TWODOS_TABLE.mean_energy() == pytest.approx(25.5125 / 128)
    assert snr_db(TWODOS_TABLE, 1.0, 25.5125 / 128 / 2) == pytest.approx(0.0, abs=1e-12)
    assert snr_db(TWODOS_TABLE, 0.5, 0.01) - snr_db(TWODOS_TABLE, 1.0, 0.01) == pytest.approx(
        10 * math.log10(2), abs=1e-12
    )
    assert sigma2_from_snr(TWODOS_TABLE, 0.9, snr_db(TWODOS_TABLE, 0.9, 0.0123)) == pytest.approx(0.0123)
    with pytest.raises(ChannelError):
        snr_db(TWODOS_TABLE, 0.0, 0.01)


@settings(max_examples=100, deadline=None)
@given(
    s2=st.floats(1e-4, 1.0),
    f=st.floats(1.001, 3.0),
    rate=st.floats(0.05, 1.0),
)
def test_snr_strictly_decreasing(s2, f, rate):
    assert snr_db(TWODOS_TABLE, rate, s2 * f) < snr_db(TWODOS_TABLE, rate, s2)
    if rate * f <= 1.0:
        assert snr_db(TWODOS_TABLE, rate * f, s2) < snr_db(TWODOS_TABLE, rate, s2)
