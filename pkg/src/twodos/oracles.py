"""Brute-force reference computations and the self-check suites built on them.

These are deliberately naive (explicit enumeration, quadratic convolution) so
they share no code path with the fast implementations they check.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .channel import TWODOS_TABLE, signal_level
from .denevo import LLRGrid, QuantizedDensity, convolve, convolve_direct
from .fullgraph import check_update, measured_update

_CONFIGS = np.array(list(itertools.product((0, 1), repeat=7)))


def measured_by_enumeration(lik: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Measured -> variable messages for one node by summing all 2^7 patterns.

    ``lik`` is ``(2, 7)`` indexed by central bit and neighbour count, ``q`` is
    ``(7, 2)`` (slot 0 central).  Returns normalized ``(7, 2)``.
    """
    counts = _CONFIGS[:, 1:].sum(axis=1)
    base = lik[_CONFIGS[:, 0], counts]
    out = np.zeros((7, 2))
    for s in range(7):
        w = base.copy()
        for t in range(7):
            if t != s:
                w = w * q[t, _CONFIGS[:, t]]
        for v in (0, 1):
            out[s, v] = w[_CONFIGS[:, s] == v].sum()
    return out / out.sum(axis=1, keepdims=True)


def check_by_enumeration(q: np.ndarray) -> np.ndarray:
    """Extrinsic parity-check messages by summing over all even-weight words."""
    d = q.shape[0]
    out = np.zeros((d, 2))
    for word in itertools.product((0, 1), repeat=d):
        if sum(word) % 2:
            continue
        w = np.array([q[i, b] for i, b in enumerate(word)])
        for i in range(d):
            out[i, word[i]] += np.prod(np.delete(w, i))
    return out / out.sum(axis=1, keepdims=True)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float
    tolerance: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: max deviation {self.worst:.3e} (tolerance {self.tolerance:.0e})"


def _pairs(rng, shape):
    p = rng.random(shape)
    return np.stack([p, 1.0 - p], axis=-1)


def measured_suite(trials: int = 1000, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    lik = rng.random((trials, 2, 7)) + 1e-3
    q = _pairs(rng, (trials, 7))
    fast = measured_update(lik, q)
    worst = max(float(np.abs(fast[i] - measured_by_enumeration(lik[i], q[i])).max()) for i in range(trials))
    return SuiteResult("measured-node update vs 2^7 enumeration", worst <= 1e-12, worst, 1e-12)


def check_suite(trials: int = 1000, degrees=range(3, 9), seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for dc in degrees:
        q = _pairs(rng, (trials, dc))
        fast = check_update(q.reshape(-1, 2), np.repeat(np.arange(trials), dc), trials).reshape(trials, dc, 2)
        for i in range(trials):
            worst = max(worst, float(np.abs(fast[i] - check_by_enumeration(q[i])).max()))
    return SuiteResult("check-node update vs even-parity enumeration", worst <= 1e-10, worst, 1e-10)


def convolution_suite(trials: int = 50, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    grid = LLRGrid(llr_max=8.0, intervals=128)
    worst = 0.0
    for _ in range(trials):
        dens = []
        for _ in range(2):
            m = rng.random(grid.size) * (rng.random(grid.size) < 0.3)
            lo, hi = rng.random(2) * 0.05
            dens.append(QuantizedDensity(grid, m / m.sum() * (1 - lo - hi), lo, hi))
        fast = convolve([(dens[0], 1), (dens[1], 1)])
        slow = convolve_direct(dens[0], dens[1])
        worst = max(worst, float(np.abs(fast.extended() - slow.extended()).max()))
    return SuiteResult("FFT convolution vs direct convolution", worst <= 1e-10, worst, 1e-10)


_LEVELS = (
    (0.95, 0.80, 0.70, 0.55, 0.45, 0.35, 0.25),
    (0.50, 0.35, 0.30, 0.20, 0.15, 0.10, 0.05),
)


def signal_table_suite() -> SuiteResult:
    worst = max(
        abs(signal_level(TWODOS_TABLE, b, n) - _LEVELS[b][n]) for b in (0, 1) for n in range(7)
    )
    return SuiteResult("signal levels vs reference table", worst == 0.0, worst, 0.0)


def run_all(seed: int = 0) -> list[SuiteResult]:
    return [
        signal_table_suite(),
        measured_suite(seed=seed),
        check_suite(seed=seed),
        convolution_suite(seed=seed),
    ]
