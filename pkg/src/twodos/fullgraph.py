"""Sum-product decoding on the joint code / channel factor graph.

The graph has three node families: variable nodes (codeword bits placed on the
hexagonal lattice), check nodes (rows of H) and measured-data nodes (one per
readback sample, attached to its central bit and the six neighbouring bits).
One iteration runs, in order,

1. variable -> check,
2. check -> variable,
3. variable -> measured,
4. measured -> variable,

followed by the pseudo-posterior, a hard decision and a syndrome check.

Every message is a normalized probability pair ``(p(0), p(1))``.  Measured
slots that point at a guard row or fall outside the array carry the fixed pair
``(1, 0)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np
from scipy.special import expit

from .channel import ChannelError, SignalLevelTable
from .lattice import data_cell_indices, guard_row_mask, neighbor_index_table
from .ldpc import ParityCheckMatrix, syndrome

CLIP = 1e-30
SLOTS = 7  # slot 0 is the central bit, slots 1..6 follow AXIAL_OFFSETS


class DecodeError(ValueError):
    pass


@dataclass
class Diagnostics:
    degenerate: int = 0  # messages whose two components both vanished

    def bump(self, count: int) -> None:
        self.degenerate += int(count)


def normalize_log_pair(l0: np.ndarray, l1: np.ndarray, diag: Optional[Diagnostics] = None) -> np.ndarray:
    """Probability pair from unnormalized log-masses, clipped to ``[CLIP, 1]``."""
    with np.errstate(invalid="ignore"):
        d = l0 - l1
    bad = np.isnan(d)
    if bad.any():
        if diag is not None:
            diag.bump(bad.sum())
        d = np.where(bad, 0.0, d)
    out = np.stack([expit(d), expit(-d)], axis=-1)
    return np.clip(out, CLIP, 1.0)


def normalize_pair(p: np.ndarray, diag: Optional[Diagnostics] = None) -> np.ndarray:
    """Normalize pairs along the last axis; all-zero pairs become uniform."""
    s = p.sum(axis=-1, keepdims=True)
    bad = ~(s > 0) | ~np.isfinite(s)
    if bad.any():
        if diag is not None:
            diag.bump(bad.sum())
        p = np.where(bad, 0.5, p)
        s = np.where(bad, 1.0, s)
    return p / s


def check_update(x2c: np.ndarray, check_idx: np.ndarray, m: int) -> np.ndarray:
    """Parity-check marginalization by the tanh product rule.

    ``x2c`` has one pair per edge; ``check_idx`` gives each edge's check.
    The extrinsic product excludes the receiving edge.  Exact zeros
    (uniform inputs) are counted separately so no division by zero occurs.
    """
    t = x2c[:, 0] - x2c[:, 1]
    zero = t == 0.0
    mag = np.where(zero, 1.0, np.abs(t))
    logmag = np.log(mag)
    neg = (t < 0).astype(np.int64)
    zeros_per = np.bincount(check_idx, weights=zero.astype(float), minlength=m)
    log_per = np.bincount(check_idx, weights=logmag, minlength=m)
    neg_per = np.bincount(check_idx, weights=neg.astype(float), minlength=m).astype(np.int64)

    others_zero = zeros_per[check_idx] - zero
    mag_out = np.exp(log_per[check_idx] - logmag)
    sign_out = np.where((neg_per[check_idx] - neg) % 2 == 1, -1.0, 1.0)
    T = np.where(others_zero > 0, 0.0, sign_out * np.minimum(mag_out, 1.0))
    return np.stack([(1.0 + T) / 2.0, (1.0 - T) / 2.0], axis=-1)


def _poly_mul_linear(poly: np.ndarray, q0: np.ndarray, q1: np.ndarray) -> np.ndarray:
    out = np.empty((poly.shape[0], poly.shape[1] + 1))
    out[:, :-1] = poly * q0[:, None]
    out[:, -1] = 0.0
    out[:, 1:] += poly * q1[:, None]
    return out


def counting_distribution(q: np.ndarray) -> np.ndarray:
    """Distribution of the number of ones among independent bits.

    ``q`` has shape ``(R, K, 2)``; the result has shape ``(R, K + 1)``.
    """
    poly = np.ones((q.shape[0], 1))
    for k in range(q.shape[1]):
        poly = _poly_mul_linear(poly, q[:, k, 0], q[:, k, 1])
    return poly


@numba.njit(cache=True, nogil=True)
def _measured_kernel(lik, x2r, out):
    R = x2r.shape[0]
    K = SLOTS - 1
    pre = np.empty((K + 1, K + 1))
    suf = np.empty((K + 2, K + 1))
    G = np.empty((2, K))
    for r in range(R):
        # prefix / suffix counting polynomials over the six neighbour slots
        pre[0, :] = 0.0
        pre[0, 0] = 1.0
        for k in range(K):
            q0 = x2r[r, 1 + k, 0]
            q1 = x2r[r, 1 + k, 1]
            pre[k + 1, 0] = pre[k, 0] * q0
            for j in range(1, K + 1):
                pre[k + 1, j] = pre[k, j] * q0 + pre[k, j - 1] * q1
        suf[K, :] = 0.0
        suf[K, 0] = 1.0
        for k in range(K - 1, -1, -1):
            q0 = x2r[r, 1 + k, 0]
            q1 = x2r[r, 1 + k, 1]
            suf[k, 0] = suf[k + 1, 0] * q0
            for j in range(1, K + 1):
                suf[k, j] = suf[k + 1, j] * q0 + suf[k + 1, j - 1] * q1

        m0 = 0.0
        m1 = 0.0
        for n in range(K + 1):
            m0 += pre[K, n] * lik[r, 0, n]
            m1 += pre[K, n] * lik[r, 1, n]
        out[r, 0, 0] = m0
        out[r, 0, 1] = m1

        # G[b, n'] = sum_a q_central(a) * lik[a, n' + b]
        c0 = x2r[r, 0, 0]
        c1 = x2r[r, 0, 1]
        for b in range(2):
            for n in range(K):
                G[b, n] = c0 * lik[r, 0, n + b] + c1 * lik[r, 1, n + b]
        for k in range(K):
            o0 = 0.0
            o1 = 0.0
            # leave-one-out polynomial: pre[k] * suf[k + 1], degree K - 1
            for i in range(k + 1):
                a = pre[k, i]
                if a == 0.0:
                    continue
                for j in range(K - k):
                    w = a * suf[k + 1, j]
                    o0 += w * G[0, i + j]
                    o1 += w * G[1, i + j]
            out[r, 1 + k, 0] = o0
            out[r, 1 + k, 1] = o1


def measured_update(
    lik: np.ndarray, x2r: np.ndarray, diag: Optional[Diagnostics] = None
) -> np.ndarray:
    """Measured-data -> variable messages for every slot of every node.

    ``lik[r, b, n]`` is ``p(r | central bit b, n nonzero neighbours)`` (any
    positive per-node scale), ``x2r`` has shape ``(R, 7, 2)``.  The central
    message sums the likelihood against the distribution of the neighbour
    count; a neighbour's message uses the count over the other five
    neighbours, shifted by its own value, and also marginalizes the central
    bit.  Cost is constant per node.
    """
    lik = np.ascontiguousarray(lik, dtype=np.float64)
    x2r = np.ascontiguousarray(x2r, dtype=np.float64)
    if lik.shape != (x2r.shape[0], 2, SLOTS) or x2r.shape[1:] != (SLOTS, 2):
        raise DecodeError("measured update expects lik (R, 2, 7) and x2r (R, 7, 2)")
    out = np.empty_like(x2r)
    _measured_kernel(lik, x2r, out)
    return normalize_pair(out, diag)


@dataclass(eq=False)
class FactorGraph:
    """Static topology of the joint graph for one code and lattice geometry."""

    H: ParityCheckMatrix
    rows: int
    cols: int
    track_height: Optional[int] = None
    var_cell: np.ndarray = field(init=False)
    node_slots: np.ndarray = field(init=False)
    ch_node: np.ndarray = field(init=False)
    ch_slot: np.ndarray = field(init=False)
    ch_var: np.ndarray = field(init=False)
    feasible: np.ndarray = field(init=False)

    def __post_init__(self):
        cells = self.rows * self.cols
        self.var_cell = data_cell_indices(self.rows, self.cols, self.track_height)
        if self.var_cell.size != self.H.n:
            raise DecodeError(
                f"lattice has {self.var_cell.size} data cells but the code has n = {self.H.n}"
            )
        cell_var = np.full(cells, -1, dtype=np.int64)
        cell_var[self.var_cell] = np.arange(self.H.n)
        nbr = neighbor_index_table(self.rows, self.cols)
        slots = np.full((cells, SLOTS), -1, dtype=np.int64)
        slots[:, 0] = cell_var
        slots[:, 1:] = np.where(nbr >= 0, cell_var[np.maximum(nbr, 0)], -1)
        self.node_slots = slots
        node, slot = np.nonzero(slots >= 0)
        self.ch_node, self.ch_slot = node, slot
        self.ch_var = slots[node, slot]
        # configurations reachable once fixed-zero slots are accounted for
        free_nbrs = (slots[:, 1:] >= 0).sum(axis=1)
        feas = np.zeros((cells, 2, SLOTS), dtype=bool)
        n_ok = np.arange(SLOTS)[None, :] <= free_nbrs[:, None]
        feas[:, 0, :] = n_ok
        feas[:, 1, :] = n_ok & (slots[:, 0:1] >= 0)
        self.feasible = feas

    @property
    def n(self) -> int:
        return self.H.n

    @property
    def num_measured(self) -> int:
        return self.rows * self.cols

    def channel_degrees(self) -> np.ndarray:
        return np.bincount(self.ch_var, minlength=self.n)

    def likelihoods(self, intensities: np.ndarray, table: SignalLevelTable, sigma2: float) -> np.ndarray:
        """Per-node likelihood table ``(R, 2, 7)`` scaled by the best feasible entry."""
        if sigma2 <= 0:
            raise ChannelError(f"noise variance must be positive, got {sigma2}")
        r = np.asarray(intensities, dtype=float).ravel()
        if r.size != self.num_measured:
            raise DecodeError(f"readback has {r.size} samples, expected {self.num_measured}")
        expo = -((r[:, None, None] - table.levels[None]) ** 2) / (2 * sigma2)
        ref = np.where(self.feasible, expo, -np.inf).max(axis=(1, 2), keepdims=True)
        return np.exp(np.minimum(expo - ref, 0.0))


@dataclass
class MessageState:
    x2c: np.ndarray
    c2x: np.ndarray
    x2r: np.ndarray
    r2x: np.ndarray
    prior_log: Optional[np.ndarray] = None


@dataclass
class DecodeResult:
    word: np.ndarray
    converged: bool
    iterations_used: int
    posterior: np.ndarray
    bit_errors: list[int] = field(default_factory=list)
    degenerate: int = 0


def init_messages(graph: FactorGraph, prior: Optional[np.ndarray] = None) -> MessageState:
    """Uniform check and measured messages; fixed-zero slots set to ``(1, 0)``.

    ``prior`` (shape ``(n, 2)``) is an optional extra per-bit factor folded
    into every variable-node product.
    """
    E = graph.H.num_edges
    R = graph.num_measured
    half = np.full((E, 2), 0.5)
    x2r = np.full((R, SLOTS, 2), 0.5)
    x2r[graph.node_slots < 0] = (1.0, 0.0)
    r2x = np.full((R, SLOTS, 2), 0.5)
    prior_log = None
    if prior is not None:
        prior = np.asarray(prior, dtype=float)
        if prior.shape != (graph.n, 2):
            raise DecodeError(f"prior must have shape {(graph.n, 2)}")
        prior_log = np.log(np.clip(prior / prior.sum(axis=1, keepdims=True), CLIP, 1.0))
    return MessageState(half.copy(), half.copy(), x2r, r2x, prior_log)


def _log_clip(p: np.ndarray) -> np.ndarray:
    return np.log(np.clip(p, CLIP, 1.0))


def _check_sums(graph: FactorGraph, c2x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lc = _log_clip(c2x)
    n = graph.n
    vi = graph.H.var_idx
    return lc, np.stack(
        [np.bincount(vi, weights=lc[:, 0], minlength=n), np.bincount(vi, weights=lc[:, 1], minlength=n)],
        axis=-1,
    )


def _measured_sums(graph: FactorGraph, r2x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lr = _log_clip(r2x[graph.ch_node, graph.ch_slot])
    n = graph.n
    return lr, np.stack(
        [
            np.bincount(graph.ch_var, weights=lr[:, 0], minlength=n),
            np.bincount(graph.ch_var, weights=lr[:, 1], minlength=n),
        ],
        axis=-1,
    )


def update_var_to_check(graph: FactorGraph, st: MessageState, diag: Optional[Diagnostics] = None) -> None:
    lc, Sc = _check_sums(graph, st.c2x)
    _, Sr = _measured_sums(graph, st.r2x)
    tot = Sc + Sr
    if st.prior_log is not None:
        tot = tot + st.prior_log
    ext = tot[graph.H.var_idx] - lc
    st.x2c = normalize_log_pair(ext[:, 0], ext[:, 1], diag)


def update_check_to_var(graph: FactorGraph, st: MessageState) -> None:
    st.c2x = check_update(st.x2c, graph.H.check_idx, graph.H.m)


def update_var_to_measured(graph: FactorGraph, st: MessageState, diag: Optional[Diagnostics] = None) -> None:
    _, Sc = _check_sums(graph, st.c2x)
    lr, Sr = _measured_sums(graph, st.r2x)
    tot = Sc + Sr
    if st.prior_log is not None:
        tot = tot + st.prior_log
    ext = tot[graph.ch_var] - lr
    st.x2r[graph.ch_node, graph.ch_slot] = normalize_log_pair(ext[:, 0], ext[:, 1], diag)


def update_measured_to_var(
    graph: FactorGraph, st: MessageState, lik: np.ndarray, diag: Optional[Diagnostics] = None
) -> None:
    st.r2x = measured_update(lik, st.x2r, diag)


def pseudo_posterior(graph: FactorGraph, st: MessageState, use_checks: bool = True) -> np.ndarray:
    _, Sr = _measured_sums(graph, st.r2x)
    tot = Sr
    if use_checks:
        tot = tot + _check_sums(graph, st.c2x)[1]
    if st.prior_log is not None:
        tot = tot + st.prior_log
    d = tot[:, 0] - tot[:, 1]
    d = np.where(np.isnan(d), 0.0, d)
    return np.stack([expit(d), expit(-d)], axis=-1)


def hard_decision(q: np.ndarray) -> np.ndarray:
    """1 where ``q(1) > q(0)``, ties go to 0."""
    return (q[..., 1] > q[..., 0]).astype(np.uint8)


Monitor = Callable[[str, int, MessageState], None]


def decode(
    graph: FactorGraph,
    intensities: np.ndarray,
    table: SignalLevelTable,
    sigma2: float,
    max_iters: int,
    reference: Optional[np.ndarray] = None,
    prior: Optional[np.ndarray] = None,
    monitor: Optional[Monitor] = None,
    use_checks: bool = True,
    error_positions: Optional[np.ndarray] = None,
) -> DecodeResult:
    """Flooding-schedule sum-product decoding of one readback field.

    Stops at the first iteration whose hard decision has zero syndrome.
    ``max_iters = 0`` returns the decision from one measured -> variable pass
    under uniform priors.  ``use_checks=False`` drops the code entirely
    (channel-graph-only detection) and never stops early.  With a
    ``reference`` word, per-iteration bit errors are counted over
    ``error_positions`` (default: every bit).
    """
    if max_iters < 0:
        raise DecodeError("max_iters must be non-negative")
    lik = graph.likelihoods(intensities, table, sigma2)
    diag = Diagnostics()
    st = init_messages(graph, prior)
    ref = None if reference is None else np.asarray(reference).ravel()
    pos = slice(None) if error_positions is None else np.asarray(error_positions)
    errors: list[int] = []

    def emit(step: str, it: int):
        if monitor is not None:
            monitor(step, it, st)

    if max_iters == 0:
        update_measured_to_var(graph, st, lik, diag)
        emit("measured_to_var", 0)
        q = pseudo_posterior(graph, st, use_checks=use_checks)
        word = hard_decision(q)
        if ref is not None:
            errors.append(int(np.count_nonzero(word[pos] != ref[pos])))
        conv = use_checks and not syndrome(graph.H, word).any()
        return DecodeResult(word, bool(conv), 0, q, errors, diag.degenerate)

    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        if use_checks:
            update_var_to_check(graph, st, diag)
            emit("var_to_check", it)
            update_check_to_var(graph, st)
            emit("check_to_var", it)
        update_var_to_measured(graph, st, diag)
        emit("var_to_measured", it)
        update_measured_to_var(graph, st, lik, diag)
        emit("measured_to_var", it)
        q = pseudo_posterior(graph, st, use_checks=use_checks)
        word = hard_decision(q)
        if ref is not None:
            errors.append(int(np.count_nonzero(word[pos] != ref[pos])))
        if use_checks and not syndrome(graph.H, word).any():
            converged = True
            break
    return DecodeResult(word, converged, it, q, errors, diag.degenerate)


def uncoded_graph(rows: int, cols: int, track_height: Optional[int] = None) -> FactorGraph:
    """Channel-only graph: every data cell is a free bit, no parity checks."""
    n = int((~guard_row_mask(rows, track_height)).sum()) * cols
    empty = np.zeros(0, dtype=np.int64)
    return FactorGraph(ParityCheckMatrix(n, 0, empty, empty), rows, cols, track_height)
