"""Regular LDPC codes over GF(2): construction, systematic encoding, syndromes."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np


class CodeError(ValueError):
    """Invalid code parameters or message lengths."""


class ConstructionError(RuntimeError):
    """The requested degree sequence cannot be realized."""


@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    """Sparse parity-check matrix stored as an edge list sorted by (check, variable)."""

    n: int
    m: int
    check_idx: np.ndarray
    var_idx: np.ndarray
    four_cycles: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        c = np.asarray(self.check_idx, dtype=np.int64)
        v = np.asarray(self.var_idx, dtype=np.int64)
        if c.shape != v.shape or c.ndim != 1:
            raise CodeError("edge arrays must be 1D and of equal length")
        if c.size and (c.min() < 0 or c.max() >= self.m or v.min() < 0 or v.max() >= self.n):
            raise CodeError("edge index out of range")
        order = np.lexsort((v, c))
        c, v = c[order], v[order]
        key = c * self.n + v
        if np.any(key[1:] == key[:-1]):
            raise CodeError("duplicate edges")
        for a in (c, v):
            a.setflags(write=False)
        object.__setattr__(self, "check_idx", c)
        object.__setattr__(self, "var_idx", v)

    @property
    def num_edges(self) -> int:
        return self.check_idx.size

    def var_degrees(self) -> np.ndarray:
        return np.bincount(self.var_idx, minlength=self.n)

    def check_degrees(self) -> np.ndarray:
        return np.bincount(self.check_idx, minlength=self.m)

    @property
    def dv(self) -> Optional[int]:
        d = np.unique(self.var_degrees())
        return int(d[0]) if d.size == 1 else None

    @property
    def dc(self) -> Optional[int]:
        d = np.unique(self.check_degrees())
        return int(d[0]) if d.size == 1 else None

    def to_dense(self) -> np.ndarray:
        H = np.zeros((self.m, self.n), dtype=np.uint8)
        H[self.check_idx, self.var_idx] = 1
        return H

    @classmethod
    def from_dense(cls, H) -> "ParityCheckMatrix":
        H = np.asarray(H)
        c, v = np.nonzero(H % 2)
        return cls(H.shape[1], H.shape[0], c, v)

    def __eq__(self, other):
        if not isinstance(other, ParityCheckMatrix):
            return NotImplemented
        return (
            self.n == other.n
            and self.m == other.m
            and np.array_equal(self.check_idx, other.check_idx)
            and np.array_equal(self.var_idx, other.var_idx)
        )

    __hash__ = None


def syndrome(H: ParityCheckMatrix, word) -> np.ndarray:
    w = np.asarray(word).ravel()
    if w.size != H.n:
        raise CodeError(f"word length {w.size} != block length {H.n}")
    s = np.bincount(H.check_idx, weights=w[H.var_idx].astype(np.float64), minlength=H.m)
    return (s.astype(np.int64) & 1).astype(np.uint8)


def count_four_cycles(check_vars: list[set], var_checks: list[list]) -> int:
    total = 0
    for v, cs in enumerate(var_checks):
        total += _cycles_at(v, cs, check_vars)
    return total // 2


def _cycles_at(v: int, cs, check_vars) -> int:
    k = 0
    for a, b in itertools.combinations(cs, 2):
        k += len(check_vars[a] & check_vars[b]) - 1
    return k


def construct_regular(
    n: int,
    dv: int,
    dc: int,
    seed: int = 0,
    swap_budget: Optional[int] = None,
    remove_four_cycles: bool = True,
) -> ParityCheckMatrix:
    """Random (dv, dc)-regular code from a shuffled socket matching.

    Repeated edges are removed by socket swaps.  Four-cycles are then removed
    by further swaps, each accepted only if it lowers the local cycle count,
    until none remain or ``swap_budget`` attempts are spent (default ``50 n``).
    The number of remaining four-cycles is stored on the result.
    """
    if min(n, dv, dc) < 1:
        raise CodeError("n, dv and dc must be positive")
    if (n * dv) % dc:
        raise CodeError(f"n*dv = {n * dv} is not divisible by dc = {dc}")
    m = n * dv // dc
    if dc > n or dv > m:
        raise ConstructionError(f"no simple ({dv},{dc}) graph with n={n}, m={m}")
    rng = np.random.default_rng(seed)
    sockets = np.repeat(np.arange(n), dv)
    rng.shuffle(sockets)
    slots = sockets.reshape(m, dc).tolist()
    budget = 50 * n if swap_budget is None else swap_budget

    # repeated variables inside a check
    for _ in range(100 * n * dv):
        bad = [(c, i) for c, row in enumerate(slots) for i, v in enumerate(row) if row.index(v) != i]
        if not bad:
            break
        for c, i in bad:
            v = slots[c][i]
            for _try in range(1000):
                c2 = int(rng.integers(m))
                i2 = int(rng.integers(dc))
                v2 = slots[c2][i2]
                if c2 != c and v2 not in slots[c] and v not in slots[c2]:
                    slots[c][i], slots[c2][i2] = v2, v
                    break
    else:
        raise ConstructionError("could not remove repeated edges")
    if any(len(set(row)) != dc for row in slots):
        raise ConstructionError("could not remove repeated edges")

    check_vars = [set(row) for row in slots]
    var_checks: list[list[int]] = [[] for _ in range(n)]
    for c, row in enumerate(slots):
        for v in row:
            var_checks[v].append(c)

    remaining = None
    if remove_four_cycles:
        spent = 0
        while spent < budget:
            bad_vars = [v for v in range(n) if _cycles_at(v, var_checks[v], check_vars)]
            if not bad_vars:
                break
            for v in bad_vars:
                if spent >= budget:
                    break
                if not _cycles_at(v, var_checks[v], check_vars):
                    continue
                spent += 1
                c = var_checks[v][int(rng.integers(dv))]
                c2 = int(rng.integers(m))
                if c2 == c:
                    continue
                v2 = list(check_vars[c2])[int(rng.integers(dc))]
                if v2 in check_vars[c] or v in check_vars[c2]:
                    continue
                before = _cycles_at(v, var_checks[v], check_vars) + _cycles_at(v2, var_checks[v2], check_vars)
                _swap(check_vars, var_checks, v, c, v2, c2)
                after = _cycles_at(v, var_checks[v], check_vars) + _cycles_at(v2, var_checks[v2], check_vars)
                if after >= before:
                    _swap(check_vars, var_checks, v, c2, v2, c)
        remaining = count_four_cycles(check_vars, var_checks)

    ci = np.repeat(np.arange(m), dc)
    vi = np.fromiter((v for c in range(m) for v in sorted(check_vars[c])), dtype=np.int64, count=m * dc)
    return ParityCheckMatrix(n, m, ci, vi, four_cycles=remaining)


def _swap(check_vars, var_checks, v, c, v2, c2):
    # v moves from c to c2, v2 from c2 to c
    check_vars[c].remove(v)
    check_vars[c2].remove(v2)
    check_vars[c].add(v2)
    check_vars[c2].add(v)
    var_checks[v][var_checks[v].index(c)] = c2
    var_checks[v2][var_checks[v2].index(c2)] = c


@dataclass(frozen=True, eq=False)
class SystematicEncoder:
    """Encoder from the reduced row-echelon form of H.

    ``info_cols`` hold the message bits verbatim; parity bit ``pivot_cols[i]``
    equals ``parity_map[i] . u`` over GF(2).
    """

    n: int
    rank: int
    pivot_cols: np.ndarray
    info_cols: np.ndarray
    parity_map: np.ndarray
    m: int = 0

    @property
    def k(self) -> int:
        return self.n - self.rank

    @property
    def rate(self) -> float:
        return self.k / self.n

    @property
    def rank_deficiency(self) -> int:
        return self.m - self.rank

    @property
    def column_permutation(self) -> np.ndarray:
        return np.concatenate([self.pivot_cols, self.info_cols])


def _pack_rows(H: np.ndarray) -> np.ndarray:
    m, n = H.shape
    words = (n + 63) // 64
    padded = np.zeros((m, words * 64), dtype=np.uint8)
    padded[:, :n] = H
    return np.packbits(padded, axis=1, bitorder="little").view(np.uint64).copy()


def _unpack_rows(P: np.ndarray, n: int) -> np.ndarray:
    return np.unpackbits(P.view(np.uint8), axis=1, bitorder="little")[:, :n]


def to_systematic(H: ParityCheckMatrix | np.ndarray) -> SystematicEncoder:
    """GF(2) Gauss-Jordan elimination with column pivoting on bit-packed rows."""
    dense = H.to_dense() if isinstance(H, ParityCheckMatrix) else (np.asarray(H) % 2).astype(np.uint8)
    m, n = dense.shape
    P = _pack_rows(dense)
    pivots = []
    r = 0
    for j in range(n):
        if r == m:
            break
        w, b = divmod(j, 64)
        col = (P[:, w] >> np.uint64(b)) & np.uint64(1)
        cand = np.flatnonzero(col[r:]) + r
        if cand.size == 0:
            continue
        p = cand[0]
        if p != r:
            P[[r, p]] = P[[p, r]]
            col[[r, p]] = col[[p, r]]
        hit = np.flatnonzero(col)
        hit = hit[hit != r]
        if hit.size:
            P[hit] ^= P[r]
        pivots.append(j)
        r += 1
    rank = len(pivots)
    R = _unpack_rows(P[:rank], n)
    pivot_cols = np.array(pivots, dtype=np.int64)
    info_mask = np.ones(n, dtype=bool)
    info_mask[pivot_cols] = False
    info_cols = np.flatnonzero(info_mask)
    parity_map = np.ascontiguousarray(R[:, info_cols])
    return SystematicEncoder(n, rank, pivot_cols, info_cols, parity_map, m)


def encode(enc: SystematicEncoder, u) -> np.ndarray:
    """Encode one message (1D) or a batch of messages (2D, one per row)."""
    u = np.asarray(u)
    single = u.ndim == 1
    U = np.atleast_2d(u).astype(np.uint8)
    if U.shape[1] != enc.k:
        raise CodeError(f"message length {U.shape[1]} != k = {enc.k}")
    out = np.zeros((U.shape[0], enc.n), dtype=np.uint8)
    out[:, enc.info_cols] = U
    if enc.rank:
        parity = (U.astype(np.int32) @ enc.parity_map.T.astype(np.int32)) & 1
        out[:, enc.pivot_cols] = parity
    return out[0] if single else out


def write_alist(H: ParityCheckMatrix, path: str | Path | None = None) -> str:
    """MacKay alist text: dims, max degrees, degree lists, 1-based neighbour lists."""
    vdeg = H.var_degrees()
    cdeg = H.check_degrees()
    var_nbrs = [[] for _ in range(H.n)]
    chk_nbrs = [[] for _ in range(H.m)]
    for c, v in zip(H.check_idx.tolist(), H.var_idx.tolist()):
        var_nbrs[v].append(c + 1)
        chk_nbrs[c].append(v + 1)
    dvmax, dcmax = int(vdeg.max(initial=0)), int(cdeg.max(initial=0))
    lines = [
        f"{H.n} {H.m}",
        f"{dvmax} {dcmax}",
        " ".join(map(str, vdeg)),
        " ".join(map(str, cdeg)),
    ]
    lines += [" ".join(map(str, nb + [0] * (dvmax - len(nb)))) for nb in var_nbrs]
    lines += [" ".join(map(str, nb + [0] * (dcmax - len(nb)))) for nb in chk_nbrs]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def read_alist(source: str | Path) -> ParityCheckMatrix:
    text = Path(source).read_text() if isinstance(source, Path) or "\n" not in str(source) else str(source)
    tokens = [list(map(int, ln.split())) for ln in text.splitlines() if ln.strip()]
    n, m = tokens[0]
    vdeg = tokens[2]
    cdeg = tokens[3]
    if len(vdeg) != n or len(cdeg) != m:
        raise CodeError("alist degree lists do not match dimensions")
    ci, vi = [], []
    for v in range(n):
        nb = [x for x in tokens[4 + v] if x]
        if len(nb) != vdeg[v]:
            raise CodeError(f"alist: variable {v + 1} degree mismatch")
        ci.extend(x - 1 for x in nb)
        vi.extend([v] * len(nb))
    H = ParityCheckMatrix(n, m, np.array(ci, dtype=np.int64), np.array(vi, dtype=np.int64))
    if len(tokens) >= 4 + n + m:
        for c in range(m):
            nb = sorted(x - 1 for x in tokens[4 + n + c] if x)
            got = H.var_idx[H.check_idx == c].tolist()
            if nb != got:
                raise CodeError(f"alist: check {c + 1} list inconsistent with variable lists")
    return H
