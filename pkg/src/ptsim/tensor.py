"""Dense complex linear algebra and MPO block sweeps.

The matrix-product operators handled here are chains of :class:`MPOBlock`
objects.  Each block carries a sparse map from an *outer* index pair
``(alpha, alpha')`` — output and input Liouville indices of the system —
to a complex matrix acting between *inner* bond spaces::

    entry[(alpha, alpha')]  :  (dim_out, dim_in)

Compression works by truncated SVDs swept along the chain.  A forward
sweep (towards later times) leaves every visited block an isometry over
its stacked ``(outer, in)`` rows; a backward sweep leaves stacked
``(outer, out)`` columns orthonormal.  The retained ``diag(s)`` factor
always moves with the sweep direction.

Each chain may carry per-bond closure vectors (the environment-trace
representation used to read out intermediate-time states).  Sweeps
co-transform them: forward moves apply ``q <- (s Vh) q``, backward moves
apply the pseudo-inverse ``q <- diag(1/s) U^H q`` on the retained
singular values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la

__all__ = [
    "stats", "svd_truncate", "MPOBlock",
    "forward_sweep", "backward_sweep", "compress_chain", "chain_to_dense",
]

#: Relative singular-value floor used inside sweeps.  Keeps the backward
#: closure pseudo-inverse bounded by discarding machine-noise directions
#: even at threshold 0; anything at or above the floor is exact to
#: working precision.
SWEEP_FLOOR = 1e-14


class _Stats:
    """Cheap global instrumentation (SVD calls, combination bond peaks)."""

    def __init__(self):
        self.reset()

    def reset(self):
        self.svd_calls = 0
        self.peak_product_bond = 0

    def record_product_bond(self, dim: int):
        if dim > self.peak_product_bond:
            self.peak_product_bond = dim


stats = _Stats()


def _svd(a: np.ndarray):
    stats.svd_calls += 1
    try:
        return la.svd(a, full_matrices=False, lapack_driver="gesdd")
    except la.LinAlgError:
        # gesdd occasionally fails to converge; gesvd is slower but robust
        return la.svd(a, full_matrices=False, lapack_driver="gesvd")


def svd_truncate(a: np.ndarray, eps: float, floor: float = 0.0):
    """Economy SVD of ``a`` keeping singular values ``s_k >= eps * s_0``.

    The comparison is inclusive, so exact ties at the threshold are kept.
    ``eps = 0`` keeps the full rank.  A zero matrix yields rank 0.

    Returns ``(u, s, vh)`` with ``u (m, r)``, ``s (r,)``, ``vh (r, n)``.
    """
    u, s, vh = _svd(np.ascontiguousarray(a))
    if s.size == 0 or s[0] == 0.0:
        return u[:, :0], s[:0], vh[:0]
    cutoff = max(eps, floor) * s[0]
    rank = int(np.count_nonzero(s >= cutoff))
    rank = max(rank, 0)
    return u[:, :rank], s[:rank], vh[:rank]


@dataclass
class MPOBlock:
    """One time step of a PT-MPO: sparse outer map to inner-bond matrices.

    ``ldim`` is the Liouville dimension of the outer indices (``D**2`` for
    a D-level system); keys encode ``alpha * ldim + alpha_in``.
    """

    ldim: int
    dim_in: int
    dim_out: int
    entries: dict = field(default_factory=dict)

    def key(self, alpha_out: int, alpha_in: int) -> int:
        return alpha_out * self.ldim + alpha_in

    def set(self, alpha_out: int, alpha_in: int, mat: np.ndarray):
        if np.any(mat):
            self.entries[self.key(alpha_out, alpha_in)] = np.asarray(mat, dtype=complex)

    def get(self, alpha_out: int, alpha_in: int) -> Optional[np.ndarray]:
        return self.entries.get(self.key(alpha_out, alpha_in))

    def decode(self, key: int) -> tuple[int, int]:
        return divmod(key, self.ldim)

    def copy(self) -> "MPOBlock":
        return MPOBlock(self.ldim, self.dim_in, self.dim_out,
                        {k: v.copy() for k, v in self.entries.items()})

    def prune_zeros(self):
        """Drop exactly-zero matrices (single non-zero representation)."""
        dead = [k for k, v in self.entries.items() if not np.any(v)]
        for k in dead:
            del self.entries[k]


def _zero_like(blocks: list[MPOBlock], l: int):
    """Collapse block ``l`` (and the bond after it) to an explicit zero."""
    blocks[l].entries = {}
    blocks[l].dim_out = 1
    if l + 1 < len(blocks):
        nxt = blocks[l + 1]
        nxt.entries = {}
        nxt.dim_in = 1


def _rebalance(blocks: list[MPOBlock], closures: Optional[list],
               removed: dict, lo: int, hi: int, cum_includes_bond: bool):
    """Distribute scale removed during a sweep evenly over ``blocks[lo:hi]``.

    ``removed`` maps bond index to the log of the positive scalar divided
    out at that bond.  A sweep that removed scale leaves the contraction
    of the first ``b`` blocks with ``closures[b]`` short by the removed
    prefix; multiplying every block by the geometric mean and the
    closures by (prefix / uniform-prefix) restores each of them exactly
    while keeping entries of order one.
    """
    if not removed:
        return
    total = sum(removed.values())
    m = hi - lo
    mu = total / m
    f = np.exp(mu)
    for l in range(lo, hi):
        blk = blocks[l]
        blk.entries = {k: v * f for k, v in blk.entries.items()}
    if closures is None:
        return
    cum = 0.0
    for b in range(lo + 1, hi):
        if cum_includes_bond:
            cum += removed.get(b, 0.0)
            closures[b] = closures[b] * np.exp(cum - (b - lo) * mu)
        else:
            closures[b] = closures[b] * np.exp(cum - (b - lo) * mu)
            cum += removed.get(b, 0.0)


def forward_sweep(blocks: list[MPOBlock], closures: Optional[list], eps: float,
                  lo: int = 0, hi: Optional[int] = None,
                  record: Optional[list] = None, normalize: bool = False):
    """Left-to-right truncation sweep over bonds ``lo+1 .. hi-1``.

    ``closures``, when given, is indexed by bond (length ``n + 1``) and is
    co-transformed in place.  ``record`` collects the kept singular values
    per visited bond.  ``normalize`` rescales the carried factor to unit
    leading singular value at every bond (redistributed afterwards), so
    long chains cannot overflow the floating-point range.
    """
    n = len(blocks)
    if hi is None:
        hi = n
    removed: dict = {}
    for l in range(lo, hi - 1):
        blk = blocks[l]
        keys = sorted(blk.entries)
        if not keys:
            _zero_like(blocks, l)
            if closures is not None:
                closures[l + 1] = np.zeros(1, dtype=complex)
            continue
        a = np.vstack([blk.entries[k].T for k in keys])
        u, s, vh = svd_truncate(a, eps, floor=SWEEP_FLOOR)
        r = len(s)
        if r == 0:
            _zero_like(blocks, l)
            if closures is not None:
                closures[l + 1] = np.zeros(1, dtype=complex)
            if record is not None:
                record.append(np.zeros(1))
            continue
        if normalize:
            removed[l + 1] = np.log(s[0])
            s = s / s[0]
        d_in = blk.dim_in
        new_entries = {}
        for idx, k in enumerate(keys):
            chunk = u[idx * d_in:(idx + 1) * d_in, :]
            if np.any(chunk):
                new_entries[k] = np.ascontiguousarray(chunk.T)
        blk.entries = new_entries
        blk.dim_out = r
        w = s[:, None] * vh                      # (r, old_out)
        wt = w.T
        nxt = blocks[l + 1]
        nxt.entries = {k: v @ wt for k, v in nxt.entries.items()}
        nxt.dim_in = r
        if closures is not None:
            closures[l + 1] = w @ closures[l + 1]
        if record is not None:
            record.append(s.copy())
    if normalize:
        _rebalance(blocks, closures, removed, lo, hi, cum_includes_bond=True)


def backward_sweep(blocks: list[MPOBlock], closures: Optional[list], eps: float,
                   lo: int = 0, hi: Optional[int] = None,
                   record: Optional[list] = None, normalize: bool = False):
    """Right-to-left truncation sweep over bonds ``hi-1 .. lo+1``."""
    n = len(blocks)
    if hi is None:
        hi = n
    removed: dict = {}
    for l in range(hi - 1, lo, -1):
        blk = blocks[l]
        keys = sorted(blk.entries)
        if not keys:
            _zero_like(blocks, l - 1)
            blk.dim_in = 1
            if closures is not None:
                closures[l] = np.zeros(1, dtype=complex)
            continue
        a = np.hstack([blk.entries[k].T for k in keys])   # (dim_in, count*dim_out)
        u, s, vh = svd_truncate(a, eps, floor=SWEEP_FLOOR)
        r = len(s)
        if r == 0:
            blk.entries = {}
            blk.dim_in = 1
            _zero_like(blocks, l - 1)
            if closures is not None:
                closures[l] = np.zeros(1, dtype=complex)
            if record is not None:
                record.append(np.zeros(1))
            continue
        if normalize:
            removed[l] = np.log(s[0])
            s = s / s[0]
        d_out = blk.dim_out
        new_entries = {}
        for idx, k in enumerate(keys):
            chunk = vh[:, idx * d_out:(idx + 1) * d_out]
            if np.any(chunk):
                new_entries[k] = np.ascontiguousarray(chunk.T)
        blk.entries = new_entries
        blk.dim_in = r
        w = u * s[None, :]                        # (old_in, r)
        wt = w.T
        prev = blocks[l - 1]
        prev.entries = {k: wt @ v for k, v in prev.entries.items()}
        prev.dim_out = r
        if closures is not None:
            closures[l] = (u.conj().T @ closures[l]) / s
        if record is not None:
            record.append(s.copy())
    if normalize:
        _rebalance(blocks, closures, removed, lo, hi, cum_includes_bond=False)


def compress_chain(blocks: list[MPOBlock], closures: Optional[list],
                   eps_forward: float, eps_backward: float,
                   lo: int = 0, hi: Optional[int] = None,
                   record: Optional[list] = None, normalize: bool = False):
    """One forward + backward sweep pair at the given thresholds."""
    forward_sweep(blocks, closures, eps_forward, lo, hi, normalize=normalize)
    backward_sweep(blocks, closures, eps_backward, lo, hi, record=record,
                   normalize=normalize)


def chain_to_dense(blocks: list[MPOBlock]) -> np.ndarray:
    """Contract a short chain to the dense multi-time tensor.

    Returns an array of shape ``(ldim**2,) * n`` indexed by the flattened
    outer pairs ``beta_n, ..., beta_1`` (slowest to fastest).  Only for
    testing/small chains: the result grows exponentially with ``n``.
    """
    n = len(blocks)
    ldim = blocks[0].ldim
    if blocks[0].dim_in != 1:
        raise ValueError("chain must start with a trivial bond")
    acc = np.ones((1, 1), dtype=complex)
    # acc[d, J]: bond state for every outer-history J
    for blk in blocks:
        cols = acc.shape[1]
        out = np.zeros((blk.dim_out, ldim * ldim, cols), dtype=complex)
        for k, mat in blk.entries.items():
            out[:, k, :] += mat @ acc
        acc = out.reshape(blk.dim_out, ldim * ldim * cols)
    if acc.shape[0] != 1:
        raise ValueError("chain must end with a trivial bond")
    return acc.reshape((ldim * ldim,) * n)
