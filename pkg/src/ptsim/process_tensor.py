"""Process-tensor MPOs: container, combination, expansion, and file I/O.

A :class:`ProcessTensor` stores one :class:`~ptsim.tensor.MPOBlock` per
time step.  Block ``l`` maps the system's Liouville vector from before to
after the environment propagator of step ``l+1``; inner bonds carry the
environment's influence between steps, with trivial (dimension-1) bonds
at both ends.  Per-bond closure vectors contract the inner bond to the
environment trace so that the reduced system state can be read out at
intermediate times.

Two process tensors acting on the same system combine into one via

    (Q1 o Q2)^{(alpha, alpha')} = sum_{alpha''}
            Q1^{(alpha, alpha'')} kron Q2^{(alpha'', alpha')}

(``Q2`` acts first within the step).  ``stack`` forms the full product
bond and compresses afterwards; ``preselect_combine`` additionally drops
product-bond pairs whose factor singular values multiply below a
selection threshold before the product is ever formed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import (
    MPOBlock,
    compress_chain,
    stats,
)

__all__ = [
    "ProcessTensor", "stack", "preselect_combine",
    "expand_outer", "reduce_by_degeneracy", "expand_degenerate",
    "save_pt", "load_pt", "pt_file_names",
]

MAGIC = b"PTMPOBIN"
VERSION = 1


class ProcessTensor:
    """A PT-MPO over ``n`` time steps for a ``sysdim``-level system."""

    def __init__(self, sysdim: int, dt: float, blocks: list[MPOBlock],
                 closures: Optional[list[np.ndarray]] = None):
        self.sysdim = sysdim
        self.dt = float(dt)
        self.blocks = blocks
        if closures is None:
            closures = self.default_closures()
        self.closures = closures

    # -- construction -------------------------------------------------------
    @classmethod
    def trivial(cls, sysdim: int, dt: float, n: int) -> "ProcessTensor":
        """Identity PT: no environment at all."""
        ldim = sysdim * sysdim
        blocks = []
        for _ in range(n):
            blk = MPOBlock(ldim, 1, 1)
            for alpha in range(ldim):
                blk.entries[alpha * ldim + alpha] = np.ones((1, 1), dtype=complex)
            blocks.append(blk)
        return cls(sysdim, dt, blocks)

    def default_closures(self) -> list[np.ndarray]:
        out = [np.ones(1, dtype=complex)]
        for blk in self.blocks:
            out.append(np.ones(blk.dim_out, dtype=complex))
        return out

    def init_closures(self, trace_vec: np.ndarray):
        """Set generation-time closures from the environment trace vector.

        Must be called before any compression: every interior bond is
        expected to still be the raw environment Liouville space that
        ``trace_vec`` contracts.
        """
        closures = [np.ones(1, dtype=complex)]
        for blk in self.blocks[:-1]:
            if blk.dim_out != trace_vec.size:
                raise ValueError("closure init requires uncompressed bonds")
            closures.append(np.asarray(trace_vec, dtype=complex).copy())
        closures.append(np.ones(self.blocks[-1].dim_out, dtype=complex))
        self.closures = closures

    # -- basic properties ----------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.blocks)

    @property
    def ldim(self) -> int:
        return self.sysdim * self.sysdim

    def bond_dims(self) -> list[int]:
        return [self.blocks[0].dim_in] + [b.dim_out for b in self.blocks]

    def max_bond(self) -> int:
        return max(self.bond_dims())

    def copy(self) -> "ProcessTensor":
        return ProcessTensor(self.sysdim, self.dt,
                             [b.copy() for b in self.blocks],
                             [c.copy() for c in self.closures])

    def sliced(self, n: int) -> "ProcessTensor":
        """First ``n`` steps (shared matrices); keeps that bond's closure."""
        if n > self.n:
            raise ValueError(f"requested {n} steps from a {self.n}-step PT")
        return ProcessTensor(self.sysdim, self.dt, self.blocks[:n],
                             self.closures[:n + 1])

    # -- compression ----------------------------------------------------------
    def compress(self, eps_forward: float, eps_backward: float,
                 lo: int = 0, hi: Optional[int] = None,
                 record: Optional[list] = None):
        compress_chain(self.blocks, self.closures, eps_forward, eps_backward,
                       lo=lo, hi=hi, record=record, normalize=True)

    def outer_entry_counts(self) -> list[int]:
        return [len(b.entries) for b in self.blocks]


def _check_compatible(a: ProcessTensor, b: ProcessTensor):
    if a.sysdim != b.sysdim:
        raise ValueError(f"system dimensions differ: {a.sysdim} vs {b.sysdim}")
    if a.n != b.n:
        raise ValueError(f"step counts differ: {a.n} vs {b.n}")
    if not math.isclose(a.dt, b.dt, rel_tol=1e-12, abs_tol=0.0):
        raise ValueError(f"time steps differ: {a.dt} vs {b.dt}")


def _product_block(outer_blk: MPOBlock, inner_blk: MPOBlock, ldim: int,
                   sel_out=None, sel_in=None) -> MPOBlock:
    """Combine two blocks; optionally restrict product bonds to index pairs.

    ``sel_out``/``sel_in`` are (idx_outer, idx_inner) integer-array pairs
    selecting which kron-product bond components survive; ``None`` keeps
    the full product in kron order.
    """
    if sel_out is None:
        d_out = outer_blk.dim_out * inner_blk.dim_out
    else:
        d_out = len(sel_out[0])
    if sel_in is None:
        d_in = outer_blk.dim_in * inner_blk.dim_in
    else:
        d_in = len(sel_in[0])

    # group inner entries by their input index for the alpha'' contraction
    by_mid: dict[int, list] = {}
    for k2, m2 in inner_blk.entries.items():
        mid, a_in = inner_blk.decode(k2)
        by_mid.setdefault(mid, []).append((a_in, m2))

    out = MPOBlock(ldim, d_in, d_out)
    acc: dict[int, np.ndarray] = {}
    for k1, m1 in outer_blk.entries.items():
        a_out, mid = outer_blk.decode(k1)
        for a_in, m2 in by_mid.get(mid, ()):
            key = a_out * ldim + a_in
            if sel_out is None and sel_in is None:
                prod = np.kron(m1, m2)
            else:
                # restricted kron: C[p,q] = m1[ro[p], ri[q]] * m2[ro'[p], ri'[q]]
                ro = sel_out if sel_out is not None else _full_pairs(
                    outer_blk.dim_out, inner_blk.dim_out)
                ri = sel_in if sel_in is not None else _full_pairs(
                    outer_blk.dim_in, inner_blk.dim_in)
                prod = (m1[np.ix_(ro[0], ri[0])] * m2[np.ix_(ro[1], ri[1])])
            if key in acc:
                acc[key] += prod
            else:
                acc[key] = prod
    for key, mat in acc.items():
        if np.any(mat):
            out.entries[key] = mat
    return out


def _full_pairs(d1: int, d2: int):
    idx1 = np.repeat(np.arange(d1), d2)
    idx2 = np.tile(np.arange(d2), d1)
    return idx1, idx2


def stack(outer: ProcessTensor, inner: ProcessTensor,
          eps_forward: float = 0.0, eps_backward: float = 0.0,
          window: Optional[tuple] = None) -> ProcessTensor:
    """Full-product combination followed by a forward+backward sweep pair.

    ``window = (lo, hi)`` restricts both sweeps to that block range; the
    default sweeps the whole chain.
    """
    _check_compatible(outer, inner)
    ldim = outer.ldim
    blocks = []
    for bo, bi in zip(outer.blocks, inner.blocks):
        stats.record_product_bond(bo.dim_out * bi.dim_out)
        blocks.append(_product_block(bo, bi, ldim))
    closures = [np.kron(qo, qi) for qo, qi in zip(outer.closures, inner.closures)]
    pt = ProcessTensor(outer.sysdim, outer.dt, blocks, closures)
    if window is None:
        pt.compress(eps_forward, eps_backward)
    else:
        pt.compress(eps_forward, eps_backward, lo=window[0], hi=window[1])
    return pt


def preselect_combine(outer: ProcessTensor, inner: ProcessTensor,
                      eps_forward: float = 0.0, eps_backward: float = 0.0,
                      select_eps: float = 0.0) -> ProcessTensor:
    """Combination with SVD preselection of the product bonds.

    Both factors are first brought to canonical form (forward sweep, then
    a backward sweep that records every bond's singular values).  On each
    bond only product pairs with ``s_i * s_j >= select_eps * s_0 * s_0``
    are formed; ``select_eps = 0`` reproduces :func:`stack` exactly.
    Factors are consumed (compressed in place).
    """
    _check_compatible(outer, inner)
    ldim = outer.ldim
    n = outer.n

    sig_o: list = []
    sig_i: list = []
    outer.compress(eps_forward, eps_backward, record=sig_o)
    inner.compress(eps_forward, eps_backward, record=sig_i)
    sig_o = sig_o[::-1]   # backward sweep records bonds n-1 .. 1
    sig_i = sig_i[::-1]

    # choose surviving product pairs per interior bond
    selections: list = [None] * (n + 1)
    for b in range(1, n):
        so = sig_o[b - 1] if b - 1 < len(sig_o) else np.ones(1)
        si = sig_i[b - 1] if b - 1 < len(sig_i) else np.ones(1)
        if select_eps <= 0.0:
            selections[b] = _full_pairs(len(so), len(si))
            continue
        weight = np.outer(so, si)
        keep = weight >= select_eps * so[0] * si[0]
        keep[0, 0] = True
        io, ii = np.nonzero(keep)
        # kron ordering within the kept subset
        order = np.lexsort((ii, io))
        selections[b] = (io[order], ii[order])

    blocks = []
    closures = [np.ones(1, dtype=complex)]
    for l in range(n):
        sel_in = selections[l]
        sel_out = selections[l + 1]
        bo, bi = outer.blocks[l], inner.blocks[l]
        d_out = len(sel_out[0]) if sel_out is not None else bo.dim_out * bi.dim_out
        stats.record_product_bond(d_out)
        blocks.append(_product_block(bo, bi, ldim, sel_out=sel_out, sel_in=sel_in))
        qo, qi = outer.closures[l + 1], inner.closures[l + 1]
        if sel_out is None:
            closures.append(np.kron(qo, qi))
        else:
            closures.append(qo[sel_out[0]] * qi[sel_out[1]])
    pt = ProcessTensor(outer.sysdim, outer.dt, blocks, closures)
    pt.compress(eps_forward, eps_backward)
    return pt


# ---------------------------------------------------------------------------
# outer-bond manipulation

def expand_outer(pt: ProcessTensor, dim_left: int = 1, dim_right: int = 1) -> ProcessTensor:
    """Embed the PT into a larger system ``left (x) sys (x) right``.

    The added factors are spectators: every block entry is duplicated
    over identity index pairs of the new factors.  Inner bonds and
    closures are untouched.
    """
    d_old = pt.sysdim
    d_new = dim_left * d_old * dim_right
    ldim_new = d_new * d_new
    spectators = [(nl, ml, nr, mr)
                  for nl in range(dim_left) for ml in range(dim_left)
                  for nr in range(dim_right) for mr in range(dim_right)]

    def embed(nu, mu, nl, ml, nr, mr):
        row = (nl * d_old + nu) * dim_right + nr
        col = (ml * d_old + mu) * dim_right + mr
        return row * d_new + col

    blocks = []
    for blk in pt.blocks:
        nblk = MPOBlock(ldim_new, blk.dim_in, blk.dim_out)
        for key, mat in blk.entries.items():
            a_out, a_in = blk.decode(key)
            nu, mu = divmod(a_out, d_old)
            nup, mup = divmod(a_in, d_old)
            for nl, ml, nr, mr in spectators:
                new_out = embed(nu, mu, nl, ml, nr, mr)
                new_in = embed(nup, mup, nl, ml, nr, mr)
                nblk.entries[new_out * ldim_new + new_in] = mat
        blocks.append(nblk)
    return ProcessTensor(d_new, pt.dt, blocks, [c.copy() for c in pt.closures])


def reduce_by_degeneracy(coupling: np.ndarray, tol: float = 1e-9):
    """Diagonalize a Hermitian coupling operator and group degenerate levels.

    Returns ``(v, labels, values)``: unitary ``v`` (columns are
    eigenvectors, eigenvalues ascending), an integer group label per
    basis state, and the representative eigenvalue per group.  Grouping
    uses an absolute tolerance of ``tol * max|eigenvalue|``.
    """
    coupling = np.asarray(coupling, dtype=complex)
    if np.abs(coupling - coupling.conj().T).max() > 1e-10:
        raise ValueError("coupling operator must be Hermitian")
    w, v = np.linalg.eigh(coupling)
    scale = np.abs(w).max()
    labels = np.zeros(len(w), dtype=int)
    values = [w[0]]
    for i in range(1, len(w)):
        if scale > 0 and abs(w[i] - values[-1]) <= tol * scale:
            labels[i] = labels[i - 1]
        elif scale == 0.0:
            labels[i] = 0
        else:
            labels[i] = labels[i - 1] + 1
            values.append(w[i])
    # representative value: mean over each group
    values = np.array([w[labels == g].mean() for g in range(labels.max() + 1)])
    return v, labels, values


def expand_degenerate(pt: ProcessTensor, v: np.ndarray, labels: np.ndarray) -> ProcessTensor:
    """Expand a group-label PT back to the full system and original frame.

    ``pt`` is diagonal in its outer index over ``G`` group labels; the
    result acts on the ``D``-level system with ``D = len(labels)``, with
    blocks ``Q^{(A,A')} = sum_gamma W_gamma[A,A'] B^gamma`` where
    ``W_gamma = P_gamma P_gamma^dag`` and ``P_gamma`` collects the columns
    of ``v kron conj(v)`` belonging to the group pair ``gamma``.
    """
    n_groups = pt.sysdim
    dim = len(labels)
    ldim = dim * dim
    u_l = np.kron(v, v.conj())
    # column alpha'' of u_l belongs to group pair (labels[nu], labels[mu])
    pair_labels = np.array([labels[a // dim] * n_groups + labels[a % dim]
                            for a in range(ldim)])
    weights = {}
    for gamma in range(n_groups * n_groups):
        cols = np.nonzero(pair_labels == gamma)[0]
        if cols.size == 0:
            continue
        w = u_l[:, cols] @ u_l[:, cols].conj().T
        w[np.abs(w) < 1e-14] = 0.0
        weights[gamma] = w

    blocks = []
    for blk in pt.blocks:
        nblk = MPOBlock(ldim, blk.dim_in, blk.dim_out)
        acc: dict[int, np.ndarray] = {}
        for key, mat in blk.entries.items():
            gamma_out, gamma_in = blk.decode(key)
            if gamma_out != gamma_in:
                raise ValueError("group-label PT must be outer-diagonal")
            w = weights.get(gamma_out)
            if w is None:
                continue
            rows, cols = np.nonzero(w)
            for a_out, a_in in zip(rows, cols):
                nkey = a_out * ldim + a_in
                term = w[a_out, a_in] * mat
                if nkey in acc:
                    acc[nkey] += term
                else:
                    acc[nkey] = term.copy()
        nblk.entries = {k: m for k, m in acc.items() if np.any(m)}
        blocks.append(nblk)
    return ProcessTensor(dim, pt.dt, blocks, [c.copy() for c in pt.closures])


# ---------------------------------------------------------------------------
# file format (little-endian)
#
#   header:  8s magic | u32 version | u32 sysdim | u64 n | f64 dt | u32 B
#   block:   u32 n_entries
#            n_entries * ( u32 key | u32 rows | u32 cols | c128 data )
#            u32 closure_len | c128 closure
#
# Blocks are split into files of B blocks: base, base_1, base_2, ...

_HEADER = struct.Struct("<8sIIQdI")


def pt_file_names(base: str, n: int, blocksize: int) -> list[str]:
    n_files = max(1, math.ceil(n / blocksize)) if blocksize else 1
    return [base if i == 0 else f"{base}_{i}" for i in range(n_files)]


def save_pt(pt: ProcessTensor, base: str, blocksize: Optional[int] = None) -> list[str]:
    """Write the PT to one or more files; returns the file names written."""
    n = pt.n
    bsize = blocksize if blocksize else n
    if bsize <= 0:
        raise ValueError("blocksize must be positive")
    names = pt_file_names(base, n, bsize)
    header = _HEADER.pack(MAGIC, VERSION, pt.sysdim, n, pt.dt, bsize)
    for i, name in enumerate(names):
        with open(name, "wb") as fh:
            fh.write(header)
            for l in range(i * bsize, min((i + 1) * bsize, n)):
                blk = pt.blocks[l]
                fh.write(struct.pack("<I", len(blk.entries)))
                for key in sorted(blk.entries):
                    mat = blk.entries[key]
                    fh.write(struct.pack("<III", key, mat.shape[0], mat.shape[1]))
                    fh.write(np.ascontiguousarray(mat, dtype="<c16").tobytes())
                closure = pt.closures[l + 1]
                fh.write(struct.pack("<I", closure.size))
                fh.write(np.ascontiguousarray(closure, dtype="<c16").tobytes())
    return names


def _read_exact(fh, count: int) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise ValueError("unexpected end of PT file")
    return buf


def load_pt(base: str) -> ProcessTensor:
    """Read a PT written by :func:`save_pt` (single or multi-file)."""
    with open(base, "rb") as fh:
        magic, version, sysdim, n, dt, bsize = _HEADER.unpack(_read_exact(fh, _HEADER.size))
    if magic != MAGIC:
        raise ValueError(f"{base}: not a PT file")
    if version != VERSION:
        raise ValueError(f"{base}: unsupported PT format version {version}")
    names = pt_file_names(base, n, bsize)

    blocks: list[MPOBlock] = []
    closures = [np.ones(1, dtype=complex)]
    ldim = sysdim * sysdim
    prev_out = 1
    for name in names:
        with open(name, "rb") as fh:
            hdr = _HEADER.unpack(_read_exact(fh, _HEADER.size))
            if hdr[0] != MAGIC or hdr[2] != sysdim or hdr[3] != n:
                raise ValueError(f"{name}: inconsistent PT segment header")
            while len(blocks) < min(n, (names.index(name) + 1) * (bsize or n)):
                raw = fh.read(4)
                if not raw:
                    break
                (n_entries,) = struct.unpack("<I", raw)
                entries = {}
                dim_out = prev_out
                for _ in range(n_entries):
                    key, rows, cols = struct.unpack("<III", _read_exact(fh, 12))
                    data = np.frombuffer(_read_exact(fh, 16 * rows * cols),
                                         dtype="<c16").reshape(rows, cols).copy()
                    entries[key] = data
                    dim_in = cols
                    dim_out = rows
                (clen,) = struct.unpack("<I", _read_exact(fh, 4))
                closure = np.frombuffer(_read_exact(fh, 16 * clen), dtype="<c16").copy()
                blk = MPOBlock(ldim, prev_out, dim_out if n_entries else clen, entries)
                if n_entries:
                    blk.dim_in = next(iter(entries.values())).shape[1]
                blocks.append(blk)
                closures.append(closure)
                prev_out = blk.dim_out
    if len(blocks) != n:
        raise ValueError(f"{base}: expected {n} blocks, found {len(blocks)}")
    return ProcessTensor(sysdim, dt, blocks, closures)
