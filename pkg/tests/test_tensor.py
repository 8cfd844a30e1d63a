"""Tests for truncated SVDs and MPO block sweeps."""

import numpy as np
import pytest

from ptsim.tensor import (
    MPOBlock,
    backward_sweep,
    chain_to_dense,
    compress_chain,
    forward_sweep,
    stats,
    svd_truncate,
)


def _random_matrix(rng, m, n):
    return rng.normal(size=(m, n)) + 1j * rng.normal(size=(m, n))


@pytest.mark.parametrize("shape", [(3, 5), (16, 16), (64, 48), (64, 64)])
def test_svd_unitarity_and_reconstruction(shape):
    rng = np.random.default_rng(42)
    a = _random_matrix(rng, *shape)
    u, s, vh = svd_truncate(a, 0.0)
    r = len(s)
    assert np.allclose(u.conj().T @ u, np.eye(r), atol=1e-12)
    assert np.allclose(vh @ vh.conj().T, np.eye(r), atol=1e-12)
    assert np.allclose(u @ (s[:, None] * vh), a, atol=1e-12 * s[0])


def test_svd_threshold_tie_inclusive():
    rng = np.random.default_rng(3)
    q1, _ = np.linalg.qr(_random_matrix(rng, 6, 6))
    q2, _ = np.linalg.qr(_random_matrix(rng, 6, 6))
    sigma = np.array([1.0, 0.5, 0.5, 0.25, 0.1, 0.01])
    a = q1 @ np.diag(sigma) @ q2.conj().T
    _, s, _ = svd_truncate(a, 0.5)
    assert len(s) == 3          # both 0.5 values retained on the tie
    _, s, _ = svd_truncate(a, 0.25)
    assert len(s) == 4


def test_svd_zero_matrix_rank0():
    _, s, _ = svd_truncate(np.zeros((4, 7), dtype=complex), 0.0)
    assert len(s) == 0


def test_svd_rank_monotone_in_eps():
    rng = np.random.default_rng(11)
    a = _random_matrix(rng, 20, 20)
    ranks = [len(svd_truncate(a, eps)[1]) for eps in (0.0, 1e-8, 1e-3, 0.1, 0.9)]
    assert ranks == sorted(ranks, reverse=True)


def test_svd_counter():
    stats.reset()
    svd_truncate(np.eye(3), 0.0)
    svd_truncate(np.eye(3), 0.0)
    assert stats.svd_calls == 2


# ---------------------------------------------------------------------------
# chains

def _random_chain(rng, n=5, ldim=4, chi=6, n_entries=6):
    """Random block chain with trivial edge bonds plus matching closures."""
    dims = [1] + [chi] * (n - 1) + [1]
    blocks = []
    for l in range(n):
        blk = MPOBlock(ldim, dims[l], dims[l + 1])
        keys = rng.choice(ldim * ldim, size=n_entries, replace=False)
        for k in keys:
            blk.entries[int(k)] = _random_matrix(rng, dims[l + 1], dims[l])
        blocks.append(blk)
    closures = [np.ones(1, dtype=complex)]
    for l in range(1, n):
        closures.append(_random_matrix(rng, dims[l], 1)[:, 0])
    closures.append(np.ones(1, dtype=complex))
    return blocks, closures


def _closure_samples(blocks, closures, paths):
    """Contract closure[l] with the partial chain for each (path, l)."""
    values = []
    for path in paths:
        v = np.ones(1, dtype=complex)
        for l, key in enumerate(path, start=1):
            mat = blocks[l - 1].entries.get(key)
            v = mat @ v if mat is not None else np.zeros(blocks[l - 1].dim_out,
                                                         dtype=complex)
            values.append(closures[l] @ v)
    return np.array(values)


def test_exact_sweep_preserves_chain_and_closures():
    rng = np.random.default_rng(5)
    blocks, closures = _random_chain(rng)
    keys = sorted(blocks[0].entries)
    paths = [[keys[i % len(keys)] for _ in range(4)] for i in range(3)]
    dense_before = chain_to_dense(blocks)
    samples_before = _closure_samples(blocks, closures, paths)

    compress_chain(blocks, closures, 0.0, 0.0)

    dense_after = chain_to_dense(blocks)
    scale = np.abs(dense_before).max()
    assert np.allclose(dense_before, dense_after, atol=1e-11 * scale)
    samples_after = _closure_samples(blocks, closures, paths)
    assert np.allclose(samples_before, samples_after,
                       atol=1e-10 * max(1.0, np.abs(samples_before).max()))


def test_forward_then_backward_individually():
    rng = np.random.default_rng(8)
    blocks, closures = _random_chain(rng, n=4, chi=5)
    dense_before = chain_to_dense(blocks)
    forward_sweep(blocks, closures, 0.0)
    backward_sweep(blocks, closures, 0.0)
    scale = np.abs(dense_before).max()
    assert np.allclose(dense_before, chain_to_dense(blocks), atol=1e-11 * scale)


def test_sweep_idempotence():
    rng = np.random.default_rng(21)
    blocks, closures = _random_chain(rng, n=6, chi=8)
    eps = 1e-2
    compress_chain(blocks, closures, eps, eps)
    dims1 = [b.dim_out for b in blocks]
    dense1 = chain_to_dense(blocks)
    compress_chain(blocks, closures, eps, eps)
    dims2 = [b.dim_out for b in blocks]
    assert all(d2 <= d1 for d1, d2 in zip(dims1, dims2))
    dense2 = chain_to_dense(blocks)
    scale = np.abs(dense1).max()
    assert np.allclose(dense1, dense2, atol=1e-10 * scale)


def test_truncation_reduces_rank_and_controls_error():
    rng = np.random.default_rng(30)
    blocks, closures = _random_chain(rng, n=5, chi=10, n_entries=4)
    dense_exact = chain_to_dense(blocks)
    ranks0 = [b.dim_out for b in blocks]
    compress_chain(blocks, closures, 1e-2, 1e-2)
    ranks1 = [b.dim_out for b in blocks]
    assert all(r1 <= r0 for r0, r1 in zip(ranks0, ranks1))
    scale = np.abs(dense_exact).max()
    # loose bound: a 1e-2 bond threshold should not destroy the tensor
    assert np.abs(dense_exact - chain_to_dense(blocks)).max() < 0.3 * scale


def test_window_sweep_touches_only_window():
    rng = np.random.default_rng(9)
    blocks, closures = _random_chain(rng, n=6, chi=5)
    before = [b.copy() for b in blocks]
    forward_sweep(blocks, closures, 0.0, lo=2, hi=5)
    # blocks outside [2, 5) untouched except block 5's dim_in may change via bond 5?
    for l in (0, 1):
        for k, v in before[l].entries.items():
            assert np.array_equal(v, blocks[l].entries[k])
    assert blocks[5].dim_in == before[5].dim_in  # bond 5 outside window
