import numpy as np
import pytest
import scipy.sparse as sp

from skmor.embeddings import (
    L2Embedding,
    MetricEmbedding,
    StackedEmbedding,
    embedding_distortion,
    fwht,
    hadamard_matrix,
    l2_embedding,
    metric_embedding,
    oblivious_size,
    orthonormalize,
    padded_size,
)
from skmor.systems import InnerProduct

from conftest import tridiag


@pytest.mark.parametrize("n", [2, 4, 8, 16, 32, 64])
def test_fwht_matches_dense_hadamard(n):
    H = hadamard_matrix(n)
    X = np.eye(n)
    got = fwht(X.copy())
    np.testing.assert_allclose(got, H, atol=1e-12)
    rng = np.random.default_rng(n)
    v = rng.standard_normal((n, 3))
    np.testing.assert_allclose(fwht(v.copy()), H @ v, atol=1e-12)


@pytest.mark.parametrize("n,k", [(8, 8), (8, 3), (5, 4), (1000, 64)])
def test_srht_equals_dense_pipeline(n, k):
    emb = l2_embedding("srht", k, n, seed=42)
    n_pad = padded_size(n)
    H = hadamard_matrix(n_pad)
    rng = np.random.default_rng(1)
    x = rng.standard_normal(n)
    padded = np.zeros(n_pad)
    padded[:n] = emb._signs * x
    dense = np.sqrt(n_pad / k) * (H @ padded / np.sqrt(n_pad))[emb._rows]
    np.testing.assert_allclose(emb.apply(x), dense, atol=1e-12)


def test_srht_full_transform_isometry():
    n = 37
    n_pad = padded_size(n)
    emb = l2_embedding("srht", n_pad, n, seed=0)
    rng = np.random.default_rng(2)
    X = rng.standard_normal((n, 5))
    S = emb.apply(X)
    np.testing.assert_allclose(
        np.linalg.norm(S, axis=0), np.linalg.norm(X, axis=0), rtol=1e-12
    )


def test_seeded_determinism():
    for kind in ("gaussian", "srht", "rowsample"):
        a = l2_embedding(kind, 7, 33, seed=123)
        b = l2_embedding(kind, 7, 33, seed=123)
        x = np.random.default_rng(0).standard_normal(33)
        np.testing.assert_array_equal(a.apply(x), b.apply(x))
        c = l2_embedding(kind, 7, 33, seed=124)
        assert not np.array_equal(a.apply(x), c.apply(x))


def test_gaussian_unbiased_norm():
    n = 64
    rng = np.random.default_rng(3)
    x = rng.standard_normal(n)
    acc = 0.0
    for s in range(200):
        emb = l2_embedding("gaussian", n, n, seed=s)
        acc += np.linalg.norm(emb.apply(x)) ** 2
    mean = acc / 200
    assert abs(mean - np.linalg.norm(x) ** 2) <= 0.05 * np.linalg.norm(x) ** 2


def test_apply_linearity_and_zero():
    emb = l2_embedding("srht", 9, 40, seed=7)
    rng = np.random.default_rng(4)
    x, y = rng.standard_normal(40), rng.standard_normal(40)
    np.testing.assert_allclose(
        emb.apply(x + y), emb.apply(x) + emb.apply(y), atol=1e-12
    )
    np.testing.assert_allclose(emb.apply(np.zeros(40)), 0.0, atol=1e-15)
    M = np.column_stack([x, np.zeros(40)])
    S = emb.apply(M)
    assert S.shape == (9, 2)
    np.testing.assert_allclose(S[:, 1], 0.0, atol=1e-15)


def test_apply_complex_componentwise():
    emb = l2_embedding("gaussian", 11, 20, seed=5)
    rng = np.random.default_rng(6)
    z = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    np.testing.assert_allclose(
        emb.apply(z), emb.apply(z.real) + 1j * emb.apply(z.imag), atol=1e-12
    )


def test_dimension_errors():
    with pytest.raises(ValueError, match="padded size"):
        l2_embedding("srht", 9, 8, seed=0)
    with pytest.raises(ValueError, match="exceeds"):
        l2_embedding("rowsample", 9, 8, seed=0)
    emb = l2_embedding("gaussian", 4, 8, seed=0)
    with pytest.raises(ValueError, match="rows"):
        emb.apply(np.zeros(9))
    with pytest.raises(ValueError, match="unknown embedding kind"):
        l2_embedding("countsketch", 4, 8, seed=0)


def test_rowsample_expectation_scale():
    emb = l2_embedding("rowsample", 5, 10, seed=1)
    M = emb.matrix()
    np.testing.assert_allclose(M @ M.T, (10 / 5) * np.eye(5), atol=1e-12)


def test_metric_embedding_dual_sketch():
    R = tridiag(25, -0.3, 1.4, -0.3).tocsr()
    ip = InnerProduct(R)
    emb = metric_embedding("gaussian", 10, ip, seed=3)
    rng = np.random.default_rng(7)
    x = rng.standard_normal(25)
    # y = R x makes the metric-inverse cancel
    np.testing.assert_allclose(
        emb.sketch_dual(R @ x), emb.apply(x), rtol=1e-10, atol=1e-12
    )
    np.testing.assert_allclose(emb.sketch_dual(np.zeros(25)), 0.0, atol=1e-14)


def test_metric_dual_sketch_diagonal_closed_form():
    d = np.array([2.0, 4.0, 8.0, 16.0])
    ip = InnerProduct(sp.diags(d))
    emb = metric_embedding("gaussian", 3, ip, seed=9)
    y = np.array([1.0, -1.0, 2.0, 0.5])
    np.testing.assert_allclose(emb.sketch_dual(y), emb.apply(y / d), rtol=1e-12)


def test_oblivious_size_reported_values():
    # sizes reported for the large-scale setup that motivated the defaults
    assert oblivious_size("gaussian", 0.6, 1e-6, 151) == 45700
    assert oblivious_size("srht", 0.6, 1e-6, 151, n=400000) == 102900


def test_oblivious_size_scaling_law():
    k1 = oblivious_size("gaussian", 0.4, 1e-3, 10)
    k2 = oblivious_size("gaussian", 0.2, 1e-3, 10)
    assert k2 / k1 == pytest.approx(4.0, rel=1e-3)


def test_oblivious_size_validation():
    with pytest.raises(ValueError):
        oblivious_size("gaussian", 1.5, 0.1, 3)
    with pytest.raises(ValueError, match="ambient dimension"):
        oblivious_size("srht", 0.5, 0.1, 3)


def test_orthonormalize_rank_deficient():
    V = np.ones((10, 2))
    with pytest.raises(np.linalg.LinAlgError):
        orthonormalize(V)


def test_distortion_exact_isometry():
    n = 32
    ip = InnerProduct(tridiag(n, -0.2, 1.1, -0.2).tocsr())
    emb = MetricEmbedding(l2_embedding("rowsample", n, n, seed=0), ip)
    rng = np.random.default_rng(8)
    V = rng.standard_normal((n, 4))
    assert embedding_distortion(emb, V) <= 1e-12


def test_distortion_zero_map_is_one():
    class _Zero:
        def apply(self, M):
            M = np.asarray(M)
            return np.zeros((3, M.shape[1])) if M.ndim == 2 else np.zeros(3)

    V = np.random.default_rng(0).standard_normal((10, 2))
    assert embedding_distortion(_Zero(), V) == pytest.approx(1.0)


def test_distortion_gaussian_concentrates():
    # k = 8d: measured frequency of a strict embedding (distortion < 1) is
    # 97/100 on these seeds; 4d oversampling is not enough (54/100)
    n, d = 1024, 10
    ip = InnerProduct(sp.eye(n).tocsr())
    rng = np.random.default_rng(10)
    V = rng.standard_normal((n, d))
    ok = 0
    for s in range(100):
        emb = metric_embedding("gaussian", 8 * d, ip, seed=s)
        if embedding_distortion(emb, V) < 1.0:
            ok += 1
    assert ok >= 95


def test_distortion_norm_sandwich():
    n, d = 128, 3
    ip = InnerProduct(tridiag(n, -0.3, 1.5, -0.3).tocsr())
    rng = np.random.default_rng(11)
    V = rng.standard_normal((n, d))
    emb = metric_embedding("gaussian", 24, ip, seed=5)
    omega = embedding_distortion(emb, V)
    for _ in range(100):
        x = V @ rng.standard_normal(d)
        true = ip.norm(x) ** 2
        sk = np.linalg.norm(emb.apply(x)) ** 2
        assert (1 - omega) * true - 1e-9 <= sk <= (1 + omega) * true + 1e-9


def test_embedding_size_concentration_sanity():
    # with the a priori size, the measured distortion meets the target in
    # at least 95 of 100 seeded trials
    n, d, eps = 1024, 3, 0.6
    k = oblivious_size("gaussian", eps, 0.01, d)
    assert k <= n
    ip = InnerProduct(sp.eye(n).tocsr())
    rng = np.random.default_rng(12)
    V = rng.standard_normal((n, d))
    hits = sum(
        embedding_distortion(metric_embedding("gaussian", k, ip, seed=s), V) <= eps
        for s in range(100)
    )
    assert hits >= 95


def test_stacked_embedding_rows():
    a = l2_embedding("gaussian", 3, 16, seed=1)
    b = l2_embedding("gaussian", 5, 16, seed=2)
    st = StackedEmbedding([(a, 0.5), (b, 2.0)])
    x = np.random.default_rng(0).standard_normal(16)
    np.testing.assert_allclose(
        st.apply(x), np.concatenate([0.5 * a.apply(x), 2.0 * b.apply(x)]), atol=1e-14
    )
    assert st.k == 8
