import numpy as np
import pytest
import scipy.sparse as sp

from skmor.systems import (
    AffineOperator,
    AffineVector,
    FactorizationError,
    InnerProduct,
    ParameterDomain,
    load_bundle,
    save_bundle,
)

from conftest import make_desk_system, tridiag


def test_domain_sampling_seeded():
    dom = ParameterDomain([0.0, -1.0], [1.0, 1.0])
    a = dom.sample(5, seed=3)
    b = dom.sample(5, seed=3)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (5, 2)
    assert all(dom.contains(mu) for mu in a)


def test_eval_operator_identity_and_cancellation():
    m = sp.eye(4).tocsr()
    op = AffineOperator([(m, "1")])
    assert (op(np.zeros(1)) - m).nnz == 0
    op2 = AffineOperator([(m, "1"), (m, "0 - 1")])
    assert abs(op2(np.zeros(1))).max() == 0.0


def test_eval_operator_matches_dense_oracle():
    rng = np.random.default_rng(11)
    m1 = sp.csr_matrix(rng.standard_normal((5, 5)))
    m2 = sp.csr_matrix(rng.standard_normal((5, 5)))
    op = AffineOperator([(m1, "mu[0]"), (m2, "sin(mu[1])")])
    mu = np.array([0.37, 1.2])
    dense = mu[0] * m1.toarray() + np.sin(mu[1]) * m2.toarray()
    np.testing.assert_allclose(op(mu).toarray(), dense, atol=1e-14)


def test_eval_operator_linearity_in_coefficients():
    sysm = make_desk_system()
    mu = np.array([0.5, 0.3])
    x = np.random.default_rng(0).standard_normal(sysm.n)
    expr_vals = sysm.A.coefficients(mu)
    direct = sum(v * (m @ x) for v, m in zip(expr_vals, sysm.A.matrices))
    np.testing.assert_allclose(sysm.A(mu) @ x, direct, rtol=1e-14)
    np.testing.assert_allclose(
        sum(2 * v * (m @ x) for v, m in zip(expr_vals, sysm.A.matrices)),
        2 * direct,
        rtol=1e-14,
    )


def test_nonfinite_coefficient_raises():
    op = AffineOperator([(sp.eye(3), "1/mu[0]")])
    with pytest.raises(ValueError, match="non-finite"):
        op(np.zeros(1))


def test_residual_on_truth_is_zero(desk_system):
    mu = np.array([0.8, 0.2])
    u = desk_system.truth_solve(mu)
    r = desk_system.residual(u, mu)
    scale = desk_system.ip.dual_norm(desk_system.b(mu))
    assert desk_system.ip.dual_norm(r) <= 1e-10 * scale


def test_residual_zero_state(desk_system):
    mu = np.array([0.8, 0.2])
    np.testing.assert_allclose(desk_system.residual(np.zeros(desk_system.n), mu),
                               desk_system.b(mu))


def test_residual_matches_dense_oracle():
    sysm = make_desk_system(n=8)
    rng = np.random.default_rng(5)
    x = rng.standard_normal(8)
    mu = np.array([0.6, 0.9])
    expected = sysm.b(mu) - sysm.A(mu).toarray() @ x
    np.testing.assert_allclose(sysm.residual(x, mu), expected, atol=1e-13)


def test_dual_norm_riesz_identity(desk_system):
    ip = desk_system.ip
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = rng.standard_normal(desk_system.n)
        assert ip.dual_norm(ip.apply(x)) == pytest.approx(ip.norm(x), rel=1e-10)
    assert ip.dual_norm(np.zeros(desk_system.n)) == 0.0


def test_dual_norm_diagonal_closed_form():
    d = np.array([2.0, 5.0, 0.5, 8.0])
    ip = InnerProduct(sp.diags(d))
    y = np.array([1.0, -2.0, 3.0, 0.25])
    expected = np.sqrt(np.sum(np.abs(y) ** 2 / d))
    assert ip.dual_norm(y) == pytest.approx(expected, rel=1e-13)


def test_factor_probe_matches_metric():
    R = tridiag(50, -0.3, 1.5, -0.3).tocsr()
    ip = InnerProduct(R)  # construction runs the probe
    rng = np.random.default_rng(2)
    x = rng.standard_normal(50)
    assert np.linalg.norm(ip.apply_factor(x)) ** 2 == pytest.approx(
        float(x @ (R @ x)), rel=1e-12
    )


def test_complex_hermitian_metric():
    n = 20
    rng = np.random.default_rng(3)
    base = tridiag(n, -0.4, 2.0, -0.4).astype(complex)
    skew = sp.diags(1j * 0.2 * rng.standard_normal(n - 1), -1)
    R = (base + skew + (base + skew).conj().T) * 0.5 + sp.eye(n)
    ip = InnerProduct(R.tocsr())
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    assert np.linalg.norm(ip.apply_factor(x)) ** 2 == pytest.approx(
        float(np.real(np.conj(x) @ (R @ x))), rel=1e-12
    )


def test_indefinite_metric_rejected():
    R = sp.diags([1.0, -1.0, 2.0])
    with pytest.raises(FactorizationError):
        InnerProduct(R)


def test_truth_solve_identity_and_diagonal():
    b_vec = np.array([1.0, 2.0, 3.0])
    one = AffineOperator([(sp.eye(3), "1")])
    sysm_args = dict(
        b=AffineVector([(b_vec, "1")]),
        ip=InnerProduct(sp.eye(3)),
        domain=ParameterDomain([0.0], [1.0]),
    )
    from skmor.systems import AffineParametricSystem

    sysm = AffineParametricSystem(A=one, **sysm_args)
    np.testing.assert_allclose(sysm.truth_solve(np.zeros(1)), b_vec)
    diag = AffineOperator([(sp.diags([2.0, 4.0, 8.0]), "1")])
    sysm2 = AffineParametricSystem(A=diag, **sysm_args)
    np.testing.assert_allclose(sysm2.truth_solve(np.zeros(1)), b_vec / np.array([2.0, 4.0, 8.0]))


def test_truth_solve_residual_certified():
    sysm = make_desk_system(n=50, seed=9)
    mu = np.array([1.3, 0.7])
    u = sysm.truth_solve(mu)
    rel = sysm.ip.dual_norm(sysm.residual(u, mu)) / sysm.ip.dual_norm(sysm.b(mu))
    assert rel <= 1e-10


def test_spectral_bounds_metric_operator():
    R = tridiag(12, -0.5, 2.0, -0.5).tocsr()
    ip = InnerProduct(R)
    A = AffineOperator([(R, "1"), (R, "mu[0]")])
    from skmor.systems import AffineParametricSystem

    sysm = AffineParametricSystem(
        A=A,
        b=AffineVector([(np.ones(12), "1")]),
        ip=ip,
        domain=ParameterDomain([0.0], [3.0]),
    )
    lo, hi = sysm.spectral_bounds(np.array([0.0]))
    assert lo == pytest.approx(1.0, rel=1e-10)
    assert hi == pytest.approx(1.0, rel=1e-10)
    lo2, hi2 = sysm.spectral_bounds(np.array([1.0]))
    assert lo2 == pytest.approx(2.0, rel=1e-10)
    assert hi2 == pytest.approx(2.0, rel=1e-10)


def test_spectral_bounds_matches_dense_svd():
    sysm = make_desk_system(n=30, seed=4)
    mu = np.array([0.9, 0.1])
    lo, hi = sysm.spectral_bounds(mu)
    import scipy.linalg

    Qd = sysm.ip.Q.toarray()
    M = np.linalg.solve(Qd.T, sysm.A(mu).toarray() @ np.linalg.inv(Qd))
    svals = scipy.linalg.svdvals(M)
    assert lo == pytest.approx(svals[-1], rel=1e-10)
    assert hi == pytest.approx(svals[0], rel=1e-10)


def test_spectral_bounds_sandwich():
    sysm = make_desk_system(n=25, seed=6)
    mu = np.array([0.7, 0.5])
    lo, hi = sysm.spectral_bounds(mu)
    A = sysm.A(mu)
    rng = np.random.default_rng(8)
    for _ in range(100):
        x = rng.standard_normal(sysm.n)
        ratio = sysm.ip.dual_norm(A @ x) / sysm.ip.norm(x)
        assert lo - 1e-9 <= ratio <= hi + 1e-9


def test_spectral_bounds_dense_limit():
    sysm = make_desk_system(n=40)
    with pytest.raises(ValueError, match="dense oracle limit"):
        sysm.spectral_bounds(np.array([0.5, 0.5]), dense_limit=10)


def test_bundle_roundtrip(tmp_path, desk_complex_system):
    save_bundle(desk_complex_system, tmp_path / "bundle")
    loaded = load_bundle(tmp_path / "bundle")
    mu = np.array([0.9, 0.4])
    np.testing.assert_allclose(
        loaded.A(mu).toarray(), desk_complex_system.A(mu).toarray(), atol=1e-14
    )
    np.testing.assert_allclose(loaded.b(mu), desk_complex_system.b(mu), atol=1e-14)
    np.testing.assert_allclose(loaded.l(mu), desk_complex_system.l(mu), atol=1e-14)
    np.testing.assert_allclose(
        loaded.truth_solve(mu), desk_complex_system.truth_solve(mu), rtol=1e-10
    )
    assert loaded.field == "complex"
    assert loaded.domain.dim == 2
