import numpy as np
import pytest
import scipy.sparse as sp

from skmor.systems import (
    AffineOperator,
    AffineParametricSystem,
    AffineVector,
    InnerProduct,
    ParameterDomain,
)


def tridiag(n, lo, main, hi):
    return sp.diags([np.full(n - 1, lo), np.full(n, main), np.full(n - 1, hi)], [-1, 0, 1])


def make_desk_system(n=30, seed=0, complex_field=False, m_b=2):
    """Small well-conditioned affine system used across the test suite."""
    rng = np.random.default_rng(seed)
    base = tridiag(n, -1.0, 2.4, -1.0).tocsr()
    bump = sp.diags(rng.uniform(0.2, 1.0, n)).tocsr()
    terms = [(base, "1"), (bump, "mu[0]")]
    if complex_field:
        damp = sp.diags(rng.uniform(0.1, 0.4, n)).tocsr()
        terms.append((damp, "j*mu[1]"))
    A = AffineOperator(terms)
    b_terms = [(rng.standard_normal(n), "1")]
    if m_b > 1:
        b_terms.append((rng.standard_normal(n), "cos(mu[1])"))
    b = AffineVector(b_terms)
    l = AffineVector([(rng.standard_normal(n), "1"), (rng.standard_normal(n), "mu[0]")])
    R = tridiag(n, -0.4, 1.7, -0.4).tocsr()
    ip = InnerProduct(R)
    domain = ParameterDomain([0.2, 0.0], [2.0, 1.0])
    return AffineParametricSystem(
        A=A, b=b, ip=ip, l=l,
        field="complex" if complex_field else "real",
        domain=domain,
    )


@pytest.fixture
def desk_system():
    return make_desk_system()


@pytest.fixture
def desk_complex_system():
    return make_desk_system(complex_field=True)
