"""Affine parameter-dependent systems, inner products and exact (truth) solves.

A system is ``A(mu) u(mu) = b(mu)`` with affine decompositions
``A(mu) = sum_i theta_i(mu) A_i`` (sparse terms) and similarly for the right
hand side and the optional output functional. The solution space carries the
inner product ``<x, y> = x^H R y`` defined by a Hermitian positive-definite
matrix ``R`` with factor ``Q`` such that ``Q^H Q = R``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .expressions import parse_coeff

__all__ = [
    "ParameterDomain",
    "AffineOperator",
    "AffineVector",
    "InnerProduct",
    "AffineParametricSystem",
    "save_bundle",
    "load_bundle",
]

DENSE_LIMIT = 4096  # gate for dense oracle computations


class FactorizationError(RuntimeError):
    """Raised when a sparse factorization fails or looks unusable."""


@dataclass(frozen=True)
class ParameterDomain:
    """A box of admissible parameter values with seeded uniform sampling."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower/upper bounds must be 1-D of equal length")
        if np.any(hi < lo):
            raise ValueError("upper bound below lower bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.shape[0]

    def contains(self, mu, rtol=1e-12):
        mu = np.asarray(mu, dtype=float)
        pad = rtol * np.maximum(1.0, np.abs(self.upper - self.lower))
        return bool(np.all(mu >= self.lower - pad) and np.all(mu <= self.upper + pad))

    def sample(self, count, seed):
        """Draw ``count`` uniform samples, reproducibly for a given seed."""
        rng = np.random.default_rng(seed)
        return self.lower + (self.upper - self.lower) * rng.random((count, self.dim))


class AffineOperator:
    """Sparse operator ``A(mu) = sum_i theta_i(mu) A_i``."""

    def __init__(self, terms):
        if not terms:
            raise ValueError("an affine operator needs at least one term")
        self.matrices = [sp.csr_matrix(m) for m, _ in terms]
        self.exprs = [parse_coeff(e) for _, e in terms]
        n = self.matrices[0].shape
        if n[0] != n[1]:
            raise ValueError("operator terms must be square")
        for m in self.matrices:
            if m.shape != n:
                raise ValueError("operator terms must share dimensions")
        self.n = n[0]

    @property
    def nterms(self):
        return len(self.matrices)

    def coefficients(self, mu):
        vals = np.array([e(mu) for e in self.exprs])
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite operator coefficient at mu={mu!r}")
        return vals

    def __call__(self, mu):
        vals = self.coefficients(mu)
        out = vals[0] * self.matrices[0]
        for v, m in zip(vals[1:], self.matrices[1:]):
            out = out + v * m
        return out.tocsr()


class AffineVector:
    """Dense vector ``v(mu) = sum_j theta_j(mu) v_j``; terms stored columnwise."""

    def __init__(self, terms):
        if not terms:
            raise ValueError("an affine vector needs at least one term")
        cols = [np.asarray(v).reshape(-1) for v, _ in terms]
        n = cols[0].shape[0]
        if any(c.shape[0] != n for c in cols):
            raise ValueError("vector terms must share length")
        self.columns = np.column_stack(cols)
        self.exprs = [parse_coeff(e) for _, e in terms]
        self.n = n

    @property
    def nterms(self):
        return self.columns.shape[1]

    def coefficients(self, mu):
        vals = np.array([e(mu) for e in self.exprs])
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite vector coefficient at mu={mu!r}")
        return vals

    def __call__(self, mu):
        return self.columns @ self.coefficients(mu)


def _spd_factor(R):
    """Sparse Cholesky-like factor Q with Q^H Q = R, via SuperLU.

    Uses a fill-reducing symmetric ordering with diagonal pivoting disabled,
    which for Hermitian positive-definite input yields ``Pr R Pc = L D L^H``
    and hence ``Q = sqrt(D) L^H Pr``.
    """
    lu = splu(
        R.tocsc(),
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options=dict(SymmetricMode=True),
    )
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise FactorizationError("factorization lost symmetry; is R Hermitian?")
    d = lu.U.diagonal()
    if np.any(d.real <= 0) or np.max(np.abs(d.imag), initial=0.0) > 1e-10 * np.max(d.real):
        raise FactorizationError("matrix is not positive definite")
    n = R.shape[0]
    perm = sp.csc_matrix(
        (np.ones(n), (lu.perm_r, np.arange(n))), shape=(n, n)
    )
    Q = sp.diags(np.sqrt(d.real)) @ lu.L.conj().T.tocsc() @ perm
    return Q.tocsr(), lu


class InnerProduct:
    """Hermitian positive-definite metric ``R`` and a factor ``Q^H Q = R``.

    ``Q`` may be rectangular when supplied by the caller. ``solve`` may also be
    a user-supplied (pseudo-)inverse action, which is the supported route for
    positive semi-definite metrics.
    """

    def __init__(self, R, Q=None, solve=None, check=True, seed=0):
        self.R = sp.csr_matrix(R)
        if self.R.shape[0] != self.R.shape[1]:
            raise ValueError("metric matrix must be square")
        self.n = self.R.shape[0]
        if Q is None:
            if solve is not None:
                raise ValueError("a custom solve requires an explicit factor Q")
            self.Q, self._lu = _spd_factor(self.R)
            self._solve = None
        else:
            self.Q = Q if sp.issparse(Q) else np.asarray(Q)
            if self.Q.shape[1] != self.n:
                raise ValueError("factor must have n columns")
            self._lu = None
            self._solve = solve
        if check:
            self._probe(seed)

    def _probe(self, seed, count=3, rtol=1e-12):
        rng = np.random.default_rng(seed)
        for _ in range(count):
            x = rng.standard_normal(self.n)
            a = np.linalg.norm(self.apply_factor(x)) ** 2
            b = float(np.real(np.conj(x) @ (self.R @ x)))
            if abs(a - b) > rtol * max(abs(b), 1.0):
                raise FactorizationError(
                    f"factor check failed: |Qx|^2={a!r} vs x^H R x={b!r}"
                )

    def apply(self, x):
        return self.R @ x

    def apply_factor(self, x):
        return self.Q @ x

    def solve(self, y):
        """Apply R^{-1} to a vector or to the columns of a matrix."""
        if self._solve is not None:
            return self._solve(y)
        if self._lu is None:
            raise FactorizationError("no inverse action available for this metric")
        return _lu_solve(self._lu, np.asarray(y), not np.iscomplexobj(self.R.data))

    def norm(self, x):
        return float(np.linalg.norm(self.apply_factor(x)))

    def inner(self, x, y):
        return np.vdot(self.apply_factor(x), self.apply_factor(y))

    def dual_norm(self, y):
        """``sqrt(y^H R^{-1} y)`` via one solve with the stored factorization."""
        z = self.solve(y)
        val = np.real(np.vdot(y, z))
        return float(np.sqrt(max(val, 0.0)))


@dataclass
class AffineParametricSystem:
    """An affine system with its metric and optional output functional."""

    A: AffineOperator
    b: AffineVector
    ip: InnerProduct
    l: AffineVector | None = None
    field: str = "real"
    domain: ParameterDomain | None = None
    meta: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        n = self.A.n
        if self.b.n != n or self.ip.n != n:
            raise ValueError("system blocks disagree on the state dimension")
        if self.l is not None and self.l.n != n:
            raise ValueError("output terms disagree on the state dimension")
        if self.field not in ("real", "complex"):
            raise ValueError("field must be 'real' or 'complex'")

    @property
    def n(self):
        return self.A.n

    @property
    def p(self):
        return self.domain.dim if self.domain is not None else None

    def check_mu(self, mu):
        mu = np.asarray(mu, dtype=float).reshape(-1)
        if self.domain is not None and mu.shape[0] != self.domain.dim:
            raise ValueError(
                f"parameter has {mu.shape[0]} entries, expected {self.domain.dim}"
            )
        return mu

    def residual(self, x, mu):
        """``b(mu) - A(mu) x``."""
        x = np.asarray(x).reshape(-1)
        if x.shape[0] != self.n:
            raise ValueError("state vector has wrong length")
        return self.b(mu) - self.A(mu) @ x

    def truth_solve(self, mu, rtol=1e-10):
        """Direct sparse solve of ``A(mu) u = b(mu)`` with a residual check."""
        A = self.A(mu).tocsc()
        rhs = self.b(mu)
        try:
            lu = splu(A)
            u = _lu_solve(lu, rhs, not np.iscomplexobj(A.data))
        except RuntimeError as exc:
            raise FactorizationError(f"truth solve failed at mu={mu!r}: {exc}") from exc
        scale = self.ip.dual_norm(rhs)
        err = self.ip.dual_norm(rhs - A @ u)
        if not np.all(np.isfinite(u)) or (scale > 0 and err > rtol * scale):
            cond = _condition_estimate(A, lu)
            raise FactorizationError(
                f"truth solve at mu={mu!r} failed the residual check "
                f"(rel. residual {err / max(scale, 1e-300):.2e}, cond ~ {cond:.2e})"
            )
        return u

    def spectral_bounds(self, mu, dense_limit=None):
        """Extreme singular values of the metric-mapped operator (dense oracle)."""
        limit = DENSE_LIMIT if dense_limit is None else dense_limit
        if self.n > limit:
            raise ValueError(f"n={self.n} exceeds the dense oracle limit {limit}")
        M = map_to_l2(self.ip, self.A(mu))
        svals = scipy.linalg.svdvals(M)
        return float(svals[-1]), float(svals[0])


def _lu_solve(lu, B, factor_is_real, trans="N"):
    """SuperLU solve that tolerates complex right-hand sides over a real factor."""
    if factor_is_real and np.iscomplexobj(B):
        return lu.solve(np.ascontiguousarray(B.real), trans=trans) + 1j * lu.solve(
            np.ascontiguousarray(B.imag), trans=trans
        )
    return lu.solve(np.ascontiguousarray(B), trans=trans)


def map_to_l2(ip, A):
    """Dense ``Q^{-H} A Q^{-1}``: the operator seen between l2 spaces."""
    if not sp.issparse(ip.Q) or ip.Q.shape[0] != ip.Q.shape[1]:
        raise ValueError("dense mapping needs the square sparse factor")
    lu = splu(ip.Q.tocsc())
    real_factor = not np.iscomplexobj(ip.Q.data)
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
    # X solves X Q = A  <=>  Q^T X^T = A^T
    X = _lu_solve(lu, Ad.T, real_factor, trans="T").T
    tr = "T" if real_factor else "H"
    return _lu_solve(lu, X, real_factor, trans=tr)


def _condition_estimate(A, lu):
    try:
        from scipy.sparse.linalg import LinearOperator, onenormest

        inv = LinearOperator(A.shape, matvec=lu.solve, dtype=A.dtype)
        return onenormest(A) * onenormest(inv)
    except Exception:  # pragma: no cover
        return np.nan


# ---------------------------------------------------------------------------
# system bundles on disk


def save_bundle(system, path):
    """Write a system to ``path`` as system.json + MatrixMarket/.npy files."""
    import pathlib

    path = pathlib.Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "SKMOR1",
        "field": system.field,
        "n": system.n,
        "p": system.p,
        "meta": system.meta,
    }
    if system.domain is not None:
        manifest["parameter_box"] = {
            "lower": system.domain.lower.tolist(),
            "upper": system.domain.upper.tolist(),
        }

    def _save_op(op, stem):
        entries = []
        for i, (m, e) in enumerate(zip(op.matrices, op.exprs)):
            name = f"{stem}_{i:03d}.mtx"
            scipy.io.mmwrite(path / name, m)
            entries.append({"matrix": name, "coeff": e.text})
        return entries

    def _save_vec(vec, stem):
        entries = []
        for j, e in enumerate(vec.exprs):
            name = f"{stem}_{j:03d}.npy"
            np.save(path / name, vec.columns[:, j])
            entries.append({"vector": name, "coeff": e.text})
        return entries

    manifest["operator"] = _save_op(system.A, "A")
    manifest["rhs"] = _save_vec(system.b, "b")
    if system.l is not None:
        manifest["output"] = _save_vec(system.l, "l")
    scipy.io.mmwrite(path / "R_U.mtx", system.ip.R)
    manifest["inner_product"] = {"matrix": "R_U.mtx"}
    (path / "system.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_bundle(path):
    """Load a system bundle written by :func:`save_bundle`."""
    import pathlib

    path = pathlib.Path(path)
    manifest = json.loads((path / "system.json").read_text())
    if manifest.get("format") != "SKMOR1":
        raise ValueError(f"unrecognized bundle format {manifest.get('format')!r}")

    def _mat(name):
        return sp.csr_matrix(scipy.io.mmread(path / name))

    A = AffineOperator([(_mat(t["matrix"]), t["coeff"]) for t in manifest["operator"]])
    b = AffineVector([(np.load(path / t["vector"]), t["coeff"]) for t in manifest["rhs"]])
    l = None
    if "output" in manifest:
        l = AffineVector(
            [(np.load(path / t["vector"]), t["coeff"]) for t in manifest["output"]]
        )
    ip = InnerProduct(_mat(manifest["inner_product"]["matrix"]))
    domain = None
    if "parameter_box" in manifest:
        box = manifest["parameter_box"]
        domain = ParameterDomain(box["lower"], box["upper"])
    sysm = AffineParametricSystem(
        A=A, b=b, ip=ip, l=l, field=manifest.get("field", "real"), domain=domain,
        meta=manifest.get("meta", {}),
    )
    max_idx = max(
        [e.max_index for e in A.exprs + b.exprs + (l.exprs if l else [])],
        default=-1,
    )
    if domain is not None and max_idx >= domain.dim:
        raise ValueError(
            f"coefficients use mu[{max_idx}] but the box has {domain.dim} entries"
        )
    return sysm
