"""Minimal-residual projections: classical, sketched and two-level online.

The classical path solves the reduced normal system (the oracle/baseline); the
sketched path assembles the small embedded residual blocks and solves a dense
least-squares problem by orthogonal factorization. Batched online solves draw
a fresh second-level compressor per test set, so the per-parameter cost is
independent of both the full order and the primary sketch size.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.linalg

from . import opcount
from .embeddings import l2_embedding, orthonormalize
from .sketching import append_to_sketch, build_sketch, compress_sketch
from .validation import check_basis, check_parameters, derive_seed

__all__ = [
    "ReducedBasis",
    "ReducedSolution",
    "SingularReducedSystem",
    "minres_classic",
    "minres_sketched",
    "online_batch",
    "residual_estimate",
    "quasi_optimality",
    "greedy_rb",
]


class SingularReducedSystem(RuntimeError):
    """Reduced system is singular or numerically unusable."""


@dataclass
class ReducedBasis:
    """A reduced basis with its orthonormality convention and build log."""

    matrix: np.ndarray
    orthonormal: str | None = None  # None | "metric" | "sketch"
    provenance: list = dataclass_field(default_factory=list)

    @property
    def r(self):
        return self.matrix.shape[1]

    @property
    def n(self):
        return self.matrix.shape[0]


@dataclass
class ReducedSolution:
    """Coordinates of one reduced solve with its residual estimate."""

    coords: np.ndarray
    mu: np.ndarray
    delta: float | None = None
    support: list | None = None
    eta: float = 1.0
    info: dict = dataclass_field(default_factory=dict)

    def lift(self, basis):
        U = basis.matrix if isinstance(basis, ReducedBasis) else basis
        if self.support is not None and len(self.support) != U.shape[1]:
            return U[:, self.support] @ self.coords
        return U @ self.coords


def _eta_value(eta, mu):
    if callable(eta):
        return float(eta(mu))
    return float(eta)


def minres_classic(system, basis, mu):
    """Reduced normal-system solve (exact baseline path).

    Minimizes the dual residual norm over the span by solving
    ``(AU)^H R^{-1} (AU) a = (AU)^H R^{-1} b``.
    """
    U = basis.matrix if isinstance(basis, ReducedBasis) else check_basis(basis, system.n)
    mu = system.check_mu(mu)
    AU = system.A(mu) @ U
    Z = system.ip.solve(AU)
    G = AU.conj().T @ Z
    rhs = Z.conj().T @ system.b(mu)
    cond = np.linalg.cond(G) if G.size else 0.0
    if G.size and (not np.isfinite(cond) or cond > 1e15):
        raise SingularReducedSystem(
            f"reduced normal system is singular at mu={mu!r} (cond ~ {cond:.2e})"
        )
    coords = np.linalg.solve(G, rhs) if G.size else np.zeros(0)
    res = system.residual(U @ coords, mu)
    return ReducedSolution(
        coords=coords,
        mu=mu,
        delta=system.ip.dual_norm(res),
        support=list(range(U.shape[1])),
        info={"cond_normal": float(cond), "method": "normal"},
    )


def _lstsq(V, b):
    coords, _, rank, svals = np.linalg.lstsq(V, b, rcond=None)
    if V.shape[1] and rank < V.shape[1]:
        warnings.warn(
            "sketched reduced matrix is rank deficient; returning the "
            "minimal-norm solution",
            RuntimeWarning,
            stacklevel=3,
        )
    return coords, rank, svals


def minres_sketched(sk, mu, eta=1.0):
    """Sketched minimal-residual solve from the assembled blocks.

    The small least-squares problem is solved by orthogonal factorization
    (SVD-backed lstsq), never via the normal equations.
    """
    V, b = sk.assemble(mu)
    if sk.r and sk.k < sk.r:
        raise ValueError(f"sketch has k={sk.k} rows for r={sk.r} unknowns")
    coords, rank, svals = _lstsq(V, b)
    opcount.record("lstsq", 2 * V.shape[0] * V.shape[1] ** 2, *V.shape)
    resid = b - V @ coords
    eta_mu = _eta_value(eta, mu)
    opcount.record("residual_norm", 2 * V.shape[0] * (V.shape[1] + 1), V.shape[0])
    return ReducedSolution(
        coords=coords,
        mu=np.asarray(mu, dtype=float),
        delta=float(np.linalg.norm(resid)) / eta_mu,
        support=list(range(sk.r)),
        eta=eta_mu,
        info={
            "rank": int(rank),
            "cond_sketched": float(svals[0] / svals[-1]) if len(svals) else 0.0,
            "level": sk.level,
        },
    )


def residual_estimate(sk, coords, mu, eta=1.0, support=None):
    """Residual-based error indicator ``|V(mu) a - b(mu)| / eta``."""
    view = sk.select(support) if support is not None else sk
    V, b = view.assemble(mu)
    coords = np.asarray(coords)
    opcount.record("residual_norm", 2 * V.shape[0] * (V.shape[1] + 1), V.shape[0])
    return float(np.linalg.norm(V @ coords - b)) / _eta_value(eta, mu)


def draw_compressor(k, size, master_seed, batch_index, kind="gaussian"):
    """Fresh second-level map for one test batch, seeded from a master seed."""
    seed = derive_seed(master_seed, 2, batch_index)
    return l2_embedding(kind, size, k, seed)


def online_batch(
    sk,
    params,
    online_size=None,
    master_seed=0,
    batch_index=0,
    kind="gaussian",
    eta=1.0,
    workers=1,
):
    """Solve one test batch from a primary sketch.

    A fresh compressor is drawn per batch (derived from ``master_seed`` and
    ``batch_index``), the compressed blocks are formed once, then each
    parameter point is solved independently. Per-point failures are recorded
    on the returned solutions, not raised.
    """
    params = check_parameters(params)
    work = sk
    if online_size is not None:
        if online_size > sk.k:
            raise ValueError(f"online size {online_size} exceeds sketch rows {sk.k}")
        gamma = draw_compressor(sk.k, online_size, master_seed, batch_index, kind)
        work = compress_sketch(sk, gamma)

    def solve_one(mu):
        try:
            return minres_sketched(work, mu, eta=eta)
        except Exception as exc:  # isolate per-point failures
            return ReducedSolution(
                coords=np.full(sk.r, np.nan),
                mu=mu,
                delta=None,
                info={"error": str(exc)},
            )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(solve_one, params))
    return [solve_one(mu) for mu in params]


def quasi_optimality(system, basis, mu, emb=None, truth=None):
    """Extreme residual-to-error ratios over span{u(mu)} + span(basis).

    Returns a dict with the exact dual-norm constants and, when an embedding
    is given, their sketched counterparts (desk-scale oracle).
    """
    U = basis.matrix if isinstance(basis, ReducedBasis) else check_basis(basis, system.n)
    mu = system.check_mu(mu)
    if truth is None:
        truth = system.truth_solve(mu)
    cols = [truth.reshape(-1, 1)]
    if U.shape[1]:
        cols.append(U)
    W = orthonormalize(np.hstack(cols), system.ip)
    AW = system.A(mu) @ W
    M = system.ip.apply_factor(system.ip.solve(AW))
    svals = scipy.linalg.svdvals(M)
    out = {"exact": (float(svals[-1]), float(svals[0]))}
    if emb is not None:
        S = emb.sketch_dual(AW)
        s2 = scipy.linalg.svdvals(S)
        out["sketched"] = (float(s2[-1]), float(s2[0]))
    return out


def sketch_orthonormalize(basis, sk):
    """Re-express basis and sketch so the embedded basis has orthonormal columns."""
    if sk.r == 0:
        return basis, sk
    Q, R = scipy.linalg.qr(sk.basis_sk, mode="economic")
    diag = np.abs(np.diag(R))
    if np.min(diag) <= 1e-13 * max(np.max(diag), 1e-300):
        raise np.linalg.LinAlgError("sketched basis is numerically rank deficient")
    inv = scipy.linalg.solve_triangular(R, np.eye(sk.r))
    from dataclasses import replace

    new_sk = replace(
        sk,
        basis_sk=Q,
        op_terms=tuple(t @ inv for t in sk.op_terms),
    )
    return basis @ inv, new_sk


def _select_next(deltas, relaxed, history_min):
    order = np.arange(len(deltas))
    if relaxed and history_min is not None:
        threshold = float(np.max(history_min))
        hits = np.flatnonzero(deltas >= threshold)
        if hits.size:
            return int(hits[0])
    return int(order[np.argmax(deltas)])


def greedy_rb(
    system,
    train,
    r_max,
    tol,
    emb,
    online_size=None,
    master_seed=0,
    relaxed=False,
    eta=1.0,
    refresh_every=50,
    include_output=False,
):
    """Greedy reduced-basis generation driven by sketched residual estimates.

    At each iteration the truth snapshot at the worst-estimated parameter is
    appended, the basis is kept orthonormal in the sketched metric, and all
    training estimates are refreshed through a per-iteration compressor (or at
    the primary sketch level when ``online_size`` is None). Ties break toward
    the smallest parameter index; with ``relaxed`` the first parameter whose
    estimate reaches the running max-min threshold is taken instead of the
    argmax.
    """
    train = check_parameters(train, system.p)
    if len(train) == 0:
        raise ValueError("empty training set")
    basis = np.zeros((system.n, 0))
    sk = build_sketch(system, basis, emb, include_output=include_output)
    log = []
    skip = np.zeros(len(train), dtype=bool)

    def batch_estimates(active_sk, iteration):
        if online_size is None:
            work = active_sk
        else:
            gamma = draw_compressor(active_sk.k, online_size, master_seed, iteration)
            work = compress_sketch(active_sk, gamma)
        deltas = np.empty(len(train))
        for i, mu in enumerate(train):
            if skip[i]:
                deltas[i] = -np.inf
                continue
            if work.r == 0:
                _, b = work.assemble(mu)
                deltas[i] = float(np.linalg.norm(b)) / _eta_value(eta, mu)
            else:
                deltas[i] = minres_sketched(work, mu, eta=eta).delta
        return deltas

    deltas = batch_estimates(sk, 0)
    history_min = deltas.copy()
    appended = 0
    while basis.shape[1] < r_max and np.max(deltas) > tol:
        pick = _select_next(deltas, relaxed, history_min if basis.shape[1] else None)
        mu_star = train[pick]
        try:
            snapshot = system.truth_solve(mu_star)
        except Exception as exc:
            warnings.warn(
                f"truth solve failed at mu={mu_star!r}: {exc}; skipping",
                RuntimeWarning,
                stacklevel=2,
            )
            skip[pick] = True
            deltas[pick] = -np.inf
            if not np.any(np.isfinite(deltas[~skip])) or np.all(skip):
                break
            continue
        # orthogonalize the snapshot against the basis in the sketched metric
        s_new = emb.apply(snapshot)
        if basis.shape[1]:
            coeff = sk.basis_sk.conj().T @ s_new
            snapshot = snapshot - basis @ coeff
            s_new = s_new - sk.basis_sk @ coeff
        scale = np.linalg.norm(s_new)
        if scale <= 1e-13:
            warnings.warn(
                f"snapshot at mu={mu_star!r} already lies in the basis span",
                RuntimeWarning,
                stacklevel=2,
            )
            skip[pick] = True
            deltas[pick] = -np.inf
            continue
        snapshot = snapshot / scale
        sk = append_to_sketch(sk, system, snapshot.reshape(-1, 1), emb)
        basis = np.hstack([basis, snapshot.reshape(-1, 1)])
        appended += 1
        basis, sk = sketch_orthonormalize(basis, sk)
        if refresh_every and appended % refresh_every == 0:
            sk = build_sketch(system, basis, emb, include_output=include_output)
        iteration = basis.shape[1]
        deltas = batch_estimates(sk, iteration)
        history_min = np.minimum(history_min, deltas)
        log.append(
            {
                "iteration": iteration,
                "mu": mu_star.tolist(),
                "estimator": float(np.max(deltas)),
                "k": sk.k,
                "k_online": online_size,
            }
        )
    rb = ReducedBasis(matrix=basis, orthonormal="sketch", provenance=log)
    return rb, sk, log
