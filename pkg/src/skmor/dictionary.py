"""Dictionary-based sparse minimal-residual approximation.

Per parameter point, an approximation subspace is picked online from a
dictionary of candidate vectors by an orthogonal greedy selection on the
residual. The exact variant works on full vectors (oracle, desk scale); the
sketched variant runs entirely on compressed affine blocks. Restricted
isometry constants and fixed-dictionary width oracles quantify dictionary
degeneracy and approximation power on enumerable instances.
"""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field

import numpy as np
import scipy.linalg

from . import opcount
from .embeddings import orthonormalize
from .minres import ReducedSolution, _eta_value, draw_compressor, minres_classic
from .sketching import append_to_sketch, build_sketch, compress_sketch
from .validation import check_basis, check_parameters

__all__ = [
    "Dictionary",
    "SparseSolution",
    "RipConstants",
    "build_dictionary",
    "omp_exact",
    "omp_sketched",
    "dict_greedy",
    "rip_constants",
    "stability_check",
    "width_fixed_dictionary",
]

_STAGNATION_RTOL = 1e-12


@dataclass
class Dictionary:
    """Candidate vectors (metric-normalized columns) with their sketch."""

    columns: np.ndarray
    sketch: object
    provenance: list = dataclass_field(default_factory=list)

    @property
    def size(self):
        return self.columns.shape[1]

    @property
    def n(self):
        return self.columns.shape[0]


@dataclass
class SparseSolution(ReducedSolution):
    iterations: int = 0
    stagnated: bool = False


def build_dictionary(system, columns, emb, provenance=None):
    """Metric-normalize candidate columns and sketch all of them."""
    columns = check_basis(columns, system.n)
    norms = np.array([system.ip.norm(columns[:, j]) for j in range(columns.shape[1])])
    if np.any(norms <= 0):
        raise ValueError("dictionary contains a zero column")
    columns = columns / norms
    sk = build_sketch(system, columns, emb)
    return Dictionary(columns=columns, sketch=sk, provenance=provenance or [])


def omp_exact(system, dictionary, mu, r, tol, eta=1.0, deflate=True):
    """Orthogonal greedy selection on full vectors (desk-scale oracle).

    Maps the dictionary through the operator, normalizes in the dual norm,
    then repeatedly picks the column with the largest dual inner product
    against the residual and re-solves the reduced normal system on the
    selected columns. With ``deflate`` the remaining mapped columns are
    orthogonalized against the span of the selected ones after every pick
    (stepwise projection), which matters for coherent dictionaries.
    """
    cols = dictionary.columns if isinstance(dictionary, Dictionary) else check_basis(
        dictionary, system.n
    )
    mu = system.check_mu(mu)
    K = cols.shape[1]
    A = system.A(mu)
    mapped = A @ cols
    norms = np.array([system.ip.dual_norm(mapped[:, j]) for j in range(K)])
    if np.any(norms <= 0):
        raise ValueError("operator maps a dictionary column to zero")
    vhat = mapped / norms
    eta_mu = _eta_value(eta, mu)
    rhs = system.b(mu)
    residual = rhs.copy()
    delta = system.ip.dual_norm(residual) / eta_mu
    support: list[int] = []
    coords = np.zeros(0)
    sel_basis = np.zeros((system.n, 0), dtype=vhat.dtype)  # dual-orthonormal picks
    stagnated = False
    i = 0
    while delta >= tol and i < r:
        scores = np.abs(vhat.conj().T @ system.ip.solve(residual))
        scores[support] = -np.inf
        pick = int(np.argmax(scores))
        if not np.isfinite(scores[pick]):
            break
        support.append(pick)
        i += 1
        sub = cols[:, support]
        sol = minres_classic(system, sub, mu)
        coords = sol.coords
        new_residual = system.residual(sub @ coords, mu)
        new_delta = system.ip.dual_norm(new_residual) / eta_mu
        if delta - new_delta < _STAGNATION_RTOL * max(delta, 1e-300):
            stagnated = True
            residual, delta = new_residual, new_delta
            break
        residual, delta = new_residual, new_delta
        if deflate and i < r and delta >= tol:
            # dual-orthonormal basis of the selected mapped columns
            picked = vhat[:, support[-1]]
            for _ in range(2):
                picked = picked - sel_basis @ (
                    sel_basis.conj().T @ system.ip.solve(picked)
                )
            nrm = system.ip.dual_norm(picked)
            if nrm > 1e-14:
                picked = picked / nrm
                sel_basis = np.column_stack([sel_basis, picked])
                z = system.ip.solve(picked)
                rest = [j for j in range(K) if j not in support]
                vhat[:, rest] -= np.outer(picked, z.conj() @ vhat[:, rest])
                Zr = system.ip.solve(vhat[:, rest])
                norms_rest = np.sqrt(
                    np.maximum(np.real(np.sum(vhat[:, rest].conj() * Zr, axis=0)), 0.0)
                )
                for idx, j in enumerate(rest):
                    if norms_rest[idx] > 1e-14:
                        vhat[:, j] /= norms_rest[idx]
    return SparseSolution(
        coords=coords,
        mu=mu,
        delta=float(delta),
        support=support,
        eta=eta_mu,
        iterations=i,
        stagnated=stagnated,
    )


def _omp_on_blocks(V, rhs, r, tol, eta_mu, deflate):
    """Greedy selection on assembled sketch blocks (fully online)."""
    k, K = V.shape
    scale = np.linalg.norm(V, axis=0)
    ok = scale > 0
    vhat = V / np.where(ok, scale, 1.0)
    vhat[:, ~ok] = 0.0
    opcount.record("omp_normalize", 2 * k * K, k, K)
    residual = rhs.copy()
    delta = float(np.linalg.norm(residual)) / eta_mu
    support: list[int] = []
    picked_block = np.zeros((k, 0), dtype=V.dtype)
    stagnated = False
    i = 0
    while delta >= tol and i < r:
        scores = np.abs(vhat.conj().T @ residual)
        opcount.record("omp_scores", 2 * k * K, k, K)
        scores[support] = -np.inf
        scores[~ok] = -np.inf
        pick = int(np.argmax(scores))
        if not np.isfinite(scores[pick]):
            break
        support.append(pick)
        i += 1
        v = vhat[:, pick]
        # two-pass Gram-Schmidt against the selected block
        for _ in range(2):
            v = v - picked_block @ (picked_block.conj().T @ v)
        nrm = np.linalg.norm(v)
        opcount.record("omp_gs", 4 * k * i, k)
        if nrm <= 1e-14:
            support.pop()
            i -= 1
            stagnated = True
            break
        v = v / nrm
        picked_block = np.column_stack([picked_block, v])
        drop = np.vdot(v, residual)
        residual = residual - v * drop
        new_delta = float(np.linalg.norm(residual)) / eta_mu
        opcount.record("omp_residual", 4 * k, k)
        if delta - new_delta < _STAGNATION_RTOL * max(delta, 1e-300):
            stagnated = True
            delta = new_delta
            break
        delta = new_delta
        if deflate and i < r and delta >= tol:
            rest = np.array([j for j in range(K) if j not in support and ok[j]])
            if rest.size:
                overlaps = v.conj() @ vhat[:, rest]
                vhat[:, rest] -= np.outer(v, overlaps)
                nrm_rest = np.linalg.norm(vhat[:, rest], axis=0)
                good = nrm_rest > 1e-14
                vhat[:, rest[good]] /= nrm_rest[good]
                ok[rest[~good]] = False
                opcount.record("omp_deflate", 4 * k * rest.size, k, K)
    # final coordinates: least squares on the original selected columns
    if support:
        Vs = V[:, support]
        coords, _, rank, _ = np.linalg.lstsq(Vs, rhs, rcond=None)
        opcount.record("omp_final_lstsq", 2 * k * len(support) ** 2, k)
        if rank < len(support):
            warnings.warn(
                "selected sketched columns are rank deficient",
                RuntimeWarning,
                stacklevel=3,
            )
        delta = float(np.linalg.norm(rhs - Vs @ coords)) / eta_mu
    else:
        coords = np.zeros(0)
        delta = float(np.linalg.norm(rhs)) / eta_mu if np.linalg.norm(rhs) > 0 else 0.0
    return coords, support, delta, i, stagnated


def omp_sketched(
    sk,
    params,
    r,
    tol,
    online_size=None,
    master_seed=0,
    batch_index=0,
    kind="gaussian",
    eta=1.0,
    deflate=True,
    workers=1,
):
    """Sketched orthogonal greedy over a test batch (fully online).

    Draws one fresh compressor for the batch, evaluates the compressed
    dictionary blocks per parameter point, runs the greedy selection with
    Gram-Schmidt residual updates (optionally deflating unselected columns)
    and finishes each point with a least-squares solve on the selected
    original columns. Failures are isolated per point.
    """
    params = check_parameters(params)
    work = sk
    if online_size is not None:
        if online_size < r + 1:
            raise ValueError(f"online size {online_size} too small for r={r}")
        gamma = draw_compressor(sk.k, online_size, master_seed, batch_index, kind)
        work = compress_sketch(sk, gamma)
    elif sk.k < r + 1:
        raise ValueError(f"sketch rows {sk.k} too small for r={r}")

    def solve_one(mu):
        try:
            V, rhs = work.assemble(mu)
            eta_mu = _eta_value(eta, mu)
            coords, support, delta, iters, stagnated = _omp_on_blocks(
                V, rhs, r, tol, eta_mu, deflate
            )
            return SparseSolution(
                coords=coords,
                mu=np.asarray(mu, dtype=float),
                delta=delta,
                support=support,
                eta=eta_mu,
                iterations=iters,
                stagnated=stagnated,
            )
        except Exception as exc:
            return SparseSolution(
                coords=np.zeros(0), mu=np.asarray(mu, dtype=float),
                delta=None, support=[], info={"error": str(exc)},
            )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(solve_one, params))
    return [solve_one(mu) for mu in params]


def dict_greedy(
    system,
    train,
    K_max,
    r,
    tol,
    emb,
    online_size=None,
    master_seed=0,
    relaxed=False,
    eta=1.0,
    deflate=True,
):
    """Greedy dictionary generation from training snapshots.

    Enriches the dictionary with the truth snapshot at the worst-estimated
    parameter; the provisional online solver is the sketched greedy with
    sparsity budget ``min(i, r)``. The first ``r`` iterations coincide with
    the reduced-basis greedy under shared seeds.
    """
    train = check_parameters(train, system.p)
    if len(train) == 0:
        raise ValueError("empty training set")
    columns = np.zeros((system.n, 0))
    sk = build_sketch(system, columns, emb)
    log = []
    skip = np.zeros(len(train), dtype=bool)

    def estimates(active_sk, iteration, budget):
        if active_sk.r == 0:
            if online_size is None:
                work = active_sk
            else:
                gamma = draw_compressor(active_sk.k, online_size, master_seed, iteration)
                work = compress_sketch(active_sk, gamma)
            vals = np.empty(len(train))
            for i, mu in enumerate(train):
                _, b = work.assemble(mu)
                vals[i] = float(np.linalg.norm(b)) / _eta_value(eta, mu)
            vals[skip] = -np.inf
            return vals
        sols = omp_sketched(
            active_sk, train, budget, tol,
            online_size=online_size, master_seed=master_seed,
            batch_index=iteration, eta=eta, deflate=deflate,
        )
        vals = np.array(
            [s.delta if s.delta is not None else np.inf for s in sols]
        )
        vals[skip] = -np.inf
        return vals

    deltas = estimates(sk, 0, 0)
    history_min = deltas.copy()
    from .minres import _select_next

    while columns.shape[1] < K_max and np.max(deltas) > tol:
        pick = _select_next(deltas, relaxed, history_min if columns.shape[1] else None)
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
            if np.all(skip):
                break
            continue
        nrm = system.ip.norm(snapshot)
        if nrm <= 0:
            skip[pick] = True
            deltas[pick] = -np.inf
            continue
        snapshot = snapshot / nrm
        sk = append_to_sketch(sk, system, snapshot.reshape(-1, 1), emb)
        columns = np.hstack([columns, snapshot.reshape(-1, 1)])
        iteration = columns.shape[1]
        deltas = estimates(sk, iteration, min(iteration, r))
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
    return Dictionary(columns=columns, sketch=sk, provenance=log), log


def rip_constants(dictionary, r, ip=None, limit=100_000, samples=2000, seed=0):
    """Extreme ratios ``|U z|_metric / |z|`` over r-sparse coefficients.

    Exact by support enumeration when C(K, r) fits the limit; otherwise a
    seeded random sample of supports, flagged as such.
    """
    if hasattr(dictionary, "gram"):
        cols, gram = dictionary.columns, dictionary.gram
    else:
        cols = dictionary.columns if isinstance(dictionary, Dictionary) else np.asarray(
            dictionary
        )
        if ip is None:
            raise ValueError("need the metric to form the dictionary gram matrix")
        gram = metric_gram(ip, cols)
    K = cols.shape[1]
    if r > K:
        raise ValueError(f"sparsity {r} exceeds dictionary size {K}")
    total = math.comb(K, r)
    exact = total <= limit
    if exact:
        supports = itertools.combinations(range(K), r)
        examined = total
    else:
        rng = np.random.default_rng(seed)
        supports = [
            tuple(np.sort(rng.choice(K, size=r, replace=False))) for _ in range(samples)
        ]
        examined = len(supports)
    lo, hi = np.inf, -np.inf
    for S in supports:
        block = gram[np.ix_(S, S)]
        evals = scipy.linalg.eigvalsh(block)
        lo = min(lo, evals[0])
        hi = max(hi, evals[-1])
    return RipConstants(
        sigma_min=float(np.sqrt(max(lo, 0.0))),
        sigma_max=float(np.sqrt(max(hi, 0.0))),
        method="exact-enumeration" if exact else "sampled",
        supports_examined=examined,
    )


@dataclass(frozen=True)
class RipConstants:
    sigma_min: float
    sigma_max: float
    method: str
    supports_examined: int

    def __post_init__(self):
        if self.sigma_min > self.sigma_max + 1e-14:
            raise ValueError("sigma_min exceeds sigma_max")


def metric_gram(ip, cols):
    F = ip.apply_factor(cols)
    return F.conj().T @ F


class GramDictionary:
    """Pairs dictionary columns with their metric Gram matrix for RIP scans."""

    def __init__(self, ip, cols):
        self.columns = check_basis(cols)
        self.gram = metric_gram(ip, self.columns)


def sparse_quasi_optimality(system, dictionary, mu, r, emb=None, truth=None, limit=100_000):
    """Extreme residual-to-error ratios over all r-sized supports (oracle)."""
    cols = dictionary.columns if isinstance(dictionary, Dictionary) else dictionary
    K = cols.shape[1]
    if math.comb(K, r) > limit:
        raise ValueError("support enumeration exceeds the limit")
    mu = system.check_mu(mu)
    if truth is None:
        truth = system.truth_solve(mu)
    lo, hi = np.inf, -np.inf
    slo, shi = np.inf, -np.inf
    for S in itertools.combinations(range(K), r):
        W = orthonormalize(np.column_stack([truth.reshape(-1, 1), cols[:, S]]), system.ip)
        AW = system.A(mu) @ W
        M = system.ip.apply_factor(system.ip.solve(AW))
        svals = scipy.linalg.svdvals(M)
        lo, hi = min(lo, svals[-1]), max(hi, svals[0])
        if emb is not None:
            s2 = scipy.linalg.svdvals(emb.sketch_dual(AW))
            slo, shi = min(slo, s2[-1]), max(shi, s2[0])
    out = {"exact": (float(lo), float(hi))}
    if emb is not None:
        out["sketched"] = (float(slo), float(shi))
    return out


def stability_check(system, dictionary, mu, support, emb, limit=100_000):
    """Verify the singular values of the selected sketched block against the
    product of sparse quasi-optimality constants and RIP constants (oracle)."""
    dic = dictionary
    cols = dic.columns
    r = len(support)
    mu = system.check_mu(mu)
    V, _ = dic.sketch.select(list(support)).assemble(mu)
    svals = scipy.linalg.svdvals(V)
    qo = sparse_quasi_optimality(system, dic, mu, r, emb=emb, limit=limit)
    slo, shi = qo["sketched"]
    rip = rip_constants(GramDictionary(system.ip, cols), r, limit=limit)
    lower = slo * rip.sigma_min
    upper = shi * rip.sigma_max
    return {
        "sigma_min": float(svals[-1]),
        "sigma_max": float(svals[0]),
        "lower_bound": float(lower),
        "upper_bound": float(upper),
        "min_ok": bool(svals[-1] >= lower * (1 - 1e-9)),
        "max_ok": bool(svals[0] <= upper * (1 + 1e-9)),
        "constants": qo,
        "rip": rip,
    }


def width_fixed_dictionary(samples, cols, ip, r, limit=100_000):
    """Worst-case best projection error onto spans of r dictionary columns.

    Evaluates, for a FIXED dictionary, ``max over samples of min over
    supports`` of the metric projection error, by exhaustive support
    enumeration.
    """
    samples = check_basis(samples)
    cols = check_basis(cols, samples.shape[0])
    K = cols.shape[1]
    r = min(r, K)
    if math.comb(K, r) > limit:
        raise ValueError("support enumeration exceeds the limit")
    F = ip.apply_factor(cols)
    G = ip.apply_factor(samples)
    m = samples.shape[1]
    best = np.full(m, np.inf)
    for S in itertools.combinations(range(K), r):
        FS = F[:, S]
        Q, R, = scipy.linalg.qr(FS, mode="economic")
        keep = np.abs(np.diag(R)) > 1e-12 * max(np.abs(R).max(), 1e-300)
        Qk = Q[:, keep]
        err = G - Qk @ (Qk.conj().T @ G)
        best = np.minimum(best, np.linalg.norm(err, axis=0))
    return float(np.max(best))
