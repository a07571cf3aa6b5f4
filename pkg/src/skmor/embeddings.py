"""Oblivious random embeddings of l2 and of the solution-space metric.

Three l2 -> l2 families are provided: rescaled Gaussian, the subsampled
randomized Hadamard transform (SRHT) and uniform row sampling. A metric
embedding maps the solution space to l2 by composing an l2 embedding with the
inner-product factor: ``x -> core(Q x)``. Sketching matrices are real and act
on complex data componentwise.

All randomness is counter-based (Philox keyed by seed and a stream id), so the
action of an embedding is a pure function of ``(kind, k, n, seed)``.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg

__all__ = [
    "L2Embedding",
    "MetricEmbedding",
    "StackedEmbedding",
    "l2_embedding",
    "metric_embedding",
    "fwht",
    "hadamard_matrix",
    "oblivious_size",
    "embedding_distortion",
    "orthonormalize",
]

KINDS = ("gaussian", "srht", "rowsample")

# streams for the counter-based generator
_STREAM_SIGNS, _STREAM_ROWS, _STREAM_ENTRIES = 11, 13, 17

# default constants for the a priori embedding sizes; calibration data, not
# theory -- see oblivious_size
GAUSSIAN_C = 7.8431
GAUSSIAN_DIM_FACTOR = 13.8
SRHT_C = 1.98197


def _rng(seed, stream):
    return np.random.Generator(np.random.Philox(key=[np.uint64(seed), np.uint64(stream)]))


def padded_size(n):
    return 1 << max(int(n) - 1, 0).bit_length()


def fwht(X):
    """In-place fast Walsh-Hadamard transform down the columns of ``X``.

    Uses the natural (Sylvester) ordering; the length of the first axis must
    be a power of two. Not normalized.
    """
    n = X.shape[0]
    if n & (n - 1):
        raise ValueError("transform length must be a power of two")
    h = 1
    while h < n:
        Y = X.reshape(n // (2 * h), 2, h, *X.shape[1:])
        a = Y[:, 0].copy()
        b = Y[:, 1].copy()
        Y[:, 0] = a + b
        Y[:, 1] = a - b
        h *= 2
    return X


def hadamard_matrix(n):
    """Dense Sylvester Hadamard matrix (reference for testing the fast path)."""
    if n & (n - 1):
        raise ValueError("order must be a power of two")
    i = np.arange(n)
    bits = np.bitwise_and(i[:, None], i[None, :])
    popcount = np.zeros((n, n), dtype=np.int64)
    while bits.any():
        popcount += bits & 1
        bits >>= 1
    return np.where(popcount % 2 == 0, 1.0, -1.0)


class L2Embedding:
    """A seeded oblivious l2 -> l2 embedding with ``k`` rows acting on ``n_in``."""

    def __init__(self, kind, k, n_in, seed):
        if kind not in KINDS:
            raise ValueError(f"unknown embedding kind {kind!r}")
        k, n_in = int(k), int(n_in)
        if k < 1:
            raise ValueError("an embedding needs at least one row")
        self.kind = kind
        self.k = k
        self.n_in = n_in
        self.seed = int(seed)
        self.n_pad = padded_size(n_in) if kind == "srht" else n_in
        if k > self.n_pad:
            raise ValueError(f"k={k} exceeds the padded size {self.n_pad}")
        if kind == "srht":
            self._signs = np.where(
                _rng(self.seed, _STREAM_SIGNS).random(n_in) < 0.5, -1.0, 1.0
            )
            self._rows = np.sort(
                _rng(self.seed, _STREAM_ROWS).choice(self.n_pad, size=k, replace=False)
            )
            self._scale = math.sqrt(self.n_pad / k) / math.sqrt(self.n_pad)
        elif kind == "rowsample":
            self._rows = _rng(self.seed, _STREAM_ROWS).choice(n_in, size=k, replace=False)
            self._scale = math.sqrt(n_in / k)
        else:
            self._entries = None  # materialized lazily

    def _gaussian_matrix(self):
        if self._entries is None:
            g = _rng(self.seed, _STREAM_ENTRIES).standard_normal((self.k, self.n_in))
            self._entries = g / math.sqrt(self.k)
        return self._entries

    def apply(self, M):
        """Sketch a vector ``(n,)`` or the columns of a matrix ``(n, cols)``."""
        M = np.asarray(M)
        squeeze = M.ndim == 1
        if squeeze:
            M = M.reshape(-1, 1)
        if M.shape[0] != self.n_in:
            raise ValueError(f"input has {M.shape[0]} rows, embedding acts on {self.n_in}")
        if self.kind == "gaussian":
            # one gemv per column: the sketch of a column never depends on its
            # neighbours, so appends and concurrent column blocks reproduce
            # full builds bitwise
            G = self._gaussian_matrix()
            out = np.empty((self.k, M.shape[1]), dtype=np.result_type(M.dtype, float))
            if np.iscomplexobj(M):
                for j in range(M.shape[1]):
                    out[:, j] = G @ M[:, j].real + 1j * (G @ M[:, j].imag)
            else:
                for j in range(M.shape[1]):
                    out[:, j] = G @ M[:, j]
        elif self.kind == "rowsample":
            out = self._scale * M[self._rows]
        else:
            work = M.astype(np.result_type(M.dtype, float), copy=True)
            if self.n_pad != self.n_in:
                pad = np.zeros((self.n_pad, M.shape[1]), dtype=work.dtype)
                pad[: self.n_in] = work * self._signs[:, None]
                work = pad
            else:
                work *= self._signs[:, None]
            fwht(work)
            out = self._scale * work[self._rows]
        return out[:, 0] if squeeze else out

    def matrix(self):
        """Dense representation (tests and small oracles only)."""
        return self.apply(np.eye(self.n_in))

    def descriptor(self):
        return {"kind": self.kind, "k": self.k, "n": self.n_in, "seed": self.seed}

    def __repr__(self):
        return f"L2Embedding(kind={self.kind!r}, k={self.k}, n_in={self.n_in}, seed={self.seed})"


class StackedEmbedding:
    """Rows of several embeddings stacked with rescaling (used for recycling)."""

    def __init__(self, parts):
        # parts: list of (embedding, scale)
        if not parts:
            raise ValueError("need at least one part")
        n_in = parts[0][0].n_in
        if any(e.n_in != n_in for e, _ in parts):
            raise ValueError("stacked parts must share the input dimension")
        self.parts = list(parts)
        self.n_in = n_in
        self.k = sum(e.k for e, _ in parts)
        self.kind = "stacked"

    def apply(self, M):
        M = np.asarray(M)
        squeeze = M.ndim == 1
        cols = M.reshape(-1, 1) if squeeze else M
        out = np.vstack([s * e.apply(cols) for e, s in self.parts])
        return out[:, 0] if squeeze else out

    def descriptor(self):
        return {
            "kind": "stacked",
            "k": self.k,
            "n": self.n_in,
            "parts": [
                {"scale": s, **e.descriptor()} for e, s in self.parts
            ],
        }


def l2_embedding(kind, k, n, seed):
    """Construct an oblivious l2 -> l2 embedding (also used for second-level maps)."""
    return L2Embedding(kind, k, n, seed)


class MetricEmbedding:
    """Embedding of the metric space into l2: ``x -> core(Q x)``."""

    def __init__(self, core, ip):
        if core.n_in != ip.Q.shape[0]:
            raise ValueError(
                f"core acts on {core.n_in} rows but the metric factor has "
                f"{ip.Q.shape[0]} rows"
            )
        self.core = core
        self.ip = ip

    @property
    def k(self):
        return self.core.k

    @property
    def n(self):
        return self.ip.n

    def apply(self, M):
        return self.core.apply(self.ip.apply_factor(M))

    def sketch_dual(self, Y):
        """Sketch of the metric-inverse image of a dual vector: core(Q R^{-1} y)."""
        return self.apply(self.ip.solve(Y))

    def descriptor(self):
        return self.core.descriptor()


def metric_embedding(kind, k, ip, seed):
    core = L2Embedding(kind, k, ip.Q.shape[0], seed)
    return MetricEmbedding(core, ip)


def oblivious_size(kind, eps, delta, d, n=None, constants=None):
    """A priori number of rows for an (eps, delta, d) oblivious embedding.

    The returned values follow the usual ``eps^-2 (d + log(1/delta))`` law for
    Gaussian embeddings and the ``(sqrt(d) + sqrt(8 log(6 n / delta)))^2
    log(3 d / delta)`` form for SRHT. The leading constants are configurable
    calibration data with conservative defaults, not derived guarantees.
    """
    if not (0 < eps < 1) or not (0 < delta < 1) or d < 1:
        raise ValueError("need 0 < eps < 1, 0 < delta < 1 and d >= 1")
    c = dict(constants or {})
    if kind == "gaussian":
        cg = c.get("gaussian_c", GAUSSIAN_C)
        cd = c.get("gaussian_dim_factor", GAUSSIAN_DIM_FACTOR)
        return math.ceil(cg * eps**-2 * (cd * d + math.log(1.0 / delta)))
    if kind == "srht":
        if n is None:
            raise ValueError("the SRHT bound needs the ambient dimension n")
        cs = c.get("srht_c", SRHT_C)
        scale = cs / (eps**2 - eps**3 / 3.0)
        width = (math.sqrt(d) + math.sqrt(8.0 * math.log(6.0 * n / delta))) ** 2
        return math.ceil(scale * width * math.log(3.0 * d / delta))
    if kind == "rowsample":
        raise ValueError("row sampling admits no oblivious a priori size")
    raise ValueError(f"unknown embedding kind {kind!r}")


def orthonormalize(V, ip=None):
    """Orthonormal basis of span(V) w.r.t. the metric (or l2 when ip is None).

    Returns ``V T`` with a triangular coordinate change ``T``; raises on
    rank-deficient input.
    """
    V = np.asarray(V)
    if V.ndim == 1:
        V = V.reshape(-1, 1)
    if V.shape[1] == 0:
        return V.copy()
    G = V if ip is None else ip.apply_factor(V)
    _, R = scipy.linalg.qr(G, mode="economic")
    diag = np.abs(np.diag(R))
    if np.min(diag) <= 1e-13 * max(np.max(diag), 1e-300):
        raise np.linalg.LinAlgError("input columns are (numerically) rank deficient")
    return scipy.linalg.solve_triangular(R, V.T.conj(), trans="C").T.conj()


def embedding_distortion(emb, V, ip=None):
    """Exact worst-case metric distortion of ``emb`` on span(V) (oracle).

    Returns ``max(1 - s_min^2, s_max^2 - 1)`` over the singular values of the
    embedded orthonormalized basis: the smallest ``eps`` for which the sketched
    inner product matches the true one on the subspace to relative accuracy
    ``eps``.
    """
    if isinstance(emb, MetricEmbedding) and ip is None:
        ip = emb.ip
    B = orthonormalize(V, ip)
    S = emb.apply(B)
    svals = scipy.linalg.svdvals(S)
    return float(max(1.0 - svals[-1] ** 2, svals[0] ** 2 - 1.0))
