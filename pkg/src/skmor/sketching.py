"""Random sketches of reduced models.

A model sketch holds the embedded basis together with the affine terms of the
embedded residual map: for a basis ``U`` and embedding ``E`` it stores
``E(U)``, one block ``E(R^{-1} A_i U)`` per operator term and one vector
``E(R^{-1} b_j)`` per right-hand-side term (optionally the same for the output
functional). Assembling at a parameter point and every downstream solve then
work on ``k``-sized data only, independent of the full order ``n``.

A second-level sketch compresses all blocks with a small l2 -> l2 map for
cheap solves over large test sets. Sketch bundles serialize to a manifest plus
little-endian binary blocks (format id ``SKMOR1``).
"""

from __future__ import annotations

import json
import pathlib
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import opcount
from .expressions import parse_coeff
from .validation import check_basis

__all__ = [
    "ModelSketch",
    "SketchCompatibilityError",
    "build_sketch",
    "append_to_sketch",
    "compress_sketch",
    "save_sketch",
    "load_sketch",
]

_MAGIC = b"SKMOR1\x00"
_DTYPES = {"f8": np.float64, "c16": np.complex128}


class SketchCompatibilityError(ValueError):
    """Raised when sketches from different embeddings are combined."""


def _same_descriptor(a, b):
    return a == b


@dataclass(frozen=True)
class ModelSketch:
    """Sketched reduced model: embedded basis + affine residual blocks."""

    basis_sk: np.ndarray            # (k, r)
    op_terms: tuple                 # m_A blocks of shape (k, r)
    op_exprs: tuple                 # coefficient expressions for the blocks
    rhs_terms: np.ndarray           # (k, m_b)
    rhs_exprs: tuple
    embedding: dict                 # descriptor of the metric embedding
    out_terms: np.ndarray | None = None   # (k, m_l) sketches of R^{-1} l_j
    out_exprs: tuple | None = None
    compressor: dict | None = None  # descriptor of the second-level map

    @property
    def k(self):
        return self.basis_sk.shape[0]

    @property
    def r(self):
        return self.basis_sk.shape[1]

    @property
    def level(self):
        return 1 if self.compressor is None else 2

    def coefficients(self, mu):
        a = np.array([e(mu) for e in self.op_exprs])
        b = np.array([e(mu) for e in self.rhs_exprs])
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError(f"non-finite sketch coefficient at mu={mu!r}")
        return a, b

    def assemble(self, mu):
        """Evaluate the sketched residual blocks ``(V(mu), b(mu))`` at ``mu``."""
        a, b = self.coefficients(mu)
        V = np.zeros(
            (self.k, self.r),
            dtype=np.result_type(*(t.dtype for t in self.op_terms), a.dtype),
        ) if self.op_terms else np.zeros((self.k, self.r))
        for coeff, term in zip(a, self.op_terms):
            V += coeff * term
        rhs = self.rhs_terms @ b
        opcount.record(
            "assemble",
            2 * len(self.op_terms) * self.k * self.r + 2 * self.k * len(self.rhs_exprs),
            self.k,
            self.r,
        )
        return V, rhs

    def assemble_output(self, mu):
        """Evaluate the sketched dual output vector at ``mu`` (if present)."""
        if self.out_terms is None:
            raise ValueError("this sketch carries no output terms")
        c = np.array([e(mu) for e in self.out_exprs])
        opcount.record("assemble_output", 2 * self.k * c.size, self.k)
        return self.out_terms @ c

    def select(self, indices):
        """Restrict the sketch to a subset of basis columns."""
        idx = np.asarray(indices, dtype=int)
        return replace(
            self,
            basis_sk=self.basis_sk[:, idx],
            op_terms=tuple(t[:, idx] for t in self.op_terms),
        )


def _sketch_blocks(system, emb, basis, include_output):
    basis = check_basis(basis, system.n)
    basis_sk = np.atleast_2d(emb.apply(basis)) if basis.size else np.zeros((emb.k, 0))
    if basis.shape[1] == 0:
        basis_sk = basis_sk.reshape(emb.k, 0)
    op_terms = []
    for m in system.A.matrices:
        if basis.shape[1] == 0:
            op_terms.append(np.zeros((emb.k, 0)))
        else:
            op_terms.append(emb.sketch_dual(m @ basis))
    rhs_terms = emb.sketch_dual(system.b.columns)
    out_terms = out_exprs = None
    if include_output:
        if system.l is None:
            raise ValueError("the system has no output functional to sketch")
        out_terms = emb.sketch_dual(system.l.columns)
        out_exprs = tuple(system.l.exprs)
    return basis_sk, tuple(op_terms), rhs_terms, out_terms, out_exprs


def build_sketch(system, basis, emb, include_output=False):
    """Sketch a reduced basis against a system.

    Every affine term is handled by one metric solve plus one embedding
    application per basis block; no ``n x n`` dense products are formed.
    """
    basis_sk, op_terms, rhs_terms, out_terms, out_exprs = _sketch_blocks(
        system, emb, basis, include_output
    )
    return ModelSketch(
        basis_sk=basis_sk,
        op_terms=op_terms,
        op_exprs=tuple(system.A.exprs),
        rhs_terms=rhs_terms,
        rhs_exprs=tuple(system.b.exprs),
        out_terms=out_terms,
        out_exprs=out_exprs,
        embedding=dict(emb.descriptor()),
    )


def append_to_sketch(sk, system, new_cols, emb):
    """Extend a sketch with new basis columns (equivalent to a fresh build)."""
    if sk.compressor is not None:
        raise SketchCompatibilityError("cannot append to a second-level sketch")
    if not _same_descriptor(sk.embedding, emb.descriptor()):
        raise SketchCompatibilityError(
            f"sketch was built with {sk.embedding}, got {emb.descriptor()}"
        )
    new_cols = check_basis(new_cols, system.n)
    if new_cols.shape[1] == 0:
        return sk
    add_basis, add_ops, _, _, _ = _sketch_blocks(system, emb, new_cols, False)
    return replace(
        sk,
        basis_sk=np.hstack([sk.basis_sk, add_basis]),
        op_terms=tuple(np.hstack([t, a]) for t, a in zip(sk.op_terms, add_ops)),
    )


def compress_sketch(sk, gamma):
    """Second-level sketch: apply a small l2 map to every block."""
    if gamma.n_in != sk.k:
        raise SketchCompatibilityError(
            f"compressor acts on {gamma.n_in} rows, sketch has {sk.k}"
        )
    if gamma.k < 1:
        raise ValueError("the compressed sketch needs at least one row")
    flop = 2 * gamma.k * sk.k
    opcount.record(
        "compress",
        flop * (sk.r * (len(sk.op_terms) + 1) + len(sk.rhs_exprs)),
        gamma.k,
        sk.k,
    )
    return replace(
        sk,
        basis_sk=np.atleast_2d(gamma.apply(sk.basis_sk)).reshape(gamma.k, sk.r),
        op_terms=tuple(
            np.atleast_2d(gamma.apply(t)).reshape(gamma.k, sk.r) for t in sk.op_terms
        ),
        rhs_terms=np.atleast_2d(gamma.apply(sk.rhs_terms)).reshape(gamma.k, -1),
        out_terms=None if sk.out_terms is None
        else np.atleast_2d(gamma.apply(sk.out_terms)).reshape(gamma.k, -1),
        compressor=dict(gamma.descriptor()),
    )


# ---------------------------------------------------------------------------
# binary block format: magic, dtype code, ndim, dims, payload (little-endian)


def write_block(fh, arr):
    arr = np.asarray(arr)
    code = "c16" if np.iscomplexobj(arr) else "f8"
    arr = arr.astype(_DTYPES[code], copy=False)
    fh.write(_MAGIC)
    fh.write(code.ljust(4).encode())
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
    fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def read_block(fh):
    magic = fh.read(len(_MAGIC))
    if magic != _MAGIC:
        raise ValueError("bad block magic; not a sketch block")
    code = fh.read(4).decode().strip()
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
    dtype = np.dtype(_DTYPES[code]).newbyteorder("<")
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype)
    return data.reshape(shape).astype(_DTYPES[code])


def save_sketch(sk, path):
    path = pathlib.Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "SKMOR1",
        "embedding": sk.embedding,
        "compressor": sk.compressor,
        "k": sk.k,
        "r": sk.r,
        "op_exprs": [e.text for e in sk.op_exprs],
        "rhs_exprs": [e.text for e in sk.rhs_exprs],
        "out_exprs": None if sk.out_exprs is None else [e.text for e in sk.out_exprs],
        "blocks": "blocks.bin",
    }
    with open(path / "blocks.bin", "wb") as fh:
        write_block(fh, sk.basis_sk)
        for t in sk.op_terms:
            write_block(fh, t)
        write_block(fh, sk.rhs_terms)
        if sk.out_terms is not None:
            write_block(fh, sk.out_terms)
    (path / "sketch.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_sketch(path):
    path = pathlib.Path(path)
    manifest = json.loads((path / "sketch.json").read_text())
    if manifest.get("format") != "SKMOR1":
        raise ValueError(f"unrecognized sketch format {manifest.get('format')!r}")
    with open(path / manifest["blocks"], "rb") as fh:
        basis_sk = read_block(fh)
        op_terms = tuple(read_block(fh) for _ in manifest["op_exprs"])
        rhs_terms = read_block(fh)
        out_terms = None
        if manifest["out_exprs"] is not None:
            out_terms = read_block(fh)
    return ModelSketch(
        basis_sk=basis_sk,
        op_terms=op_terms,
        op_exprs=tuple(parse_coeff(t) for t in manifest["op_exprs"]),
        rhs_terms=rhs_terms,
        rhs_exprs=tuple(parse_coeff(t) for t in manifest["rhs_exprs"]),
        out_terms=out_terms,
        out_exprs=None if manifest["out_exprs"] is None
        else tuple(parse_coeff(t) for t in manifest["out_exprs"]),
        embedding=manifest["embedding"],
        compressor=manifest.get("compressor"),
    )
