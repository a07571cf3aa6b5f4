"""Synthetic desk-scale benchmark families.

Three affine families exercise the solvers:

* ``coercive-diffusion``: SPD-dominant diffusion with subdomain terms.
* ``noncoercive-shifted``: shifted Helmholtz-like pencil ``K - mu0 M + j mu1 M``
  whose conditioning is set exactly through the closed-form generalized
  eigenvalues of the 1-D P1 stiffness/mass pair.
* ``superposition-transport``: right-hand sides driving solutions that are
  superpositions of parameter-translated profiles, written affinely through
  trigonometric shift identities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .systems import (
    AffineOperator,
    AffineParametricSystem,
    AffineVector,
    InnerProduct,
    ParameterDomain,
    save_bundle,
)

__all__ = [
    "BenchmarkSpec",
    "make_system",
    "superposition_components",
    "generate",
    "FAMILIES",
]

FAMILIES = ("coercive-diffusion", "noncoercive-shifted", "superposition-transport")
MAX_N = 200_000


@dataclass(frozen=True)
class BenchmarkSpec:
    """Declarative description of one synthetic benchmark instance."""

    family: str
    n: int
    p: int
    seed: int = 0
    m_terms: int | None = None     # affine terms of the operator
    conditioning: float | None = None
    components: int = 2            # superposition family
    frequencies: int = 4           # superposition family

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not (1 <= self.n <= MAX_N):
            raise ValueError(f"n={self.n} outside (0, {MAX_N}]")
        if self.p < 1:
            raise ValueError("need at least one parameter")


def _tridiag(n, lo, main, hi):
    return sp.diags(
        [np.full(n - 1, lo), np.full(n, main), np.full(n - 1, hi)], [-1, 0, 1]
    ).tocsr()


def _smooth_vector(rng, n, scale=1.0):
    x = np.linspace(0.0, 1.0, n)
    freqs = rng.integers(1, 6, size=3)
    amps = rng.standard_normal(3)
    out = sum(a * np.sin(np.pi * f * x) for a, f in zip(amps, freqs))
    return scale * out


def _coercive(spec):
    rng = np.random.default_rng(spec.seed)
    n, p = spec.n, spec.p
    m_a = spec.m_terms if spec.m_terms is not None else p + 1
    base = (n + 1) * _tridiag(n, -1.0, 2.0, -1.0)
    terms = [(base, "1")]
    if m_a > 1:
        edges = np.linspace(0, n, m_a).astype(int)
        for i in range(m_a - 1):
            lo, hi = edges[i], edges[i + 1]
            rows = np.arange(lo, hi)
            block = sp.lil_matrix((n, n))
            sub = (n + 1) * _tridiag(len(rows), -1.0, 2.0, -1.0)
            block[np.ix_(rows, rows)] = sub.toarray()
            terms.append((block.tocsr(), f"mu[{i % p}]"))
    A = AffineOperator(terms)
    if m_a == 1:
        b = AffineVector([(_smooth_vector(rng, n), "1")])
    else:
        b = AffineVector(
            [(_smooth_vector(rng, n), "1"), (_smooth_vector(rng, n), "sin(mu[0])")]
        )
    l = AffineVector([(_smooth_vector(rng, n), "1")])
    R = base + 0.5 * sum(m for m, _ in terms[1:]) if m_a > 1 else base
    ip = InnerProduct(sp.csr_matrix(R))
    domain = ParameterDomain(np.full(p, 0.1), np.full(p, 10.0))
    return AffineParametricSystem(
        A=A, b=b, ip=ip, l=l, field="real", domain=domain,
        meta={"family": spec.family, "seed": spec.seed},
    )


def _fem_pair(n):
    h = 1.0 / (n + 1)
    K = (1.0 / h) * _tridiag(n, -1.0, 2.0, -1.0)
    M = (h / 6.0) * _tridiag(n, 1.0, 4.0, 1.0)
    return K, M


def _fem_eigenvalues(n):
    # generalized eigenvalues of the 1-D P1 pair (K, M), in closed form
    h = 1.0 / (n + 1)
    theta = np.arange(1, n + 1) * np.pi / (n + 1)
    return (6.0 / h**2) * (1.0 - np.cos(theta)) / (2.0 + np.cos(theta))


def _noncoercive(spec):
    rng = np.random.default_rng(spec.seed)
    n, p = spec.n, spec.p
    if p < 2:
        raise ValueError("the shifted family needs at least two parameters")
    K, M = _fem_pair(n)
    lam = _fem_eigenvalues(n)
    i_mid = n // 3
    z = lam[i_mid + 1]
    beta_res = max(abs(lam[0] - z) / lam[0], abs(lam[-1] - z) / lam[-1])
    if spec.conditioning is not None:
        # narrow resonant box: every mu sits within the resonance width, so
        # the metric condition number stays near the requested value
        target = float(spec.conditioning)
        mu1 = beta_res * z / target
        # keep the resonant mode dominant in the minimum
        shrink = 1.0
        mu0_lo, mu0_hi = z - mu1, z + mu1
        mu1_lo, mu1_hi = mu1, 2.0 * mu1
        worst = np.zeros(p)
        worst[0], worst[1] = z, mu1
        ratio = _pencil_ratio(lam, z, mu1)
        if ratio < target:
            shrink = ratio / target
            mu1 *= shrink
            mu0_lo, mu0_hi = z - mu1, z + mu1
            mu1_lo, mu1_hi = mu1, 2.0 * mu1
            worst[1] = mu1
    else:
        mu0_lo, mu0_hi = lam[i_mid], lam[i_mid + 2]
        width = 1e-2 * z
        mu1_lo, mu1_hi = width, 2.0 * width
        worst = np.zeros(p)
        worst[0], worst[1] = z, mu1_lo
    lower = np.zeros(p)
    upper = np.ones(p)
    lower[0], upper[0] = mu0_lo, mu0_hi
    lower[1], upper[1] = mu1_lo, mu1_hi
    A = AffineOperator([(K, "1"), (M, "0 - mu[0]"), (M, "j*mu[1]")])
    smooth = _smooth_vector(rng, n) + 1j * _smooth_vector(rng, n)
    smooth2 = _smooth_vector(rng, n) + 1j * _smooth_vector(rng, n)
    b = AffineVector([(M @ smooth, "1"), (M @ smooth2, f"mu[0]*{float(1.0 / z)!r}")])
    l = AffineVector([(_smooth_vector(rng, n).astype(complex), "1")])
    ip = InnerProduct(K)
    domain = ParameterDomain(lower, upper)
    return AffineParametricSystem(
        A=A, b=b, ip=ip, l=l, field="complex", domain=domain,
        meta={
            "family": spec.family,
            "seed": spec.seed,
            "worst_mu": worst.tolist(),
            "resonance": float(z),
        },
    )


def _pencil_ratio(lam, mu0, mu1):
    ratios = np.abs(lam - (mu0 - 1j * mu1)) / lam
    return float(np.max(ratios) / np.min(ratios))


def _superposition(spec):
    rng = np.random.default_rng(spec.seed)
    n, p = spec.n, spec.p
    l_comp, Q = spec.components, spec.frequencies
    if p not in (l_comp, 2 * l_comp):
        raise ValueError(
            "parameter count must equal the number of components (shifts) or "
            "twice it (shifts + amplitudes)"
        )
    with_amps = p == 2 * l_comp
    x = 2.0 * np.pi * np.arange(n) / n
    h = 2.0 * np.pi / n
    T = _tridiag(n, 1.0, 4.0, 1.0) * (h / 6.0)
    A = AffineOperator([(T, "1")])
    decay = rng.uniform(1.2, 2.2)
    terms = []
    for i in range(l_comp):
        for q in range(1, Q + 1):
            a_q = math.exp(-((q / decay) ** 2))
            amp = f"mu[{l_comp + i}]*" if with_amps else ""
            terms.append((T @ np.cos(q * x), f"{a_q!r}*{amp}cos({q}*mu[{i}])"))
            terms.append((T @ np.sin(q * x), f"{a_q!r}*{amp}sin({q}*mu[{i}])"))
    b = AffineVector(terms)
    l = AffineVector([(np.full(n, h), "1")])
    ip = InnerProduct(_tridiag(n, 1.0, 4.0, 1.0) * (h / 6.0))
    lower = np.zeros(p)
    upper = np.full(p, 2.0 * np.pi)
    if with_amps:
        lower[l_comp:], upper[l_comp:] = 0.5, 1.5
    return AffineParametricSystem(
        A=A, b=b, ip=ip, l=l, field="real", domain=ParameterDomain(lower, upper),
        meta={
            "family": spec.family,
            "seed": spec.seed,
            "components": l_comp,
            "frequencies": Q,
            "decay": float(decay),
        },
    )


def superposition_components(spec):
    """Per-component systems sharing the full instance's operator and metric."""
    if spec.family != "superposition-transport":
        raise ValueError("component split only applies to the superposition family")
    full = _superposition(spec)
    l_comp, Q = spec.components, spec.frequencies
    per = 2 * Q
    out = []
    for i in range(l_comp):
        cols = full.b.columns[:, i * per:(i + 1) * per]
        exprs = full.b.exprs[i * per:(i + 1) * per]
        b = AffineVector(list(zip(cols.T, exprs)))
        out.append(
            AffineParametricSystem(
                A=full.A, b=b, ip=full.ip, field="real", domain=full.domain,
                meta={**full.meta, "component": i},
            )
        )
    return out


_BUILDERS = {
    "coercive-diffusion": _coercive,
    "noncoercive-shifted": _noncoercive,
    "superposition-transport": _superposition,
}


def make_system(spec):
    """Build a benchmark system in memory."""
    return _BUILDERS[spec.family](spec)


def generate(spec, path):
    """Build a benchmark system and write it as a bundle directory."""
    system = make_system(spec)
    return save_bundle(system, path)
