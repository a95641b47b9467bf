"""Second-moment construction and spectral summaries.

Everything here works on trace-one second moments of unit-norm rows: top
eigenvalue (power iteration), effective rank (Gram and trace routes), the
one-step trace recurrence used by the greedy builder, Rayleigh scores, the
batch-level anisotropy proxy, and the isotropy-deviation diagnostic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .batches import EmbeddingBatch

POWER_TOL = 1e-10
POWER_MAX_ITER = 5000

SYMMETRY_TOL = 1e-10


class SpectrumError(ValueError):
    """Malformed moment or invalid spectral query."""


class PowerIterationWarning(RuntimeWarning):
    """Rayleigh quotient did not settle within the iteration cap."""


@dataclass(frozen=True)
class SecondMoment:
    """Symmetric PSD d x d moment with its trace and contributing-row count."""

    matrix: np.ndarray
    trace: float
    source_count: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise SpectrumError(f"moment must be square, got {m.shape}")
        skew = float(np.max(np.abs(m - m.T))) if m.size else 0.0
        if skew > SYMMETRY_TOL:
            raise SpectrumError(f"moment must be symmetric within {SYMMETRY_TOL}, got {skew:.3e}")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class SpectralSummary:
    """Batch-level spectral diagnostics."""

    lambda_max: float
    effective_rank: float
    trace_sq: float
    isotropy_deviation_pct: float


def batch_second_moment(batch: EmbeddingBatch, indices=None) -> SecondMoment:
    """Mean outer product over the given row indices (all rows by default)."""
    if indices is None:
        z = batch.rows
    else:
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            raise SpectrumError("empty index set")
        z = batch.rows[idx]
    k = z.shape[0]
    m = (z.T @ z) / k
    m = 0.5 * (m + m.T)
    tr = float(np.sum(z * z)) / k
    return SecondMoment(matrix=m, trace=tr, source_count=k)


def _power_start(d: int) -> np.ndarray:
    # Fixed pseudo-random perturbation of all-ones: deterministic, and never
    # orthogonal to a data-dependent eigenvector in practice.
    offsets = np.random.Generator(np.random.Philox(np.random.SeedSequence(0x5BA9D0FF))).uniform(
        -0.25, 0.25, size=d
    )
    v = 1.0 + offsets
    return v / np.linalg.norm(v)


def lambda_max(m: SecondMoment | np.ndarray) -> float:
    """Top eigenvalue by power iteration with a deterministic start vector.

    Stops when successive Rayleigh quotients differ by less than 1e-10, hard
    cap 5000 iterations (a cap hit warns and returns the last iterate). The
    result is clamped to [0, trace].
    """
    if isinstance(m, SecondMoment):
        a = m.matrix
        tr = m.trace
    else:
        a = np.asarray(m, dtype=np.float64)
        tr = float(np.trace(a))
    d = a.shape[0]
    v = _power_start(d)
    rayleigh = float(v @ (a @ v))
    converged = False
    for _ in range(POWER_MAX_ITER):
        w = a @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            rayleigh = 0.0
            converged = True
            break
        v = w / norm
        nxt = float(v @ (a @ v))
        if abs(nxt - rayleigh) < POWER_TOL:
            rayleigh = nxt
            converged = True
            break
        rayleigh = nxt
    if not converged:
        warnings.warn(
            f"power iteration hit the {POWER_MAX_ITER}-iteration cap; returning last Rayleigh quotient",
            PowerIterationWarning,
        )
    return float(min(max(rayleigh, 0.0), tr))


def lambda_max_rows(rows: np.ndarray) -> float:
    """Top eigenvalue of the rows' mean outer product, via the smaller Gram.

    Equals ``lambda_max(batch_second_moment(...))`` but runs power iteration
    on the n x n Gram when n < d instead of forming the d x d moment.
    """
    z = np.asarray(rows, dtype=np.float64)
    n, d = z.shape
    if n < d:
        g = z @ z.T
        tr = float(np.trace(g))
        val = lambda_max(SecondMoment(matrix=0.5 * (g + g.T), trace=tr, source_count=n))
        return val / n
    return lambda_max(batch_second_moment_rows(z))


def batch_second_moment_rows(rows: np.ndarray) -> SecondMoment:
    """Moment of a plain row matrix (no batch wrapper)."""
    z = np.asarray(rows, dtype=np.float64)
    k = z.shape[0]
    m = (z.T @ z) / k
    m = 0.5 * (m + m.T)
    return SecondMoment(matrix=m, trace=float(np.sum(z * z)) / k, source_count=k)


def trace_sq(m: SecondMoment) -> float:
    """tr(Sigma^2) as the squared Frobenius norm; no eigendecomposition."""
    return float(np.sum(m.matrix * m.matrix))


def effective_rank_gram(batch: EmbeddingBatch | np.ndarray, indices=None) -> float:
    """Effective rank n^2 / ||Z Z^T||_F^2 via the smaller Gram.

    Uses the n x n Gram when n <= d; otherwise the d x d product with the
    trace-normalized form (tr H)^2 / ||H||_F^2. Clipped to [1, min(n, d)].
    """
    z = batch.rows if isinstance(batch, EmbeddingBatch) else np.asarray(batch, dtype=np.float64)
    if indices is not None:
        z = z[np.asarray(indices, dtype=np.int64)]
    n, d = z.shape
    if n <= d:
        g = z @ z.T
        r = n * n / float(np.sum(g * g))
    else:
        h = z.T @ z
        r = float(np.trace(h)) ** 2 / float(np.sum(h * h))
    return float(np.clip(r, 1.0, min(n, d)))


def trace_update(t_b: float, b: int, q: float, candidate_norm4: float = 1.0) -> float:
    """tr(Sigma^2) after appending one candidate: (b^2 t + 2b q + ||z||^4) / (b+1)^2."""
    return (b * b * t_b + 2.0 * b * q + candidate_norm4) / float((b + 1) * (b + 1))


def rayleigh_score(member_dots: np.ndarray) -> float:
    """q_B(z) = mean of squared inner products against the current members.

    ``member_dots`` holds <z, z'> for each member z'; cost is O(b).
    """
    d = np.asarray(member_dots, dtype=np.float64)
    if d.size == 0:
        raise SpectrumError("partial batch is empty")
    return float(np.mean(d * d))


def rayleigh_quotient(m: SecondMoment, candidate: np.ndarray) -> float:
    """Dense z^T Sigma z, the reference for :func:`rayleigh_score`."""
    z = np.asarray(candidate, dtype=np.float64)
    return float(z @ (m.matrix @ z))


def sigma_proxy(lambda_max_batch: float, n: int) -> float:
    """Uniform ceiling min(1, n/(n-2) * sigma_hat) on every negatives-only top eigenvalue."""
    if n <= 2:
        raise SpectrumError(f"need n > 2, got {n}")
    return min(1.0, (n / (n - 2.0)) * lambda_max_batch)


def isotropy_deviation(m: SecondMoment, d: int | None = None) -> float:
    """Percent Frobenius distance from the isotropic moment: 100 sqrt(d) ||Sigma - I/d||_F."""
    if d is None:
        d = m.dim
    a = m.matrix - np.eye(d) / d
    return 100.0 * np.sqrt(d) * float(np.linalg.norm(a))


def spectrum_deviation_pct(eigenvalues: np.ndarray) -> float:
    """Same deviation computed from a trace-one eigenvalue vector."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    d = lam.size
    return 100.0 * np.sqrt(d) * float(np.sqrt(np.sum((lam - 1.0 / d) ** 2)))


def spectral_summary(batch: EmbeddingBatch, indices=None) -> SpectralSummary:
    """Top eigenvalue, effective rank (trace route), tr(Sigma^2), isotropy deviation."""
    m = batch_second_moment(batch, indices)
    tilde = SecondMoment(matrix=m.matrix / m.trace, trace=1.0, source_count=m.source_count)
    t2 = trace_sq(tilde)
    reff = float(np.clip(1.0 / t2, 1.0, min(m.source_count, m.dim)))
    return SpectralSummary(
        lambda_max=lambda_max(m),
        effective_rank=reff,
        trace_sq=t2,
        isotropy_deviation_pct=isotropy_deviation(m),
    )


def negatives_only_moment(batch: EmbeddingBatch, anchor: int) -> SecondMoment:
    """Moment over every row except the anchor and its positive."""
    j = batch.positive_of(anchor)
    keep = np.ones(batch.n, dtype=bool)
    keep[anchor] = False
    keep[j] = False
    return batch_second_moment(batch, np.nonzero(keep)[0])


def per_anchor_sigma_star(batch: EmbeddingBatch, anchors=None) -> np.ndarray:
    """Exact lambda_max of the negatives-only moment for each anchor.

    Removing the anchor/positive pair is a rank-2 downdate of the full-batch
    scatter. In the eigenbasis of the smaller Gram side the downdated matrix
    is diagonal minus two outer products, and its eigenvalue counts above any
    shift follow from matrix inertia, so the top eigenvalue is found by
    bisection on the count -- no per-anchor eigendecomposition and immune to
    the clustered spectra that stall power iteration. All anchors share one
    O(min(n,d)^3) eigendecomposition; anchors sharing the same unordered pair
    share the answer.
    """
    if anchors is None:
        anchors = batch.anchors
    anchors = np.asarray(anchors, dtype=np.int64)
    if anchors.size == 0:
        return np.zeros(0)
    z = batch.rows
    n, d = z.shape
    nn = n - 2
    mates = np.array([batch.positive_of(int(a)) for a in anchors], dtype=np.int64)

    # one eigenproblem per unordered pair
    pair_key = np.minimum(anchors, mates) * n + np.maximum(anchors, mates)
    uniq, inverse = np.unique(pair_key, return_inverse=True)
    first = np.zeros(uniq.size, dtype=np.int64)
    first[inverse[::-1]] = np.arange(anchors.size - 1, -1, -1)
    pa = anchors[first]
    pb = mates[first]

    if n <= d:
        g = z @ z.T
        dd, p = np.linalg.eigh(g)
        sq = np.sqrt(np.clip(dd, 0.0, None))
        u1 = sq[None, :] * p[pa, :]
        u2 = sq[None, :] * p[pb, :]
    else:
        h = z.T @ z
        dd, q = np.linalg.eigh(h)
        u1 = z[pa, :] @ q
        u2 = z[pb, :] @ q

    top = _downdate_top_eigenvalues(dd, u1, u2)
    return top[inverse] / nn


def _downdate_top_eigenvalues(dd: np.ndarray, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of diag(dd) - u1 u1^T - u2 u2^T for each row of u1/u2.

    Counts eigenvalues above a shift via the inertia identity for the bordered
    system: count = #(dd > shift) + #(pos eigs of the 2x2 capacitance) - 2.
    Bisection keeps the invariant count(lo) >= 1 > count(hi) = 0.
    """
    m, r = u1.shape
    d1 = float(dd[-1])
    d3 = float(dd[-3]) if r >= 3 else 0.0
    scale = max(d1, 1.0)
    lo = np.full(m, max(d3 - 1e-9 * scale, 0.0))
    hi = np.full(m, d1 + 1e-9 * scale)
    w11 = u1 * u1
    w22 = u2 * u2
    w12 = u1 * u2
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        diff = dd[None, :] - mid[:, None]
        diff = np.where(diff == 0.0, 1e-300, diff)
        inv = 1.0 / diff
        m11 = 1.0 - np.einsum("ij,ij->i", w11, inv)
        m22 = 1.0 - np.einsum("ij,ij->i", w22, inv)
        m12 = -np.einsum("ij,ij->i", w12, inv)
        half_tr = 0.5 * (m11 + m22)
        gap = np.sqrt(0.25 * (m11 - m22) ** 2 + m12 * m12)
        pos2 = (half_tr + gap > 0.0).astype(np.int64) + (half_tr - gap > 0.0).astype(np.int64)
        pos_d = np.sum(dd[None, :] > mid[:, None], axis=1)
        above = pos_d + pos2 - 2
        go_up = above >= 1
        lo = np.where(go_up, mid, lo)
        hi = np.where(go_up, hi, mid)
        if float(np.max(hi - lo)) < 1e-14 * scale:
            break
    return 0.5 * (lo + hi)
