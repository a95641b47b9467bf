"""Unit-sphere embedding batches with controlled spectrum, alignment, and correlation.

A batch is a single n x d matrix of unit-norm rows plus a pairing array that
maps an anchor row to its positive row. Positives live in the same matrix, so
every spectral quantity (second moments, Grams, effective rank) is computed
over one uniform row set; operations that want a subset take explicit indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import stream

NORM_TOL = 1e-9

# |cosine| at or above this is rejected: sqrt(1 - c^2) loses all precision and
# the aligned-positive construction degenerates to a duplicate row.
MAX_COSINE = 1.0 - 1e-12

_GS_MAX_REDRAWS = 16


class BatchError(ValueError):
    """Invalid batch construction or malformed generation parameters."""


@dataclass(frozen=True)
class EmbeddingBatch:
    """Immutable n x d matrix of unit rows with an anchor -> positive pairing.

    ``pairing[i]`` is the row index of row i's positive, or -1 when row i has
    none. Pairings produced by the generators here are symmetric (i and its
    positive point at each other) but that is not required.
    """

    rows: np.ndarray
    pairing: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        pairing = np.asarray(self.pairing, dtype=np.int64)
        if rows.ndim != 2:
            raise BatchError(f"rows must be 2-d, got shape {rows.shape}")
        n = rows.shape[0]
        if n <= 2:
            raise BatchError(f"batch needs n > 2 rows, got {n}")
        if pairing.shape != (n,):
            raise BatchError(f"pairing must have shape ({n},), got {pairing.shape}")
        norms = np.linalg.norm(rows, axis=1)
        worst = float(np.max(np.abs(norms - 1.0)))
        if worst > NORM_TOL:
            raise BatchError(f"rows must be unit norm within {NORM_TOL}, worst deviation {worst:.3e}")
        paired = pairing >= 0
        if np.any(pairing[paired] >= n) or np.any(pairing[paired] == np.nonzero(paired)[0]):
            raise BatchError("pairing must reference a distinct valid row")
        rows = rows.copy()
        rows.setflags(write=False)
        pairing = pairing.copy()
        pairing.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "pairing", pairing)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def anchors(self) -> np.ndarray:
        """Indices of rows that have a registered positive."""
        return np.nonzero(self.pairing >= 0)[0]

    def positive_of(self, anchor: int) -> int:
        j = int(self.pairing[anchor])
        if j < 0:
            raise BatchError(f"row {anchor} has no registered positive")
        return j


@dataclass(frozen=True)
class SpectrumSpec:
    """Target trace-one spectrum (descending not required) and a seed."""

    eigenvalues: np.ndarray
    seed: int

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=np.float64)
        if lam.ndim != 1 or lam.size < 2:
            raise BatchError("eigenvalues must be a vector of length >= 2")
        if np.any(lam < 0):
            raise BatchError("eigenvalues must be nonnegative")
        s = float(np.sum(lam))
        if abs(s - 1.0) > 1e-12:
            raise BatchError(f"eigenvalues must sum to 1 within 1e-12, got {s!r}")
        lam = lam.copy()
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)


@dataclass(frozen=True)
class CorrelationSpec:
    """Shared-component weight alpha in [0, 1) and a seed."""

    alpha: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise BatchError(f"alpha must lie in [0, 1), got {self.alpha}")


def haar_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed d x d rotation: QR of a Gaussian with R-diagonal sign fix."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def uniform_spectrum(d: int) -> np.ndarray:
    """Isotropic target: every eigenvalue 1/d."""
    return np.full(d, 1.0 / d)


def spiked_spectrum(d: int, lambda1: float) -> np.ndarray:
    """Top eigenvalue ``lambda1``, remaining mass spread uniformly."""
    if not 0.0 < lambda1 <= 1.0:
        raise BatchError(f"lambda1 must lie in (0, 1], got {lambda1}")
    lam = np.full(d, (1.0 - lambda1) / (d - 1))
    lam[0] = lambda1
    return lam


def synth_spectral_batch(
    spec: SpectrumSpec,
    n: int,
    d: int,
    rotation: np.ndarray | str | None = None,
) -> EmbeddingBatch:
    """Draw n unit rows whose second moment targets ``spec.eigenvalues``.

    Rows are A x / ||A x|| with x standard Gaussian and A = U diag(lambda)^1/2.
    ``rotation`` selects U: None draws a Haar rotation from the spec's seed,
    "identity" skips it (every inner product, eigenvalue, and band quantity is
    invariant to U, so sweeps use this to avoid a d x d QR per batch), or pass
    an explicit orthogonal matrix.

    The returned batch has no positives; see :func:`attach_positives`.
    """
    lam = spec.eigenvalues
    if lam.size != d:
        raise BatchError(f"spec has {lam.size} eigenvalues but d={d}")
    if n <= 2:
        raise BatchError(f"need n > 2, got {n}")
    rng = stream(spec.seed, 0)
    x = rng.standard_normal((n, d)) * np.sqrt(lam)
    if rotation is None:
        u = haar_rotation(d, stream(spec.seed, 1))
        x = x @ u.T
    elif isinstance(rotation, str):
        if rotation != "identity":
            raise BatchError(f"unknown rotation mode {rotation!r}")
    else:
        u = np.asarray(rotation, dtype=np.float64)
        if u.shape != (d, d):
            raise BatchError(f"rotation must be {d}x{d}, got {u.shape}")
        x = x @ u.T
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise BatchError("degenerate zero-norm draw; spectrum has no positive mass")
    rows = x / norms[:, None]
    return EmbeddingBatch(rows=rows, pairing=np.full(n, -1, dtype=np.int64))


def attach_positives(batch: EmbeddingBatch, cosine: float, seed: int) -> EmbeddingBatch:
    """Append one positive per existing row at exact inner product ``cosine``.

    Each positive is c*z + sqrt(1-c^2)*u with u a fresh Gaussian direction
    Gram-Schmidt-orthogonalized against z (redrawn on degeneracy, error after
    16 failures). The result has 2n rows and a symmetric pairing i <-> n+i.
    """
    if abs(cosine) >= MAX_COSINE:
        raise BatchError(f"|cosine| must be < {MAX_COSINE!r}, got {cosine}")
    if np.any(batch.pairing >= 0):
        raise BatchError("batch already has positives attached")
    z = batch.rows
    n, d = z.shape
    rng = stream(seed, 2)
    g = rng.standard_normal((n, d))
    perp = g - np.sum(g * z, axis=1, keepdims=True) * z
    norms = np.linalg.norm(perp, axis=1)
    bad = np.nonzero(norms < 1e-12)[0]
    for i in bad:
        for attempt in range(_GS_MAX_REDRAWS):
            gi = rng.standard_normal(d)
            pi = gi - (gi @ z[i]) * z[i]
            ni = np.linalg.norm(pi)
            if ni >= 1e-12:
                perp[i] = pi
                norms[i] = ni
                break
        else:
            raise BatchError(f"Gram-Schmidt degenerate for row {i} after {_GS_MAX_REDRAWS} redraws")
    perp /= norms[:, None]
    # sqrt((1-c)(1+c)) keeps precision for |c| near 1
    sine = np.sqrt((1.0 - cosine) * (1.0 + cosine))
    pos = cosine * z + sine * perp
    rows = np.vstack([z, pos])
    pairing = np.concatenate([np.arange(n, 2 * n), np.arange(0, n)]).astype(np.int64)
    return EmbeddingBatch(rows=rows, pairing=pairing)


def synth_correlated_negatives(spec: CorrelationSpec, n: int, d: int) -> EmbeddingBatch:
    """Batch with mean pairwise inner product ~ alpha via a shared component.

    Each row mixes one shared unit direction u with a per-row unit Gaussian
    direction: z_j = sqrt(alpha)*u + sqrt(1-alpha)*xi_j, renormalized. The
    per-row directions must be unit before mixing, otherwise the Gaussian's
    sqrt(d) norm swamps the shared component and the mean inner product
    collapses to alpha/d instead of alpha.

    Rows are paired i <-> i + n/2 so the batch is ready for gradient stats;
    n must be even.
    """
    if n <= 2 or n % 2 != 0:
        raise BatchError(f"need even n > 2, got {n}")
    rng = stream(spec.seed, 3)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    xi = rng.standard_normal((n, d))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    z = np.sqrt(spec.alpha) * u + np.sqrt(1.0 - spec.alpha) * xi
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    half = n // 2
    pairing = np.concatenate([np.arange(half, n), np.arange(0, half)]).astype(np.int64)
    return EmbeddingBatch(rows=z, pairing=pairing)


def mean_pairwise_inner(batch: EmbeddingBatch) -> float:
    """Average of <z_j, z_k> over all ordered pairs j != k."""
    z = batch.rows
    n = batch.n
    total = z.sum(axis=0)
    s = float(total @ total) - float(np.sum(z * z))
    return s / (n * (n - 1))
