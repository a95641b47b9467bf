"""In-batch whitening and the raw/whitened alternation driver.

Whitening maps every row through (Sigma + eps I)^(-1/2) built from the batch
second moment, then renormalizes back to the sphere. Renormalization makes the
map slightly nonlinear, so the whitened top eigenvalue lands near 1/d rather
than exactly on it; callers asserting isotropy should use the 2/d ceiling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batches import EmbeddingBatch, SpectrumSpec, attach_positives, synth_spectral_batch
from .infonce import batch_grad_stats
from .rng import child_seed
from .spectrum import batch_second_moment_rows, lambda_max_rows


class WhitenError(ValueError):
    """Invalid ridge or malformed alternation setup."""


@dataclass(frozen=True)
class WhitenConfig:
    ridge_epsilon: float = 1e-5
    renormalize: bool = True

    def __post_init__(self):
        if self.ridge_epsilon <= 0:
            raise WhitenError(f"ridge_epsilon must be > 0, got {self.ridge_epsilon}")


def inverse_sqrt_psd(matrix: np.ndarray, ridge: float) -> np.ndarray:
    """(M + ridge I)^(-1/2) for symmetric PSD M via eigendecomposition."""
    m = np.asarray(matrix, dtype=np.float64)
    try:
        vals, vecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise WhitenError(f"eigendecomposition failed: {exc}") from exc
    inv_sqrt = 1.0 / np.sqrt(np.clip(vals, 0.0, None) + ridge)
    return (vecs * inv_sqrt) @ vecs.T


def whiten_rows(rows: np.ndarray, cfg: WhitenConfig = WhitenConfig()) -> np.ndarray:
    """Whitened rows; renormalized to unit length unless cfg says otherwise."""
    z = np.asarray(rows, dtype=np.float64)
    if z.shape[0] < 2:
        raise WhitenError(f"need at least 2 rows, got {z.shape[0]}")
    moment = batch_second_moment_rows(z)
    w = inverse_sqrt_psd(moment.matrix, cfg.ridge_epsilon)
    out = z @ w  # w is symmetric
    if cfg.renormalize:
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise WhitenError("whitening produced a zero row")
        out = out / norms
    return out


def whiten_batch(batch: EmbeddingBatch, cfg: WhitenConfig = WhitenConfig()) -> EmbeddingBatch:
    """Whitened copy of the batch, pairing preserved; requires renormalization.

    Without renormalization the rows leave the unit sphere and cannot form an
    ``EmbeddingBatch``; use :func:`whiten_rows` for that diagnostic path.
    """
    if not cfg.renormalize:
        raise WhitenError("whiten_batch requires cfg.renormalize; use whiten_rows for raw output")
    return EmbeddingBatch(rows=whiten_rows(batch.rows, cfg), pairing=batch.pairing)


@dataclass(frozen=True)
class AlternationResult:
    """Per-step series and regime summaries of one raw/whitened alternation."""

    sigma_series: np.ndarray
    gamma_series: np.ndarray
    eps_sq_series: np.ndarray
    regime: np.ndarray  # "raw" / "whitened" per step
    rolling_var: dict
    regime_mean_sigma: dict
    regime_mean_var: dict
    variance_ratio: float


def rolling_variance(values: np.ndarray, window: int) -> np.ndarray:
    """Trailing variance over ``window`` points; defined from index window-1 on."""
    x = np.asarray(values, dtype=np.float64)
    if window > x.size:
        raise WhitenError(f"window {window} exceeds series length {x.size}")
    out = np.empty(x.size - window + 1)
    for k in range(out.size):
        out[k] = np.var(x[k : k + window])
    return out


def alternation_run(
    eigenvalues: np.ndarray,
    pairs: int,
    d: int,
    temperature: float,
    cosine: float,
    steps_per_regime: int = 100,
    window: int = 50,
    cfg: WhitenConfig = WhitenConfig(),
    seed: int = 0,
) -> AlternationResult:
    """Stream ``steps_per_regime`` raw then whitened batches; track variability.

    Each step draws a fresh batch (``pairs`` spectrum rows plus attached
    positives) from a derived seed, whitens it in the whitened regime, and
    logs the top moment eigenvalue and the batch-mean squared gradient. The
    rolling variance uses only windows fully inside one regime, and the
    headline number is the ratio of regime-mean rolling variances.
    """
    if window > steps_per_regime:
        raise WhitenError(f"window {window} exceeds steps_per_regime {steps_per_regime}")
    sigma = []
    gamma = []
    eps_sq = []
    regime = []
    for step in range(2 * steps_per_regime):
        whitened = step >= steps_per_regime
        step_spec = SpectrumSpec(eigenvalues=eigenvalues, seed=child_seed(seed, 0, step))
        anchors = synth_spectral_batch(step_spec, pairs, d, rotation="identity")
        b = attach_positives(anchors, cosine, seed=child_seed(seed, 1, step))
        if whitened:
            b = whiten_batch(b, cfg)
        stats = batch_grad_stats(b, temperature)
        sigma.append(lambda_max_rows(b.rows))
        gamma.append(stats.mean_grad_sq)
        eps_sq.append(stats.mean_eps_sq)
        regime.append("whitened" if whitened else "raw")
    sigma = np.array(sigma)
    gamma = np.array(gamma)
    eps_sq = np.array(eps_sq)
    regime = np.array(regime)

    halves = {
        "raw": gamma[:steps_per_regime],
        "whitened": gamma[steps_per_regime:],
    }
    rolling = {k: rolling_variance(v, window) for k, v in halves.items()}
    mean_var = {k: float(np.mean(v)) for k, v in rolling.items()}
    mean_sigma = {
        "raw": float(np.mean(sigma[:steps_per_regime])),
        "whitened": float(np.mean(sigma[steps_per_regime:])),
    }
    ratio = mean_var["raw"] / mean_var["whitened"]
    return AlternationResult(
        sigma_series=sigma,
        gamma_series=gamma,
        eps_sq_series=eps_sq,
        regime=regime,
        rolling_var=rolling,
        regime_mean_sigma=mean_sigma,
        regime_mean_var=mean_var,
        variance_ratio=float(ratio),
    )
