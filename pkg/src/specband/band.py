"""Lower/upper bands on squared InfoNCE gradient norms, and containment checks.

The lower band is algebraic: (1 - rho)^2 / tau^2 with rho the inner product
between the softmax mean and the positive. The upper band combines a softmax
error term and a sampling term at order tau^-2 with spectral terms at tau^-4
and tau^-6; the spectral factor is either the per-anchor negatives-only top
eigenvalue (exact form) or the batch-level ceiling n/(n-2) * sigma_hat (proxy
form). A variance bound with explicit constants covers the whitening study.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .batches import EmbeddingBatch
from .infonce import BatchGradStats, anchor_stats
from .spectrum import per_anchor_sigma_star, sigma_proxy

SAMPLING_MODES = ("independent", "empirical", "correlated")


class BandError(ValueError):
    """Invalid band configuration or inputs outside their contracts."""


@dataclass(frozen=True)
class BandConfig:
    """Constants and switches for the upper band.

    ``c_sm`` scales the tau^-6 term (0.5 by default; the smoothness argument
    itself gives 1/8, and containment verdicts are insensitive across [0, 1]).
    ``sampling_term_mode`` picks the factor multiplying the squared softmax
    error in the sampling term: 1/N- under independence, the measured mean
    ||zbar_i^-||^2, or the pairwise-correlation inflation driven by
    ``mu_corr``. The upper band is clamped to the lower one by default; raw
    values stay available in the component breakdown.
    """

    c_sm: float = 0.5
    clamp_upper_to_lower: bool = True
    sampling_term_mode: str = "independent"
    mu_corr: float = 0.0

    def __post_init__(self):
        if self.c_sm < 0:
            raise BandError(f"c_sm must be >= 0, got {self.c_sm}")
        if self.sampling_term_mode not in SAMPLING_MODES:
            raise BandError(f"sampling_term_mode must be one of {SAMPLING_MODES}")


@dataclass(frozen=True)
class BandEstimate:
    """One band: lower/upper values plus the component breakdown.

    ``components`` holds softmax_error_term and sampling_term without their
    3/tau^2 prefactor, the tau^-4/tau^-6 terms with prefactors included, and
    upper_raw (the unclamped upper value). ``sigma_used`` records the spectral
    factor that entered the tau^-4 term.
    """

    lower: float
    upper: float
    components: dict
    sigma_used: float
    level: str


def lower_band(alignment: float, temperature: float) -> float:
    """(1 - rho)^2 / tau^2; rho may be one anchor's alignment or the batch mean."""
    if temperature <= 0:
        raise BandError(f"temperature must be > 0, got {temperature}")
    r = (1.0 - alignment) / temperature
    return r * r


def _sampling_factor(cfg: BandConfig, n_neg: int, neg_mean_sq) -> float | np.ndarray:
    if cfg.sampling_term_mode == "independent":
        return 1.0 / n_neg
    if cfg.sampling_term_mode == "correlated":
        return correlated_sampling_term(n_neg + 2, cfg.mu_corr)
    return neg_mean_sq  # empirical: measured ||zbar^-||^2


def _assemble(eps_sq, sampling_factor, sigma, lower, temperature, cfg, level) -> BandEstimate:
    t2 = temperature * temperature
    # the sampling mode replaces the 1/N- factor itself, so it multiplies the
    # mean squared softmax error rather than coupling per anchor
    softmax_error_term = float(np.mean(eps_sq))
    sampling_term = softmax_error_term * float(np.mean(sampling_factor))
    tau4 = 3.0 / (t2 * t2) * float(np.mean(np.asarray(eps_sq) * np.asarray(sigma)))
    tau6 = 3.0 * cfg.c_sm / (t2 * t2 * t2) * float(np.mean(np.asarray(eps_sq) * np.asarray(sigma) ** 2))
    upper_raw = 3.0 / t2 * (softmax_error_term + sampling_term) + tau4 + tau6
    upper = max(upper_raw, lower) if cfg.clamp_upper_to_lower else upper_raw
    return BandEstimate(
        lower=lower,
        upper=upper,
        components={
            "softmax_error_term": softmax_error_term,
            "sampling_term": sampling_term,
            "tau4_spectral_term": tau4,
            "tau6_spectral_term": tau6,
            "upper_raw": upper_raw,
        },
        sigma_used=float(np.mean(np.asarray(sigma))),
        level=level,
    )


def _check_sigmas(sigma) -> np.ndarray:
    s = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    if np.any(s < 0.0) or np.any(s > 1.0 + 1e-9):
        raise BandError("spectral factors must lie in [0, 1 + 1e-9]")
    return s


def upper_band_exact(
    stats: BatchGradStats,
    per_anchor_sigma: Sequence[float],
    temperature: float,
    cfg: BandConfig = BandConfig(),
) -> BandEstimate:
    """Batch-level upper band from per-anchor spectral factors.

    per_anchor_sigma[i] must be the top eigenvalue of anchor i's negatives-
    only moment, in the same order as ``stats.per_anchor``.
    """
    if temperature <= 0:
        raise BandError(f"temperature must be > 0, got {temperature}")
    sig = _check_sigmas(per_anchor_sigma)
    if sig.size != len(stats.per_anchor):
        raise BandError("one spectral factor per anchor required")
    eps_sq = stats.eps ** 2
    n_neg = _n_negatives(stats)
    factor = _sampling_factor(cfg, n_neg, stats.neg_mean_sq)
    lower = lower_band(stats.mean_alignment, temperature)
    return _assemble(eps_sq, factor, sig, lower, temperature, cfg, level="batch")


def upper_band_proxy(
    stats: BatchGradStats,
    lambda_max_batch: float,
    n: int,
    temperature: float,
    cfg: BandConfig = BandConfig(),
) -> BandEstimate:
    """Batch-level upper band with every spectral factor replaced by the
    uniform ceiling min(1, n/(n-2) * sigma_hat)."""
    if temperature <= 0:
        raise BandError(f"temperature must be > 0, got {temperature}")
    proxy = sigma_proxy(lambda_max_batch, n)
    _check_sigmas(proxy)
    eps_sq = stats.eps ** 2
    n_neg = n - 2
    factor = _sampling_factor(cfg, n_neg, stats.neg_mean_sq)
    lower = lower_band(stats.mean_alignment, temperature)
    return _assemble(eps_sq, factor, proxy, lower, temperature, cfg, level="batch")


def per_anchor_bands(
    stats: BatchGradStats,
    per_anchor_sigma: Sequence[float],
    temperature: float,
    cfg: BandConfig = BandConfig(),
) -> list[BandEstimate]:
    """One exact band per anchor: lower from its own alignment, upper from its
    own softmax error, sampling factor, and spectral factor."""
    if temperature <= 0:
        raise BandError(f"temperature must be > 0, got {temperature}")
    sig = _check_sigmas(per_anchor_sigma)
    if sig.size != len(stats.per_anchor):
        raise BandError("one spectral factor per anchor required")
    n_neg = _n_negatives(stats)
    out = []
    for a, s in zip(stats.per_anchor, sig):
        eps_sq = a.epsilon * a.epsilon
        factor = _sampling_factor(cfg, n_neg, a.neg_mean_sq)
        lower = lower_band(a.alignment, temperature)
        out.append(_assemble(eps_sq, factor, s, lower, temperature, cfg, level="per_anchor"))
    return out


def _n_negatives(stats: BatchGradStats) -> int:
    return stats.n_negatives


def variance_band(n: int, temperature: float, sigma_star: float, eps_sq_mean: float) -> dict:
    """Per-sample variance bound: A(N-, tau) * sigma_star + B_tau.

    A = (3 / (N- tau^4)) (1 - 1/N-) and B_tau = mean eps^2 * (1 + 1/N-).
    """
    if n <= 2:
        raise BandError(f"need n > 2, got {n}")
    if temperature <= 0:
        raise BandError(f"temperature must be > 0, got {temperature}")
    n_neg = n - 2
    t4 = temperature ** 4
    a_coeff = (3.0 / (n_neg * t4)) * (1.0 - 1.0 / n_neg)
    b_tau = eps_sq_mean + eps_sq_mean / n_neg
    return {"A_coeff": a_coeff, "B_tau": b_tau, "bound": a_coeff * sigma_star + b_tau}


def whitening_ceiling(a_coeff: float, b_tau: float, d: int) -> float:
    """Largest variance reduction the bound allows: (A + B) / (A/d + B)."""
    return (a_coeff + b_tau) / (a_coeff / d + b_tau)


def correlated_sampling_term(n: int, mu_corr: float) -> float:
    """Sampling factor under pairwise correlation: 1/N- + ((N- - 1)/N-) mu_corr."""
    if n <= 2:
        raise BandError(f"need n > 2, got {n}")
    n_neg = n - 2
    return 1.0 / n_neg + ((n_neg - 1) / n_neg) * mu_corr


def containment_check(grad_sq: Sequence[float], bands: Sequence[BandEstimate]) -> dict:
    """Fraction of anchors inside / below / above their bands.

    Tolerance is 1e-9 relative to each bound, so the algebraic lower band is
    never flagged by rounding alone.
    """
    g = np.asarray(grad_sq, dtype=np.float64)
    if g.size != len(bands):
        raise BandError("one band per measured gradient required")
    lo = np.array([b.lower for b in bands])
    hi = np.array([b.upper for b in bands])
    rel = 1e-9
    below = g < lo - rel * np.abs(lo)
    above = g > hi + rel * np.abs(hi)
    inside = ~(below | above)
    return {
        "in_rate": float(np.mean(inside)),
        "below_rate": float(np.mean(below)),
        "above_rate": float(np.mean(above)),
        "n": int(g.size),
    }


def remainder_check(batch: EmbeddingBatch, anchor: int, temperature: float, c_sm: float = 0.5) -> dict:
    """Second-order softmax remainder versus its spectral bound for one anchor.

    Splits delta = M - z_pos into the softmax-error, sampling, and adaptive
    parts (A + B + C reconstructs delta exactly), linearizes the negatives-
    only weights around uniform to peel off C1, and compares ||C2||^2 against
    (c_sm / tau^4) * eps^2 * sigma_star^2.
    """
    st = anchor_stats(batch, anchor, temperature)
    z = batch.rows
    i = int(anchor)
    j = batch.positive_of(i)
    n = batch.n
    n_neg = n - 2

    sims = z @ z[i]
    logits = sims / temperature
    logits[i] = -np.inf
    shift = np.max(logits)
    w = np.exp(logits - shift)
    w[i] = 0.0
    p = w / np.sum(w)

    mask = np.ones(n, dtype=bool)
    mask[i] = False
    mask[j] = False
    zn = z[mask]
    pn = p[mask]
    one_minus = 1.0 - float(min(max(p[j], 0.0), 1.0))

    if one_minus == 0.0:
        q = np.full(n_neg, 1.0 / n_neg)
    else:
        q = pn / np.sum(pn)
    delta = st.softmax_mean - z[j]
    a_part = -st.epsilon * z[j]
    neg_mean = np.mean(zn, axis=0)
    b_part = one_minus * neg_mean
    c_part = one_minus * ((q - 1.0 / n_neg) @ zn)

    s_neg = sims[mask]
    s_bar = float(np.mean(s_neg))
    c1 = (one_minus / (n_neg * temperature)) * ((s_neg - s_bar) @ zn)
    c2 = c_part - c1

    sigma = float(per_anchor_sigma_star(batch, [i])[0])
    bound = (c_sm / temperature ** 4) * (st.epsilon ** 2) * (sigma ** 2)
    return {
        "lhs": float(c2 @ c2),
        "rhs": bound,
        "delta": delta,
        "a_part": a_part,
        "b_part": b_part,
        "c_part": c_part,
        "c1_sq": float(c1 @ c1),
        "sigma_star": sigma,
    }
