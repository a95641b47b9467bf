"""Spectral gradient-band diagnostics for InfoNCE training.

Synthetic unit-sphere batches with controlled spectra, InfoNCE gradient
statistics, lower/upper bands on squared gradient norms, effective-rank-driven
batch selection, in-batch whitening, and a reproducible experiment harness.
"""

__version__ = "0.1.0"

from .band import (
    BandConfig,
    BandEstimate,
    containment_check,
    correlated_sampling_term,
    lower_band,
    per_anchor_bands,
    remainder_check,
    upper_band_exact,
    upper_band_proxy,
    variance_band,
    whitening_ceiling,
)
from .batches import (
    CorrelationSpec,
    EmbeddingBatch,
    SpectrumSpec,
    attach_positives,
    haar_rotation,
    mean_pairwise_inner,
    spiked_spectrum,
    synth_correlated_negatives,
    synth_spectral_batch,
    uniform_spectrum,
)
from .infonce import AnchorStats, BatchGradStats, anchor_stats, batch_grad_stats, infonce_loss
from .selection import (
    GreedyResult,
    PoolPolicy,
    SelectionState,
    SlidingPercentileWindow,
    centroid_score,
    greedy_build,
    pick_batch,
    random_subset_batch,
    update_target_rank,
)
from .spectrum import (
    SecondMoment,
    SpectralSummary,
    batch_second_moment,
    batch_second_moment_rows,
    effective_rank_gram,
    isotropy_deviation,
    lambda_max,
    lambda_max_rows,
    negatives_only_moment,
    per_anchor_sigma_star,
    rayleigh_quotient,
    rayleigh_score,
    sigma_proxy,
    spectral_summary,
    spectrum_deviation_pct,
    trace_sq,
    trace_update,
)
from .whitening import (
    AlternationResult,
    WhitenConfig,
    alternation_run,
    inverse_sqrt_psd,
    rolling_variance,
    whiten_batch,
    whiten_rows,
)

__all__ = [
    "AnchorStats",
    "AlternationResult",
    "BandConfig",
    "BandEstimate",
    "BatchGradStats",
    "CorrelationSpec",
    "EmbeddingBatch",
    "GreedyResult",
    "PoolPolicy",
    "SecondMoment",
    "SelectionState",
    "SlidingPercentileWindow",
    "SpectralSummary",
    "SpectrumSpec",
    "WhitenConfig",
    "alternation_run",
    "anchor_stats",
    "attach_positives",
    "batch_grad_stats",
    "batch_second_moment",
    "batch_second_moment_rows",
    "centroid_score",
    "containment_check",
    "correlated_sampling_term",
    "effective_rank_gram",
    "greedy_build",
    "haar_rotation",
    "infonce_loss",
    "inverse_sqrt_psd",
    "isotropy_deviation",
    "lambda_max",
    "lambda_max_rows",
    "lower_band",
    "mean_pairwise_inner",
    "negatives_only_moment",
    "per_anchor_bands",
    "per_anchor_sigma_star",
    "pick_batch",
    "random_subset_batch",
    "rayleigh_quotient",
    "rayleigh_score",
    "remainder_check",
    "rolling_variance",
    "sigma_proxy",
    "spectral_summary",
    "spectrum_deviation_pct",
    "spiked_spectrum",
    "synth_correlated_negatives",
    "synth_spectral_batch",
    "trace_sq",
    "trace_update",
    "uniform_spectrum",
    "update_target_rank",
    "upper_band_exact",
    "upper_band_proxy",
    "variance_band",
    "whiten_batch",
    "whiten_rows",
    "whitening_ceiling",
]
