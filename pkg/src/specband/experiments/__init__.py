"""Experiment harness: configs, runners, and the CLI."""

from .configs import (
    AnisotropyCoverageConfig,
    BandVerifyConfig,
    CorrSweepConfig,
    SelectCompareConfig,
    TempSweepConfig,
    WhitenToggleConfig,
    default_config,
    from_dict,
    load_config,
    to_dict,
)
from .runner import (
    ExperimentReport,
    ols_fit,
    run_anisotropy_coverage,
    run_band_verify,
    run_corr_sweep,
    run_select_compare,
    run_temp_sweep,
    run_whiten_toggle,
    spectrum_for_deviation,
)

__all__ = [
    "AnisotropyCoverageConfig",
    "BandVerifyConfig",
    "CorrSweepConfig",
    "SelectCompareConfig",
    "TempSweepConfig",
    "WhitenToggleConfig",
    "ExperimentReport",
    "default_config",
    "from_dict",
    "load_config",
    "to_dict",
    "ols_fit",
    "run_anisotropy_coverage",
    "run_band_verify",
    "run_corr_sweep",
    "run_select_compare",
    "run_temp_sweep",
    "run_whiten_toggle",
    "spectrum_for_deviation",
]
