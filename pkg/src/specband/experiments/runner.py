"""Experiment drivers: sweep execution, parallel scheduling, and reports.

Every sweep point derives its RNG stream from (master seed, config index,
batch index), so results are independent of chunking and worker count; the
report merge is a single-threaded, index-ordered pass. Rows serialize floats
at 17 significant digits so the CSV round-trips bit-for-bit.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import __version__
from ..band import (
    BandConfig,
    containment_check,
    correlated_sampling_term,
    lower_band,
    per_anchor_bands,
    upper_band_exact,
    upper_band_proxy,
    variance_band,
    whitening_ceiling,
)
from ..batches import (
    CorrelationSpec,
    SpectrumSpec,
    attach_positives,
    spiked_spectrum,
    synth_correlated_negatives,
    synth_spectral_batch,
)
from ..infonce import batch_grad_stats
from ..rng import child_seed, stream
from ..selection import PoolPolicy, greedy_build, pick_batch, update_target_rank
from ..spectrum import (
    effective_rank_gram,
    lambda_max_rows,
    per_anchor_sigma_star,
    spectrum_deviation_pct,
)
from ..whitening import WhitenConfig, alternation_run
from .configs import (
    AnisotropyCoverageConfig,
    BandVerifyConfig,
    CorrSweepConfig,
    SelectCompareConfig,
    TempSweepConfig,
    WhitenToggleConfig,
    scaled,
)

SCHEMA_VERSION = 1

# avoid attach_positives' open-interval rejection when a sweep couples the
# positive cosine to lambda1 = 1 exactly
MAX_RHO_GEN = 1.0 - 1e-6


@dataclass
class ExperimentReport:
    kind: str
    rows: list
    columns: list
    summary: dict
    manifest: dict

    def write(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "rows.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# schema={self.kind}-v{SCHEMA_VERSION}\n")
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(row[c]) for c in self.columns) + "\n")
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(self.summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @property
    def passed(self) -> bool:
        return bool(self.summary.get("pass", False))


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _manifest(config_dict: dict, seed: int, jobs: int, started: float) -> dict:
    return {
        "config": config_dict,
        "seed": seed,
        "jobs": jobs,
        "version": __version__,
        "numpy": np.__version__,
        "wall_seconds": time.time() - started,
    }


def _chunks(total: int, size: int):
    for start in range(0, total, size):
        yield start, min(size, total - start)


def _map_jobs(worker, payloads, jobs: int):
    """Ordered map over payloads; a process pool when jobs > 1."""
    if jobs <= 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, payloads))


# ---------------------------------------------------------------------------
# band_verify


def _paired_spectral_batch(lambda1: float, n: int, d: int, batch_seed: int):
    """n-row batch: n/2 spectrum-controlled rows plus aligned positives."""
    rho = min(0.6 + 0.4 * lambda1, MAX_RHO_GEN)
    spec = SpectrumSpec(eigenvalues=spiked_spectrum(d, lambda1), seed=child_seed(batch_seed, 0))
    anchors_only = synth_spectral_batch(spec, n // 2, d, rotation="identity")
    return attach_positives(anchors_only, rho, seed=child_seed(batch_seed, 1)), rho


def _measure_band_batch(batch, tau: float, c_sm: float, extra_modes: dict | None = None) -> dict:
    """Per-anchor exact-band containment plus batch-level band quantities."""
    stats = batch_grad_stats(batch, tau)
    sig = per_anchor_sigma_star(batch)
    cfg = BandConfig(c_sm=c_sm)
    bands = per_anchor_bands(stats, sig, tau, cfg)
    cont = containment_check(stats.grad_sq, bands)
    sigma_hat = lambda_max_rows(batch.rows)
    n = batch.n
    exact = upper_band_exact(stats, sig, tau, cfg)
    proxy = upper_band_proxy(stats, sigma_hat, n, tau, cfg)
    lb = lower_band(stats.mean_alignment, tau)
    out = {
        "gamma_bar": stats.mean_grad_sq,
        "lb": lb,
        "ub_exact": exact.upper,
        "ub_proxy": proxy.upper,
        "sigma_hat": sigma_hat,
        "r_eff": effective_rank_gram(batch),
        "anchors": cont["n"],
        "n_in": int(round(cont["in_rate"] * cont["n"])),
        "n_below": int(round(cont["below_rate"] * cont["n"])),
        "n_above": int(round(cont["above_rate"] * cont["n"])),
        "batch_in_exact": int(lb <= stats.mean_grad_sq <= exact.upper),
        "batch_in_proxy": int(lb <= stats.mean_grad_sq <= proxy.upper),
        "mean_eps_sq": stats.mean_eps_sq,
        "mean_alignment": stats.mean_alignment,
    }
    if extra_modes:
        for name, mode_cfg in extra_modes.items():
            mode_bands = per_anchor_bands(stats, sig, tau, mode_cfg)
            mode_cont = containment_check(stats.grad_sq, mode_bands)
            out[f"n_in_{name}"] = int(round(mode_cont["in_rate"] * mode_cont["n"]))
            out[f"n_below_{name}"] = int(round(mode_cont["below_rate"] * mode_cont["n"]))
        out["mean_neg_mean_sq"] = stats.mean_neg_mean_sq
    return out


def _band_verify_chunk(payload: dict) -> list:
    cfg_idx = payload["config_index"]
    tau = payload["tau"]
    lam1 = payload["lambda1"]
    rows = []
    for k in range(payload["count"]):
        b_idx = payload["start"] + k
        seed = child_seed(payload["seed"], cfg_idx, b_idx)
        batch, rho = _paired_spectral_batch(lam1, payload["n"], payload["d"], seed)
        meas = _measure_band_batch(batch, tau, payload["c_sm"])
        rows.append(
            {
                "config_id": cfg_idx,
                "tau": tau,
                "lambda1": lam1,
                "rho_gen": rho,
                "batch_index": b_idx,
                "seed": seed,
                **meas,
            }
        )
    return rows


def run_band_verify(config: BandVerifyConfig, seed: int = 0, jobs: int = 1, full: bool = False) -> ExperimentReport:
    """Containment of per-anchor gradients in the exact band, per sweep config."""
    config = scaled(config, full)
    started = time.time()
    points = [
        (i, tau, lam1)
        for i, (tau, lam1) in enumerate(
            (t, l) for t in config.taus for l in config.resolved_lambda1s()
        )
    ]
    payloads = []
    for cfg_idx, tau, lam1 in points:
        for start, count in _chunks(config.batches, 25):
            payloads.append(
                {
                    "config_index": cfg_idx,
                    "tau": tau,
                    "lambda1": lam1,
                    "n": config.n,
                    "d": config.d,
                    "c_sm": config.c_sm,
                    "seed": seed,
                    "start": start,
                    "count": count,
                }
            )
    rows = [r for chunk in _map_jobs(_band_verify_chunk, payloads, jobs) for r in chunk]
    rows.sort(key=lambda r: (r["config_id"], r["batch_index"]))

    per_config = {}
    for cfg_idx, tau, lam1 in points:
        sub = [r for r in rows if r["config_id"] == cfg_idx]
        anchors = sum(r["anchors"] for r in sub)
        n_in = sum(r["n_in"] for r in sub)
        n_below = sum(r["n_below"] for r in sub)
        per_config[str(cfg_idx)] = {
            "tau": tau,
            "lambda1": lam1,
            "containment": n_in / anchors,
            "below": n_below,
            "above": sum(r["n_above"] for r in sub),
            "batch_in_exact_rate": float(np.mean([r["batch_in_exact"] for r in sub])),
            "batch_in_proxy_rate": float(np.mean([r["batch_in_proxy"] for r in sub])),
        }
    min_containment = min(v["containment"] for v in per_config.values())
    total_below = sum(v["below"] for v in per_config.values())
    summary = {
        "per_config": per_config,
        "min_containment": min_containment,
        "total_below": total_below,
        "threshold": config.min_containment,
        "pass": bool(min_containment >= config.min_containment and total_below == 0),
    }
    columns = list(rows[0].keys())
    from .configs import to_dict

    return ExperimentReport(
        kind="band_verify",
        rows=rows,
        columns=columns,
        summary=summary,
        manifest=_manifest(to_dict(config), seed, jobs, started),
    )


# ---------------------------------------------------------------------------
# temp_sweep


def flat_top_spectrum(d: int, top: tuple) -> np.ndarray:
    """Given leading eigenvalues, spread the remaining mass uniformly."""
    top = np.asarray(top, dtype=np.float64)
    rest = 1.0 - float(np.sum(top))
    if rest < 0:
        raise ValueError(f"leading eigenvalues sum to {np.sum(top)} > 1")
    lam = np.full(d, rest / (d - top.size))
    lam[: top.size] = top
    return lam


def _temp_sweep_chunk(payload: dict) -> list:
    tau = payload["tau"]
    rows = []
    half = payload["n"] // 2
    for k in range(payload["count"]):
        b_idx = payload["start"] + k
        seed = child_seed(payload["seed"], payload["tau_index"], b_idx)
        spec = SpectrumSpec(
            eigenvalues=flat_top_spectrum(payload["d"], tuple(payload["top_eigenvalues"])),
            seed=child_seed(seed, 0),
        )
        anchors_only = synth_spectral_batch(spec, half, payload["d"], rotation="identity")
        batch = attach_positives(anchors_only, payload["cosine"], seed=child_seed(seed, 1))
        # gradients of the spectrum-controlled rows only; see TempSweepConfig
        stats = batch_grad_stats(batch, tau, anchors=np.arange(half))
        rows.append(
            {
                "tau": tau,
                "batch_index": b_idx,
                "seed": seed,
                "gamma_bar": stats.mean_grad_sq,
                "mean_eps_sq": stats.mean_eps_sq,
                "mean_alignment": stats.mean_alignment,
            }
        )
    return rows


def ols_fit(x: np.ndarray, y: np.ndarray) -> dict:
    """Two-parameter least squares in closed form with R^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xb = float(np.mean(x))
    yb = float(np.mean(y))
    sxx = float(np.sum((x - xb) ** 2))
    slope = float(np.sum((x - xb) * (y - yb))) / sxx
    intercept = yb - slope * xb
    resid = y - (intercept + slope * x)
    sstot = float(np.sum((y - yb) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / sstot if sstot > 0 else 1.0
    return {"slope": slope, "intercept": intercept, "r2": r2}


def run_temp_sweep(config: TempSweepConfig, seed: int = 0, jobs: int = 1, full: bool = False) -> ExperimentReport:
    """Log-log slope of the batch-mean squared gradient against 1/tau."""
    config = scaled(config, full)
    started = time.time()
    payloads = []
    for t_idx, tau in enumerate(config.taus):
        for start, count in _chunks(config.batches_per_tau, 50):
            payloads.append(
                {
                    "tau": tau,
                    "tau_index": t_idx,
                    "n": config.n,
                    "d": config.d,
                    "top_eigenvalues": list(config.top_eigenvalues),
                    "cosine": config.cosine,
                    "seed": seed,
                    "start": start,
                    "count": count,
                }
            )
    rows = [r for chunk in _map_jobs(_temp_sweep_chunk, payloads, jobs) for r in chunk]
    rows.sort(key=lambda r: (r["tau"], r["batch_index"]))

    gamma_means = []
    for tau in config.taus:
        vals = [r["gamma_bar"] for r in rows if r["tau"] == tau]
        gamma_means.append(float(np.mean(vals)))
    fit = ols_fit(np.log(1.0 / np.asarray(config.taus)), np.log(np.asarray(gamma_means)))
    lo, hi = config.slope_range
    summary = {
        "taus": list(config.taus),
        "gamma_bar_per_tau": gamma_means,
        "fit": fit,
        "slope_range": [lo, hi],
        "min_r2": config.min_r2,
        "pass": bool(lo <= fit["slope"] <= hi and fit["r2"] >= config.min_r2),
    }
    from .configs import to_dict

    return ExperimentReport(
        kind="temp_sweep",
        rows=rows,
        columns=list(rows[0].keys()),
        summary=summary,
        manifest=_manifest(to_dict(config), seed, jobs, started),
    )


# ---------------------------------------------------------------------------
# whiten_toggle


def run_whiten_toggle(config: WhitenToggleConfig, seed: int = 0, jobs: int = 1, full: bool = False) -> ExperimentReport:
    """Raw/whitened alternation: variance ratio against the band ceiling."""
    config = scaled(config, full)
    started = time.time()
    if config.window > config.steps_per_regime:
        raise ValueError(
            f"rolling window {config.window} exceeds steps_per_regime {config.steps_per_regime}"
        )
    d = config.d
    if config.isotropic:
        eigenvalues = np.full(d, 1.0 / d)
    else:
        eigenvalues = spiked_spectrum(d, config.lambda1)
    result = alternation_run(
        eigenvalues=eigenvalues,
        pairs=config.n // 2,
        d=d,
        temperature=config.tau,
        cosine=config.cosine,
        steps_per_regime=config.steps_per_regime,
        window=config.window,
        cfg=WhitenConfig(ridge_epsilon=config.ridge_epsilon),
        seed=seed,
    )
    rows = [
        {
            "step": i,
            "regime": result.regime[i],
            "sigma_hat": float(result.sigma_series[i]),
            "gamma_bar": float(result.gamma_series[i]),
            "mean_eps_sq": float(result.eps_sq_series[i]),
        }
        for i in range(result.sigma_series.size)
    ]
    eps_raw = float(np.mean(result.eps_sq_series[: config.steps_per_regime]))
    vb = variance_band(config.n, config.tau, sigma_star=1.0, eps_sq_mean=eps_raw)
    ceiling = whitening_ceiling(vb["A_coeff"], vb["B_tau"], d)
    ratio = result.variance_ratio
    sigma_whitened = result.regime_mean_sigma["whitened"]
    if config.isotropic:
        ok = 0.8 <= ratio <= 1.25
    else:
        ok = ratio >= config.min_variance_ratio and ratio <= ceiling and sigma_whitened <= 2.0 / d
    summary = {
        "regime_mean_sigma": result.regime_mean_sigma,
        "regime_mean_var": result.regime_mean_var,
        "variance_ratio": ratio,
        "ceiling": ceiling,
        "A_coeff": vb["A_coeff"],
        "B_tau": vb["B_tau"],
        "sigma_bound_2_over_d": 2.0 / d,
        "isotropic": config.isotropic,
        "pass": bool(ok),
    }
    from .configs import to_dict

    return ExperimentReport(
        kind="whiten_toggle",
        rows=rows,
        columns=list(rows[0].keys()),
        summary=summary,
        manifest=_manifest(to_dict(config), seed, jobs, started),
    )


# ---------------------------------------------------------------------------
# select_compare


def _select_compare_trial(payload: dict) -> list:
    t = payload["trial"]
    seed = payload["seed"]
    d = payload["d"]
    store_spec = SpectrumSpec(
        eigenvalues=spiked_spectrum(d, payload["lambda1"]), seed=child_seed(seed, t, 0)
    )
    store = synth_spectral_batch(store_spec, payload["store_size"], d, rotation="identity").rows
    rng = stream(seed, t, 1)
    perm = rng.permutation(payload["store_size"])
    nb = payload["n_batch"]
    candidates = [store[np.sort(perm[i * nb : (i + 1) * nb])] for i in range(payload["pool_candidates"])]
    ranks = [effective_rank_gram(c) for c in candidates]

    rows = []

    def add(method, rank_val, rows_sel):
        rows.append(
            {
                "trial": t,
                "method": method,
                "r_eff": float(rank_val),
                "sigma_hat": float(lambda_max_rows(rows_sel)),
            }
        )

    rand_idx = int(rng.integers(len(candidates)))
    add("random", ranks[rand_idx], candidates[rand_idx])
    i1 = int(np.argmax(ranks))
    add("P1", ranks[i1], candidates[i1])
    i2 = int(np.argmin(ranks))
    add("P2", ranks[i2], candidates[i2])
    target = payload["p3_target"]
    i3 = int(np.argmin(np.abs(np.asarray(ranks) - target)))
    add("P3", ranks[i3], candidates[i3])
    for m in payload["probe_sizes"]:
        res = greedy_build(store, nb, m, window=None, seed=child_seed(seed, t, 2, m))
        add(f"greedy{m}", effective_rank_gram(res.batch), res.batch.rows)
    for r in ranks:
        rows.append({"trial": t, "method": "_pool_rank", "r_eff": float(r), "sigma_hat": float("nan")})
    return rows


def run_select_compare(config: SelectCompareConfig, seed: int = 0, jobs: int = 1, full: bool = False) -> ExperimentReport:
    """Effective-rank orderings across random, pool-policy, and greedy selection."""
    config = scaled(config, full)
    started = time.time()
    # P3's target tracks the running percentile midpoint of observed pool ranks
    policy = PoolPolicy(kind="P3_balanced", target_rank=float(min(config.n_batch, config.d)) / 2)
    payloads = []
    for t in range(config.trials):
        payloads.append(
            {
                "trial": t,
                "seed": seed,
                "d": config.d,
                "store_size": config.store_size,
                "n_batch": config.n_batch,
                "pool_candidates": config.pool_candidates,
                "probe_sizes": list(config.probe_sizes),
                "lambda1": config.lambda1,
                "p3_target": policy.target_rank,
            }
        )
    # sequential target updates keep P3 deterministic; trials stay independent
    # given their seeds, so only the target feeds forward
    all_rows = []
    for payload in payloads:
        payload["p3_target"] = policy.target_rank
        trial_rows = _select_compare_trial(payload)
        for r in trial_rows:
            if r["method"] == "_pool_rank":
                update_target_rank(policy, r["r_eff"])
        all_rows.extend(trial_rows)

    methods = ["random", "P1", "P2", "P3"] + [f"greedy{m}" for m in config.probe_sizes]
    mean_reff = {
        m: float(np.mean([r["r_eff"] for r in all_rows if r["method"] == m])) for m in methods
    }
    p1 = np.array([r["r_eff"] for r in all_rows if r["method"] == "P1"])
    p2 = np.array([r["r_eff"] for r in all_rows if r["method"] == "P2"])
    p3 = np.array([r["r_eff"] for r in all_rows if r["method"] == "P3"])
    exact_p1_p3_p2 = bool(np.all(p1 >= p3) and np.all(p3 >= p2))
    greedy_means = [mean_reff[f"greedy{m}"] for m in sorted(config.probe_sizes)]
    greedy_ordered = bool(all(greedy_means[i] <= greedy_means[i + 1] for i in range(len(greedy_means) - 1)))
    summary = {
        "mean_r_eff": mean_reff,
        "pool_order_exact_per_trial": exact_p1_p3_p2,
        "greedy_means_ascending_m": greedy_means,
        "greedy_ordered": greedy_ordered,
        "pass": bool(
            exact_p1_p3_p2
            and greedy_ordered
            and mean_reff["P1"] >= mean_reff["P3"] >= mean_reff["P2"]
        ),
    }
    rows = [r for r in all_rows if r["method"] != "_pool_rank"]
    from .configs import to_dict

    return ExperimentReport(
        kind="select_compare",
        rows=rows,
        columns=list(rows[0].keys()),
        summary=summary,
        manifest=_manifest(to_dict(config), seed, jobs, started),
    )


# ---------------------------------------------------------------------------
# corr_sweep


def _corr_containment_chunk(payload: dict) -> list:
    alpha = payload["alpha"]
    n = payload["n"]
    tau = payload["tau"]
    rows = []
    indep = BandConfig(c_sm=payload["c_sm"], sampling_term_mode="independent")
    corr = BandConfig(c_sm=payload["c_sm"], sampling_term_mode="correlated", mu_corr=alpha)
    for k in range(payload["count"]):
        b_idx = payload["start"] + k
        seed = child_seed(payload["seed"], payload["combo_index"], 0, b_idx)
        batch = synth_correlated_negatives(CorrelationSpec(alpha=alpha, seed=seed), n, payload["d"])
        stats = batch_grad_stats(batch, tau)
        sig = per_anchor_sigma_star(batch)
        res = {}
        for name, cfg in (("indep", indep), ("corr", corr)):
            bands = per_anchor_bands(stats, sig, tau, cfg)
            cont = containment_check(stats.grad_sq, bands)
            res[f"n_in_{name}"] = int(round(cont["in_rate"] * cont["n"]))
            res[f"n_below_{name}"] = int(round(cont["below_rate"] * cont["n"]))
        rows.append(
            {
                "phase": "containment",
                "alpha": alpha,
                "n_negatives": n - 2,
                "batch_index": b_idx,
                "seed": seed,
                "anchors": len(stats.per_anchor),
                "mean_neg_mean_sq": stats.mean_neg_mean_sq,
                **res,
            }
        )
    return rows


def _corr_sampling_chunk(payload: dict) -> list:
    alpha = payload["alpha"]
    n = payload["n"]
    rows = []
    for k in range(payload["count"]):
        b_idx = payload["start"] + k
        seed = child_seed(payload["seed"], payload["combo_index"], 1, b_idx)
        batch = synth_correlated_negatives(CorrelationSpec(alpha=alpha, seed=seed), n, payload["d"])
        z = batch.rows
        total = z.sum(axis=0)
        anchors = batch.anchors
        mates = batch.pairing[anchors]
        neg_means = (total[None, :] - z[anchors] - z[mates]) / (n - 2)
        rows.append(
            {
                "phase": "sampling",
                "alpha": alpha,
                "n_negatives": n - 2,
                "batch_index": b_idx,
                "seed": seed,
                "mean_neg_mean_sq": float(np.mean(np.einsum("ij,ij->i", neg_means, neg_means))),
            }
        )
    return rows


def run_corr_sweep(config: CorrSweepConfig, seed: int = 0, jobs: int = 1, full: bool = False) -> ExperimentReport:
    """Containment and sampling-term inflation across correlation levels."""
    config = scaled(config, full)
    started = time.time()
    combos = [
        (i, alpha, nn)
        for i, (alpha, nn) in enumerate((a, m) for a in config.alphas for m in config.n_negatives)
    ]
    cont_payloads = []
    samp_payloads = []
    for idx, alpha, nn in combos:
        n = nn + 2
        for start, count in _chunks(config.batches_containment, 25):
            cont_payloads.append(
                {
                    "combo_index": idx,
                    "alpha": alpha,
                    "n": n,
                    "d": config.d,
                    "tau": config.tau,
                    "c_sm": config.c_sm,
                    "seed": seed,
                    "start": start,
                    "count": count,
                }
            )
        for start, count in _chunks(config.batches_sampling, 100):
            samp_payloads.append(
                {
                    "combo_index": idx,
                    "alpha": alpha,
                    "n": n,
                    "d": config.d,
                    "seed": seed,
                    "start": start,
                    "count": count,
                }
            )
    cont_rows = [r for chunk in _map_jobs(_corr_containment_chunk, cont_payloads, jobs) for r in chunk]
    samp_rows = [r for chunk in _map_jobs(_corr_sampling_chunk, samp_payloads, jobs) for r in chunk]
    cont_rows.sort(key=lambda r: (r["alpha"], r["n_negatives"], r["batch_index"]))
    samp_rows.sort(key=lambda r: (r["alpha"], r["n_negatives"], r["batch_index"]))

    per_combo = {}
    for idx, alpha, nn in combos:
        sub = [r for r in cont_rows if r["alpha"] == alpha and r["n_negatives"] == nn]
        anchors = sum(r["anchors"] for r in sub)
        meas = [r["mean_neg_mean_sq"] for r in samp_rows if r["alpha"] == alpha and r["n_negatives"] == nn]
        measured = float(np.mean(meas))
        predicted = correlated_sampling_term(nn + 2, alpha)
        per_combo[f"{alpha}|{nn}"] = {
            "alpha": alpha,
            "n_negatives": nn,
            "containment_indep": sum(r["n_in_indep"] for r in sub) / anchors,
            "containment_corr": sum(r["n_in_corr"] for r in sub) / anchors,
            "below_indep": sum(r["n_below_indep"] for r in sub),
            "below_corr": sum(r["n_below_corr"] for r in sub),
            "sampling_measured": measured,
            "sampling_predicted": predicted,
            "sampling_rel_err": abs(measured - predicted) / predicted,
        }
    small = [v for v in per_combo.values() if v["alpha"] <= 0.02]
    min_small = min(v["containment_indep"] for v in small)
    max_rel = max(v["sampling_rel_err"] for v in per_combo.values())
    summary = {
        "per_combo": per_combo,
        "min_containment_alpha_le_0.02": min_small,
        "max_sampling_rel_err": max_rel,
        "pass": bool(
            min_small >= config.min_containment_small_alpha
            and max_rel <= config.max_sampling_rel_err
        ),
    }
    rows = cont_rows + samp_rows
    columns = ["phase"] + sorted({k for r in rows for k in r} - {"phase"})
    for r in rows:
        for c in columns:
            r.setdefault(c, "")
    from .configs import to_dict

    return ExperimentReport(
        kind="corr_sweep",
        rows=rows,
        columns=columns,
        summary=summary,
        manifest=_manifest(to_dict(config), seed, jobs, started),
    )


# ---------------------------------------------------------------------------
# anisotropy_coverage


def spectrum_for_deviation(d: int, delta_pct: float) -> np.ndarray:
    """Trace-one spectrum at a target isotropy deviation (two-level profile)."""
    amp = delta_pct / (100.0 * d)
    lam = np.full(d, 1.0 / d)
    half = d // 2
    lam[:half] += amp
    lam[half:] -= amp
    if np.any(lam < 0):
        raise ValueError(f"delta {delta_pct}% is infeasible for d={d}")
    return lam


def _anisotropy_chunk(payload: dict) -> list:
    tau = payload["tau"]
    rows = []
    lam = np.asarray(payload["eigenvalues"])
    for k in range(payload["count"]):
        b_idx = payload["start"] + k
        seed = child_seed(payload["seed"], payload["delta_index"], b_idx)
        rho = 0.75
        spec = SpectrumSpec(eigenvalues=lam, seed=child_seed(seed, 0))
        anchors_only = synth_spectral_batch(spec, payload["n"] // 2, payload["d"], rotation="identity")
        batch = attach_positives(anchors_only, rho, seed=child_seed(seed, 1))
        stats = batch_grad_stats(batch, tau)
        sig = per_anchor_sigma_star(batch)
        bands = per_anchor_bands(stats, sig, tau, BandConfig(c_sm=payload["c_sm"]))
        cont = containment_check(stats.grad_sq, bands)
        rows.append(
            {
                "delta_target_pct": payload["delta_pct"],
                "batch_index": b_idx,
                "seed": seed,
                "anchors": cont["n"],
                "n_in": int(round(cont["in_rate"] * cont["n"])),
                "n_below": int(round(cont["below_rate"] * cont["n"])),
                "n_above": int(round(cont["above_rate"] * cont["n"])),
                "gamma_bar": stats.mean_grad_sq,
            }
        )
    return rows


def run_anisotropy_coverage(config: AnisotropyCoverageConfig, seed: int = 0, jobs: int = 1, full: bool = False) -> ExperimentReport:
    """Out-of-band rate as the generating spectrum departs from isotropy."""
    config = scaled(config, full)
    started = time.time()
    payloads = []
    for d_idx, delta in enumerate(config.delta_targets_pct):
        lam = spectrum_for_deviation(config.d, delta)
        assert abs(spectrum_deviation_pct(lam) - delta) < 1e-6
        for start, count in _chunks(config.batches, 25):
            payloads.append(
                {
                    "delta_index": d_idx,
                    "delta_pct": delta,
                    "eigenvalues": lam.tolist(),
                    "n": config.n,
                    "d": config.d,
                    "tau": config.tau,
                    "c_sm": config.c_sm,
                    "seed": seed,
                    "start": start,
                    "count": count,
                }
            )
    rows = [r for chunk in _map_jobs(_anisotropy_chunk, payloads, jobs) for r in chunk]
    rows.sort(key=lambda r: (r["delta_target_pct"], r["batch_index"]))

    per_bin = {}
    for delta in config.delta_targets_pct:
        sub = [r for r in rows if r["delta_target_pct"] == delta]
        anchors = sum(r["anchors"] for r in sub)
        out = sum(r["n_above"] + r["n_below"] for r in sub)
        per_bin[str(delta)] = {
            "delta_pct": delta,
            "out_rate": out / anchors,
            "below": sum(r["n_below"] for r in sub),
            "above": sum(r["n_above"] for r in sub),
        }
    in_tolerance = [v for v in per_bin.values() if v["delta_pct"] <= config.delta_pass_pct]
    worst = max(v["out_rate"] for v in in_tolerance)
    total_below = sum(v["below"] for v in per_bin.values())
    summary = {
        "per_bin": per_bin,
        "worst_out_rate_within_tolerance": worst,
        "total_below": total_below,
        "pass": bool(worst <= config.max_out_rate and total_below == 0),
    }
    from .configs import to_dict

    return ExperimentReport(
        kind="anisotropy_coverage",
        rows=rows,
        columns=list(rows[0].keys()),
        summary=summary,
        manifest=_manifest(to_dict(config), seed, jobs, started),
    )


RUNNERS = {
    "band_verify": (BandVerifyConfig, run_band_verify),
    "temp_sweep": (TempSweepConfig, run_temp_sweep),
    "whiten_toggle": (WhitenToggleConfig, run_whiten_toggle),
    "select_compare": (SelectCompareConfig, run_select_compare),
    "corr_sweep": (CorrSweepConfig, run_corr_sweep),
    "anisotropy_coverage": (AnisotropyCoverageConfig, run_anisotropy_coverage),
}
