"""InfoNCE softmax weights, per-anchor gradients, and alignment statistics.

For anchor i the candidate set is every other row of the batch: its positive
plus the remaining n-2 rows as negatives, so the negative count entering all
band formulas is N- = n - 2. The loss is -log p of the positive under a
temperature-tau softmax over the candidates, and the gradient with respect to
the anchor is (M - z_pos) / tau with M the softmax-weighted candidate mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batches import EmbeddingBatch

MAX_TEMPERATURE = 100.0


class InfoNCEError(ValueError):
    """Invalid temperature or anchor without a positive."""


@dataclass(frozen=True)
class AnchorStats:
    """Softmax and gradient quantities for one anchor.

    ``neg_mean_sq`` is the squared norm of the average negative embedding;
    it feeds the empirical sampling-term mode of the band and the correlated-
    negatives measurements.
    """

    p_pos: float
    epsilon: float
    alignment: float
    softmax_mean: np.ndarray
    grad: np.ndarray
    grad_sq: float
    neg_mean_sq: float
    loss: float


@dataclass(frozen=True)
class BatchGradStats:
    """Per-anchor stats plus their arithmetic means over the batch."""

    mean_grad_sq: float
    mean_alignment: float
    mean_eps_sq: float
    mean_neg_mean_sq: float
    n_rows: int
    per_anchor: tuple[AnchorStats, ...]

    @property
    def n_negatives(self) -> int:
        return self.n_rows - 2

    @property
    def grad_sq(self) -> np.ndarray:
        return np.array([a.grad_sq for a in self.per_anchor])

    @property
    def alignment(self) -> np.ndarray:
        return np.array([a.alignment for a in self.per_anchor])

    @property
    def eps(self) -> np.ndarray:
        return np.array([a.epsilon for a in self.per_anchor])

    @property
    def neg_mean_sq(self) -> np.ndarray:
        return np.array([a.neg_mean_sq for a in self.per_anchor])


def _check_temperature(temperature: float):
    if not 0.0 < temperature <= MAX_TEMPERATURE:
        raise InfoNCEError(f"temperature must lie in (0, {MAX_TEMPERATURE}], got {temperature}")


def anchor_stats(batch: EmbeddingBatch, anchor: int, temperature: float) -> AnchorStats:
    """Stats for one anchor via a max-shifted softmax over its candidates."""
    _check_temperature(temperature)
    z = batch.rows
    i = int(anchor)
    j = batch.positive_of(i)

    sims = z @ z[i]
    logits = sims / temperature
    logits[i] = -np.inf
    shift = np.max(logits)
    w = np.exp(logits - shift)
    w[i] = 0.0
    total = np.sum(w)
    p = w / total
    p_pos = float(min(max(p[j], 0.0), 1.0))
    eps = 1.0 - p_pos

    m_vec = p @ z
    grad = (m_vec - z[j]) / temperature
    grad_sq = float(grad @ grad)
    alignment = float(m_vec @ z[j])

    n = batch.n
    neg_mean = (np.sum(z, axis=0) - z[i] - z[j]) / (n - 2)
    neg_mean_sq = float(neg_mean @ neg_mean)

    loss = float(np.log(total) + shift - logits[j])
    return AnchorStats(
        p_pos=p_pos,
        epsilon=eps,
        alignment=alignment,
        softmax_mean=m_vec,
        grad=grad,
        grad_sq=grad_sq,
        neg_mean_sq=neg_mean_sq,
        loss=loss,
    )


def infonce_loss(batch: EmbeddingBatch, anchor: int, temperature: float, anchor_row=None) -> float:
    """-log p of the positive; ``anchor_row`` overrides the stored anchor vector.

    The override leaves the candidate rows untouched, which is what the
    finite-difference check of the analytic gradient needs: the loss is a
    smooth function of the anchor vector alone.
    """
    _check_temperature(temperature)
    z = batch.rows
    i = int(anchor)
    j = batch.positive_of(i)
    zi = z[i] if anchor_row is None else np.asarray(anchor_row, dtype=np.float64)
    sims = z @ zi
    logits = sims / temperature
    logits[i] = -np.inf
    shift = np.max(logits)
    w = np.exp(logits - shift)
    w[i] = 0.0
    return float(np.log(np.sum(w)) + shift - logits[j])


def batch_grad_stats(batch: EmbeddingBatch, temperature: float, anchors=None) -> BatchGradStats:
    """Aggregate :func:`anchor_stats` over anchors, in index order.

    ``anchors`` defaults to every paired row; pass a subset to measure only
    part of the batch (e.g. the spectrum-controlled rows). The reduction order
    is fixed (anchor index, then numpy mean) so repeated runs and parallel
    callers see identical floating-point results.
    """
    anchors = batch.anchors if anchors is None else np.asarray(anchors, dtype=np.int64)
    if anchors.size == 0:
        raise InfoNCEError("batch has no anchors with registered positives")
    per = tuple(anchor_stats(batch, int(a), temperature) for a in anchors)
    grad_sq = np.array([a.grad_sq for a in per])
    align = np.array([a.alignment for a in per])
    eps_sq = np.array([a.epsilon for a in per]) ** 2
    nms = np.array([a.neg_mean_sq for a in per])
    return BatchGradStats(
        mean_grad_sq=float(np.mean(grad_sq)),
        mean_alignment=float(np.mean(align)),
        mean_eps_sq=float(np.mean(eps_sq)),
        mean_neg_mean_sq=float(np.mean(nms)),
        n_rows=batch.n,
        per_anchor=per,
    )
