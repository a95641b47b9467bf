"""Spectrum-aware batch selection.

Two samplers: a pool picker that scores whole candidate batches by effective
rank (max / min / closest-to-target policies), and a greedy element-wise
builder that grows a batch one row at a time, always taking the probe
candidate with the smallest Rayleigh score against the current members. The
builder maintains the running tr(Sigma^2) through the one-step recurrence and
an inner-product cache, so each candidate costs O(b) lookups.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .batches import EmbeddingBatch
from .rng import stream
from .spectrum import effective_rank_gram, trace_update

POLICY_KINDS = ("P1_max_rank", "P2_min_rank", "P3_balanced")


class SelectionError(ValueError):
    """Empty pools, exhausted stores, malformed windows."""


class SlidingPercentileWindow:
    """Exact order statistics over the last ``size`` observations.

    A sorted list mirrors an insertion-order deque; windows are small (default
    100), so insort/remove beats any sketch.
    """

    def __init__(self, size: int = 100):
        if size < 1:
            raise SelectionError(f"window size must be >= 1, got {size}")
        self.size = size
        self._order: deque[float] = deque()
        self._sorted: list[float] = []

    def push(self, value: float):
        value = float(value)
        self._order.append(value)
        bisect.insort(self._sorted, value)
        if len(self._order) > self.size:
            old = self._order.popleft()
            del self._sorted[bisect.bisect_left(self._sorted, old)]

    def __len__(self) -> int:
        return len(self._order)

    def percentile(self, pct: float) -> float:
        """Linear-interpolation percentile of the current window."""
        if not self._sorted:
            raise SelectionError("empty window")
        xs = self._sorted
        if len(xs) == 1:
            return xs[0]
        pos = (pct / 100.0) * (len(xs) - 1)
        lo = int(np.floor(pos))
        hi = int(np.ceil(pos))
        frac = pos - lo
        return xs[lo] * (1.0 - frac) + xs[hi] * frac


@dataclass
class PoolPolicy:
    """P1 maximizes effective rank, P2 minimizes it, P3 targets ``target_rank``.

    P3's target follows the stream of observed ranks: it is the midpoint of
    the running 10th/90th percentiles over ``window`` observations.
    """

    kind: str
    target_rank: float = 1.0
    window: int = 100
    tracker: SlidingPercentileWindow = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise SelectionError(f"kind must be one of {POLICY_KINDS}, got {self.kind!r}")
        if self.tracker is None:
            self.tracker = SlidingPercentileWindow(self.window)


def update_target_rank(policy: PoolPolicy, observed_rank: float) -> PoolPolicy:
    """Record one observed rank; P3's target moves to the percentile midpoint.

    Mutates and returns the policy. With an empty history the target is left
    at its initialization.
    """
    policy.tracker.push(observed_rank)
    lo = policy.tracker.percentile(10.0)
    hi = policy.tracker.percentile(90.0)
    policy.target_rank = 0.5 * (lo + hi)
    return policy


def pick_batch(pool, policy: PoolPolicy) -> tuple[int, dict]:
    """Pick a batch from the pool by effective rank; ties go to the lowest index.

    Returns (chosen index, diagnostics with every candidate's rank).
    """
    if len(pool) == 0:
        raise SelectionError("empty candidate pool")
    ranks = np.array([effective_rank_gram(b) for b in pool])
    if policy.kind == "P1_max_rank":
        choice = int(np.argmax(ranks))
    elif policy.kind == "P2_min_rank":
        choice = int(np.argmin(ranks))
    else:
        choice = int(np.argmin(np.abs(ranks - policy.target_rank)))
    return choice, {"ranks": ranks, "target_rank": policy.target_rank, "kind": policy.kind}


@dataclass
class SelectionState:
    """Partial greedy batch: member indices, their Gram, and running tr(Sigma^2)."""

    members: list[int]
    gram: np.ndarray
    t_b: float

    @property
    def b(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class GreedyStep:
    b: int
    t_b: float
    effective_rank: float
    chosen: int
    q_score: float


@dataclass(frozen=True)
class GreedyResult:
    batch: EmbeddingBatch
    members: list[int]
    trace: list[GreedyStep]
    window_hit: bool
    cache_lookups: int


def centroid_score(state: SelectionState, candidate_dots: np.ndarray) -> float:
    """Heuristic 1 - <z, mean member>; its square never exceeds the Rayleigh score.

    ``candidate_dots`` holds the candidate's inner products with the members,
    so the centroid inner product is just their mean.
    """
    d = np.asarray(candidate_dots, dtype=np.float64)
    if d.size == 0:
        raise SelectionError("partial batch is empty")
    return 1.0 - float(np.mean(d))


def greedy_build(
    store: np.ndarray,
    n_target: int,
    probe_size: int,
    window: tuple[float, float] | None = None,
    seed: int = 0,
    fill_to_target: bool = True,
) -> GreedyResult:
    """Assemble a batch by repeatedly taking the probe candidate with least q_B.

    Starts from two seeds: one uniform row, then the most orthogonal row in a
    fresh probe (this minimizes the initial tr(Sigma^2)). Each step scores
    ``probe_size`` candidates drawn without replacement from the unselected
    rows, picks the argmin with lowest-index tie-break, and updates tr via the
    one-step recurrence. With a ``window`` the loop stops as soon as the
    effective rank enters [R_min, R_max]; ``fill_to_target`` then resumes
    plain greedy growth to the full size, since experiments need fixed-size
    batches. The returned trace logs (b, t_B, R) after every addition.
    """
    z = np.asarray(store, dtype=np.float64)
    n_store, dim = z.shape
    if n_store < n_target:
        raise SelectionError(f"store has {n_store} rows, need at least {n_target}")
    if n_target <= 2:
        raise SelectionError(f"n_target must be > 2, got {n_target}")
    if probe_size < 1:
        raise SelectionError(f"probe_size must be >= 1, got {probe_size}")
    if window is not None:
        r_min, r_max = window
        if not (1.0 <= r_min <= r_max <= min(n_target, dim)):
            raise SelectionError(
                f"window must satisfy 1 <= R_min <= R_max <= min(n_target, d)={min(n_target, dim)}, got {window}"
            )
    rng = stream(seed, 4)
    cap = float(min(n_target, dim))
    lookups = 0

    remaining = list(range(n_store))
    first = int(rng.integers(n_store))
    remaining.remove(first)

    # store-vs-member dot cache; column b holds <z_j, member_b> for all j
    dots = np.empty((n_store, n_target))
    dots[:, 0] = z @ z[first]

    probe = _draw_probe(rng, remaining, probe_size)
    second = probe[int(np.argmin(np.abs(dots[probe, 0])))]
    remaining.remove(second)
    dots[:, 1] = z @ z[second]

    members = [first, second]
    gram = np.empty((n_target, n_target))
    gram[0, 0] = dots[first, 0]
    gram[1, 1] = dots[second, 1]
    gram[0, 1] = gram[1, 0] = dots[second, 0]
    norm4 = float(gram[1, 1]) ** 2
    t_b = trace_update(float(gram[0, 0]) ** 2, 1, float(dots[second, 0]) ** 2, norm4)
    state = SelectionState(members=members, gram=gram, t_b=t_b)

    trace: list[GreedyStep] = []
    rank = float(np.clip(1.0 / t_b, 1.0, cap))
    trace.append(
        GreedyStep(b=2, t_b=t_b, effective_rank=rank, chosen=second, q_score=float(dots[second, 0]) ** 2)
    )
    window_hit = window is not None and window[0] <= rank <= window[1]

    while state.b < n_target:
        # a valid batch needs more than two rows, so early stop applies from b=3 on
        if window_hit and not fill_to_target and state.b >= 3:
            break
        if not remaining:
            raise SelectionError(f"store exhausted at size {state.b} before reaching {n_target}")
        probe = _draw_probe(rng, remaining, probe_size)
        b = state.b
        cand_dots = dots[probe, :b]
        lookups += cand_dots.size
        q = np.mean(cand_dots * cand_dots, axis=1)
        k = int(np.argmin(q))  # probe is sorted, so this is the lowest-index tie-break
        chosen = probe[k]
        q_star = float(q[k])

        remaining.remove(chosen)
        col = z @ z[chosen]
        new_t = trace_update(state.t_b, b, q_star, float(col[chosen]) ** 2)
        state.gram[:b, b] = dots[chosen, :b]
        state.gram[b, :b] = dots[chosen, :b]
        state.gram[b, b] = col[chosen]
        dots[:, b] = col
        state.members.append(chosen)
        state.t_b = new_t

        rank = float(np.clip(1.0 / new_t, 1.0, cap))
        trace.append(GreedyStep(b=state.b, t_b=new_t, effective_rank=rank, chosen=chosen, q_score=q_star))
        if window is not None and window[0] <= rank <= window[1]:
            window_hit = True
            if not fill_to_target:
                break

    batch = EmbeddingBatch(rows=z[state.members], pairing=np.full(state.b, -1, dtype=np.int64))
    return GreedyResult(
        batch=batch,
        members=list(state.members),
        trace=trace,
        window_hit=window_hit,
        cache_lookups=lookups,
    )


def _draw_probe(rng: np.random.Generator, remaining: list[int], probe_size: int) -> list[int]:
    """Sorted probe of min(probe_size, len(remaining)) distinct unselected rows."""
    k = min(probe_size, len(remaining))
    idx = rng.choice(len(remaining), size=k, replace=False)
    return sorted(remaining[i] for i in idx)


def random_subset_batch(store: np.ndarray, n_target: int, seed: int) -> EmbeddingBatch:
    """Uniform random subset of the store; the baseline the greedy builder beats."""
    z = np.asarray(store, dtype=np.float64)
    if z.shape[0] < n_target:
        raise SelectionError(f"store has {z.shape[0]} rows, need at least {n_target}")
    rng = stream(seed, 5)
    idx = rng.choice(z.shape[0], size=n_target, replace=False)
    return EmbeddingBatch(rows=z[np.sort(idx)], pairing=np.full(n_target, -1, dtype=np.int64))
