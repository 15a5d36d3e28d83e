"""Merge-sort rankers driven by a pairwise comparator.

``greedy`` merges by always taking the preferred head. ``beam`` keeps the
best partial interleavings by trajectory likelihood and only branches on
comparisons whose entropy exceeds ``uncertainty_threshold``. The scaled
variant ranks an anchor subset and places every other item into it by binary
search.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .comparator import Comparator, ConfigError, Judge
from .core import CandidateSet, ComparisonRecord, DomainError, Ranking

Oracle = Callable[[int, int], ComparisonRecord]
Method = Literal["greedy", "beam", "beam_scaled"]


@dataclass(frozen=True)
class RankerConfig:
    method: Method = "greedy"
    beam_size: int = 1
    uncertainty_threshold: float = 0.6
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ConfigError("beam_size must be at least 1")
        if self.method not in ("greedy", "beam", "beam_scaled"):
            raise ConfigError(f"unknown method {self.method!r}")
        u = self.uncertainty_threshold
        if not (0.0 <= u <= math.log(2) or u == math.inf):
            raise ConfigError("uncertainty_threshold must be in [0, ln 2] or inf")


@dataclass(frozen=True)
class AnchorConfig:
    """Explicit ``anchor_size``, or the inputs of :func:`anchor_size`."""

    anchor_size: int | None = None
    z: float = 1.28
    top_proportion: float = 0.4
    margin: float = 0.07
    design_effect: float = 1.5

    def __post_init__(self) -> None:
        if self.anchor_size is not None and self.anchor_size < 2:
            raise ConfigError("anchor_size must be at least 2")

    def resolve(self) -> int:
        if self.anchor_size is not None:
            return self.anchor_size
        return anchor_size(self.z, self.top_proportion, self.margin, self.design_effect)


@dataclass(frozen=True)
class BeamCandidate:
    trajectory: tuple[int, ...]
    i: int
    j: int
    log_likelihood: float = 0.0
    # 0 = took the left head, 1 = the right head; ties prefer left-first paths
    choices: tuple[int, ...] = ()

    def _sort_key(self):
        return (-self.log_likelihood, self.choices)

    def advance(self, item: int, side: int, log_p: float = 0.0) -> BeamCandidate:
        return BeamCandidate(self.trajectory + (item,), self.i + (side == 0),
                             self.j + (side == 1), self.log_likelihood + log_p,
                             self.choices + (side,))


@dataclass
class MergeTrace:
    """One merge performed during a sort, for inspection and testing."""

    left: tuple[int, ...]
    right: tuple[int, ...]
    merged: tuple[int, ...]
    log_likelihood: float


@dataclass
class RankResult:
    ranking: Ranking
    query_count: int
    merges: list[MergeTrace] = field(default_factory=list)


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def merge_greedy(left: Sequence[int], right: Sequence[int], cmp: Oracle) -> list[int]:
    """Standard merge; ties (``p == 0.5``) go to the left head."""
    out: list[int] = []
    i = j = 0
    while i < len(left) and j < len(right):
        if cmp(left[i], right[j]).p_first >= 0.5:
            out.append(left[i])
            i += 1
        else:
            out.append(right[j])
            j += 1
    out.extend(left[i:])
    out.extend(right[j:])
    return out


def beam_merge(left: Sequence[int], right: Sequence[int], cmp: Oracle,
               beam_size: int, uncertainty_threshold: float) -> BeamCandidate:
    """Beam-search merge; returns the best complete candidate.

    Each step a candidate compares its two heads. Above the uncertainty
    threshold both choices are kept, otherwise only the preferred one. A
    choice adds ``ln P(chosen > rejected)`` to the candidate's score; steps
    taken after one side is exhausted add nothing. Candidates reaching the
    same pointer state are collapsed to the best-scoring one before the beam
    is sorted and truncated. Equal scores favour the path that took the left
    head earlier, matching the greedy tie rule.
    """
    L, R = len(left), len(right)
    beam = [BeamCandidate((), 0, 0)]
    for _ in range(L + R):
        nxt: dict[tuple[int, int], BeamCandidate] = {}

        def push(c: BeamCandidate) -> None:
            key = (c.i, c.j)
            old = nxt.get(key)
            if old is None or c._sort_key() < old._sort_key():
                nxt[key] = c

        for c in beam:
            if c.i == L:
                push(c.advance(right[c.j], 1))
                continue
            if c.j == R:
                push(c.advance(left[c.i], 0))
                continue
            a, b = left[c.i], right[c.j]
            rec = cmp(a, b)
            take_a = c.advance(a, 0, _log(rec.p_first))
            take_b = c.advance(b, 1, _log(1.0 - rec.p_first))
            if rec.uncertainty > uncertainty_threshold:
                push(take_a)
                push(take_b)
            elif rec.p_first >= 0.5:
                push(take_a)
            else:
                push(take_b)
        beam = sorted(nxt.values(), key=BeamCandidate._sort_key)[:beam_size]
    return beam[0]


def merge_beam(left: Sequence[int], right: Sequence[int], cmp: Oracle,
               beam_size: int, uncertainty_threshold: float) -> list[int]:
    return list(beam_merge(left, right, cmp, beam_size, uncertainty_threshold).trajectory)


def trajectory_log_likelihood(merged: Sequence[int], left: Sequence[int],
                              right: Sequence[int], cmp: Oracle) -> float:
    """Score an interleaving of ``left`` and ``right`` the way the beam does."""
    in_left = set(left)
    i = j = 0
    ll = 0.0
    for x in merged:
        if i < len(left) and j < len(right):
            p = cmp(left[i], right[j]).p_first
            ll += _log(p) if x in in_left else _log(1.0 - p)
        if x in in_left:
            i += 1
        else:
            j += 1
    return ll


def _as_judge(items: CandidateSet, cmp: Comparator | Judge) -> Judge:
    return cmp if isinstance(cmp, Judge) else Judge(items, cmp)


def _sort_indices(indices: Sequence[int], cfg: RankerConfig, judge: Judge,
                  merges: list[MergeTrace] | None) -> list[int]:
    beam = cfg.method in ("beam", "beam_scaled")

    def merge(pair: tuple[list[int], list[int]]) -> tuple[list[int], float]:
        left, right = pair
        if beam:
            best = beam_merge(left, right, judge, cfg.beam_size, cfg.uncertainty_threshold)
            return list(best.trajectory), best.log_likelihood
        out = merge_greedy(left, right, judge)
        if merges is None:
            return out, math.nan
        return out, trajectory_log_likelihood(out, left, right, judge)

    runs = [[i] for i in indices]
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        while len(runs) > 1:
            pairs = [(runs[k], runs[k + 1]) for k in range(0, len(runs) - 1, 2)]
            results = list(pool.map(merge, pairs)) if pool else [merge(p) for p in pairs]
            if merges is not None:
                merges.extend(MergeTrace(tuple(l), tuple(r), tuple(out), ll)
                              for (l, r), (out, ll) in zip(pairs, results))
            leftover = [runs[-1]] if len(runs) % 2 else []
            runs = [out for out, _ in results] + leftover
    finally:
        if pool:
            pool.shutdown()
    return runs[0] if runs else []


def pairs_sort(items: CandidateSet, cfg: RankerConfig, cmp: Comparator | Judge,
               record_merges: bool = False) -> RankResult:
    """Shuffle the items by ``cfg.seed`` and bottom-up merge sort them.

    ``query_count`` counts distinct ordered pairs sent to the comparator.
    """
    judge = _as_judge(items, cmp)
    before = judge.query_count
    order = np.random.default_rng(cfg.seed).permutation(len(items)).tolist()
    merges: list[MergeTrace] | None = [] if record_merges else None
    ranked = _sort_indices(order, cfg, judge, merges)
    return RankResult(Ranking(ranked), judge.query_count - before, merges or [])


def anchor_size(z: float, p: float, e: float, deff: float) -> int:
    """Sample size for estimating a proportion, inflated by a design effect."""
    if not z > 0:
        raise DomainError("z must be positive")
    if not 0 < p < 1 or not 0 < e < 1:
        raise DomainError("p and e must lie in (0, 1)")
    if not deff >= 1:
        raise DomainError("design effect must be at least 1")
    n = z * z * p * (1 - p) / (e * e) * deff
    # guard against ceil() bumping float noise like 385.00000000000006
    return math.ceil(round(n, 9))


def binary_insert(item: int, anchor: Sequence[int], cmp: Oracle) -> int:
    """Insertion position of ``item`` in a best-first ``anchor`` list."""
    if not anchor:
        raise DomainError("anchor must be non-empty")
    lo, hi = 0, len(anchor)
    while lo < hi:
        mid = (lo + hi) // 2
        if cmp(item, anchor[mid]).p_first >= 0.5:
            hi = mid
        else:
            lo = mid + 1
    return lo


def pairs_scaled(items: CandidateSet, anchor_cfg: AnchorConfig, cfg: RankerConfig,
                 cmp: Comparator | Judge) -> RankResult:
    """Rank a seeded anchor sample, then binary-insert the rest against it.

    Items landing in the same anchor gap keep their insertion order.
    """
    n = len(items)
    k = anchor_cfg.resolve()
    if k >= n:
        raise ConfigError(f"anchor size {k} must be smaller than the item count {n}")
    judge = _as_judge(items, cmp)
    before = judge.query_count
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n).tolist()
    anchor_ids, rest = perm[:k], perm[k:]

    stage1 = RankerConfig("beam" if cfg.method == "beam_scaled" else cfg.method,
                          cfg.beam_size, cfg.uncertainty_threshold, cfg.seed, cfg.workers)
    shuffled = [anchor_ids[t] for t in rng.permutation(k)]
    anchor = _sort_indices(shuffled, stage1, judge, None)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            slots = list(pool.map(lambda x: binary_insert(x, anchor, judge), rest))
    else:
        slots = [binary_insert(x, anchor, judge) for x in rest]
    gaps: list[list[int]] = [[] for _ in range(k + 1)]
    for x, s in zip(rest, slots):
        gaps[s].append(x)
    order: list[int] = []
    for g in range(k + 1):
        order.extend(gaps[g])
        if g < k:
            order.append(anchor[g])
    return RankResult(Ranking(order), judge.query_count - before)


def rank(items: CandidateSet, cfg: RankerConfig, cmp: Comparator | Judge,
         anchor_cfg: AnchorConfig | None = None) -> RankResult:
    """Dispatch on ``cfg.method``; ``beam_scaled`` needs ``anchor_cfg``."""
    if cfg.method == "beam_scaled":
        if anchor_cfg is None:
            raise ConfigError("beam_scaled needs an anchor configuration")
        return pairs_scaled(items, anchor_cfg, cfg, cmp)
    return pairs_sort(items, cfg, cmp)
