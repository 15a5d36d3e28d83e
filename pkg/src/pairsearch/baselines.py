"""Win-loss and ELO aggregation over sampled comparisons, and efficiency curves."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .comparator import CalibratedComparator, Comparator, ConfigError, CountingComparator, Judge
from .core import CandidateSet, ComparisonRecord, Ranking
from .metrics import UndefinedCorrelationError, spearman
from .ranker import RankerConfig, pairs_sort

DEFAULT_BEAM_SIZES = (1, 2, 5, 10, 20, 50, 100)
EFFICIENCY_COLUMNS = ("method", "param", "queries", "spearman_mean", "spearman_std",
                      "group_id", "seed", "n_items", "ordered_queries")


@dataclass(frozen=True)
class SamplingSchedule:
    n_items: int
    budget: int
    seed: int = 0

    def __post_init__(self) -> None:
        total = self.n_items * (self.n_items - 1) // 2
        if not 0 <= self.budget <= total:
            raise ConfigError(f"budget {self.budget} outside [0, {total}] "
                              f"unordered pairs for {self.n_items} items")


@dataclass(frozen=True)
class EloConfig:
    k_factor: float = 32.0
    initial_rating: float = 1000.0
    scale: float = 400.0
    pass_order_seed: int = 0
    binary_outcome: bool = False

    def __post_init__(self) -> None:
        if self.k_factor <= 0:
            raise ConfigError("k_factor must be positive")


def sample_pairs(schedule: SamplingSchedule) -> list[tuple[int, int]]:
    """Distinct unordered pairs drawn without replacement.

    Both the list order and the orientation within each pair are random.
    """
    n = schedule.n_items
    rng = np.random.default_rng(schedule.seed)
    iu, ju = np.triu_indices(n, 1)
    pick = rng.choice(len(iu), size=schedule.budget, replace=False)
    flip = rng.random(schedule.budget) < 0.5
    return [(int(ju[k]), int(iu[k])) if f else (int(iu[k]), int(ju[k]))
            for k, f in zip(pick, flip)]


def winloss_scores(records: Iterable[ComparisonRecord], n_items: int) -> np.ndarray:
    wins = np.zeros(n_items)
    counts = np.zeros(n_items)
    for r in records:
        wins[r.first] += r.p_first
        wins[r.second] += 1.0 - r.p_first
        counts[r.first] += 1
        counts[r.second] += 1
    scores = np.full(n_items, 0.5)
    seen = counts > 0
    scores[seen] = wins[seen] / counts[seen]
    return scores


def _rank_by(scores: np.ndarray) -> Ranking:
    # stable sort on -score keeps index order among ties
    return Ranking(tuple(np.argsort(-scores, kind="stable").tolist()))


def winloss_aggregate(records: Iterable[ComparisonRecord], n_items: int) -> Ranking:
    """Rank by mean win probability; items never compared score 0.5."""
    return _rank_by(winloss_scores(records, n_items))


def elo_aggregate(records: Sequence[ComparisonRecord], n_items: int,
                  cfg: EloConfig = EloConfig()) -> tuple[np.ndarray, Ranking]:
    """One ELO pass over the records in a seeded random order.

    The outcome of a record is ``p_first`` itself unless ``cfg.binary_outcome``
    thresholds it at 0.5.
    """
    ratings = np.full(n_items, float(cfg.initial_rating))
    order = np.random.default_rng(cfg.pass_order_seed).permutation(len(records))
    for k in order:
        r = records[k]
        s = r.p_first
        if cfg.binary_outcome:
            s = 1.0 if s > 0.5 else 0.0 if s < 0.5 else 0.5
        expected = 1.0 / (1.0 + 10.0 ** ((ratings[r.second] - ratings[r.first]) / cfg.scale))
        delta = cfg.k_factor * (s - expected)
        ratings[r.first] += delta
        ratings[r.second] -= delta
    return ratings, _rank_by(ratings)


@dataclass(frozen=True)
class EfficiencyRow:
    method: str
    param: str
    queries: float
    spearman_mean: float
    spearman_std: float
    group_id: str
    seed: int
    n_items: int
    # baselines sample unordered pairs; this is the matching ordered-pair count
    ordered_queries: float


def _rho(ranking: Ranking, gold: np.ndarray) -> float:
    try:
        return spearman(ranking.scores(), gold)
    except UndefinedCorrelationError:
        return float("nan")


def efficiency_curve(group: CandidateSet, cmp: Comparator, methods: Iterable[str],
                     budgets: Sequence[int] = (), beam_sizes: Sequence[int] = DEFAULT_BEAM_SIZES,
                     repeats: int = 10, seed: int = 0,
                     elo_cfg: EloConfig = EloConfig()) -> list[EfficiencyRow]:
    """Spearman-vs-queries table for PairS variants and the sampling baselines.

    Methods: ``greedy``, ``greedy_calibrated``, ``beam`` (one row per beam
    size, no uncertainty pruning), ``winloss`` and ``elo`` (one row per
    budget). Repeat ``r`` uses seed ``seed + r``.
    """
    methods = list(methods)
    if list(budgets) != sorted(budgets):
        raise ConfigError("budgets must be ascending")
    unknown = set(methods) - {"greedy", "greedy_calibrated", "beam", "winloss", "elo"}
    if unknown:
        raise ConfigError(f"unknown methods: {sorted(unknown)}")
    gold = group.gold()
    n = len(group)
    rows: list[EfficiencyRow] = []

    def row(method: str, param: str, queries: list[int], rhos: list[float], ordered: float):
        rhos_arr = np.array(rhos)
        std = float(np.nanstd(rhos_arr, ddof=1)) if len(rhos) > 1 else 0.0
        rows.append(EfficiencyRow(method, param, float(np.mean(queries)),
                                  float(np.nanmean(rhos_arr)), std, group.group_id,
                                  seed, n, ordered))

    def pairs_run(cfg_for, param: str, method: str, calibrated: bool = False):
        queries, rhos = [], []
        for r in range(repeats):
            counter = CountingComparator(cmp)
            inner = CalibratedComparator(counter) if calibrated else counter
            res = pairs_sort(group, cfg_for(seed + r), inner)
            queries.append(counter.calls)
            rhos.append(_rho(res.ranking, gold))
        row(method, param, queries, rhos, float(np.mean(queries)))

    for method in methods:
        if method in ("greedy", "greedy_calibrated"):
            pairs_run(lambda s: RankerConfig("greedy", seed=s), "", method,
                      calibrated=method == "greedy_calibrated")
        elif method == "beam":
            for b in beam_sizes:
                pairs_run(lambda s, b=b: RankerConfig("beam", b, 0.0, seed=s), str(b), method)
        else:
            for budget in budgets:
                rhos = []
                for r in range(repeats):
                    judge = Judge(group, cmp)
                    records = [judge(i, j) for i, j in
                               sample_pairs(SamplingSchedule(n, budget, seed + r))]
                    if method == "winloss":
                        ranking = winloss_aggregate(records, n)
                    else:
                        cfg = EloConfig(elo_cfg.k_factor, elo_cfg.initial_rating, elo_cfg.scale,
                                        seed + r, elo_cfg.binary_outcome)
                        ranking = elo_aggregate(records, n, cfg)[1]
                    rhos.append(_rho(ranking, gold))
                row(method, str(budget), [budget] * repeats, rhos, 2.0 * budget)
    return rows


def efficiency_csv(rows: Iterable[EfficiencyRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EFFICIENCY_COLUMNS)
    for r in rows:
        w.writerow([r.method, r.param, f"{r.queries:.6g}", f"{r.spearman_mean:.6f}",
                    f"{r.spearman_std:.6f}", r.group_id, r.seed, r.n_items,
                    f"{r.ordered_queries:.6g}"])
    return buf.getvalue()
