"""Correlation, error and distribution metrics.

Includes score-prior estimation and rescaling of score posteriors,
quantile-matched score assignment for rankings, and the anchor-sample KL
experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Literal, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import DomainError, PairsearchError, Ranking

SIMPLEX_TOL = 1e-9


class UndefinedCorrelationError(PairsearchError, ValueError):
    pass


class CalibrationError(PairsearchError, ValueError):
    pass


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Tie-corrected Spearman: Pearson correlation of average ranks."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise UndefinedCorrelationError(f"shape mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise UndefinedCorrelationError("need at least two observations")
    rx = rankdata(x) - (len(x) + 1) / 2
    ry = rankdata(y) - (len(y) + 1) / 2
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        raise UndefinedCorrelationError("constant input")
    return float(np.clip(rx @ ry / denom, -1.0, 1.0))


@dataclass(frozen=True)
class CorrelationSummary:
    mean: float
    n_groups: int
    skipped: int


def sample_level_correlation(groups: Iterable[tuple[Sequence[float], Sequence[float]]]) -> CorrelationSummary:
    """Mean per-group Spearman; groups where it is undefined are skipped."""
    rhos, skipped = [], 0
    for pred, gold in groups:
        try:
            rhos.append(spearman(pred, gold))
        except UndefinedCorrelationError:
            skipped += 1
    if not rhos:
        raise UndefinedCorrelationError(f"all {skipped} groups have undefined correlation")
    return CorrelationSummary(float(np.mean(rhos)), len(rhos), skipped)


def dataset_level_correlation(pred: Sequence[float], gold: Sequence[float]) -> float:
    return spearman(pred, gold)


def transitivity_error(run: Callable[[int], Ranking | Sequence[float]], gold: Sequence[float],
                       n_seeds: int = 10) -> tuple[float, float]:
    """Mean and sample std of Spearman across seeds ``0..n_seeds-1``.

    ``run(seed)`` returns a :class:`Ranking` or per-candidate scores.
    """
    if n_seeds < 2:
        raise DomainError("n_seeds must be at least 2")
    rhos = []
    for seed in range(n_seeds):
        out = run(seed)
        scores = out.scores() if isinstance(out, Ranking) else out
        rhos.append(spearman(scores, gold))
    return float(np.mean(rhos)), float(np.std(rhos, ddof=1))


def _simplex(probs: Sequence[float], what: str) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise DomainError(f"{what} is not a probability vector")
    return p


@dataclass(frozen=True)
class ScorePosterior:
    """A model's distribution over the score support for one candidate."""

    candidate_id: str
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", tuple(float(v) for v in self.probs))
        _simplex(self.probs, f"posterior of {self.candidate_id!r}")

    @property
    def array(self) -> np.ndarray:
        return np.array(self.probs)


@dataclass(frozen=True)
class ScorePrior:
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", tuple(float(v) for v in self.probs))
        _simplex(self.probs, "prior")

    @property
    def array(self) -> np.ndarray:
        return np.array(self.probs)

    @classmethod
    def from_scores(cls, scores: Iterable[float], support: Sequence[float]) -> ScorePrior:
        """Empirical histogram of ``scores`` over ``support``."""
        support = list(support)
        counts = np.zeros(len(support))
        for s in scores:
            try:
                counts[support.index(s)] += 1
            except ValueError:
                raise DomainError(f"score {s} not in support {support}") from None
        if counts.sum() == 0:
            raise DomainError("no scores given")
        return cls(tuple(counts / counts.sum()))


def estimate_prior(posteriors: Sequence[ScorePosterior]) -> ScorePrior:
    """Average of the posteriors, i.e. marginalization under uniform p(y)."""
    if not posteriors:
        raise DomainError("need at least one posterior")
    k = len(posteriors[0].probs)
    if any(len(p.probs) != k for p in posteriors):
        raise DomainError("posteriors have different supports")
    avg = np.mean([p.array for p in posteriors], axis=0)
    return ScorePrior(tuple(avg / avg.sum()))


def calibrate_scores(posterior: ScorePosterior, model_prior: ScorePrior,
                     human_prior: ScorePrior) -> ScorePosterior:
    """Reweight a posterior by ``human_prior / model_prior`` and renormalize."""
    post, pm, ph = posterior.array, model_prior.array, human_prior.array
    if not (len(post) == len(pm) == len(ph)):
        raise DomainError("posterior and priors must share a support")
    if np.any((pm == 0) & (post > 0)):
        raise CalibrationError("model prior has zero mass where the posterior does not")
    ratio = np.divide(ph, pm, out=np.zeros_like(ph), where=pm > 0)
    w = ratio * post
    if w.sum() == 0:
        raise CalibrationError(f"calibrated posterior of {posterior.candidate_id!r} vanishes")
    return ScorePosterior(posterior.candidate_id, tuple(w / w.sum()))


def posterior_scores(posteriors: Sequence[ScorePosterior], support: Sequence[float],
                     mode: Literal["expected", "argmax"] = "expected") -> np.ndarray:
    """Point scores from posteriors (expected value, or the most likely score)."""
    support = np.asarray(support, dtype=float)
    mat = np.array([p.array for p in posteriors])
    if mat.shape[1] != len(support):
        raise DomainError("posterior length does not match the support")
    if mode == "expected":
        return mat @ support
    if mode == "argmax":
        return support[np.argmax(mat, axis=1)]
    raise DomainError(f"unknown mode {mode!r}")


def mae(pred_scores: Sequence[float], gold_scores: Sequence[float]) -> float:
    pred = np.asarray(pred_scores, dtype=float)
    gold = np.asarray(gold_scores, dtype=float)
    if pred.shape != gold.shape:
        raise DomainError(f"length mismatch: {pred.shape} vs {gold.shape}")
    return float(np.mean(np.abs(pred - gold)))


def quantile_blocks(n: int, prior: ScorePrior) -> np.ndarray:
    """How many items get each score, lowest score first."""
    cutoffs = np.ceil(np.round(np.cumsum(prior.array) * n, 9)).astype(int)
    cutoffs[-1] = n
    cutoffs = np.minimum(np.maximum.accumulate(cutoffs), n)
    return np.diff(np.concatenate([[0], cutoffs]))


def quantile_match(ranking: Ranking, target_prior: ScorePrior,
                   support: Sequence[float] | None = None) -> np.ndarray:
    """Scores per candidate matching ``target_prior``'s CDF.

    The worst-ranked block gets the lowest score. ``support`` defaults to
    ``1..K``.
    """
    k = len(target_prior.probs)
    support = np.arange(1, k + 1, dtype=float) if support is None else np.asarray(support, float)
    if len(support) != k:
        raise DomainError("support length does not match the prior")
    blocks = quantile_blocks(len(ranking), target_prior)
    by_position = np.repeat(support, blocks)[::-1]  # best-first
    out = np.empty(len(ranking))
    out[list(ranking.order)] = by_position
    return out


def kl_divergence(p: ScorePrior | Sequence[float], q: ScorePrior | Sequence[float]) -> float:
    """``sum p ln(p/q)`` in nats; ``inf`` when ``p`` has mass where ``q`` has none."""
    pa = p.array if isinstance(p, ScorePrior) else np.asarray(p, dtype=float)
    qa = q.array if isinstance(q, ScorePrior) else np.asarray(q, dtype=float)
    if pa.shape != qa.shape:
        raise DomainError("distributions must share a support")
    mask = pa > 0
    if np.any(qa[mask] == 0):
        return math.inf
    return max(0.0, float(np.sum(pa[mask] * np.log(pa[mask] / qa[mask]))))


@dataclass(frozen=True)
class AnchorKlRow:
    size: int
    kl_mean: float
    kl_std: float
    repeats: int


def anchor_kl_experiment(gold_scores: Sequence[float], sizes: Sequence[int],
                         repeats: int = 100, seed: int = 0) -> list[AnchorKlRow]:
    """KL between random-subsample and full score histograms, per sample size.

    Empty bins in a subsample histogram are given a count of one.
    """
    gold = np.asarray(gold_scores, dtype=float)
    support, full_counts = np.unique(gold, return_counts=True)
    full = full_counts / full_counts.sum()
    rng = np.random.default_rng(seed)
    rows = []
    for size in sizes:
        if not 1 <= size <= len(gold):
            raise DomainError(f"sample size {size} outside 1..{len(gold)}")
        kls = []
        for _ in range(repeats):
            sample = rng.choice(gold, size=size, replace=False)
            counts = np.array([(sample == s).sum() for s in support], dtype=float)
            counts[counts == 0] = 1.0
            kls.append(kl_divergence(counts / counts.sum(), full))
        std = float(np.std(kls, ddof=1)) if repeats > 1 else 0.0
        rows.append(AnchorKlRow(int(size), float(np.mean(kls)), std, repeats))
    return rows
