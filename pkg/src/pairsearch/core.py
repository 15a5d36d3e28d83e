"""Domain types, ranking likelihoods and exhaustive reference solvers."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

LN2 = math.log(2.0)
# complementary entries must sum to one within this tolerance
COMPLEMENT_TOL = 1e-9


class PairsearchError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(PairsearchError, ValueError):
    """An argument lies outside the domain of an operation."""


class IncompleteMatrixError(PairsearchError, KeyError):
    """A required preference entry is missing."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class SizeLimitError(PairsearchError, ValueError):
    """Exhaustive search requested on too many items."""


@dataclass(frozen=True)
class Candidate:
    """One output to be ranked.

    ``latent_score`` is the ground-truth strength used by the synthetic
    oracle; ``human_score`` is a gold annotation.
    """

    id: str
    text: str = ""
    latent_score: float | None = None
    human_score: float | None = None

    def __post_init__(self) -> None:
        if self.latent_score is not None and not math.isfinite(self.latent_score):
            raise DomainError(f"latent_score of {self.id!r} must be finite")


@dataclass(frozen=True)
class CandidateSet:
    group_id: str
    candidates: tuple[Candidate, ...]
    context: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.group_id:
            raise DomainError("group_id must be non-empty")
        if not self.candidates:
            raise DomainError(f"group {self.group_id!r} has no candidates")
        ids = [c.id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise DomainError(f"duplicate candidate id in group {self.group_id!r}")

    def __len__(self) -> int:
        return len(self.candidates)

    def __getitem__(self, index: int) -> Candidate:
        return self.candidates[index]

    @classmethod
    def anonymous(cls, n: int, group_id: str = "g0") -> CandidateSet:
        """Candidates ``"0"..."n-1"`` with no payload, for matrix-backed runs."""
        return cls(group_id, tuple(Candidate(str(i)) for i in range(n)))

    @classmethod
    def from_latents(cls, latents: Iterable[float], group_id: str = "g0") -> CandidateSet:
        return cls(
            group_id,
            tuple(Candidate(str(i), latent_score=float(t)) for i, t in enumerate(latents)),
        )

    def latents(self) -> np.ndarray:
        if any(c.latent_score is None for c in self.candidates):
            raise DomainError(f"group {self.group_id!r} lacks latent scores")
        return np.array([c.latent_score for c in self.candidates], dtype=float)

    def gold(self) -> np.ndarray:
        """Human scores if every candidate has one, otherwise latent scores."""
        if all(c.human_score is not None for c in self.candidates):
            return np.array([c.human_score for c in self.candidates], dtype=float)
        return self.latents()


@dataclass(frozen=True)
class Ranking:
    """A total order over candidate indices, best first."""

    order: tuple[int, ...]

    def __post_init__(self) -> None:
        order = tuple(int(i) for i in self.order)
        object.__setattr__(self, "order", order)
        if sorted(order) != list(range(len(order))):
            raise DomainError(f"not a permutation of 0..{len(order) - 1}: {order}")

    def __len__(self) -> int:
        return len(self.order)

    def __iter__(self):
        return iter(self.order)

    def __getitem__(self, k: int) -> int:
        return self.order[k]

    def positions(self) -> np.ndarray:
        """``positions()[i]`` is the 0-based rank of candidate ``i``."""
        pos = np.empty(len(self.order), dtype=int)
        pos[list(self.order)] = np.arange(len(self.order))
        return pos

    def scores(self) -> np.ndarray:
        """Per-candidate score that decreases down the ranking (N for the best)."""
        return len(self.order) - self.positions()

    def reversed(self) -> Ranking:
        return Ranking(self.order[::-1])

    @classmethod
    def identity(cls, n: int) -> Ranking:
        return cls(tuple(range(n)))


class PreferenceMatrix:
    """Pairwise preference probabilities ``P(i > j)``, possibly partial.

    Backed by an ``n x n`` float array with NaN marking absent entries.
    """

    def __init__(self, probs: np.ndarray | Sequence[Sequence[float]]):
        probs = np.array(probs, dtype=float)
        if probs.ndim != 2 or probs.shape[0] != probs.shape[1] or probs.shape[0] < 1:
            raise DomainError(f"expected a non-empty square matrix, got {probs.shape}")
        np.fill_diagonal(probs, np.nan)
        present = ~np.isnan(probs)
        if np.any((probs[present] < 0) | (probs[present] > 1)):
            raise DomainError("preference probabilities must lie in [0, 1]")
        both = present & present.T
        if np.any(np.abs(probs[both] + probs.T[both] - 1.0) > COMPLEMENT_TOL):
            raise DomainError("P(i>j) + P(j>i) must equal 1")
        probs.setflags(write=False)
        self._p = probs

    @classmethod
    def from_entries(cls, n: int, entries: Mapping[tuple[int, int], float],
                     complete_complements: bool = True) -> PreferenceMatrix:
        """Build from ``{(i, j): P(i > j)}``; optionally fill ``(j, i)`` by complement."""
        probs = np.full((n, n), np.nan)
        for (i, j), p in entries.items():
            if i == j:
                raise DomainError("diagonal entries are not allowed")
            probs[i, j] = p
            if complete_complements and (j, i) not in entries:
                probs[j, i] = 1.0 - p
        return cls(probs)

    @classmethod
    def from_upper(cls, upper: np.ndarray) -> PreferenceMatrix:
        """Complete matrix from the strict upper triangle of ``upper``."""
        upper = np.asarray(upper, dtype=float)
        n = upper.shape[0]
        iu = np.triu_indices(n, 1)
        probs = np.full((n, n), np.nan)
        probs[iu] = upper[iu]
        probs[(iu[1], iu[0])] = 1.0 - upper[iu]
        return cls(probs)

    @property
    def n(self) -> int:
        return self._p.shape[0]

    @property
    def array(self) -> np.ndarray:
        return self._p

    def has(self, i: int, j: int) -> bool:
        return i != j and not math.isnan(self._p[i, j])

    def get(self, i: int, j: int) -> float:
        if not self.has(i, j):
            raise IncompleteMatrixError(f"missing preference entry ({i}, {j})")
        return float(self._p[i, j])

    def is_complete(self) -> bool:
        off = ~np.eye(self.n, dtype=bool)
        return not np.isnan(self._p[off]).any()

    def relabel(self, perm: Sequence[int]) -> PreferenceMatrix:
        """Matrix whose item ``k`` is this matrix's item ``perm[k]``."""
        perm = np.asarray(perm)
        return PreferenceMatrix(self._p[np.ix_(perm, perm)])

    def __repr__(self) -> str:
        return f"PreferenceMatrix(n={self.n})"


class Provenance(str, enum.Enum):
    SYNTHETIC = "synthetic"
    MATRIX = "matrix"
    LLM = "llm"
    CALIBRATED = "calibrated"


def entropy_uncertainty(p: float) -> float:
    """Binary entropy of a preference probability, in nats (``0 ln 0 = 0``)."""
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise DomainError(f"probability out of range: {p}")
    h = 0.0
    for q in (p, 1.0 - p):
        if q > 0.0:
            h -= q * math.log(q)
    return h


@dataclass(frozen=True)
class ComparisonRecord:
    """Outcome of one oracle query about the ordered pair ``(first, second)``.

    ``flagged`` marks records whose probability relied on an imputed
    choice-token logprob.
    """

    first: int
    second: int
    p_first: float
    provenance: Provenance
    uncertainty: float = field(default=math.nan)
    flagged: bool = False

    def __post_init__(self) -> None:
        if self.first == self.second:
            raise DomainError("a comparison needs two distinct candidates")
        h = entropy_uncertainty(self.p_first)
        if math.isnan(self.uncertainty):
            object.__setattr__(self, "uncertainty", h)
        elif abs(self.uncertainty - h) > 1e-9:
            raise DomainError("uncertainty must equal the entropy of p_first")

    def swapped(self) -> ComparisonRecord:
        return ComparisonRecord(self.second, self.first, 1.0 - self.p_first,
                                self.provenance, flagged=self.flagged)


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf


def transitive_log_likelihood(ranking: Ranking | Sequence[int], prefs: PreferenceMatrix) -> float:
    """Sum of ``ln P(a > b)`` over adjacent pairs of the ranking."""
    order = tuple(ranking)
    return math.fsum(_log(prefs.get(a, b)) for a, b in zip(order, order[1:]))


def non_transitive_log_likelihood(ranking: Ranking | Sequence[int], prefs: PreferenceMatrix) -> float:
    """Sum of ``ln P(a > b)`` over every pair with ``a`` ranked above ``b``."""
    order = tuple(ranking)
    return math.fsum(_log(prefs.get(a, b)) for a, b in itertools.combinations(order, 2))


def _exhaustive(prefs: PreferenceMatrix, max_n: int, score) -> Ranking:
    if prefs.n > max_n:
        raise SizeLimitError(f"n={prefs.n} exceeds exhaustive limit {max_n}")
    if not prefs.is_complete():
        raise IncompleteMatrixError("exhaustive search needs a complete matrix")
    best, best_score = None, -math.inf
    # permutations() is lexicographic, so keeping the first maximizer breaks ties
    for perm in itertools.permutations(range(prefs.n)):
        s = score(perm, prefs)
        if best is None or s > best_score:
            best, best_score = perm, s
    return Ranking(best)


def kemeny_optimal(prefs: PreferenceMatrix, max_n: int = 10) -> Ranking:
    """Brute-force maximizer of the all-pairs likelihood (a Kemeny-optimal ranking)."""
    return _exhaustive(prefs, max_n, non_transitive_log_likelihood)


def mle_transitive_exhaustive(prefs: PreferenceMatrix, max_n: int = 10) -> Ranking:
    """Brute-force maximizer of the adjacent-pairs likelihood."""
    return _exhaustive(prefs, max_n, transitive_log_likelihood)


def synthetic_group(n: int, seed: int = 0, scale: float = 1.0,
                    group_id: str = "g0") -> CandidateSet:
    """``n`` candidates with latent strengths drawn from ``Normal(0, scale)``."""
    rng = np.random.default_rng(seed)
    return CandidateSet.from_latents(rng.normal(0.0, scale, size=n), group_id)
