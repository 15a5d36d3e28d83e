"""Pairwise comparator oracles and the wrappers around them.

Every backend implements :class:`Comparator`. A comparator answers a
:class:`ComparisonQuery` about two candidates with a
:class:`~pairsearch.core.ComparisonRecord`. Ranking code drives comparators
through a :class:`Judge`, which binds one candidate set and memoizes answers
per ordered pair.
"""

from __future__ import annotations

import abc
import hashlib
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, replace
from importlib import resources
from typing import Mapping

import numpy as np
from scipy.special import expit

from .core import (
    Candidate,
    CandidateSet,
    ComparisonRecord,
    PairsearchError,
    PreferenceMatrix,
    Provenance,
)

logger = logging.getLogger(__name__)


class ComparatorError(PairsearchError):
    """A backend failed to answer a query; ``query`` holds the offending query."""

    def __init__(self, message: str, query: ComparisonQuery | None = None):
        super().__init__(message)
        self.query = query


class MissingPairError(ComparatorError):
    pass


class ExtractionError(ComparatorError):
    """Neither choice token was found in the returned logprobs."""


class TemplateError(PairsearchError):
    pass


class ConfigError(PairsearchError):
    pass


@dataclass(frozen=True)
class ComparisonQuery:
    """Ask whether ``first`` (shown as choice A) beats ``second`` (choice B).

    ``first_index``/``second_index`` locate the candidates in their group and
    are what the returned record refers to.
    """

    first: Candidate
    second: Candidate
    first_index: int
    second_index: int
    group_id: str = "g0"
    context: str | None = None
    aspect: str = "overall"
    template_id: str = "default"

    def __post_init__(self) -> None:
        if self.first.id == self.second.id:
            raise ValueError("a query needs two distinct candidates")

    def swapped(self) -> ComparisonQuery:
        return replace(self, first=self.second, second=self.first,
                       first_index=self.second_index, second_index=self.first_index)


class Comparator(abc.ABC):
    @abc.abstractmethod
    def compare(self, query: ComparisonQuery) -> ComparisonRecord:
        ...


class Judge:
    """A comparator bound to one candidate set, queried by index.

    Answers are memoized per ordered pair, so ``query_count`` is the number of
    distinct pairs the comparator was actually asked about.
    """

    def __init__(self, items: CandidateSet, comparator: Comparator,
                 aspect: str = "overall", template_id: str = "default"):
        self.items = items
        self.comparator = comparator
        self.aspect = aspect
        self.template_id = template_id
        self._memo: dict[tuple[int, int], ComparisonRecord] = {}
        self._lock = threading.Lock()

    def query(self, i: int, j: int) -> ComparisonQuery:
        return ComparisonQuery(
            first=self.items[i], second=self.items[j], first_index=i, second_index=j,
            group_id=self.items.group_id, context=self.items.context,
            aspect=self.aspect, template_id=self.template_id,
        )

    def __call__(self, i: int, j: int) -> ComparisonRecord:
        with self._lock:
            rec = self._memo.get((i, j))
        if rec is None:
            rec = self.comparator.compare(self.query(i, j))
            with self._lock:
                rec = self._memo.setdefault((i, j), rec)
        return rec

    @property
    def query_count(self) -> int:
        return len(self._memo)

    @property
    def records(self) -> list[ComparisonRecord]:
        return list(self._memo.values())


# --- matrix backend -------------------------------------------------------


class MatrixComparator(Comparator):
    """Answers from a stored preference matrix, indexed by candidate position."""

    def __init__(self, prefs: PreferenceMatrix):
        self.prefs = prefs

    def compare(self, query: ComparisonQuery) -> ComparisonRecord:
        i, j = query.first_index, query.second_index
        if not self.prefs.has(i, j):
            if self.prefs.has(j, i):
                p = 1.0 - self.prefs.get(j, i)
            else:
                raise MissingPairError(f"no stored preference for ({i}, {j})", query)
        else:
            p = self.prefs.get(i, j)
        return ComparisonRecord(i, j, p, Provenance.MATRIX)


# --- synthetic Bradley-Terry backend --------------------------------------


@dataclass(frozen=True)
class SyntheticOracleConfig:
    """Noise on the logit difference and a logit bonus for the first-listed item."""

    noise_std: float = 0.0
    position_bias: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def btl_probability(theta_first: float, theta_second: float,
                    cfg: SyntheticOracleConfig, draw: float = 0.0) -> float:
    """``logistic(theta_first - theta_second + position_bias + draw)``."""
    return float(expit(theta_first - theta_second + cfg.position_bias + draw))


def _stable_seed(*parts: str) -> int:
    digest = hashlib.sha256("\x1f".join(parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


class SyntheticComparator(Comparator):
    """Bradley-Terry oracle over ``Candidate.latent_score``.

    One Gaussian logit perturbation is drawn per unordered pair and kept, so
    the oracle behaves like a fixed (possibly non-transitive) preference
    matrix. The draw depends only on the seed, group and candidate ids, never
    on query order.
    """

    def __init__(self, cfg: SyntheticOracleConfig = SyntheticOracleConfig()):
        self.cfg = cfg
        self._noise: dict[tuple[str, str, str], float] = {}
        self._lock = threading.Lock()

    def pair_noise(self, group_id: str, a: str, b: str) -> float:
        """Noise on the logit of ``a`` over ``b``; antisymmetric in the pair."""
        if self.cfg.noise_std == 0:
            return 0.0
        lo, hi, sign = (a, b, 1.0) if a < b else (b, a, -1.0)
        key = (group_id, lo, hi)
        with self._lock:
            eps = self._noise.get(key)
            if eps is None:
                rng = np.random.default_rng(_stable_seed(str(self.cfg.seed), *key))
                eps = float(rng.normal(0.0, self.cfg.noise_std))
                self._noise[key] = eps
        return sign * eps

    def compare(self, query: ComparisonQuery) -> ComparisonRecord:
        a, b = query.first, query.second
        if a.latent_score is None or b.latent_score is None:
            raise ComparatorError("synthetic oracle needs latent scores", query)
        eps = self.pair_noise(query.group_id, a.id, b.id)
        p = btl_probability(a.latent_score, b.latent_score, self.cfg, eps)
        return ComparisonRecord(query.first_index, query.second_index, p, Provenance.SYNTHETIC)


# --- wrappers -------------------------------------------------------------


class CalibratedComparator(Comparator):
    """Averages a query with its order-swapped twin to cancel position bias."""

    def __init__(self, inner: Comparator):
        self.inner = inner

    def compare(self, query: ComparisonQuery) -> ComparisonRecord:
        fwd = self.inner.compare(query)
        rev = self.inner.compare(query.swapped())
        p = 0.5 * (fwd.p_first + (1.0 - rev.p_first))
        return ComparisonRecord(query.first_index, query.second_index, p,
                                Provenance.CALIBRATED, flagged=fwd.flagged or rev.flagged)


class CachingComparator(Comparator):
    """Memoizes answers across runs; the swapped pair is served by complement.

    Failed queries are not cached.
    """

    def __init__(self, inner: Comparator):
        self.inner = inner
        self._cache: dict[tuple, ComparisonRecord] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _key(q: ComparisonQuery) -> tuple:
        return (q.group_id, q.first.id, q.second.id, q.aspect, q.template_id)

    def compare(self, query: ComparisonQuery) -> ComparisonRecord:
        key = self._key(query)
        with self._lock:
            hit = self._cache.get(key)
            if hit is None:
                rev = self._cache.get(self._key(query.swapped()))
                if rev is not None:
                    hit = rev.swapped()
        if hit is not None:
            return replace(hit, first=query.first_index, second=query.second_index)
        rec = self.inner.compare(query)
        with self._lock:
            return self._cache.setdefault(key, rec)

    def __len__(self) -> int:
        return len(self._cache)


class CountingComparator(Comparator):
    """Pass-through that counts invocations of the wrapped comparator."""

    def __init__(self, inner: Comparator):
        self.inner = inner
        self.calls = 0
        self._lock = threading.Lock()

    def compare(self, query: ComparisonQuery) -> ComparisonRecord:
        with self._lock:
            self.calls += 1
        return self.inner.compare(query)


# --- prompts --------------------------------------------------------------

_PLACEHOLDER = re.compile(r"\[([A-Za-z_][A-Za-z0-9_]*)\]")
_CONTEXT_NAMES = {"source_text_input", "source", "context", "story_prompt"}


def load_template(template_id: str, directory: str | os.PathLike | None = None) -> str:
    """Read ``<template_id>.txt`` from ``directory`` or the bundled templates."""
    if directory is not None:
        path = os.path.join(directory, f"{template_id}.txt")
        if not os.path.exists(path):
            raise TemplateError(f"template {template_id!r} not found in {directory}")
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    res = resources.files("pairsearch.templates").joinpath(f"{template_id}.txt")
    if not res.is_file():
        raise TemplateError(f"no bundled template {template_id!r}")
    return res.read_text(encoding="utf-8")


def build_prompt(query: ComparisonQuery, template: str) -> str:
    """Fill a square-bracket template with the query's context and candidates.

    Placeholders ending in ``_1``/``_2`` take the first/second candidate text,
    ``[source_text_input]`` (or ``[context]``) the source, ``[aspect]`` the
    aspect; ``[output]`` marks the answer slot and is dropped.
    """
    names = _PLACEHOLDER.findall(template)
    if not any(n.endswith("_1") for n in names) or not any(n.endswith("_2") for n in names):
        raise TemplateError("template needs placeholders for both candidates")

    def fill(m: re.Match) -> str:
        name = m.group(1)
        if name.endswith("_1"):
            return query.first.text
        if name.endswith("_2"):
            return query.second.text
        if name in _CONTEXT_NAMES:
            if query.context is None:
                raise TemplateError(f"template uses [{name}] but the query has no context")
            return query.context
        if name == "aspect":
            return query.aspect
        if name == "output":
            return ""
        raise TemplateError(f"unresolved placeholder [{name}]")

    return _PLACEHOLDER.sub(fill, template).rstrip() + "\n"


# --- LLM backend ----------------------------------------------------------


def extract_preference(token_logprobs: Mapping[str, float],
                       choice_tokens: tuple[str, str] = ("A", "B")) -> tuple[float, bool]:
    """Two-way softmax over the choice-token logprobs.

    Returns ``(p_first, imputed)``. When only one choice token is present the
    other gets ``min(logprobs) - ln(k)`` and ``imputed`` is True.
    """
    tok_a, tok_b = choice_tokens
    lp_a, lp_b = token_logprobs.get(tok_a), token_logprobs.get(tok_b)
    if lp_a is None and lp_b is None:
        raise ExtractionError(f"neither {tok_a!r} nor {tok_b!r} among returned tokens")
    imputed = lp_a is None or lp_b is None
    if imputed:
        floor = min(token_logprobs.values()) - math.log(len(token_logprobs))
        lp_a = floor if lp_a is None else lp_a
        lp_b = floor if lp_b is None else lp_b
    return float(expit(lp_a - lp_b)), imputed


@dataclass(frozen=True)
class LlmClientConfig:
    endpoint_url: str
    model_name: str
    api_key_env: str = "OPENAI_API_KEY"
    choice_tokens: tuple[str, str] = ("A", "B")
    top_logprobs: int = 5
    max_tokens: int = 1
    timeout: float = 30.0
    max_retries: int = 3
    max_in_flight: int = 4
    template_dir: str | None = None

    def __post_init__(self) -> None:
        if self.top_logprobs < 2:
            raise ValueError("top_logprobs must be at least 2")
        if not 1 <= self.max_tokens <= 4:
            raise ValueError("max_tokens must be between 1 and 4")


def parse_top_logprobs(payload: dict) -> dict[str, float]:
    """Token -> logprob alternatives for the first generated token of a
    chat-completions response. Whitespace around tokens is stripped and
    duplicates keep their largest logprob."""
    try:
        first = payload["choices"][0]["logprobs"]["content"][0]
        alternatives = first.get("top_logprobs") or [first]
        out: dict[str, float] = {}
        for alt in alternatives:
            tok = alt["token"].strip()
            out[tok] = max(out.get(tok, -math.inf), float(alt["logprob"]))
        return out
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed completion payload: {exc}") from exc


class LlmComparator(Comparator):
    """Queries a chat-completions endpoint and reads the A/B token logprobs.

    The API key is read from ``cfg.api_key_env`` at construction time, so a
    missing key fails before any query is sent.
    """

    def __init__(self, cfg: LlmClientConfig, client=None):
        import httpx

        key = os.environ.get(cfg.api_key_env)
        if not key:
            raise ConfigError(f"environment variable {cfg.api_key_env} is not set")
        self.cfg = cfg
        self._headers = {"Authorization": f"Bearer {key}"}
        self._client = client or httpx.Client(timeout=cfg.timeout)
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)
        self._templates: dict[str, str] = {}

    def _template(self, template_id: str) -> str:
        if template_id not in self._templates:
            self._templates[template_id] = load_template(template_id, self.cfg.template_dir)
        return self._templates[template_id]

    def request_body(self, prompt: str) -> dict:
        return {
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
            "max_tokens": self.cfg.max_tokens,
            "logprobs": True,
            "top_logprobs": self.cfg.top_logprobs,
        }

    def _post(self, body: dict, query: ComparisonQuery) -> dict:
        import httpx

        last: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            try:
                with self._slots:
                    resp = self._client.post(self.cfg.endpoint_url, json=body,
                                             headers=self._headers)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise httpx.HTTPStatusError(f"HTTP {resp.status_code}",
                                                request=resp.request, response=resp)
                resp.raise_for_status()
                return resp.json()
            except httpx.HTTPStatusError as exc:
                last = exc
                if exc.response.status_code < 500 and exc.response.status_code != 429:
                    break
            except httpx.TransportError as exc:
                last = exc
            if attempt < self.cfg.max_retries:
                time.sleep(min(2.0 ** attempt * 0.5, 8.0))
        raise ComparatorError(f"LLM request failed: {last}", query)

    def compare(self, query: ComparisonQuery) -> ComparisonRecord:
        prompt = build_prompt(query, self._template(query.template_id))
        payload = self._post(self.request_body(prompt), query)
        try:
            logprobs = parse_top_logprobs(payload)
            p, imputed = extract_preference(logprobs, self.cfg.choice_tokens)
        except ExtractionError as exc:
            exc.query = query
            raise
        except ValueError as exc:
            raise ComparatorError(str(exc), query) from exc
        if imputed:
            logger.debug("imputed a choice-token logprob for %s vs %s",
                         query.first.id, query.second.id)
        return ComparisonRecord(query.first_index, query.second_index, p,
                                Provenance.LLM, flagged=imputed)
