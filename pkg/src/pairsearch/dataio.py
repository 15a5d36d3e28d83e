"""Dataset ingestion, flat config files and run manifests."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .comparator import ConfigError
from .core import Candidate, CandidateSet, PairsearchError, PreferenceMatrix

MANIFEST_VERSION = 1


class DataError(PairsearchError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    group_id: str
    candidate_id: str
    text: str
    context: str | None = None
    human_score: float | None = None
    aspect_scores: dict[str, float] = field(default_factory=dict)
    latent_score: float | None = None


def _opt_number(value: Any, what: str, lineno: int) -> float | None:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise DataError(f"line {lineno}: {what} must be a finite number")
    return float(value)


def parse_record(obj: Any, lineno: int) -> DatasetRecord:
    if not isinstance(obj, dict):
        raise DataError(f"line {lineno}: expected a JSON object")
    try:
        group_id, candidate_id = str(obj["group_id"]), str(obj["candidate_id"])
    except KeyError as exc:
        raise DataError(f"line {lineno}: missing field {exc.args[0]!r}") from None
    if not group_id or not candidate_id:
        raise DataError(f"line {lineno}: empty group_id or candidate_id")
    text = obj.get("text", "")
    context = obj.get("context")
    if not isinstance(text, str) or not (context is None or isinstance(context, str)):
        raise DataError(f"line {lineno}: text and context must be strings")
    aspects = obj.get("aspect_scores") or {}
    if not isinstance(aspects, dict):
        raise DataError(f"line {lineno}: aspect_scores must be an object")
    return DatasetRecord(
        group_id, candidate_id, text, context,
        _opt_number(obj.get("human_score"), "human_score", lineno),
        {str(k): _opt_number(v, f"aspect score {k!r}", lineno) for k, v in aspects.items()},
        _opt_number(obj.get("latent_score"), "latent_score", lineno),
    )


def read_records(path: str | os.PathLike) -> list[DatasetRecord]:
    records, seen = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            rec = parse_record(obj, lineno)
            key = (rec.group_id, rec.candidate_id)
            if key in seen:
                raise DataError(f"line {lineno}: duplicate candidate {key} "
                                f"(first seen on line {seen[key]})")
            seen[key] = lineno
            records.append(rec)
    return records


def to_candidate_sets(records: Iterable[DatasetRecord], aspect: str | None = None) -> list[CandidateSet]:
    """Group records by ``group_id`` in file order.

    ``human_score`` of each candidate is the score for ``aspect`` when given,
    else the record's ``human_score``. ``latent_score`` falls back to that
    same gold score so synthetic runs work on annotated data.
    """
    groups: dict[str, list[DatasetRecord]] = {}
    for r in records:
        groups.setdefault(r.group_id, []).append(r)
    out = []
    for gid, recs in groups.items():
        contexts = {r.context for r in recs if r.context is not None}
        if len(contexts) > 1:
            raise DataError(f"group {gid!r} has conflicting contexts")
        cands = []
        for r in recs:
            gold = r.aspect_scores.get(aspect) if aspect else None
            gold = r.human_score if gold is None else gold
            latent = r.latent_score if r.latent_score is not None else gold
            cands.append(Candidate(r.candidate_id, r.text, latent, gold))
        out.append(CandidateSet(gid, tuple(cands), contexts.pop() if contexts else None))
    return out


def ingest(path: str | os.PathLike, aspect: str | None = None) -> list[CandidateSet]:
    """Read a JSON-lines dataset into candidate sets."""
    return to_candidate_sets(read_records(path), aspect)


def read_matrices(path: str | os.PathLike) -> dict[str, PreferenceMatrix]:
    """``{group_id: [[P(i>j) or null, ...], ...]}`` JSON into matrices."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed matrix file: {exc.msg}") from None
    out = {}
    for gid, rows in raw.items():
        try:
            out[gid] = PreferenceMatrix([[math.nan if v is None else v for v in row]
                                         for row in rows])
        except (TypeError, ValueError) as exc:
            raise DataError(f"group {gid!r}: {exc}") from None
    return out


# --- config ---------------------------------------------------------------


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _float_list(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _int_list(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _str_list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _float(s: str) -> float:
    return math.inf if s.strip().lower() in ("inf", "infinity") else float(s)


def _opt(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    return lambda s: None if s.strip() == "" else parse(s)


# key -> (parser, default as text)
CONFIG_KEYS: dict[str, tuple[Callable[[str], Any], str]] = {
    "seed": (int, "0"),
    "dataset": (str, ""),
    "aspect": (str, ""),
    "backend": (str, "synthetic"),
    "matrix": (str, ""),
    "noise_std": (float, "0"),
    "position_bias": (float, "0"),
    "oracle_seed": (int, "0"),
    "calibrated": (_bool, "false"),
    "template_id": (str, "default"),
    "template_dir": (str, ""),
    "endpoint_url": (str, ""),
    "model_name": (str, ""),
    "api_key_env": (str, "OPENAI_API_KEY"),
    "top_logprobs": (int, "5"),
    "max_in_flight": (int, "4"),
    "timeout": (float, "30"),
    "max_retries": (int, "3"),
    "n_groups": (int, "1"),
    "n_items": (int, "16"),
    "theta_scale": (float, "1"),
    "data_seed": (int, "0"),
    "method": (str, "beam"),
    "beam_size": (int, "1000"),
    "uncertainty_threshold": (_float, "0.6"),
    "anchor_size": (_opt(int), ""),
    "anchor_z": (float, "1.28"),
    "anchor_p": (float, "0.4"),
    "anchor_margin": (float, "0.07"),
    "anchor_deff": (float, "1.5"),
    "quantile_prior": (_float_list, ""),
    "workers": (int, "1"),
    "report_likelihood": (_bool, "true"),
    "methods": (_str_list, "greedy,beam,winloss,elo"),
    "budgets": (_int_list, ""),
    "beam_sizes": (_int_list, "1,2,5,10,20,50,100"),
    "repeats": (int, "10"),
    "n_seeds": (int, "10"),
    "posteriors": (str, ""),
    "human_prior": (_float_list, ""),
    "support": (_float_list, "1,2,3,4,5"),
    "mae_mode": (str, "expected"),
    "sizes": (_int_list, "25,50,75,100,125,150,175,200"),
    "population": (int, "1000"),
    "score_prior": (_float_list, "0.1,0.2,0.4,0.2,0.1"),
}


def parse_kv_lines(lines: Iterable[str], source: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config(path: str | os.PathLike | None = None,
                overrides: Iterable[str] = ()) -> dict[str, str]:
    """Effective raw config: defaults, then the file, then ``key=value`` overrides."""
    raw = {k: default for k, (_, default) in CONFIG_KEYS.items()}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                raw.update(parse_kv_lines(fh, str(path)))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    raw.update(parse_kv_lines(overrides, "override"))
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return dict(sorted(raw.items()))


def typed(raw: dict[str, str]) -> dict[str, Any]:
    out = {}
    for key, value in raw.items():
        parse = CONFIG_KEYS[key][0]
        try:
            out[key] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return out


# --- manifests ------------------------------------------------------------


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def input_hash(paths: Iterable[str]) -> str:
    """Combined hash of the input files, or ``"none"`` for purely synthetic runs."""
    paths = [p for p in paths if p]
    if not paths:
        return "none"
    h = hashlib.sha256()
    for p in paths:
        h.update(sha256_file(p).encode())
    return h.hexdigest()


def write_manifest(path: str | os.PathLike, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path: str | os.PathLike) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest: {exc}") from None
    if manifest.get("version") != MANIFEST_VERSION:
        raise ConfigError("unsupported manifest version")
    return manifest
