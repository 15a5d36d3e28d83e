"""Command-line entry point.

Every command reads a flat ``key = value`` config file (``--config``) with
``--set key=value`` overrides, writes its result files to ``--out`` and
records a ``manifest.json`` from which ``pairsearch replay`` reproduces the
run. Exit codes: 0 ok, 2 config error, 3 data error, 4 backend error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from typing import Any, Callable

import numpy as np

from . import __version__
from .baselines import efficiency_csv, efficiency_curve
from .comparator import (
    CalibratedComparator,
    Comparator,
    ComparatorError,
    ConfigError,
    CountingComparator,
    Judge,
    LlmClientConfig,
    LlmComparator,
    MatrixComparator,
    SyntheticComparator,
    SyntheticOracleConfig,
    TemplateError,
)
from .core import CandidateSet, DomainError, PreferenceMatrix, synthetic_group
from .dataio import (
    MANIFEST_VERSION,
    DataError,
    ingest,
    input_hash,
    load_config,
    read_manifest,
    read_matrices,
    sha256_file,
    typed,
    write_manifest,
)
from .metrics import (
    ScorePosterior,
    ScorePrior,
    UndefinedCorrelationError,
    anchor_kl_experiment,
    calibrate_scores,
    estimate_prior,
    mae,
    posterior_scores,
    quantile_match,
    spearman,
    transitivity_error,
)
from .ranker import AnchorConfig, RankerConfig, rank

logger = logging.getLogger("pairsearch")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND = 0, 2, 3, 4


def _fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.6f}"


def _write_csv(path: str, header: list[str], rows: list[list[Any]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def load_groups(cfg: dict) -> list[CandidateSet]:
    if cfg["dataset"]:
        try:
            return ingest(cfg["dataset"], cfg["aspect"] or None)
        except OSError as exc:
            raise DataError(f"cannot read dataset: {exc}") from None
    if cfg["backend"] == "matrix":
        return [CandidateSet.anonymous(m.n, gid) for gid, m in _matrices(cfg).items()]
    return [synthetic_group(cfg["n_items"], cfg["data_seed"] + g, cfg["theta_scale"], f"g{g}")
            for g in range(cfg["n_groups"])]


def _matrices(cfg: dict) -> dict[str, PreferenceMatrix]:
    if not cfg["matrix"]:
        raise ConfigError("matrix backend needs the 'matrix' key")
    try:
        return read_matrices(cfg["matrix"])
    except OSError as exc:
        raise DataError(f"cannot read matrix file: {exc}") from None


def make_comparator_factory(cfg: dict) -> Callable[[CandidateSet], Comparator]:
    """Per-group comparator builder for the configured backend.

    Backends are constructed here, before any group is processed, so that
    configuration problems (such as a missing API key) surface immediately.
    """
    backend = cfg["backend"]
    if backend == "synthetic":
        shared: Comparator = SyntheticComparator(
            SyntheticOracleConfig(cfg["noise_std"], cfg["position_bias"], cfg["oracle_seed"]))
        factory = lambda group: shared  # noqa: E731
    elif backend == "matrix":
        mats = _matrices(cfg)

        def factory(group: CandidateSet) -> Comparator:
            if group.group_id not in mats:
                raise DataError(f"no matrix for group {group.group_id!r}")
            if mats[group.group_id].n != len(group):
                raise DataError(f"matrix size mismatch for group {group.group_id!r}")
            return MatrixComparator(mats[group.group_id])
    elif backend == "llm":
        if not cfg["endpoint_url"] or not cfg["model_name"]:
            raise ConfigError("llm backend needs endpoint_url and model_name")
        llm = LlmComparator(LlmClientConfig(
            cfg["endpoint_url"], cfg["model_name"], cfg["api_key_env"],
            top_logprobs=cfg["top_logprobs"], timeout=cfg["timeout"],
            max_retries=cfg["max_retries"], max_in_flight=cfg["max_in_flight"],
            template_dir=cfg["template_dir"] or None))
        factory = lambda group: llm  # noqa: E731
    else:
        raise ConfigError(f"unknown backend {backend!r}")
    if cfg["calibrated"]:
        return lambda group: CalibratedComparator(factory(group))
    return factory


def _ranker_config(cfg: dict, method: str | None = None, seed: int | None = None) -> RankerConfig:
    return RankerConfig(method or cfg["method"], cfg["beam_size"], cfg["uncertainty_threshold"],
                        cfg["seed"] if seed is None else seed, cfg["workers"])


def _anchor_config(cfg: dict) -> AnchorConfig:
    return AnchorConfig(cfg["anchor_size"], cfg["anchor_z"], cfg["anchor_p"],
                        cfg["anchor_margin"], cfg["anchor_deff"])


def _gold(group: CandidateSet) -> np.ndarray | None:
    try:
        return group.gold()
    except DomainError:
        return None


def _rho(scores, gold) -> float:
    if gold is None:
        return math.nan
    try:
        return spearman(scores, gold)
    except UndefinedCorrelationError:
        return math.nan


# --- commands -------------------------------------------------------------


def cmd_rank(cfg: dict, out: str) -> dict:
    groups = load_groups(cfg)
    factory = make_comparator_factory(cfg)
    rcfg = _ranker_config(cfg)
    prior = ScorePrior(tuple(cfg["quantile_prior"])) if cfg["quantile_prior"] else None
    rank_rows, group_rows, total = [], [], 0
    for group in groups:
        counter = CountingComparator(factory(group))
        judge = Judge(group, counter, cfg["aspect"] or "overall", cfg["template_id"])
        res = rank(group, rcfg, judge, _anchor_config(cfg))
        queries = counter.calls
        total += queries
        ll = math.nan
        if cfg["report_likelihood"] and len(group) > 1:
            order = res.ranking.order
            ll = math.fsum(math.log(p) if p > 0 else -math.inf
                           for p in (judge(a, b).p_first for a, b in zip(order, order[1:])))
        elif len(group) == 1:
            ll = 0.0
        qscores = quantile_match(res.ranking, prior) if prior else None
        pos = res.ranking.positions()
        for idx, cand in enumerate(group.candidates):
            rank_rows.append([group.group_id, rcfg.method, rcfg.seed, cand.id, int(pos[idx]) + 1,
                              "" if qscores is None else f"{qscores[idx]:g}"])
        group_rows.append([group.group_id, rcfg.method, rcfg.seed, len(group), queries,
                           _fmt(ll), _fmt(_rho(res.ranking.scores(), _gold(group)))])
    _write_csv(os.path.join(out, "rankings.csv"),
               ["group_id", "method", "seed", "candidate_id", "rank", "quantile_score"], rank_rows)
    _write_csv(os.path.join(out, "groups.csv"),
               ["group_id", "method", "seed", "n_items", "query_count",
                "log_likelihood", "spearman_gold"], group_rows)
    return {"query_count": total, "outputs": ["rankings.csv", "groups.csv"]}


def cmd_bench(cfg: dict, out: str) -> dict:
    groups = load_groups(cfg)
    factory = make_comparator_factory(cfg)
    total = 0
    chunks: list[str] = []
    for group in groups:
        n = len(group)
        total_pairs = n * (n - 1) // 2
        budgets = cfg["budgets"] or sorted({b for b in (1, n, n * 2, n * 4, total_pairs)
                                            if b <= total_pairs})
        rows = efficiency_curve(group, factory(group), cfg["methods"], budgets,
                                cfg["beam_sizes"], cfg["repeats"], cfg["seed"])
        total += int(sum(r.queries * cfg["repeats"] for r in rows))
        text = efficiency_csv(rows)
        # one header for the whole file
        chunks.append(text if not chunks else text.split("\n", 1)[1])
    with open(os.path.join(out, "efficiency.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("".join(chunks))
    return {"query_count": total, "outputs": ["efficiency.csv"],
            "budget_convention": "unordered pairs; ordered_queries = 2 x budget"}


def cmd_transitivity(cfg: dict, out: str) -> dict:
    groups = load_groups(cfg)
    factory = make_comparator_factory(cfg)
    rows = []
    for group in groups:
        gold = _gold(group)
        if gold is None:
            raise DataError(f"group {group.group_id!r} has no gold or latent scores")
        cmp = factory(group)
        for method in cfg["methods"]:
            if method not in ("greedy", "beam"):
                raise ConfigError(f"transitivity supports greedy and beam, not {method!r}")

            def run(seed: int, method=method):
                judge = Judge(group, cmp, cfg["aspect"] or "overall", cfg["template_id"])
                return rank(group, _ranker_config(cfg, method, cfg["seed"] + seed), judge).ranking

            try:
                mean, std = transitivity_error(run, gold, cfg["n_seeds"])
            except UndefinedCorrelationError:
                mean = std = math.nan
            param = "" if method == "greedy" else f"{cfg['beam_size']}/{cfg['uncertainty_threshold']:g}"
            rows.append([group.group_id, method, param, cfg["seed"], cfg["n_seeds"],
                         _fmt(mean), _fmt(std)])
    _write_csv(os.path.join(out, "transitivity.csv"),
               ["group_id", "method", "param", "seed", "n_seeds", "spearman_mean", "spearman_std"],
               rows)
    return {"query_count": None, "outputs": ["transitivity.csv"]}


def _read_posteriors(path: str) -> list[tuple[str, ScorePosterior, float | None]]:
    out = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read posteriors: {exc}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                post = ScorePosterior(str(obj["candidate_id"]), tuple(obj["probs"]))
                gold = obj.get("human_score")
                out.append((str(obj.get("group_id", "")), post,
                            None if gold is None else float(gold)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"line {lineno}: bad posterior record ({exc})") from None
    if not out:
        raise DataError("no posteriors found")
    return out


def cmd_calibrate(cfg: dict, out: str) -> dict:
    if not cfg["posteriors"]:
        raise ConfigError("calibrate needs the 'posteriors' key")
    support = cfg["support"]
    entries = _read_posteriors(cfg["posteriors"])
    posts = [p for _, p, _ in entries]
    model_prior = estimate_prior(posts)
    golds = [g for _, _, g in entries]
    if cfg["human_prior"]:
        human_prior = ScorePrior(tuple(cfg["human_prior"]))
    elif all(g is not None for g in golds):
        human_prior = ScorePrior.from_scores(golds, support)
    else:
        raise ConfigError("human_prior missing and not every record has a human_score")
    calibrated = [calibrate_scores(p, model_prior, human_prior) for p in posts]
    with open(os.path.join(out, "calibrated.jsonl"), "w", encoding="utf-8") as fh:
        for (gid, _, gold), post in zip(entries, calibrated):
            fh.write(json.dumps({"group_id": gid, "candidate_id": post.candidate_id,
                                 "probs": [round(v, 12) for v in post.probs],
                                 "human_score": gold}, sort_keys=True) + "\n")
    summary: dict[str, Any] = {
        "method": "prior_calibration", "seed": cfg["seed"], "group_id": "all",
        "mae_mode": cfg["mae_mode"],
        "model_prior": [round(v, 12) for v in model_prior.probs],
        "human_prior": [round(v, 12) for v in human_prior.probs],
    }
    if all(g is not None for g in golds):
        before = mae(posterior_scores(posts, support, cfg["mae_mode"]), golds)
        after = mae(posterior_scores(calibrated, support, cfg["mae_mode"]), golds)
        summary.update(mae_before=round(before, 12), mae_after=round(after, 12))
    with open(os.path.join(out, "calibration.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"query_count": 0, "outputs": ["calibrated.jsonl", "calibration.json"]}


def cmd_anchor(cfg: dict, out: str) -> dict:
    if cfg["dataset"]:
        gold = [c.human_score for g in ingest(cfg["dataset"], cfg["aspect"] or None)
                for c in g.candidates]
        if any(s is None for s in gold):
            raise DataError("anchor experiment needs a human score for every record")
    else:
        prior = np.asarray(cfg["score_prior"], dtype=float)
        rng = np.random.default_rng(cfg["data_seed"])
        gold = rng.choice(np.arange(1, len(prior) + 1), size=cfg["population"],
                          p=prior / prior.sum()).tolist()
    rows = anchor_kl_experiment(gold, cfg["sizes"], cfg["repeats"], cfg["seed"])
    _write_csv(os.path.join(out, "anchor_kl.csv"),
               ["group_id", "method", "seed", "size", "repeats", "kl_mean", "kl_std"],
               [["all", "anchor_kl", cfg["seed"], r.size, r.repeats, _fmt(r.kl_mean),
                 _fmt(r.kl_std)] for r in rows])
    return {"query_count": 0, "outputs": ["anchor_kl.csv"]}


COMMANDS: dict[str, Callable[[dict, str], dict]] = {
    "rank": cmd_rank,
    "bench": cmd_bench,
    "transitivity": cmd_transitivity,
    "calibrate": cmd_calibrate,
    "anchor": cmd_anchor,
}


def run_command(command: str, raw_cfg: dict[str, str], out: str) -> dict:
    """Run ``command`` and write its outputs plus ``manifest.json`` into ``out``."""
    cfg = typed(raw_cfg)
    os.makedirs(out, exist_ok=True)
    inputs = [cfg["dataset"], cfg["matrix"], cfg["posteriors"]]
    started = time.perf_counter()
    info = COMMANDS[command](cfg, out)
    manifest = {
        "version": MANIFEST_VERSION,
        "package_version": __version__,
        "command": command,
        "config": raw_cfg,
        "seed": cfg["seed"],
        "backend": {k: raw_cfg[k] for k in ("backend", "noise_std", "position_bias",
                                            "oracle_seed", "calibrated", "model_name")},
        "method": {k: raw_cfg[k] for k in ("method", "beam_size", "uncertainty_threshold",
                                           "anchor_size")},
        "query_count": info.pop("query_count"),
        "wall_time": round(time.perf_counter() - started, 3),
        "input_hash": input_hash(inputs),
        "outputs": {name: sha256_file(os.path.join(out, name)) for name in info.pop("outputs")},
        **info,
    }
    write_manifest(os.path.join(out, "manifest.json"), manifest)
    return manifest


def replay(manifest_path: str, out: str) -> dict:
    """Re-run a recorded command; the input files must be unchanged."""
    manifest = read_manifest(manifest_path)
    raw = manifest["config"]
    current = input_hash([raw.get("dataset", ""), raw.get("matrix", ""), raw.get("posteriors", "")])
    if current != manifest["input_hash"]:
        raise DataError("input files changed since the manifest was written")
    return run_command(manifest["command"], load_config(None, [f"{k}={v}" for k, v in raw.items()]),
                       out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairsearch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--out", required=True, help="output directory")
    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            manifest = replay(args.manifest, args.out)
        else:
            manifest = run_command(args.command, load_config(args.config, args.overrides),
                                   args.out)
    except (ConfigError, TemplateError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ComparatorError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    print(json.dumps({k: manifest[k] for k in ("command", "query_count", "outputs")}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
