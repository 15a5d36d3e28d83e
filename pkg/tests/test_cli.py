import csv
import json
import os

import numpy as np
import pytest

from pairsearch.cli import main, run_command
from pairsearch.comparator import ConfigError
from pairsearch.dataio import DataError, ingest, load_config, read_manifest


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return str(path)


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def outputs(directory):
    manifest = read_manifest(os.path.join(directory, "manifest.json"))
    return {name: open(os.path.join(directory, name), "rb").read() for name in manifest["outputs"]}


class TestIngest:
    def test_groups_in_file_order(self, tmp_path):
        rows = [{"group_id": g, "candidate_id": c, "text": f"{g}{c}", "context": f"ctx {g}",
                 "human_score": k} for g in ("b", "a") for k, c in enumerate("xyz")]
        groups = ingest(write_jsonl(tmp_path / "d.jsonl", rows))
        assert [g.group_id for g in groups] == ["b", "a"]
        assert [len(g) for g in groups] == [3, 3]
        assert groups[0].context == "ctx b"
        assert groups[1].gold().tolist() == [0, 1, 2]

    def test_duplicate_names_line(self, tmp_path):
        rows = [{"group_id": "g", "candidate_id": "a"}, {"group_id": "g", "candidate_id": "b"},
                {"group_id": "g", "candidate_id": "a"}]
        with pytest.raises(DataError, match="line 3"):
            ingest(write_jsonl(tmp_path / "d.jsonl", rows))

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"group_id": "g", "candidate_id": "a"}\n{oops\n', encoding="utf-8")
        with pytest.raises(DataError, match="line 2"):
            ingest(str(path))

    def test_bad_score(self, tmp_path):
        rows = [{"group_id": "g", "candidate_id": "a", "human_score": "high"}]
        with pytest.raises(DataError, match="line 1"):
            ingest(write_jsonl(tmp_path / "d.jsonl", rows))

    def test_aspect_scores(self, tmp_path):
        rows = [{"group_id": "g", "candidate_id": c, "human_score": 1,
                 "aspect_scores": {"coherence": s}} for c, s in (("a", 2), ("b", 5))]
        groups = ingest(write_jsonl(tmp_path / "d.jsonl", rows), "coherence")
        assert groups[0].gold().tolist() == [2, 5]

    def test_hanna_shape(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = [{"group_id": f"prompt{p}", "candidate_id": f"story{s}", "text": "...",
                 "human_score": int(rng.integers(1, 6))} for p in range(96) for s in range(11)]
        groups = ingest(write_jsonl(tmp_path / "hanna.jsonl", rows))
        assert len(groups) == 96 and {len(g) for g in groups} == {11}
        assert sum(len(g) for g in groups) == 1056


class TestConfig:
    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\nmethod = greedy\nseed=4\n", encoding="utf-8")
        raw = load_config(str(path), ["seed=7"])
        assert raw["method"] == "greedy" and raw["seed"] == "7"
        assert raw["beam_size"] == "1000" and raw["uncertainty_threshold"] == "0.6"

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            load_config(None, ["bogus=1"])


def cli(tmp_path, command, *sets, out="out"):
    argv = [command, "--out", str(tmp_path / out)]
    for s in sets:
        argv += ["--set", s]
    return main(argv)


class TestCommands:
    def test_rank_noiseless(self, tmp_path, capsys):
        assert cli(tmp_path, "rank", "method=greedy", "n_groups=3", "n_items=16",
                   "quantile_prior=0.1,0.2,0.4,0.2,0.1") == 0
        groups = read_csv(tmp_path / "out" / "groups.csv")
        assert [float(g["spearman_gold"]) for g in groups] == [1.0, 1.0, 1.0]
        assert all(int(g["query_count"]) <= 64 for g in groups)
        ranks = read_csv(tmp_path / "out" / "rankings.csv")
        assert len(ranks) == 48 and set(ranks[0]) >= {"group_id", "method", "seed"}
        manifest = read_manifest(tmp_path / "out" / "manifest.json")
        assert manifest["query_count"] == sum(int(g["query_count"]) for g in groups)
        assert manifest["input_hash"] == "none"
        assert json.loads(capsys.readouterr().out)["command"] == "rank"

    def test_rank_scaled(self, tmp_path):
        assert cli(tmp_path, "rank", "method=beam_scaled", "beam_size=20", "anchor_size=10",
                   "n_items=40", "noise_std=0.5") == 0
        assert len(read_csv(tmp_path / "out" / "rankings.csv")) == 40

    def test_rank_matrix_backend(self, tmp_path):
        mat = tmp_path / "m.json"
        mat.write_text(json.dumps({"g0": [[None, 0.8, 0.9], [0.2, None, 0.7], [0.1, 0.3, None]]}))
        assert cli(tmp_path, "rank", "backend=matrix", f"matrix={mat}", "method=beam",
                   "beam_size=10") == 0
        ranks = read_csv(tmp_path / "out" / "rankings.csv")
        assert [r["rank"] for r in ranks] == ["1", "2", "3"]
        g = read_csv(tmp_path / "out" / "groups.csv")[0]
        assert float(g["log_likelihood"]) == pytest.approx(np.log(0.8 * 0.7), abs=1e-6)

    def test_rank_dataset(self, tmp_path):
        rows = [{"group_id": "g", "candidate_id": c, "human_score": s}
                for c, s in (("a", 1), ("b", 4), ("c", 3), ("d", 2))]
        data = write_jsonl(tmp_path / "d.jsonl", rows)
        assert cli(tmp_path, "rank", f"dataset={data}", "method=greedy") == 0
        ranks = {r["candidate_id"]: r["rank"] for r in read_csv(tmp_path / "out" / "rankings.csv")}
        assert ranks == {"b": "1", "c": "2", "d": "3", "a": "4"}
        assert read_manifest(tmp_path / "out" / "manifest.json")["input_hash"] != "none"

    def test_bench(self, tmp_path):
        assert cli(tmp_path, "bench", "n_items=8", "repeats=2", "beam_sizes=1,2",
                   "methods=greedy,beam,elo,winloss", "budgets=4,28", "noise_std=1") == 0
        rows = read_csv(tmp_path / "out" / "efficiency.csv")
        assert [r["method"] for r in rows] == ["greedy", "beam", "beam", "elo", "elo",
                                               "winloss", "winloss"]

    def test_transitivity(self, tmp_path):
        assert cli(tmp_path, "transitivity", "n_items=10", "methods=greedy,beam",
                   "beam_size=10", "noise_std=1") == 0
        rows = read_csv(tmp_path / "out" / "transitivity.csv")
        assert [r["method"] for r in rows] == ["greedy", "beam"]
        assert all(r["n_seeds"] == "10" and float(r["spearman_std"]) >= 0 for r in rows)

    def test_calibrate(self, tmp_path):
        rows = [{"group_id": "g", "candidate_id": str(k), "probs": p, "human_score": h}
                for k, (p, h) in enumerate([([0.1, 0.6, 0.3], 3), ([0.2, 0.5, 0.3], 3),
                                            ([0.6, 0.3, 0.1], 1)])]
        post = write_jsonl(tmp_path / "post.jsonl", rows)
        assert cli(tmp_path, "calibrate", f"posteriors={post}", "support=1,2,3") == 0
        summary = json.loads((tmp_path / "out" / "calibration.json").read_text())
        assert summary["mae_after"] < summary["mae_before"]
        assert len((tmp_path / "out" / "calibrated.jsonl").read_text().splitlines()) == 3

    def test_anchor(self, tmp_path):
        assert cli(tmp_path, "anchor", "sizes=25,100,200", "repeats=50") == 0
        rows = read_csv(tmp_path / "out" / "anchor_kl.csv")
        kls = [float(r["kl_mean"]) for r in rows]
        assert kls == sorted(kls, reverse=True)


class TestExitCodes:
    def test_config_error(self, tmp_path):
        assert cli(tmp_path, "rank", "beam_size=0") == 2
        assert cli(tmp_path, "rank", "seed=abc") == 2
        assert cli(tmp_path, "rank", "nonsense=1") == 2

    def test_missing_api_key(self, tmp_path, monkeypatch):
        monkeypatch.delenv("PAIRSEARCH_NO_SUCH_KEY", raising=False)
        assert cli(tmp_path, "rank", "backend=llm", "endpoint_url=http://127.0.0.1:9/v1",
                   "model_name=m", "api_key_env=PAIRSEARCH_NO_SUCH_KEY") == 2

    def test_data_error(self, tmp_path):
        assert cli(tmp_path, "rank", f"dataset={tmp_path / 'missing.jsonl'}") == 3
        bad = tmp_path / "bad.jsonl"
        bad.write_text("not json\n")
        assert cli(tmp_path, "rank", f"dataset={bad}") == 3

    def test_backend_error(self, tmp_path):
        mat = tmp_path / "m.json"
        mat.write_text(json.dumps({"g0": [[None, 0.8, None], [0.2, None, None], [None, None, None]]}))
        assert cli(tmp_path, "rank", "backend=matrix", f"matrix={mat}", "method=greedy") == 4


class TestReplay:
    @pytest.mark.parametrize("command,sets", [
        ("rank", ["noise_std=1", "n_groups=2", "beam_size=20"]),
        ("bench", ["n_items=8", "repeats=2", "beam_sizes=1,3", "noise_std=1"]),
        ("transitivity", ["n_items=8", "methods=greedy,beam", "beam_size=5", "noise_std=1"]),
        ("anchor", ["sizes=20,40", "repeats=10"]),
    ])
    def test_byte_identical(self, tmp_path, command, sets):
        assert cli(tmp_path, command, *sets, out="first") == 0
        assert main(["replay", str(tmp_path / "first" / "manifest.json"),
                     "--out", str(tmp_path / "second")]) == 0
        assert outputs(tmp_path / "first") == outputs(tmp_path / "second")

    def test_changed_input_rejected(self, tmp_path):
        rows = [{"group_id": "g", "candidate_id": c, "human_score": s}
                for c, s in (("a", 1), ("b", 2))]
        data = write_jsonl(tmp_path / "d.jsonl", rows)
        assert cli(tmp_path, "rank", f"dataset={data}", out="first") == 0
        write_jsonl(tmp_path / "d.jsonl", rows[::-1])
        assert main(["replay", str(tmp_path / "first" / "manifest.json"),
                     "--out", str(tmp_path / "second")]) == 3

    def test_run_command_api(self, tmp_path):
        manifest = run_command("anchor", load_config(None, ["sizes=10", "repeats=3"]),
                               str(tmp_path / "o"))
        assert set(manifest) >= {"version", "config", "seed", "backend", "method",
                                 "query_count", "wall_time", "input_hash", "outputs"}
