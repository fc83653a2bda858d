import json
from dataclasses import replace

import numpy as np
import pytest

from specvoc import harness
from specvoc.errors import ConfigError, InputError
from specvoc.vocab import StaticVocab

from conftest import tiny_config


class TestScenarioText:
    def test_round_trip(self):
        script = harness.topic_switch("code", "law", 7, 33, seed=4)
        assert harness.parse_scenario(harness.format_scenario(script)) == script
        assert script.total_requests == 14 and script.boundaries() == [7]

    def test_requests_iterate_in_order(self):
        script = harness.parse_scenario("segment = a 2 5\nsegment = b 1 6\n")
        assert [(i, k, s.domain) for i, k, s in script.requests()] == [(0, 0, "a"), (1, 0, "a"), (2, 1, "b")]

    @pytest.mark.parametrize("text", ["", "seed = 3\n", "segment = a 0 5\n", "segment = a 2\n", "color = 2\n"])
    def test_errors(self, text):
        with pytest.raises(ConfigError):
            harness.parse_scenario(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            harness.load_scenario(tmp_path / "none.scn")


class TestStreams:
    def test_round_trip(self, tmp_path):
        streams = [np.array([1, 2, 3]), np.array([4])]
        harness.write_streams(tmp_path / "s.txt", streams)
        back = harness.read_streams(tmp_path / "s.txt", 10)
        assert [s.tolist() for s in back] == [[1, 2, 3], [4]]

    @pytest.mark.parametrize("text", ["1 2 x\n", "1 -2\n", "# only a comment\n", "3 99\n"])
    def test_malformed(self, tmp_path, text):
        (tmp_path / "s.txt").write_text(text)
        with pytest.raises(InputError):
            harness.read_streams(tmp_path / "s.txt", 10)


class TestHelpers:
    def test_trailing_mean(self):
        out = harness.trailing_mean([1, 2, 3, 4], 2)
        assert np.isnan(out[0]) and out[1:].tolist() == [1.5, 2.5, 3.5]
        with pytest.raises(InputError):
            harness.trailing_mean([1.0], 0)

    def test_smoothed_final(self):
        assert harness.smoothed_final(list(range(10))) == 8.5
        assert harness.smoothed_final([2.0]) == 2.0
        assert np.isnan(harness.smoothed_final([]))

    def test_variants(self):
        assert harness.disabled_paths(harness.variant_paths("static_only")) == [
            "vocabulary expansion", "semantic retrieval", "graph expansion", "alignment"]
        assert harness.disabled_paths(harness.variant_paths("full")) == []
        with pytest.raises(ConfigError):
            harness.variant_paths("turbo")


class TestRunScenario:
    def test_mal_bounds_and_records(self, tiny_cfg, tiny_bundle):
        script = harness.topic_switch("code", "law", 4, 40)
        run = harness.run_scenario(script, tiny_cfg, "full", tiny_bundle)
        assert len(run.records) == 8
        g = tiny_cfg["gamma"]
        assert all(1.0 <= r.mal <= g + 1 for r in run.records)
        assert [r.domain for r in run.records] == ["code"] * 4 + ["law"] * 4
        assert run.peak_dynamic <= tiny_cfg["dyn_size"]

    def test_bit_reproducible(self, tiny_cfg, tiny_bundle):
        script = harness.topic_switch("code", "med", 3, 40)
        a = harness.run_scenario(script, tiny_cfg, "full", tiny_bundle)
        b = harness.run_scenario(script, tiny_cfg, "full", tiny_bundle)
        assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]
        assert a.sim_ms == b.sim_ms

    def test_static_only_drops_after_switch(self, tiny_cfg, tiny_bundle):
        script = harness.topic_switch("code", "law", 10, 64)
        run = harness.run_scenario(script, tiny_cfg, "static_only", tiny_bundle)
        mal = run.mal_curve()
        assert mal[10:].mean() < mal[:10].mean()
        assert run.oov_events > 0 and run.updates == 0 and run.peak_dynamic == 0

    def test_unknown_domain(self, tiny_cfg, tiny_bundle):
        with pytest.raises(ConfigError):
            harness.run_scenario(harness.topic_switch("code", "art", 1, 8), tiny_cfg, "full", tiny_bundle)

    @pytest.mark.slow
    def test_matched_domain_close_to_full_vocabulary(self, desk_cfg, desk_bundle):
        """On the static core's own domain, the full variant stays near the full-vocabulary ceiling."""
        script = harness.ScenarioScript((harness.Segment("code", 50, 128),))
        full = harness.run_scenario(script, desk_cfg, "full", desk_bundle)
        everything = replace(desk_bundle, static=StaticVocab.full(desk_bundle.spec.vocab_size))
        ceiling = harness.run_scenario(script, desk_cfg, "static_only", everything)
        assert abs(full.mal / ceiling.mal - 1.0) <= 0.02


class TestCoverageStudy:
    def test_full_static_on_own_corpus(self, tiny_cfg):
        cfg = tiny_config(static_size=512)
        bundle = harness.prepare_bundle(cfg)
        streams = [harness.static_corpus(bundle.spec, 300)]
        [row] = harness.coverage_study(streams, cfg, ["static"], bundle, "code")
        assert row.covered_mass == pytest.approx(1.0)
        assert row.oov_events == 0

    def test_rows_and_recall_range(self, tiny_cfg, tiny_bundle):
        streams = harness.shifted_streams(tiny_bundle, tiny_cfg)
        rows = harness.coverage_study(streams, tiny_cfg, bundle=tiny_bundle)
        assert [r.arm for r in rows] == list(harness.ARMS)
        for r in rows:
            assert 0.0 <= r.covered_mass <= 1.0
            assert all(0.0 <= v <= 1.0 for v in r.recall.values())
        assert rows[0].peak_dynamic == 0

    def test_short_stream_rejected(self, tiny_cfg, tiny_bundle):
        with pytest.raises(InputError):
            harness.coverage_study([[1, 2]], tiny_cfg, ["static"], tiny_bundle)

    def test_unknown_arm(self, tiny_cfg, tiny_bundle):
        with pytest.raises(ConfigError):
            harness.coverage_study([list(range(20))], tiny_cfg, ["magic"], tiny_bundle)


class TestBetaSweep:
    def test_two_betas(self, tiny_cfg, tiny_bundle):
        trajs = harness.beta_sweep([0.0, 0.3], tiny_cfg, bundle=tiny_bundle)
        assert [t.beta for t in trajs] == [0.0, 0.3]
        assert len(trajs[0].eval_loss) == len(trajs[1].eval_loss) == tiny_cfg["sweep_updates"]
        assert all(x >= 0 for t in trajs for x in t.train_loss + t.eval_loss)
        # beta = 0 puts weight one on every horizon step
        assert all(w == 1.0 for row in trajs[0].mean_weights for w in row)

    def test_same_data_for_every_beta(self, tiny_cfg, tiny_bundle):
        a, b = harness.beta_sweep([0.0, 0.0], tiny_cfg, bundle=tiny_bundle)
        assert a.eval_loss == b.eval_loss

    @pytest.mark.parametrize("betas", [[], [-0.1], [float("inf")]])
    def test_rejects(self, tiny_cfg, tiny_bundle, betas):
        with pytest.raises(ConfigError):
            harness.beta_sweep(betas, tiny_cfg, bundle=tiny_bundle)


class TestOutputs:
    def test_summary_and_metrics(self, tmp_path, tiny_cfg, tiny_bundle):
        script = harness.topic_switch("code", "law", 2, 16)
        runs = [harness.run_scenario(script, tiny_cfg, v, tiny_bundle) for v in ("static_only", "full")]
        harness.write_summary_csv(tmp_path / "s.csv", tiny_cfg, runs)
        harness.write_metrics_jsonl(tmp_path / "m.jsonl", tiny_cfg, runs, script)
        head = (tmp_path / "s.csv").read_text().splitlines()[:3]
        assert head[0] == f"# config_hash={tiny_cfg.hash} variants=static_only,full"
        assert "static_only: disabled=vocabulary expansion+semantic retrieval+graph expansion+alignment" in head[1]
        assert head[2] == "# full: disabled=none"
        rows = harness.read_csv_body(tmp_path / "s.csv")
        assert [r["variant"] for r in rows] == ["static_only", "full"]
        lines = (tmp_path / "m.jsonl").read_text().splitlines()
        header = json.loads(lines[0])
        assert header["config_hash"] == tiny_cfg.hash and len(lines) == 1 + 2 * 4
        # the two arms differ only in their paths
        paths = header["variants"]
        diff = {k for k in paths["full"]["paths"] if paths["full"]["paths"][k] != paths["static_only"]["paths"][k]}
        assert diff == {"expand", "semantic", "graph", "align"}

    def test_coverage_and_beta_csv(self, tmp_path, tiny_cfg, tiny_bundle):
        rows = [harness.CoverageRow("static", 3, 0.5, {10: 0.25}, 1, 0)]
        harness.write_coverage_csv(tmp_path / "c.csv", tiny_cfg, rows)
        assert harness.read_csv_body(tmp_path / "c.csv")[0]["recall@10"] == "0.25"
        t = harness.SweepTrajectory(0.3, 0, [1.0, 0.5], [0.9, 0.4], [[1.0], [1.0]])
        harness.write_beta_csv(tmp_path / "b.csv", tiny_cfg, [t])
        body = harness.read_csv_body(tmp_path / "b.csv")
        assert len(body) == 2 and body[1]["smoothed_final"] == "0.4"
