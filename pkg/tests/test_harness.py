"""Config validation, scenario runs, metrics determinism, oracle validation
mode and its negative control, and the CLI contract."""

import json

import pytest

from qpusim.cli import main as cli_main
from qpusim.config import ConfigError, parse_topology, parse_workload
from qpusim.metrics import parse_ndjson, summarize
from qpusim.runner import run_scenario, validate_scenario
from qpusim.scenarios import SCENARIOS, scenario, write_scenario


def minimal_topology(**overrides):
    doc = {
        "attributes": [{"name": "size", "kind": "int"}, {"name": "genre", "kind": "text"}],
        "nodes": [{"id": "n1"}, {"id": "n2"}],
        "links": [{"from": "n1", "to": "n2", "base_latency": 5}],
        "dcs": [{"id": "dc1", "node": "n1"}],
        "qpus": [
            {"id": "flt", "class": "filter", "node": "n1", "dc": "dc1", "targets": [{"qpu": "iq"}]},
            {"id": "iq", "class": "index", "node": "n2", "region": {}, "recheck_dc": "dc1"},
        ],
        "connections": [],
    }
    doc.update(overrides)
    return doc


def zero_rate_workload():
    return {
        "phases": [
            {
                "duration": 3000,
                "key_space": 10,
                "attributes": {"size": {"dist": "uniform", "lo": 0, "hi": 10}},
            }
        ]
    }


class TestTopologyValidation:
    def test_bundled_scenarios_load_cleanly(self):
        for name in SCENARIOS:
            t, w = scenario(name)
            cfg = parse_topology(t)
            parse_workload(w, cfg)

    def test_connection_cycle_rejected_naming_the_cycle(self):
        doc = minimal_topology(
            qpus=[
                {"id": "a", "class": "federation", "node": "n1", "recheck_dc": "dc1"},
                {"id": "b", "class": "federation", "node": "n1", "recheck_dc": "dc1"},
            ],
            connections=[{"from": "a", "to": "b"}, {"from": "b", "to": "a"}],
        )
        with pytest.raises(ConfigError) as err:
            parse_topology(doc)
        assert "cycle" in str(err.value)
        assert "a -> b -> a" in str(err.value)

    def test_unknown_attribute_in_region_rejected(self):
        doc = minimal_topology()
        doc["qpus"][1]["region"] = {"colour": [0, 10]}
        with pytest.raises(ConfigError) as err:
            parse_topology(doc)
        assert "unknown attribute" in str(err.value)
        assert "colour" in str(err.value)

    def test_inverted_region_bounds_rejected(self):
        doc = minimal_topology()
        doc["qpus"][1]["region"] = {"size": [10, 10]}
        with pytest.raises(ConfigError):
            parse_topology(doc)

    def test_hysteresis_violation_rejected(self):
        doc = minimal_topology(adaptive={"enabled": True, "t_split": 100, "t_merge": 50})
        with pytest.raises(ConfigError) as err:
            parse_topology(doc)
        assert "hysteresis" in str(err.value)

    def test_filter_must_target_indexing_qpus(self):
        doc = minimal_topology()
        doc["qpus"].append({"id": "ds", "class": "ds", "node": "n1", "dc": "dc1"})
        doc["qpus"][0]["targets"] = [{"qpu": "ds"}]
        with pytest.raises(ConfigError) as err:
            parse_topology(doc)
        assert "not an indexing QPU" in str(err.value)

    def test_cache_needs_exactly_one_downstream(self):
        doc = minimal_topology()
        doc["qpus"].append({"id": "cq", "class": "cache", "node": "n1", "recheck_dc": "dc1"})
        with pytest.raises(ConfigError) as err:
            parse_topology(doc)
        assert "exactly one downstream" in str(err.value)

    def test_missing_replication_link_rejected(self):
        doc = minimal_topology(
            nodes=[{"id": "n1"}, {"id": "n2"}, {"id": "n3"}],
            dcs=[{"id": "dc1", "node": "n1"}, {"id": "dc2", "node": "n3"}],
        )
        with pytest.raises(ConfigError) as err:
            parse_topology(doc)
        assert "replication" in str(err.value)

    def test_partial_recheck_dc_must_cover_region(self):
        doc = minimal_topology(
            dcs=[
                {"id": "dc1", "node": "n1"},
                {"id": "edge", "node": "n2", "full_replica": False, "placement": {"size": [0, 10]}},
            ],
        )
        doc["qpus"][1]["recheck_dc"] = "edge"  # iq's region is the full space
        with pytest.raises(ConfigError) as err:
            parse_topology(doc)
        assert "does not cover" in str(err.value)

    def test_errors_accumulate_with_paths(self):
        doc = minimal_topology()
        doc["qpus"][1]["region"] = {"colour": [0, 1], "size": [9, 3]}
        doc["links"][0]["base_latency"] = 0
        with pytest.raises(ConfigError) as err:
            parse_topology(doc)
        assert len(err.value.errors) >= 3


class TestWorkloadValidation:
    def test_negative_rate_rejected(self):
        cfg = parse_topology(minimal_topology())
        with pytest.raises(ConfigError) as err:
            parse_workload({"phases": [{"duration": 100, "write_rate": -1}]}, cfg)
        assert "write_rate" in str(err.value)

    def test_query_phase_needs_shapes_and_origin(self):
        cfg = parse_topology(minimal_topology())
        with pytest.raises(ConfigError) as err:
            parse_workload({"phases": [{"duration": 100, "query_rate": 5}]}, cfg)
        msg = str(err.value)
        assert "query_shapes" in msg and "query_origin" in msg

    def test_unknown_origin_rejected(self):
        cfg = parse_topology(minimal_topology())
        doc = {
            "phases": [
                {
                    "duration": 100,
                    "query_rate": 5,
                    "attributes": {"size": {"dist": "uniform", "lo": 0, "hi": 5}},
                    "query_shapes": [{"attrs": ["size"], "selectivity": 0.1}],
                    "query_origin": ["ghost"],
                }
            ]
        }
        with pytest.raises(ConfigError) as err:
            parse_workload(doc, cfg)
        assert "ghost" in str(err.value)

    def test_zipf_parameters_checked(self):
        cfg = parse_topology(minimal_topology())
        doc = {
            "phases": [
                {
                    "duration": 100,
                    "attributes": {"size": {"dist": "zipf", "s": 0, "n": 5}},
                }
            ]
        }
        with pytest.raises(ConfigError):
            parse_workload(doc, cfg)


class TestRunScenario:
    def test_zero_rate_workload_emits_only_heartbeats(self):
        res = run_scenario(minimal_topology(), zero_rate_workload(), seed=1)
        body = [r for r in res.sink.records if r.get("type") not in ("meta", "summary")]
        assert body and all(r["type"] == "heartbeat" for r in body)

    def test_same_seed_byte_identical_metrics(self, tmp_path):
        t, w = scenario("single-index")
        a = run_scenario(t, w, seed=11, out=tmp_path / "a.ndjson")
        b = run_scenario(t, w, seed=11, out=tmp_path / "b.ndjson")
        assert (tmp_path / "a.ndjson").read_bytes() == (tmp_path / "b.ndjson").read_bytes()

    def test_different_seed_changes_metrics(self):
        t, w = scenario("single-index")
        a = run_scenario(t, w, seed=11)
        b = run_scenario(t, w, seed=12)
        assert a.sink.to_ndjson() != b.sink.to_ndjson()

    def test_doubled_query_rate_doubles_query_count(self):
        t, w = scenario("single-index")
        import copy

        w2 = copy.deepcopy(w)
        for p in w2["phases"]:
            p["query_rate"] = p.get("query_rate", 0) * 2
        a = run_scenario(t, w, seed=3)
        b = run_scenario(t, w2, seed=3)
        assert b.summary["queries"] == 2 * a.summary["queries"]

    def test_full_replicas_converge_after_drain(self):
        t, w = scenario("cdn")
        res = run_scenario(t, w, seed=5)
        prints = {rep.dc_id: rep.state_fingerprint() for rep in res.network.full_replicas()}
        assert len(set(prints.values())) == 1

    def test_until_gives_hard_horizon(self):
        t, w = scenario("single-index")
        res = run_scenario(t, w, seed=5, until=2000)
        assert res.network.kernel.now == 2000

    def test_summary_recomputes_from_raw_records(self, tmp_path):
        t, w = scenario("cdn")
        res = run_scenario(t, w, seed=9, out=tmp_path / "m.ndjson")
        records = parse_ndjson((tmp_path / "m.ndjson").read_text())
        summary_row = [r for r in records if r["type"] == "summary"]
        assert len(summary_row) == 1
        recomputed = summarize([r for r in records if r["type"] != "summary"])
        assert {k: summary_row[0][k] for k in recomputed} == recomputed

    def test_every_record_has_a_type(self, tmp_path):
        t, w = scenario("client-cache")
        run_scenario(t, w, seed=2, out=tmp_path / "m.ndjson")
        for record in parse_ndjson((tmp_path / "m.ndjson").read_text()):
            assert "type" in record


def delete_heavy_workload():
    return {
        "phases": [
            {
                "duration": 2000,
                "write_rate": 100.0,
                "key_space": 60,
                "key_mode": "sequential",
                "attributes": {"size": {"dist": "uniform", "lo": 0, "hi": 100}},
                "write_origin": {"mode": "fixed", "dcs": ["dc1"]},
            },
            {
                "duration": 3000,
                "write_rate": 80.0,
                "delete_fraction": 0.7,
                "query_rate": 80.0,
                "key_space": 60,
                "attributes": {"size": {"dist": "uniform", "lo": 0, "hi": 100}},
                "query_shapes": [{"attrs": ["size"], "selectivity": 0.5}],
                "write_origin": {"mode": "fixed", "dcs": ["dc1"]},
                "query_origin": ["iq"],
            },
        ]
    }


class TestValidateMode:
    def test_bundled_scenarios_pass(self):
        for name in ("single-index", "cdn", "client-cache"):
            t, w = scenario(name)
            report = validate_scenario(t, w, seed=13)
            assert report.ok, f"{name}: {report.describe()}"
            assert report.queries_checked >= 100

    def test_negative_control_recheck_disabled_fails_with_type2(self):
        doc = minimal_topology(debug={"disable_recheck": True})
        report = validate_scenario(doc, delete_heavy_workload(), seed=13)
        assert report.type2_violations, "recheck disabled must surface stale results"
        assert not report.ok

    def test_recheck_enabled_same_workload_is_clean(self):
        report = validate_scenario(minimal_topology(), delete_heavy_workload(), seed=13)
        assert report.ok
        assert report.type2_violations == []


class TestCli:
    def run_cli(self, *argv):
        return cli_main(list(argv))

    def test_scenario_emit_and_check_config(self, tmp_path, capsys):
        assert self.run_cli("scenario", "cdn", "--out", str(tmp_path)) == 0
        out = capsys.readouterr().out
        assert "cdn-topology.json" in out
        assert self.run_cli("check-config", "--topology", str(tmp_path / "cdn-topology.json")) == 0

    def test_run_writes_metrics(self, tmp_path, capsys):
        write_scenario("single-index", tmp_path)
        code = self.run_cli(
            "run",
            "--topology", str(tmp_path / "single-index-topology.json"),
            "--workload", str(tmp_path / "single-index-workload.json"),
            "--seed", "4",
            "--out", str(tmp_path / "metrics.ndjson"),
        )
        assert code == 0
        assert (tmp_path / "metrics.ndjson").exists()
        assert '"queries"' in capsys.readouterr().out

    def test_validate_exit_codes(self, tmp_path, capsys):
        write_scenario("single-index", tmp_path)
        code = self.run_cli(
            "validate",
            "--topology", str(tmp_path / "single-index-topology.json"),
            "--workload", str(tmp_path / "single-index-workload.json"),
            "--seed", "4",
        )
        assert code == 0
        assert "PASS" in capsys.readouterr().out

    def test_bad_config_exits_1(self, tmp_path, capsys):
        bad = minimal_topology()
        bad["qpus"][1]["region"] = {"colour": [0, 1]}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        assert self.run_cli("check-config", "--topology", str(path)) == 1
        assert "config error" in capsys.readouterr().err

    def test_missing_file_exits_1(self, capsys):
        assert self.run_cli("check-config", "--topology", "/nonexistent.json") == 1

    def test_env_seed_used_when_flag_absent(self, tmp_path, monkeypatch, capsys):
        write_scenario("single-index", tmp_path)
        monkeypatch.setenv("QPUSIM_SEED", "77")
        args = [
            "run",
            "--topology", str(tmp_path / "single-index-topology.json"),
            "--workload", str(tmp_path / "single-index-workload.json"),
            "--out", str(tmp_path / "env.ndjson"),
        ]
        assert self.run_cli(*args) == 0
        env_metrics = (tmp_path / "env.ndjson").read_text()
        assert '"seed":"77"' in env_metrics.splitlines()[0]
        # explicit flag wins over the environment
        assert self.run_cli(*args, "--seed", "5") == 0
        assert '"seed":"5"' in (tmp_path / "env.ndjson").read_text().splitlines()[0]
