"""Testbed tests: configuration validation, transport behavior, topology,
fault injection, the bundled scenarios, and determinism of the run report.
"""

import random

import pytest
from click.testing import CliRunner

from educhain.cli import main as cli_main
from educhain.harness import (
    AssertionFailed,
    ConfigInvalid,
    FaultSpec,
    NetworkConfig,
    ScenarioScript,
    SimTransport,
    UnknownTarget,
    build_network,
    load_scenario,
    run_scenario,
)
from educhain.ledger import ChainConfig
from educhain.node import Role, replay_state
from educhain.statestore import DATA_TABLES

EASY_CHAIN = {"initial_difficulty_target": (1 << 256) - 1}

SCENARIO_DIR = "src/educhain/scenarios"
BUNDLED = ("happy-path", "tamper-and-audit", "fork-race", "lag-node", "transfer-channel")


def quick_cfg(**overrides):
    base = dict(universities=1, nodes_per_university=5, rng_seed=3,
                chain=dict(EASY_CHAIN))
    base.update(overrides)
    return NetworkConfig.from_mapping(base)


def seed_script(extra_actions=(), assertions=(), accounts=(), name="inline"):
    """A small one-university script: two students, one course, one grade."""
    base_accounts = [
        {"label": "registrar", "role": "Registrar", "subject": "office", "name": "Records Office"},
        {"label": "t1", "role": "Staff", "subject": "T1", "name": "Dr. Ng"},
        {"label": "s1", "role": "Student", "subject": "S1", "name": "Ada Lovelace"},
    ]
    base_actions = [
        {"at": 1, "do": "register_student", "actor": "registrar",
         "student": "S1", "name": "Ada Lovelace", "major": "MATH"},
        {"at": 1, "do": "register_course", "actor": "registrar",
         "course": "C1", "title": "Analysis I", "term": "2025S1", "owner": "t1"},
        {"at": 9, "do": "upsert_grade", "actor": "t1", "student": "S1",
         "course": "C1", "term": "2025S1", "score": 93, "letter": "A", "label": "g1"},
    ]
    return ScenarioScript.from_mapping({
        "name": name,
        "accounts": base_accounts + list(accounts),
        "actions": base_actions + list(extra_actions),
        "assertions": list(assertions),
    })


class TestConfig:
    def test_defaults_mirror_the_five_node_prototype(self):
        cfg = NetworkConfig()
        assert cfg.universities == 1 and cfg.nodes_per_university == 5

    def test_rejects_zero_universities(self):
        with pytest.raises(ConfigInvalid):
            NetworkConfig(universities=0).validate()

    def test_rejects_loss_rate_of_one(self):
        with pytest.raises(ConfigInvalid):
            NetworkConfig(loss_rate=1.0).validate()

    def test_rejects_inverted_latency_bounds(self):
        with pytest.raises(ConfigInvalid):
            NetworkConfig(latency_min=5, latency_max=2).validate()

    def test_rejects_unknown_mapping_keys(self):
        with pytest.raises(ConfigInvalid):
            NetworkConfig.from_mapping({"latency_typo": 3})

    def test_seed_must_fit_u64(self):
        with pytest.raises(ConfigInvalid):
            NetworkConfig(rng_seed=2**64).validate()
        NetworkConfig(rng_seed=2**64 - 1).validate()

    def test_chain_overrides_flow_through(self):
        cfg = quick_cfg()
        assert cfg.chain.initial_difficulty_target == (1 << 256) - 1


class TestFaultSpec:
    def test_kinds_catalogue(self):
        spec = FaultSpec.from_mapping({"kind": "CrashNode", "node": "uni-1-n2", "window": 5})
        assert spec.window == 5
        assert "CrashNode" in spec.describe()

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigInvalid):
            FaultSpec.from_mapping({"kind": "SetOnFire", "node": "uni-1-n1"})

    def test_tamper_requires_row_coordinates(self):
        with pytest.raises(ConfigInvalid):
            FaultSpec.from_mapping({"kind": "TamperRow", "node": "uni-1-n1", "table": "grades"})

    def test_drop_fraction_bounds(self):
        with pytest.raises(ConfigInvalid):
            FaultSpec.from_mapping(
                {"kind": "DropMessages", "node": "uni-1-n1", "fraction": 1.5, "window": 4})


class TestTransport:
    def make(self, loss=0.0, lmin=1, lmax=3):
        cfg = NetworkConfig(latency_min=lmin, latency_max=lmax, loss_rate=loss)
        return SimTransport(random.Random(1), cfg)

    def test_latency_stays_in_bounds(self):
        transport = self.make()
        for _ in range(50):
            transport.send(10, "n1", ("ping", b""))
        ticks = sorted(item[0] for item in transport._queue)
        assert 11 <= ticks[0] and ticks[-1] <= 13

    def test_reliable_path_is_unit_latency_and_lossless(self):
        transport = self.make(loss=0.9)
        for _ in range(50):
            transport.send(10, "n1", ("ping", b""), reliable=True)
        assert transport.dropped == 0
        assert all(item[0] == 11 for item in transport._queue)

    def test_lossy_path_drops_at_configured_rate(self):
        transport = self.make(loss=0.5)
        for _ in range(400):
            transport.send(0, "n1", ("ping", b""))
        assert 120 < transport.dropped < 280

    def test_delivery_order_is_tick_then_sequence(self):
        transport = self.make(lmin=1, lmax=1)
        got = []
        for i in range(5):
            transport.send(0, "n1", ("m", bytes([i])))
        transport.deliver_due(1, lambda dest, payload: got.append(payload[1][0]))
        assert got == [0, 1, 2, 3, 4]

    def test_down_node_swallows_messages(self):
        transport = self.make()
        transport.set_down("n1", True)
        transport.send(0, "n1", ("m", b""))
        transport.deliver_due(10, lambda *a: pytest.fail("should not deliver"))
        assert transport.dropped == 1


class TestTopology:
    def test_default_build_is_five_nodes_hub_and_ministry(self):
        bed = build_network(quick_cfg())
        uni = bed.universities["uni-1"]
        assert len(uni.nodes) == 5
        assert uni.hub.node is uni.nodes["uni-1-n1"]
        assert "uni-1" in bed.directory
        assert bed.ministry_log is not None
        assert bed.ordering.log == []
        assert all(node.height() == 0 for node in uni.nodes.values())

    def test_two_universities_share_one_ordering_log(self):
        bed = build_network(quick_cfg(universities=2))
        assert set(bed.universities) == {"uni-1", "uni-2"}
        genesis = {
            name: uni.nodes[uni.node_order[0]].tip_hash()
            for name, uni in bed.universities.items()
        }
        # same chain parameters, but the chains are disjoint objects
        assert bed.universities["uni-1"].nodes.keys().isdisjoint(
            bed.universities["uni-2"].nodes.keys())
        assert genesis["uni-1"] == genesis["uni-2"]    # identical genesis params
        assert bed.universities["uni-1"].registry is not bed.universities["uni-2"].registry

    def test_peer_fanout_honors_max_peers(self):
        bed = build_network(quick_cfg(nodes_per_university=10))
        uni = bed.universities["uni-1"]
        assert all(len(peers) <= 7 for peers in uni.peers.values())
        bed_small = build_network(quick_cfg())
        assert all(len(p) == 4 for p in bed_small.universities["uni-1"].peers.values())

    def test_departments_route_to_distinct_nodes(self):
        bed = build_network(quick_cfg())
        route = bed.universities["uni-1"].route
        assert len(set(route.mapping.values())) == 5


class TestFaultInjection:
    def test_unknown_node_is_rejected(self):
        bed = build_network(quick_cfg())
        with pytest.raises(UnknownTarget):
            bed.inject_fault(FaultSpec.from_mapping(
                {"kind": "CrashNode", "node": "uni-9-n1", "window": 2}))

    def test_tamper_changes_one_replica_digest(self):
        script = seed_script(extra_actions=[
            {"at": 14, "do": "inject_fault", "kind": "TamperRow", "node": "uni-1-n3",
             "table": "grades", "row_key": "S1|C1|2025S1", "field": "score",
             "new_value": 11},
        ])
        bed = build_network(quick_cfg())
        report = run_scenario(bed, script)
        uni = bed.universities["uni-1"]
        digests = {nid: uni.nodes[nid].db.table_digest("grades") for nid in uni.node_order}
        others = {d for nid, d in digests.items() if nid != "uni-1-n3"}
        assert len(others) == 1
        assert digests["uni-1-n3"] not in others
        assert any("TamperRow" in line for line in report.faults)

    def test_tamper_on_missing_row_is_unknown_target(self):
        script = seed_script(extra_actions=[
            {"at": 14, "do": "inject_fault", "kind": "TamperRow", "node": "uni-1-n3",
             "table": "grades", "row_key": "nope|nope|nope", "field": "score",
             "new_value": 1},
        ])
        with pytest.raises(UnknownTarget):
            run_scenario(build_network(quick_cfg()), script)

    def test_crashed_node_abstains_from_audit(self):
        script = seed_script(
            extra_actions=[
                {"at": 12, "do": "inject_fault", "kind": "CrashNode",
                 "node": "uni-1-n5", "window": 8},
                {"at": 14, "do": "run_audit", "tables": ["grades"], "label": "a"},
            ],
            assertions=[{"check": "all_converged"}],
        )
        bed = build_network(quick_cfg())
        run_scenario(bed, script)
        report = bed.results["a"]["reports"][0]
        assert report.abstained == ("uni-1-n5",)
        # the crash window ended mid-run, and resync caught the node up
        assert bed.universities["uni-1"].nodes["uni-1-n5"].height() > 0

    def test_lagging_node_is_flagged_not_repaired(self):
        script = load_scenario(f"{SCENARIO_DIR}/lag-node.yaml")
        cfg = NetworkConfig.from_mapping(dict(script.config, rng_seed=11))
        bed = build_network(cfg)
        run_scenario(bed, script)
        report = bed.results["mid-lag-audit"]["reports"][0]
        assert report.flags.get("uni-1-n4") == "MissingBlocks"
        # a node that is merely behind gets no repair txs, it gets caught up
        assert report.repairs_applied == 0
        tips = {n.tip_hash() for n in bed.universities["uni-1"].nodes.values()}
        assert len(tips) == 1

    def test_drop_messages_still_converges_via_recovery(self):
        script = seed_script(
            extra_actions=[
                {"at": 5, "do": "inject_fault", "kind": "DropMessages",
                 "node": "uni-1-n2", "fraction": 0.8, "window": 15},
                {"at": 11, "do": "upsert_grade", "actor": "t1", "student": "S1",
                 "course": "C1", "term": "2025S1", "score": 88, "letter": "B"},
            ],
            assertions=[{"check": "all_converged"}, {"check": "chain_valid"}],
        )
        bed = build_network(quick_cfg())
        report = run_scenario(bed, script)
        assert report.passed


class TestScenarioLoader:
    def test_unknown_action_kind(self):
        with pytest.raises(ConfigInvalid):
            ScenarioScript.from_mapping({
                "name": "x", "actions": [{"at": 1, "do": "launch_rocket"}]})

    def test_action_without_tick(self):
        with pytest.raises(ConfigInvalid):
            ScenarioScript.from_mapping({"name": "x", "actions": [{"do": "mine"}]})

    def test_unknown_assertion_kind(self):
        with pytest.raises(ConfigInvalid):
            ScenarioScript.from_mapping({
                "name": "x", "assertions": [{"check": "vibes_good"}]})

    def test_actions_sorted_by_tick_stable(self):
        script = ScenarioScript.from_mapping({
            "name": "x",
            "actions": [
                {"at": 9, "do": "mine", "label": "late"},
                {"at": 1, "do": "mine", "label": "a"},
                {"at": 1, "do": "mine", "label": "b"},
            ],
        })
        assert [a["label"] for a in script.actions] == ["a", "b", "late"]

    def test_bundled_files_parse(self):
        for name in BUNDLED:
            script = load_scenario(f"{SCENARIO_DIR}/{name}.yaml")
            assert script.name == name


class TestScenarioRun:
    @pytest.mark.parametrize("name", BUNDLED)
    def test_bundled_scenario_passes(self, name):
        script = load_scenario(f"{SCENARIO_DIR}/{name}.yaml")
        cfg = NetworkConfig.from_mapping(dict(script.config, rng_seed=11))
        report = run_scenario(build_network(cfg), script)
        assert report.passed
        text = report.render_text()
        assert text.startswith("run-report v1\n") and text.endswith("result pass\nend\n")

    def test_same_seed_is_byte_equal(self):
        texts = []
        for _ in range(3):
            script = load_scenario(f"{SCENARIO_DIR}/fork-race.yaml")
            cfg = NetworkConfig.from_mapping(dict(script.config, rng_seed=99))
            texts.append(run_scenario(build_network(cfg), script).render_text())
        assert texts[0] == texts[1] == texts[2]

    def test_failing_assertion_carries_report_diff(self):
        script = seed_script(assertions=[{"check": "height_at_least", "height": 50}])
        with pytest.raises(AssertionFailed) as exc_info:
            run_scenario(build_network(quick_cfg()), script)
        assert "height_at_least" in str(exc_info.value)
        assert "FAIL height_at_least" in exc_info.value.report_text
        assert "result fail" in exc_info.value.report_text

    def test_unexpected_gateway_denial_aborts(self):
        script = seed_script(extra_actions=[
            {"at": 10, "do": "upsert_grade", "actor": "s1", "student": "S1",
             "course": "C1", "term": "2025S1", "score": 100, "letter": "A"},
        ])
        with pytest.raises(AssertionFailed):
            run_scenario(build_network(quick_cfg()), script)

    def test_expected_denial_is_recorded_not_fatal(self):
        script = seed_script(extra_actions=[
            {"at": 10, "do": "upsert_grade", "actor": "s1", "student": "S1",
             "course": "C1", "term": "2025S1", "score": 100, "letter": "A",
             "expect": "RoleDenied", "label": "denied"},
        ])
        bed = build_network(quick_cfg())
        run_scenario(bed, script)
        assert bed.results["denied"]["error"] == "RoleDenied"

    def test_replay_oracle_agrees_on_every_node(self):
        script = load_scenario(f"{SCENARIO_DIR}/happy-path.yaml")
        cfg = NetworkConfig.from_mapping(dict(script.config, rng_seed=5,
                                              chain=dict(EASY_CHAIN)))
        bed = build_network(cfg)
        run_scenario(bed, script)
        uni = bed.universities["uni-1"]
        for node in uni.nodes.values():
            replayed = replay_state(node.chain, cfg.chain, uni.registry)
            for table in DATA_TABLES:
                assert node.db.table_digest(table) == replayed.table_digest(table)

    def test_wall_time_stays_out_of_the_report(self):
        script = seed_script()
        report = run_scenario(build_network(quick_cfg()), script)
        assert report.wall_ms > 0
        assert "wall" not in report.render_text()


class TestLiveness:
    def test_hundred_transactions_reach_inclusion(self):
        actions = [
            {"at": 1, "do": "register_student", "actor": "registrar",
             "student": "S1", "name": "Ada Lovelace", "major": "MATH"},
            {"at": 1, "do": "register_course", "actor": "registrar",
             "course": "C1", "title": "Analysis I", "term": "2025S1", "owner": "t1"},
        ]
        tick = 9
        for i in range(98):
            actions.append({
                "at": tick, "do": "upsert_grade", "actor": "t1", "student": "S1",
                "course": "C1", "term": "2025S1", "score": 50 + (i % 50),
                "letter": "C",
            })
            tick += 1
        script = ScenarioScript.from_mapping({
            "name": "liveness",
            "accounts": [
                {"label": "registrar", "role": "Registrar", "subject": "office", "name": "RO"},
                {"label": "t1", "role": "Staff", "subject": "T1", "name": "Dr. Ng"},
            ],
            "actions": actions,
            "assertions": [{"check": "all_converged"}, {"check": "chain_valid"}],
        })
        bed = build_network(quick_cfg())
        report = run_scenario(bed, script)
        assert report.passed
        uni = bed.universities["uni-1"]
        node = uni.nodes[uni.node_order[0]]
        included = sum(len(b.txs) for b in node.chain[1:])
        assert included == 100
        assert all(len(n.mempool) == 0 for n in uni.nodes.values())


class TestCli:
    def test_sim_run_bundled_by_name(self):
        runner = CliRunner()
        result = runner.invoke(cli_main, ["sim", "run", "--scenario", "happy-path",
                                          "--seed", "11"])
        assert result.exit_code == 0, result.output
        assert "result pass" in result.output

    def test_sim_run_is_deterministic_across_invocations(self):
        runner = CliRunner()
        runs = [
            runner.invoke(cli_main, ["sim", "run", "--scenario", "tamper-and-audit",
                                     "--seed", "21"]).stdout
            for _ in range(2)
        ]
        assert runs[0] == runs[1]

    def test_sim_run_seed_changes_the_report(self):
        runner = CliRunner()
        a = runner.invoke(cli_main, ["sim", "run", "--scenario", "fork-race",
                                     "--seed", "1"]).stdout
        b = runner.invoke(cli_main, ["sim", "run", "--scenario", "fork-race",
                                     "--seed", "2"]).stdout
        assert a != b

    def test_sim_run_config_file_overrides(self, tmp_path):
        config = tmp_path / "overrides.yaml"
        config.write_text("rng_seed: 77\n")
        runner = CliRunner()
        result = runner.invoke(cli_main, ["sim", "run", "--scenario", "happy-path",
                                          "--config", str(config)])
        assert result.exit_code == 0
        assert "seed 77" in result.output

    def test_sim_run_missing_scenario_errors(self):
        runner = CliRunner()
        result = runner.invoke(cli_main, ["sim", "run", "--scenario", "no-such"])
        assert result.exit_code != 0

    def test_sim_run_report_out_writes_file(self, tmp_path):
        out = tmp_path / "report.txt"
        runner = CliRunner()
        result = runner.invoke(cli_main, [
            "sim", "run", "--scenario", "happy-path", "--seed", "11",
            "--report-out", str(out)])
        assert result.exit_code == 0
        assert out.read_text().startswith("run-report v1\n")

    def test_faults_list(self):
        runner = CliRunner()
        result = runner.invoke(cli_main, ["sim", "faults", "--list"])
        assert result.exit_code == 0
        for kind in ("TamperRow", "DropMessages", "CrashNode", "LagNode"):
            assert kind in result.output
