"""Run orchestration: sequential reference behavior, distributed merging,
dump plumbing, and the benchmark report."""

import json

import pytest

from ctmdist.engine import Engine
from ctmdist.errors import InternalAssertion, ScenarioError
from ctmdist.gridgen import generate_grid
from ctmdist.partition import NodePartition, build_subnetworks
from ctmdist.runner import (
    benchmark,
    diff_dumps,
    merge_states,
    parse_dump,
    rows_to_csv,
    run_distributed,
    run_sequential,
    write_dump,
)
from ctmdist.scenario import parse_scenario

from conftest import chain_doc


class TestSequential:
    def test_zero_demand_stays_empty(self):
        s = parse_scenario(json.dumps(chain_doc(cells_per_link=5, links=3)))
        res = run_sequential(s, steps=40)
        assert res.metrics["per_step"]["in_network"] == [0.0] * 40
        assert res.rows == []

    def test_capacity_throughput_after_warmup(self, single_link):
        res = run_sequential(single_link, steps=60, dump_every=None)
        exited = res.metrics["per_step"]["exited_cum"]
        deltas = [b - a for a, b in zip(exited[-6:], exited[-5:])]
        assert all(abs(d - 1.0) <= 1e-9 for d in deltas)  # C = 0.5*1*2.0

    def test_grid_conservation_everywhere(self):
        s = generate_grid(4, 4)
        res = run_sequential(s, steps=100, dump_every=None)
        assert res.metrics["conservation_max_abs_error"] <= 1e-9

    def test_dump_cadence(self, merge_diverge):
        res = run_sequential(merge_diverge, steps=25, dump_every=10)
        assert {r[0] for r in res.rows} == {10, 20, 25}

    def test_rejects_zero_steps(self, merge_diverge):
        with pytest.raises(ScenarioError):
            run_sequential(merge_diverge, steps=0)


class TestDistributed:
    def test_n1_identical_to_sequential(self, merge_diverge):
        seq = run_sequential(merge_diverge, steps=60)
        dist = run_distributed(merge_diverge, 1, steps=60)
        assert dist.rows == seq.rows
        assert dist.metrics["per_step"] == seq.metrics["per_step"]

    def test_grid_bitwise_both_counts(self):
        s = generate_grid(4, 4)
        seq = run_sequential(s, steps=80)
        for n in (2, 4):
            dist = run_distributed(s, n, transport="local", steps=80, seed=1)
            assert rows_to_csv(dist.rows) == rows_to_csv(seq.rows)

    def test_repeat_runs_identical(self, merge_diverge):
        a = run_distributed(merge_diverge, 3, steps=60, seed=5)
        b = run_distributed(merge_diverge, 3, steps=60, seed=5)
        assert a.rows == b.rows
        assert a.metrics["per_step"] == b.metrics["per_step"]

    def test_comm_time_zero_for_n1(self, merge_diverge):
        dist = run_distributed(merge_diverge, 1, steps=20)
        assert dist.timing["workers"][0]["comm"]["total_s"] == 0.0
        seq = run_sequential(merge_diverge, steps=20)
        assert seq.timing["workers"][0]["comm"]["total_s"] == 0.0

    def test_wall_covers_worker_spans(self, merge_diverge):
        dist = run_distributed(merge_diverge, 3, steps=40)
        busiest = max(
            w["setup_s"] + w["compute_s"] + w["comm"]["total_s"]
            for w in dist.timing["workers"]
        )
        assert dist.timing["wall_s"] >= busiest - 1e-6

    def test_singleton_subset_with_through_traffic(self):
        # node 2 alone in its subset: the connection at it removes from one
        # overlap link and delivers into another within the same message
        doc = chain_doc(cells_per_link=2, links=3, demand=0.4)
        s = parse_scenario(json.dumps(doc))
        subs = build_subnetworks(s, NodePartition(2, {0: 0, 1: 0, 2: 1, 3: 0}))
        assert set(subs[1].relative_sources) == {1}
        assert set(subs[1].relative_sinks) == {2}
        seq = run_sequential(s, steps=60)
        dist = run_distributed(subs=subs, steps=60)
        assert rows_to_csv(dist.rows) == rows_to_csv(seq.rows)

    def test_cut_source_link_injects_once(self):
        # the source link itself crosses the cut: both replicas inject, the
        # vehicles are counted once, and results stay bitwise sequential
        doc = chain_doc(cells_per_link=2, links=2, demand=0.8)
        s = parse_scenario(json.dumps(doc))
        subs = build_subnetworks(s, NodePartition(2, {0: 0, 1: 1, 2: 1}))
        assert subs[0].relative_sinks == (0,)
        assert subs[1].relative_sources == (0,)
        for sub in subs:
            assert any(r.link == 0 for r in sub.fragment.demands)
        seq = run_sequential(s, steps=80)
        dist = run_distributed(subs=subs, steps=80)
        assert rows_to_csv(dist.rows) == rows_to_csv(seq.rows)
        assert dist.metrics["per_step"] == seq.metrics["per_step"]

    def test_cut_flagged_midnetwork_source(self):
        # a link fed by upstream connections and flagged as a source gets
        # node-model arrivals plus its own injections; cutting its start
        # node must not change anything
        doc = chain_doc(cells_per_link=2, links=3, demand=0.5)
        doc["links"][1]["is_source"] = True
        doc["demands"].append(
            {"link": 1, "vtype": 1, "profile": [{"start_time": 0.0, "flow": 0.4}]}
        )
        doc["vehicletypes"].append({"id": 1, "routing": {"type": "probabilistic"}})
        doc["splits"] = [
            {"node": 2, "in_link": 1, "vtype": 1, "start_time": 0.0, "ratios": {"2": 1.0}}
        ]
        s = parse_scenario(json.dumps(doc))
        subs = build_subnetworks(s, NodePartition(2, {0: 0, 1: 0, 2: 1, 3: 1}))
        assert 1 in subs[0].relative_sinks and 1 in subs[1].relative_sources
        seq = run_sequential(s, steps=80)
        dist = run_distributed(subs=subs, steps=80)
        assert rows_to_csv(dist.rows) == rows_to_csv(seq.rows)
        assert dist.metrics["conservation_max_abs_error"] <= 1e-9
        assert seq.metrics["conservation_max_abs_error"] <= 1e-9

    def test_overlap_owned_by_upstream_side(self):
        doc = chain_doc(cells_per_link=2, links=2, demand=0.3)
        s = parse_scenario(json.dumps(doc))
        subs = build_subnetworks(s, NodePartition(2, {0: 0, 1: 0, 2: 1}))
        up = Engine(subs[0].fragment, set(subs[0].owned_nodes))
        down = Engine(subs[1].fragment, set(subs[1].owned_nodes))
        assert subs[0].relative_sinks == (1,)
        assert up.links[1].authoritative
        assert not down.links[1].authoritative
        # merged dump carries link 1 exactly once, from the upstream side
        dist = run_distributed(subs=subs, steps=30)
        seq = run_sequential(s, steps=30)
        assert dist.rows == seq.rows


class TestMergeStates:
    def test_identity_for_single_worker(self, merge_diverge):
        res = run_sequential(merge_diverge, steps=30)
        assert merge_states([res.rows]) == sorted(res.rows)

    def test_duplicate_claim_rejected(self):
        row = (10, 4, 0, 0, 1, 5, 1.25)
        with pytest.raises(InternalAssertion, match=r"ownership conflict"):
            merge_states([[row], [row]])


class TestDumps:
    def test_round_trip(self, merge_diverge, tmp_path):
        res = run_sequential(merge_diverge, steps=30)
        path = tmp_path / "dump.csv"
        write_dump(res.rows, str(path))
        text = path.read_text()
        assert parse_dump(text) == res.rows

    def test_diff_equal(self, merge_diverge):
        res = run_sequential(merge_diverge, steps=30)
        text = rows_to_csv(res.rows)
        assert diff_dumps(text, text) is None

    def test_diff_pinpoints_perturbation(self, merge_diverge):
        res = run_sequential(merge_diverge, steps=30)
        text = rows_to_csv(res.rows)
        lines = text.splitlines()
        parts = lines[5].split(",")
        parts[6] = repr(float(parts[6]) + 1e-6)
        lines[5] = ",".join(parts)
        report = diff_dumps(text, "\n".join(lines) + "\n")
        assert report is not None
        assert f"step {parts[0]} link {parts[1]}" in report

    def test_diff_tolerance_mode(self, merge_diverge):
        res = run_sequential(merge_diverge, steps=30)
        text = rows_to_csv(res.rows)
        lines = text.splitlines()
        parts = lines[5].split(",")
        parts[6] = repr(float(parts[6]) * (1.0 + 1e-13))
        perturbed = "\n".join(lines[:5] + [",".join(parts)] + lines[6:]) + "\n"
        assert diff_dumps(text, perturbed) is not None
        assert diff_dumps(text, perturbed, tol=1e-12) is None

    def test_diff_schema_mismatch(self):
        with pytest.raises(ScenarioError, match=r"schema"):
            diff_dumps("foo,bar\n1,2\n", "foo,bar\n3,4\n")


class TestBenchmark:
    def test_single_n_speedup_is_one(self, merge_diverge):
        report = benchmark(merge_diverge, [1], steps=30)
        assert report["rows"][0]["speedup"] == 1.0
        assert report["rows"][0]["comm_s"] == 0.0
        assert report["rows"][0]["ideal_rate"] == report["rows"][0]["rate"]

    def test_speedup_bounded_by_n(self):
        s = generate_grid(6, 6)
        report = benchmark(s, [1, 2], steps=25)
        for row in report["rows"]:
            assert row["speedup"] <= row["n"] + 1e-9
        assert report["rows"][1]["ideal_rate"] == pytest.approx(
            2 * report["rows"][0]["rate"]
        )
        # communication share grows with worker count (zero when serial)
        ratios = [
            row["comm_s"] / max(row["compute_s"], 1e-12) for row in report["rows"]
        ]
        assert ratios[0] == 0.0
        assert ratios[1] > 0.0
