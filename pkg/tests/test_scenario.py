"""Scenario parsing, validation, lane groups, and discretization."""

import json
import random

import pytest

from ctmdist.errors import ScenarioError
from ctmdist.scenario import (
    FDParams,
    Link,
    RoadConnection,
    build_lane_groups,
    discretize,
    parse_scenario,
    serialize_scenario,
)

from conftest import link, merge_diverge_doc


def minimal_doc():
    return {
        "nodes": [{"id": 0}, {"id": 1}],
        "links": [link(0, 0, 1)],
        "simulation": {"dt": 2.0, "steps": 10},
    }


def make_link(lid=0, lanes=3, length=500.0):
    return Link(
        id=lid,
        start_node=0,
        end_node=1,
        length=length,
        lanes=lanes,
        fd=FDParams(
            capacity=0.5,
            free_flow_speed=25.0,
            congestion_wave_speed=6.25,
            jam_density=0.125,
        ),
    )


def make_conn(cid, in_link, out_link, in_lanes, out_lanes=(1, 1)):
    return RoadConnection(
        id=cid, in_link=in_link, out_link=out_link, in_lanes=in_lanes, out_lanes=out_lanes
    )


class TestParse:
    def test_minimal_two_node_one_link(self):
        s = parse_scenario(json.dumps(minimal_doc()))
        assert len(s.links) == 1
        assert len(s.connections) == 0
        assert s.links[0].is_sink  # no outgoing connections

    def test_syntax_error_reports_position(self):
        with pytest.raises(ScenarioError, match=r"syntax error at line"):
            parse_scenario('{"nodes": [,]}')

    def test_split_summing_to_0_9_rejected(self):
        doc = merge_diverge_doc()
        doc["splits"][2]["ratios"] = {"5": 0.6, "6": 0.3}
        with pytest.raises(ScenarioError, match=r"distribution sums to 0.9"):
            parse_scenario(json.dumps(doc))

    def test_three_link_merge_fixture(self):
        # two approaches joining into one exit: hand count of the fixture
        doc = {
            "nodes": [{"id": 0}, {"id": 1}, {"id": 2}, {"id": 3}],
            "links": [link(0, 0, 2), link(1, 1, 2), link(2, 2, 3)],
            "roadconnections": [
                {"id": 0, "in_link": 0, "out_link": 2},
                {"id": 1, "in_link": 1, "out_link": 2},
            ],
            "simulation": {"dt": 2.0, "steps": 10},
        }
        s = parse_scenario(json.dumps(doc))
        at_merge = [c for c in s.connections.values() if c.out_link == 2]
        assert len(at_merge) == 2
        assert s.in_conns[2] == (0, 1)

    def test_dangling_link_reference(self):
        doc = minimal_doc()
        doc["links"][0]["end_node"] = 7
        with pytest.raises(ScenarioError, match=r"missing node 7"):
            parse_scenario(json.dumps(doc))

    def test_connection_node_mismatch(self):
        doc = merge_diverge_doc()
        doc["roadconnections"][0]["out_link"] = 3  # link 0 ends at 1, link 3 starts at 3
        with pytest.raises(ScenarioError, match=r"connection 0"):
            parse_scenario(json.dumps(doc))

    def test_cfl_violation_reported(self):
        doc = minimal_doc()
        doc["links"][0]["length"] = 30.0  # v*dt = 50 > 30
        with pytest.raises(ScenarioError, match=r"CFL"):
            parse_scenario(json.dumps(doc))

    def test_fd_triangle_must_fit(self):
        doc = minimal_doc()
        doc["links"][0]["fd"]["jam_density"] = 0.05  # cap/v + cap/w = 0.1 > 0.05
        with pytest.raises(ScenarioError, match=r"jam density"):
            parse_scenario(json.dumps(doc))

    def test_wave_speed_bounded_by_free_flow(self):
        doc = minimal_doc()
        doc["links"][0]["fd"]["congestion_wave_speed"] = 30.0
        with pytest.raises(ScenarioError, match=r"wave speed"):
            parse_scenario(json.dumps(doc))

    def test_deterministic_path_must_be_connected(self):
        doc = merge_diverge_doc()
        doc["vehicletypes"][0]["routing"]["path"] = [0, 4, 5, 7]  # 0 -> 4 has no connection
        with pytest.raises(ScenarioError, match=r"no road connection from link 0 to link 4"):
            parse_scenario(json.dumps(doc))

    def test_deterministic_path_must_end_at_sink(self):
        doc = merge_diverge_doc()
        doc["vehicletypes"][0]["routing"]["path"] = [0, 1, 4, 5]
        with pytest.raises(ScenarioError, match=r"must end at a sink"):
            parse_scenario(json.dumps(doc))

    def test_demand_needs_source_flag_when_fed(self):
        doc = merge_diverge_doc()
        doc["demands"].append(
            {"link": 4, "vtype": 1, "profile": [{"start_time": 0.0, "flow": 0.1}]}
        )
        with pytest.raises(ScenarioError, match=r"demand on link 4"):
            parse_scenario(json.dumps(doc))
        # explicit flag makes it legal, plus a split row for entries
        doc["links"][4]["is_source"] = True
        parse_scenario(json.dumps(doc))

    def test_parse_serialize_round_trip(self, merge_diverge):
        text = serialize_scenario(merge_diverge)
        again = parse_scenario(text)
        assert again == merge_diverge
        assert serialize_scenario(again) == text


class TestLaneGroups:
    def test_single_connection_single_group(self):
        lk = make_link(lanes=3)
        groups = build_lane_groups(lk, [make_conn(0, 0, 1, (1, 3))], dt=2.0)
        assert len(groups) == 1
        assert (groups[0].lane_lo, groups[0].lane_hi) == (1, 3)
        assert groups[0].conn_ids == (0,)

    def test_freeway_offramp_grouping(self):
        # mainline connection spans all 5 lanes, off-ramp only lanes 4-5:
        # inner lanes form one group, the two outer lanes another
        lk = make_link(lanes=5)
        conns = [make_conn(0, 0, 1, (1, 5)), make_conn(1, 0, 2, (4, 5))]
        groups = build_lane_groups(lk, conns, dt=2.0)
        assert [(g.lane_lo, g.lane_hi) for g in groups] == [(1, 3), (4, 5)]
        assert groups[0].conn_ids == (0,)
        assert groups[1].conn_ids == (0, 1)

    def test_disjoint_connections_two_groups(self):
        # oracle: enumerate each lane's connection set by hand
        lk = make_link(lanes=2)
        conns = [make_conn(0, 0, 1, (1, 1)), make_conn(1, 0, 2, (2, 2))]
        lane_sets = {
            lane: tuple(c.id for c in conns if c.in_lanes[0] <= lane <= c.in_lanes[1])
            for lane in (1, 2)
        }
        assert lane_sets == {1: (0,), 2: (1,)}
        groups = build_lane_groups(lk, conns, dt=2.0)
        assert [(g.lane_lo, g.lane_hi, g.conn_ids) for g in groups] == [
            (1, 1, (0,)),
            (2, 2, (1,)),
        ]

    def test_no_connections_single_sink_group(self):
        groups = build_lane_groups(make_link(lanes=4), [], dt=2.0)
        assert len(groups) == 1
        assert groups[0].conn_ids == ()

    def test_partition_and_homogeneity_randomized(self):
        # property: groups tile the lanes exactly and every lane in a group
        # has the same recomputed connection set
        rng = random.Random(7)
        for _ in range(50):
            lanes = rng.randint(1, 6)
            lk = make_link(lanes=lanes)
            conns = []
            for cid in range(rng.randint(0, 4)):
                lo = rng.randint(1, lanes)
                hi = rng.randint(lo, lanes)
                conns.append(make_conn(cid, 0, cid + 1, (lo, hi)))
            groups = build_lane_groups(lk, conns, dt=2.0)
            covered = []
            for g in groups:
                covered.extend(range(g.lane_lo, g.lane_hi + 1))
            assert covered == list(range(1, lanes + 1))
            for g in groups:
                for lane in range(g.lane_lo, g.lane_hi + 1):
                    sets = tuple(
                        sorted(
                            c.id
                            for c in conns
                            if c.in_lanes[0] <= lane <= c.in_lanes[1]
                        )
                    )
                    assert sets == g.conn_ids


class TestDiscretize:
    def test_500m_at_25mps_2s(self):
        assert discretize(500.0, 25.0, 2.0) == (10, 50.0)

    def test_exactly_one_step_length(self):
        assert discretize(50.0, 25.0, 2.0) == (1, 50.0)

    def test_rounding_up_from_9_6(self):
        count, cell_len = discretize(480.0, 25.0, 2.0)
        assert count == 10
        assert cell_len == 48.0

    def test_too_short_link_rejected(self):
        with pytest.raises(ScenarioError, match=r"CFL"):
            discretize(30.0, 25.0, 2.0)
