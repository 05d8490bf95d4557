"""Shared fixtures: hand-built networks used across the test modules."""

import json

import pytest

from ctmdist.scenario import parse_scenario

FD = {
    "capacity": 0.5,
    "free_flow_speed": 25.0,
    "congestion_wave_speed": 6.25,
    "jam_density": 0.125,
}


def link(lid, start, end, length=100.0, lanes=2, **extra):
    doc = {
        "id": lid,
        "start_node": start,
        "end_node": end,
        "length": length,
        "lanes": lanes,
        "fd": dict(FD),
    }
    doc.update(extra)
    return doc


def merge_diverge_doc():
    """Two source chains merging into a three-lane link that diverges into
    two sink branches.  The merge link has two lane groups (lane 1 reaches
    only branch 1; lanes 2-3 reach both), one deterministic and one
    probabilistic vehicle type, and a split that changes at t=100s."""
    return {
        "nodes": [{"id": i} for i in range(10)],
        "links": [
            link(0, 0, 1, is_source=True),  # source chain 1
            link(1, 1, 4),
            link(2, 2, 3, is_source=True),  # source chain 2
            link(3, 3, 4),
            link(4, 4, 5, length=150.0, lanes=3),  # merge/diverge link
            link(5, 5, 6),  # branch 1
            link(6, 5, 7),  # branch 2
            link(7, 6, 8),  # sink 1
            link(8, 7, 9),  # sink 2
        ],
        "roadconnections": [
            {"id": 0, "in_link": 0, "out_link": 1},
            {"id": 1, "in_link": 2, "out_link": 3},
            {"id": 2, "in_link": 1, "out_link": 4},
            {"id": 3, "in_link": 3, "out_link": 4},
            {"id": 4, "in_link": 4, "out_link": 5, "in_lanes": [1, 3]},
            {"id": 5, "in_link": 4, "out_link": 6, "in_lanes": [2, 3]},
            {"id": 6, "in_link": 5, "out_link": 7},
            {"id": 7, "in_link": 6, "out_link": 8},
        ],
        "vehicletypes": [
            {"id": 0, "routing": {"type": "deterministic", "path": [0, 1, 4, 5, 7]}},
            {"id": 1, "routing": {"type": "probabilistic"}},
        ],
        "splits": [
            {"node": 3, "in_link": 2, "vtype": 1, "start_time": 0.0, "ratios": {"3": 1.0}},
            {"node": 4, "in_link": 3, "vtype": 1, "start_time": 0.0, "ratios": {"4": 1.0}},
            {
                "node": 5,
                "in_link": 4,
                "vtype": 1,
                "start_time": 0.0,
                "ratios": {"5": 0.6, "6": 0.4},
            },
            {
                "node": 5,
                "in_link": 4,
                "vtype": 1,
                "start_time": 100.0,
                "ratios": {"5": 0.3, "6": 0.7},
            },
            {"node": 6, "in_link": 5, "vtype": 1, "start_time": 0.0, "ratios": {"7": 1.0}},
            {"node": 7, "in_link": 6, "vtype": 1, "start_time": 0.0, "ratios": {"8": 1.0}},
        ],
        "demands": [
            {"link": 0, "vtype": 0, "profile": [{"start_time": 0.0, "flow": 0.4}]},
            {"link": 2, "vtype": 1, "profile": [{"start_time": 0.0, "flow": 0.6}]},
        ],
        "simulation": {"dt": 2.0, "steps": 200, "lane_change_rate": 0.5},
    }


@pytest.fixture
def merge_diverge():
    return parse_scenario(json.dumps(merge_diverge_doc()))


def chain_doc(cells_per_link=5, links=1, lanes=1, demand=None, dt=2.0, steps=50):
    """A straight chain of equal links ending at a sink; single lane group
    per link by construction."""
    length = 50.0 * cells_per_link
    doc = {
        "nodes": [{"id": i} for i in range(links + 1)],
        "links": [
            link(i, i, i + 1, length=length, lanes=lanes) for i in range(links)
        ],
        "roadconnections": [
            {"id": i, "in_link": i, "out_link": i + 1} for i in range(links - 1)
        ],
        "vehicletypes": [
            {"id": 0, "routing": {"type": "deterministic", "path": list(range(links))}}
        ],
        "demands": [],
        "splits": [],
        "simulation": {"dt": dt, "steps": steps},
    }
    if demand is not None:
        doc["demands"].append(
            {"link": 0, "vtype": 0, "profile": [{"start_time": 0.0, "flow": demand}]}
        )
    return doc


@pytest.fixture
def single_link():
    return parse_scenario(json.dumps(chain_doc(cells_per_link=10, links=1, demand=0.9)))
