"""Network partitioning: node subsets, subnetwork fragments, metagraph,
and boundary-message decoder maps.

A partition assigns every node to one of n subsets.  Subnetwork i contains
the nodes of subset i plus every link with an endpoint there.  A link whose
endpoints fall in different subsets is an overlap link: a relative sink for
the subnetwork holding its start node (flow leaves there) and a relative
source for the one holding its end node.  Overlap links are replicated on
both sides and kept in lockstep by the per-step exchange; the relative-sink
side is the authoritative copy for merged output.

The decoder map fixes, once per run, the layout of the boundary message for
an ordered (sender, receiver) pair: one float slot per (road connection,
lane group, vehicle type, next link) that the sender resolves and the
receiver needs.  Both sides derive the same map independently from their own
fragments and cross-validate at connection time.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass

from .errors import ScenarioError
from .scenario import (
    Scenario,
    SubnetworkMeta,
    TERMINAL,
    build_lane_groups,
    validate,
)

BALANCE_FACTOR = 1.1
REFINE_PASSES = 10

# one float in a boundary message:
# (road connection, link, lane group index, vehicle type, next link)
Slot = tuple[int, int, int, int, int]


@dataclass
class NodePartition:
    n: int
    assignment: dict[int, int]

    def subset_sizes(self) -> list[int]:
        sizes = [0] * self.n
        for subset in self.assignment.values():
            sizes[subset] += 1
        return sizes


@dataclass
class Subnetwork:
    index: int
    owned_nodes: tuple[int, ...]
    interior_links: tuple[int, ...]
    relative_sources: tuple[int, ...]
    relative_sinks: tuple[int, ...]
    neighbor_of_link: dict[int, int]
    # crossing connections: entering relative sources / leaving relative sinks
    relative_source_conns: tuple[int, ...]
    relative_sink_conns: tuple[int, ...]
    fragment: Scenario

    @property
    def overlap_links(self) -> tuple[int, ...]:
        return tuple(sorted(self.relative_sources + self.relative_sinks))

    def neighbors(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.neighbor_of_link.values())))

    def links_with(self, neighbor: int) -> tuple[int, ...]:
        return tuple(
            sorted(l for l, nb in self.neighbor_of_link.items() if nb == neighbor)
        )


@dataclass
class Metagraph:
    n: int
    edges: dict[tuple[int, int], tuple[int, ...]]  # (i, j) i<j -> overlap link ids

    def neighbors_of(self, index: int) -> tuple[int, ...]:
        out = set()
        for i, j in self.edges:
            if i == index:
                out.add(j)
            elif j == index:
                out.add(i)
        return tuple(sorted(out))


@dataclass(frozen=True)
class DecoderMap:
    sender: int
    receiver: int
    slots: tuple[Slot, ...]

    @property
    def message_length(self) -> int:
        return len(self.slots)

    def index_of(self) -> dict[Slot, int]:
        return {slot: i for i, slot in enumerate(self.slots)}


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------


def balance_cap(node_count: int, n: int) -> int:
    return math.ceil(BALANCE_FACTOR * node_count / n)


def _adjacency(scenario: Scenario) -> dict[int, dict[int, int]]:
    adj: dict[int, dict[int, int]] = {nid: {} for nid in scenario.nodes}
    for link in scenario.links.values():
        a, b = link.start_node, link.end_node
        adj[a][b] = adj[a].get(b, 0) + 1
        adj[b][a] = adj[b].get(a, 0) + 1
    return adj


def partition_nodes(scenario: Scenario, n: int, seed: int = 0) -> NodePartition:
    """Greedy BFS region growing from spread-out seeds, followed by
    gain-based boundary refinement.  Deterministic for a fixed seed; largest
    subset stays within ceil(1.1 * |nodes| / n)."""
    nodes = sorted(scenario.nodes)
    count = len(nodes)
    if n < 1 or n > count:
        raise ScenarioError(f"subset count {n} out of range 1..{count}")
    if n == 1:
        return NodePartition(1, {v: 0 for v in nodes})

    adj = _adjacency(scenario)
    rng = random.Random(seed)
    seeds = [nodes[rng.randrange(count)]]
    while len(seeds) < n:
        dist = _bfs_distance(adj, seeds)
        best = None
        for v in nodes:
            if v in seeds:
                continue
            d = dist.get(v, math.inf)
            if best is None or d > dist.get(best, math.inf):
                best = v
        seeds.append(best)

    target = math.ceil(count / n)
    assignment: dict[int, int] = {}
    sizes = [0] * n
    queues: list[deque] = []
    for i, s in enumerate(seeds):
        assignment[s] = i
        sizes[i] = 1
        queues.append(deque(sorted(adj[s])))
    remaining = count - n
    while remaining > 0:
        order = sorted(range(n), key=lambda i: (sizes[i], i))
        progressed = False
        for i in order:
            if sizes[i] >= target:
                continue
            v = None
            while queues[i]:
                cand = queues[i].popleft()
                if cand not in assignment:
                    v = cand
                    break
            if v is None:
                continue
            assignment[v] = i
            sizes[i] += 1
            remaining -= 1
            for w in sorted(adj[v]):
                if w not in assignment:
                    queues[i].append(w)
            progressed = True
            break
        if not progressed:
            # disconnected leftovers: hand them to the smallest subsets
            leftovers = [v for v in nodes if v not in assignment]
            for v in leftovers:
                i = min(range(n), key=lambda i: (sizes[i], i))
                assignment[v] = i
                sizes[i] += 1
                remaining -= 1
                for w in sorted(adj[v]):
                    if w not in assignment:
                        queues[i].append(w)

    cap = balance_cap(count, n)
    _refine(nodes, adj, assignment, sizes, cap)
    return NodePartition(n, assignment)


def _bfs_distance(adj, sources) -> dict[int, int]:
    dist = {s: 0 for s in sources}
    frontier = deque(sorted(sources))
    while frontier:
        v = frontier.popleft()
        for w in sorted(adj[v]):
            if w not in dist:
                dist[w] = dist[v] + 1
                frontier.append(w)
    return dist


def _refine(nodes, adj, assignment, sizes, cap) -> None:
    """Kernighan-Lin style single-node moves: shift boundary nodes to the
    neighboring subset with the largest positive cut reduction, keeping
    subsets non-empty and within the balance cap."""
    for _ in range(REFINE_PASSES):
        improved = False
        for v in nodes:
            own = assignment[v]
            if sizes[own] <= 1:
                continue
            weight: dict[int, int] = {}
            for w, mult in sorted(adj[v].items()):
                weight[assignment[w]] = weight.get(assignment[w], 0) + mult
            internal = weight.get(own, 0)
            best, best_gain = own, 0
            for subset in sorted(weight):
                if subset == own or sizes[subset] + 1 > cap:
                    continue
                gain = weight[subset] - internal
                if gain > best_gain:
                    best, best_gain = subset, gain
            if best != own:
                assignment[v] = best
                sizes[own] -= 1
                sizes[best] += 1
                improved = True
        if not improved:
            break


def cut_links(scenario: Scenario, partition: NodePartition) -> list[int]:
    a = partition.assignment
    return sorted(
        l.id
        for l in scenario.links.values()
        if a[l.start_node] != a[l.end_node]
    )


# ---------------------------------------------------------------------------
# Partition files
# ---------------------------------------------------------------------------


def save_partition(partition: NodePartition, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("# node_id subset_index\n")
        for node in sorted(partition.assignment):
            f.write(f"{node} {partition.assignment[node]}\n")


def parse_partition(text: str, scenario: Scenario) -> NodePartition:
    """Read a partition file: either `node_id subset` pairs, or METIS-style
    one-subset-per-line where line k applies to the k-th smallest node id."""
    pairs: list[tuple[int, int]] = []
    single: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].split("%", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            values = [int(t) for t in tokens]
        except ValueError:
            raise ScenarioError(f"partition file line {lineno}: not integers: {raw!r}")
        if len(values) == 1:
            single.append(values[0])
        elif len(values) == 2:
            pairs.append((values[0], values[1]))
        else:
            raise ScenarioError(f"partition file line {lineno}: expected 1 or 2 fields")
    if pairs and single:
        raise ScenarioError("partition file mixes pair and single-column lines")

    nodes = sorted(scenario.nodes)
    if single:
        if len(single) != len(nodes):
            raise ScenarioError(
                f"METIS-style partition has {len(single)} lines for {len(nodes)} nodes"
            )
        assignment = dict(zip(nodes, single))
    else:
        assignment = {}
        for node, subset in pairs:
            if node not in scenario.nodes:
                raise ScenarioError(f"partition names unknown node {node}")
            if node in assignment:
                raise ScenarioError(f"partition assigns node {node} twice")
            assignment[node] = subset
        for node in nodes:
            if node not in assignment:
                raise ScenarioError(f"partition is missing node {node}")

    n = max(assignment.values()) + 1
    for node, subset in assignment.items():
        if subset < 0 or subset >= n:
            raise ScenarioError(f"node {node} has subset index {subset} outside 0..{n - 1}")
    sizes = [0] * n
    for subset in assignment.values():
        sizes[subset] += 1
    for i, size in enumerate(sizes):
        if size == 0:
            raise ScenarioError(f"subset {i} is empty")
    return NodePartition(n, assignment)


def load_partition(path: str, scenario: Scenario) -> NodePartition:
    with open(path, "r", encoding="utf-8") as f:
        return parse_partition(f.read(), scenario)


# ---------------------------------------------------------------------------
# Subnetworks
# ---------------------------------------------------------------------------


def build_subnetworks(scenario: Scenario, partition: NodePartition) -> list[Subnetwork]:
    """Cut the scenario into per-subset fragments.

    Each fragment carries: its owned nodes; every link incident to them
    (interior plus overlap); the road connections touching those links (so
    both sides of an overlap link derive identical lane groups); stub links
    and nodes referenced by those connections; every split row whose in_link
    is a carried simulated link (the entry-time turn lookup for an overlap
    link lives at a node the other side owns); and the demand rows of all
    carried simulated links (both replicas of an overlap source inject
    identically).  Fragments validate as stand-alone scenarios.
    """
    assign = partition.assignment
    subs = []
    for index in range(partition.n):
        owned = sorted(v for v in scenario.nodes if assign[v] == index)
        owned_set = set(owned)
        sim_links = []
        interior, rel_sources, rel_sinks = [], [], []
        neighbor_of_link: dict[int, int] = {}
        for lid in sorted(scenario.links):
            link = scenario.links[lid]
            s_in = link.start_node in owned_set
            e_in = link.end_node in owned_set
            if not (s_in or e_in):
                continue
            sim_links.append(lid)
            if s_in and e_in:
                interior.append(lid)
            elif s_in:
                rel_sinks.append(lid)
                neighbor_of_link[lid] = assign[link.end_node]
            else:
                rel_sources.append(lid)
                neighbor_of_link[lid] = assign[link.start_node]

        sim_set = set(sim_links)
        conn_ids = sorted(
            c.id
            for c in scenario.connections.values()
            if c.in_link in sim_set or c.out_link in sim_set
        )
        rel_source_conns = tuple(
            c for c in conn_ids if scenario.connections[c].out_link in set(rel_sources)
        )
        rel_sink_conns = tuple(
            c for c in conn_ids if scenario.connections[c].in_link in set(rel_sinks)
        )

        frag_link_ids = set(sim_links)
        for cid in conn_ids:
            conn = scenario.connections[cid]
            frag_link_ids.add(conn.in_link)
            frag_link_ids.add(conn.out_link)
        frag_node_ids = set(owned)
        for lid in frag_link_ids:
            frag_node_ids.add(scenario.links[lid].start_node)
            frag_node_ids.add(scenario.links[lid].end_node)

        meta = SubnetworkMeta(
            index=index,
            owned_nodes=tuple(owned),
            interior_links=tuple(interior),
            relative_sources=tuple(rel_sources),
            relative_sinks=tuple(rel_sinks),
            neighbor_of_link=tuple(sorted(neighbor_of_link.items())),
        )
        fragment = Scenario(
            nodes={nid: scenario.nodes[nid] for nid in sorted(frag_node_ids)},
            links={lid: scenario.links[lid] for lid in sorted(frag_link_ids)},
            connections={cid: scenario.connections[cid] for cid in conn_ids},
            vehicle_types=dict(scenario.vehicle_types),
            splits=[r for r in scenario.splits if r.in_link in sim_set],
            demands=[r for r in scenario.demands if r.link in sim_set],
            sim=scenario.sim,
            subnetwork=meta,
        )
        validate(fragment)
        subs.append(
            Subnetwork(
                index=index,
                owned_nodes=tuple(owned),
                interior_links=tuple(interior),
                relative_sources=tuple(rel_sources),
                relative_sinks=tuple(rel_sinks),
                neighbor_of_link=neighbor_of_link,
                relative_source_conns=rel_source_conns,
                relative_sink_conns=rel_sink_conns,
                fragment=fragment,
            )
        )
    return subs


def subnetwork_from_fragment(fragment: Scenario) -> Subnetwork:
    """Rebuild the Subnetwork wrapper from a loaded fragment file."""
    meta = fragment.subnetwork
    if meta is None:
        raise ScenarioError("scenario file carries no subnetwork metadata")
    neighbor_of_link = dict(meta.neighbor_of_link)
    rel_source_set = set(meta.relative_sources)
    rel_sink_set = set(meta.relative_sinks)
    return Subnetwork(
        index=meta.index,
        owned_nodes=meta.owned_nodes,
        interior_links=meta.interior_links,
        relative_sources=meta.relative_sources,
        relative_sinks=meta.relative_sinks,
        neighbor_of_link=neighbor_of_link,
        relative_source_conns=tuple(
            c
            for c in sorted(fragment.connections)
            if fragment.connections[c].out_link in rel_source_set
        ),
        relative_sink_conns=tuple(
            c
            for c in sorted(fragment.connections)
            if fragment.connections[c].in_link in rel_sink_set
        ),
        fragment=fragment,
    )


def reconstruct_scenario(scenario_template: Scenario, subs: list[Subnetwork]) -> Scenario:
    """Union of fragments (overlap links deduplicated) for the
    reconstruction invariant; `scenario_template` supplies only sim params."""
    nodes = {}
    links = {}
    connections = {}
    splits = []
    demands = []
    seen_splits = set()
    seen_demands = set()
    for sub in subs:
        frag = sub.fragment
        for nid in sub.owned_nodes:
            nodes[nid] = frag.nodes[nid]
        carried = set(sub.interior_links) | set(sub.relative_sources) | set(
            sub.relative_sinks
        )
        for lid in sorted(carried):
            links[lid] = frag.links[lid]
        for cid in sorted(frag.connections):
            conn = frag.connections[cid]
            if conn.in_link in carried and conn.out_link in carried:
                connections[cid] = conn
        for row in frag.splits:
            key = (row.node, row.in_link, row.vtype, row.start_time)
            if key not in seen_splits:
                seen_splits.add(key)
                splits.append(row)
        for row in frag.demands:
            key = (row.link, row.vtype)
            if key not in seen_demands:
                seen_demands.add(key)
                demands.append(row)
    merged = Scenario(
        nodes=nodes,
        links=links,
        connections=connections,
        vehicle_types=dict(subs[0].fragment.vehicle_types) if subs else {},
        splits=sorted(splits, key=lambda r: (r.node, r.in_link, r.vtype, r.start_time)),
        demands=sorted(demands, key=lambda r: (r.link, r.vtype)),
        sim=scenario_template.sim,
    )
    validate(merged)
    return merged


# ---------------------------------------------------------------------------
# Metagraph
# ---------------------------------------------------------------------------


def build_metagraph(subs: list[Subnetwork]) -> Metagraph:
    edges: dict[tuple[int, int], set[int]] = {}
    for sub in subs:
        for lid, nb in sub.neighbor_of_link.items():
            key = (min(sub.index, nb), max(sub.index, nb))
            edges.setdefault(key, set()).add(lid)
    return Metagraph(
        n=len(subs),
        edges={key: tuple(sorted(lids)) for key, lids in sorted(edges.items())},
    )


# ---------------------------------------------------------------------------
# Decoder maps
# ---------------------------------------------------------------------------


def _link_groups(frag: Scenario, link_id: int):
    link = frag.links[link_id]
    outgoing = [frag.connections[c] for c in frag.out_conns[link_id]]
    return build_lane_groups(link, outgoing, frag.sim.dt)


def _path_pairs(frag: Scenario, vtype: int) -> set[tuple[int, int]]:
    vt = frag.vehicle_types[vtype]
    return set(zip(vt.path, vt.path[1:]))


def _entry_nexts(frag: Scenario, link_id: int, vtype: int) -> tuple[int, ...]:
    """Possible next links for a vehicle of `vtype` that just entered
    `link_id`: the unique path successor for deterministic types, every
    connection-reachable successor for probabilistic ones, TERMINAL on sinks."""
    vt = frag.vehicle_types[vtype]
    successors = frag.successors(link_id)
    if not successors:
        return (TERMINAL,)
    if vt.routing == "deterministic":
        if link_id not in vt.path:
            return ()
        pos = vt.path.index(link_id)
        if pos == len(vt.path) - 1:
            return (TERMINAL,)
        return (vt.path[pos + 1],)
    return successors


def delivery_slots(frag: Scenario, link_id: int) -> list[Slot]:
    """Slots for flows entering an overlap link, resolved by its upstream
    side: one per (connection in, target lane group, vehicle type, assigned
    next link)."""
    slots: list[Slot] = []
    groups = _link_groups(frag, link_id)
    for cid in frag.in_conns[link_id]:
        conn = frag.connections[cid]
        for g in groups:
            for vtype in sorted(frag.vehicle_types):
                vt = frag.vehicle_types[vtype]
                if vt.routing == "deterministic":
                    if (conn.in_link, link_id) not in _path_pairs(frag, vtype):
                        continue
                for nxt in _entry_nexts(frag, link_id, vtype):
                    slots.append((cid, link_id, g.index, vtype, nxt))
    return slots


def removal_slots(frag: Scenario, link_id: int) -> list[Slot]:
    """Slots for flows leaving an overlap link, resolved by its downstream
    side: one per (connection out, source lane group, vehicle type); the next
    link is the connection's target."""
    slots: list[Slot] = []
    groups = _link_groups(frag, link_id)
    for cid in frag.out_conns[link_id]:
        conn = frag.connections[cid]
        for g in groups:
            if cid not in g.conn_ids:
                continue
            for vtype in sorted(frag.vehicle_types):
                vt = frag.vehicle_types[vtype]
                if vt.routing == "deterministic":
                    if (link_id, conn.out_link) not in _path_pairs(frag, vtype):
                        continue
                slots.append((cid, link_id, g.index, vtype, conn.out_link))
    return slots


def build_decoder_map(sub: Subnetwork, neighbor: int) -> DecoderMap:
    """Layout of the message `sub` sends to `neighbor`: deliveries into
    overlap links owned upstream by `sub`, removals from overlap links owned
    upstream by `neighbor`.  Fixed for the whole run."""
    slots: list[Slot] = []
    rel_sinks = set(sub.relative_sinks)
    for lid in sub.links_with(neighbor):
        if lid in rel_sinks:
            slots.extend(delivery_slots(sub.fragment, lid))
        else:
            slots.extend(removal_slots(sub.fragment, lid))
    return DecoderMap(sender=sub.index, receiver=neighbor, slots=tuple(sorted(slots)))


def build_receive_map(sub: Subnetwork, neighbor: int) -> DecoderMap:
    """Layout of the message `sub` expects from `neighbor`, derived from
    `sub`'s own fragment; must equal the neighbor's send map element-wise."""
    slots: list[Slot] = []
    rel_sources = set(sub.relative_sources)
    for lid in sub.links_with(neighbor):
        if lid in rel_sources:
            slots.extend(delivery_slots(sub.fragment, lid))
        else:
            slots.extend(removal_slots(sub.fragment, lid))
    return DecoderMap(sender=neighbor, receiver=sub.index, slots=tuple(sorted(slots)))


def build_decoder_maps(sub_i: Subnetwork, sub_j: Subnetwork) -> tuple[DecoderMap, DecoderMap]:
    """Both directions for a metagraph edge, each built from the sender's data."""
    return build_decoder_map(sub_i, sub_j.index), build_decoder_map(sub_j, sub_i.index)
