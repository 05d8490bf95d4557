"""Macroscopic (cell-transmission) engine for one subnetwork.

State is the number of vehicles per (lane group, cell, commodity), where a
commodity is a (vehicle type, next downstream link) pair.  Every step runs:

  phase A: lane changes, then demand/supply per cell, then flow resolution
           at every node this engine owns (proportional merge against the
           downstream link's first-cell supply);
  phase B: next-link assignment for flows entering each link, then the
           conservation update (internal cell flows, boundary removals and
           deliveries, sink discharge, source injection).

Between the phases a distributed run exchanges boundary flux records with
neighboring subnetworks; a sequential run is the same engine with every node
owned and nothing to exchange.  All accumulation loops iterate in ascending
(link, lane group, connection, commodity) order so that a partitioned run
reproduces the sequential run bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InternalAssertion, ScenarioError
from .scenario import Link, Scenario, TERMINAL, build_lane_groups, rate_at

# commodity: (vehicle type id, next link id or TERMINAL)
Commodity = tuple[int, int]
# boundary flux record: (connection, link, group index, vehicle type, next link, vehicles)
# link == connection.out_link -> delivery into the link's first cells
# link == connection.in_link  -> removal from the link's last cells
FluxRecord = tuple[int, int, int, int, int, float]

NEG_TOL = -1e-12


def cell_total(cell: dict[Commodity, float]) -> float:
    total = 0.0
    for key in sorted(cell):
        total += cell[key]
    return total


def compute_demand(
    cell: dict[Commodity, float], cap_per_step: float
) -> tuple[float, list[tuple[Commodity, float]]]:
    """Sending capability of a cell: min(n, C) split over commodities in
    proportion to their counts.  Returns (total, per-commodity list)."""
    n_total = cell_total(cell)
    if n_total <= 0.0:
        return 0.0, []
    total = min(n_total, cap_per_step)
    scale = total / n_total
    return total, [(key, cell[key] * scale) for key in sorted(cell)]


def compute_supply(
    occupied: float, cap_per_step: float, wv_ratio: float, jam_veh: float
) -> float:
    """Receiving capability: min(C, (w/v)*(N_jam - n)), floored at zero."""
    room = wv_ratio * (jam_veh - occupied)
    supply = cap_per_step if cap_per_step < room else room
    return supply if supply > 0.0 else 0.0


def resolve_node_flows(
    demand_entries: dict[int, tuple[float, tuple]],
    out_link_of: dict[int, int],
    supply_of,
) -> dict[int, tuple]:
    """Proportional-merge node model.

    `demand_entries` maps a road connection id to (total demand, entries),
    where entries are (key, demand) pairs in canonical order.  For each
    downstream link, if total demand exceeds the link's first-cell supply,
    every connection into it is scaled by the common factor supply/demand; a
    single round, no redistribution.  Returns scaled entries per connection.
    """
    by_link: dict[int, list[int]] = {}
    for cid in sorted(demand_entries):
        by_link.setdefault(out_link_of[cid], []).append(cid)
    flows: dict[int, tuple] = {}
    for link_id in sorted(by_link):
        conns = by_link[link_id]
        total = 0.0
        for cid in conns:
            total += demand_entries[cid][0]
        if total <= 0.0:
            continue
        supply = supply_of(link_id)
        factor = 1.0 if total <= supply else supply / total
        for cid in conns:
            flows[cid] = tuple(
                (key, d * factor) for key, d in demand_entries[cid][1]
            )
    return flows


@dataclass
class GroupRuntime:
    """One lane group's static coefficients and mutable cell states."""

    link: int
    index: int
    lane_count: int
    cell_count: int
    cell_length: float
    cap_step: float  # vehicles per step through the group
    jam_veh: float  # vehicles at jam density in one cell
    wv_ratio: float
    conn_ids: tuple[int, ...]
    conn_by_next: dict[int, int]  # downstream link -> serving connection
    serves: frozenset[int]
    cells: list[dict[Commodity, float]] = field(default_factory=list)


@dataclass
class LinkRuntime:
    link: Link
    groups: list[GroupRuntime]
    inflow_local: bool  # start node owned: this engine resolves entering flows
    outflow_local: bool  # end node owned: this engine resolves leaving flows
    successor_set: frozenset[int]
    # (group index, wanted next link) -> adjacent group index to move toward
    lane_change_step: dict[tuple[int, int], int]

    @property
    def authoritative(self) -> bool:
        # overlap links are replicated; the upstream (relative sink) side owns
        # the values reported in merged dumps and metrics
        return self.inflow_local


@dataclass
class StepPlan:
    internal: dict[int, list[tuple[int, int, Commodity, float]]] = field(
        default_factory=dict
    )
    removals: dict[int, list[FluxRecord]] = field(default_factory=dict)
    deliveries: dict[int, list[FluxRecord]] = field(default_factory=dict)
    discharge: dict[int, list[tuple[int, Commodity, float]]] = field(
        default_factory=dict
    )


@dataclass
class StepStats:
    entered: float = 0.0
    exited: float = 0.0
    in_network: float = 0.0
    queued: float = 0.0


class Engine:
    """Simulator for the links incident to a set of owned nodes."""

    def __init__(self, scenario: Scenario, owned_nodes: set[int] | None = None):
        self.scenario = scenario
        self.dt = scenario.sim.dt
        self.eta = scenario.sim.lane_change_rate
        self.owned = set(scenario.nodes) if owned_nodes is None else set(owned_nodes)
        for nid in self.owned:
            if nid not in scenario.nodes:
                raise ScenarioError(f"owned node {nid} is not in the scenario")

        self.links: dict[int, LinkRuntime] = {}
        for lid in sorted(scenario.links):
            link = scenario.links[lid]
            if link.start_node not in self.owned and link.end_node not in self.owned:
                continue  # context-only stub link carried for referential integrity
            self.links[lid] = self._build_link(link)

        # deterministic routing lookup: (vtype, link) -> next link on the path
        self.det_next: dict[tuple[int, int], int] = {}
        for vt in scenario.vehicle_types.values():
            if vt.routing != "deterministic":
                continue
            for pos, lid in enumerate(vt.path):
                nxt = TERMINAL if pos == len(vt.path) - 1 else vt.path[pos + 1]
                self.det_next[(vt.id, lid)] = nxt

        self.queues: dict[tuple[int, int], float] = {}
        self.source_links = tuple(
            lid
            for lid in sorted(self.links)
            if self.scenario.demand_rows(lid)
        )
        self.active: set[int] = set(self.source_links)
        self._supply_cache: dict[int, tuple[float, tuple[float, ...]]] = {}
        self._fraction_cache: dict[tuple[int, int], tuple] = {}
        self._plan: StepPlan | None = None

    def _build_link(self, link: Link) -> LinkRuntime:
        outgoing = [self.scenario.connections[c] for c in self.scenario.out_conns[link.id]]
        groups = []
        for lg in build_lane_groups(link, outgoing, self.dt):
            conn_by_next = {}
            serves = set()
            for cid in lg.conn_ids:
                out = self.scenario.connections[cid].out_link
                conn_by_next[out] = cid
                serves.add(out)
            groups.append(
                GroupRuntime(
                    link=link.id,
                    index=lg.index,
                    lane_count=lg.lane_count,
                    cell_count=lg.cell_count,
                    cell_length=lg.cell_length,
                    cap_step=(link.fd.capacity * lg.lane_count) * self.dt,
                    jam_veh=(link.fd.jam_density * lg.lane_count) * lg.cell_length,
                    wv_ratio=link.fd.congestion_wave_speed / link.fd.free_flow_speed,
                    conn_ids=lg.conn_ids,
                    conn_by_next=conn_by_next,
                    serves=frozenset(serves),
                    cells=[{} for _ in range(lg.cell_count)],
                )
            )
        successor_set = frozenset(self.scenario.successors(link.id))
        lane_change_step: dict[tuple[int, int], int] = {}
        for g in groups:
            for nxt in sorted(successor_set):
                if nxt in g.serves:
                    continue
                best = None
                for h in groups:
                    if nxt in h.serves:
                        if best is None or abs(h.index - g.index) < abs(best - g.index):
                            best = h.index
                if best is not None:
                    lane_change_step[(g.index, nxt)] = (
                        g.index + 1 if best > g.index else g.index - 1
                    )
        return LinkRuntime(
            link=link,
            groups=groups,
            inflow_local=link.start_node in self.owned,
            outflow_local=link.end_node in self.owned,
            successor_set=successor_set,
            lane_change_step=lane_change_step,
        )

    # ------------------------------------------------------------------
    # phase A
    # ------------------------------------------------------------------

    def phase_a(self, step: int) -> StepPlan:
        """Lane changes, demand/supply, and flow resolution at owned nodes.

        Returns the step plan; records for overlap links must be shipped to
        the neighboring subnetwork before phase B.
        """
        time = step * self.dt
        plan = StepPlan()
        self._supply_cache.clear()
        self._fraction_cache.clear()

        active = sorted(self.active)
        for lid in active:
            lrt = self.links[lid]
            if len(lrt.groups) > 1:
                self.apply_lane_changes(lrt)

        demand_by_conn: dict[int, tuple[float, tuple]] = {}
        touched_links: set[int] = set()
        for lid in active:
            lrt = self.links[lid]
            self._plan_internal_flows(lrt, plan)
            if lrt.link.is_sink:
                self._plan_discharge(lrt, plan)
            elif lrt.outflow_local:
                self.compute_connection_demands(lrt, demand_by_conn, touched_links)

        out_link_of = {
            cid: self.scenario.connections[cid].out_link for cid in demand_by_conn
        }
        for target in sorted(touched_links):
            entries = {}
            for cid in self.scenario.in_conns[target]:
                if cid in demand_by_conn:
                    entries[cid] = demand_by_conn[cid]
            flows = resolve_node_flows(
                entries, out_link_of, lambda lid: self._supplies(lid)[0]
            )
            self._record_flows(target, flows, time, plan)

        self._plan = plan
        return plan

    def apply_lane_changes(self, lrt: LinkRuntime) -> None:
        """Move a fraction eta of misplaced vehicles one lane group toward
        the nearest group serving their next link, capped by target space.
        Runs before any demand computation."""
        groups = lrt.groups
        for k in range(groups[0].cell_count):
            moves: list[tuple[int, int, Commodity, float]] = []
            for g in groups:
                cell = g.cells[k]
                for comm in sorted(cell):
                    nxt = comm[1]
                    if nxt == TERMINAL or nxt in g.serves:
                        continue
                    dst = lrt.lane_change_step.get((g.index, nxt))
                    if dst is None:
                        raise InternalAssertion(
                            f"link {lrt.link.id}: commodity {comm} cannot reach "
                            f"link {nxt} from any lane group"
                        )
                    moves.append((g.index, dst, comm, self.eta * cell[comm]))
            if not moves:
                continue
            # caps from the pre-move state: lateral movements are simultaneous
            space = {
                dst: groups[dst].jam_veh - cell_total(groups[dst].cells[k])
                for dst in sorted({m[1] for m in moves})
            }
            for dst in sorted(space):
                wanted = 0.0
                for src, d, comm, amount in moves:
                    if d == dst:
                        wanted += amount
                if wanted <= 0.0 or space[dst] <= 0.0:
                    continue
                scale = 1.0 if wanted <= space[dst] else space[dst] / wanted
                dst_cell = groups[dst].cells[k]
                for src, d, comm, amount in moves:
                    if d != dst:
                        continue
                    moved = amount * scale
                    src_cell = groups[src].cells[k]
                    src_cell[comm] = src_cell[comm] - moved
                    dst_cell[comm] = dst_cell.get(comm, 0.0) + moved

    def _plan_internal_flows(self, lrt: LinkRuntime, plan: StepPlan) -> None:
        records: list[tuple[int, int, Commodity, float]] = []
        for g in lrt.groups:
            for k in range(g.cell_count - 1):
                total, entries = compute_demand(g.cells[k], g.cap_step)
                if total <= 0.0:
                    continue
                supply = compute_supply(
                    cell_total(g.cells[k + 1]), g.cap_step, g.wv_ratio, g.jam_veh
                )
                flow = total if total < supply else supply
                if flow <= 0.0:
                    continue
                scale = flow / total
                for comm, d in entries:
                    records.append((g.index, k, comm, d * scale))
        if records:
            plan.internal[lrt.link.id] = records

    def _plan_discharge(self, lrt: LinkRuntime, plan: StepPlan) -> None:
        records: list[tuple[int, Commodity, float]] = []
        for g in lrt.groups:
            total, entries = compute_demand(g.cells[-1], g.cap_step)
            if total <= 0.0:
                continue
            for comm, d in entries:
                records.append((g.index, comm, d))
        if records:
            plan.discharge[lrt.link.id] = records

    def compute_connection_demands(
        self,
        lrt: LinkRuntime,
        demand_by_conn: dict[int, tuple[float, tuple]],
        touched_links: set[int],
    ) -> None:
        """Split the last cell's demand of every lane group over its outgoing
        road connections by commodity next-link; commodities not served by
        their current group wait for a lane change and contribute nothing."""
        per_conn: dict[int, list[tuple[tuple[int, int, int], float]]] = {}
        totals: dict[int, float] = {}
        for g in lrt.groups:
            total, entries = compute_demand(g.cells[-1], g.cap_step)
            if total <= 0.0:
                continue
            for comm, d in entries:
                vt, nxt = comm
                if nxt == TERMINAL:
                    raise InternalAssertion(
                        f"terminal commodity on non-sink link {lrt.link.id}"
                    )
                cid = g.conn_by_next.get(nxt)
                if cid is None:
                    if nxt not in lrt.successor_set:
                        raise InternalAssertion(
                            f"link {lrt.link.id}: commodity next link {nxt} is "
                            f"unreachable via any road connection"
                        )
                    continue
                per_conn.setdefault(cid, []).append(((g.index, vt, nxt), d))
                totals[cid] = totals.get(cid, 0.0) + d
        for cid in sorted(per_conn):
            demand_by_conn[cid] = (totals[cid], tuple(per_conn[cid]))
            touched_links.add(self.scenario.connections[cid].out_link)

    def _supplies(self, link_id: int) -> tuple[float, tuple[float, ...]]:
        """First-cell supply of a link: per lane group and summed."""
        cached = self._supply_cache.get(link_id)
        if cached is not None:
            return cached
        lrt = self.links[link_id]
        per_group = []
        total = 0.0
        for g in lrt.groups:
            s = compute_supply(
                cell_total(g.cells[0]), g.cap_step, g.wv_ratio, g.jam_veh
            )
            per_group.append(s)
            total += s
        result = (total, tuple(per_group))
        self._supply_cache[link_id] = result
        return result

    def entry_fractions(self, link_id: int, vtype: int, time: float) -> tuple:
        """How flow entering `link_id` divides over next links: the unique
        path successor for deterministic types, the split row for
        probabilistic ones, TERMINAL on sinks."""
        key = (link_id, vtype)
        cached = self._fraction_cache.get(key)
        if cached is not None:
            return cached
        lrt = self.links[link_id]
        if lrt.link.is_sink:
            fractions = ((TERMINAL, 1.0),)
        elif self.scenario.vehicle_types[vtype].routing == "deterministic":
            nxt = self.det_next.get((vtype, link_id))
            if nxt is None:
                raise InternalAssertion(
                    f"deterministic vehicle type {vtype} entered off-path link {link_id}"
                )
            fractions = ((nxt, 1.0),)
        else:
            row = self.scenario.split_row_at(link_id, vtype, time)
            if row is None:
                raise ScenarioError(
                    f"no split row for vehicle type {vtype} entering link "
                    f"{link_id} (time {time})"
                )
            fractions = row
        self._fraction_cache[key] = fractions
        return fractions

    def _record_flows(
        self, target: int, flows: dict[int, tuple], time: float, plan: StepPlan
    ) -> None:
        """Turn resolved per-connection flows into removal records on their
        upstream links and entry-assigned delivery records on `target`."""
        supply_total, supply_per_group = self._supplies(target)
        target_groups = self.links[target].groups
        deliveries = plan.deliveries.setdefault(target, [])
        for cid in sorted(flows):
            conn = self.scenario.connections[cid]
            removals = plan.removals.setdefault(conn.in_link, [])
            arrived: dict[int, float] = {}
            for (gidx, vt, nxt), amount in flows[cid]:
                removals.append((cid, conn.in_link, gidx, vt, nxt, amount))
                arrived[vt] = arrived.get(vt, 0.0) + amount
            for vt in sorted(arrived):
                total = arrived[vt]
                if total <= 0.0:
                    continue
                fractions = self.entry_fractions(target, vt, time)
                for g in target_groups:
                    if supply_total <= 0.0:
                        break
                    base = total * (supply_per_group[g.index] / supply_total)
                    for nxt, frac in fractions:
                        deliveries.append((cid, target, g.index, vt, nxt, base * frac))

    # ------------------------------------------------------------------
    # phase B
    # ------------------------------------------------------------------

    def phase_b(self, step: int, received: list[FluxRecord] | None = None) -> StepStats:
        """Apply the step plan plus records received from neighbors; returns
        step statistics over this engine's authoritative links."""
        if self._plan is None:
            raise InternalAssertion("phase_b called before phase_a")
        plan = self._plan
        self._plan = None
        time = step * self.dt

        recv_removals: dict[int, list[FluxRecord]] = {}
        recv_deliveries: dict[int, list[FluxRecord]] = {}
        if received:
            for rec in received:
                cid, link_id, gidx, vt, nxt, amount = rec
                conn = self.scenario.connections[cid]
                if link_id == conn.out_link:
                    recv_deliveries.setdefault(link_id, []).append(rec)
                elif link_id == conn.in_link:
                    recv_removals.setdefault(link_id, []).append(rec)
                else:
                    raise InternalAssertion(
                        f"record names link {link_id} not on connection {cid}"
                    )

        stats = StepStats()
        work = set(plan.internal) | set(plan.removals) | set(plan.deliveries)
        work |= set(plan.discharge) | set(recv_removals) | set(recv_deliveries)
        work |= set(self.source_links)
        for lid in sorted(work):
            lrt = self.links[lid]
            groups = lrt.groups

            for gidx, k, comm, amount in plan.internal.get(lid, ()):
                src = groups[gidx].cells[k]
                dst = groups[gidx].cells[k + 1]
                src[comm] = src[comm] - amount
                dst[comm] = dst.get(comm, 0.0) + amount

            local_rm = plan.removals.get(lid)
            remote_rm = recv_removals.get(lid)
            if local_rm and remote_rm:
                raise InternalAssertion(
                    f"link {lid} has both local and received removals"
                )
            for cid, _lid, gidx, vt, nxt, amount in local_rm or remote_rm or ():
                cell = groups[gidx].cells[-1]
                comm = (vt, nxt)
                cell[comm] = cell.get(comm, 0.0) - amount

            for gidx, comm, amount in plan.discharge.get(lid, ()):
                cell = groups[gidx].cells[-1]
                cell[comm] = cell[comm] - amount
                if lrt.authoritative:
                    stats.exited += amount

            local_dv = plan.deliveries.get(lid)
            remote_dv = recv_deliveries.get(lid)
            if local_dv and remote_dv:
                raise InternalAssertion(
                    f"link {lid} has both local and received deliveries"
                )
            for cid, _lid, gidx, vt, nxt, amount in local_dv or remote_dv or ():
                cell = groups[gidx].cells[0]
                comm = (vt, nxt)
                cell[comm] = cell.get(comm, 0.0) + amount

            if lrt.link.is_source:
                stats.entered += self._inject(lrt, time)

            self._settle_link(lrt)

        self._refresh_active(work)
        for lid in sorted(self.links):
            lrt = self.links[lid]
            if not lrt.authoritative:
                continue
            for g in lrt.groups:
                for cell in g.cells:
                    stats.in_network += cell_total(cell)
        for key in sorted(self.queues):
            if self.links[key[0]].authoritative:
                stats.queued += self.queues[key]
        return stats

    def _inject(self, lrt: LinkRuntime, time: float) -> float:
        """Move external demand into the first cells, spilling the excess to
        a per-(link, vehicle type) queue.  Returns vehicles that entered,
        counted only on the authoritative replica."""
        lid = lrt.link.id
        entered = 0.0
        for row in self.scenario.demand_rows(lid):
            key = (lid, row.vtype)
            queue = self.queues.get(key, 0.0) + rate_at(row.profile, time) * self.dt
            if queue > 0.0:
                fractions = self.entry_fractions(lid, row.vtype, time)
                for g in lrt.groups:
                    if queue <= 0.0:
                        break
                    room = g.jam_veh - cell_total(g.cells[0])
                    if room <= 0.0:
                        continue
                    taken = queue if queue < room else room
                    cell = g.cells[0]
                    for nxt, frac in fractions:
                        comm = (row.vtype, nxt)
                        cell[comm] = cell.get(comm, 0.0) + taken * frac
                    queue -= taken
                    entered += taken
            self.queues[key] = queue
        return entered if lrt.authoritative else 0.0

    def _settle_link(self, lrt: LinkRuntime) -> None:
        """Clamp float dust, reject real negatives, drop empty entries."""
        for g in lrt.groups:
            for cell in g.cells:
                dead = []
                for comm, value in cell.items():
                    if value < 0.0:
                        if value < NEG_TOL:
                            raise InternalAssertion(
                                f"negative occupancy {value} on link {lrt.link.id} "
                                f"group {g.index} commodity {comm}"
                            )
                        value = 0.0
                    if value == 0.0:
                        dead.append(comm)
                    else:
                        cell[comm] = value
                for comm in dead:
                    del cell[comm]

    def _refresh_active(self, worked: set[int]) -> None:
        for lid in worked:
            lrt = self.links[lid]
            busy = any(cell for g in lrt.groups for cell in g.cells)
            if not busy:
                busy = any(
                    self.queues.get((lid, vt), 0.0) > 0.0
                    for vt in self.scenario.vehicle_types
                )
            if busy or lid in self.source_links:
                self.active.add(lid)
            else:
                self.active.discard(lid)

    # ------------------------------------------------------------------
    # inspection
    # ------------------------------------------------------------------

    def state_rows(self, step: int) -> list[tuple[int, int, int, int, int, int, float]]:
        """Dump rows (step, link, group, cell, vtype, next, vehicles) for the
        links this engine is authoritative for, in canonical order."""
        rows = []
        for lid in sorted(self.links):
            lrt = self.links[lid]
            if not lrt.authoritative:
                continue
            for g in lrt.groups:
                for k, cell in enumerate(g.cells):
                    for vt, nxt in sorted(cell):
                        rows.append((step, lid, g.index, k, vt, nxt, cell[(vt, nxt)]))
        return rows

    def boundary_records(self, plan: StepPlan, link_ids) -> list[FluxRecord]:
        """All delivery and removal records touching the given overlap links."""
        records: list[FluxRecord] = []
        for lid in sorted(link_ids):
            records.extend(plan.deliveries.get(lid, ()))
            records.extend(plan.removals.get(lid, ()))
        return records
