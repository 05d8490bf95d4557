"""Run orchestration: sequential and distributed execution, state dumps,
conservation metrics, timing breakdown, and the scaling benchmark.

Every mode drives the same per-step loop: phase A, encode, exchange, decode,
phase B.  A sequential run is the loop with zero channels.  Distributed
workers are forked processes; the parent merges their authoritative state
rows, which must be bitwise identical to a sequential run's dump.
"""

from __future__ import annotations

import multiprocessing
import time
import traceback
from dataclasses import dataclass, field

from .comm import (
    DEFAULT_TIMEOUT,
    NeighborChannel,
    PipeDuplex,
    decode,
    encode,
    establish,
    exchange,
    tcp_connect_channels,
    tcp_listener,
)
from .engine import Engine
from .errors import CtmError, InternalAssertion, ProtocolError, ScenarioError
from .partition import (
    DecoderMap,
    Subnetwork,
    build_decoder_map,
    build_metagraph,
    build_receive_map,
    build_subnetworks,
    partition_nodes,
)
from .scenario import Scenario

CONSERVATION_TOL = 1e-9
DUMP_HEADER = "step,link,lane_group,cell,vehicle_type,next_link,vehicles"
DEFAULT_DUMP_EVERY = 10

# dump row: (step, link, lane_group, cell, vehicle_type, next_link, vehicles)
Row = tuple[int, int, int, int, int, int, float]


@dataclass
class WorkerReport:
    index: int
    setup_s: float
    compute_s: float
    comm_times: list[float] = field(default_factory=list)

    def timing(self) -> dict:
        comm_total = sum(self.comm_times)
        return {
            "index": self.index,
            "setup_s": self.setup_s,
            "compute_s": self.compute_s,
            "comm": {
                "total_s": comm_total,
                "min_s": min(self.comm_times) if self.comm_times else 0.0,
                "mean_s": comm_total / len(self.comm_times) if self.comm_times else 0.0,
                "max_s": max(self.comm_times) if self.comm_times else 0.0,
            },
            "total_s": self.setup_s + self.compute_s + comm_total,
        }


@dataclass
class RunResult:
    rows: list[Row]
    metrics: dict
    timing: dict


def _simulate(
    engine: Engine,
    channels: list[NeighborChannel],
    steps: int,
    dump_every: int | None,
    timeout: float,
    report: WorkerReport,
    check_conservation: bool,
) -> tuple[list[Row], dict]:
    """The per-step loop shared by every execution mode."""
    rows: list[Row] = []
    per_step = {"in_network": [], "entered_cum": [], "exited_cum": [], "queued": []}
    entered_cum = 0.0
    exited_cum = 0.0
    ordered = sorted(channels, key=lambda c: c.remote)
    for step in range(steps):
        t0 = time.perf_counter()
        plan = engine.phase_a(step)
        outbox = {}
        for ch in ordered:
            records = engine.boundary_records(plan, ch.overlap_links)
            outbox[ch.remote] = encode(ch.send_map, records)
        t1 = time.perf_counter()
        report.compute_s += t1 - t0
        if ordered:
            inbox = exchange(channels, outbox, step, timeout)
            t2 = time.perf_counter()
            report.comm_times.append(t2 - t1)
        else:
            inbox = {}
            t2 = t1
        received = []
        for ch in ordered:
            received.extend(decode(ch.recv_map, inbox[ch.remote]))
        stats = engine.phase_b(step, received)
        report.compute_s += time.perf_counter() - t2

        entered_cum += stats.entered
        exited_cum += stats.exited
        per_step["in_network"].append(stats.in_network)
        per_step["entered_cum"].append(entered_cum)
        per_step["exited_cum"].append(exited_cum)
        per_step["queued"].append(stats.queued)
        if check_conservation:
            error = entered_cum - exited_cum - stats.in_network
            if abs(error) > CONSERVATION_TOL:
                raise InternalAssertion(
                    f"conservation violated at step {step}: "
                    f"entered-exited-in_network = {error}"
                )
        if dump_every and ((step + 1) % dump_every == 0 or step == steps - 1):
            rows.extend(engine.state_rows(step + 1))
    return rows, per_step


def _finalize_metrics(per_step: dict, steps: int) -> dict:
    worst = 0.0
    for i in range(steps):
        error = (
            per_step["entered_cum"][i]
            - per_step["exited_cum"][i]
            - per_step["in_network"][i]
        )
        worst = max(worst, abs(error))
    return {
        "steps": steps,
        "per_step": per_step,
        "conservation_max_abs_error": worst,
    }


def run_sequential(
    scenario: Scenario,
    steps: int | None = None,
    dump_every: int | None = DEFAULT_DUMP_EVERY,
) -> RunResult:
    """Whole-network run in one process; the reference for every equivalence
    check."""
    steps = scenario.sim.steps if steps is None else steps
    if steps < 1:
        raise ScenarioError("steps must be >= 1")
    wall0 = time.perf_counter()
    report = WorkerReport(index=0, setup_s=0.0, compute_s=0.0)
    t0 = time.perf_counter()
    engine = Engine(scenario)
    report.setup_s = time.perf_counter() - t0
    rows, per_step = _simulate(
        engine, [], steps, dump_every, DEFAULT_TIMEOUT, report, check_conservation=True
    )
    metrics = _finalize_metrics(per_step, steps)
    timing = {
        "wall_s": time.perf_counter() - wall0,
        "mode": "sequential",
        "workers": [report.timing()],
    }
    return RunResult(rows=rows, metrics=metrics, timing=timing)


# ---------------------------------------------------------------------------
# distributed
# ---------------------------------------------------------------------------


def _worker_channels(
    sub: Subnetwork,
    duplexes: dict[int, object],
    decoders: dict[int, tuple[DecoderMap, DecoderMap]] | None,
) -> list[NeighborChannel]:
    channels = []
    for nb in sub.neighbors():
        if decoders is not None and nb in decoders:
            send_map, recv_map = decoders[nb]
        else:
            send_map = build_decoder_map(sub, nb)
            recv_map = build_receive_map(sub, nb)
        channels.append(
            NeighborChannel(
                local=sub.index,
                remote=nb,
                send_map=send_map,
                recv_map=recv_map,
                overlap_links=sub.links_with(nb),
                duplex=duplexes[nb],
            )
        )
    return channels


def _worker_body(
    sub: Subnetwork,
    duplexes: dict[int, object],
    decoders,
    steps: int,
    dump_every: int | None,
    timeout: float,
) -> tuple[list[Row], dict, dict]:
    report = WorkerReport(index=sub.index, setup_s=0.0, compute_s=0.0)
    t0 = time.perf_counter()
    engine = Engine(sub.fragment, set(sub.owned_nodes))
    channels = _worker_channels(sub, duplexes, decoders)
    establish(channels, timeout)
    report.setup_s = time.perf_counter() - t0
    rows, per_step = _simulate(
        engine, channels, steps, dump_every, timeout, report, check_conservation=False
    )
    for ch in channels:
        ch.duplex.close()
    return rows, per_step, report.timing()


def _worker_entry(
    sub,
    pipe_conns,
    roster,
    listener,
    decoders,
    steps,
    dump_every,
    timeout,
    result_conn,
):
    try:
        if pipe_conns is not None:
            duplexes = {nb: PipeDuplex(conn) for nb, conn in pipe_conns.items()}
        else:
            duplexes = tcp_connect_channels(
                sub.index, list(sub.neighbors()), roster, listener, timeout
            )
            listener.close()
        rows, per_step, timing = _worker_body(
            sub, duplexes, decoders, steps, dump_every, timeout
        )
        result_conn.send(("ok", rows, per_step, timing))
    except CtmError as e:
        result_conn.send(("error", type(e).__name__, str(e), e.exit_code))
    except Exception:
        result_conn.send(("error", "Exception", traceback.format_exc(), 1))
    finally:
        result_conn.close()


def _raise_worker_error(kind: str, message: str, exit_code: int) -> None:
    for cls in (ScenarioError, ProtocolError, InternalAssertion):
        if cls.__name__ == kind:
            raise cls(message)
    raise CtmError(message)


def run_distributed(
    scenario: Scenario | None = None,
    n: int | None = None,
    *,
    subs: list[Subnetwork] | None = None,
    decoders: dict[int, dict[int, tuple[DecoderMap, DecoderMap]]] | None = None,
    transport: str = "local",
    seed: int = 0,
    steps: int | None = None,
    dump_every: int | None = DEFAULT_DUMP_EVERY,
    timeout: float = DEFAULT_TIMEOUT,
) -> RunResult:
    """Partition (unless fragments are supplied), fork one worker per
    subnetwork, run in lockstep, and merge.  `transport` picks the channel
    implementation: "local" pipes or "tcp" loopback sockets."""
    if transport not in ("local", "tcp"):
        raise ScenarioError(f"unknown transport {transport!r}")
    wall0 = time.perf_counter()
    if subs is None:
        if scenario is None or n is None:
            raise ScenarioError("run_distributed needs a scenario and n, or fragments")
        partition = partition_nodes(scenario, n, seed)
        subs = build_subnetworks(scenario, partition)
    n = len(subs)
    if steps is None:
        steps = subs[0].fragment.sim.steps
    if steps < 1:
        raise ScenarioError("steps must be >= 1")

    _check_ownership(subs)
    metagraph = build_metagraph(subs)

    ctx = multiprocessing.get_context("fork")
    pipe_conns: list[dict[int, object] | None] = [None] * n
    roster = None
    listeners = None
    if transport == "local":
        for i in range(n):
            pipe_conns[i] = {}
        for (i, j) in metagraph.edges:
            a, b = ctx.Pipe(duplex=True)
            pipe_conns[i][j] = a
            pipe_conns[j][i] = b
    else:
        listeners = {i: tcp_listener() for i in range(n)}
        roster = {i: ("127.0.0.1", listeners[i].getsockname()[1]) for i in range(n)}

    result_pipes = [ctx.Pipe(duplex=False) for _ in range(n)]
    procs = []
    for sub in subs:
        worker_decoders = decoders.get(sub.index) if decoders else None
        proc = ctx.Process(
            target=_worker_entry,
            args=(
                sub,
                pipe_conns[sub.index],
                roster,
                listeners[sub.index] if listeners else None,
                worker_decoders,
                steps,
                dump_every,
                timeout,
                result_pipes[sub.index][1],
            ),
        )
        proc.start()
        procs.append(proc)
    for recv, send in result_pipes:
        send.close()
    for conns in pipe_conns:
        if conns:
            for conn in conns.values():
                conn.close()
    if listeners:
        for sock in listeners.values():
            sock.close()

    results: list[tuple | None] = [None] * n
    failure: tuple | None = None
    pending = set(range(n))
    # generous backstop only: stalled workers abort themselves via the
    # per-channel exchange timeout and report through their result pipe
    deadline = time.monotonic() + timeout + 3600.0
    while pending and failure is None:
        progressed = False
        for i in sorted(pending):
            if results[i] is None and result_pipes[i][0].poll(0.02):
                try:
                    results[i] = result_pipes[i][0].recv()
                except EOFError:
                    results[i] = ("error", "ProtocolError", f"worker {i} died", 3)
                pending.discard(i)
                progressed = True
                if results[i][0] == "error":
                    failure = results[i]
                break
        if not progressed and time.monotonic() > deadline:
            failure = ("error", "ProtocolError", "workers stalled", 3)
    if failure is not None:
        grace = time.monotonic() + 2.0
        for proc in procs:
            proc.join(max(0.0, grace - time.monotonic()))
        for proc in procs:
            if proc.is_alive():
                proc.terminate()
        for proc in procs:
            proc.join()
        _raise_worker_error(failure[1], failure[2], failure[3])
    for proc in procs:
        proc.join()

    rows = merge_states([r[1] for r in results])
    merged_steps = {key: [] for key in ("in_network", "entered_cum", "exited_cum", "queued")}
    for step in range(steps):
        for key in merged_steps:
            total = 0.0
            for r in results:
                total += r[2][key][step]
            merged_steps[key].append(total)
    metrics = _finalize_metrics(merged_steps, steps)
    if metrics["conservation_max_abs_error"] > CONSERVATION_TOL:
        raise InternalAssertion(
            f"conservation violated in distributed run: "
            f"{metrics['conservation_max_abs_error']}"
        )
    timing = {
        "wall_s": time.perf_counter() - wall0,
        "mode": f"distributed-{transport}",
        "n": n,
        "workers": [r[3] for r in results],
    }
    return RunResult(rows=rows, metrics=metrics, timing=timing)


def _check_ownership(subs: list[Subnetwork]) -> None:
    """Every link must have exactly one authoritative (relative-sink-side)
    owner across the fragments."""
    owners: dict[int, int] = {}
    for sub in subs:
        for lid in list(sub.interior_links) + list(sub.relative_sinks):
            if lid in owners:
                raise InternalAssertion(
                    f"link {lid} claimed by subnetworks {owners[lid]} and {sub.index}"
                )
            owners[lid] = sub.index


def merge_states(row_lists: list[list[Row]]) -> list[Row]:
    """Concatenate per-worker dumps into the canonical global order; every
    (step, link, lane group, cell, commodity) must appear exactly once."""
    merged: list[Row] = []
    for rows in row_lists:
        merged.extend(tuple(r) for r in rows)
    merged.sort()
    for a, b in zip(merged, merged[1:]):
        if a[:6] == b[:6]:
            raise InternalAssertion(
                f"ownership conflict: state row {a[:6]} reported twice"
            )
    return merged


# ---------------------------------------------------------------------------
# dumps
# ---------------------------------------------------------------------------


def rows_to_csv(rows: list[Row]) -> str:
    out = [DUMP_HEADER]
    for step, link, group, cell, vtype, nxt, veh in rows:
        out.append(f"{step},{link},{group},{cell},{vtype},{nxt},{veh!r}")
    return "\n".join(out) + "\n"


def write_dump(rows: list[Row], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(rows_to_csv(rows))


def parse_dump(text: str) -> list[Row]:
    lines = text.splitlines()
    if not lines or lines[0] != DUMP_HEADER:
        raise ScenarioError(f"dump schema mismatch: header {lines[0] if lines else ''!r}")
    rows: list[Row] = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise ScenarioError(f"dump line {lineno}: expected 7 fields")
        rows.append(
            (
                int(parts[0]),
                int(parts[1]),
                int(parts[2]),
                int(parts[3]),
                int(parts[4]),
                int(parts[5]),
                float(parts[6]),
            )
        )
    return rows


def diff_dumps(text_a: str, text_b: str, tol: float | None = None) -> str | None:
    """None when equal; otherwise a description of the first divergence.
    Byte comparison by default, relative tolerance with `tol`."""
    if tol is None:
        if text_a == text_b:
            return None
        rows_a, rows_b = parse_dump(text_a), parse_dump(text_b)
        tol = 0.0
    else:
        rows_a, rows_b = parse_dump(text_a), parse_dump(text_b)
    for i in range(min(len(rows_a), len(rows_b))):
        a, b = rows_a[i], rows_b[i]
        if a[:6] != b[:6]:
            return f"row {i + 1}: keys differ: {a[:6]} vs {b[:6]}"
        va, vb = a[6], b[6]
        if va != vb and abs(va - vb) > tol * max(abs(va), abs(vb)):
            return (
                f"step {a[0]} link {a[1]} group {a[2]} cell {a[3]} vtype {a[4]} "
                f"next {a[5]}: {va!r} vs {vb!r}"
            )
    if len(rows_a) != len(rows_b):
        longer = "a" if len(rows_a) > len(rows_b) else "b"
        return f"row counts differ ({len(rows_a)} vs {len(rows_b)}); extra rows in {longer}"
    return None


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


def setup_timing(scenario: Scenario, n: int, seed: int = 0) -> float:
    """Seconds to partition, build fragments and the metagraph, and derive
    every decoder map: the distribution setup cost for `n` workers."""
    t0 = time.perf_counter()
    partition = partition_nodes(scenario, n, seed)
    subs = build_subnetworks(scenario, partition)
    build_metagraph(subs)
    for sub in subs:
        for nb in sub.neighbors():
            build_decoder_map(sub, nb)
            build_receive_map(sub, nb)
    return time.perf_counter() - t0


def benchmark(
    scenario: Scenario,
    n_list: list[int],
    steps: int | None = None,
    transport: str = "local",
    seed: int = 0,
    timeout: float = DEFAULT_TIMEOUT,
) -> dict:
    """Run the scenario at each worker count and report the timing columns:
    setup, communication, computation, total, speed-up, and the ideal rate
    (worker count times the serial simulation rate)."""
    rows = []
    base_total = None
    serial_rate = None
    for n in n_list:
        if n == 1:
            result = run_sequential(scenario, steps=steps, dump_every=None)
        else:
            result = run_distributed(
                scenario,
                n,
                transport=transport,
                seed=seed,
                steps=steps,
                dump_every=None,
                timeout=timeout,
            )
        workers = result.timing["workers"]
        total = result.timing["wall_s"]
        comm_max = max(w["comm"]["total_s"] for w in workers)
        compute_max = max(w["compute_s"] for w in workers)
        setup_max = max(w["setup_s"] for w in workers)
        if base_total is None:
            base_total = total
            if n == 1:
                serial_rate = 1.0 / total
        rows.append(
            {
                "n": n,
                "setup_s": setup_max,
                "comm_s": comm_max,
                "compute_s": compute_max,
                "total_s": total,
                "speedup": base_total / total,
                "rate": 1.0 / total,
                "ideal_rate": (n * serial_rate) if serial_rate is not None else None,
            }
        )
    monotone = all(
        rows[i]["total_s"] >= rows[i + 1]["total_s"] for i in range(len(rows) - 1)
    )
    return {
        "transport": transport,
        "steps": steps,
        "rows": rows,
        "total_time_monotone_nonincreasing": monotone,
    }
