"""Command-line entry points: gen-grid, partition, run, bench, diff.

`--config FILE` supplies flag defaults from a JSON object keyed by flag
name (dashes or underscores); explicit flags win.  `OTMD_LOG` sets the log
level.  Exit codes: 0 success, 2 scenario/config error, 3 protocol error,
4 internal assertion.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import gridgen, partition as part, runner
from .comm import DEFAULT_TIMEOUT
from .errors import CtmError, ScenarioError
from .partition import DecoderMap
from .scenario import load_scenario, save_scenario

log = logging.getLogger("ctmdist")


def _setup_logging() -> None:
    level = os.environ.get("OTMD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctmdist",
        description="Distributed cell-transmission traffic simulator",
    )
    parser.add_argument("--config", help="JSON file with flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-grid", help="generate a synthetic tiled grid scenario")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument(
        "--demand-vph-per-lane",
        type=float,
        default=gridgen.DEFAULT_DEMAND_VPH_PER_LANE,
    )
    p.add_argument("--link-length", type=float, default=gridgen.DEFAULT_LINK_LENGTH)
    p.add_argument("--lanes", type=int, default=gridgen.DEFAULT_LANES)
    p.add_argument("--dt", type=float, default=gridgen.DEFAULT_DT)
    p.add_argument("--steps", type=int, default=gridgen.DEFAULT_STEPS)
    p.add_argument("--out", required=True)

    p = sub.add_parser("partition", help="split a scenario into fragments")
    p.add_argument("--scenario", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--import", dest="import_file", help="use an external partition file")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("run", help="run a scenario")
    p.add_argument("--scenario")
    p.add_argument("--fragments-dir")
    p.add_argument("--mode", choices=["seq", "local", "tcp"], default="seq")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump")
    p.add_argument("--dump-every", type=int, default=runner.DEFAULT_DUMP_EVERY)
    p.add_argument("--metrics")
    p.add_argument("--timing")
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT)
    p.add_argument("--spawn-local", action="store_true", help="tcp: fork workers here")
    p.add_argument("--worker-index", type=int, help="tcp: join as this worker")
    p.add_argument("--roster", help="tcp: worker_index host port lines")

    p = sub.add_parser("bench", help="scaling benchmark over worker counts")
    p.add_argument("--scenario", required=True)
    p.add_argument("--n-list", default="1,2,4")
    p.add_argument("--steps", type=int)
    p.add_argument("--transport", choices=["local", "tcp"], default="local")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("diff", help="compare two state dumps")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--tol", type=float)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    probe, _ = parser.parse_known_args(argv)
    if probe.config:
        try:
            with open(probe.config, "r", encoding="utf-8") as f:
                overrides = json.load(f)
        except (OSError, ValueError) as e:
            raise ScenarioError(f"cannot read config {probe.config}: {e}") from None
        if not isinstance(overrides, dict):
            raise ScenarioError("config file must hold a JSON object")
        defaults = {key.replace("-", "_"): value for key, value in overrides.items()}
        parser.set_defaults(**defaults)
        for action in parser._actions:
            if isinstance(action, argparse._SubParsersAction):
                for subparser in action.choices.values():
                    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_grid(args) -> int:
    if args.rows < 1 or args.cols < 1:
        raise ScenarioError("grid dimensions must be >= 1")
    scenario = gridgen.generate_grid(
        rows=args.rows,
        cols=args.cols,
        demand_vph_per_lane=args.demand_vph_per_lane,
        link_length=args.link_length,
        lanes=args.lanes,
        dt=args.dt,
        steps=args.steps,
    )
    save_scenario(scenario, args.out)
    nodes, links = len(scenario.nodes), len(scenario.links)
    print(f"wrote {args.out}: {nodes} nodes, {links} links")
    return 0


def _decoder_path(out_dir: str, i: int, j: int) -> str:
    return os.path.join(out_dir, f"decoder_{i}_to_{j}.json")


def _save_decoder(decoder: DecoderMap, path: str) -> None:
    doc = {
        "sender": decoder.sender,
        "receiver": decoder.receiver,
        "slots": [list(slot) for slot in decoder.slots],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_decoder(path: str) -> DecoderMap:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, ValueError) as e:
        raise ScenarioError(f"cannot read decoder map {path}: {e}") from None
    return DecoderMap(
        sender=int(doc["sender"]),
        receiver=int(doc["receiver"]),
        slots=tuple(tuple(int(x) for x in slot) for slot in doc["slots"]),
    )


def cmd_partition(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.import_file:
        node_partition = part.load_partition(args.import_file, scenario)
        if node_partition.n != args.n:
            raise ScenarioError(
                f"imported partition has {node_partition.n} subsets, --n is {args.n}"
            )
    else:
        node_partition = part.partition_nodes(scenario, args.n, args.seed)
    subs = part.build_subnetworks(scenario, node_partition)
    metagraph = part.build_metagraph(subs)

    os.makedirs(args.out_dir, exist_ok=True)
    for sub in subs:
        save_scenario(sub.fragment, os.path.join(args.out_dir, f"fragment_{sub.index}.json"))
    with open(
        os.path.join(args.out_dir, "metagraph.json"), "w", encoding="utf-8", newline="\n"
    ) as f:
        json.dump(
            {
                "n": metagraph.n,
                "edges": [
                    {"a": i, "b": j, "overlap_links": list(links)}
                    for (i, j), links in sorted(metagraph.edges.items())
                ],
            },
            f,
            indent=2,
            sort_keys=True,
        )
        f.write("\n")
    for sub in subs:
        for nb in sub.neighbors():
            _save_decoder(
                part.build_decoder_map(sub, nb), _decoder_path(args.out_dir, sub.index, nb)
            )
    part.save_partition(node_partition, os.path.join(args.out_dir, "partition.txt"))
    print(
        f"wrote {len(subs)} fragments, metagraph, and decoder maps to {args.out_dir}"
    )
    return 0


def _load_fragments_dir(fragments_dir: str) -> list:
    subs = []
    index = 0
    while True:
        path = os.path.join(fragments_dir, f"fragment_{index}.json")
        if not os.path.exists(path):
            break
        subs.append(part.subnetwork_from_fragment(load_scenario(path)))
        index += 1
    if not subs:
        raise ScenarioError(f"no fragment_*.json files in {fragments_dir}")
    return subs


def _load_decoders_dir(fragments_dir: str, subs) -> dict:
    decoders: dict[int, dict[int, tuple[DecoderMap, DecoderMap]]] = {}
    for sub in subs:
        per = {}
        for nb in sub.neighbors():
            send_path = _decoder_path(fragments_dir, sub.index, nb)
            recv_path = _decoder_path(fragments_dir, nb, sub.index)
            if os.path.exists(send_path) and os.path.exists(recv_path):
                per[nb] = (_load_decoder(send_path), _load_decoder(recv_path))
        decoders[sub.index] = per
    return decoders


def _write_run_outputs(args, result) -> None:
    if args.dump:
        runner.write_dump(result.rows, args.dump)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8", newline="\n") as f:
            json.dump(result.metrics, f, indent=2, sort_keys=True)
            f.write("\n")
    if args.timing:
        with open(args.timing, "w", encoding="utf-8", newline="\n") as f:
            json.dump(result.timing, f, indent=2, sort_keys=True)
            f.write("\n")


def _parse_roster(path: str) -> dict[int, tuple[str, int]]:
    roster = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ScenarioError(f"roster line {lineno}: expected 'index host port'")
            roster[int(parts[0])] = (parts[1], int(parts[2]))
    return roster


def cmd_run(args) -> int:
    if args.steps is not None and args.steps < 1:
        raise ScenarioError("--steps must be >= 1")
    dump_every = args.dump_every if args.dump_every and args.dump_every > 0 else None

    if args.mode == "seq":
        if not args.scenario:
            raise ScenarioError("--mode seq needs --scenario")
        scenario = load_scenario(args.scenario)
        result = runner.run_sequential(scenario, steps=args.steps, dump_every=dump_every)
    elif args.mode == "local":
        if args.fragments_dir:
            subs = _load_fragments_dir(args.fragments_dir)
            decoders = _load_decoders_dir(args.fragments_dir, subs)
            result = runner.run_distributed(
                subs=subs,
                decoders=decoders,
                transport="local",
                steps=args.steps,
                dump_every=dump_every,
                timeout=args.timeout,
            )
        else:
            if not args.scenario:
                raise ScenarioError("--mode local needs --scenario or --fragments-dir")
            scenario = load_scenario(args.scenario)
            result = runner.run_distributed(
                scenario,
                args.n,
                transport="local",
                seed=args.seed,
                steps=args.steps,
                dump_every=dump_every,
                timeout=args.timeout,
            )
    elif args.mode == "tcp":
        if args.worker_index is not None:
            return _run_tcp_join(args, dump_every)
        if args.fragments_dir:
            subs = _load_fragments_dir(args.fragments_dir)
            decoders = _load_decoders_dir(args.fragments_dir, subs)
            result = runner.run_distributed(
                subs=subs,
                decoders=decoders,
                transport="tcp",
                steps=args.steps,
                dump_every=dump_every,
                timeout=args.timeout,
            )
        else:
            if not args.scenario:
                raise ScenarioError("--mode tcp needs --scenario or --fragments-dir")
            scenario = load_scenario(args.scenario)
            result = runner.run_distributed(
                scenario,
                args.n,
                transport="tcp",
                seed=args.seed,
                steps=args.steps,
                dump_every=dump_every,
                timeout=args.timeout,
            )
    else:
        raise ScenarioError(f"unknown mode {args.mode}")

    _write_run_outputs(args, result)
    final = result.metrics["per_step"]["in_network"][-1]
    print(
        f"ran {result.metrics['steps']} steps; vehicles in network: {final:.6f}; "
        f"max conservation error: {result.metrics['conservation_max_abs_error']:.3e}"
    )
    return 0


def _run_tcp_join(args, dump_every) -> int:
    """Join a roster-described TCP run as one worker (externally launched)."""
    if not args.fragments_dir or not args.roster:
        raise ScenarioError("tcp join mode needs --fragments-dir and --roster")
    from .comm import tcp_connect_channels, tcp_listener

    subs = _load_fragments_dir(args.fragments_dir)
    sub = next((s for s in subs if s.index == args.worker_index), None)
    if sub is None:
        raise ScenarioError(f"no fragment for worker index {args.worker_index}")
    decoders = _load_decoders_dir(args.fragments_dir, subs).get(sub.index)
    roster = _parse_roster(args.roster)
    host, port = roster[sub.index]
    listener = tcp_listener(host, port)
    duplexes = tcp_connect_channels(
        sub.index, list(sub.neighbors()), roster, listener, args.timeout
    )
    listener.close()
    rows, per_step, timing = runner._worker_body(
        sub, duplexes, decoders, args.steps or sub.fragment.sim.steps, dump_every, args.timeout
    )
    base = args.dump or os.path.join(args.fragments_dir, "dump")
    runner.write_dump(rows, f"{base}.worker{sub.index}.csv")
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8", newline="\n") as f:
            json.dump({"per_step": per_step, "timing": timing}, f, indent=2, sort_keys=True)
            f.write("\n")
    print(f"worker {sub.index} finished; partial dump at {base}.worker{sub.index}.csv")
    return 0


def cmd_bench(args) -> int:
    scenario = load_scenario(args.scenario)
    try:
        n_list = [int(x) for x in args.n_list.split(",") if x.strip()]
    except ValueError:
        raise ScenarioError(f"bad --n-list {args.n_list!r}") from None
    if not n_list or any(n < 1 for n in n_list):
        raise ScenarioError("--n-list entries must be >= 1")
    report = runner.benchmark(
        scenario, n_list, steps=args.steps, transport=args.transport, seed=args.seed
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    header = f"{'n':>4} {'setup':>9} {'comm':>9} {'compute':>9} {'total':>9} {'speedup':>8} {'ideal rate':>11}"
    print(header)
    for row in report["rows"]:
        ideal = f"{row['ideal_rate']:.4f}" if row["ideal_rate"] is not None else "-"
        print(
            f"{row['n']:>4} {row['setup_s']:>9.3f} {row['comm_s']:>9.3f} "
            f"{row['compute_s']:>9.3f} {row['total_s']:>9.3f} {row['speedup']:>8.2f} "
            f"{ideal:>11}"
        )
    if not report["total_time_monotone_nonincreasing"]:
        print("warning: total time is not monotone nonincreasing over n")
    return 0


def cmd_diff(args) -> int:
    with open(args.a, "r", encoding="utf-8") as f:
        text_a = f.read()
    with open(args.b, "r", encoding="utf-8") as f:
        text_b = f.read()
    divergence = runner.diff_dumps(text_a, text_b, tol=args.tol)
    if divergence is None:
        print("equal")
        return 0
    print(f"differ: {divergence}")
    return 1


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    argv = sys.argv[1:] if argv is None else argv
    parser = _build_parser()
    try:
        args = _apply_config(parser, argv)
        handler = {
            "gen-grid": cmd_gen_grid,
            "partition": cmd_partition,
            "run": cmd_run,
            "bench": cmd_bench,
            "diff": cmd_diff,
        }[args.command]
        return handler(args)
    except CtmError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
