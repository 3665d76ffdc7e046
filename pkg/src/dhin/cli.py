"""Command-line entry point: run scenarios, verify chains, inspect outputs.

Exit codes: 0 success, 1 verification or run failure, 2 usage error.
Output is JSON on stdout unless ``--pretty`` is given.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from dhin import __version__, sim
from dhin.identity import Did
from dhin.ledger import blocks_from_jsonl, replay

DEFAULT_OUT = "dhin-out"


class UsageError(Exception):
    pass


def _default_out() -> str:
    return os.environ.get("DHIN_OUT_DIR", DEFAULT_OUT)


def _emit(obj, pretty: bool) -> None:
    if not pretty:
        print(json.dumps(obj, sort_keys=True))
        return
    if isinstance(obj, dict):
        width = max((len(str(k)) for k in obj), default=0)
        for k, v in obj.items():
            shown = v if isinstance(v, (str, int, float, bool)) or v is None else json.dumps(v)
            print(f"{str(k).ljust(width)}  {shown}")
    elif isinstance(obj, list):
        for row in obj:
            print(json.dumps(row, sort_keys=True) if not isinstance(row, str) else row)
    else:
        print(obj)


def _load_blocks(path: Path):
    try:
        return blocks_from_jsonl(path.read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def cmd_run(args) -> int:
    source = args.scenario_flag or args.scenario or "reference"
    try:
        scenario = sim.load_scenario(source)
        if args.seed is not None:
            scenario = dataclasses.replace(scenario, seed=args.seed).validate()
    except (OSError, sim.ScenarioError) as exc:
        raise UsageError(f"bad scenario {source!r}: {exc}") from None
    try:
        result = sim.run(scenario)
    except sim.SimulationError as exc:
        print(f"dhin: run aborted: {exc}", file=sys.stderr)
        return 1
    out = args.out or _default_out()
    paths = sim.write_outputs(result, out)
    rep = result.report
    _emit(
        {
            "determinism_digest": rep.determinism_digest,
            "chain_height": rep.chain_height,
            "rounds": len(rep.rounds),
            "final_accuracy": rep.rounds[-1].accuracy if rep.rounds else None,
            "gini": rep.gini,
            "rewards_paid": rep.rewards_paid,
            "final_reserves": rep.final_reserves,
            "treasury": rep.treasury,
            "cycle_closed_by": len(rep.cycle_closed_by),
            "out": out,
            "files": sorted(paths),
        },
        args.pretty,
    )
    return 0


def cmd_verify(args) -> int:
    path = Path(args.chain)
    if not path.exists():
        raise UsageError(f"no such chain file: {path}")
    try:
        blocks = blocks_from_jsonl(path.read_text())
        chain = replay(blocks)
        result = {"valid": True, "height": chain.height, "digest": chain.digest().hex()}
    except Exception as exc:  # any malformation is a failed verification
        result = {"valid": False, "error": f"{type(exc).__name__}: {exc}"}
    _emit(result, args.pretty)
    return 0 if result["valid"] else 1


def _world_dir(args) -> Path:
    return Path(args.world or _default_out())


def cmd_audit(args) -> int:
    world = _world_dir(args)
    try:
        stores = json.loads((world / "phr.json").read_text())
    except OSError:
        raise UsageError(f"no phr.json under {world}") from None
    try:
        did = str(Did.parse(args.did))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if did not in stores:
        raise UsageError(f"{did} owns no PHR in {world}")
    entries = stores[did]["audit"]
    if args.pretty:
        for e in entries:
            ids = ",".join(str(i) for i in e["record_ids"])
            print(f"{e['at']:>6}  {e['action']:<18} {e['outcome']:<20} {e['actor']}  [{ids}]")
    else:
        for e in entries:
            print(json.dumps(e, sort_keys=True))
    return 0


def cmd_balances(args) -> int:
    world = _world_dir(args)
    blocks = _load_blocks(world / "chain.jsonl")
    try:
        chain = replay(blocks)
    except Exception as exc:  # tampered or malformed chain
        print(f"dhin: chain does not verify: {exc}", file=sys.stderr)
        return 1
    state = chain.state
    _emit(
        {
            "height": chain.height,
            "total_supply": state.total_supply,
            "wallets": {str(d): b for d, b in sorted(state.balances.items()) if b},
            "escrows": {c: e for c, e in sorted(state.escrows.items())},
        },
        args.pretty,
    )
    return 0


def cmd_report(args) -> int:
    world = _world_dir(args)
    name = "rounds.csv" if args.format == "csv" else "report.json"
    try:
        text = (world / name).read_text()
    except OSError:
        raise UsageError(f"no {name} under {world}") from None
    if args.format == "csv":
        sys.stdout.write(text)
    else:
        _emit(json.loads(text), args.pretty)
    return 0


def cmd_blob(args) -> int:
    world = _world_dir(args)
    try:
        lines = (world / "blobs.jsonl").read_text().splitlines()
    except OSError:
        raise UsageError(f"no blobs.jsonl under {world}") from None
    wanted = args.cid.lower()
    for line in lines:
        entry = json.loads(line)
        if entry["cid"] == wanted:
            data = bytes.fromhex(entry["data"])
            if args.raw:
                sys.stdout.buffer.write(data)
                sys.stdout.flush()
            else:
                _emit({"cid": wanted, "size": len(data), "data": entry["data"]}, args.pretty)
            return 0
    raise UsageError(f"no blob {args.cid} in {world}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dhin", description="Decentralized health intelligence network simulator")
    parser.add_argument("--version", action="version", version=f"dhin {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--pretty", action="store_true", help="human-readable output instead of JSON")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run a scenario and write outputs")
    p.add_argument("scenario", nargs="?", help="'reference' or a scenario file")
    p.add_argument("--scenario", dest="scenario_flag", help="scenario file (same as the positional)")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out", help="output directory (default $DHIN_OUT_DIR or ./dhin-out)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", parents=[common], help="replay-verify a chain.jsonl")
    p.add_argument("chain")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("audit", parents=[common], help="print one patient's PHR audit log")
    p.add_argument("did")
    p.add_argument("--world", help="run output directory")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("balances", parents=[common], help="wallet and escrow balances at the chain head")
    p.add_argument("--world", help="run output directory")
    p.set_defaults(func=cmd_balances)

    p = sub.add_parser("report", parents=[common], help="print the metrics report")
    p.add_argument("--world", help="run output directory")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("blob", parents=[common], help="print a stored blob by content id")
    p.add_argument("cid")
    p.add_argument("--world", help="run output directory")
    p.add_argument("--raw", action="store_true", help="write the raw bytes to stdout")
    p.set_defaults(func=cmd_blob)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dhin: error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        # downstream reader (e.g. head) closed early; not an error
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0


if __name__ == "__main__":
    sys.exit(main())
