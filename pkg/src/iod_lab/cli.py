"""``iod-lab`` command line.

Exit codes: 0 success, 1 I/O or file-format error, 2 duplicate identity,
3 protocol rejection, 4 attack (or report check) failed, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import attacks, persistence, protocol
from .crypto import get_group
from .errors import DuplicateIdentity, FormatError, IodLabError, ProtocolReject
from .protocol import ServerDatabase
from .sim import SCENARIOS, Clock, ScenarioReport, SimConfig, Transcript, derive_rng, run_scenario

EXIT_OK = 0
EXIT_IO = 1
EXIT_DUPLICATE = 2
EXIT_REJECTED = 3
EXIT_ATTACK_FAILED = 4
EXIT_USAGE = 64

GROUP_ENV = "IOD_LAB_GROUP"
SESSION_GAP_MS = 1000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with seed, group, delta_t_ms, latency_ms")
    p.add_argument("--seed", type=int)
    p.add_argument("--group", choices=("curve", "toy"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iod-lab", description="User/drone authentication scheme lab and attack demos.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register-user", help="register a user and write its device store")
    _common(p)
    p.add_argument("--id", required=True)
    p.add_argument("--password", required=True)
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--init", action="store_true", help="create the database if it does not exist")
    p.add_argument("--out", type=Path, help="device store path (default: <id>.device.json)")

    p = sub.add_parser("register-drone", help="register a drone and write its store")
    _common(p)
    p.add_argument("--id", required=True)
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--init", action="store_true")
    p.add_argument("--out", type=Path, help="drone store path (default: <id>.drone.json)")

    p = sub.add_parser("session", help="run one honest login between a user and a drone")
    _common(p)
    p.add_argument("--user-store", type=Path, required=True)
    p.add_argument("--drone-store", type=Path, required=True)
    p.add_argument("--db", type=Path, required=True)
    p.add_argument("--password", required=True)
    p.add_argument("--out", type=Path, help="transcript (JSON lines)")
    p.add_argument("--append", action="store_true", help="append to an existing transcript")
    p.add_argument("--delta-t", type=int, help="freshness window in ms")
    p.add_argument("--latency", type=int, help="per-hop latency in ms")
    p.add_argument("--label", help="ground-truth session label (default: <user id>#<n>)")

    p = sub.add_parser("attack", help="run one of the three attacks against stored state")
    _common(p)
    p.add_argument("--kind", required=True, choices=("track", "impersonate-user", "impersonate-server"))
    p.add_argument("--db", type=Path, help="full server database (honest verifier)")
    p.add_argument("--stolen", type=Path, help="stolen-verifier export")
    p.add_argument("--transcript", type=Path)
    p.add_argument("--drone-store", type=Path, help="honest drone to attack or forward to")
    p.add_argument("--export-stolen", type=Path, help="also write the leaked tables to this path")
    p.add_argument("--out", type=Path, help="scenario report (JSON)")

    p = sub.add_parser("scenario", help="run a built-in end-to-end scenario")
    _common(p)
    p.add_argument("--name", required=True, choices=SCENARIOS)
    p.add_argument("--out", type=Path, help="scenario report (JSON)")
    p.add_argument("--transcript-out", type=Path)
    p.add_argument("--users", type=int, help="track: number of users")
    p.add_argument("--sessions", type=int, help="track: sessions per user")

    p = sub.add_parser("verify-report", help="check a scenario report and re-run it if built-in")
    p.add_argument("report", type=Path)

    return parser


def resolve_config(args) -> SimConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from exc
    if os.environ.get(GROUP_ENV):
        data["group"] = os.environ[GROUP_ENV]
    if getattr(args, "group", None):
        data["group"] = args.group
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    try:
        return SimConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def _open_db(args, config: SimConfig) -> ServerDatabase:
    if args.db.exists():
        db = persistence.load_database(args.db)
        if not isinstance(db, ServerDatabase):
            raise FormatError(f"{args.db} is a stolen-verifier export, not a server database")
        return db
    if not args.init:
        raise FileNotFoundError(f"{args.db} does not exist (use --init to create it)")
    group = get_group(config.group)
    return ServerDatabase(config.group, group.random_scalar(derive_rng(config.seed, "cli/server-secret")))


def cmd_register_user(args) -> int:
    config = resolve_config(args)
    db = _open_db(args, config)
    group = get_group(db.group)
    user_rng = derive_rng(config.seed, f"cli/user/{args.id}")
    device_nonce = group.random_scalar(user_rng)
    ppw = protocol.user_register_request(args.id, args.password, device_nonce)
    cs_rng = derive_rng(config.seed, f"cli/cs/user/{args.id}")
    reply, db = protocol.server_register_user(
        db, args.id, ppw, group.random_scalar(cs_rng), group.random_scalar(cs_rng)
    )
    directory = sorted((d.identity, d.pid) for d in db.drones.values())
    store = protocol.provision_device(device_nonce, reply, directory, identity=args.id, password=args.password)
    out = args.out or Path(f"{args.id}.device.json")
    persistence.save_database(db, args.db)
    persistence.save_device_store(store, args.id, db.group, out)
    print(f"registered user {args.id!r}; device store written to {out}")
    return EXIT_OK


def cmd_register_drone(args) -> int:
    config = resolve_config(args)
    db = _open_db(args, config)
    nonce = get_group(db.group).random_scalar(derive_rng(config.seed, f"cli/cs/drone/{args.id}"))
    store, db = protocol.server_register_drone(db, args.id, nonce)
    out = args.out or Path(f"{args.id}.drone.json")
    persistence.save_database(db, args.db)
    persistence.save_drone_store(store, db.group, out)
    print(f"registered drone {args.id!r} (PID {store.pid.hex()}); store written to {out}")
    return EXIT_OK


def cmd_session(args) -> int:
    config = resolve_config(args)
    db = persistence.load_database(args.db)
    if not isinstance(db, ServerDatabase):
        raise FormatError(f"{args.db} is not a full server database")
    identity, _, device = persistence.load_device_store(args.user_store)
    _, drone = persistence.load_drone_store(args.drone_store)
    group = get_group(db.group)
    delta_t = config.delta_t_ms if args.delta_t is None else args.delta_t
    latency = config.latency_ms if args.latency is None else args.latency
    if delta_t < 0 or latency < 0:
        raise UsageError("--delta-t and --latency must be non-negative")

    previous = persistence.import_transcript(args.out) if args.append and args.out and args.out.exists() else Transcript()
    clock = Clock(previous.entries[-1].sent_at + SESSION_GAP_MS if previous.entries else 0)
    # the session index keeps ephemeral draws distinct across appended sessions
    index = sum(1 for e in previous if e.direction == "user->cs")
    label = args.label or f"{identity}#{index}"
    transcript = Transcript()
    tag = f"cli/session/{index}"

    try:
        t1 = clock.now
        z = group.random_scalar(derive_rng(config.seed, f"{tag}/user/{identity}"))
        m1, state = protocol.user_login_start(group, device, identity, args.password, drone.pid, t1, z)
        transcript.record("user->cs", m1, t1, label)
        t2 = clock.advance(latency)
        m2 = protocol.server_process_m1(db, m1, t2, delta_t)
        transcript.record("cs->drone", m2, t2, label)
        t3 = clock.advance(latency)
        g = group.random_scalar(derive_rng(config.seed, f"{tag}/drone/{drone.identity}"))
        m3, sk_drone = protocol.drone_process_m2(group, drone, m2, t3, delta_t, g)
        transcript.record("drone->user", m3, t3, label)
        sk_user = protocol.user_process_m3(group, state, m3, clock.advance(latency), delta_t)
    finally:
        if args.out:
            persistence.export_transcript(transcript, args.out, append=args.append)

    print(f"sk_user:  {sk_user.hex()}")
    print(f"sk_drone: {sk_drone.hex()}")
    if sk_user != sk_drone:
        print("session keys differ", file=sys.stderr)
        return EXIT_REJECTED
    print("keys match")
    return EXIT_OK


def _attack_report(kind: str, config: SimConfig, success: bool, checks: dict, details: dict, transcript) -> ScenarioReport:
    return ScenarioReport(
        scenario=f"attack:{kind}",
        verdict="attack-succeeded" if success else "attack-failed",
        success=success,
        checks=checks,
        config=config,
        transcript=transcript,
        details=details,
    )


def cmd_attack(args) -> int:
    config = resolve_config(args)
    if args.kind == "track":
        if not args.transcript:
            raise UsageError("--kind track needs --transcript")
        view = persistence.import_adversary_view(args.transcript)
        linkage = attacks.link_sessions(view)
        # ground truth is consulted only to score the linker, after it ran
        labelled = persistence.import_transcript(args.transcript)
        has_truth = all(e.session_label for e in labelled if e.direction == "user->cs")
        perfect = attacks.partition_matches(linkage, labelled) if has_truth else None
        linked = any(len(v) > 1 for v in linkage.values())
        success = linked and perfect is not False
        checks = {"sessions_linked": linked}
        if perfect is not None:
            checks["partition_perfect"] = perfect
        details = {
            "classes": len(linkage),
            "linkage": {fid.hex(): idx for fid, idx in linkage.items()},
            "login_messages": sum(len(v) for v in linkage.values()),
        }
        report = _attack_report("track", config, success, checks, details, Transcript())
    else:
        report = _impersonation(args, config)

    if args.out:
        persistence.save_report(report, args.out)
    for name, value in report.checks.items():
        print(f"{name}: {str(value).lower()}")
    print(f"verdict: {report.verdict}")
    return EXIT_OK if report.success else EXIT_ATTACK_FAILED


def _impersonation(args, config: SimConfig) -> ScenarioReport:
    if args.stolen:
        stolen = persistence.load_stolen_verifier(args.stolen)
    elif args.db:
        stolen = persistence.load_stolen_verifier(args.db)
    else:
        raise UsageError(f"--kind {args.kind} needs --stolen or --db")
    if args.export_stolen:
        persistence.save_database(stolen, args.export_stolen, persistence.STOLEN)
    group = get_group(stolen.group)

    view = persistence.import_adversary_view(args.transcript) if args.transcript else ()
    start = view[-1].sent_at + SESSION_GAP_MS if view else 0
    if any(isinstance(e.message, protocol.M1) for e in view):
        target = attacks.observed_target(view)
    elif stolen.users and stolen.drones:
        # nothing observed: the leaked tables carry the pseudonyms too
        target = (stolen.users[0].fid, stolen.drones[0].pid)
    else:
        raise UsageError("no observed login and the leaked tables are empty")

    clock = Clock(start)
    transcript = Transcript()
    attacker_rng = derive_rng(config.seed, f"cli/attacker/{args.kind}")
    drone_rng = derive_rng(config.seed, f"cli/attack-drone/{args.kind}")
    drone = persistence.load_drone_store(args.drone_store)[1] if args.drone_store else None

    if args.kind == "impersonate-user":
        if not args.db:
            raise UsageError("--kind impersonate-user needs --db (the honest server to fool)")
        db = persistence.load_database(args.db)
        if not isinstance(db, ServerDatabase):
            raise FormatError(f"{args.db} is not a full server database")
        outcome = attacks.demonstrate_user_impersonation(
            group, stolen, target, clock,
            server_db=db, drone=drone, delta_t=config.delta_t_ms, latency=config.latency_ms,
            attacker_rng=attacker_rng, drone_rng=drone_rng, transcript=transcript,
        )
        checks = {"server_accepted": outcome["server_accepted"]}
        success = outcome["server_accepted"]
    else:
        if drone is None:
            raise UsageError("--kind impersonate-server needs --drone-store (the honest drone to fool)")
        outcome = attacks.demonstrate_server_impersonation(
            group, stolen, target, clock,
            drone=drone, delta_t=config.delta_t_ms, latency=config.latency_ms,
            attacker_rng=attacker_rng, drone_rng=drone_rng, transcript=transcript,
        )
        checks = {"drone_accepted": outcome["drone_accepted"], "keys_match": outcome["keys_match"]}
        success = outcome["drone_accepted"] and outcome["keys_match"]
    outcome["used_server_secret"] = False
    return _attack_report(args.kind, config, success, checks, outcome, transcript)


def cmd_scenario(args) -> int:
    config = resolve_config(args)
    params = {}
    if args.users is not None:
        params["users"] = args.users
    if args.sessions is not None:
        params["sessions"] = args.sessions
    report = run_scenario(config, args.name, **params)
    data = persistence.report_to_dict(report)
    data["params"] = params
    if args.out:
        persistence.save_report(data, args.out)
    if args.transcript_out:
        persistence.export_transcript(report.transcript, args.transcript_out)
    for name, value in report.checks.items():
        print(f"{name}: {str(value).lower()}")
    print(f"verdict: {report.verdict}")
    return EXIT_OK if report.success else EXIT_ATTACK_FAILED


def cmd_verify_report(args) -> int:
    data = persistence.load_report(args.report)
    for key in ("scenario", "verdict", "success", "checks", "config", "transcript"):
        if key not in data:
            raise FormatError(f"report lacks {key!r}")
    consistent = not data["success"] or all(data["checks"].values())
    print(f"scenario: {data['scenario']}  verdict: {data['verdict']}")
    if data["scenario"] in SCENARIOS:
        config = SimConfig.from_dict(data["config"])
        rerun = persistence.report_to_dict(run_scenario(config, data["scenario"], **data.get("params", {})))
        rerun["params"] = data.get("params", {})
        reproduced = persistence.dumps(rerun) == args.report.read_text(encoding="utf-8")
        print(f"reproduced byte-for-byte: {str(reproduced).lower()}")
    else:
        reproduced = True
    ok = consistent and reproduced and data["success"]
    return EXIT_OK if ok else EXIT_ATTACK_FAILED


COMMANDS = {
    "register-user": cmd_register_user,
    "register-drone": cmd_register_drone,
    "session": cmd_session,
    "attack": cmd_attack,
    "scenario": cmd_scenario,
    "verify-report": cmd_verify_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"iod-lab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DuplicateIdentity as exc:
        print(f"iod-lab: duplicate identity: {exc}", file=sys.stderr)
        return EXIT_DUPLICATE
    except ProtocolReject as exc:
        print(f"iod-lab: rejected ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_REJECTED
    except (OSError, FormatError) as exc:
        print(f"iod-lab: {exc}", file=sys.stderr)
        return EXIT_IO
    except IodLabError as exc:
        print(f"iod-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


def run() -> None:
    sys.exit(main())
