"""Deterministic orchestration of registrations, sessions and attack scenarios.

All time is logical (``Clock``) and all randomness comes from per-party
streams derived from a single root seed, so the same ``SimConfig`` always
produces the same transcript, digest for digest.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import attacks, protocol
from .crypto import Digest, get_group
from .errors import ProtocolReject, UnknownScenario
from .protocol import (
    M1,
    M2,
    M3,
    DroneStore,
    MobileDeviceStore,
    ServerDatabase,
)

USER_TO_CS = "user->cs"
CS_TO_DRONE = "cs->drone"
DRONE_TO_USER = "drone->user"

SCENARIOS = (
    "honest",
    "tamper",
    "replay-in-window",
    "track",
    "steal-impersonate-user",
    "steal-impersonate-server",
)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    group: str = "curve"
    delta_t_ms: int = protocol.DEFAULT_DELTA_T_MS
    latency_ms: int = 50

    def __post_init__(self):
        get_group(self.group)
        if self.delta_t_ms <= 0:
            raise ValueError("delta_t_ms must be positive")
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be non-negative")
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must fit in 64 bits")

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {"seed", "group", "delta_t_ms", "latency_ms"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "SimConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "group": self.group,
            "delta_t_ms": self.delta_t_ms,
            "latency_ms": self.latency_ms,
        }


def derive_rng(seed: int, tag: str) -> random.Random:
    """Independent stream for ``tag``; adding new tags never shifts old ones."""
    material = hashlib.sha256(f"{seed}/{tag}".encode()).digest()
    return random.Random(int.from_bytes(material[:16], "big"))


@dataclass
class Clock:
    now: int = 0

    def advance(self, ms: int) -> int:
        if ms < 0:
            raise ValueError("clock only moves forward")
        self.now += ms
        return self.now


@dataclass(frozen=True)
class PublicEntry:
    """What an eavesdropper on the public channel sees."""

    direction: str
    message: M1 | M2 | M3
    sent_at: int


@dataclass(frozen=True)
class TranscriptEntry:
    direction: str
    message: M1 | M2 | M3
    sent_at: int
    # ground truth for scoring the linker; never part of the public view
    session_label: str = ""

    def public(self) -> PublicEntry:
        return PublicEntry(self.direction, self.message, self.sent_at)


@dataclass
class Transcript:
    entries: list[TranscriptEntry] = field(default_factory=list)

    def append(self, entry: TranscriptEntry) -> None:
        if self.entries and entry.sent_at < self.entries[-1].sent_at:
            raise ValueError("transcript entries must be appended in send order")
        self.entries.append(entry)

    def record(self, direction: str, message, sent_at: int, label: str = "") -> None:
        self.append(TranscriptEntry(direction, message, sent_at, label))

    def public_view(self) -> tuple[PublicEntry, ...]:
        return tuple(e.public() for e in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass
class UserAgent:
    """A registered user: the memorized credentials plus the device store."""

    identity: str
    password: str
    store: MobileDeviceStore


class Simulation:
    """Parties, clock and public-channel transcript of one simulated run."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.group = get_group(config.group)
        self.clock = Clock()
        self.transcript = Transcript()
        self._rngs: dict[str, random.Random] = {}
        self.db = ServerDatabase(config.group, self.group.random_scalar(self.rng("cs/secret")))
        self.users: dict[str, UserAgent] = {}
        self.drones: dict[str, DroneStore] = {}
        self._session_counter = 0

    def rng(self, tag: str) -> random.Random:
        if tag not in self._rngs:
            self._rngs[tag] = derive_rng(self.config.seed, tag)
        return self._rngs[tag]

    # registration runs over the secure channel and is never transcribed

    def register_drone(self, identity: str) -> DroneStore:
        nonce = self.group.random_scalar(self.rng("cs/drone-nonces"))
        store, self.db = protocol.server_register_drone(self.db, identity, nonce)
        self.drones[identity] = store
        for agent in self.users.values():
            agent.store = _with_directory_entry(agent.store, store)
        return store

    def register_user(self, identity: str, password: str) -> UserAgent:
        user_rng = self.rng(f"user/{identity}/registration")
        device_nonce = self.group.random_scalar(user_rng)
        ppw = protocol.user_register_request(identity, password, device_nonce)
        cs_rng = self.rng("cs/user-nonces")
        fid_nonce = self.group.random_scalar(cs_rng)
        key_nonce = self.group.random_scalar(cs_rng)
        reply, self.db = protocol.server_register_user(self.db, identity, ppw, fid_nonce, key_nonce)
        directory = [(d.identity, d.pid) for d in self.drones.values()]
        store = protocol.provision_device(
            device_nonce, reply, directory, identity=identity, password=password
        )
        agent = UserAgent(identity, password, store)
        self.users[identity] = agent
        return agent

    def next_label(self, identity: str) -> str:
        self._session_counter += 1
        return f"{identity}#{self._session_counter}"

    def honest_session(
        self,
        user_id: str,
        drone_id: str,
        *,
        latencies: Sequence[int] | None = None,
        label: str | None = None,
    ) -> tuple[Digest, Digest]:
        """Run M1/M2/M3 between honest parties; returns (sk_user, sk_drone).

        ``latencies`` overrides the per-hop delay for (M1, M2, M3).
        """
        hops = tuple(latencies) if latencies is not None else (self.config.latency_ms,) * 3
        agent = self.users[user_id]
        drone = self.drones[drone_id]
        label = label or self.next_label(user_id)
        delta_t = self.config.delta_t_ms
        group = self.group

        t1 = self.clock.now
        z = group.random_scalar(self.rng(f"user/{user_id}/ephemeral"))
        m1, state = protocol.user_login_start(group, agent.store, agent.identity, agent.password, drone.pid, t1, z)
        self.transcript.record(USER_TO_CS, m1, t1, label)

        t2 = self.clock.advance(hops[0])
        m2 = protocol.server_process_m1(self.db, m1, t2, delta_t)
        self.transcript.record(CS_TO_DRONE, m2, t2, label)

        t3 = self.clock.advance(hops[1])
        g = group.random_scalar(self.rng(f"drone/{drone_id}/ephemeral"))
        m3, sk_drone = protocol.drone_process_m2(group, drone, m2, t3, delta_t, g)
        self.transcript.record(DRONE_TO_USER, m3, t3, label)

        t4 = self.clock.advance(hops[2])
        sk_user = protocol.user_process_m3(group, state, m3, t4, delta_t)
        return sk_user, sk_drone


def _with_directory_entry(store: MobileDeviceStore, drone: DroneStore) -> MobileDeviceStore:
    return replace(store, drone_directory=store.drone_directory + ((drone.identity, drone.pid),))


def run_registration(
    config: SimConfig, users: Iterable[tuple[str, str]], drones: Iterable[str]
) -> Simulation:
    """Register every drone, then every user, over the secure channel.

    The returned simulation exposes ``db``, ``users`` (device stores with
    credentials) and ``drones``; its transcript is still empty.
    """
    sim = Simulation(config)
    for identity in drones:
        sim.register_drone(identity)
    for identity, password in users:
        sim.register_user(identity, password)
    return sim


def run_honest_session(
    sim: Simulation, user_id: str, drone_id: str, **kwargs
) -> tuple[Digest, Digest, Transcript]:
    sk_user, sk_drone = sim.honest_session(user_id, drone_id, **kwargs)
    return sk_user, sk_drone, sim.transcript


# -- scenarios ---------------------------------------------------------------------


@dataclass
class ScenarioReport:
    scenario: str
    verdict: str
    success: bool
    checks: dict[str, bool]
    config: SimConfig
    transcript: Transcript
    details: dict[str, Any] = field(default_factory=dict)


def _default_parties(sim: Simulation, users: int = 1, drones: int = 1) -> None:
    for j in range(drones):
        sim.register_drone(f"drone-{j}")
    for i in range(users):
        sim.register_user(f"user-{i}", f"pw-{i}")


def _scenario_honest(sim: Simulation, params: dict) -> ScenarioReport:
    _default_parties(sim)
    sk_user, sk_drone = sim.honest_session("user-0", "drone-0")
    match = sk_user == sk_drone
    return _report(
        sim,
        "honest",
        "keys-match" if match else "keys-mismatch",
        {"keys_match": match, "transcript_has_three_messages": len(sim.transcript) == 3},
        {"sk_user": sk_user.hex(), "sk_drone": sk_drone.hex()},
    )


def _scenario_tamper(sim: Simulation, params: dict) -> ScenarioReport:
    """Flip one byte of A1_i on the wire; the server must reject."""
    _default_parties(sim)
    agent, drone = sim.users["user-0"], sim.drones["drone-0"]
    position = params.get("byte", 0)
    t1 = sim.clock.now
    z = sim.group.random_scalar(sim.rng("user/user-0/ephemeral"))
    m1, _ = protocol.user_login_start(sim.group, agent.store, agent.identity, agent.password, drone.pid, t1, z)
    forged = bytearray(m1.a1)
    forged[position] ^= 0x01
    tampered = replace(m1, a1=Digest(bytes(forged)))
    sim.transcript.record(USER_TO_CS, tampered, t1, sim.next_label("user-0"))
    t2 = sim.clock.advance(sim.config.latency_ms)
    try:
        protocol.server_process_m1(sim.db, tampered, t2, sim.config.delta_t_ms)
        rejected, reason = False, ""
    except ProtocolReject as exc:
        rejected, reason = True, type(exc).__name__
    return _report(
        sim,
        "tamper",
        "tamper-rejected" if rejected else "tamper-accepted",
        {"server_rejected": rejected},
        {"flipped_byte": position, "rejection": reason},
    )


def _scenario_replay(sim: Simulation, params: dict) -> ScenarioReport:
    """Replay a captured M1 while it is still inside the freshness window.

    The scheme has no replay cache, so the server accepts the copy.
    """
    _default_parties(sim)
    sim.honest_session("user-0", "drone-0")
    captured = sim.transcript.entries[0].message
    # re-deliver so the receive time is still within delta_t of T_1
    receive_at = captured.t1 + sim.config.delta_t_ms
    if receive_at < sim.clock.now:
        receive_at = sim.clock.now
    sim.clock.now = receive_at
    sim.transcript.record(USER_TO_CS, captured, receive_at, "replay")
    try:
        protocol.server_process_m1(sim.db, captured, receive_at, sim.config.delta_t_ms)
        accepted = True
    except ProtocolReject:
        accepted = False
    return _report(
        sim,
        "replay-in-window",
        "replay-accepted" if accepted else "replay-rejected",
        {"server_accepted_replay": accepted},
        {"receive_at": receive_at},
    )


def _scenario_track(sim: Simulation, params: dict) -> ScenarioReport:
    n_users = params.get("users", 3)
    n_sessions = params.get("sessions", 4)
    _default_parties(sim, users=n_users, drones=params.get("drones", 2))
    plan = [(f"user-{i}", k) for i in range(n_users) for k in range(n_sessions)]
    order_rng = sim.rng("scenario/track/order")
    order_rng.shuffle(plan)
    drone_ids = sorted(sim.drones)
    for user_id, k in plan:
        drone_id = drone_ids[order_rng.randrange(len(drone_ids))]
        sim.honest_session(user_id, drone_id, label=f"{user_id}#{k}")
        sim.clock.advance(params.get("gap_ms", 1000))
    linkage = attacks.link_sessions(sim.transcript.public_view())
    perfect = attacks.partition_matches(linkage, sim.transcript)
    return _report(
        sim,
        "track",
        "linkage-perfect" if perfect else "linkage-imperfect",
        {
            "partition_matches_ground_truth": perfect,
            "class_count_equals_users": len(linkage) == n_users,
        },
        {
            "users": n_users,
            "sessions_per_user": n_sessions,
            "linkage": {fid.hex(): idx for fid, idx in linkage.items()},
        },
    )


def _scenario_steal_user(sim: Simulation, params: dict) -> ScenarioReport:
    _default_parties(sim)
    sim.honest_session("user-0", "drone-0")
    stolen = attacks.StolenVerifier.from_database(sim.db)
    sim.clock.advance(params.get("gap_ms", 1000))
    outcome = attacks.demonstrate_user_impersonation(
        sim.group,
        stolen,
        attacks.observed_target(sim.transcript.public_view()),
        sim.clock,
        server_db=sim.db,
        drone=sim.drones["drone-0"],
        delta_t=sim.config.delta_t_ms,
        latency=sim.config.latency_ms,
        attacker_rng=sim.rng("attacker/ephemeral"),
        drone_rng=sim.rng("drone/drone-0/ephemeral"),
        transcript=sim.transcript,
    )
    return _report(
        sim,
        "steal-impersonate-user",
        "server-accepted-forgery" if outcome["server_accepted"] else "forgery-rejected",
        {"server_accepted": outcome["server_accepted"]},
        outcome,
    )


def _scenario_steal_server(sim: Simulation, params: dict) -> ScenarioReport:
    _default_parties(sim)
    sim.honest_session("user-0", "drone-0")
    stolen = attacks.StolenVerifier.from_database(sim.db)
    sim.clock.advance(params.get("gap_ms", 1000))
    outcome = attacks.demonstrate_server_impersonation(
        sim.group,
        stolen,
        attacks.observed_target(sim.transcript.public_view()),
        sim.clock,
        drone=sim.drones["drone-0"],
        delta_t=sim.config.delta_t_ms,
        latency=sim.config.latency_ms,
        attacker_rng=sim.rng("attacker/ephemeral"),
        drone_rng=sim.rng("drone/drone-0/ephemeral"),
        transcript=sim.transcript,
    )
    return _report(
        sim,
        "steal-impersonate-server",
        "drone-accepted-forgery" if outcome["drone_accepted"] else "forgery-rejected",
        {"drone_accepted": outcome["drone_accepted"], "keys_match": outcome["keys_match"]},
        outcome,
    )


_RUNNERS = {
    "honest": _scenario_honest,
    "tamper": _scenario_tamper,
    "replay-in-window": _scenario_replay,
    "track": _scenario_track,
    "steal-impersonate-user": _scenario_steal_user,
    "steal-impersonate-server": _scenario_steal_server,
}

_SUCCESS_VERDICTS = {
    "honest": "keys-match",
    "tamper": "tamper-rejected",
    "replay-in-window": "replay-accepted",
    "track": "linkage-perfect",
    "steal-impersonate-user": "server-accepted-forgery",
    "steal-impersonate-server": "drone-accepted-forgery",
}


def _report(sim: Simulation, name: str, verdict: str, checks: dict, details: dict) -> ScenarioReport:
    return ScenarioReport(
        scenario=name,
        verdict=verdict,
        success=verdict == _SUCCESS_VERDICTS[name] and all(checks.values()),
        checks=checks,
        config=sim.config,
        transcript=sim.transcript,
        details=details,
    )


def run_scenario(config: SimConfig, scenario: str, **params) -> ScenarioReport:
    """Execute one named scenario on a fresh simulation built from ``config``.

    ``success`` means the scenario demonstrated what it exists to show:
    agreement for ``honest``, rejection for ``tamper``, and for every other
    scenario that the weakness is exploitable.
    """
    try:
        runner = _RUNNERS[scenario]
    except KeyError:
        raise UnknownScenario(f"{scenario!r}; expected one of {', '.join(SCENARIOS)}") from None
    return runner(Simulation(config), params)
