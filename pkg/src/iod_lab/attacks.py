"""Adversary side: passive session linking and stolen-verifier forgeries.

Every attacker primitive takes only public-channel data, a ``StolenVerifier``
(the leaked tables, which never hold the server secret) and the attacker's
own ephemeral scalar.  The ``demonstrate_*`` drivers at the bottom wire an
attacker to real honest parties so the result can be observed end to end.
"""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping

from . import protocol
from .crypto import Digest, Group, xor
from .errors import ProtocolReject, UnknownDrone, UnknownUser
from .protocol import M1, M2, DroneRecord, DroneStore, ServerDatabase, UserRecord

LinkageMap = Mapping[Digest, list[int]]


@dataclass(frozen=True)
class StolenVerifier:
    """The control server's two tables as they would leak from storage."""

    group: str
    users: tuple[UserRecord, ...]
    drones: tuple[DroneRecord, ...]

    @classmethod
    def from_database(cls, db: ServerDatabase) -> "StolenVerifier":
        # same record order as the on-disk leak
        users = tuple(sorted(db.users.values(), key=lambda u: u.fid))
        drones = tuple(sorted(db.drones.values(), key=lambda d: d.pid))
        return cls(db.group, users, drones)

    def user(self, fid: bytes) -> UserRecord:
        for record in self.users:
            if record.fid == fid:
                return record
        raise UnknownUser("FID_i not in leaked table")

    def drone(self, pid: bytes) -> DroneRecord:
        for record in self.drones:
            if record.pid == pid:
                return record
        raise UnknownDrone("PID_j not in leaked table")


def link_sessions(view: Iterable) -> dict[Digest, list[int]]:
    """Group login messages by their FID_i field.

    ``view`` is a sequence of public entries (anything with ``.message``);
    indices in the result are positions in that sequence.  Only M1 entries
    are considered and nothing but the message fields is read.
    """
    classes: dict[Digest, list[int]] = defaultdict(list)
    for index, entry in enumerate(view):
        if isinstance(entry.message, M1):
            classes[entry.message.fid].append(index)
    return dict(classes)


def ground_truth_partition(transcript) -> set[frozenset[int]]:
    """User partition of M1 indices from the hidden ``user#n`` session labels."""
    by_user: dict[str, set[int]] = defaultdict(set)
    for index, entry in enumerate(transcript):
        if isinstance(entry.message, M1):
            by_user[entry.session_label.split("#", 1)[0]].add(index)
    return {frozenset(v) for v in by_user.values()}


def partition_matches(linkage: LinkageMap, transcript) -> bool:
    return {frozenset(v) for v in linkage.values()} == ground_truth_partition(transcript)


def observed_target(view: Iterable) -> tuple[Digest, Digest]:
    """(FID_i, PID_j) of the first login message seen on the wire."""
    for entry in view:
        if isinstance(entry.message, M1):
            return entry.message.fid, entry.message.pid
    raise UnknownUser("no login message observed")


def forge_user_m1(group: Group, stolen: StolenVerifier, fid: bytes, pid: bytes, t: int, ephemeral: int) -> M1:
    """Login message for the victim FID_i, authenticated with the leaked K_i."""
    victim = stolen.user(fid)
    return M1(
        t1=t,
        user_share=group.base_mult(ephemeral),
        a1=protocol.compute_a1(t, victim.fid, victim.user_key),
        fid=victim.fid,
        pid=Digest(pid),
    )


def forge_server_m2(group: Group, stolen: StolenVerifier, pid: bytes, fid: bytes, t: int, ephemeral: int) -> M2:
    """Server-to-drone message built from the leaked key_j, ID_j and K_i."""
    drone = stolen.drone(pid)
    victim = stolen.user(fid)
    return M2(
        a3=protocol.compute_a3(drone.pid, drone.drone_key, drone.identity, victim.user_key),
        t2=t,
        user_share=group.base_mult(ephemeral),
        pid=drone.pid,
        masked_key=xor(victim.user_key, drone.drone_key),
        fid=victim.fid,
    )


def attacker_complete_key(
    group: Group, ephemeral: int, drone_share: bytes, drone_identity: str, user_key: bytes, fid: bytes
) -> Digest:
    """Session key the drone derived, recomputed from the attacker's own ephemeral."""
    shared = group.scalar_mult(ephemeral, drone_share)
    return protocol.compute_session_key(drone_identity, shared, user_key, fid)


# -- end-to-end demonstrations against honest parties ----------------------------------


def demonstrate_user_impersonation(
    group: Group,
    stolen: StolenVerifier,
    target: tuple[bytes, bytes],
    clock,
    *,
    server_db: ServerDatabase,
    drone: DroneStore | None,
    delta_t: int,
    latency: int,
    attacker_rng: random.Random,
    drone_rng: random.Random | None = None,
    transcript=None,
) -> dict:
    """Attacker logs in as the victim ``target = (FID_i, PID_j)``; the honest server verifies.

    If ``drone`` is given the server's M2 is forwarded to it and the attacker
    also completes the session key (beyond what server acceptance shows).
    """
    fid, pid = Digest(target[0]), Digest(target[1])
    z_a = group.random_scalar(attacker_rng)
    t = clock.now
    forged = forge_user_m1(group, stolen, fid, pid, t, z_a)
    if transcript is not None:
        transcript.record("user->cs", forged, t, "attacker")
    outcome = {
        "target_fid": fid.hex(),
        "target_pid": pid.hex(),
        "forged_a1": forged.a1.hex(),
        "server_accepted": False,
        "drone_accepted": False,
        "attacker_key_matches_drone": False,
        "rejection": "",
    }
    try:
        m2 = protocol.server_process_m1(server_db, forged, clock.advance(latency), delta_t)
    except ProtocolReject as exc:
        outcome["rejection"] = type(exc).__name__
        return outcome
    outcome["server_accepted"] = True
    if transcript is not None:
        transcript.record("cs->drone", m2, m2.t2, "attacker")
    if drone is None:
        return outcome
    if drone_rng is None:
        raise ValueError("drone_rng is required when forwarding to a drone")
    g = group.random_scalar(drone_rng)
    try:
        m3, sk_drone = protocol.drone_process_m2(group, drone, m2, clock.advance(latency), delta_t, g)
    except ProtocolReject as exc:
        outcome["rejection"] = type(exc).__name__
        return outcome
    outcome["drone_accepted"] = True
    if transcript is not None:
        transcript.record("drone->user", m3, m3.t3, "attacker")
    victim = stolen.user(fid)
    sk_attacker = attacker_complete_key(group, z_a, m3.drone_share, stolen.drone(pid).identity, victim.user_key, fid)
    outcome["attacker_key_matches_drone"] = sk_attacker == sk_drone
    outcome["sk_attacker"] = sk_attacker.hex()
    outcome["sk_drone"] = sk_drone.hex()
    return outcome


def demonstrate_server_impersonation(
    group: Group,
    stolen: StolenVerifier,
    target: tuple[bytes, bytes],
    clock,
    *,
    drone: DroneStore,
    delta_t: int,
    latency: int,
    attacker_rng: random.Random,
    drone_rng: random.Random,
    transcript=None,
) -> dict:
    """Attacker plays the control server towards the honest drone."""
    fid, pid = Digest(target[0]), Digest(target[1])
    z_a = group.random_scalar(attacker_rng)
    t = clock.now
    forged = forge_server_m2(group, stolen, pid, fid, t, z_a)
    if transcript is not None:
        transcript.record("cs->drone", forged, t, "attacker")
    outcome = {
        "target_fid": fid.hex(),
        "target_pid": pid.hex(),
        "forged_a3": forged.a3.hex(),
        "drone_accepted": False,
        "keys_match": False,
        "rejection": "",
    }
    g = group.random_scalar(drone_rng)
    try:
        m3, sk_drone = protocol.drone_process_m2(group, drone, forged, clock.advance(latency), delta_t, g)
    except ProtocolReject as exc:
        outcome["rejection"] = type(exc).__name__
        return outcome
    if transcript is not None:
        transcript.record("drone->user", m3, m3.t3, "attacker")
    outcome["drone_accepted"] = True
    victim = stolen.user(fid)
    sk_attacker = attacker_complete_key(group, z_a, m3.drone_share, stolen.drone(pid).identity, victim.user_key, fid)
    outcome["keys_match"] = sk_attacker == sk_drone
    outcome["sk_attacker"] = sk_attacker.hex()
    outcome["sk_drone"] = sk_drone.hex()
    return outcome
