"""Per-party step functions of the user/drone/control-server scheme.

Nothing here performs I/O or reads a clock: timestamps, nonces and
ephemeral scalars are all passed in, and database updates come back as new
``ServerDatabase`` values.

Notation used in comments and error messages:

  ID_i, PW_i       user identity and password
  ID_j             drone identity
  FID_i = h(ID_i || f_i)                 user pseudonym (never changes)
  K_i   = h(FID_i || s || q_i)           user long-term key
  PID_j = h(a_j || ID_j)                 drone pseudonym
  key_j = h(ID_j || s || a_j)            drone long-term key
  K_ij  = K_i xor key_j                  K_i masked for transport to the drone

Every ``||`` is the length-prefixed ``crypto.concat``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .crypto import (
    Digest,
    Group,
    encode_identity,
    encode_scalar,
    encode_timestamp,
    get_group,
    hash_bytes,
    hash_fields,
    xor,
)
from .errors import (
    AuthFailure,
    DuplicateIdentity,
    EncodingError,
    NotForMe,
    SessionRejected,
    StaleTimestamp,
    UnknownDrone,
    UnknownUser,
)

MAX_NAME_BYTES = 64
DEFAULT_DELTA_T_MS = 5000


def check_name(value: str, what: str = "identity") -> str:
    size = len(value.encode("utf-8"))
    if not 1 <= size <= MAX_NAME_BYTES:
        raise EncodingError(f"{what} must be 1-{MAX_NAME_BYTES} UTF-8 bytes, got {size}")
    return value


@dataclass(frozen=True)
class UserRecord:
    identity: str
    fid: Digest
    user_key: Digest


@dataclass(frozen=True)
class DroneRecord:
    identity: str
    pid: Digest
    drone_key: Digest


@dataclass(frozen=True)
class ServerDatabase:
    """Control server state: the secret ``s`` plus the two verifier tables.

    ``users`` is keyed by FID_i and ``drones`` by PID_j, the values each
    incoming message is looked up by.
    """

    group: str
    server_secret: int
    users: Mapping[Digest, UserRecord] = field(default_factory=dict)
    drones: Mapping[Digest, DroneRecord] = field(default_factory=dict)
    # identity indexes; rebuilt from the tables unless carried over by an update
    _user_ids: frozenset | None = field(default=None, compare=False, repr=False)
    _drone_ids: frozenset | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        get_group(self.group).check_scalar(self.server_secret)
        if self._user_ids is None:
            object.__setattr__(self, "_user_ids", frozenset(r.identity for r in self.users.values()))
        if self._drone_ids is None:
            object.__setattr__(self, "_drone_ids", frozenset(r.identity for r in self.drones.values()))

    def has_user(self, identity: str) -> bool:
        return identity in self._user_ids

    def has_drone(self, identity: str) -> bool:
        return identity in self._drone_ids

    def user_by_identity(self, identity: str) -> UserRecord:
        for record in self.users.values():
            if record.identity == identity:
                return record
        raise UnknownUser(identity)

    def drone_by_identity(self, identity: str) -> DroneRecord:
        for record in self.drones.values():
            if record.identity == identity:
                return record
        raise UnknownDrone(identity)


@dataclass(frozen=True)
class UserRegistration:
    """What the server hands back to the user over the secure channel."""

    fid_nonce: int
    user_key: Digest
    verifier: Digest


@dataclass(frozen=True)
class DroneStore:
    identity: str
    pid: Digest
    drone_key: Digest


@dataclass(frozen=True)
class MobileDeviceStore:
    device_nonce: int
    fid_nonce: int
    user_key: Digest
    verifier: Digest
    # (ID_j, PID_j) pairs the user may log in to; sk_i needs ID_j
    drone_directory: tuple[tuple[str, Digest], ...] = ()

    def drone_identity(self, pid: bytes) -> str:
        for identity, known_pid in self.drone_directory:
            if known_pid == pid:
                return identity
        raise UnknownDrone(f"PID {bytes(pid).hex()[:16]}... not in device directory")


@dataclass(frozen=True)
class M1:
    """User -> control server."""

    t1: int
    user_share: bytes
    a1: Digest
    fid: Digest
    pid: Digest


@dataclass(frozen=True)
class M2:
    """Control server -> drone."""

    a3: Digest
    t2: int
    user_share: bytes
    pid: Digest
    masked_key: Digest
    fid: Digest


@dataclass(frozen=True)
class M3:
    """Drone -> user."""

    drone_share: bytes
    t3: int
    auth: Digest


@dataclass
class UserSessionState:
    """Ephemeral user state held between sending M1 and receiving M3."""

    ephemeral: int
    fid: Digest
    user_key: Digest
    drone_identity: str
    t1: int
    consumed: bool = False


# -- formula helpers ---------------------------------------------------------


def compute_fid(identity: str, fid_nonce: int) -> Digest:
    return hash_fields(encode_identity(identity), encode_scalar(fid_nonce))


def compute_verifier(fid: bytes, ppw: bytes, fid_nonce: int, user_key: bytes) -> Digest:
    """B_i = h(A_i || FID_i) with A_i = h(FID_i || ppw_i || f_i || K_i)."""
    a = hash_fields(fid, ppw, encode_scalar(fid_nonce), user_key)
    return hash_fields(a, fid)


def compute_a1(t1: int, fid: bytes, user_key: bytes) -> Digest:
    return hash_fields(encode_timestamp(t1), fid, user_key)


def compute_a3(pid: bytes, drone_key: bytes, drone_identity: str, user_key: bytes) -> Digest:
    return hash_fields(pid, drone_key, encode_identity(drone_identity), user_key)


def compute_session_key(drone_identity: str, shared_point: bytes, user_key: bytes, fid: bytes) -> Digest:
    return hash_fields(encode_identity(drone_identity), shared_point, user_key, fid)


def compute_auth(session_key: bytes, fid: bytes, t3: int, user_key: bytes) -> Digest:
    return hash_fields(session_key, fid, encode_timestamp(t3), user_key)


def check_fresh(sent: int, received: int, delta_t: int, hop: str = "message") -> None:
    """Reject when |received - sent| exceeds the freshness window."""
    gap = max(sent, received) - min(sent, received)
    if gap > delta_t:
        raise StaleTimestamp(f"{hop}: timestamp gap {gap} ms exceeds window {delta_t} ms")


# -- registration --------------------------------------------------------------


def user_register_request(identity: str, password: str, device_nonce: int) -> Digest:
    """Masked password ppw_i = h(h(ID_i || d_i) xor h(PW_i || d_i))."""
    check_name(identity)
    check_name(password, "password")
    d = encode_scalar(device_nonce)
    id_part = hash_fields(encode_identity(identity), d)
    pw_part = hash_fields(encode_identity(password), d)
    return hash_bytes(xor(id_part, pw_part))


def server_register_user(
    db: ServerDatabase, identity: str, ppw: bytes, fid_nonce: int, key_nonce: int
) -> tuple[UserRegistration, ServerDatabase]:
    check_name(identity)
    if db.has_user(identity):
        raise DuplicateIdentity(f"user {identity!r} already registered")
    fid = compute_fid(identity, fid_nonce)
    if fid in db.users:
        raise DuplicateIdentity(f"pseudonym collision for user {identity!r}")
    user_key = hash_fields(fid, encode_scalar(db.server_secret), encode_scalar(key_nonce))
    verifier = compute_verifier(fid, ppw, fid_nonce, user_key)
    users = dict(db.users)
    users[fid] = UserRecord(identity, fid, user_key)
    # q_i is dropped here; only (ID_i, FID_i, K_i) is kept
    db = dataclasses.replace(db, users=users, _user_ids=db._user_ids | {identity})
    return UserRegistration(fid_nonce, user_key, verifier), db


def provision_device(
    device_nonce: int,
    registration: UserRegistration,
    drone_directory: Sequence[tuple[str, bytes]] = (),
    *,
    identity: str | None = None,
    password: str | None = None,
) -> MobileDeviceStore:
    """Build the mobile device store from the server's registration reply.

    When ``identity`` and ``password`` are supplied the stored verifier is
    checked against them before the store is returned.
    """
    store = MobileDeviceStore(
        device_nonce=device_nonce,
        fid_nonce=registration.fid_nonce,
        user_key=Digest(registration.user_key),
        verifier=Digest(registration.verifier),
        drone_directory=tuple((name, Digest(pid)) for name, pid in drone_directory),
    )
    if identity is not None and password is not None:
        if _local_verifier(store, identity, password) != store.verifier:
            raise SessionRejected("registration reply does not match the supplied credentials")
    return store


def server_register_drone(
    db: ServerDatabase, identity: str, drone_nonce: int
) -> tuple[DroneStore, ServerDatabase]:
    check_name(identity)
    if db.has_drone(identity):
        raise DuplicateIdentity(f"drone {identity!r} already registered; request another identity")
    pid = hash_fields(encode_scalar(drone_nonce), encode_identity(identity))
    if pid in db.drones:
        raise DuplicateIdentity(f"pseudonym collision for drone {identity!r}")
    drone_key = hash_fields(encode_identity(identity), encode_scalar(db.server_secret), encode_scalar(drone_nonce))
    drones = dict(db.drones)
    drones[pid] = DroneRecord(identity, pid, drone_key)
    db = dataclasses.replace(db, drones=drones, _drone_ids=db._drone_ids | {identity})
    return DroneStore(identity, pid, drone_key), db


# -- login and authentication ----------------------------------------------------


def _local_verifier(store: MobileDeviceStore, identity: str, password: str) -> Digest:
    ppw = user_register_request(identity, password, store.device_nonce)
    fid = compute_fid(identity, store.fid_nonce)
    return compute_verifier(fid, ppw, store.fid_nonce, store.user_key)


def user_login_start(
    group: Group,
    store: MobileDeviceStore,
    identity: str,
    password: str,
    pid: bytes,
    t1: int,
    ephemeral: int,
) -> tuple[M1, UserSessionState]:
    """Check the password locally, then build M1 for the drone named by ``pid``."""
    if _local_verifier(store, identity, password) != store.verifier:
        raise SessionRejected("B_i mismatch: wrong identity or password")
    drone_identity = store.drone_identity(pid)
    group.check_scalar(ephemeral)
    fid = compute_fid(identity, store.fid_nonce)
    m1 = M1(
        t1=t1,
        user_share=group.base_mult(ephemeral),
        a1=compute_a1(t1, fid, store.user_key),
        fid=fid,
        pid=Digest(pid),
    )
    state = UserSessionState(ephemeral, fid, store.user_key, drone_identity, t1)
    return m1, state


def server_process_m1(db: ServerDatabase, m1: M1, t2: int, delta_t: int) -> M2:
    check_fresh(m1.t1, t2, delta_t, "M1")
    user = db.users.get(m1.fid)
    if user is None:
        raise UnknownUser("FID_i not in database")
    drone = db.drones.get(m1.pid)
    if drone is None:
        raise UnknownDrone("PID_j not in database")
    if compute_a1(m1.t1, user.fid, user.user_key) != m1.a1:
        raise AuthFailure("A1_i mismatch")
    return M2(
        a3=compute_a3(drone.pid, drone.drone_key, drone.identity, user.user_key),
        t2=t2,
        user_share=m1.user_share,
        pid=drone.pid,
        masked_key=xor(user.user_key, drone.drone_key),
        fid=user.fid,
    )


def drone_process_m2(
    group: Group, store: DroneStore, m2: M2, t3: int, delta_t: int, ephemeral: int
) -> tuple[M3, Digest]:
    if m2.pid != store.pid:
        raise NotForMe("M2 addressed to another PID_j")
    check_fresh(m2.t2, t3, delta_t, "M2")
    user_key = xor(m2.masked_key, store.drone_key)
    if compute_a3(store.pid, store.drone_key, store.identity, user_key) != m2.a3:
        raise AuthFailure("A3_i mismatch")
    shared = group.scalar_mult(ephemeral, m2.user_share)
    sk = compute_session_key(store.identity, shared, user_key, m2.fid)
    m3 = M3(
        drone_share=group.base_mult(ephemeral),
        t3=t3,
        auth=compute_auth(sk, m2.fid, t3, user_key),
    )
    return m3, sk


def user_process_m3(group: Group, state: UserSessionState, m3: M3, t4: int, delta_t: int) -> Digest:
    if state.consumed:
        raise SessionRejected("session state already used")
    state.consumed = True
    check_fresh(m3.t3, t4, delta_t, "M3")
    shared = group.scalar_mult(state.ephemeral, m3.drone_share)
    sk = compute_session_key(state.drone_identity, shared, state.user_key, state.fid)
    if compute_auth(sk, state.fid, m3.t3, state.user_key) != m3.auth:
        raise AuthFailure("Auth_j mismatch")
    return sk
