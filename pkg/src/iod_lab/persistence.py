"""Canonical JSON formats for databases, party stores, transcripts and reports.

Every writer emits sorted keys and a fixed record order, so serializing the
same value twice gives byte-identical files.  All digests, scalars and group
elements are lowercase hex.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable

from .attacks import StolenVerifier
from .crypto import DIGEST_SIZE, SCALAR_SIZE, Digest, decode_scalar, encode_scalar
from .errors import EncodingError, FormatError
from .protocol import (
    M1,
    M2,
    M3,
    DroneRecord,
    DroneStore,
    MobileDeviceStore,
    ServerDatabase,
    UserRecord,
)
from .sim import PublicEntry, ScenarioReport, Transcript, TranscriptEntry

FORMAT_VERSION = 1

FULL = "full"
STOLEN = "stolen-verifier"


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _read_json(path: str | Path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise FormatError(f"{path}: top level must be an object")
    return data


def _check_header(data: dict, kinds: Iterable[str]) -> str:
    if data.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {data.get('version')!r}")
    kind = data.get("kind")
    if kind not in kinds:
        raise FormatError(f"unexpected file kind {kind!r}")
    return kind


def _field(data: dict, key: str):
    try:
        return data[key]
    except (KeyError, TypeError):
        raise FormatError(f"missing field {key!r}") from None


def _hex(data: dict, key: str, size: int | None = None) -> bytes:
    value = _field(data, key)
    if not isinstance(value, str) or value != value.lower():
        raise FormatError(f"{key}: expected lowercase hex string")
    try:
        raw = bytes.fromhex(value)
    except ValueError:
        raise FormatError(f"{key}: bad hex") from None
    if size is not None and len(raw) != size:
        raise FormatError(f"{key}: expected {size} bytes, got {len(raw)}")
    return raw


def _digest(data: dict, key: str) -> Digest:
    return Digest(_hex(data, key, DIGEST_SIZE))


def _scalar(data: dict, key: str) -> int:
    return decode_scalar(_hex(data, key, SCALAR_SIZE))


def _int(data: dict, key: str) -> int:
    value = _field(data, key)
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise FormatError(f"{key}: expected non-negative integer")
    return value


def _str(data: dict, key: str) -> str:
    value = _field(data, key)
    if not isinstance(value, str):
        raise FormatError(f"{key}: expected string")
    return value


# -- server database ---------------------------------------------------------------


def database_to_dict(db: ServerDatabase | StolenVerifier, mode: str = FULL) -> dict:
    if mode not in (FULL, STOLEN):
        raise ValueError(f"mode must be {FULL!r} or {STOLEN!r}")
    if isinstance(db, StolenVerifier):
        if mode == FULL:
            raise ValueError("a stolen verifier has no server secret to save in full mode")
        users, drones = db.users, db.drones
    else:
        users, drones = db.users.values(), db.drones.values()
    out = {
        "version": FORMAT_VERSION,
        "kind": mode,
        "group": db.group,
        "users": [
            {"id": u.identity, "fid": u.fid.hex(), "k": u.user_key.hex()}
            for u in sorted(users, key=lambda u: u.fid)
        ],
        "drones": [
            {"id": d.identity, "pid": d.pid.hex(), "key": d.drone_key.hex()}
            for d in sorted(drones, key=lambda d: d.pid)
        ],
    }
    if mode == FULL:
        out["s"] = encode_scalar(db.server_secret).hex()
    return out


def database_from_dict(data: dict) -> ServerDatabase | StolenVerifier:
    kind = _check_header(data, (FULL, STOLEN))
    group = _str(data, "group")
    if group not in ("curve", "toy"):
        raise FormatError(f"unknown group {group!r}")
    try:
        users = [UserRecord(_str(u, "id"), _digest(u, "fid"), _digest(u, "k")) for u in _field(data, "users")]
        drones = [DroneRecord(_str(d, "id"), _digest(d, "pid"), _digest(d, "key")) for d in _field(data, "drones")]
    except EncodingError as exc:
        raise FormatError(str(exc)) from exc
    if kind == STOLEN:
        if "s" in data:
            raise FormatError("stolen-verifier file must not carry the server secret")
        return StolenVerifier(group, tuple(users), tuple(drones))
    try:
        return ServerDatabase(
            group=group,
            server_secret=_scalar(data, "s"),
            users={u.fid: u for u in users},
            drones={d.pid: d for d in drones},
        )
    except EncodingError as exc:
        raise FormatError(str(exc)) from exc


def save_database(db: ServerDatabase | StolenVerifier, path: str | Path, mode: str = FULL) -> None:
    Path(path).write_text(dumps(database_to_dict(db, mode)), encoding="utf-8")


def load_database(path: str | Path) -> ServerDatabase | StolenVerifier:
    return database_from_dict(_read_json(path))


def load_stolen_verifier(path: str | Path) -> StolenVerifier:
    """Read either database variant and keep only what a leak would expose."""
    loaded = load_database(path)
    if isinstance(loaded, ServerDatabase):
        return StolenVerifier.from_database(loaded)
    return loaded


# -- party stores ------------------------------------------------------------------


def save_device_store(store: MobileDeviceStore, identity: str, group: str, path: str | Path) -> None:
    data = {
        "version": FORMAT_VERSION,
        "kind": "device-store",
        "group": group,
        "id": identity,
        "d": encode_scalar(store.device_nonce).hex(),
        "f": encode_scalar(store.fid_nonce).hex(),
        "k": store.user_key.hex(),
        "b": store.verifier.hex(),
        "drones": [{"id": name, "pid": pid.hex()} for name, pid in store.drone_directory],
    }
    Path(path).write_text(dumps(data), encoding="utf-8")


def load_device_store(path: str | Path) -> tuple[str, str, MobileDeviceStore]:
    """Returns (identity, group, store)."""
    data = _read_json(path)
    _check_header(data, ("device-store",))
    store = MobileDeviceStore(
        device_nonce=_scalar(data, "d"),
        fid_nonce=_scalar(data, "f"),
        user_key=_digest(data, "k"),
        verifier=_digest(data, "b"),
        drone_directory=tuple((_str(e, "id"), _digest(e, "pid")) for e in _field(data, "drones")),
    )
    return _str(data, "id"), _str(data, "group"), store


def save_drone_store(store: DroneStore, group: str, path: str | Path) -> None:
    data = {
        "version": FORMAT_VERSION,
        "kind": "drone-store",
        "group": group,
        "id": store.identity,
        "pid": store.pid.hex(),
        "key": store.drone_key.hex(),
    }
    Path(path).write_text(dumps(data), encoding="utf-8")


def load_drone_store(path: str | Path) -> tuple[str, DroneStore]:
    """Returns (group, store)."""
    data = _read_json(path)
    _check_header(data, ("drone-store",))
    return _str(data, "group"), DroneStore(_str(data, "id"), _digest(data, "pid"), _digest(data, "key"))


# -- transcripts -------------------------------------------------------------------


def message_to_dict(message: M1 | M2 | M3) -> dict:
    if isinstance(message, M1):
        return {
            "type": "M1",
            "t1": message.t1,
            "user_share": message.user_share.hex(),
            "a1": message.a1.hex(),
            "fid": message.fid.hex(),
            "pid": message.pid.hex(),
        }
    if isinstance(message, M2):
        return {
            "type": "M2",
            "a3": message.a3.hex(),
            "t2": message.t2,
            "user_share": message.user_share.hex(),
            "pid": message.pid.hex(),
            "masked_key": message.masked_key.hex(),
            "fid": message.fid.hex(),
        }
    if isinstance(message, M3):
        return {
            "type": "M3",
            "drone_share": message.drone_share.hex(),
            "t3": message.t3,
            "auth": message.auth.hex(),
        }
    raise TypeError(f"not a protocol message: {message!r}")


def message_from_dict(data: dict) -> M1 | M2 | M3:
    kind = data.get("type") if isinstance(data, dict) else None
    if kind == "M1":
        return M1(_int(data, "t1"), _hex(data, "user_share"), _digest(data, "a1"), _digest(data, "fid"), _digest(data, "pid"))
    if kind == "M2":
        return M2(
            _digest(data, "a3"),
            _int(data, "t2"),
            _hex(data, "user_share"),
            _digest(data, "pid"),
            _digest(data, "masked_key"),
            _digest(data, "fid"),
        )
    if kind == "M3":
        return M3(_hex(data, "drone_share"), _int(data, "t3"), _digest(data, "auth"))
    raise FormatError(f"unknown message type {kind!r}")


def entry_to_dict(entry: TranscriptEntry) -> dict:
    return {
        "direction": entry.direction,
        "sent_at": entry.sent_at,
        "message": message_to_dict(entry.message),
        "ground_truth": entry.session_label,
    }


def transcript_lines(transcript: Transcript) -> str:
    return "".join(
        json.dumps(entry_to_dict(e), sort_keys=True, separators=(",", ":")) + "\n" for e in transcript
    )


def export_transcript(transcript: Transcript, path: str | Path, append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        fh.write(transcript_lines(transcript))


def _parse_lines(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            if not isinstance(row, dict):
                raise FormatError(f"{path}:{lineno}: expected an object")
            rows.append(row)
    return rows


def import_transcript(path: str | Path) -> Transcript:
    transcript = Transcript()
    for row in _parse_lines(path):
        entry = TranscriptEntry(
            direction=_str(row, "direction"),
            message=message_from_dict(_field(row, "message")),
            sent_at=_int(row, "sent_at"),
            session_label=row.get("ground_truth", ""),
        )
        try:
            transcript.append(entry)
        except ValueError as exc:
            raise FormatError(str(exc)) from exc
    return transcript


def import_adversary_view(path: str | Path) -> tuple[PublicEntry, ...]:
    """Transcript as the eavesdropper holds it: ground-truth labels dropped."""
    return tuple(
        PublicEntry(_str(row, "direction"), message_from_dict(_field(row, "message")), _int(row, "sent_at"))
        for row in _parse_lines(path)
    )


# -- scenario reports ----------------------------------------------------------------


def report_to_dict(report: ScenarioReport) -> dict:
    return {
        "version": FORMAT_VERSION,
        "kind": "scenario-report",
        "scenario": report.scenario,
        "verdict": report.verdict,
        "success": report.success,
        "checks": dict(report.checks),
        "config": report.config.to_dict(),
        "details": report.details,
        "transcript": [entry_to_dict(e) for e in report.transcript],
    }


def save_report(report: ScenarioReport | dict, path: str | Path) -> None:
    data = report if isinstance(report, dict) else report_to_dict(report)
    Path(path).write_text(dumps(data), encoding="utf-8")


def load_report(path: str | Path) -> dict:
    data = _read_json(path)
    _check_header(data, ("scenario-report",))
    return data
