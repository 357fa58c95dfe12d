import sys
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from iod_lab import protocol  # noqa: E402
from iod_lab.crypto import get_group  # noqa: E402

DELTA_T = 5000


@dataclass
class Parties:
    group: object
    db: protocol.ServerDatabase
    device: protocol.MobileDeviceStore
    drone: protocol.DroneStore
    identity: str = "alice"
    password: str = "pw1"


def make_parties(group_name="toy", secret=9, d=7, f=3, q=5, a=4, identity="alice", password="pw1", drone_id="drone-1"):
    group = get_group(group_name)
    db = protocol.ServerDatabase(group_name, secret)
    drone, db = protocol.server_register_drone(db, drone_id, a)
    ppw = protocol.user_register_request(identity, password, d)
    reply, db = protocol.server_register_user(db, identity, ppw, f, q)
    device = protocol.provision_device(d, reply, [(drone.identity, drone.pid)])
    return Parties(group, db, device, drone, identity, password)


def run_session(p: Parties, z=2, g=6, t1=1000, hop=100, delta_t=DELTA_T):
    m1, state = protocol.user_login_start(p.group, p.device, p.identity, p.password, p.drone.pid, t1, z)
    m2 = protocol.server_process_m1(p.db, m1, t1 + hop, delta_t)
    m3, sk_drone = protocol.drone_process_m2(p.group, p.drone, m2, t1 + 2 * hop, delta_t, g)
    sk_user = protocol.user_process_m3(p.group, state, m3, t1 + 3 * hop, delta_t)
    return m1, m2, m3, sk_user, sk_drone


@pytest.fixture(params=["toy", "curve"])
def parties(request):
    return make_parties(request.param)


@pytest.fixture
def toy_parties():
    return make_parties("toy")


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the summary hook prints them all at the end."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number, name, passed, detail):
        line = f"criterion {number} {name}: {'PASS' if passed else 'FAIL'} ({detail})"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
