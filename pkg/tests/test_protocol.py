import random
from dataclasses import replace

import pytest

import oracle
from conftest import DELTA_T, make_parties, run_session
from iod_lab import protocol
from iod_lab.crypto import ZERO_DIGEST, Digest, get_group, hash_bytes, xor
from iod_lab.errors import (
    AuthFailure,
    DuplicateIdentity,
    NotForMe,
    SessionRejected,
    StaleTimestamp,
    UnknownDrone,
    UnknownUser,
)

# Frozen from tests/oracle.py: ID=alice, PW=pw1, d=7, f=3, q=5, s=9; drone-1 with a=4.
PPW_ALICE = "a200461a3c91ba9b698ae38aa664ba644f73e9996f919ec53e6cef0891cb598e"
FID_ALICE = "c1d2cbcdee77c33618455fdac6e09823a050b8a4f486377a61f72056648e9a43"
K_ALICE = "b74b932511178208fbceab9c09e46589077859a80babcb2e7a352e749c15d3bf"
B_ALICE = "fad2e7e629a4ccd66a528f85e074701dbfbd44ceb4ad3d426baab8345a2d8f9d"
PID_DRONE1 = "eb8792d80ba2b20357c66fd021b277daffedf7f912856f2fe164407729de5776"
KEY_DRONE1 = "5bea04949a04dc0b474c0a0c351fbd4e7526c17f6f6274a260a3b9fdc00c9c1f"


def flip(digest, position):
    raw = bytearray(digest)
    raw[position] ^= 0x80
    return Digest(bytes(raw))


class TestRegistration:
    def test_ppw_fixed_vector(self):
        assert protocol.user_register_request("alice", "pw1", 7).hex() == PPW_ALICE
        assert PPW_ALICE == oracle.ppw("alice", "pw1", 7).hex()

    def test_ppw_deterministic(self):
        assert protocol.user_register_request("bob", "x", 11) == protocol.user_register_request("bob", "x", 11)

    def test_ppw_identity_equals_password(self):
        assert protocol.user_register_request("same", "same", 3) == hash_bytes(ZERO_DIGEST)

    def test_user_registration_fixed_vector(self, toy_parties):
        record = toy_parties.db.user_by_identity("alice")
        assert record.fid.hex() == FID_ALICE
        assert record.user_key.hex() == K_ALICE
        assert toy_parties.device.verifier.hex() == B_ALICE
        assert toy_parties.device.fid_nonce == 3
        assert (FID_ALICE, K_ALICE, B_ALICE) == tuple(x.hex() for x in oracle.register_user("alice", "pw1", 7, 3, 5, 9))

    def test_drone_registration_fixed_vector(self, toy_parties):
        assert toy_parties.drone.pid.hex() == PID_DRONE1
        assert toy_parties.drone.drone_key.hex() == KEY_DRONE1
        assert (PID_DRONE1, KEY_DRONE1) == tuple(x.hex() for x in oracle.register_drone("drone-1", 4, 9))

    def test_distinct_fid_nonces_give_distinct_pseudonyms(self):
        db = protocol.ServerDatabase("toy", 9)
        ppw = protocol.user_register_request("u1", "p", 2)
        _, db = protocol.server_register_user(db, "u1", ppw, 3, 5)
        ppw2 = protocol.user_register_request("u2", "p", 2)
        _, db = protocol.server_register_user(db, "u2", ppw2, 4, 5)
        fids = {r.fid for r in db.users.values()}
        assert len(fids) == 2

    def test_duplicate_user(self, toy_parties):
        ppw = protocol.user_register_request("alice", "other", 2)
        with pytest.raises(DuplicateIdentity):
            protocol.server_register_user(toy_parties.db, "alice", ppw, 8, 8)

    def test_duplicate_drone(self, toy_parties):
        with pytest.raises(DuplicateIdentity):
            protocol.server_register_drone(toy_parties.db, "drone-1", 9)

    def test_distinct_drone_nonces_give_distinct_pids(self):
        pids = {
            protocol.server_register_drone(protocol.ServerDatabase("toy", 9), "d", a)[0].pid for a in range(1, 11)
        }
        assert len(pids) == 10

    def test_registration_returns_new_database(self):
        db = protocol.ServerDatabase("toy", 9)
        _, db2 = protocol.server_register_drone(db, "d", 1)
        assert not db.drones and len(db2.drones) == 1

    def test_server_keeps_only_verifier_columns(self, toy_parties):
        (record,) = toy_parties.db.users.values()
        assert set(vars(record)) == {"identity", "fid", "user_key"}

    def test_provision_pass_through(self, toy_parties):
        device = toy_parties.device
        assert (device.device_nonce, device.fid_nonce) == (7, 3)
        assert device.user_key.hex() == K_ALICE
        assert device.drone_directory == (("drone-1", toy_parties.drone.pid),)

    def test_provision_checks_credentials(self):
        ppw = protocol.user_register_request("carol", "pw", 5)
        reply, _ = protocol.server_register_user(protocol.ServerDatabase("toy", 9), "carol", ppw, 3, 5)
        protocol.provision_device(5, reply, identity="carol", password="pw")
        with pytest.raises(SessionRejected):
            protocol.provision_device(5, reply, identity="carol", password="wrong")


class TestLogin:
    def test_wrong_password_rejected(self, parties):
        with pytest.raises(SessionRejected):
            protocol.user_login_start(parties.group, parties.device, "alice", "nope", parties.drone.pid, 0, 2)

    def test_wrong_identity_rejected(self, parties):
        with pytest.raises(SessionRejected):
            protocol.user_login_start(parties.group, parties.device, "mallory", "pw1", parties.drone.pid, 0, 2)

    def test_a1_matches_reference(self, toy_parties):
        m1, _ = protocol.user_login_start(toy_parties.group, toy_parties.device, "alice", "pw1", toy_parties.drone.pid, 1234, 2)
        assert m1.a1 == oracle.a1(1234, bytes.fromhex(FID_ALICE), bytes.fromhex(K_ALICE))
        assert m1.user_share == bytes([pow(oracle.TOY_G, 2, oracle.TOY_P)])

    def test_fid_fixed_across_logins(self, parties):
        m1a, _ = protocol.user_login_start(parties.group, parties.device, "alice", "pw1", parties.drone.pid, 10, 2)
        m1b, _ = protocol.user_login_start(parties.group, parties.device, "alice", "pw1", parties.drone.pid, 99999, 5)
        assert m1a.fid == m1b.fid
        assert m1a.a1 != m1b.a1

    def test_empty_directory(self, toy_parties):
        device = replace(toy_parties.device, drone_directory=())
        with pytest.raises(UnknownDrone):
            protocol.user_login_start(toy_parties.group, device, "alice", "pw1", toy_parties.drone.pid, 0, 2)

    def test_round_trip_after_provisioning(self, parties):
        m1, state = protocol.user_login_start(parties.group, parties.device, "alice", "pw1", parties.drone.pid, 0, 2)
        assert state.drone_identity == "drone-1" and not state.consumed


class TestServerStep:
    def test_stale(self, parties):
        m1, _ = protocol.user_login_start(parties.group, parties.device, "alice", "pw1", parties.drone.pid, 0, 2)
        with pytest.raises(StaleTimestamp):
            protocol.server_process_m1(parties.db, m1, DELTA_T + 1, DELTA_T)
        protocol.server_process_m1(parties.db, m1, DELTA_T, DELTA_T)

    def test_every_a1_byte_flip_rejected(self, toy_parties):
        m1, _ = protocol.user_login_start(toy_parties.group, toy_parties.device, "alice", "pw1", toy_parties.drone.pid, 0, 2)
        for i in range(32):
            with pytest.raises(AuthFailure):
                protocol.server_process_m1(toy_parties.db, replace(m1, a1=flip(m1.a1, i)), 10, DELTA_T)

    def test_unknown_user_and_drone(self, toy_parties):
        m1, _ = protocol.user_login_start(toy_parties.group, toy_parties.device, "alice", "pw1", toy_parties.drone.pid, 0, 2)
        with pytest.raises(UnknownUser):
            protocol.server_process_m1(toy_parties.db, replace(m1, fid=flip(m1.fid, 0)), 10, DELTA_T)
        with pytest.raises(UnknownDrone):
            protocol.server_process_m1(toy_parties.db, replace(m1, pid=flip(m1.pid, 0)), 10, DELTA_T)

    def test_masked_key_unmasks_to_user_key(self, parties):
        _, m2, *_ = run_session(parties)
        assert xor(m2.masked_key, parties.drone.drone_key) == parties.db.user_by_identity("alice").user_key

    def test_m2_reference_values(self, toy_parties):
        _, m2, *_ = run_session(toy_parties)
        k, key = bytes.fromhex(K_ALICE), bytes.fromhex(KEY_DRONE1)
        assert m2.a3 == oracle.a3(bytes.fromhex(PID_DRONE1), key, "drone-1", k)
        assert m2.masked_key == bytes(x ^ y for x, y in zip(k, key))

    def test_replay_inside_window_is_accepted(self, parties):
        # the scheme keeps no replay cache; only the window protects it
        m1, _ = protocol.user_login_start(parties.group, parties.device, "alice", "pw1", parties.drone.pid, 0, 2)
        first = protocol.server_process_m1(parties.db, m1, 100, DELTA_T)
        again = protocol.server_process_m1(parties.db, m1, DELTA_T, DELTA_T)
        assert first.a3 == again.a3 and again.t2 == DELTA_T


class TestDroneStep:
    def _m2(self, p):
        m1, _ = protocol.user_login_start(p.group, p.device, "alice", "pw1", p.drone.pid, 0, 2)
        return protocol.server_process_m1(p.db, m1, 100, DELTA_T)

    def test_recovers_user_key(self, toy_parties):
        m2 = self._m2(toy_parties)
        assert xor(m2.masked_key, toy_parties.drone.drone_key).hex() == K_ALICE

    def test_every_masked_key_and_a3_flip_rejected(self, toy_parties):
        m2 = self._m2(toy_parties)
        for i in range(32):
            for field in ("masked_key", "a3"):
                bad = replace(m2, **{field: flip(getattr(m2, field), i)})
                with pytest.raises(AuthFailure):
                    protocol.drone_process_m2(toy_parties.group, toy_parties.drone, bad, 200, DELTA_T, 6)

    def test_not_for_me(self, toy_parties):
        m2 = self._m2(toy_parties)
        with pytest.raises(NotForMe):
            protocol.drone_process_m2(toy_parties.group, toy_parties.drone, replace(m2, pid=flip(m2.pid, 3)), 200, DELTA_T, 6)

    def test_stale(self, toy_parties):
        m2 = self._m2(toy_parties)
        with pytest.raises(StaleTimestamp):
            protocol.drone_process_m2(toy_parties.group, toy_parties.drone, m2, 100 + DELTA_T + 1, DELTA_T, 6)

    def test_session_key_matches_brute_force_oracle(self, toy_parties):
        m1, m2, m3, sk_user, sk_drone = run_session(toy_parties, z=3, g=7)
        expected = oracle.toy_session_key("drone-1", m2.user_share, m3.drone_share, bytes.fromhex(K_ALICE), bytes.fromhex(FID_ALICE))
        assert sk_drone == expected
        assert m3.auth == oracle.auth(expected, bytes.fromhex(FID_ALICE), m3.t3, bytes.fromhex(K_ALICE))


class TestUserFinish:
    def test_keys_agree(self, parties):
        *_, sk_user, sk_drone = run_session(parties)
        assert sk_user == sk_drone

    def test_random_drone_share_rejected(self, parties):
        m1, state = protocol.user_login_start(parties.group, parties.device, "alice", "pw1", parties.drone.pid, 0, 2)
        m2 = protocol.server_process_m1(parties.db, m1, 100, DELTA_T)
        m3, _ = protocol.drone_process_m2(parties.group, parties.drone, m2, 200, DELTA_T, 6)
        rng = random.Random(42)
        rejected = 0
        for _ in range(100):
            other = parties.group.base_mult(parties.group.random_scalar(rng))
            if other == m3.drone_share:
                continue
            fresh = replace(state, consumed=False)
            with pytest.raises(AuthFailure):
                protocol.user_process_m3(parties.group, fresh, replace(m3, drone_share=other), 300, DELTA_T)
            rejected += 1
        assert rejected >= 80

    def test_every_auth_byte_flip_rejected(self, toy_parties):
        m1, state = protocol.user_login_start(toy_parties.group, toy_parties.device, "alice", "pw1", toy_parties.drone.pid, 0, 2)
        m2 = protocol.server_process_m1(toy_parties.db, m1, 100, DELTA_T)
        m3, _ = protocol.drone_process_m2(toy_parties.group, toy_parties.drone, m2, 200, DELTA_T, 6)
        for i in range(32):
            with pytest.raises(AuthFailure):
                protocol.user_process_m3(toy_parties.group, replace(state), replace(m3, auth=flip(m3.auth, i)), 300, DELTA_T)

    def test_stale(self, toy_parties):
        m1, state = protocol.user_login_start(toy_parties.group, toy_parties.device, "alice", "pw1", toy_parties.drone.pid, 0, 2)
        m2 = protocol.server_process_m1(toy_parties.db, m1, 100, DELTA_T)
        m3, _ = protocol.drone_process_m2(toy_parties.group, toy_parties.drone, m2, 200, DELTA_T, 6)
        with pytest.raises(StaleTimestamp):
            protocol.user_process_m3(toy_parties.group, state, m3, 200 + DELTA_T + 1, DELTA_T)

    def test_state_single_use(self, toy_parties):
        m1, state = protocol.user_login_start(toy_parties.group, toy_parties.device, "alice", "pw1", toy_parties.drone.pid, 0, 2)
        m2 = protocol.server_process_m1(toy_parties.db, m1, 100, DELTA_T)
        m3, _ = protocol.drone_process_m2(toy_parties.group, toy_parties.drone, m2, 200, DELTA_T, 6)
        protocol.user_process_m3(toy_parties.group, state, m3, 300, DELTA_T)
        with pytest.raises(SessionRejected):
            protocol.user_process_m3(toy_parties.group, state, m3, 300, DELTA_T)


class TestInvariants:
    @pytest.mark.parametrize("group_name", ["toy", "curve"])
    def test_key_agreement_randomized(self, group_name):
        rng = random.Random(group_name)
        group = get_group(group_name)
        runs = 600 if group_name == "toy" else 150
        for n in range(runs):
            p = make_parties(
                group_name,
                secret=group.random_scalar(rng),
                d=group.random_scalar(rng),
                f=group.random_scalar(rng),
                q=group.random_scalar(rng),
                a=group.random_scalar(rng),
                identity=f"user{rng.randrange(10**6)}",
                password=f"{rng.getrandbits(40):x}",
                drone_id=f"uav-{n}",
            )
            t1 = rng.randrange(1 << 40)
            _, m2, _, sk_user, sk_drone = run_session(
                p, z=group.random_scalar(rng), g=group.random_scalar(rng), t1=t1, hop=rng.randrange(DELTA_T + 1)
            )
            assert sk_user == sk_drone
            assert xor(m2.masked_key, p.drone.drone_key) == p.db.user_by_identity(p.identity).user_key

    def test_every_digest_byte_in_flight_breaks_the_session(self, toy_parties):
        """Each single-byte flip of a digest field makes some later check fail."""
        p = toy_parties
        cases = 0
        for msg_index, fields in ((0, ("a1", "fid", "pid")), (1, ("a3", "pid", "masked_key", "fid")), (2, ("auth",))):
            for field in fields:
                for i in range(32):
                    m1, state = protocol.user_login_start(p.group, p.device, "alice", "pw1", p.drone.pid, 0, 2)
                    with pytest.raises((AuthFailure, UnknownUser, UnknownDrone, NotForMe)):
                        if msg_index == 0:
                            m1 = replace(m1, **{field: flip(getattr(m1, field), i)})
                        m2 = protocol.server_process_m1(p.db, m1, 100, DELTA_T)
                        if msg_index == 1:
                            m2 = replace(m2, **{field: flip(getattr(m2, field), i)})
                        m3, _ = protocol.drone_process_m2(p.group, p.drone, m2, 200, DELTA_T, 6)
                        if msg_index == 2:
                            m3 = replace(m3, **{field: flip(getattr(m3, field), i)})
                        protocol.user_process_m3(p.group, state, m3, 300, DELTA_T)
                    cases += 1
        assert cases == 8 * 32

    def test_fid_no_collisions_across_many_users(self):
        db = protocol.ServerDatabase("curve", 12345)
        rng = random.Random(99)
        group = get_group("curve")
        for n in range(10_000):
            ppw = protocol.user_register_request(f"u{n}", "pw", 1)
            _, db = protocol.server_register_user(db, f"u{n}", ppw, group.random_scalar(rng), group.random_scalar(rng))
        assert len({r.fid for r in db.users.values()}) == 10_000

    def test_freshness_boundary(self):
        protocol.check_fresh(100, 100 + DELTA_T, DELTA_T)
        protocol.check_fresh(100 + DELTA_T, 100, DELTA_T)
        with pytest.raises(StaleTimestamp):
            protocol.check_fresh(100, 101 + DELTA_T, DELTA_T)
