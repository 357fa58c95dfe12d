"""Hashing, XOR, field concatenation and the prime-order groups.

Two groups implement the same small interface:

  CurveGroup   NIST P-256, points in 33-byte SEC1 compressed form
  ToyGroup     order-11 subgroup of (Z/23Z)*, generator 2, one-byte elements

The toy group exists so that tests can brute-force discrete logs.  The curve
arithmetic below is plain Python and is NOT constant time.
"""

from __future__ import annotations

import hashlib
import random
import struct
from typing import Iterable

from .errors import EncodingError

DIGEST_SIZE = 32
SCALAR_SIZE = 32
TIMESTAMP_SIZE = 8


class Digest(bytes):
    """A 32-byte hash output.  Compares byte-wise like any bytes object."""

    def __new__(cls, data: bytes = b"\x00" * DIGEST_SIZE):
        if len(data) != DIGEST_SIZE:
            raise EncodingError(f"digest must be {DIGEST_SIZE} bytes, got {len(data)}")
        return super().__new__(cls, data)

    @classmethod
    def fromhex(cls, text: str) -> "Digest":
        try:
            raw = bytes.fromhex(text)
        except ValueError as exc:
            raise EncodingError(f"bad hex digest: {text!r}") from exc
        return cls(raw)

    def __repr__(self) -> str:
        return f"Digest({self.hex()[:16]}...)"


ZERO_DIGEST = Digest()


def hash_bytes(data: bytes) -> Digest:
    """SHA-256, the single h(.) used everywhere in the scheme."""
    return Digest(hashlib.sha256(data).digest())


def xor(a: bytes, b: bytes) -> Digest:
    if len(a) != DIGEST_SIZE or len(b) != DIGEST_SIZE:
        raise EncodingError(f"xor needs two {DIGEST_SIZE}-byte inputs, got {len(a)} and {len(b)}")
    return Digest((int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(DIGEST_SIZE, "big"))


def concat(fields: Iterable[bytes]) -> bytes:
    """Serialize fields as (4-byte big-endian length || bytes), in order.

    Length prefixing keeps the encoding injective even for variable-length
    identities, which bare concatenation would not.
    """
    out = bytearray()
    for field in fields:
        out += struct.pack(">I", len(field))
        out += field
    return bytes(out)


def hash_fields(*fields: bytes) -> Digest:
    return hash_bytes(concat(fields))


def encode_scalar(k: int) -> bytes:
    if not 0 <= k < 1 << (8 * SCALAR_SIZE):
        raise EncodingError(f"scalar out of encodable range: {k}")
    return k.to_bytes(SCALAR_SIZE, "big")


def decode_scalar(data: bytes) -> int:
    if len(data) != SCALAR_SIZE:
        raise EncodingError(f"scalar must be {SCALAR_SIZE} bytes, got {len(data)}")
    return int.from_bytes(data, "big")


def encode_timestamp(t: int) -> bytes:
    if not 0 <= t < 1 << 64:
        raise EncodingError(f"timestamp outside uint64: {t}")
    return t.to_bytes(TIMESTAMP_SIZE, "big")


def encode_identity(name: str) -> bytes:
    return name.encode("utf-8")


class Group:
    """Prime-order group with canonical byte encodings of its elements.

    Elements are passed around as their encodings (``bytes``); the identity
    element is never a valid encoding since no honest computation with a
    nonzero scalar can produce it.
    """

    name: str
    order: int
    element_size: int
    generator: bytes

    def is_element(self, data: bytes) -> bool:
        try:
            self._decode(data)
        except EncodingError:
            return False
        return True

    def check_scalar(self, k: int) -> int:
        if not 1 <= k < self.order:
            raise EncodingError(f"scalar {k} outside [1, {self.order - 1}] for group {self.name}")
        return k

    def random_scalar(self, rng: random.Random) -> int:
        """Uniform draw from [1, q-1]; zero is excluded."""
        return rng.randrange(1, self.order)

    def scalar_mult(self, k: int, element: bytes) -> bytes:
        self.check_scalar(k)
        return self._encode(self._mult(k, self._decode(element)))

    def base_mult(self, k: int) -> bytes:
        return self.scalar_mult(k, self.generator)

    def _decode(self, data: bytes):
        raise NotImplementedError

    def _encode(self, point) -> bytes:
        raise NotImplementedError

    def _mult(self, k: int, point):
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"


class ToyGroup(Group):
    """Subgroup of order 11 in (Z/23Z)*, the quadratic residues, generated by 2.

    5 itself has order 22 mod 23, so the subgroup generator is 5^2 = 2.
    """

    name = "toy"
    modulus = 23
    order = 11
    element_size = 1
    generator = bytes([2])

    def _decode(self, data: bytes) -> int:
        if len(data) != self.element_size:
            raise EncodingError(f"toy element must be 1 byte, got {len(data)}")
        x = data[0]
        if not 1 < x < self.modulus or pow(x, self.order, self.modulus) != 1:
            raise EncodingError(f"{x} is not a non-identity element of the order-11 subgroup")
        return x

    def _encode(self, x: int) -> bytes:
        return bytes([x])

    def _mult(self, k: int, x: int) -> int:
        return pow(x, k, self.modulus)


# NIST P-256 domain parameters (FIPS 186-4, D.1.2.3).
_P = 0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFF
_B = 0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B
_N = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
_GX = 0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296
_GY = 0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5

# Jacobian points are (X, Y, Z) with x = X/Z^2, y = Y/Z^3; Z == 0 is infinity.
_INF = (1, 1, 0)


def _jdouble(pt):
    X, Y, Z = pt
    if Z == 0 or Y == 0:
        return _INF
    p = _P
    delta = Z * Z % p
    gamma = Y * Y % p
    beta = X * gamma % p
    alpha = 3 * (X - delta) * (X + delta) % p
    X3 = (alpha * alpha - 8 * beta) % p
    Z3 = ((Y + Z) ** 2 - gamma - delta) % p
    Y3 = (alpha * (4 * beta - X3) - 8 * gamma * gamma) % p
    return (X3, Y3, Z3)


def _jadd(p1, p2):
    X1, Y1, Z1 = p1
    X2, Y2, Z2 = p2
    if Z1 == 0:
        return p2
    if Z2 == 0:
        return p1
    p = _P
    Z1Z1 = Z1 * Z1 % p
    Z2Z2 = Z2 * Z2 % p
    U1 = X1 * Z2Z2 % p
    U2 = X2 * Z1Z1 % p
    S1 = Y1 * Z2 * Z2Z2 % p
    S2 = Y2 * Z1 * Z1Z1 % p
    H = (U2 - U1) % p
    R = (S2 - S1) % p
    if H == 0:
        return _jdouble(p1) if R == 0 else _INF
    HH = H * H % p
    HHH = H * HH % p
    V = U1 * HH % p
    X3 = (R * R - HHH - 2 * V) % p
    Y3 = (R * (V - X3) - S1 * HHH) % p
    Z3 = Z1 * Z2 * H % p
    return (X3, Y3, Z3)


def _to_affine(pt):
    X, Y, Z = pt
    if Z == 0:
        return None
    zinv = pow(Z, -1, _P)
    zinv2 = zinv * zinv % _P
    return (X * zinv2 % _P, Y * zinv2 * zinv % _P)


class CurveGroup(Group):
    """NIST P-256 (cofactor 1), elements in SEC1 compressed form."""

    name = "curve"
    order = _N
    element_size = 33
    generator = bytes([2 + (_GY & 1)]) + _GX.to_bytes(32, "big")

    def __init__(self):
        self._base_table = None

    def _decode(self, data: bytes):
        if len(data) != self.element_size or data[0] not in (2, 3):
            raise EncodingError("curve element must be 33-byte SEC1 compressed point")
        x = int.from_bytes(data[1:], "big")
        if x >= _P:
            raise EncodingError("x coordinate not reduced mod p")
        rhs = (x * x * x - 3 * x + _B) % _P
        y = pow(rhs, (_P + 1) // 4, _P)
        if y * y % _P != rhs:
            raise EncodingError("x coordinate is not on P-256")
        if y % 2 != data[0] - 2:
            y = _P - y
        return (x, y)

    def _encode(self, affine) -> bytes:
        if affine is None:
            raise EncodingError("point at infinity has no encoding")
        x, y = affine
        return bytes([2 + (y & 1)]) + x.to_bytes(32, "big")

    def _mult(self, k: int, affine):
        if affine == (_GX, _GY):
            return self._fixed_base_mult(k)
        # 4-bit fixed window, table of 1..15 multiples
        base = (affine[0], affine[1], 1)
        table = [_INF, base]
        for _ in range(14):
            table.append(_jadd(table[-1], base))
        acc = _INF
        for shift in range(252, -1, -4):
            if acc[2]:
                acc = _jdouble(_jdouble(_jdouble(_jdouble(acc))))
            digit = (k >> shift) & 0xF
            if digit:
                acc = _jadd(acc, table[digit])
        return _to_affine(acc)

    def _fixed_base_mult(self, k: int):
        if self._base_table is None:
            self._base_table = self._build_base_table()
        acc = _INF
        for i, row in enumerate(self._base_table):
            digit = (k >> (4 * i)) & 0xF
            if digit:
                acc = _jadd(acc, row[digit])
        return _to_affine(acc)

    @staticmethod
    def _build_base_table():
        # rows[i][d] = d * 16^i * G, kept in Jacobian form with Z normalized to 1
        rows = []
        step = (_GX, _GY, 1)
        for _ in range(64):
            row = [_INF, step]
            for _ in range(14):
                row.append(_jadd(row[-1], step))
            row = [_INF] + [(*_to_affine(pt), 1) for pt in row[1:]]
            rows.append(row)
            nxt = step
            for _ in range(4):
                nxt = _jdouble(nxt)
            step = (*_to_affine(nxt), 1)
        return rows


_GROUPS: dict[str, Group] = {}


def get_group(name: str) -> Group:
    """Return the shared instance for ``"curve"`` or ``"toy"``."""
    if name not in ("curve", "toy"):
        raise ValueError(f"unknown group {name!r}; expected 'curve' or 'toy'")
    if name not in _GROUPS:
        _GROUPS[name] = CurveGroup() if name == "curve" else ToyGroup()
    return _GROUPS[name]


def random_scalar(group: Group, rng: random.Random) -> int:
    return group.random_scalar(rng)


def scalar_mult(group: Group, k: int, element: bytes) -> bytes:
    return group.scalar_mult(k, element)
