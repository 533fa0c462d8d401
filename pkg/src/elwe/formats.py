"""Binary key (``ELWE``) and ciphertext (``ELWC``) files, little-endian.

Key record::

    "ELWE" | version u8 | type u8 | n u32 | q u32 | p u32 | sigma f64 | payload

``type`` is 0x01 public (A row-major, then b), 0x02 secret (s) or 0x03
seed-only (alpha u32, 0 meaning unset, then a u32-length-prefixed seed
string). Setting ``INT16_FLAG`` on a public record stores A in u16 cells.

Ciphertext record::

    "ELWC" | version u8 | n u32 | q u32 | count u32 | count * (n * c1 u32, c2 u32)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .engel import parse_seed, seed_to_str
from .errors import DomainError, FormatError, ParamsInvalid
from .lwe import (Ciphertext, KeyPair, LweParams, PublicKey, SecretKey, _frozen,
                  regenerate_keypair)

KEY_MAGIC = b"ELWE"
CT_MAGIC = b"ELWC"
VERSION = 1

PUBLIC = 0x01
SECRET = 0x02
SEED_ONLY = 0x03
INT16_FLAG = 0x10

_KEY_HEADER = struct.Struct("<4sBBIIId")
_CT_HEADER = struct.Struct("<4sBIII")


@dataclass(frozen=True)
class SeedRecord:
    params: LweParams
    seed: Fraction


def _pack_header(kind: int, params: LweParams) -> bytes:
    return _KEY_HEADER.pack(KEY_MAGIC, VERSION, kind, params.n, params.q, params.p,
                            float(params.sigma))


def encode_public(pk, int16: bool = False) -> bytes:
    params = pk.params
    kind = PUBLIC
    if int16:
        if params.p > 65536:
            raise FormatError(f"int16 mode needs p <= 65536, got p={params.p}")
        kind |= INT16_FLAG
        a_bytes = np.asarray(pk.A, dtype="<u2").tobytes()
    else:
        a_bytes = np.asarray(pk.A, dtype="<u4").tobytes()
    return _pack_header(kind, params) + a_bytes + np.asarray(pk.b, dtype="<u4").tobytes()


def encode_secret(sk) -> bytes:
    return _pack_header(SECRET, sk.params) + np.asarray(sk.s, dtype="<u4").tobytes()


def encode_seed(params: LweParams, seed) -> bytes:
    text = seed_to_str(parse_seed(seed)).encode()
    return (_pack_header(SEED_ONLY, params)
            + struct.pack("<II", params.alpha or 0, len(text)) + text)


def decode_key(data: bytes):
    """Return a PublicKey, SecretKey or SeedRecord."""
    if len(data) < _KEY_HEADER.size:
        raise FormatError("key file truncated")
    magic, version, kind, n, q, p, sigma = _KEY_HEADER.unpack_from(data)
    if magic != KEY_MAGIC:
        raise FormatError("not an ELWE key file")
    if version != VERSION:
        raise FormatError(f"unsupported key version {version}")
    body = data[_KEY_HEADER.size:]
    try:
        if kind == SEED_ONLY:
            if len(body) < 8:
                raise FormatError("seed record truncated")
            alpha, length = struct.unpack_from("<II", body)
            params = LweParams(n, q, p, sigma, alpha or None)
            if len(body) != 8 + length:
                raise FormatError("seed length mismatch")
            try:
                return SeedRecord(params, parse_seed(body[8:].decode()))
            except (UnicodeDecodeError, DomainError) as exc:
                raise FormatError(f"bad seed string: {exc}") from None
        params = LweParams(n, q, p, sigma)
    except ParamsInvalid as exc:
        raise FormatError(f"invalid parameters in key file: {exc}") from None
    if kind == SECRET:
        _expect(body, 4 * n)
        return SecretKey(params, _frozen(np.frombuffer(body, dtype="<u4")))
    if kind & ~INT16_FLAG == PUBLIC:
        cell = 2 if kind & INT16_FLAG else 4
        _expect(body, cell * n * n + 4 * n)
        a = np.frombuffer(body[:cell * n * n], dtype="<u2" if cell == 2 else "<u4")
        b = np.frombuffer(body[cell * n * n:], dtype="<u4")
        return PublicKey(params, _frozen(a).reshape(n, n), _frozen(b))
    raise FormatError(f"unknown key record type 0x{kind:02x}")


def _expect(body: bytes, size: int) -> None:
    if len(body) != size:
        raise FormatError(f"payload is {len(body)} bytes, expected {size}")


def encode_ciphertexts(cts: Sequence[Ciphertext], n: int, q: int) -> bytes:
    out = bytearray(_CT_HEADER.pack(CT_MAGIC, VERSION, n, q, len(cts)))
    for ct in cts:
        if len(ct.c1) != n:
            raise FormatError(f"ciphertext c1 has length {len(ct.c1)}, expected {n}")
        out += struct.pack(f"<{n + 1}I", *ct.c1, ct.c2)
    return bytes(out)


def decode_ciphertexts(data: bytes) -> tuple:
    """Return ``(n, q, [Ciphertext, ...])``."""
    if len(data) < _CT_HEADER.size:
        raise FormatError("ciphertext file truncated")
    magic, version, n, q, count = _CT_HEADER.unpack_from(data)
    if magic != CT_MAGIC:
        raise FormatError("not an ELWC ciphertext file")
    if version != VERSION:
        raise FormatError(f"unsupported ciphertext version {version}")
    body = data[_CT_HEADER.size:]
    if len(body) != 4 * (n + 1) * count:
        raise FormatError("ciphertext payload length mismatch")
    words = np.frombuffer(body, dtype="<u4").reshape(count, n + 1) if count else []
    cts = []
    for row in words:
        ct = Ciphertext(tuple(int(x) for x in row[:n]), int(row[n]))
        try:
            ct.validate(q)
        except DomainError as exc:
            raise FormatError(str(exc)) from None
        cts.append(ct)
    return n, q, cts


def ciphertext_size(n: int, bits: int) -> int:
    return _CT_HEADER.size + 4 * (n + 1) * bits


def payload_expansion(n: int, message_bytes: int) -> float:
    """Serialized ciphertext bytes per plaintext byte."""
    if message_bytes < 1:
        raise FormatError("message must be non-empty")
    return ciphertext_size(n, 8 * message_bytes) / message_bytes


def keypair_from_record(record: SeedRecord) -> KeyPair:
    return regenerate_keypair(record.params, record.seed)


def load_public(data: bytes) -> PublicKey:
    rec = decode_key(data)
    if isinstance(rec, SeedRecord):
        return keypair_from_record(rec).public
    if not isinstance(rec, PublicKey):
        raise FormatError("expected a public key record")
    return rec


def load_secret(data: bytes) -> SecretKey:
    rec = decode_key(data)
    if isinstance(rec, SeedRecord):
        return keypair_from_record(rec).secret
    if not isinstance(rec, SecretKey):
        raise FormatError("expected a secret key record")
    return rec
