"""Core ledger primitives shared by both chains.

Everything that must be bit-identical across nodes (and across the
TypeScript client) lives here: the canonical byte encoding, digests,
signatures, record operations, transactions, block headers, and the
proof-of-work seal/validate pair.

Canonical encoding, byte for byte:

    string  -> UTF-8 bytes
    integer -> decimal ASCII (optional leading '-')
    bytes   -> lowercase hex ASCII
    map     -> for each key sorted by UTF-8 byte order:
               be32(len(key)) || key || be32(len(enc(val))) || enc(val)
    list    -> for each element: be32(len(enc(elem))) || enc(elem)

An empty map or list encodes to the empty byte string.  Domain structures
(record ops, transactions, block headers) encode as maps with the fixed
field names defined below, so two independent implementations agree on
every digest and signature.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)


class UnsupportedValue(TypeError):
    """Raised when a value is outside the canonical-encoding domain."""


class MalformedKey(ValueError):
    """Key material is structurally invalid (wrong length / not a key)."""


class MalformedSignature(ValueError):
    """Signature bytes are structurally invalid (wrong length)."""


class SearchExhausted(RuntimeError):
    """The proof-of-work nonce space was exhausted without a solution."""


class Hash256(bytes):
    """A 32-byte digest. Hex rendering is 64 lowercase chars, no prefix."""

    def __new__(cls, raw: bytes) -> "Hash256":
        if len(raw) != 32:
            raise ValueError(f"Hash256 requires exactly 32 bytes, got {len(raw)}")
        return super().__new__(cls, raw)

    @classmethod
    def from_hex(cls, text: str) -> "Hash256":
        return cls(bytes.fromhex(text))


class Hash128(bytes):
    """A 16-byte digest. Hex rendering is 32 lowercase chars."""

    def __new__(cls, raw: bytes) -> "Hash128":
        if len(raw) != 16:
            raise ValueError(f"Hash128 requires exactly 16 bytes, got {len(raw)}")
        return super().__new__(cls, raw)

    @classmethod
    def from_hex(cls, text: str) -> "Hash128":
        return cls(bytes.fromhex(text))


ZERO_HASH = Hash256(b"\x00" * 32)

#: Account identifiers are the SHA-256 of the account's raw public key.
AccountId = Hash256


def digest_sha256(data: bytes) -> Hash256:
    """FIPS 180-4 SHA-256."""
    return Hash256(hashlib.sha256(data).digest())


def digest_md5(data: bytes) -> Hash128:
    """RFC 1321 MD5 (consistency checksums only, not a security boundary)."""
    return Hash128(hashlib.md5(data).digest())


# --- canonical encoding -----------------------------------------------------

def _be32(n: int) -> bytes:
    return n.to_bytes(4, "big")


def _encode_value(value) -> bytes:
    if isinstance(value, bool):
        raise UnsupportedValue("booleans are not encodable; use 0/1 or a label")
    if isinstance(value, bytes):
        return value.hex().encode("ascii")
    if isinstance(value, str):
        return value.encode("utf-8")
    if isinstance(value, int):
        return str(value).encode("ascii")
    if isinstance(value, Mapping):
        return _encode_map(value)
    if isinstance(value, (list, tuple)):
        return b"".join(
            _be32(len(enc)) + enc for enc in (_encode_value(v) for v in value)
        )
    field_map = getattr(value, "field_map", None)
    if callable(field_map):
        return _encode_map(field_map())
    raise UnsupportedValue(f"cannot canonically encode {type(value).__name__}")


def _encode_map(mapping: Mapping) -> bytes:
    parts = []
    for key in sorted(mapping, key=lambda k: k.encode("utf-8")):
        if not isinstance(key, str):
            raise UnsupportedValue("field-map keys must be strings")
        name = key.encode("utf-8")
        value = _encode_value(mapping[key])
        parts.append(_be32(len(name)) + name + _be32(len(value)) + value)
    return b"".join(parts)


def canonical_encode(value) -> bytes:
    """Deterministic byte encoding of a field map or domain structure."""
    if isinstance(value, Mapping):
        return _encode_map(value)
    field_map = getattr(value, "field_map", None)
    if callable(field_map):
        return _encode_map(field_map())
    raise UnsupportedValue(f"cannot canonically encode {type(value).__name__}")


def parse_field_map(data: bytes) -> dict:
    """Parse an encoded map back to {name: value-bytes}. Schema-free.

    Value types are not self-describing; callers coerce per the structure's
    known schema (see the decode_* helpers below).
    """
    out: dict = {}
    i = 0
    n = len(data)
    while i < n:
        if i + 4 > n:
            raise ValueError("truncated field map (key length)")
        klen = int.from_bytes(data[i:i + 4], "big")
        i += 4
        if i + klen > n:
            raise ValueError("truncated field map (key)")
        key = data[i:i + klen].decode("utf-8")
        i += klen
        if i + 4 > n:
            raise ValueError("truncated field map (value length)")
        vlen = int.from_bytes(data[i:i + 4], "big")
        i += 4
        if i + vlen > n:
            raise ValueError("truncated field map (value)")
        out[key] = data[i:i + vlen]
        i += vlen
    return out


def parse_list(data: bytes) -> list:
    """Parse an encoded list back to a list of element byte strings."""
    out = []
    i = 0
    n = len(data)
    while i < n:
        if i + 4 > n:
            raise ValueError("truncated list (element length)")
        elen = int.from_bytes(data[i:i + 4], "big")
        i += 4
        if i + elen > n:
            raise ValueError("truncated list (element)")
        out.append(data[i:i + elen])
        i += elen
    return out


# --- keys and signatures ----------------------------------------------------

@dataclass(frozen=True)
class KeyPair:
    """Ed25519 keypair; public_key and secret_key are 32 raw bytes each."""

    public_key: bytes
    secret_key: bytes

    @classmethod
    def generate(cls, seed: Optional[bytes] = None) -> "KeyPair":
        if seed is None:
            priv = Ed25519PrivateKey.generate()
        else:
            if len(seed) != 32:
                raise MalformedKey("seed must be 32 bytes")
            priv = Ed25519PrivateKey.from_private_bytes(seed)
        from cryptography.hazmat.primitives import serialization

        pub = priv.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        sec = priv.private_bytes(
            serialization.Encoding.Raw,
            serialization.PrivateFormat.Raw,
            serialization.NoEncryption(),
        )
        return cls(public_key=pub, secret_key=sec)

    @property
    def account_id(self) -> AccountId:
        return account_id_for(self.public_key)


def account_id_for(public_key: bytes) -> AccountId:
    """AccountId is a deterministic digest of the public key bytes."""
    return digest_sha256(public_key)


def sign(key: KeyPair, msg: bytes) -> bytes:
    if len(key.secret_key) != 32:
        raise MalformedKey("secret key must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(key.secret_key).sign(msg)


def verify_signature(public_key: bytes, msg: bytes, signature: bytes) -> bool:
    if not isinstance(public_key, (bytes, bytearray)) or len(public_key) != 32:
        raise MalformedKey("public key must be 32 bytes")
    if not isinstance(signature, (bytes, bytearray)) or len(signature) != 64:
        raise MalformedSignature("signature must be 64 bytes")
    try:
        Ed25519PublicKey.from_public_bytes(bytes(public_key)).verify(
            bytes(signature), msg
        )
        return True
    except InvalidSignature:
        return False


# --- record operations ------------------------------------------------------

_IDENT_OK = frozenset(
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.:-"
)


def _check_ident(label: str, value: str) -> None:
    # Identifiers feed composite row keys joined with '|'; keep them clean.
    if not value or not set(value) <= _IDENT_OK:
        raise ValueError(f"{label} must be non-empty [A-Za-z0-9_.:-]+, got {value!r}")


@dataclass(frozen=True)
class RegisterStudent:
    student_id: str
    name: str
    program: str

    KIND = "RegisterStudent"

    def __post_init__(self):
        _check_ident("studentId", self.student_id)

    def field_map(self) -> dict:
        return {
            "kind": self.KIND,
            "studentId": self.student_id,
            "name": self.name,
            "program": self.program,
        }


@dataclass(frozen=True)
class RegisterCourse:
    course_id: str
    title: str
    term: str
    owner_staff_id: str

    KIND = "RegisterCourse"

    def __post_init__(self):
        _check_ident("courseId", self.course_id)
        _check_ident("term", self.term)
        _check_ident("ownerStaffId", self.owner_staff_id)

    def field_map(self) -> dict:
        return {
            "kind": self.KIND,
            "courseId": self.course_id,
            "title": self.title,
            "term": self.term,
            "ownerStaffId": self.owner_staff_id,
        }


@dataclass(frozen=True)
class UpdateProfile:
    student_id: str
    field: str
    value: str

    KIND = "UpdateProfile"

    def __post_init__(self):
        _check_ident("studentId", self.student_id)
        _check_ident("field", self.field)

    def field_map(self) -> dict:
        return {
            "kind": self.KIND,
            "studentId": self.student_id,
            "field": self.field,
            "value": self.value,
        }


@dataclass(frozen=True)
class UpsertGrade:
    student_id: str
    course_id: str
    term: str
    score: int
    letter: str

    KIND = "UpsertGrade"

    def __post_init__(self):
        _check_ident("studentId", self.student_id)
        _check_ident("courseId", self.course_id)
        _check_ident("term", self.term)
        if not isinstance(self.score, int) or isinstance(self.score, bool):
            raise ValueError("score must be an integer")
        if not 0 <= self.score <= 100:
            raise ValueError(f"score must be within 0-100, got {self.score}")

    def field_map(self) -> dict:
        return {
            "kind": self.KIND,
            "studentId": self.student_id,
            "courseId": self.course_id,
            "term": self.term,
            "score": self.score,
            "letter": self.letter,
        }


@dataclass(frozen=True)
class AttachFile:
    student_id: str
    course_id: str
    cid: Hash256
    media_label: str
    size_bytes: int

    KIND = "AttachFile"

    def __post_init__(self):
        _check_ident("studentId", self.student_id)
        _check_ident("courseId", self.course_id)
        if not isinstance(self.cid, Hash256):
            object.__setattr__(self, "cid", Hash256(self.cid))
        if self.size_bytes < 0:
            raise ValueError("sizeBytes must be non-negative")

    def field_map(self) -> dict:
        return {
            "kind": self.KIND,
            "studentId": self.student_id,
            "courseId": self.course_id,
            "cid": bytes(self.cid),
            "mediaLabel": self.media_label,
            "sizeBytes": self.size_bytes,
        }


@dataclass(frozen=True)
class AuditRepair:
    """Field-level repair. Values are strings; whole-row restores use the
    reserved field name "__row__" with the row as sorted JSON text (empty
    string deletes the row). Typed columns are coerced back by the schema
    at apply time."""

    table: str
    row_key: str
    field: str
    old_value: str
    new_value: str
    audit_id: str

    KIND = "AuditRepair"

    def __post_init__(self):
        _check_ident("table", self.table)
        _check_ident("auditId", self.audit_id)
        if not isinstance(self.old_value, str) or not isinstance(self.new_value, str):
            raise ValueError("repair values must be strings (rows as JSON text)")

    def field_map(self) -> dict:
        return {
            "kind": self.KIND,
            "table": self.table,
            "rowKey": self.row_key,
            "field": self.field,
            "oldValue": self.old_value,
            "newValue": self.new_value,
            "auditId": self.audit_id,
        }


RecordOp = Union[
    RegisterStudent, RegisterCourse, UpdateProfile, UpsertGrade, AttachFile, AuditRepair
]

OP_KINDS = (
    RegisterStudent.KIND,
    RegisterCourse.KIND,
    UpdateProfile.KIND,
    UpsertGrade.KIND,
    AttachFile.KIND,
    AuditRepair.KIND,
)


def op_to_wire(op: RecordOp) -> dict:
    """JSON-ready dict; field names mirror the canonical encoding exactly."""
    wire = dict(op.field_map())
    if "cid" in wire:
        wire["cid"] = wire["cid"].hex()
    return wire


def op_from_wire(data: Mapping) -> RecordOp:
    """Inverse of op_to_wire. Raises ValueError on unknown kinds/bad fields."""
    kind = data.get("kind")
    try:
        if kind == RegisterStudent.KIND:
            return RegisterStudent(data["studentId"], data["name"], data["program"])
        if kind == RegisterCourse.KIND:
            return RegisterCourse(
                data["courseId"], data["title"], data["term"], data["ownerStaffId"]
            )
        if kind == UpdateProfile.KIND:
            return UpdateProfile(data["studentId"], data["field"], data["value"])
        if kind == UpsertGrade.KIND:
            return UpsertGrade(
                data["studentId"],
                data["courseId"],
                data["term"],
                int(data["score"]),
                data["letter"],
            )
        if kind == AttachFile.KIND:
            return AttachFile(
                data["studentId"],
                data["courseId"],
                Hash256.from_hex(data["cid"]),
                data["mediaLabel"],
                int(data["sizeBytes"]),
            )
        if kind == AuditRepair.KIND:
            return AuditRepair(
                data["table"],
                data["rowKey"],
                data["field"],
                data["oldValue"],
                data["newValue"],
                data["auditId"],
            )
    except KeyError as exc:
        raise ValueError(f"record op missing field {exc}") from exc
    raise ValueError(f"unknown record op kind {kind!r}")


# --- transactions -----------------------------------------------------------

@dataclass(frozen=True)
class Transaction:
    """A signed record operation. The signature covers (sender, nonce, op,
    timestamp); the full encoding (and thus txRoot) includes the signature."""

    sender: AccountId
    nonce: int
    op: RecordOp
    timestamp: int
    signature: bytes

    def signing_payload_map(self) -> dict:
        return {
            "sender": bytes(self.sender),
            "nonce": self.nonce,
            "op": self.op.field_map(),
            "timestamp": self.timestamp,
        }

    def signing_payload(self) -> bytes:
        return canonical_encode(self.signing_payload_map())

    def field_map(self) -> dict:
        fm = self.signing_payload_map()
        fm["signature"] = self.signature
        return fm

    def tx_hash(self) -> Hash256:
        return digest_sha256(canonical_encode(self))


def make_transaction(key: KeyPair, nonce: int, op: RecordOp, timestamp: int) -> Transaction:
    """Build and sign a transaction with the given sender key."""
    unsigned = Transaction(
        sender=key.account_id, nonce=nonce, op=op, timestamp=timestamp, signature=b""
    )
    sig = sign(key, unsigned.signing_payload())
    return replace(unsigned, signature=sig)


def tx_to_wire(tx: Transaction) -> dict:
    return {
        "sender": tx.sender.hex(),
        "nonce": tx.nonce,
        "op": op_to_wire(tx.op),
        "timestamp": tx.timestamp,
        "signature": tx.signature.hex(),
    }


def tx_from_wire(data: Mapping) -> Transaction:
    try:
        return Transaction(
            sender=Hash256.from_hex(data["sender"]),
            nonce=int(data["nonce"]),
            op=op_from_wire(data["op"]),
            timestamp=int(data["timestamp"]),
            signature=bytes.fromhex(data["signature"]),
        )
    except KeyError as exc:
        raise ValueError(f"transaction missing field {exc}") from exc


# --- blocks -----------------------------------------------------------------

@dataclass(frozen=True)
class BlockHeader:
    height: int
    parent_hash: Hash256
    tx_root: Hash256
    timestamp: int
    difficulty_target: int
    pow_nonce: int
    miner_id: AccountId

    def field_map(self) -> dict:
        return {
            "height": self.height,
            "parentHash": bytes(self.parent_hash),
            "txRoot": bytes(self.tx_root),
            "timestamp": self.timestamp,
            "difficultyTarget": self.difficulty_target,
            "powNonce": self.pow_nonce,
            "minerId": bytes(self.miner_id),
        }


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    txs: tuple

    def field_map(self) -> dict:
        return {
            "header": self.header.field_map(),
            "txs": [tx.field_map() for tx in self.txs],
        }


def tx_root(txs: Sequence[Transaction]) -> Hash256:
    """Digest of the concatenated canonical tx encodings (flat, not Merkle)."""
    return digest_sha256(b"".join(canonical_encode(tx) for tx in txs))


def block_hash(header: BlockHeader) -> Hash256:
    return digest_sha256(canonical_encode(header))


#: Threshold form of the classic 0x400 low difficulty: target = 2^256 / 1024.
DEFAULT_DIFFICULTY = 0x400
DEFAULT_DIFFICULTY_TARGET = (1 << 256) // DEFAULT_DIFFICULTY

MAX_POW_NONCE = (1 << 64) - 1


@dataclass(frozen=True)
class ChainConfig:
    chain_id: int = 5421
    initial_difficulty_target: int = DEFAULT_DIFFICULTY_TARGET
    max_tx_per_block: int = 1024
    genesis_extra_data: bytes = b"\x54\x21"
    genesis_nonce: bytes = b"\xde\xad\xbe\xef\xde\xad\xbe\xef"
    max_peers: int = 7

    def __post_init__(self):
        if self.chain_id <= 0:
            raise ValueError("chainId must be positive")
        if self.initial_difficulty_target <= 0:
            raise ValueError("difficulty target must be positive")


def genesis_block(cfg: ChainConfig) -> Block:
    """The fixed height-0 block; identical across every node of a network."""
    miner = digest_sha256(
        b"genesis:" + str(cfg.chain_id).encode("ascii") + cfg.genesis_extra_data
    )
    header = BlockHeader(
        height=0,
        parent_hash=ZERO_HASH,
        tx_root=tx_root(()),
        timestamp=0,
        difficulty_target=cfg.initial_difficulty_target,
        pow_nonce=int.from_bytes(cfg.genesis_nonce, "big"),
        miner_id=miner,
    )
    return Block(header=header, txs=())


def pow_seal(header: BlockHeader, target: int) -> BlockHeader:
    """Search powNonce from 0 upward until block_hash(header) <= target."""
    if target <= 0:
        raise ValueError("target must be positive")
    nonce = 0
    while nonce <= MAX_POW_NONCE:
        candidate = replace(header, pow_nonce=nonce)
        if int.from_bytes(block_hash(candidate), "big") <= target:
            return candidate
        nonce += 1
    raise SearchExhausted("powNonce space exhausted")


def pow_satisfied(header: BlockHeader) -> bool:
    return int.from_bytes(block_hash(header), "big") <= header.difficulty_target


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str = ""

    def __str__(self):
        return f"{self.code}({self.detail})" if self.detail else self.code


PubkeyResolver = Callable[[AccountId], Optional[bytes]]


def validate_block(
    block: Block,
    parent: BlockHeader,
    cfg: ChainConfig,
    resolve_pubkey: Optional[PubkeyResolver] = None,
) -> list:
    """Structural validation against the known parent header.

    Returns every violation found (empty list means the block is acceptable).
    Stateful rules (nonce sequence, permissions) are enforced by the node on
    top of this.
    """
    violations = []
    header = block.header
    parent_digest = block_hash(parent)
    if header.parent_hash != parent_digest:
        violations.append(
            Violation("BadParentLink", f"expected {parent_digest.hex()}")
        )
    if header.height != parent.height + 1:
        violations.append(
            Violation("BadHeight", f"expected {parent.height + 1}, got {header.height}")
        )
    if header.tx_root != tx_root(block.txs):
        violations.append(Violation("BadTxRoot", "txRoot does not recompute"))
    if not pow_satisfied(header):
        violations.append(Violation("PowNotSatisfied", "block hash above target"))
    if header.timestamp < parent.timestamp:
        violations.append(
            Violation("BadTimestamp", "timestamp precedes parent's")
        )
    if len(block.txs) > cfg.max_tx_per_block:
        violations.append(
            Violation("TooManyTxs", f"{len(block.txs)} > {cfg.max_tx_per_block}")
        )
    if resolve_pubkey is not None:
        for i, tx in enumerate(block.txs):
            pub = resolve_pubkey(tx.sender)
            try:
                ok = pub is not None and verify_signature(pub, tx.signing_payload(), tx.signature)
            except (MalformedKey, MalformedSignature):
                ok = False
            if not ok:
                violations.append(Violation("BadTxSignature", str(i)))
    return violations


# --- wire decoding (gossip uses canonical encodings) -------------------------

def _decode_int(raw: bytes) -> int:
    return int(raw.decode("ascii"))


def decode_record_op(raw: bytes) -> RecordOp:
    fm = parse_field_map(raw)
    kind = fm["kind"].decode("utf-8")
    text = {k: v.decode("utf-8") for k, v in fm.items()}
    if kind == RegisterStudent.KIND:
        return RegisterStudent(text["studentId"], text["name"], text["program"])
    if kind == RegisterCourse.KIND:
        return RegisterCourse(
            text["courseId"], text["title"], text["term"], text["ownerStaffId"]
        )
    if kind == UpdateProfile.KIND:
        return UpdateProfile(text["studentId"], text["field"], text["value"])
    if kind == UpsertGrade.KIND:
        return UpsertGrade(
            text["studentId"],
            text["courseId"],
            text["term"],
            _decode_int(fm["score"]),
            text["letter"],
        )
    if kind == AttachFile.KIND:
        return AttachFile(
            text["studentId"],
            text["courseId"],
            Hash256.from_hex(text["cid"]),
            text["mediaLabel"],
            _decode_int(fm["sizeBytes"]),
        )
    if kind == AuditRepair.KIND:
        return AuditRepair(
            text["table"],
            text["rowKey"],
            text["field"],
            text["oldValue"],
            text["newValue"],
            text["auditId"],
        )
    raise ValueError(f"unknown record op kind {kind!r}")


def decode_transaction(raw: bytes) -> Transaction:
    fm = parse_field_map(raw)
    return Transaction(
        sender=Hash256.from_hex(fm["sender"].decode("ascii")),
        nonce=_decode_int(fm["nonce"]),
        op=decode_record_op(fm["op"]),
        timestamp=_decode_int(fm["timestamp"]),
        signature=bytes.fromhex(fm["signature"].decode("ascii")),
    )


def decode_header(raw: bytes) -> BlockHeader:
    fm = parse_field_map(raw)
    return BlockHeader(
        height=_decode_int(fm["height"]),
        parent_hash=Hash256.from_hex(fm["parentHash"].decode("ascii")),
        tx_root=Hash256.from_hex(fm["txRoot"].decode("ascii")),
        timestamp=_decode_int(fm["timestamp"]),
        difficulty_target=_decode_int(fm["difficultyTarget"]),
        pow_nonce=_decode_int(fm["powNonce"]),
        miner_id=Hash256.from_hex(fm["minerId"].decode("ascii")),
    )


def decode_block(raw: bytes) -> Block:
    fm = parse_field_map(raw)
    header = decode_header(fm["header"])
    txs = tuple(decode_transaction(item) for item in parse_list(fm["txs"]))
    return Block(header=header, txs=txs)
