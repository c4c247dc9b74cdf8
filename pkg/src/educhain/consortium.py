"""Shared consortium ordering log.

A single logical sequencer (the messaging-backbone analog) assigns dense
sequence numbers to signed entries and delivers them to every member in
order. Members run deterministic validation over the common log: commitment
uniqueness, transfer channel pairing, signature and continuity checks.
Entries a member flags are excluded from its accepted view but still consume
their sequence number, so honest members always hold byte-equal accepted
logs.

Transfer payloads are sealed to the requesting school with X25519 + HKDF +
AES-GCM so the log itself never exposes a student's transcript.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Union

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .ledger import (
    Hash256,
    KeyPair,
    canonical_encode,
    digest_sha256,
    parse_field_map,
    parse_list,
    sign,
    verify_signature,
)

CREDENTIAL_TYPES = ("Transcript", "Diploma")

_SEAL_INFO = b"educhain-transfer-v1"


class SealError(Exception):
    pass


# --- membership ---------------------------------------------------------------

@dataclass(frozen=True)
class MemberId:
    """Organization name plus the account of its consortium signing key."""

    name: str
    account: Hash256

    def field_map(self) -> dict:
        return {"name": self.name, "account": bytes(self.account)}


@dataclass(frozen=True)
class MemberInfo:
    name: str
    ed_pub: bytes        # Ed25519, signs consortium entries
    x_pub: bytes         # X25519, receives sealed transfer payloads

    @property
    def member_id(self) -> MemberId:
        return MemberId(name=self.name, account=digest_sha256(self.ed_pub))


class ConsortiumDirectory:
    """Membership list, distributed to the ordering service and all members."""

    def __init__(self):
        self._members: dict = {}

    def register(self, name: str, ed_pub: bytes, x_pub: bytes) -> MemberId:
        info = MemberInfo(name=name, ed_pub=ed_pub, x_pub=x_pub)
        self._members[name] = info
        return info.member_id

    def get(self, name: str) -> Optional[MemberInfo]:
        return self._members.get(name)

    def names(self) -> list:
        return sorted(self._members)

    def __contains__(self, name):
        return name in self._members


def generate_x25519(seed: Optional[bytes] = None) -> tuple:
    """(private_bytes, public_bytes) transfer keypair."""
    if seed is None:
        priv = X25519PrivateKey.generate()
    else:
        if len(seed) != 32:
            raise ValueError("seed must be 32 bytes")
        priv = X25519PrivateKey.from_private_bytes(seed)
    pub = priv.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    sec = priv.private_bytes(
        serialization.Encoding.Raw,
        serialization.PrivateFormat.Raw,
        serialization.NoEncryption(),
    )
    return sec, pub


# --- payload types ------------------------------------------------------------

@dataclass(frozen=True)
class CommitmentRecord:
    subject_id: str
    credential_type: str
    period: str
    digest: Hash256
    issuer: MemberId

    def __post_init__(self):
        if self.credential_type not in CREDENTIAL_TYPES:
            raise ValueError(f"bad credentialType {self.credential_type!r}")

    def key(self) -> tuple:
        return (self.subject_id, self.credential_type, self.period, self.issuer.name)

    def field_map(self) -> dict:
        return {
            "subjectId": self.subject_id,
            "credentialType": self.credential_type,
            "period": self.period,
            "digest": bytes(self.digest),
            "issuer": self.issuer.field_map(),
        }


@dataclass(frozen=True)
class CommitmentBatch:
    KIND = "CommitmentBatch"

    period: str
    records: tuple

    def field_map(self) -> dict:
        return {
            "kind": self.KIND,
            "period": self.period,
            "records": [r.field_map() for r in self.records],
        }


@dataclass(frozen=True)
class TransferRequest:
    KIND = "TransferRequest"

    channel_id: Hash256
    host_school: MemberId
    home_school: MemberId
    subject_id: str
    course_scope: tuple
    requester_sig: bytes

    def signing_map(self) -> dict:
        return {
            "channelId": bytes(self.channel_id),
            "hostSchool": self.host_school.field_map(),
            "homeSchool": self.home_school.field_map(),
            "subjectId": self.subject_id,
            "courseScope": list(self.course_scope),
        }

    def field_map(self) -> dict:
        fm = self.signing_map()
        fm["kind"] = self.KIND
        fm["requesterSig"] = self.requester_sig
        return fm


@dataclass(frozen=True)
class TransferResponse:
    KIND = "TransferResponse"

    channel_id: Hash256
    payload_digest: Hash256
    payload: bytes           # sealed to the requester
    responder_sig: bytes

    def signing_map(self) -> dict:
        return {
            "channelId": bytes(self.channel_id),
            "payloadDigest": bytes(self.payload_digest),
            "payload": self.payload,
        }

    def field_map(self) -> dict:
        fm = self.signing_map()
        fm["kind"] = self.KIND
        fm["responderSig"] = self.responder_sig
        return fm


Payload = Union[CommitmentBatch, TransferRequest, TransferResponse]


@dataclass(frozen=True)
class ConsortiumEntry:
    seq: int
    submitter: MemberId
    payload: Payload
    submitter_sig: bytes
    ordering_sig: bytes

    def field_map(self) -> dict:
        return {
            "seq": self.seq,
            "submitter": self.submitter.field_map(),
            "payload": self.payload.field_map(),
            "submitterSig": self.submitter_sig,
            "orderingSig": self.ordering_sig,
        }


@dataclass(frozen=True)
class PendingEntry:
    """Entry as submitted: no seq, no ordering signature yet."""

    submitter: MemberId
    payload: Payload
    submitter_sig: bytes


def submit_signing_bytes(submitter: MemberId, payload: Payload) -> bytes:
    return canonical_encode(
        {"submitter": submitter.field_map(), "payload": payload.field_map()}
    )


def ordering_signing_bytes(seq: int, pending: PendingEntry) -> bytes:
    return canonical_encode(
        {
            "seq": seq,
            "submitter": pending.submitter.field_map(),
            "payload": pending.payload.field_map(),
            "submitterSig": pending.submitter_sig,
        }
    )


def make_pending_entry(key: KeyPair, submitter: MemberId, payload: Payload) -> PendingEntry:
    return PendingEntry(
        submitter=submitter,
        payload=payload,
        submitter_sig=sign(key, submit_signing_bytes(submitter, payload)),
    )


def derive_channel_id(
    host: MemberId, home: MemberId, subject_id: str, course_scope: Iterable[str], opened_at: int
) -> Hash256:
    return digest_sha256(
        canonical_encode(
            {
                "hostSchool": host.field_map(),
                "homeSchool": home.field_map(),
                "subjectId": subject_id,
                "courseScope": list(course_scope),
                "openedAt": opened_at,
            }
        )
    )


def make_transfer_request(
    key: KeyPair,
    host: MemberId,
    home: MemberId,
    subject_id: str,
    course_scope: Iterable[str],
    opened_at: int,
) -> TransferRequest:
    scope = tuple(course_scope)
    channel_id = derive_channel_id(host, home, subject_id, scope, opened_at)
    unsigned = TransferRequest(
        channel_id=channel_id,
        host_school=host,
        home_school=home,
        subject_id=subject_id,
        course_scope=scope,
        requester_sig=b"",
    )
    sig = sign(key, canonical_encode(unsigned.signing_map()))
    return TransferRequest(channel_id, host, home, subject_id, scope, sig)


def make_transfer_response(
    key: KeyPair, channel_id: Hash256, payload_digest: Hash256, sealed_payload: bytes
) -> TransferResponse:
    unsigned = TransferResponse(
        channel_id=channel_id,
        payload_digest=payload_digest,
        payload=sealed_payload,
        responder_sig=b"",
    )
    sig = sign(key, canonical_encode(unsigned.signing_map()))
    return TransferResponse(channel_id, payload_digest, sealed_payload, sig)


# --- sealed payloads ----------------------------------------------------------

def seal_to(recipient_x_pub: bytes, plaintext: bytes, rng: Optional[Callable[[int], bytes]] = None) -> bytes:
    """Hybrid encryption: ephemeral X25519 exchange, HKDF-SHA256, AES-GCM.
    Layout: 32-byte ephemeral pubkey || 12-byte nonce || ciphertext."""
    rng = rng or os.urandom
    eph_priv = X25519PrivateKey.from_private_bytes(rng(32))
    eph_pub = eph_priv.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    shared = eph_priv.exchange(X25519PublicKey.from_public_bytes(recipient_x_pub))
    key = HKDF(
        algorithm=hashes.SHA256(), length=32, salt=None, info=_SEAL_INFO
    ).derive(shared + eph_pub + recipient_x_pub)
    nonce = rng(12)
    return eph_pub + nonce + AESGCM(key).encrypt(nonce, plaintext, None)


def open_sealed(recipient_x_priv: bytes, blob: bytes) -> bytes:
    if len(blob) < 32 + 12 + 16:
        raise SealError("sealed blob too short")
    eph_pub, nonce, ct = blob[:32], blob[32:44], blob[44:]
    priv = X25519PrivateKey.from_private_bytes(recipient_x_priv)
    my_pub = priv.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
    key = HKDF(
        algorithm=hashes.SHA256(), length=32, salt=None, info=_SEAL_INFO
    ).derive(shared + eph_pub + my_pub)
    try:
        return AESGCM(key).decrypt(nonce, ct, None)
    except InvalidTag as exc:
        raise SealError("decryption failed") from exc


# --- credential field maps ----------------------------------------------------

def transcript_credential_fields(subject_id: str, student_name: str, period: str, rows: Iterable[dict]) -> dict:
    """The exact map whose canonical encoding is committed and transferred.
    Rows carry (courseId, term, score, letter), sorted by (courseId, term)."""
    norm = sorted(
        (
            {
                "courseId": r["courseId"],
                "term": r["term"],
                "score": int(r["score"]),
                "letter": r["letter"],
            }
            for r in rows
        ),
        key=lambda r: (r["courseId"], r["term"]),
    )
    return {
        "credentialType": "Transcript",
        "subjectId": subject_id,
        "studentName": student_name,
        "period": period,
        "rows": norm,
    }


def diploma_credential_fields(subject_id: str, student_name: str, period: str, degree: str) -> dict:
    return {
        "credentialType": "Diploma",
        "subjectId": subject_id,
        "studentName": student_name,
        "period": period,
        "degree": degree,
    }


def credential_digest(fields: dict) -> Hash256:
    return digest_sha256(canonical_encode(fields))


def decode_credential(blob: bytes) -> dict:
    """Parse a credential field map back out of canonical bytes."""
    raw = parse_field_map(blob)
    out = {
        "credentialType": raw["credentialType"].decode(),
        "subjectId": raw["subjectId"].decode(),
        "studentName": raw["studentName"].decode(),
        "period": raw["period"].decode(),
    }
    if out["credentialType"] == "Diploma":
        out["degree"] = raw["degree"].decode()
        return out
    rows = []
    for item in parse_list(raw["rows"]):
        row = parse_field_map(item)
        rows.append(
            {
                "courseId": row["courseId"].decode(),
                "term": row["term"].decode(),
                "score": int(row["score"].decode()),
                "letter": row["letter"].decode(),
            }
        )
    out["rows"] = rows
    return out


# --- ordering service ----------------------------------------------------------

@dataclass(frozen=True)
class SubmitOutcome:
    accepted: bool
    seq: int = -1
    reason: str = ""


class OrderingService:
    """Single logical sequencer: validates membership and submitter
    signature, assigns the next seq, countersigns, and hands the sealed
    entry to every attached delivery sink in order."""

    def __init__(self, directory: ConsortiumDirectory, ordering_key: KeyPair):
        self.directory = directory
        self.ordering_key = ordering_key
        self.log: list = []
        self._sinks: list = []

    def attach(self, sink: Callable) -> None:
        self._sinks.append(sink)

    def submit(self, pending: PendingEntry) -> SubmitOutcome:
        info = self.directory.get(pending.submitter.name)
        if info is None or info.member_id != pending.submitter:
            return SubmitOutcome(False, reason="UnknownMember")
        if not verify_signature(
            info.ed_pub,
            submit_signing_bytes(pending.submitter, pending.payload),
            pending.submitter_sig,
        ):
            return SubmitOutcome(False, reason="BadSignature")
        if not isinstance(pending.payload, (CommitmentBatch, TransferRequest, TransferResponse)):
            return SubmitOutcome(False, reason="MalformedPayload")
        seq = len(self.log)
        entry = ConsortiumEntry(
            seq=seq,
            submitter=pending.submitter,
            payload=pending.payload,
            submitter_sig=pending.submitter_sig,
            ordering_sig=sign(self.ordering_key, ordering_signing_bytes(seq, pending)),
        )
        self.log.append(entry)
        for sink in self._sinks:
            sink(entry)
        return SubmitOutcome(True, seq=seq)


# --- member-side validation ------------------------------------------------------

@dataclass(frozen=True)
class AppendOutcome:
    appended: bool
    violation: str = ""


class MemberLog:
    """One member's validated copy of the ordering log."""

    def __init__(self, name: str, directory: ConsortiumDirectory, ordering_pub: bytes):
        self.name = name
        self.directory = directory
        self.ordering_pub = ordering_pub
        self.accepted: list = []
        self.flagged: list = []          # (entry, violation)
        self._next_seq = 0
        self._commitments: dict = {}     # CommitmentRecord.key() -> record
        self._commitment_seq: dict = {}  # CommitmentRecord.key() -> entry seq
        self._channels: dict = {}        # channel_id -> TransferRequest
        self._responses: dict = {}       # channel_id -> TransferResponse

    # delivery entry point (wired to the ordering service or the transport)
    def validate_and_append(self, entry: ConsortiumEntry) -> AppendOutcome:
        violation = self._validate(entry)
        if violation is not None:
            self.flagged.append((entry, violation))
            if violation not in ("SeqGap", "SeqReplay"):
                self._next_seq = entry.seq + 1   # flagged entries consume their seq
            return AppendOutcome(False, violation)
        self._next_seq = entry.seq + 1
        self.accepted.append(entry)
        self._index(entry)
        return AppendOutcome(True)

    def _validate(self, entry: ConsortiumEntry) -> Optional[str]:
        if entry.seq > self._next_seq:
            return "SeqGap"
        if entry.seq < self._next_seq:
            return "SeqReplay"
        info = self.directory.get(entry.submitter.name)
        if info is None or info.member_id != entry.submitter:
            return "UnknownMember"
        pending = PendingEntry(entry.submitter, entry.payload, entry.submitter_sig)
        if not verify_signature(
            self.ordering_pub, ordering_signing_bytes(entry.seq, pending), entry.ordering_sig
        ):
            return "BadOrderingSig"
        if not verify_signature(
            info.ed_pub, submit_signing_bytes(entry.submitter, entry.payload), entry.submitter_sig
        ):
            return "BadSubmitterSig"
        payload = entry.payload
        if isinstance(payload, CommitmentBatch):
            seen = set()
            for record in payload.records:
                if record.key() in self._commitments or record.key() in seen:
                    return "DuplicateCommitment"
                seen.add(record.key())
        elif isinstance(payload, TransferRequest):
            if payload.channel_id in self._channels:
                return "DuplicateChannel"
            host = self.directory.get(payload.host_school.name)
            if host is None or host.member_id != payload.host_school:
                return "UnknownMember"
            if self.directory.get(payload.home_school.name) is None:
                return "UnknownMember"
            if not verify_signature(
                host.ed_pub, canonical_encode(payload.signing_map()), payload.requester_sig
            ):
                return "BadRequesterSig"
        elif isinstance(payload, TransferResponse):
            request = self._channels.get(payload.channel_id)
            if request is None:
                return "OrphanResponse"
            if entry.submitter.name != request.home_school.name:
                return "WrongResponder"
            responder = self.directory.get(entry.submitter.name)
            if not verify_signature(
                responder.ed_pub, canonical_encode(payload.signing_map()), payload.responder_sig
            ):
                return "BadResponderSig"
        else:
            return "MalformedPayload"
        return None

    def _index(self, entry: ConsortiumEntry) -> None:
        payload = entry.payload
        if isinstance(payload, CommitmentBatch):
            for record in payload.records:
                self._commitments[record.key()] = record
                self._commitment_seq[record.key()] = entry.seq
        elif isinstance(payload, TransferRequest):
            self._channels[payload.channel_id] = payload
        elif isinstance(payload, TransferResponse):
            self._responses[payload.channel_id] = payload

    # -- queries -----------------------------------------------------------

    def lookup_commitment(
        self, subject_id: str, credential_type: str, period: str, issuer_name: str
    ) -> Optional[CommitmentRecord]:
        return self._commitments.get((subject_id, credential_type, period, issuer_name))

    def commitment_seq(
        self, subject_id: str, credential_type: str, period: str, issuer_name: str
    ) -> Optional[int]:
        """Seq of the log entry that carried this commitment, if accepted."""
        return self._commitment_seq.get((subject_id, credential_type, period, issuer_name))

    def open_request(self, channel_id: Hash256) -> Optional[TransferRequest]:
        return self._channels.get(channel_id)

    def response_for(self, channel_id: Hash256) -> Optional[TransferResponse]:
        return self._responses.get(channel_id)

    def pending_requests_for(self, home_name: str) -> list:
        """Open channels addressed to a home school, in channel-id order."""
        return [
            req
            for cid, req in sorted(self._channels.items(), key=lambda kv: bytes(kv[0]))
            if req.home_school.name == home_name and cid not in self._responses
        ]

    def commitments_by_issuer(self, issuer_name: str) -> list:
        return [r for k, r in sorted(self._commitments.items()) if k[3] == issuer_name]

    # -- snapshot ------------------------------------------------------------

    SNAPSHOT_HEADER = "consortium-log v1"

    def to_snapshot_text(self) -> str:
        lines = [self.SNAPSHOT_HEADER]
        for entry in self.accepted:
            lines.append(f"{entry.seq}\t{canonical_encode(entry).hex()}")
        lines.append("end")
        return "\n".join(lines) + "\n"


# --- requester-side verification ---------------------------------------------

@dataclass(frozen=True)
class TransferVerdict:
    status: str                 # ok | DigestMismatch | CommitmentMismatch | SealError
    plaintext: Optional[bytes] = None
    credential: Optional[dict] = None


def verify_transfer_response(
    member: MemberLog,
    request: TransferRequest,
    response: TransferResponse,
    recipient_x_priv: bytes,
) -> TransferVerdict:
    """Requester-side check: unseal, digest the plaintext, compare with the
    declared payloadDigest, then against the home school's published
    commitment for the credential's period when one exists."""
    try:
        plaintext = open_sealed(recipient_x_priv, response.payload)
    except SealError:
        return TransferVerdict(status="SealError")
    if digest_sha256(plaintext) != response.payload_digest:
        return TransferVerdict(status="DigestMismatch")
    credential = decode_credential(plaintext)
    published = member.lookup_commitment(
        credential["subjectId"],
        credential["credentialType"],
        credential["period"],
        request.home_school.name,
    )
    if published is not None and published.digest != digest_sha256(plaintext):
        return TransferVerdict(status="CommitmentMismatch")
    return TransferVerdict(status="ok", plaintext=plaintext, credential=credential)


# --- wire decoding --------------------------------------------------------------

def _unhex(raw: bytes) -> bytes:
    # bytes values travel as lowercase hex in the canonical encoding
    return bytes.fromhex(raw.decode("ascii"))


def _decode_member(raw: bytes) -> MemberId:
    fm = parse_field_map(raw)
    return MemberId(name=fm["name"].decode(), account=Hash256(_unhex(fm["account"])))


def decode_entry(blob: bytes) -> ConsortiumEntry:
    fm = parse_field_map(blob)
    payload_fm = parse_field_map(fm["payload"])
    kind = payload_fm["kind"].decode()
    if kind == CommitmentBatch.KIND:
        records = []
        for item in parse_list(payload_fm["records"]):
            r = parse_field_map(item)
            records.append(
                CommitmentRecord(
                    subject_id=r["subjectId"].decode(),
                    credential_type=r["credentialType"].decode(),
                    period=r["period"].decode(),
                    digest=Hash256(_unhex(r["digest"])),
                    issuer=_decode_member(r["issuer"]),
                )
            )
        payload: Payload = CommitmentBatch(
            period=payload_fm["period"].decode(), records=tuple(records)
        )
    elif kind == TransferRequest.KIND:
        payload = TransferRequest(
            channel_id=Hash256(_unhex(payload_fm["channelId"])),
            host_school=_decode_member(payload_fm["hostSchool"]),
            home_school=_decode_member(payload_fm["homeSchool"]),
            subject_id=payload_fm["subjectId"].decode(),
            course_scope=tuple(s.decode() for s in parse_list(payload_fm["courseScope"])),
            requester_sig=_unhex(payload_fm["requesterSig"]),
        )
    elif kind == TransferResponse.KIND:
        payload = TransferResponse(
            channel_id=Hash256(_unhex(payload_fm["channelId"])),
            payload_digest=Hash256(_unhex(payload_fm["payloadDigest"])),
            payload=_unhex(payload_fm["payload"]),
            responder_sig=_unhex(payload_fm["responderSig"]),
        )
    else:
        raise ValueError(f"unknown payload kind {kind!r}")
    return ConsortiumEntry(
        seq=int(fm["seq"].decode()),
        submitter=_decode_member(fm["submitter"]),
        payload=payload,
        submitter_sig=_unhex(fm["submitterSig"]),
        ordering_sig=_unhex(fm["orderingSig"]),
    )
