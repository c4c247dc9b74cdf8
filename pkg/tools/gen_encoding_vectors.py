"""Regenerate shared/encoding_vectors.json.

The vector file pins the canonical byte encoding and the transaction
signing flow so any other client (the web portal signs transactions in
the browser) can prove byte-for-byte parity. Run from the repo root:

    python3 tools/gen_encoding_vectors.py

The output is frozen: regenerating must produce an identical file unless
the wire format itself changed, which is a breaking change to every
deployed client.
"""

import json
import pathlib

from educhain.consortium import credential_digest, transcript_credential_fields
from educhain.ledger import (
    AttachFile,
    Hash256,
    KeyPair,
    RegisterStudent,
    UpdateProfile,
    UpsertGrade,
    canonical_encode,
    digest_sha256,
    make_transaction,
    op_to_wire,
)

OUT_PATH = pathlib.Path(__file__).resolve().parent.parent / "shared" / "encoding_vectors.json"


# --- typed value specs -----------------------------------------------------------
# JSON cannot carry bytes or u64 safely, so values travel as {"t": ..., "v": ...}
# nodes: int values are decimal strings, bytes are lowercase hex, map entries are
# [key, spec] pairs in insertion order (the encoder must sort, the spec must not).


def spec_to_value(spec):
    kind, v = spec["t"], spec["v"]
    if kind == "int":
        return int(v)
    if kind == "str":
        return v
    if kind == "bytes":
        return bytes.fromhex(v)
    if kind == "list":
        return [spec_to_value(item) for item in v]
    if kind == "map":
        return {key: spec_to_value(item) for key, item in v}
    raise ValueError(f"unknown spec type {kind!r}")


def i(v):
    return {"t": "int", "v": str(v)}


def s(v):
    return {"t": "str", "v": v}


def b(hexstr):
    return {"t": "bytes", "v": hexstr}


def l(*items):
    return {"t": "list", "v": list(items)}


def m(*pairs):
    return {"t": "map", "v": [list(p) for p in pairs]}


VALUE_SPECS = [
    ("empty-map", m()),
    ("scalar-fields", m(("count", i(42)), ("name", s("Ada")), ("raw", b("deadbeef")))),
    ("int-edges", m(("zero", i(0)), ("one", i(1)), ("byte", i(255)),
                    ("u64max", i(2**64 - 1)), ("negative", i(-1)))),
    # keys sort by utf-8 bytes: "a" < "ab" < "b"
    ("key-order-ascii", m(("b", i(2)), ("a", i(1)), ("ab", i(3)))),
    # "z" (0x7a) sorts before "e-acute" (0xc3 0xa9)
    ("key-order-utf8", m(("é", s("acute")), ("z", s("zed")))),
    ("unicode-values", m(("s", s("Zoë 数学 α")), ("empty", s("")))),
    ("bytes-values", m(("empty", b("")), ("zero", b("00")),
                       ("hash", b("aa" * 32)))),
    ("list-values", m(("xs", l(i(1), s("two"), b("03"))), ("empty", l()),
                      ("nested", l(l(i(1)), m(("k", s("v"))))))),
    ("op-shaped", m(("kind", s("UpsertGrade")), ("studentId", s("S1")),
                    ("courseId", s("C1")), ("term", s("2025S1")),
                    ("score", i(93)), ("letter", s("A")))),
]


# --- signed transaction vectors ------------------------------------------------------

TX_CASES = [
    ("register-student", "registrar", 0,
     RegisterStudent("S1", "Ada Lovelace", "MATH"), 1700000000),
    ("upsert-grade", "staff", 3,
     UpsertGrade("S1", "C1", "2025S1", 93, "A"), 1700000456),
    ("update-profile", "student", 7,
     UpdateProfile("S1", "email", "ada@uni.example"), 1700000789),
    ("attach-file", "staff", 4,
     AttachFile("S1", "C1", Hash256(digest_sha256(b"evidence bytes")), "application/pdf", 14),
     1700000999),
]


def tx_vector(name, signer, nonce, op, timestamp):
    seed = digest_sha256(f"vector:{signer}".encode())
    key = KeyPair.generate(seed)
    tx = make_transaction(key, nonce, op, timestamp)
    return {
        "name": name,
        "keySeedHex": seed.hex(),
        "publicKeyHex": key.public_key.hex(),
        "accountIdHex": key.account_id.hex(),
        "nonce": nonce,
        "timestamp": timestamp,
        "op": op_to_wire(op),
        "signingPayloadHex": tx.signing_payload().hex(),
        "signatureHex": tx.signature.hex(),
        "txEncodedHex": canonical_encode(tx).hex(),
        "txHashHex": tx.tx_hash().hex(),
    }


def credential_vector():
    rows = [
        {"courseId": "C2", "term": "2025S1", "score": 91, "letter": "A"},
        {"courseId": "C1", "term": "2025S1", "score": 88, "letter": "B"},
    ]
    fields = transcript_credential_fields("S1", "Ada Lovelace", "2025S1", rows)
    return {
        "name": "transcript-two-courses",
        "fields": fields,
        "encodedHex": canonical_encode(fields).hex(),
        "digestSha256Hex": credential_digest(fields).hex(),
    }


def main():
    doc = {
        "format": "educhain-encoding-vectors v1",
        "rules": [
            "int: decimal ASCII digits (minus sign allowed)",
            "str: UTF-8 bytes",
            "bytes: lowercase hex rendered as ASCII text",
            "list: concat of be32(len(item)) + item for each encoded item",
            "map: entries sorted by UTF-8 bytes of the key; each entry is "
            "be32(len(key)) + key + be32(len(value)) + value",
            "booleans are not encodable",
            "transaction signing payload: map of sender(bytes)/nonce(int)/"
            "op(map)/timestamp(int); tx encoding adds signature(bytes); "
            "txHash = sha256(tx encoding); signatures are Ed25519 over the "
            "signing payload; accountId = sha256(publicKey)",
        ],
        "values": [
            {"name": name, "value": spec,
             "encodedHex": canonical_encode(spec_to_value(spec)).hex()}
            for name, spec in VALUE_SPECS
        ],
        "transactions": [tx_vector(*case) for case in TX_CASES],
        "credentials": [credential_vector()],
    }
    OUT_PATH.parent.mkdir(parents=True, exist_ok=True)
    OUT_PATH.write_text(json.dumps(doc, indent=2, ensure_ascii=True) + "\n")
    print(f"wrote {OUT_PATH} ({OUT_PATH.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
