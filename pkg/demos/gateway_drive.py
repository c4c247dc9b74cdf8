"""Boot the HTTP gateway on a real uvicorn server and walk the endpoints:
login, scoped grade reads, a client-signed grade write through to inclusion,
a denied write, and ministry-side credential verification.

Run from the repo root after `pip install -e .`:

    python3 demos/gateway_drive.py
"""

import hashlib
import threading
import time

import httpx
import uvicorn

from educhain.consortium import (
    ConsortiumDirectory,
    MemberLog,
    OrderingService,
    generate_x25519,
)
from educhain.gateway import GatewayCore, RouteTable, create_app
from educhain.hub import HubNode
from educhain.ledger import (
    ChainConfig,
    KeyPair,
    RegisterCourse,
    RegisterStudent,
    UpsertGrade,
    canonical_encode,
    digest_sha256,
    make_transaction,
)
from educhain.node import KeyRegistry, PrivateNode, Role

EASY = ChainConfig(initial_difficulty_target=(1 << 256) - 1)
UNI_PORT = 8441
MIN_PORT = 8442


def build_world():
    reg = KeyRegistry()
    keys = {}
    for label, role, subject, name in [
        ("registrar", Role.REGISTRAR, "office", "Records Office"),
        ("staff", Role.STAFF, "T1", "Dr. Ng"),
        ("student", Role.STUDENT, "S1", "Ada Lovelace"),
    ]:
        keys[label] = KeyPair.generate(digest_sha256(f"gwdemo:{label}".encode()))
        reg.register(keys[label].public_key, role, subject, name)

    nodes = {nid: PrivateNode(nid, "records", EASY, reg) for nid in ("n1", "n2")}

    def mine(txs):
        for tx in txs:
            assert nodes["n1"].submit_transaction(tx).accepted
        block = nodes["n1"].produce_block()
        assert nodes["n2"].import_block(block).status == "applied"

    registrar, staff = keys["registrar"], keys["staff"]
    mine([
        make_transaction(registrar, 0, RegisterStudent("S1", "Ada Lovelace", "MATH"), 10),
        make_transaction(registrar, 1, RegisterCourse("C1", "Analysis I", "2025S1", "T1"), 10),
        make_transaction(registrar, 2, RegisterCourse("C2", "Algebra I", "2025S1", "T1"), 10),
    ])
    mine([
        make_transaction(staff, 0, UpsertGrade("S1", "C1", "2025S1", 93, "A"), 11),
        make_transaction(staff, 1, UpsertGrade("S1", "C2", "2025S1", 81, "B"), 11),
    ])

    # consortium wiring so the ministry gateway can verify commitments
    directory = ConsortiumDirectory()
    ordering = OrderingService(directory, KeyPair.generate(digest_sha256(b"gwdemo:ordering")))
    member_key = KeyPair.generate(digest_sha256(b"gwdemo:member"))
    _, x_pub = generate_x25519(digest_sha256(b"gwdemo:x"))
    directory.register("uni-a", member_key.public_key, x_pub)
    uni_log = MemberLog("uni-a", directory, ordering.ordering_key.public_key)
    ministry_log = MemberLog("ministry", directory, ordering.ordering_key.public_key)
    ordering.attach(uni_log.validate_and_append)
    ordering.attach(ministry_log.validate_and_append)
    hub = HubNode("uni-a", directory, ordering.submit, nodes["n1"], uni_log, member_key)
    assert hub.publish_commitments("2025S1").accepted

    route = RouteTable(mapping={"records": "n1", "exams": "n2"}, fallback="n1")
    core = GatewayCore(nodes, route, reg, EASY)
    ministry = GatewayCore(nodes, route, reg, EASY, member_log=ministry_log)
    for label in keys:
        core.provision_password(keys[label].account_id, f"pw-{label}")
    return keys, nodes, core, ministry, mine


def serve(app, port):
    config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError(f"server on :{port} did not come up")
        time.sleep(0.05)
    return server


def main():
    keys, nodes, core, ministry, mine = build_world()
    uni_server = serve(create_app(core), UNI_PORT)
    min_server = serve(create_app(ministry), MIN_PORT)
    uni = f"http://127.0.0.1:{UNI_PORT}"
    mini = f"http://127.0.0.1:{MIN_PORT}"

    with httpx.Client() as http:
        # login, good and bad
        res = http.post(f"{uni}/login", json={
            "accountId": keys["student"].account_id.hex(), "password": "pw-student"})
        res.raise_for_status()
        token = res.json()["token"]
        print("login ok, token length", len(token))
        bad = http.post(f"{uni}/login", json={
            "accountId": keys["student"].account_id.hex(), "password": "oops"})
        print("bad password ->", bad.status_code, bad.json())

        auth = {"Authorization": f"Bearer {token}"}
        grades = http.get(f"{uni}/grades", headers=auth).json()
        print("student grade rows:", [(r["courseId"], r["score"]) for r in grades["rows"]])
        print("term summary:", grades["summaries"])

        # staff writes a grade through the gateway; blockNumber appears after mining
        staff_token = http.post(f"{uni}/login", json={
            "accountId": keys["staff"].account_id.hex(), "password": "pw-staff"},
        ).json()["token"]
        op = UpsertGrade("S1", "C1", "2025S1", 95, "A")
        tx = make_transaction(keys["staff"], 2, op, 12)
        res = http.post(f"{uni}/grades", json={"tx": canonical_encode(tx).hex()},
                        headers={"Authorization": f"Bearer {staff_token}"})
        res.raise_for_status()
        tx_hash = res.json()["txHash"]
        print("grade write accepted:", res.json()["status"])
        mine([])
        status = http.get(f"{uni}/tx/{tx_hash}",
                          headers={"Authorization": f"Bearer {staff_token}"}).json()
        print("after mining:", status)
        assert status["status"] == "included"

        # a student trying the same endpoint is refused before decode
        res = http.post(f"{uni}/grades", json={"tx": "00"}, headers=auth)
        print("student grade write ->", res.status_code, res.json()["code"])
        assert res.status_code == 403

        # ministry verification: the published transcript, then a forgery
        credential = {
            "credentialType": "Transcript", "subjectId": "S1",
            "studentName": "Ada Lovelace", "period": "2025S1", "issuer": "uni-a",
            "rows": [
                {"courseId": "C1", "term": "2025S1", "score": 93, "letter": "A"},
                {"courseId": "C2", "term": "2025S1", "score": 81, "letter": "B"},
            ],
        }
        print("verify genuine ->", http.post(f"{mini}/verify", json=credential).json())
        credential["rows"][0]["score"] = 94
        print("verify forged  ->", http.post(f"{mini}/verify", json=credential).json())

    uni_server.should_exit = True
    min_server.should_exit = True
    print("gateway drive complete")


if __name__ == "__main__":
    main()
