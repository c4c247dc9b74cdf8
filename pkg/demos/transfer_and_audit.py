"""Two universities, one consortium: publish a term, transfer a transcript,
then catch and repair a tampered replica.

Run from the repo root after `pip install -e .`:

    python3 demos/transfer_and_audit.py
"""

import hashlib

from educhain.audit import AuditTarget, run_audit_round
from educhain.consortium import (
    ConsortiumDirectory,
    MemberLog,
    OrderingService,
    generate_x25519,
    make_pending_entry,
    make_transfer_request,
    verify_transfer_response,
)
from educhain.hub import HubNode
from educhain.ledger import (
    ChainConfig,
    KeyPair,
    RegisterCourse,
    RegisterStudent,
    UpsertGrade,
    digest_sha256,
    make_transaction,
)
from educhain.node import KeyRegistry, PrivateNode, Role
from educhain.statestore import DATA_TABLES

# trivial PoW target so the demo is instant; the protocol is the same
EASY = ChainConfig(initial_difficulty_target=(1 << 256) - 1)


def rng_from(label):
    """Deterministic byte source so the sealed payloads reproduce exactly."""
    state = {"c": 0}

    def draw(n):
        out = b""
        while len(out) < n:
            out += hashlib.sha256(f"{label}:{state['c']}".encode()).digest()
            state["c"] += 1
        return out[:n]

    return draw


def build_university(name, directory, ordering):
    reg = KeyRegistry()
    keys = {
        "registrar": KeyPair.generate(digest_sha256(f"demo:{name}:registrar".encode())),
        "staff": KeyPair.generate(digest_sha256(f"demo:{name}:staff".encode())),
        "auditor": KeyPair.generate(digest_sha256(f"demo:{name}:auditor".encode())),
    }
    reg.register(keys["registrar"].public_key, Role.REGISTRAR, "office", "Records Office")
    reg.register(keys["staff"].public_key, Role.STAFF, "T1", "Dr. Ng")
    reg.register(keys["auditor"].public_key, Role.AUDITOR, "desk", "Consortium Auditor")

    member_key = KeyPair.generate(digest_sha256(f"demo:{name}:member".encode()))
    x_priv, x_pub = generate_x25519(digest_sha256(f"demo:{name}:x".encode()))
    directory.register(name, member_key.public_key, x_pub)

    node = PrivateNode(f"{name}-n1", "records", EASY, reg)
    member_log = MemberLog(name, directory, ordering.ordering_key.public_key)
    ordering.attach(member_log.validate_and_append)
    hub = HubNode(name, directory, ordering.submit, node, member_log, member_key,
                  rng=rng_from(name))
    return dict(reg=reg, keys=keys, member_key=member_key, x_priv=x_priv,
                node=node, log=member_log, hub=hub)


def main():
    directory = ConsortiumDirectory()
    ordering = OrderingService(directory, KeyPair.generate(digest_sha256(b"demo:ordering")))
    uni_a = build_university("uni-a", directory, ordering)
    uni_b = build_university("uni-b", directory, ordering)

    # --- a term of records at uni-a -------------------------------------
    node, keys = uni_a["node"], uni_a["keys"]
    for nonce, op in enumerate([
        RegisterStudent("S1", "Ada Lovelace", "MATH"),
        RegisterCourse("C1", "Analysis I", "2025S1", "T1"),
        RegisterCourse("C2", "Algebra I", "2025S1", "T1"),
    ]):
        assert node.submit_transaction(make_transaction(keys["registrar"], nonce, op, 10)).accepted
    node.produce_block()
    for nonce, op in enumerate([
        UpsertGrade("S1", "C1", "2025S1", 93, "A"),
        UpsertGrade("S1", "C2", "2025S1", 81, "B"),
    ]):
        assert node.submit_transaction(make_transaction(keys["staff"], nonce, op, 11)).accepted
    node.produce_block()
    print(f"uni-a chain height {node.height()}, grades:",
          sorted(node.db.rows("grades")))

    # --- close the period: commitments go to the shared log -------------
    outcome = uni_a["hub"].publish_commitments("2025S1")
    assert outcome.accepted, outcome.reason
    record = uni_b["log"].lookup_commitment("S1", "Transcript", "2025S1", "uni-a")
    print("uni-b sees commitment for S1:", record.digest.hex()[:16], "...")

    # --- uni-b pulls S1's transcript over a transfer channel ------------
    request = make_transfer_request(
        uni_b["member_key"],
        directory.get("uni-b").member_id,
        directory.get("uni-a").member_id,
        "S1",
        ("C1",),
        20,
    )
    submitted = ordering.submit(
        make_pending_entry(uni_b["member_key"], directory.get("uni-b").member_id, request)
    )
    assert submitted.accepted, submitted.reason
    serviced = uni_a["hub"].service_transfers()
    assert [status for _, status in serviced] == ["ok"], serviced

    response = uni_b["log"].response_for(request.channel_id)
    verdict = verify_transfer_response(uni_b["log"], request, response, uni_b["x_priv"])
    assert verdict.status == "ok", verdict.status
    print("transfer verified against published commitment; rows:",
          [(r["courseId"], r["score"]) for r in verdict.credential["rows"]])

    # --- replicas, a tamper, and the audit that catches it --------------
    reg = uni_a["reg"]
    replicas = [node]
    for i in (2, 3):
        replica = PrivateNode(f"uni-a-n{i}", "records", EASY, reg)
        for block in node.chain[1:]:
            assert replica.import_block(block).status == "applied"
        replicas.append(replica)
    targets = [
        AuditTarget(n, KeyPair.generate(digest_sha256(f"demo:vote:{n.node_id}".encode())))
        for n in replicas
    ]
    vote_pubkeys = {t.node.node_id: t.vote_key.public_key for t in targets}

    victim = replicas[2]
    victim.db.set_field("grades", "S1|C1|2025S1", "score", 100)
    print("tampered replica", victim.node_id, "grade S1|C1 ->", 100)

    auditor = keys["auditor"]

    def repair_sink(op):
        nonce = node.account_nonces.get(auditor.account_id, 0) + node.mempool.pending_for(
            auditor.account_id
        )
        return node.submit_transaction(make_transaction(auditor, nonce, op, 30)).accepted

    reports = run_audit_round(
        targets, DATA_TABLES, 64,
        round_id="demo-round", cfg=EASY, registry=reg,
        vote_pubkeys=vote_pubkeys, auditor_key=auditor, tx_submit=repair_sink,
    )
    for report in reports:
        if report.divergent:
            print(report.render_text())

    node.produce_block()    # the AuditRepair transaction lands on-chain
    for replica in replicas[1:]:
        replica.import_block(node.chain[-1])
    digests = {n.db.table_digest("grades") for n in replicas}
    assert len(digests) == 1
    print("all replicas converged; repaired score:",
          victim.db.rows("grades")["S1|C1|2025S1"]["score"])


if __name__ == "__main__":
    main()
