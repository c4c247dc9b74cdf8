"""Gateway tests: login and lockout, session handling, routing with
failover, the endpoint groups, ministry verification, audit endpoints, and
the full endpoint-by-role authorization matrix.

Most tests exercise GatewayCore directly; TestHttpLayer covers the FastAPI
wrapper (status codes, error shape, headers) through the test client.
"""

import base64
import hashlib

import pytest

from educhain.consortium import (
    ConsortiumDirectory,
    MemberLog,
    OrderingService,
    generate_x25519,
)
from educhain.gateway import (
    GatewayConfig,
    GatewayCore,
    GatewayError,
    RouteTable,
    create_app,
)
from educhain.hub import HubNode
from educhain.ledger import (
    AttachFile,
    Hash256,
    KeyPair,
    RegisterCourse,
    RegisterStudent,
    UpdateProfile,
    UpsertGrade,
    canonical_encode,
    digest_sha256,
    make_transaction,
)
from educhain.node import Role
from test_node import EASY, World, seeded_key


def counting_rng(label):
    state = {"n": 0}

    def draw(size):
        out = b""
        while len(out) < size:
            out += hashlib.sha256(f"{label}:{state['n']}".encode()).digest()
            state["n"] += 1
        return out[:size]

    return draw


class Gate:
    """Three replica nodes behind a gateway, plus a ministry gateway with
    the consortium log for /verify."""

    PERIOD = "2025S1"

    def __init__(self):
        self.world = World()
        self.clockbox = {"t": 1000.0}
        clock = lambda: self.clockbox["t"]

        self.nodes = {
            nid: self.world.node(nid) for nid in ("n1", "n2", "n3")
        }
        self.route = RouteTable(
            mapping={"records": "n1", "exams": "n2", "archive": "n3"},
            fallback="n1",
        )
        self._seed_chain()

        # consortium: uni-a publishes, the ministry validates and verifies
        self.directory = ConsortiumDirectory()
        ordering_key = seeded_key("gw:ordering")
        self.ordering = OrderingService(self.directory, ordering_key)
        member_key = seeded_key("gw:uni-a")
        _, x_pub = generate_x25519(digest_sha256(b"gw:uni-a:x"))
        self.directory.register("uni-a", member_key.public_key, x_pub)
        self.uni_log = MemberLog("uni-a", self.directory, ordering_key.public_key)
        self.ministry_log = MemberLog("ministry", self.directory, ordering_key.public_key)
        self.ordering.attach(self.uni_log.validate_and_append)
        self.ordering.attach(self.ministry_log.validate_and_append)
        self.hub = HubNode(
            "uni-a", self.directory, self.ordering.submit,
            self.nodes["n1"], self.uni_log, member_key, rng=counting_rng("gw:seal"),
        )
        assert self.hub.publish_commitments(self.PERIOD).accepted

        from educhain.audit import AuditTarget

        self.targets = [
            AuditTarget(node, seeded_key(f"gw:vote:{nid}"))
            for nid, node in sorted(self.nodes.items())
        ]
        vote_pubkeys = {t.node.node_id: t.vote_key.public_key for t in self.targets}

        self.core = GatewayCore(
            self.nodes,
            self.route,
            self.world.registry,
            EASY,
            config=GatewayConfig(),
            audit_targets=self.targets,
            vote_pubkeys=vote_pubkeys,
            rng=counting_rng("gw:rng"),
            clock=clock,
        )
        self.ministry = GatewayCore(
            self.nodes,
            self.route,
            self.world.registry,
            EASY,
            member_log=self.ministry_log,
            rng=counting_rng("gw:min"),
            clock=clock,
        )
        for label in ("registrar", "staff1", "staff2", "student1", "student2", "auditor"):
            self.core.provision_password(self.world.keys[label].account_id, f"pw-{label}")

    def _seed_chain(self):
        w = self.world
        self.mine([
            w.tx("registrar", RegisterStudent("S1", "Ada Lovelace", "CS")),
            w.tx("registrar", RegisterStudent("S2", "Alan Turing", "CS")),
            w.tx("registrar", RegisterCourse("C1", "Algorithms", "2025S1", "T1")),
            w.tx("registrar", RegisterCourse("C2", "Databases", "2025S1", "T2")),
        ])
        self.mine([
            w.tx("staff1", UpsertGrade("S1", "C1", "2025S1", 88, "B")),
            w.tx("staff1", UpsertGrade("S2", "C1", "2025S1", 91, "A")),
            w.tx("staff2", UpsertGrade("S1", "C2", "2025S1", 75, "C")),
        ])

    def mine(self, txs):
        node = self.nodes["n1"]
        for tx in txs:
            result = node.submit_transaction(tx)
            assert result.accepted, result.reason
        block = node.produce_block()
        for nid in ("n2", "n3"):
            assert self.nodes[nid].import_block(block).status == "applied"
        return block

    def login(self, label):
        return self.core.login(
            self.world.keys[label].account_id.hex(), f"pw-{label}"
        )["token"]

    def next_nonce(self, label, node_id="n1"):
        account = self.world.keys[label].account_id
        node = self.nodes[node_id]
        return node.account_nonces.get(account, 0) + node.mempool.pending_for(account)

    def signed_tx_hex(self, label, op, timestamp=50):
        tx = make_transaction(
            self.world.keys[label], self.next_nonce(label), op, timestamp
        )
        return canonical_encode(tx).hex()


@pytest.fixture
def gate():
    return Gate()


def err(callable_, *args, **kwargs):
    with pytest.raises(GatewayError) as exc_info:
        callable_(*args, **kwargs)
    return exc_info.value


class TestLogin:
    def test_correct_password_yields_session_with_role(self, gate):
        out = gate.core.login(gate.world.keys["student1"].account_id.hex(), "pw-student1")
        assert out["role"] == "Student"
        assert len(out["token"]) == 64
        assert gate.core.account_view(out["token"])["subjectId"] == "S1"

    def test_wrong_password_is_bad_credentials(self, gate):
        exc = err(gate.core.login, gate.world.keys["student1"].account_id.hex(), "nope")
        assert exc.status == 401 and exc.code == "BadCredentials"

    def test_unknown_account_has_same_shape_as_wrong_password(self, gate):
        known = err(gate.core.login, gate.world.keys["student1"].account_id.hex(), "nope")
        unknown = err(gate.core.login, "ab" * 32, "nope")
        assert (known.status, known.code, known.detail) == (
            unknown.status, unknown.code, unknown.detail)

    def test_ten_failures_lock_the_account(self, gate):
        account_hex = gate.world.keys["student1"].account_id.hex()
        for _ in range(10):
            err(gate.core.login, account_hex, "wrong")
        exc = err(gate.core.login, account_hex, "pw-student1")
        assert exc.status == 403 and exc.code == "AccountLocked"

    def test_failure_counter_resets_on_success(self, gate):
        account_hex = gate.world.keys["student1"].account_id.hex()
        for _ in range(9):
            err(gate.core.login, account_hex, "wrong")
        assert gate.core.login(account_hex, "pw-student1")["role"] == "Student"
        for _ in range(9):
            err(gate.core.login, account_hex, "wrong")
        assert gate.core.login(account_hex, "pw-student1")["role"] == "Student"

    def test_tokens_are_unique_across_sessions(self, gate):
        account_hex = gate.world.keys["student1"].account_id.hex()
        tokens = {gate.core.login(account_hex, "pw-student1")["token"] for _ in range(50)}
        assert len(tokens) == 50

    def test_session_expires_with_clock(self, gate):
        token = gate.login("student1")
        assert gate.core.account_view(token)["role"] == "Student"
        gate.clockbox["t"] += 3601
        exc = err(gate.core.account_view, token)
        assert exc.status == 401 and exc.code == "SessionExpired"

    def test_no_token_is_401(self, gate):
        exc = err(gate.core.account_view, None)
        assert exc.status == 401 and exc.code == "NoSession"


class TestRouting:
    def test_department_maps_to_its_node(self, gate):
        node, failover = gate.core.node_for("exams")
        assert node.node_id == "n2" and failover is False

    def test_unknown_department_is_no_node_available(self, gate):
        exc = err(gate.core.node_for, "astrology")
        assert exc.status == 404 and exc.code == "NoNodeAvailable"

    def test_down_node_fails_over_and_flags_response(self, gate):
        gate.nodes["n2"].reachable = False
        node, failover = gate.core.node_for("exams")
        assert node.node_id == "n1" and failover is True
        token = gate.login("student1")
        out = gate.core.get_grades(token, department="exams")
        assert out["failover"] is True

    def test_fallback_down_too_is_503(self, gate):
        gate.nodes["n2"].reachable = False
        gate.nodes["n1"].reachable = False
        exc = err(gate.core.node_for, "exams")
        assert exc.status == 503 and exc.code == "NoNodeAvailable"


class TestProfile:
    def test_student_reads_own_profile(self, gate):
        token = gate.login("student1")
        out = gate.core.get_profile(token, None)
        assert out["profile"]["studentId"] == "S1"
        assert out["profile"]["name"] == "Ada Lovelace"

    def test_student_cannot_read_another_profile(self, gate):
        token = gate.login("student1")
        exc = err(gate.core.get_profile, token, "S2")
        assert exc.status == 403

    def test_registrar_reads_any_profile_by_id(self, gate):
        token = gate.login("registrar")
        assert gate.core.get_profile(token, "S2")["profile"]["name"] == "Alan Turing"

    def test_registrar_must_name_a_student(self, gate):
        token = gate.login("registrar")
        exc = err(gate.core.get_profile, token, None)
        assert exc.status == 422 and exc.code == "MissingField"

    def test_unknown_student_is_404(self, gate):
        token = gate.login("registrar")
        exc = err(gate.core.get_profile, token, "S99")
        assert exc.status == 404

    def test_student_updates_contact_field(self, gate):
        token = gate.login("student1")
        tx_hex = gate.signed_tx_hex("student1", UpdateProfile("S1", "email", "ada@u.edu"))
        out = gate.core.put_profile(token, {"tx": tx_hex})
        assert out["status"] == "pending"
        gate.mine([])  # drain the mempool into a block
        status = gate.core.tx_status(token, out["txHash"])
        assert status["status"] == "included" and status["blockNumber"] == 3
        assert gate.core.get_profile(token, None)["profile"]["email"] == "ada@u.edu"

    def test_write_response_implies_mempool_presence(self, gate):
        token = gate.login("student1")
        tx_hex = gate.signed_tx_hex("student1", UpdateProfile("S1", "telephone", "555"))
        out = gate.core.put_profile(token, {"tx": tx_hex})
        assert gate.core.tx_status(token, out["txHash"])["status"] == "pending"

    def test_account_view_nonce_counts_pending_txs(self, gate):
        # clients sequence rapid writes off this field, so it must see the mempool
        token = gate.login("student1")
        assert gate.core.account_view(token)["expectedNonce"] == 0
        tx_hex = gate.signed_tx_hex("student1", UpdateProfile("S1", "email", "a@u.edu"))
        gate.core.put_profile(token, {"tx": tx_hex})
        assert gate.core.account_view(token)["expectedNonce"] == 1
        gate.mine([])
        assert gate.core.account_view(token)["expectedNonce"] == 1

    def test_wrong_operation_kind_rejected(self, gate):
        token = gate.login("staff1")
        tx_hex = gate.signed_tx_hex("staff1", UpsertGrade("S1", "C1", "2025S1", 90, "A"))
        exc = err(gate.core.put_profile, token, {"tx": tx_hex})
        assert exc.status == 422 and exc.code == "WrongOperation"

    def test_sender_must_match_session(self, gate):
        token = gate.login("student1")
        tx_hex = gate.signed_tx_hex("student2", UpdateProfile("S2", "email", "a@u.edu"))
        exc = err(gate.core.put_profile, token, {"tx": tx_hex})
        assert exc.status == 403 and exc.code == "SenderMismatch"

    def test_stale_nonce_is_409(self, gate):
        token = gate.login("student1")
        tx = make_transaction(
            gate.world.keys["student1"], 0, UpdateProfile("S1", "email", "x@u.edu"), 50
        )
        # nonce 0 was never used by student1, so consume it first
        gate.core.put_profile(token, {"tx": canonical_encode(tx).hex()})
        exc = err(gate.core.put_profile, token, {"tx": canonical_encode(tx).hex()})
        assert exc.status == 409 and exc.code == "BadNonce"

    def test_uneditable_field_maps_to_403(self, gate):
        token = gate.login("student1")
        tx_hex = gate.signed_tx_hex("student1", UpdateProfile("S1", "name", "Hacker"))
        exc = err(gate.core.put_profile, token, {"tx": tx_hex})
        assert exc.status == 403 and exc.code == "PermissionDenied"
        assert exc.detail == "FieldNotEditable"

    def test_garbage_tx_hex_is_422(self, gate):
        token = gate.login("student1")
        exc = err(gate.core.put_profile, token, {"tx": "deadbeef"})
        assert exc.status == 422 and exc.code == "BadEncoding"


class TestGrades:
    def test_student_sees_only_own_rows(self, gate):
        token = gate.login("student1")
        out = gate.core.get_grades(token)
        assert {r["studentId"] for r in out["rows"]} == {"S1"}
        assert {r["courseId"] for r in out["rows"]} == {"C1", "C2"}

    def test_staff_sees_only_owned_courses(self, gate):
        token = gate.login("staff1")
        out = gate.core.get_grades(token)
        assert {r["courseId"] for r in out["rows"]} == {"C1"}
        assert len(out["rows"]) == 2

    def test_registrar_filters_by_student_and_course(self, gate):
        token = gate.login("registrar")
        assert len(gate.core.get_grades(token)["rows"]) == 3
        assert len(gate.core.get_grades(token, student_id="S1")["rows"]) == 2
        assert len(gate.core.get_grades(token, course_id="C1")["rows"]) == 2

    def test_per_term_summaries(self, gate):
        token = gate.login("student1")
        summaries = gate.core.get_grades(token)["summaries"]
        assert summaries == [
            {"term": "2025S1", "count": 2, "mean": 81.5, "min": 75, "max": 88}
        ]

    def test_staff_posts_grade(self, gate):
        token = gate.login("staff1")
        tx_hex = gate.signed_tx_hex("staff1", UpsertGrade("S2", "C1", "2025S1", 70, "C"))
        out = gate.core.post_grade(token, {"tx": tx_hex})
        assert out["status"] == "pending"

    def test_student_posting_grade_is_403(self, gate):
        token = gate.login("student1")
        tx_hex = gate.signed_tx_hex("student1", UpsertGrade("S1", "C1", "2025S1", 99, "A"))
        exc = err(gate.core.post_grade, token, {"tx": tx_hex})
        assert exc.status == 403 and exc.code == "RoleDenied"

    def test_staff_cannot_grade_unowned_course(self, gate):
        token = gate.login("staff1")
        tx_hex = gate.signed_tx_hex("staff1", UpsertGrade("S1", "C2", "2025S1", 50, "F"))
        exc = err(gate.core.post_grade, token, {"tx": tx_hex})
        assert exc.status == 403 and exc.code == "PermissionDenied"
        assert exc.detail == "NotCourseOwner"


class TestAttachments:
    def attach_body(self, gate, content=b"scan of the exam sheet"):
        cid = Hash256(hashlib.sha256(content).digest())
        op = AttachFile("S1", "C1", cid, "application/pdf", len(content))
        return {
            "tx": gate.signed_tx_hex("staff1", op),
            "contentB64": base64.b64encode(content).decode(),
        }

    def test_staff_attaches_evidence(self, gate):
        token = gate.login("staff1")
        body = self.attach_body(gate)
        out = gate.core.post_attachment(token, body)
        assert out["status"] == "pending"
        cid = Hash256(bytes.fromhex(out["cid"]))
        assert gate.core.content_store.get(cid) == b"scan of the exam sheet"
        gate.mine([])
        assert out["cid"] in gate.nodes["n2"].db.tables["attachments"]

    def test_cid_mismatch_is_422(self, gate):
        token = gate.login("staff1")
        body = self.attach_body(gate)
        body["contentB64"] = base64.b64encode(b"different bytes").decode()
        exc = err(gate.core.post_attachment, token, body)
        assert exc.status == 422 and exc.code == "CidMismatch"
        assert len(gate.core.content_store) == 0

    def test_bad_base64_is_422(self, gate):
        token = gate.login("staff1")
        body = self.attach_body(gate)
        body["contentB64"] = "!!! not base64 !!!"
        exc = err(gate.core.post_attachment, token, body)
        assert exc.status == 422 and exc.code == "BadEncoding"


class TestTranscriptExport:
    def test_student_exports_own_with_password(self, gate):
        token = gate.login("student1")
        out = gate.core.export_transcript(token, {"password": "pw-student1"})
        assert [r["courseId"] for r in out["rows"]] == ["C1", "C2"]
        assert len(out["digest"]) == 64

    def test_wrong_password_blocks_export(self, gate):
        token = gate.login("student1")
        exc = err(gate.core.export_transcript, token, {"password": "nope"})
        assert exc.status == 401 and exc.code == "BadCredentials"

    def test_student_cannot_export_another(self, gate):
        token = gate.login("student1")
        exc = err(gate.core.export_transcript, token,
                  {"password": "pw-student1", "studentId": "S2"})
        assert exc.status == 403

    def test_registrar_exports_any(self, gate):
        token = gate.login("registrar")
        out = gate.core.export_transcript(
            token, {"password": "pw-registrar", "studentId": "S2"}
        )
        assert [r["courseId"] for r in out["rows"]] == ["C1"]

    def test_export_lands_in_oplog(self, gate):
        token = gate.login("student1")
        gate.core.export_transcript(token, {"password": "pw-student1"})
        reg_token = gate.login("registrar")
        entries = gate.core.get_oplog(reg_token)["entries"]
        assert entries[-1]["opKind"] == "ExportTranscript"


class TestOplog:
    def test_pagination(self, gate):
        token = gate.login("auditor")
        full = gate.core.get_oplog(token)
        assert full["total"] == 7
        page = gate.core.get_oplog(token, offset=2, limit=3)
        assert len(page["entries"]) == 3
        assert page["entries"][0]["seq"] == 2

    def test_students_and_staff_denied(self, gate):
        for label in ("student1", "staff1"):
            exc = err(gate.core.get_oplog, gate.login(label))
            assert exc.status == 403


class TestVerify:
    def transcript_body(self, gate, **overrides):
        body = {
            "credentialType": "Transcript",
            "subjectId": "S1",
            "studentName": "Ada Lovelace",
            "period": "2025S1",
            "issuer": "uni-a",
            "rows": [
                {"courseId": "C1", "term": "2025S1", "score": 88, "letter": "B"},
                {"courseId": "C2", "term": "2025S1", "score": 75, "letter": "C"},
            ],
        }
        body.update(overrides)
        return body

    def test_published_transcript_verifies(self, gate):
        out = gate.ministry.verify_credential(self.transcript_body(gate))
        assert out["status"] == "Verified"
        assert out["issuer"] == "uni-a"
        assert isinstance(out["seq"], int)

    def test_row_order_does_not_matter(self, gate):
        body = self.transcript_body(gate)
        body["rows"] = list(reversed(body["rows"]))
        assert gate.ministry.verify_credential(body)["status"] == "Verified"

    def test_score_off_by_one_is_not_found(self, gate):
        body = self.transcript_body(gate)
        body["rows"][0]["score"] = 89
        assert gate.ministry.verify_credential(body)["status"] == "NotFound"

    def test_never_issued_subject_is_not_found(self, gate):
        body = self.transcript_body(gate, subjectId="S9")
        assert gate.ministry.verify_credential(body)["status"] == "NotFound"

    def test_every_single_field_perturbation_fails(self, gate):
        # soundness sweep: flip each field one at a time
        perturbed = [
            self.transcript_body(gate, subjectId="S2"),
            self.transcript_body(gate, studentName="Ada L."),
            self.transcript_body(gate, period="2025S2"),
        ]
        base = self.transcript_body(gate)
        for i, field_name in enumerate(("courseId", "term", "score", "letter")):
            body = self.transcript_body(gate)
            row = dict(body["rows"][0])
            row[field_name] = 1 if field_name == "score" else "XX"
            body["rows"][0] = row
            perturbed.append(body)
        assert gate.ministry.verify_credential(base)["status"] == "Verified"
        for body in perturbed:
            assert gate.ministry.verify_credential(body)["status"] == "NotFound"

    def test_diploma_round_trip(self, gate):
        gate.mine([gate.world.tx("registrar", UpdateProfile("S1", "degreeAwarded", "BSc"))])
        assert gate.hub.publish_commitments("2025S2").accepted
        body = {
            "credentialType": "Diploma",
            "subjectId": "S1",
            "studentName": "Ada Lovelace",
            "period": "2025S2",
            "issuer": "uni-a",
            "degree": "BSc",
        }
        assert gate.ministry.verify_credential(body)["status"] == "Verified"
        body["degree"] = "PhD"
        assert gate.ministry.verify_credential(body)["status"] == "NotFound"

    def test_university_gateway_does_not_verify(self, gate):
        exc = err(gate.core.verify_credential, self.transcript_body(gate))
        assert exc.status == 404 and exc.code == "NotSupported"

    def test_malformed_rows_rejected(self, gate):
        body = self.transcript_body(gate, rows=[{"courseId": "C1"}])
        exc = err(gate.ministry.verify_credential, body)
        assert exc.status == 422


class TestAuditEndpoints:
    def test_non_auditor_denied(self, gate):
        for label in ("student1", "staff1", "registrar"):
            exc = err(gate.core.run_audit, gate.login(label), {})
            assert exc.status == 403

    def test_clean_round_reports_convergence(self, gate):
        token = gate.login("auditor")
        out = gate.core.run_audit(token, {"tables": ["grades"]})
        assert out["roundId"] == "round-0001"
        report = out["reports"][0]
        assert report["divergentNodes"] == [] and report["converged"] is True
        listed = gate.core.get_audit_reports(token)["reports"]
        assert len(listed) == 1

    def test_detection_only_without_service_key(self, gate):
        gate.nodes["n3"].db.set_field("grades", "S1|C1|2025S1", "score", 100)
        token = gate.login("auditor")
        report = gate.core.run_audit(token, {"tables": ["grades"]})["reports"][0]
        assert report["divergentNodes"] == ["n3"]
        assert report["repairsApplied"] == 0 and report["converged"] is False
        rows = report["localizedRows"]["n3"]
        assert rows[0]["rowKey"] == "S1|C1|2025S1"

    def test_repairs_with_operator_service_key(self, gate):
        core = GatewayCore(
            gate.nodes, gate.route, gate.world.registry, EASY,
            audit_targets=gate.targets,
            vote_pubkeys={t.node.node_id: t.vote_key.public_key for t in gate.targets},
            audit_service_key=gate.world.keys["auditor"],
            rng=counting_rng("gw:rng2"), clock=lambda: 2000.0,
        )
        core.provision_password(gate.world.keys["auditor"].account_id, "pw-auditor")
        token = core.login(gate.world.keys["auditor"].account_id.hex(), "pw-auditor")["token"]
        gate.nodes["n3"].db.set_field("grades", "S1|C1|2025S1", "score", 100)
        report = core.run_audit(token, {"tables": ["grades"]})["reports"][0]
        assert report["repairsApplied"] == 1 and report["converged"] is True
        assert gate.nodes["n3"].db.rows("grades")["S1|C1|2025S1"]["score"] == 88


class TestAuthzMatrix:
    """The allow/deny table from the README, row by row. 401 without a
    session, then one expected status per role."""

    MATRIX = [
        # (endpoint, student, staff, registrar, auditor)
        ("get_account", 200, 200, 200, 200),
        ("get_profile", 200, 403, 200, 200),
        ("put_profile", 200, 403, 200, 403),
        ("get_grades", 200, 200, 200, 200),
        ("post_grade", 403, 200, 403, 403),
        ("post_attachment", 403, 200, 403, 403),
        ("export_transcript", 200, 403, 200, 403),
        ("get_oplog", 403, 403, 200, 200),
        ("tx_status", 200, 200, 200, 200),
        ("run_audit", 403, 403, 403, 200),
        ("get_audit_reports", 403, 403, 403, 200),
    ]
    ROLES = ("student1", "staff1", "registrar", "auditor")

    def call(self, gate, endpoint, label, token):
        core = gate.core
        if endpoint == "get_account":
            return core.account_view(token)
        if endpoint == "get_profile":
            student_id = None if label == "student1" else "S1"
            return core.get_profile(token, student_id)
        if endpoint == "put_profile":
            op = {
                "student1": UpdateProfile("S1", "email", f"m-{label}@u.edu"),
                "staff1": UpdateProfile("S1", "email", "m@u.edu"),
                "registrar": UpdateProfile("S1", "degreeAwarded", "BSc"),
                "auditor": UpdateProfile("S1", "email", "m@u.edu"),
            }[label or "student1"]
            sender = label or "student1"
            return core.put_profile(token, {"tx": gate.signed_tx_hex(sender, op)})
        if endpoint == "get_grades":
            return core.get_grades(token)
        if endpoint == "post_grade":
            sender = label or "student1"
            tx_hex = gate.signed_tx_hex(sender, UpsertGrade("S1", "C1", "2025S1", 60, "D"))
            return core.post_grade(token, {"tx": tx_hex})
        if endpoint == "post_attachment":
            sender = label or "student1"
            content = f"evidence-{label}".encode()
            cid = Hash256(hashlib.sha256(content).digest())
            op = AttachFile("S1", "C1", cid, "image/png", len(content))
            return core.post_attachment(token, {
                "tx": gate.signed_tx_hex(sender, op),
                "contentB64": base64.b64encode(content).decode(),
            })
        if endpoint == "export_transcript":
            body = {"password": f"pw-{label}"}
            if label != "student1":
                body["studentId"] = "S1"
            return core.export_transcript(token, body)
        if endpoint == "get_oplog":
            return core.get_oplog(token)
        if endpoint == "tx_status":
            return core.tx_status(token, "00" * 32)
        if endpoint == "run_audit":
            return core.run_audit(token, {"tables": ["students"]})
        if endpoint == "get_audit_reports":
            return core.get_audit_reports(token)
        raise AssertionError(f"unmapped endpoint {endpoint}")

    def outcome(self, gate, endpoint, label, token):
        try:
            self.call(gate, endpoint, label, token)
            return 200
        except GatewayError as exc:
            return exc.status

    def test_every_endpoint_role_combination(self, gate):
        tokens = {label: gate.login(label) for label in self.ROLES}
        failures = []
        for row in self.MATRIX:
            endpoint, expectations = row[0], row[1:]
            got = self.outcome(gate, endpoint, None, None)
            if got != 401:
                failures.append(f"{endpoint} x no-session: want 401 got {got}")
            for label, want in zip(self.ROLES, expectations):
                got = self.outcome(gate, endpoint, label, tokens[label])
                if got != want:
                    failures.append(f"{endpoint} x {label}: want {want} got {got}")
        assert not failures, "\n".join(failures)

    def test_login_and_verify_are_public(self, gate):
        # no session needed for either; verify runs on the ministry gateway
        out = gate.ministry.verify_credential({
            "credentialType": "Diploma", "subjectId": "S9", "studentName": "N",
            "period": "2024S1", "issuer": "uni-a", "degree": "BSc",
        })
        assert out["status"] == "NotFound"


class TestHttpLayer:
    @pytest.fixture
    def client(self, gate):
        from fastapi.testclient import TestClient

        return TestClient(create_app(gate.core)), gate

    def test_login_and_profile_round_trip(self, client):
        http, gate = client
        res = http.post("/login", json={
            "accountId": gate.world.keys["student1"].account_id.hex(),
            "password": "pw-student1",
        })
        assert res.status_code == 200
        token = res.json()["token"]
        res = http.get("/profile", headers={"Authorization": f"Bearer {token}"})
        assert res.status_code == 200
        assert res.json()["profile"]["studentId"] == "S1"

    def test_error_shape_is_machine_readable(self, client):
        http, gate = client
        res = http.get("/grades")
        assert res.status_code == 401
        assert res.json() == {"code": "NoSession", "detail": ""}

    def test_write_through_http(self, client):
        http, gate = client
        token = gate.login("staff1")
        tx_hex = gate.signed_tx_hex("staff1", UpsertGrade("S2", "C1", "2025S1", 85, "B"))
        res = http.post("/grades", json={"tx": tx_hex},
                        headers={"Authorization": f"Bearer {token}"})
        assert res.status_code == 200
        tx_hash = res.json()["txHash"]
        res = http.get(f"/tx/{tx_hash}", headers={"Authorization": f"Bearer {token}"})
        assert res.json()["status"] == "pending"

    def test_student_grade_write_is_403_over_http(self, client):
        http, gate = client
        token = gate.login("student1")
        res = http.post("/grades", json={"tx": "00"},
                        headers={"Authorization": f"Bearer {token}"})
        assert res.status_code == 403
        assert res.json()["code"] == "RoleDenied"

    def test_verify_is_public_on_ministry_app(self, gate):
        from fastapi.testclient import TestClient

        http = TestClient(create_app(gate.ministry))
        res = http.post("/verify", json={
            "credentialType": "Transcript", "subjectId": "S1",
            "studentName": "Ada Lovelace", "period": "2025S1", "issuer": "uni-a",
            "rows": [
                {"courseId": "C1", "term": "2025S1", "score": 88, "letter": "B"},
                {"courseId": "C2", "term": "2025S1", "score": 75, "letter": "C"},
            ],
        })
        assert res.status_code == 200
        assert res.json()["status"] == "Verified"

    def test_bad_nonce_is_409_over_http(self, client):
        http, gate = client
        token = gate.login("student1")
        tx = make_transaction(
            gate.world.keys["student1"], 0, UpdateProfile("S1", "email", "x@u.edu"), 50
        )
        body = {"tx": canonical_encode(tx).hex()}
        assert http.put("/profile", json=body,
                        headers={"Authorization": f"Bearer {token}"}).status_code == 200
        res = http.put("/profile", json=body,
                       headers={"Authorization": f"Bearer {token}"})
        assert res.status_code == 409
        assert res.json()["code"] == "BadNonce"
