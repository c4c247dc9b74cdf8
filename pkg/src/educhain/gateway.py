"""HTTP gateway: sessions, routing, and the user-facing endpoint groups.

The gateway is deliberately thin. It authenticates password logins, routes
each request to a department node, shapes rows for display, and forwards
SIGNED transactions; it never holds user signing keys and never signs on a
user's behalf. Writes therefore arrive as canonical transaction bytes
produced client-side (portal or CLI), hex-encoded in the JSON body.

GatewayCore is framework-free and fully testable without HTTP; create_app
wraps it in a FastAPI application with a uniform error shape
({"code": ..., "detail": ...}) so the portal can branch on machine-readable
codes instead of prose.
"""

from __future__ import annotations

import base64
import hashlib
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .audit import AuditTarget, run_audit_round
from .consortium import (
    MemberLog,
    credential_digest,
    diploma_credential_fields,
    transcript_credential_fields,
)
from .ledger import (
    AttachFile,
    ChainConfig,
    KeyPair,
    Transaction,
    UpdateProfile,
    UpsertGrade,
    decode_transaction,
    make_transaction,
)
from .node import KeyRegistry, Role
from .statestore import ContentStore, MissingGrade, UnknownStudent

LOCKOUT_THRESHOLD = 10
SESSION_TTL = 3600.0


class GatewayError(Exception):
    """Carries the HTTP status and a machine-readable code to the edge."""

    def __init__(self, status: int, code: str, detail: str = ""):
        super().__init__(code if not detail else f"{code}: {detail}")
        self.status = status
        self.code = code
        self.detail = detail


def _bad_request(code: str, detail: str = "") -> GatewayError:
    return GatewayError(422, code, detail)


class PasswordVault:
    """Salted password digests with a consecutive-failure lockout."""

    def __init__(self, rng: Callable[[int], bytes]):
        self._rng = rng
        self._entries: dict = {}      # account -> (salt, digest)
        self._failures: dict = {}     # account -> consecutive failure count

    @staticmethod
    def _digest(salt: bytes, password: str) -> bytes:
        return hashlib.sha256(salt + password.encode("utf-8")).digest()

    def provision(self, account: bytes, password: str) -> None:
        salt = self._rng(16)
        self._entries[account] = (salt, self._digest(salt, password))
        self._failures[account] = 0

    def check(self, account: bytes, password: str) -> str:
        """Returns "ok", "bad", or "locked". Lockout sticks even for the
        right password; failures reset only on success."""
        entry = self._entries.get(account)
        if entry is None:
            return "bad"
        if self._failures.get(account, 0) >= LOCKOUT_THRESHOLD:
            return "locked"
        salt, digest = entry
        if self._digest(salt, password) == digest:
            self._failures[account] = 0
            return "ok"
        self._failures[account] = self._failures.get(account, 0) + 1
        if self._failures[account] >= LOCKOUT_THRESHOLD:
            return "locked"
        return "bad"

    def has(self, account: bytes) -> bool:
        return account in self._entries


@dataclass
class Session:
    token: str            # 64 hex chars, 32 random bytes
    account: bytes
    role: Role
    expiry: float


class SessionStore:
    def __init__(self, rng: Callable[[int], bytes], clock: Callable[[], float], ttl: float):
        self._rng = rng
        self._clock = clock
        self._ttl = ttl
        self._sessions: dict = {}

    def create(self, account: bytes, role: Role) -> Session:
        token = self._rng(32).hex()
        session = Session(token, account, role, self._clock() + self._ttl)
        self._sessions[token] = session
        return session

    def get(self, token: str) -> Optional[Session]:
        session = self._sessions.get(token)
        if session is None:
            return None
        if self._clock() >= session.expiry:
            del self._sessions[token]
            return None
        return session


@dataclass
class RouteTable:
    """department label -> node id, plus a fallback for the retry-once
    failover policy."""

    mapping: dict
    fallback: str

    def route(self, department: str) -> str:
        node_id = self.mapping.get(department)
        if node_id is None:
            raise GatewayError(404, "NoNodeAvailable", f"unknown department {department!r}")
        return node_id


@dataclass
class GatewayConfig:
    host: str = "127.0.0.1"
    port: int = 8440
    session_ttl: float = SESSION_TTL
    default_department: str = "records"

    @classmethod
    def from_mapping(cls, data: dict) -> "GatewayConfig":
        cfg = cls(
            host=data.get("host", cls.host),
            port=int(data.get("port", cls.port)),
            session_ttl=float(data.get("sessionTtl", cls.session_ttl)),
            default_department=data.get("defaultDepartment", cls.default_department),
        )
        # env beats file for deployment knobs
        cfg.host = os.environ.get("EDUCHAIN_HOST", cfg.host)
        cfg.port = int(os.environ.get("EDUCHAIN_PORT", cfg.port))
        return cfg


def _score_summaries(rows: list) -> list:
    """Per-term aggregates for the portal's charts: count/mean/min/max,
    deliberately no GPA (the scheme is score-based)."""
    by_term: dict = {}
    for row in rows:
        by_term.setdefault(row["term"], []).append(int(row["score"]))
    out = []
    for term in sorted(by_term):
        scores = by_term[term]
        out.append(
            {
                "term": term,
                "count": len(scores),
                "mean": round(sum(scores) / len(scores), 2),
                "min": min(scores),
                "max": max(scores),
            }
        )
    return out


class GatewayCore:
    """Everything the HTTP layer does, minus HTTP."""

    def __init__(
        self,
        nodes: dict,
        route_table: RouteTable,
        registry: KeyRegistry,
        chain_cfg: ChainConfig,
        *,
        config: Optional[GatewayConfig] = None,
        member_log: Optional[MemberLog] = None,
        audit_targets: Optional[list] = None,
        vote_pubkeys: Optional[dict] = None,
        audit_service_key: Optional[KeyPair] = None,
        rng: Callable[[int], bytes] = os.urandom,
        clock: Callable[[], float] = time.time,
    ):
        self.nodes = nodes
        self.route_table = route_table
        self.registry = registry
        self.chain_cfg = chain_cfg
        self.config = config or GatewayConfig()
        self.member_log = member_log
        self.audit_targets = audit_targets or []
        self.vote_pubkeys = vote_pubkeys or {}
        self.audit_service_key = audit_service_key
        self.content_store = ContentStore()
        self.vault = PasswordVault(rng)
        self.sessions = SessionStore(rng, clock, self.config.session_ttl)
        self.clock = clock
        self.audit_reports: list = []
        self._audit_rounds = 0
        self._account_locks: dict = {}
        self._locks_guard = threading.Lock()

    # -- accounts and sessions ---------------------------------------------

    def provision_password(self, account: bytes, password: str) -> None:
        if self.registry.get(account) is None:
            raise _bad_request("UnknownAccount", "register the key first")
        self.vault.provision(account, password)

    def login(self, account_hex: str, password: str) -> dict:
        try:
            account = bytes.fromhex(account_hex)
        except ValueError:
            raise GatewayError(401, "BadCredentials")
        verdict = self.vault.check(account, password)
        if verdict == "locked":
            raise GatewayError(403, "AccountLocked")
        info = self.registry.get(account)
        if verdict != "ok" or info is None:
            # constant shape: unknown account and wrong password look alike
            raise GatewayError(401, "BadCredentials")
        session = self.sessions.create(account, info.role)
        return {
            "token": session.token,
            "accountId": account.hex(),
            "role": info.role.value,
            "expiresAt": session.expiry,
        }

    def authenticate(self, token: Optional[str]) -> tuple:
        if not token:
            raise GatewayError(401, "NoSession")
        session = self.sessions.get(token)
        if session is None:
            raise GatewayError(401, "SessionExpired")
        info = self.registry.get(session.account)
        if info is None:
            raise GatewayError(401, "SessionExpired")
        return session, info

    def account_view(self, token: Optional[str]) -> dict:
        session, info = self.authenticate(token)
        node, _ = self.node_for(None)
        expected = node.account_nonces.get(session.account, 0) + node.mempool.pending_for(
            session.account
        )
        return {
            "accountId": session.account.hex(),
            "role": info.role.value,
            "subjectId": info.subject_id,
            "displayName": info.display_name,
            "expectedNonce": expected,
        }

    # -- routing -------------------------------------------------------------

    def node_for(self, department: Optional[str]) -> tuple:
        """(node, failover flag). Retry-once policy: the mapped node first,
        then the fallback; two misses is NoNodeAvailable."""
        dept = department or self.config.default_department
        node_id = self.route_table.route(dept)
        node = self.nodes.get(node_id)
        if node is not None and node.reachable:
            return node, False
        fallback = self.nodes.get(self.route_table.fallback)
        if fallback is not None and fallback.reachable:
            return fallback, True
        raise GatewayError(503, "NoNodeAvailable", f"department {dept!r} has no live node")

    def _lock_for(self, account: bytes) -> threading.Lock:
        with self._locks_guard:
            if account not in self._account_locks:
                self._account_locks[account] = threading.Lock()
            return self._account_locks[account]

    # -- writes ----------------------------------------------------------------

    @staticmethod
    def _decode_tx(tx_hex: str) -> Transaction:
        try:
            return decode_transaction(bytes.fromhex(tx_hex))
        except Exception as exc:
            raise _bad_request("BadEncoding", str(exc))

    def _submit(self, tx: Transaction, department: Optional[str]) -> dict:
        node, failover = self.node_for(department)
        with self._lock_for(tx.sender):
            result = node.submit_transaction(tx)
        if result.accepted:
            return {"txHash": result.tx_hash.hex(), "status": "pending", "failover": failover}
        reason = result.reason or "Rejected"
        if reason == "BadNonce":
            raise GatewayError(409, "BadNonce")
        if reason.startswith("PermissionDenied"):
            _, _, detail = reason.partition(":")
            raise GatewayError(403, "PermissionDenied", detail)
        if reason == "MempoolFull":
            raise GatewayError(503, "MempoolFull")
        raise _bad_request(reason)

    def put_profile(self, token: Optional[str], body: dict) -> dict:
        session, _ = self.authenticate(token)
        tx = self._decode_tx(_require(body, "tx"))
        if not isinstance(tx.op, UpdateProfile):
            raise _bad_request("WrongOperation", "PUT /profile carries UpdateProfile")
        if tx.sender != session.account:
            raise GatewayError(403, "SenderMismatch", "transaction signer is not the session account")
        return self._submit(tx, body.get("department"))

    def post_grade(self, token: Optional[str], body: dict) -> dict:
        session, info = self.authenticate(token)
        if info.role is not Role.STAFF:
            raise GatewayError(403, "RoleDenied", "grades are written by course staff")
        tx = self._decode_tx(_require(body, "tx"))
        if not isinstance(tx.op, UpsertGrade):
            raise _bad_request("WrongOperation", "POST /grades carries UpsertGrade")
        if tx.sender != session.account:
            raise GatewayError(403, "SenderMismatch")
        return self._submit(tx, body.get("department"))

    def post_attachment(self, token: Optional[str], body: dict) -> dict:
        session, info = self.authenticate(token)
        if info.role is not Role.STAFF:
            raise GatewayError(403, "RoleDenied", "attachments are added by course staff")
        tx = self._decode_tx(_require(body, "tx"))
        if not isinstance(tx.op, AttachFile):
            raise _bad_request("WrongOperation", "POST /attachments carries AttachFile")
        if tx.sender != session.account:
            raise GatewayError(403, "SenderMismatch")
        try:
            content = base64.b64decode(_require(body, "contentB64"), validate=True)
        except Exception:
            raise _bad_request("BadEncoding", "contentB64 is not valid base64")
        cid = hashlib.sha256(content).digest()
        if cid != bytes(tx.op.cid):
            raise _bad_request("CidMismatch", "content hash does not match the transaction cid")
        out = self._submit(tx, body.get("department"))
        # store only after the chain accepted the reference
        self.content_store.put(content)
        out["cid"] = cid.hex()
        return out

    # -- reads -----------------------------------------------------------------

    def get_profile(self, token: Optional[str], student_id: Optional[str], department=None) -> dict:
        session, info = self.authenticate(token)
        node, failover = self.node_for(department)
        if info.role is Role.STUDENT:
            target = info.subject_id
            if student_id and student_id != target:
                raise GatewayError(403, "RoleDenied", "students read their own profile")
        elif info.role in (Role.REGISTRAR, Role.AUDITOR):
            if not student_id:
                raise _bad_request("MissingField", "studentId")
            target = student_id
        else:
            raise GatewayError(403, "RoleDenied")
        row = node.db.tables["students"].get(target)
        if row is None:
            raise GatewayError(404, "UnknownStudent", target)
        return {"profile": dict(row), "failover": failover}

    def get_grades(
        self,
        token: Optional[str],
        student_id: Optional[str] = None,
        course_id: Optional[str] = None,
        department: Optional[str] = None,
    ) -> dict:
        session, info = self.authenticate(token)
        node, failover = self.node_for(department)
        rows = [dict(r) for _, r in sorted(node.db.tables["grades"].items())]
        if info.role is Role.STUDENT:
            if student_id and student_id != info.subject_id:
                raise GatewayError(403, "RoleDenied", "students read their own grades")
            rows = [r for r in rows if r["studentId"] == info.subject_id]
        elif info.role is Role.STAFF:
            owned = {
                cid for cid, c in node.db.tables["courses"].items()
                if c.get("ownerStaffId") == info.subject_id
            }
            rows = [r for r in rows if r["courseId"] in owned]
        # registrar and auditor see everything, subject to the filters
        if student_id and info.role is not Role.STUDENT:
            rows = [r for r in rows if r["studentId"] == student_id]
        if course_id:
            rows = [r for r in rows if r["courseId"] == course_id]
        return {"rows": rows, "summaries": _score_summaries(rows), "failover": failover}

    def export_transcript(self, token: Optional[str], body: dict) -> dict:
        session, info = self.authenticate(token)
        if info.role not in (Role.STUDENT, Role.REGISTRAR):
            raise GatewayError(403, "RoleDenied")
        # sensitive export: the password is asked for again
        if self.vault.check(session.account, _require(body, "password")) != "ok":
            raise GatewayError(401, "BadCredentials")
        if info.role is Role.STUDENT:
            student_id = info.subject_id
            if body.get("studentId") not in (None, student_id):
                raise GatewayError(403, "RoleDenied", "students export their own transcript")
        else:
            student_id = body.get("studentId") or _require(body, "studentId")
        node, failover = self.node_for(body.get("department"))
        course_ids = body.get("courseIds")
        if not course_ids:
            course_ids = sorted(
                {
                    r["courseId"]
                    for r in node.db.tables["grades"].values()
                    if r["studentId"] == student_id
                }
            )
        try:
            doc = node.db.export_transcript(
                student_id,
                course_ids,
                issued_at=int(self.clock()),
                actor_hex=session.account.hex(),
                block_number=node.height(),
            )
        except UnknownStudent as exc:
            raise GatewayError(404, "UnknownStudent", str(exc))
        except MissingGrade as exc:
            raise _bad_request("MissingGrade", str(exc))
        return {
            "studentId": doc.student_id,
            "studentName": doc.student_name,
            "rows": [dict(r) for r in doc.rows],
            "issuedAt": doc.issued_at,
            "digest": doc.digest.hex(),
            "failover": failover,
        }

    def get_oplog(self, token: Optional[str], offset: int = 0, limit: int = 100,
                  department: Optional[str] = None) -> dict:
        session, info = self.authenticate(token)
        if info.role not in (Role.REGISTRAR, Role.AUDITOR):
            raise GatewayError(403, "RoleDenied")
        node, failover = self.node_for(department)
        entries = node.db.oplog
        page = [dict(e) for e in entries[offset:offset + max(0, limit)]]
        return {"entries": page, "total": len(entries), "offset": offset, "failover": failover}

    def tx_status(self, token: Optional[str], tx_hash_hex: str,
                  department: Optional[str] = None) -> dict:
        self.authenticate(token)
        try:
            wanted = bytes.fromhex(tx_hash_hex)
        except ValueError:
            raise _bad_request("BadEncoding", "txHash is not hex")
        node, failover = self.node_for(department)
        for block in node.chain:
            for tx in block.txs:
                if bytes(tx.tx_hash()) == wanted:
                    return {
                        "status": "included",
                        "blockNumber": block.header.height,
                        "failover": failover,
                    }
        for tx in node.mempool.items():
            if bytes(tx.tx_hash()) == wanted:
                return {"status": "pending", "failover": failover}
        return {"status": "unknown", "failover": failover}

    # -- ministry verification ---------------------------------------------------

    def verify_credential(self, body: dict) -> dict:
        """Public endpoint on the ministry gateway: rebuild the canonical
        field map from the submitted JSON, digest it, and compare with the
        published commitment. Tampered and never-issued are deliberately
        indistinguishable; both are NotFound."""
        if self.member_log is None:
            raise GatewayError(404, "NotSupported", "verification runs on the ministry gateway")
        credential_type = _require(body, "credentialType")
        subject_id = _require(body, "subjectId")
        student_name = _require(body, "studentName")
        period = _require(body, "period")
        issuer = _require(body, "issuer")
        if credential_type == "Transcript":
            rows = body.get("rows")
            if not isinstance(rows, list) or not rows:
                raise _bad_request("MissingField", "rows")
            try:
                fields = transcript_credential_fields(subject_id, student_name, period, rows)
            except (KeyError, TypeError, ValueError) as exc:
                raise _bad_request("SchemaViolation", f"bad transcript rows: {exc}")
        elif credential_type == "Diploma":
            fields = diploma_credential_fields(
                subject_id, student_name, period, _require(body, "degree")
            )
        else:
            raise _bad_request("SchemaViolation", f"unknown credentialType {credential_type!r}")
        record = self.member_log.lookup_commitment(subject_id, credential_type, period, issuer)
        if record is None or bytes(record.digest) != bytes(credential_digest(fields)):
            return {"status": "NotFound"}
        seq = self.member_log.commitment_seq(subject_id, credential_type, period, issuer)
        return {"status": "Verified", "issuer": issuer, "seq": seq, "period": period}

    # -- audit -----------------------------------------------------------------

    def run_audit(self, token: Optional[str], body: dict) -> dict:
        session, info = self.authenticate(token)
        if info.role is not Role.AUDITOR:
            raise GatewayError(403, "RoleDenied", "audit rounds are auditor-only")
        if not self.audit_targets:
            raise GatewayError(503, "AuditUnavailable", "no audit targets configured")
        tables = body.get("tables") or ["students", "staff", "courses", "grades", "attachments"]
        chunk_size = int(body.get("chunkSize", 64))
        self._audit_rounds += 1
        round_id = f"round-{self._audit_rounds:04d}"
        kwargs = {}
        if self.audit_service_key is not None:
            # operator chose to let the gateway hold a repair service key;
            # otherwise rounds detect and localize but do not write
            primary = self.audit_targets[0].node
            account = self.audit_service_key.account_id

            def sink(op):
                nonce = primary.account_nonces.get(account, 0) + primary.mempool.pending_for(account)
                tx = make_transaction(self.audit_service_key, nonce, op, int(self.clock()))
                return primary.submit_transaction(tx).accepted

            kwargs = {"auditor_key": self.audit_service_key, "tx_submit": sink}
        reports = run_audit_round(
            self.audit_targets,
            tables,
            chunk_size,
            round_id=round_id,
            cfg=self.chain_cfg,
            registry=self.registry,
            vote_pubkeys=self.vote_pubkeys,
            **kwargs,
        )
        self.audit_reports.extend(reports)
        return {"roundId": round_id, "reports": [_report_view(r) for r in reports]}

    def get_audit_reports(self, token: Optional[str]) -> dict:
        session, info = self.authenticate(token)
        if info.role is not Role.AUDITOR:
            raise GatewayError(403, "RoleDenied")
        return {"reports": [_report_view(r) for r in self.audit_reports]}


def _require(body: dict, key: str):
    value = body.get(key)
    if value is None or value == "":
        raise _bad_request("MissingField", key)
    return value


def _report_view(report) -> dict:
    return {
        "roundId": report.round_id,
        "table": report.table,
        "consensusDigest": report.consensus_digest.hex() if report.consensus_digest else None,
        "adjudicationSource": report.adjudication_source,
        "votes": [
            {"nodeId": v.node_id, "digest": v.digest.hex()} for v in report.votes
        ],
        "abstained": list(report.abstained),
        "forged": list(report.forged),
        "divergentNodes": list(report.divergent),
        "flags": dict(report.flags),
        "localizedRows": {
            node: [
                {"rowKey": key, "localValue": local, "authoritativeValue": auth}
                for key, local, auth in rows
            ]
            for node, rows in report.localized.items()
        },
        "repairsApplied": report.repairs_applied,
        "converged": report.converged,
        "text": report.render_text(),
    }


def create_app(core: GatewayCore):
    """FastAPI application over a GatewayCore."""
    from fastapi import FastAPI, Header, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="educhain gateway", docs_url=None, redoc_url=None)

    def token_of(authorization: Optional[str]) -> Optional[str]:
        if authorization and authorization.startswith("Bearer "):
            return authorization[len("Bearer "):]
        return None

    @app.exception_handler(GatewayError)
    async def gateway_error(_request: Request, exc: GatewayError):
        return JSONResponse(
            status_code=exc.status, content={"code": exc.code, "detail": exc.detail}
        )

    @app.post("/login")
    async def login(body: dict):
        return core.login(str(body.get("accountId", "")), str(body.get("password", "")))

    @app.get("/account")
    async def account(authorization: Optional[str] = Header(default=None)):
        return core.account_view(token_of(authorization))

    @app.get("/profile")
    async def get_profile(
        studentId: Optional[str] = None,
        department: Optional[str] = None,
        authorization: Optional[str] = Header(default=None),
    ):
        return core.get_profile(token_of(authorization), studentId, department)

    @app.put("/profile")
    async def put_profile(body: dict, authorization: Optional[str] = Header(default=None)):
        return core.put_profile(token_of(authorization), body)

    @app.get("/grades")
    async def get_grades(
        studentId: Optional[str] = None,
        courseId: Optional[str] = None,
        department: Optional[str] = None,
        authorization: Optional[str] = Header(default=None),
    ):
        return core.get_grades(token_of(authorization), studentId, courseId, department)

    @app.post("/grades")
    async def post_grades(body: dict, authorization: Optional[str] = Header(default=None)):
        return core.post_grade(token_of(authorization), body)

    @app.post("/attachments")
    async def post_attachments(body: dict, authorization: Optional[str] = Header(default=None)):
        return core.post_attachment(token_of(authorization), body)

    @app.post("/transcript/export")
    async def transcript_export(body: dict, authorization: Optional[str] = Header(default=None)):
        return core.export_transcript(token_of(authorization), body)

    @app.get("/oplog")
    async def get_oplog(
        offset: int = 0,
        limit: int = 100,
        department: Optional[str] = None,
        authorization: Optional[str] = Header(default=None),
    ):
        return core.get_oplog(token_of(authorization), offset, limit, department)

    @app.get("/tx/{tx_hash_hex}")
    async def get_tx(
        tx_hash_hex: str,
        department: Optional[str] = None,
        authorization: Optional[str] = Header(default=None),
    ):
        return core.tx_status(token_of(authorization), tx_hash_hex, department)

    @app.post("/verify")
    async def verify(body: dict):
        return core.verify_credential(body)

    @app.post("/audit/run")
    async def audit_run(body: dict, authorization: Optional[str] = Header(default=None)):
        return core.run_audit(token_of(authorization), body)

    @app.get("/audit/reports")
    async def audit_reports(authorization: Optional[str] = Header(default=None)):
        return core.get_audit_reports(token_of(authorization))

    return app
