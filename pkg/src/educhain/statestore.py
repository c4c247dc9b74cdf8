"""Per-node final-state database derived from chain events.

Fixed-schema tables (students, staff, courses, grades, attachments) plus an
append-only operation log, a content-addressed blob store, transcript export,
and the table checksum primitives the consistency audit consumes.

The database is a pure fold of the event stream: applying the same events to
a fresh instance always reproduces byte-identical table digests. The five
data tables are replicated (and audited) across nodes; the operation log also
records node-local read operations such as transcript exports and is
therefore compared across nodes only in scenarios that avoid those.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

from .ledger import (
    AttachFile,
    AuditRepair,
    Hash128,
    Hash256,
    RecordOp,
    RegisterCourse,
    RegisterStudent,
    Transaction,
    UpdateProfile,
    UpsertGrade,
    canonical_encode,
    digest_md5,
    digest_sha256,
)


class UnknownTable(KeyError):
    pass


class UnknownField(KeyError):
    pass


class BadChunkSize(ValueError):
    pass


class SchemaViolation(Exception):
    """A chain event addressed rows that violate the schema; nothing mutated."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class UnknownStudent(Exception):
    pass


class MissingGrade(Exception):
    def __init__(self, course_id: str):
        super().__init__(course_id)
        self.course_id = course_id


DATA_TABLES = ("students", "staff", "courses", "grades", "attachments")
ALL_TABLES = DATA_TABLES + ("oplog",)

# table -> (key columns, all columns). Row keys join key-column values with
# '|' (identifier charset excludes it); oplog keys zero-pad seq to sort.
TABLE_SCHEMAS = {
    "students": (
        ("studentId",),
        ("studentId", "name", "program", "telephone", "email", "address", "degreeAwarded"),
    ),
    "staff": (("staffId",), ("staffId", "name", "courses")),
    "courses": (("courseId",), ("courseId", "title", "term", "ownerStaffId")),
    "grades": (
        ("studentId", "courseId", "term"),
        ("studentId", "courseId", "term", "score", "letter", "attachmentCid"),
    ),
    "attachments": (("cid",), ("cid", "sizeBytes", "mediaLabel")),
    "oplog": (
        ("seq",),
        ("seq", "actor", "opKind", "startTime", "blockNumber", "txHash", "status"),
    ),
}

_INT_COLUMNS = {"score", "sizeBytes", "seq", "startTime", "blockNumber"}

PROFILE_FIELDS = ("name", "program", "telephone", "email", "address", "degreeAwarded")
STUDENT_EDITABLE_FIELDS = ("telephone", "email", "address")
ROW_FIELD = "__row__"


def grade_key(student_id: str, course_id: str, term: str) -> str:
    return f"{student_id}|{course_id}|{term}"


def row_key_for(table: str, row: dict) -> str:
    key_cols, _ = TABLE_SCHEMAS[table]
    if table == "oplog":
        return f"{row['seq']:012d}"
    return "|".join(str(row[c]) for c in key_cols)


@dataclass(frozen=True)
class ChainEvent:
    """One applied transaction, emitted in chain order."""

    block_height: int
    tx_hash: Hash256
    op: RecordOp
    actor: Hash256
    timestamp: int


@dataclass(frozen=True)
class RollbackEvent:
    """Synthetic reorg marker: state above `height` was rebuilt from the
    retained chain prefix; re-emitted events for the new branch follow."""

    height: int


@dataclass(frozen=True)
class ApplyResult:
    ok: bool
    table: str = ""
    row_key: str = ""
    action: str = ""
    reason: str = ""


@dataclass(frozen=True)
class TableChecksum:
    table: str
    chunk_index: int
    first_key: str
    last_key: str
    row_count: int
    digest: Hash128


@dataclass(frozen=True)
class TranscriptDoc:
    student_id: str
    student_name: str
    rows: tuple
    issued_at: int
    digest: Hash256

    def field_map(self) -> dict:
        return {
            "studentId": self.student_id,
            "studentName": self.student_name,
            "rows": [dict(r) for r in self.rows],
            "issuedAt": self.issued_at,
            "digest": bytes(self.digest),
        }


def _transcript_digest(student_id: str, student_name: str, rows, issued_at: int) -> Hash256:
    return digest_sha256(
        canonical_encode(
            {
                "studentId": student_id,
                "studentName": student_name,
                "rows": [dict(r) for r in rows],
                "issuedAt": issued_at,
            }
        )
    )


class ContentStore:
    """Content-addressed blob store: key is always the SHA-256 of the value."""

    def __init__(self):
        self._blobs: dict = {}

    def put(self, data: bytes) -> Hash256:
        cid = digest_sha256(data)
        self._blobs[cid] = data
        return cid

    def get(self, cid: Hash256) -> Optional[bytes]:
        return self._blobs.get(cid)

    def __len__(self):
        return len(self._blobs)

    def __contains__(self, cid):
        return cid in self._blobs


def put_content(store: ContentStore, data: bytes) -> Hash256:
    return store.put(data)


def get_content(store: ContentStore, cid: Hash256) -> Optional[bytes]:
    return store.get(cid)


class FinalStateDb:
    """Relational-style cache of the chain's latest values; never authoritative
    over the chain itself."""

    def __init__(self, staff_name_lookup: Optional[Callable[[str], Optional[str]]] = None):
        self.tables: dict = {name: {} for name in DATA_TABLES}
        self.oplog: list = []
        self._staff_name_lookup = staff_name_lookup

    # -- event application ----------------------------------------------

    def apply_event(self, ev: ChainEvent) -> ApplyResult:
        """Apply one chain event; on schema violation nothing mutates but the
        operation log still records the attempt with a failure marker."""
        try:
            result = self._apply_op(ev.op)
        except SchemaViolation as exc:
            self._log(ev, f"failed:{exc.reason}")
            return ApplyResult(ok=False, reason=exc.reason)
        self._log(ev, "ok")
        return result

    def _apply_op(self, op: RecordOp) -> ApplyResult:
        if isinstance(op, RegisterStudent):
            return self._register_student(op)
        if isinstance(op, RegisterCourse):
            return self._register_course(op)
        if isinstance(op, UpdateProfile):
            return self._update_profile(op)
        if isinstance(op, UpsertGrade):
            return self._upsert_grade(op)
        if isinstance(op, AttachFile):
            return self._attach_file(op)
        if isinstance(op, AuditRepair):
            return self._audit_repair(op)
        raise SchemaViolation(f"UnknownOp:{type(op).__name__}")

    def _register_student(self, op: RegisterStudent) -> ApplyResult:
        students = self.tables["students"]
        if op.student_id in students:
            raise SchemaViolation("StudentExists")
        students[op.student_id] = {
            "studentId": op.student_id,
            "name": op.name,
            "program": op.program,
            "telephone": "",
            "email": "",
            "address": "",
            "degreeAwarded": "",
        }
        return ApplyResult(True, "students", op.student_id, "insert")

    def _register_course(self, op: RegisterCourse) -> ApplyResult:
        courses = self.tables["courses"]
        if op.course_id in courses:
            raise SchemaViolation("CourseExists")
        courses[op.course_id] = {
            "courseId": op.course_id,
            "title": op.title,
            "term": op.term,
            "ownerStaffId": op.owner_staff_id,
        }
        staff = self.tables["staff"]
        row = staff.get(op.owner_staff_id)
        if row is None:
            name = None
            if self._staff_name_lookup is not None:
                name = self._staff_name_lookup(op.owner_staff_id)
            staff[op.owner_staff_id] = {
                "staffId": op.owner_staff_id,
                "name": name or op.owner_staff_id,
                "courses": [op.course_id],
            }
        elif op.course_id not in row["courses"]:
            row["courses"] = sorted(row["courses"] + [op.course_id])
        return ApplyResult(True, "courses", op.course_id, "insert")

    def _update_profile(self, op: UpdateProfile) -> ApplyResult:
        students = self.tables["students"]
        row = students.get(op.student_id)
        if row is None:
            raise SchemaViolation("UnknownStudent")
        if op.field not in PROFILE_FIELDS:
            raise SchemaViolation("UnknownField")
        row[op.field] = op.value
        return ApplyResult(True, "students", op.student_id, "update")

    def _upsert_grade(self, op: UpsertGrade) -> ApplyResult:
        if op.student_id not in self.tables["students"]:
            raise SchemaViolation("UnknownStudent")
        if op.course_id not in self.tables["courses"]:
            raise SchemaViolation("UnknownCourse")
        key = grade_key(op.student_id, op.course_id, op.term)
        grades = self.tables["grades"]
        existing = grades.get(key)
        grades[key] = {
            "studentId": op.student_id,
            "courseId": op.course_id,
            "term": op.term,
            "score": op.score,
            "letter": op.letter,
            "attachmentCid": existing["attachmentCid"] if existing else "",
        }
        return ApplyResult(True, "grades", key, "update" if existing else "insert")

    def _attach_file(self, op: AttachFile) -> ApplyResult:
        if op.student_id not in self.tables["students"]:
            raise SchemaViolation("UnknownStudent")
        prefix = f"{op.student_id}|{op.course_id}|"
        grade_keys = [k for k in self.tables["grades"] if k.startswith(prefix)]
        if not grade_keys:
            raise SchemaViolation("NoGradeRow")
        cid_hex = op.cid.hex()
        self.tables["attachments"][cid_hex] = {
            "cid": cid_hex,
            "sizeBytes": op.size_bytes,
            "mediaLabel": op.media_label,
        }
        # Several terms may match; link the greatest term key deterministically.
        self.tables["grades"][max(grade_keys)]["attachmentCid"] = cid_hex
        return ApplyResult(True, "attachments", cid_hex, "insert")

    def _audit_repair(self, op: AuditRepair) -> ApplyResult:
        if op.table not in DATA_TABLES:
            raise SchemaViolation("UnknownTable")
        _, columns = TABLE_SCHEMAS[op.table]
        table = self.tables[op.table]
        if op.field == ROW_FIELD:
            if op.new_value == "":
                if op.row_key not in table:
                    raise SchemaViolation("UnknownRow")
                del table[op.row_key]
                return ApplyResult(True, op.table, op.row_key, "delete")
            row = _coerce_row(op.table, json.loads(op.new_value))
            if row_key_for(op.table, row) != op.row_key:
                raise SchemaViolation("RowKeyMismatch")
            table[op.row_key] = row
            return ApplyResult(True, op.table, op.row_key, "insert")
        if op.field not in columns:
            raise SchemaViolation("UnknownField")
        row = table.get(op.row_key)
        if row is None:
            raise SchemaViolation("UnknownRow")
        value: Union[str, int, list] = op.new_value
        if op.field in _INT_COLUMNS:
            value = int(op.new_value)
        elif op.field == "courses":
            value = json.loads(op.new_value)
        row[op.field] = value
        return ApplyResult(True, op.table, op.row_key, "update")

    def _log(self, ev: ChainEvent, status: str) -> None:
        self.oplog.append(
            {
                "seq": len(self.oplog),
                "actor": ev.actor.hex(),
                "opKind": ev.op.KIND,
                "startTime": ev.timestamp,
                "blockNumber": ev.block_height,
                "txHash": ev.tx_hash.hex(),
                "status": status,
            }
        )

    def log_read_op(self, actor_hex: str, op_kind: str, start_time: int, block_number: int) -> None:
        """Node-local log entry for a read-side operation (no chain event)."""
        self.oplog.append(
            {
                "seq": len(self.oplog),
                "actor": actor_hex,
                "opKind": op_kind,
                "startTime": start_time,
                "blockNumber": block_number,
                "txHash": "0" * 64,
                "status": "ok",
            }
        )

    # -- direct access (tamper injection, audit repair) ------------------

    def rows(self, table: str) -> dict:
        if table == "oplog":
            return {f"{r['seq']:012d}": r for r in self.oplog}
        if table not in self.tables:
            raise UnknownTable(table)
        return self.tables[table]

    def set_field(self, table: str, row_key: str, field_name: str, value) -> None:
        """Direct write bypassing event application (faults / audit repair)."""
        self.rows(table)[row_key][field_name] = value

    def reset_from(self, other: "FinalStateDb") -> None:
        """Replace all contents from another instance (reorg rebuild)."""
        self.tables = {name: {k: dict(r) for k, r in tbl.items()} for name, tbl in other.tables.items()}
        self.oplog = [dict(r) for r in other.oplog]

    def copy(self) -> "FinalStateDb":
        dup = FinalStateDb(staff_name_lookup=self._staff_name_lookup)
        dup.reset_from(self)
        return dup

    # -- queries ---------------------------------------------------------

    def query(self, table: str, predicate: Optional[dict] = None) -> list:
        """Rows matching a field-equality conjunction, sorted by primary key."""
        if table not in ALL_TABLES:
            raise UnknownTable(table)
        _, columns = TABLE_SCHEMAS[table]
        predicate = predicate or {}
        for name in predicate:
            if name not in columns:
                raise UnknownField(name)
        rows = self.rows(table)
        out = []
        for key in sorted(rows):
            row = rows[key]
            if all(row.get(f) == v for f, v in predicate.items()):
                out.append(dict(row))
        return out

    # -- transcript export -------------------------------------------------

    def export_transcript(
        self,
        student_id: str,
        course_ids: Iterable[str],
        *,
        issued_at: int,
        actor_hex: str = "",
        block_number: int = 0,
    ) -> TranscriptDoc:
        student = self.tables["students"].get(student_id)
        if student is None:
            raise UnknownStudent(student_id)
        selected = sorted(set(course_ids))
        rows = []
        for course_id in selected:
            prefix = f"{student_id}|{course_id}|"
            matches = [k for k in self.tables["grades"] if k.startswith(prefix)]
            if not matches:
                raise MissingGrade(course_id)
            for key in matches:
                g = self.tables["grades"][key]
                course = self.tables["courses"].get(course_id, {})
                rows.append(
                    {
                        "courseId": course_id,
                        "title": course.get("title", ""),
                        "term": g["term"],
                        "score": g["score"],
                        "letter": g["letter"],
                    }
                )
        rows.sort(key=lambda r: (r["term"], r["courseId"]))
        rows_t = tuple(rows)
        doc = TranscriptDoc(
            student_id=student_id,
            student_name=student["name"],
            rows=rows_t,
            issued_at=issued_at,
            digest=_transcript_digest(student_id, student["name"], rows_t, issued_at),
        )
        self.log_read_op(actor_hex, "ExportTranscript", issued_at, block_number)
        return doc

    # -- digests ---------------------------------------------------------

    def row_encoding(self, table: str, row_key: str) -> bytes:
        return canonical_encode(self.rows(table)[row_key])

    def table_digest(self, table: str) -> Hash128:
        rows = self.rows(table)
        payload = b"".join(canonical_encode(rows[k]) for k in sorted(rows))
        return digest_md5(payload)

    def chunk_checksums(self, table: str, chunk_size: int) -> list:
        if chunk_size < 1:
            raise BadChunkSize(str(chunk_size))
        rows = self.rows(table)
        keys = sorted(rows)
        out = []
        for idx in range(0, max(len(keys), 1), chunk_size):
            chunk_keys = keys[idx:idx + chunk_size]
            if not chunk_keys and idx > 0:
                break
            payload = b"".join(canonical_encode(rows[k]) for k in chunk_keys)
            out.append(
                TableChecksum(
                    table=table,
                    chunk_index=idx // chunk_size,
                    first_key=chunk_keys[0] if chunk_keys else "",
                    last_key=chunk_keys[-1] if chunk_keys else "",
                    row_count=len(chunk_keys),
                    digest=digest_md5(payload),
                )
            )
        return out

    # -- snapshots ---------------------------------------------------------

    SNAPSHOT_HEADER = "educhain-snapshot v1"

    def to_snapshot_text(self) -> str:
        """Deterministic, diffable dump: fixed table order, rows in key order,
        rows as sorted JSON."""
        lines = [self.SNAPSHOT_HEADER]
        for table in ALL_TABLES:
            rows = self.rows(table)
            lines.append(f"table {table} {len(rows)}")
            for key in sorted(rows):
                lines.append(
                    f"{key}\t{json.dumps(rows[key], sort_keys=True, separators=(',', ':'))}"
                )
        lines.append("end")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_snapshot_text(cls, text: str) -> "FinalStateDb":
        lines = text.splitlines()
        if not lines or lines[0] != cls.SNAPSHOT_HEADER:
            raise ValueError("not a v1 snapshot")
        db = cls()
        current = None
        for line in lines[1:]:
            if line == "end":
                break
            if line.startswith("table "):
                current = line.split()[1]
                if current not in ALL_TABLES:
                    raise ValueError(f"unknown table {current}")
                continue
            key, _, payload = line.partition("\t")
            row = json.loads(payload)
            if current == "oplog":
                db.oplog.append(row)
            else:
                db.tables[current][key] = row
        return db


def _coerce_row(table: str, row: dict) -> dict:
    _, columns = TABLE_SCHEMAS[table]
    if set(row) != set(columns):
        raise SchemaViolation("BadRowShape")
    out = {}
    for col in columns:
        value = row[col]
        if col in _INT_COLUMNS:
            value = int(value)
        out[col] = value
    return out


# Module-level forms mirroring the operation contracts (thin wrappers over
# the methods; some callers read better with functions).

def apply_event(db: FinalStateDb, ev: ChainEvent) -> ApplyResult:
    return db.apply_event(ev)


def query(db: FinalStateDb, table: str, predicate: Optional[dict] = None) -> list:
    return db.query(table, predicate)


def table_digest(db: FinalStateDb, table: str) -> Hash128:
    return db.table_digest(table)


def chunk_checksums(db: FinalStateDb, table: str, chunk_size: int) -> list:
    return db.chunk_checksums(table, chunk_size)
