"""Per-university hub node bridging the private chain and the consortium log.

The hub holds one replica of its university's private chain (fed by gossip
only; it never accepts user transactions), snapshots credentials from the
final-state database at period boundaries, publishes commitment batches to
the ordering log, and services credit-transfer requests addressed to its
university.

Transfer scope rule: the requested courses must all sit in one term, and the
response carries the student's full transcript for that term. That makes the
response bytes identical to what the period commitment was computed over, so
the requester can check the payload against the published digest instead of
trusting the responding school.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

from .consortium import (
    CommitmentBatch,
    CommitmentRecord,
    ConsortiumDirectory,
    MemberId,
    MemberLog,
    PendingEntry,
    SubmitOutcome,
    TransferRequest,
    credential_digest,
    diploma_credential_fields,
    make_pending_entry,
    make_transfer_response,
    seal_to,
    transcript_credential_fields,
)
from .ledger import KeyPair, canonical_encode, digest_sha256
from .node import PrivateNode

log = logging.getLogger(__name__)


class HubIsolationError(Exception):
    """Raised when something tries to push a user transaction through the hub."""


@dataclass(frozen=True)
class PublishOutcome:
    accepted: bool
    seq: int = -1
    reason: str = ""


class HubNode:
    def __init__(
        self,
        member_name: str,
        directory: ConsortiumDirectory,
        ordering_submit: Callable[[PendingEntry], SubmitOutcome],
        private_node: PrivateNode,
        member_log: MemberLog,
        signing_key: KeyPair,
        rng: Optional[Callable[[int], bytes]] = None,
    ):
        self.member_name = member_name
        self.directory = directory
        self._submit = ordering_submit
        self.node = private_node
        self.log = member_log
        self.key = signing_key
        self._rng = rng
        self.last_published_period = ""
        self._published_periods: set = set()
        self._published_diplomas: set = set()

    @property
    def member_id(self) -> MemberId:
        return self.directory.get(self.member_name).member_id

    # The hub is "not involved in typical tasks": no user transaction path.
    def submit_transaction(self, tx):
        raise HubIsolationError(f"hub {self.member_name} does not accept user transactions")

    # -- credential snapshots ------------------------------------------------

    def snapshot_credentials(self, period: str) -> list:
        """(credential fields, CommitmentRecord) pairs for the period: one
        transcript per student with grades in it, plus a diploma for each
        newly degree-awarded student. Pure read; deterministic given the
        database."""
        db = self.node.db
        out = []
        by_student: dict = {}
        for row in db.query("grades", {"term": period}):
            by_student.setdefault(row["studentId"], []).append(row)
        for student_id in sorted(by_student):
            student = db.tables["students"].get(student_id)
            if student is None:
                # grade without a student row can only come from tampering;
                # the audit owns that case, the snapshot just skips it
                log.warning("%s: grade rows for unknown student %s", self.member_name, student_id)
                continue
            fields = transcript_credential_fields(
                student_id, student["name"], period, by_student[student_id]
            )
            out.append(
                (
                    fields,
                    CommitmentRecord(
                        subject_id=student_id,
                        credential_type="Transcript",
                        period=period,
                        digest=credential_digest(fields),
                        issuer=self.member_id,
                    ),
                )
            )
        for row in db.query("students"):
            if row["degreeAwarded"] and row["studentId"] not in self._published_diplomas:
                fields = diploma_credential_fields(
                    row["studentId"], row["name"], period, row["degreeAwarded"]
                )
                out.append(
                    (
                        fields,
                        CommitmentRecord(
                            subject_id=row["studentId"],
                            credential_type="Diploma",
                            period=period,
                            digest=credential_digest(fields),
                            issuer=self.member_id,
                        ),
                    )
                )
        return out

    def publish_commitments(self, period: str) -> PublishOutcome:
        """One commitment batch per period, ever. A period with no
        credentials is marked published without a consortium entry."""
        if period in self._published_periods or (
            self.last_published_period and period <= self.last_published_period
        ):
            return PublishOutcome(False, reason=f"AlreadyPublished:{period}")
        snapshot = self.snapshot_credentials(period)
        records = tuple(record for _, record in snapshot)
        if not records:
            self._mark_published(period)
            return PublishOutcome(True, reason="EmptyPeriod")
        pending = make_pending_entry(self.key, self.member_id, CommitmentBatch(period, records))
        outcome = self._submit(pending)
        if not outcome.accepted:
            return PublishOutcome(False, reason=outcome.reason)
        self._mark_published(period)
        for _, record in snapshot:
            if record.credential_type == "Diploma":
                self._published_diplomas.add(record.subject_id)
        return PublishOutcome(True, seq=outcome.seq)

    def _mark_published(self, period: str) -> None:
        self._published_periods.add(period)
        if period > self.last_published_period:
            self.last_published_period = period

    # -- credit transfers ---------------------------------------------------

    def handle_transfer_request(self, req: TransferRequest) -> tuple:
        """(TransferResponse, "ok") on success, (None, reason) on refusal.
        The response is also submitted to the ordering log."""
        if req.home_school != self.member_id:
            return None, "WrongHome"
        db = self.node.db
        student = db.tables["students"].get(req.subject_id)
        if student is None:
            return None, "UnknownSubject"
        if not req.course_scope:
            return None, "ScopeUnavailable:empty"
        terms = set()
        for course_id in req.course_scope:
            rows = db.query("grades", {"studentId": req.subject_id, "courseId": course_id})
            if not rows:
                return None, f"ScopeUnavailable:{course_id}"
            terms.update(r["term"] for r in rows)
        if len(terms) != 1:
            return None, "ScopeUnavailable:spans-terms"
        period = terms.pop()
        period_rows = db.query("grades", {"studentId": req.subject_id, "term": period})
        fields = transcript_credential_fields(req.subject_id, student["name"], period, period_rows)
        plaintext = canonical_encode(fields)
        host = self.directory.get(req.host_school.name)
        if host is None:
            return None, "UnknownRequester"
        sealed = seal_to(host.x_pub, plaintext, rng=self._rng)
        response = make_transfer_response(
            self.key, req.channel_id, digest_sha256(plaintext), sealed
        )
        outcome = self._submit(make_pending_entry(self.key, self.member_id, response))
        if not outcome.accepted:
            return None, outcome.reason
        return response, "ok"

    def service_transfers(self) -> list:
        """Answer every open channel addressed to this university, in
        deterministic channel order. Returns (channelId, status) pairs."""
        results = []
        for req in self.log.pending_requests_for(self.member_name):
            response, status = self.handle_transfer_request(req)
            results.append((req.channel_id, status))
            if response is None:
                log.info(
                    "%s: refused transfer on channel %s: %s",
                    self.member_name,
                    req.channel_id.hex()[:12],
                    status,
                )
        return results
