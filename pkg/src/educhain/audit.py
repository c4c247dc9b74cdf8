"""Replica consistency audit: the second consensus layer.

Each round collects signed per-table digest votes from every reachable
replica, picks the consensus state by strict majority, and escalates to the
chain-replay oracle whenever the vote is ambiguous or any replica diverges.
Divergent rows are localized by comparing chunked checksums over the union
of row keys, halving the chunk size until single rows are isolated, so a
handful of bad rows costs a logarithmic number of checksum exchanges rather
than a full table transfer.

Ground truth hierarchy: the chain outranks the vote. The database is a cache
of the chain, so replay decides every adjudication; voting is only the cheap
first pass that usually avoids a replay. A replica that diverges because it
has not yet seen recent blocks is flagged MissingBlocks and left to catch up
instead of being "repaired" backwards.

Repairs are double-writes: the divergent row is fixed in place and an
AuditRepair transaction is submitted so the correction itself becomes part
of the permanent chain record.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .ledger import (
    AuditRepair,
    ChainConfig,
    Hash128,
    KeyPair,
    canonical_encode,
    digest_md5,
    sign,
    verify_signature,
)
from .node import InvalidChain, KeyRegistry, PrivateNode, Role, replay_state
from .statestore import ROW_FIELD, FinalStateDb

log = logging.getLogger(__name__)


class NoNodesReachable(Exception):
    pass


class TablesEqual(Exception):
    pass


class ChainUnavailable(Exception):
    pass


class PermissionDenied(Exception):
    pass


@dataclass(frozen=True)
class AuditTarget:
    """A replica as the audit sees it: the node plus its vote-signing key."""

    node: PrivateNode
    vote_key: KeyPair


@dataclass(frozen=True)
class DigestVote:
    round_id: str
    node_id: str
    table: str
    digest: Hash128
    signature: bytes

    def signing_map(self) -> dict:
        return {
            "roundId": self.round_id,
            "nodeId": self.node_id,
            "table": self.table,
            "digest": bytes(self.digest),
        }

    def field_map(self) -> dict:
        fm = self.signing_map()
        fm["signature"] = self.signature
        return fm


def make_digest_vote(key: KeyPair, round_id: str, node_id: str, table: str, digest: Hash128) -> DigestVote:
    unsigned = DigestVote(round_id, node_id, table, digest, b"")
    return DigestVote(
        round_id, node_id, table, digest, sign(key, canonical_encode(unsigned.signing_map()))
    )


def verify_vote(pubkey: bytes, vote: DigestVote) -> bool:
    return verify_signature(pubkey, canonical_encode(vote.signing_map()), vote.signature)


@dataclass(frozen=True)
class CollectOutcome:
    votes: tuple
    abstained: tuple    # node ids that were unreachable
    forged: tuple       # node ids whose vote signature failed


def collect_digests(
    targets: Iterable[AuditTarget], table: str, round_id: str, vote_pubkeys: dict
) -> CollectOutcome:
    """One signed vote per reachable replica; unreachable replicas abstain;
    votes that fail signature verification are discarded and flagged."""
    votes, abstained, forged = [], [], []
    for target in sorted(targets, key=lambda t: t.node.node_id):
        node = target.node
        if not node.reachable:
            abstained.append(node.node_id)
            continue
        vote = make_digest_vote(
            target.vote_key, round_id, node.node_id, table, node.db.table_digest(table)
        )
        expected = vote_pubkeys.get(node.node_id)
        if expected is None or not verify_vote(expected, vote):
            forged.append(node.node_id)
            continue
        votes.append(vote)
    if not votes and not forged and abstained:
        raise NoNodesReachable(table)
    return CollectOutcome(tuple(votes), tuple(abstained), tuple(forged))


@dataclass(frozen=True)
class ConsensusOutcome:
    digest: Optional[Hash128]       # None = Ambiguous
    divergent: frozenset
    ambiguous: bool


def vote_consensus(votes: Iterable[DigestVote]) -> ConsensusOutcome:
    """Strict majority of valid votes; no strict majority means Ambiguous
    and the caller escalates to the replay oracle."""
    votes = list(votes)
    tally: dict = {}
    for vote in votes:
        tally[vote.digest] = tally.get(vote.digest, 0) + 1
    if not tally:
        return ConsensusOutcome(None, frozenset(), True)
    top_digest, top_count = max(tally.items(), key=lambda kv: (kv[1], bytes(kv[0])))
    if top_count * 2 <= len(votes):
        return ConsensusOutcome(None, frozenset(), True)
    divergent = frozenset(v.node_id for v in votes if v.digest != top_digest)
    return ConsensusOutcome(top_digest, divergent, False)


@dataclass(frozen=True)
class LocalizeOutcome:
    row_keys: tuple      # exact differing keys, sorted
    levels: int          # narrowing levels below the first pass
    exchanges: int       # chunk digest comparisons performed


def _side_digest(db: FinalStateDb, table: str, keys: list) -> Hash128:
    rows = db.rows(table)
    payload = b"".join(canonical_encode(rows[k]) for k in keys if k in rows)
    return digest_md5(payload)


def localize_divergence(
    local_db: FinalStateDb, reference_db: FinalStateDb, table: str, chunk_size: int = 64
) -> LocalizeOutcome:
    """Exact differing row keys between two replicas of one table.

    Chunks are slices of the union of both sides' keys, so inserts and
    deletes land in a definite chunk instead of shifting alignment. Each
    differing chunk recurses at half the size until single keys remain."""
    if local_db.table_digest(table) == reference_db.table_digest(table):
        raise TablesEqual(table)
    union = sorted(set(local_db.rows(table)) | set(reference_db.rows(table)))
    divergent: list = []
    stats = {"exchanges": 0, "levels": 0}

    def narrow(keys: list, size: int, depth: int) -> None:
        stats["levels"] = max(stats["levels"], depth)
        for start in range(0, len(keys), size):
            chunk = keys[start:start + size]
            stats["exchanges"] += 1
            if _side_digest(local_db, table, chunk) == _side_digest(reference_db, table, chunk):
                continue
            if size == 1:
                divergent.extend(chunk)
            else:
                # halve, but never past what the chunk actually holds: a
                # 2-row chunk should not cascade through 32, 16, 8 ...
                narrow(chunk, max(1, min(size // 2, len(chunk) // 2)), depth + 1)

    narrow(union, max(chunk_size, 1), 0)
    return LocalizeOutcome(tuple(sorted(divergent)), stats["levels"], stats["exchanges"])


@dataclass(frozen=True)
class AdjudicateOutcome:
    authoritative: dict             # rowKey -> row dict | None (absent in oracle)
    oracle_digest: Hash128
    oracle_height: int
    flags: dict                     # nodeId -> "MissingBlocks"
    oracle_db: FinalStateDb


def adjudicate(
    targets: Iterable[AuditTarget],
    table: str,
    row_keys: Iterable[str],
    cfg: ChainConfig,
    registry: KeyRegistry,
) -> AdjudicateOutcome:
    """Authoritative values come from replaying the longest valid chain.
    Replicas whose chain is shorter than the oracle's are flagged
    MissingBlocks: their divergence is lag, not tampering."""
    reachable = [t for t in targets if t.node.reachable]
    if not reachable:
        raise ChainUnavailable("no reachable node to read a chain from")
    oracle_db = None
    oracle_height = -1
    for target in sorted(reachable, key=lambda t: (-t.node.height(), t.node.node_id)):
        try:
            oracle_db = replay_state(target.node.chain, cfg, registry)
            oracle_height = target.node.height()
            break
        except InvalidChain as exc:
            log.warning("chain of %s failed replay: %s", target.node.node_id, exc)
    if oracle_db is None:
        raise ChainUnavailable("every reachable chain failed validation")
    rows = oracle_db.rows(table)
    authoritative = {key: (dict(rows[key]) if key in rows else None) for key in row_keys}
    flags = {
        t.node.node_id: "MissingBlocks"
        for t in reachable
        if t.node.height() < oracle_height
    }
    return AdjudicateOutcome(
        authoritative=authoritative,
        oracle_digest=oracle_db.table_digest(table),
        oracle_height=oracle_height,
        flags=flags,
        oracle_db=oracle_db,
    )


@dataclass(frozen=True)
class Fix:
    row_key: str
    expected_local: Optional[dict]   # row at adjudication time; None = absent
    authoritative: Optional[dict]    # None = delete


@dataclass(frozen=True)
class RepairOutcome:
    applied: int
    stale: tuple


def _row_json(row: Optional[dict]) -> str:
    return "" if row is None else json.dumps(row, sort_keys=True, separators=(",", ":"))


def repair(
    target: AuditTarget,
    table: str,
    fixes: Iterable[Fix],
    auditor_key: KeyPair,
    registry: KeyRegistry,
    round_id: str,
    tx_submit: Callable[[AuditRepair], bool],
) -> RepairOutcome:
    """Apply adjudicated fixes to one replica. Auditor-only. Each applied fix
    is also submitted as an AuditRepair transaction so the correction lands
    on the chain. A row that changed since adjudication is reported stale;
    re-run the round instead of guessing."""
    info = registry.get(auditor_key.account_id)
    if info is None or info.role is not Role.AUDITOR:
        raise PermissionDenied("repair requires the Auditor role")
    db = target.node.db
    applied = 0
    stale = []
    for fix in sorted(fixes, key=lambda f: f.row_key):
        current = db.rows(table).get(fix.row_key)
        if current != fix.expected_local:
            stale.append(fix.row_key)
            continue
        op = AuditRepair(
            table=table,
            row_key=fix.row_key,
            field=ROW_FIELD,
            old_value=_row_json(fix.expected_local),
            new_value=_row_json(fix.authoritative),
            audit_id=round_id,
        )
        if not tx_submit(op):
            log.warning("repair tx for %s/%s not accepted", table, fix.row_key)
        if fix.authoritative is None:
            del db.rows(table)[fix.row_key]
        else:
            db.rows(table)[fix.row_key] = dict(fix.authoritative)
        applied += 1
    return RepairOutcome(applied=applied, stale=tuple(stale))


@dataclass
class AuditReport:
    round_id: str
    table: str
    consensus_digest: Optional[Hash128]
    adjudication_source: str             # MajorityVote | ReplayOracle
    votes: tuple
    abstained: tuple
    forged: tuple
    divergent: tuple
    flags: dict                          # nodeId -> MissingBlocks
    localized: dict                      # nodeId -> ((rowKey, localJson, authJson), ...)
    repairs_applied: int
    stale: tuple
    exchanges: int
    levels: int
    converged: bool
    wall_ms: float = field(default=0.0, compare=False)

    def render_text(self) -> str:
        """Deterministic report document; wall time deliberately excluded."""
        lines = [
            "audit-report v1",
            f"round {self.round_id}",
            f"table {self.table}",
            f"consensus {self.consensus_digest.hex() if self.consensus_digest else 'ambiguous'}",
            f"source {self.adjudication_source}",
        ]
        for vote in sorted(self.votes, key=lambda v: v.node_id):
            lines.append(f"vote {vote.node_id} {vote.digest.hex()}")
        for node_id in self.abstained:
            lines.append(f"abstained {node_id}")
        for node_id in self.forged:
            lines.append(f"forged {node_id}")
        for node_id in self.divergent:
            lines.append(f"divergent {node_id}")
        for node_id in sorted(self.flags):
            lines.append(f"flag {node_id} {self.flags[node_id]}")
        for node_id in sorted(self.localized):
            for row_key, local_json, auth_json in self.localized[node_id]:
                lines.append(f"row {node_id} {row_key} {local_json or '-'} => {auth_json or '-'}")
        lines.append(f"repairs {self.repairs_applied} stale {len(self.stale)}")
        lines.append(f"exchanges {self.exchanges} levels {self.levels}")
        lines.append(f"converged {'yes' if self.converged else 'no'}")
        lines.append("end")
        return "\n".join(lines) + "\n"


def run_audit_round(
    targets: Iterable[AuditTarget],
    tables: Iterable[str],
    chunk_size: int,
    *,
    round_id: str,
    cfg: ChainConfig,
    registry: KeyRegistry,
    vote_pubkeys: dict,
    auditor_key: Optional[KeyPair] = None,
    tx_submit: Optional[Callable[[AuditRepair], bool]] = None,
) -> list:
    """collect -> vote -> (escalate to replay, localize, adjudicate, repair)
    per table. Repairs run only when an auditor key and a transaction sink
    are supplied; detection alone needs neither."""
    targets = list(targets)
    reports = []
    for table in tables:
        started = time.monotonic()
        collected = collect_digests(targets, table, round_id, vote_pubkeys)
        consensus = vote_consensus(collected.votes)
        divergent = set(consensus.divergent)
        source = "MajorityVote"
        consensus_digest = consensus.digest
        flags: dict = {}
        localized: dict = {}
        repairs_applied = 0
        stale: list = []
        exchanges = 0
        levels = 0

        if consensus.ambiguous or divergent:
            adjudication = adjudicate(targets, table, (), cfg, registry)
            if consensus.ambiguous or adjudication.oracle_digest != consensus.digest:
                source = "ReplayOracle"
            consensus_digest = adjudication.oracle_digest
            flags = dict(adjudication.flags)
            divergent = {
                v.node_id for v in collected.votes if v.digest != consensus_digest
            }
            by_id = {t.node.node_id: t for t in targets}
            for node_id in sorted(divergent):
                if flags.get(node_id) == "MissingBlocks":
                    continue       # lag, not tampering: catches up on its own
                target = by_id[node_id]
                outcome = localize_divergence(
                    target.node.db, adjudication.oracle_db, table, chunk_size
                )
                exchanges += outcome.exchanges
                levels = max(levels, outcome.levels)
                oracle_rows = adjudication.oracle_db.rows(table)
                local_rows = target.node.db.rows(table)
                fixes = [
                    Fix(
                        row_key=key,
                        expected_local=dict(local_rows[key]) if key in local_rows else None,
                        authoritative=dict(oracle_rows[key]) if key in oracle_rows else None,
                    )
                    for key in outcome.row_keys
                ]
                localized[node_id] = tuple(
                    (f.row_key, _row_json(f.expected_local), _row_json(f.authoritative))
                    for f in fixes
                )
                if auditor_key is not None and tx_submit is not None:
                    result = repair(
                        target, table, fixes, auditor_key, registry, round_id, tx_submit
                    )
                    repairs_applied += result.applied
                    stale.extend(result.stale)

        reachable = [t for t in targets if t.node.reachable]
        unflagged = [t for t in reachable if flags.get(t.node.node_id) != "MissingBlocks"]
        converged = bool(unflagged) and consensus_digest is not None and all(
            t.node.db.table_digest(table) == consensus_digest for t in unflagged
        )
        reports.append(
            AuditReport(
                round_id=round_id,
                table=table,
                consensus_digest=consensus_digest,
                adjudication_source=source,
                votes=collected.votes,
                abstained=collected.abstained,
                forged=collected.forged,
                divergent=tuple(sorted(divergent)),
                flags=flags,
                localized=localized,
                repairs_applied=repairs_applied,
                stale=tuple(stale),
                exchanges=exchanges,
                levels=levels,
                converged=converged,
                wall_ms=(time.monotonic() - started) * 1000.0,
            )
        )
    return reports
