"""Per-university private chain node.

Mempool, PoW block production, longest-chain fork choice with a first-seen
tiebreak, orphan buffering, role-based permission checks, event subscriptions
feeding the final-state store, and the chain-replay oracle used by the audit.

A node is single-writer: the harness (or gateway) serializes all mutating
calls per node. Transactions and blocks cross node boundaries only as
canonical byte encodings; the transport itself is injected by the caller.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional

from .ledger import (
    AttachFile,
    AuditRepair,
    Block,
    BlockHeader,
    ChainConfig,
    Hash256,
    RecordOp,
    RegisterCourse,
    RegisterStudent,
    Transaction,
    UpdateProfile,
    UpsertGrade,
    Violation,
    block_hash,
    digest_sha256,
    genesis_block,
    pow_seal,
    tx_root,
    validate_block,
    verify_signature,
)
from .statestore import (
    ChainEvent,
    FinalStateDb,
    RollbackEvent,
    STUDENT_EDITABLE_FIELDS,
)

log = logging.getLogger(__name__)

ORPHAN_BUFFER_LIMIT = 256


class Role(str, Enum):
    STUDENT = "Student"
    STAFF = "Staff"
    REGISTRAR = "Registrar"
    AUDITOR = "Auditor"


@dataclass(frozen=True)
class AccountInfo:
    pubkey: bytes
    role: Role
    subject_id: str      # studentId / staffId binding; free-form for others
    display_name: str


class KeyRegistry:
    """Account directory distributed out-of-band with genesis; identical on
    every node of a university."""

    def __init__(self):
        self._accounts: dict = {}
        self._by_subject: dict = {}

    def register(self, pubkey: bytes, role: Role, subject_id: str, display_name: str) -> Hash256:
        account_id = digest_sha256(pubkey)
        info = AccountInfo(pubkey=pubkey, role=role, subject_id=subject_id, display_name=display_name)
        self._accounts[account_id] = info
        self._by_subject[(role, subject_id)] = account_id
        return account_id

    def get(self, account_id: Hash256) -> Optional[AccountInfo]:
        return self._accounts.get(account_id)

    def pubkey(self, account_id: Hash256) -> Optional[bytes]:
        info = self._accounts.get(account_id)
        return info.pubkey if info else None

    def account_for(self, role: Role, subject_id: str) -> Optional[Hash256]:
        return self._by_subject.get((role, subject_id))

    def staff_name(self, staff_id: str) -> Optional[str]:
        account_id = self._by_subject.get((Role.STAFF, staff_id))
        if account_id is None:
            return None
        return self._accounts[account_id].display_name

    def __len__(self):
        return len(self._accounts)


@dataclass(frozen=True)
class PermissionDecision:
    allowed: bool
    reason: str = ""


def check_permission(
    registry: KeyRegistry,
    actor: Hash256,
    op: RecordOp,
    course_owner: Optional[Callable[[str], Optional[str]]] = None,
) -> PermissionDecision:
    """Role table with ownership sub-checks.

    Students edit contact fields on their own row; staff grade and attach on
    courses they own (ownership resolved against chain state through
    `course_owner`); the registrar creates students and courses and awards
    degrees; the auditor alone writes repairs. Everything else is denied.
    """
    info = registry.get(actor)
    if info is None:
        return PermissionDecision(False, "UnknownAccount")

    if isinstance(op, (RegisterStudent, RegisterCourse)):
        if info.role is Role.REGISTRAR:
            return PermissionDecision(True)
        return PermissionDecision(False, "RoleForbidden")

    if isinstance(op, UpdateProfile):
        if info.role is Role.STUDENT:
            if op.student_id != info.subject_id:
                return PermissionDecision(False, "NotOwnProfile")
            if op.field not in STUDENT_EDITABLE_FIELDS:
                return PermissionDecision(False, "FieldNotEditable")
            return PermissionDecision(True)
        if info.role is Role.REGISTRAR and op.field == "degreeAwarded":
            return PermissionDecision(True)
        return PermissionDecision(False, "RoleForbidden")

    if isinstance(op, (UpsertGrade, AttachFile)):
        if info.role is not Role.STAFF:
            return PermissionDecision(False, "RoleForbidden")
        owner = course_owner(op.course_id) if course_owner else None
        if owner is None:
            return PermissionDecision(False, "CourseUnknown")
        if owner != info.subject_id:
            return PermissionDecision(False, "NotCourseOwner")
        return PermissionDecision(True)

    if isinstance(op, AuditRepair):
        if info.role is Role.AUDITOR:
            return PermissionDecision(True)
        return PermissionDecision(False, "RoleForbidden")

    return PermissionDecision(False, "OpNotPermitted")


class Mempool:
    """Pending transactions keyed by (sender, nonce), FIFO drain order."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._pending: OrderedDict = OrderedDict()

    def __len__(self):
        return len(self._pending)

    def __contains__(self, key):
        return key in self._pending

    def pending_for(self, sender: Hash256) -> int:
        return sum(1 for (s, _) in self._pending if s == sender)

    def add(self, tx: Transaction, evict_on_full: bool = False) -> str:
        """Returns "added", "duplicate" or "full". With evict_on_full the
        oldest entry is dropped instead of refusing (gossip path)."""
        key = (tx.sender, tx.nonce)
        if key in self._pending:
            return "duplicate"
        if len(self._pending) >= self.capacity:
            if not evict_on_full:
                return "full"
            evicted_key, _ = self._pending.popitem(last=False)
            log.debug("mempool evicted %s/%d", evicted_key[0].hex()[:8], evicted_key[1])
        self._pending[key] = tx
        return "added"

    def drain(self, max_count: int) -> list:
        out = []
        while self._pending and len(out) < max_count:
            _, tx = self._pending.popitem(last=False)
            out.append(tx)
        return out

    def remove(self, sender: Hash256, nonce: int) -> None:
        self._pending.pop((sender, nonce), None)

    def items(self) -> list:
        return list(self._pending.values())


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    reason: str = ""
    tx_hash: Optional[Hash256] = None


@dataclass(frozen=True)
class ImportResult:
    status: str                      # applied | queued | rejected | duplicate
    canonical: bool = False
    reorged: bool = False
    rollback_height: int = -1
    violations: tuple = ()


class InvalidChain(Exception):
    def __init__(self, violations):
        super().__init__("; ".join(f"{v.code}:{v.detail}" for v in violations))
        self.violations = tuple(violations)


@dataclass
class _Subscription:
    callback: Callable
    kinds: Optional[frozenset]


def _check_and_apply_block(
    db: FinalStateDb,
    nonces: dict,
    block: Block,
    registry: KeyRegistry,
) -> tuple:
    """Sequentially re-check nonce and permission for every tx, applying
    events as it goes (so intra-block ordering works, e.g. RegisterCourse
    then UpsertGrade). Returns (violations, events); on any violation the
    caller must discard db/nonces, they are partially mutated."""
    violations = []
    events = []
    for i, tx in enumerate(block.txs):
        if registry.get(tx.sender) is None:
            violations.append(Violation("UnknownAccount", str(i)))
            return violations, events
        expected = nonces.get(tx.sender, 0)
        if tx.nonce != expected:
            violations.append(Violation("BadNonce", str(i)))
            return violations, events
        decision = check_permission(
            registry,
            tx.sender,
            tx.op,
            course_owner=lambda cid: db.tables["courses"].get(cid, {}).get("ownerStaffId"),
        )
        if not decision.allowed:
            violations.append(Violation("PermissionDenied", f"{i}:{decision.reason}"))
            return violations, events
        nonces[tx.sender] = expected + 1
        event = ChainEvent(
            block_height=block.header.height,
            tx_hash=tx.tx_hash(),
            op=tx.op,
            actor=tx.sender,
            timestamp=tx.timestamp,
        )
        db.apply_event(event)   # schema violations are logged, not fatal
        events.append(event)
    return violations, events


def replay_state(
    chain: Iterable[Block],
    cfg: ChainConfig,
    registry: KeyRegistry,
) -> FinalStateDb:
    """Rebuild a FinalStateDb from scratch: the audit adjudication oracle.

    Validates the chain link-by-link (structure, PoW, signatures, nonces,
    permissions) and folds every event through apply_event. Pure function of
    (chain, cfg, registry)."""
    blocks = list(chain)
    if not blocks:
        return FinalStateDb(staff_name_lookup=registry.staff_name)
    expected_genesis = genesis_block(cfg)
    if block_hash(blocks[0].header) != block_hash(expected_genesis.header):
        raise InvalidChain([Violation("BadGenesis", block_hash(blocks[0].header).hex())])
    db = FinalStateDb(staff_name_lookup=registry.staff_name)
    nonces: dict = {}
    for parent, block in zip(blocks, blocks[1:]):
        structural = validate_block(block, parent.header, cfg, resolve_pubkey=registry.pubkey)
        if structural:
            raise InvalidChain(structural)
        violations, _ = _check_and_apply_block(db, nonces, block, registry)
        if violations:
            raise InvalidChain(violations)
    return db


class PrivateNode:
    """One department-operated replica of a university's private chain."""

    def __init__(
        self,
        node_id: str,
        department_label: str,
        cfg: ChainConfig,
        registry: KeyRegistry,
        clock: Optional[Callable[[], int]] = None,
        mempool_capacity: Optional[int] = None,
    ):
        self.node_id = node_id
        self.department_label = department_label
        self.cfg = cfg
        self.registry = registry
        self.clock = clock or (lambda: 0)
        self.miner_id = digest_sha256(f"node:{node_id}".encode())
        self.mempool = Mempool(mempool_capacity or cfg.max_tx_per_block * 4)

        g = genesis_block(cfg)
        self.chain: list = [g]
        self._index: dict = {block_hash(g.header): g}
        self._heights: dict = {block_hash(g.header): 0}
        self._orphans: OrderedDict = OrderedDict()   # parentHash -> [Block]

        self.db = FinalStateDb(staff_name_lookup=registry.staff_name)
        self.account_nonces: dict = {}
        self._subscribers: list = []
        self._block_hooks: list = []
        self._tx_hooks: list = []
        self.reachable = True

    # -- introspection -----------------------------------------------------

    def tip(self) -> Block:
        return self.chain[-1]

    def tip_hash(self) -> Hash256:
        return block_hash(self.tip().header)

    def height(self) -> int:
        return self.tip().header.height

    def block_by_hash(self, h: Hash256) -> Optional[Block]:
        return self._index.get(h)

    def missing_parents(self) -> list:
        """Parent hashes the orphan buffer is waiting on (harness uses this
        to drive parent fetch after message loss)."""
        return [h for h in self._orphans if h not in self._index]

    # -- wiring --------------------------------------------------------------

    def on_block_produced(self, hook: Callable) -> None:
        self._block_hooks.append(hook)

    def on_tx_accepted(self, hook: Callable) -> None:
        self._tx_hooks.append(hook)

    def subscribe_events(self, callback: Callable, kinds: Optional[Iterable[str]] = None) -> None:
        """Deliver every matching ChainEvent in chain order. Rollback events
        are always delivered regardless of the kind filter."""
        self._subscribers.append(
            _Subscription(callback=callback, kinds=frozenset(kinds) if kinds is not None else None)
        )

    def _emit(self, events) -> None:
        for event in events:
            for sub in self._subscribers:
                if isinstance(event, RollbackEvent) or sub.kinds is None or event.op.KIND in sub.kinds:
                    sub.callback(event)

    # -- transaction intake --------------------------------------------------

    def _admission_check(self, tx: Transaction) -> Optional[str]:
        info = self.registry.get(tx.sender)
        if info is None:
            return "UnknownAccount"
        if not verify_signature(info.pubkey, tx.signing_payload(), tx.signature):
            return "BadSignature"
        expected = self.account_nonces.get(tx.sender, 0) + self.mempool.pending_for(tx.sender)
        if tx.nonce != expected:
            return "BadNonce"
        decision = check_permission(
            self.registry,
            tx.sender,
            tx.op,
            course_owner=lambda cid: self.db.tables["courses"].get(cid, {}).get("ownerStaffId"),
        )
        if not decision.allowed:
            return f"PermissionDenied:{decision.reason}"
        return None

    def submit_transaction(self, tx: Transaction) -> SubmitResult:
        reason = self._admission_check(tx)
        if reason is not None:
            return SubmitResult(False, reason)
        status = self.mempool.add(tx, evict_on_full=False)
        if status == "full":
            return SubmitResult(False, "MempoolFull")
        if status == "duplicate":
            return SubmitResult(False, "BadNonce")
        for hook in self._tx_hooks:
            hook(tx)
        return SubmitResult(True, tx_hash=tx.tx_hash())

    def receive_gossip_tx(self, tx: Transaction) -> bool:
        """Peer-forwarded transaction: same admission rules but overflow
        evicts the oldest entry instead of refusing."""
        if self._admission_check(tx) is not None:
            return False
        return self.mempool.add(tx, evict_on_full=True) == "added"

    # -- block production ------------------------------------------------------

    def produce_block(self) -> Optional[Block]:
        """Mine the next block from the mempool; None when nothing to mine."""
        batch = self.mempool.drain(self.cfg.max_tx_per_block)
        if not batch:
            return None
        parent = self.tip()
        header = BlockHeader(
            height=parent.header.height + 1,
            parent_hash=block_hash(parent.header),
            tx_root=tx_root(batch),
            timestamp=max(self.clock(), parent.header.timestamp),
            difficulty_target=self.cfg.initial_difficulty_target,
            pow_nonce=0,
            miner_id=self.miner_id,
        )
        sealed = pow_seal(header, self.cfg.initial_difficulty_target)
        block = Block(header=sealed, txs=tuple(batch))
        result = self.import_block(block)
        if result.status != "applied" or not result.canonical:
            # Drained txs were checked at submit; a failure here means the
            # mempool had entries invalidated by a reorg. Drop them.
            log.warning("%s: self-mined block not applied: %s", self.node_id, result)
            return None
        for hook in self._block_hooks:
            hook(block)
        return block

    # -- block import ------------------------------------------------------------

    def import_block(self, block: Block) -> ImportResult:
        h = block_hash(block.header)
        if h in self._index:
            return ImportResult(status="duplicate")
        parent = self._index.get(block.header.parent_hash)
        if parent is None:
            self._queue_orphan(block)
            return ImportResult(status="queued")
        violations = validate_block(block, parent.header, self.cfg, resolve_pubkey=self.registry.pubkey)
        if violations:
            return ImportResult(status="rejected", violations=tuple(violations))

        if block.header.parent_hash == self.tip_hash():
            result = self._extend_tip(block, h)
        else:
            result = self._consider_branch(block, h)
        if result.status == "applied":
            self._retry_orphans(h)
        return result

    def _extend_tip(self, block: Block, h: Hash256) -> ImportResult:
        staged_db = self.db.copy()
        staged_nonces = dict(self.account_nonces)
        violations, events = _check_and_apply_block(staged_db, staged_nonces, block, self.registry)
        if violations:
            return ImportResult(status="rejected", violations=tuple(violations))
        self.db = staged_db
        self.account_nonces = staged_nonces
        self.chain.append(block)
        self._index[h] = block
        self._heights[h] = block.header.height
        for tx in block.txs:
            self.mempool.remove(tx.sender, tx.nonce)
        self._emit(events)
        return ImportResult(status="applied", canonical=True)

    def _consider_branch(self, block: Block, h: Hash256) -> ImportResult:
        parent_height = self._heights[block.header.parent_hash]
        branch_height = parent_height + 1
        self._index[h] = block
        self._heights[h] = branch_height
        if branch_height <= self.height():
            # Equal length keeps the first-seen chain; shorter is stored only.
            return ImportResult(status="applied", canonical=False)
        return self._reorg_to(block, h)

    def _reorg_to(self, new_tip: Block, h: Hash256) -> ImportResult:
        branch = self._path_from_genesis(h)
        db = FinalStateDb(staff_name_lookup=self.registry.staff_name)
        nonces: dict = {}
        all_events = []
        for blk in branch[1:]:
            violations, events = _check_and_apply_block(db, nonces, blk, self.registry)
            if violations:
                del self._index[h]
                del self._heights[h]
                return ImportResult(status="rejected", violations=tuple(violations))
            all_events.append((blk.header.height, events))

        fork_height = self._fork_point(branch)
        old_chain = self.chain
        self.chain = branch
        self.db = db
        self.account_nonces = nonces

        for tx in (t for blk in branch[1:] for t in blk.txs):
            self.mempool.remove(tx.sender, tx.nonce)
        # Transactions stranded on the abandoned branch go back to the pool
        # when their nonce is still ahead of the rebuilt account state.
        new_tx_keys = {(t.sender, t.nonce) for blk in branch[1:] for t in blk.txs}
        for blk in old_chain[fork_height + 1:]:
            for tx in blk.txs:
                if (tx.sender, tx.nonce) in new_tx_keys:
                    continue
                if tx.nonce >= self.account_nonces.get(tx.sender, 0):
                    self.mempool.add(tx, evict_on_full=True)

        self._emit([RollbackEvent(height=fork_height)])
        for height, events in all_events:
            if height > fork_height:
                self._emit(events)
        log.info("%s: reorg to height %d (fork at %d)", self.node_id, new_tip.header.height, fork_height)
        return ImportResult(
            status="applied", canonical=True, reorged=True, rollback_height=fork_height
        )

    def _path_from_genesis(self, tip_hash: Hash256) -> list:
        path = []
        cursor = tip_hash
        while True:
            block = self._index[cursor]
            path.append(block)
            if block.header.height == 0:
                break
            cursor = block.header.parent_hash
        path.reverse()
        return path

    def _fork_point(self, new_chain: list) -> int:
        height = 0
        for old, new in zip(self.chain, new_chain):
            if block_hash(old.header) != block_hash(new.header):
                break
            height = old.header.height
        return height

    def _queue_orphan(self, block: Block) -> None:
        parent = block.header.parent_hash
        bucket = self._orphans.setdefault(parent, [])
        if not any(block_hash(b.header) == block_hash(block.header) for b in bucket):
            bucket.append(block)
        while sum(len(v) for v in self._orphans.values()) > ORPHAN_BUFFER_LIMIT:
            self._orphans.popitem(last=False)

    def _retry_orphans(self, parent_hash: Hash256) -> None:
        waiting = self._orphans.pop(parent_hash, [])
        for block in waiting:
            self.import_block(block)
