"""Deterministic multi-university testbed.

Builds N universities (department nodes plus a hub) and the shared
consortium infrastructure in one process, wires the nodes through a
simulated transport with seeded latency and loss, and runs scripted
scenarios on a logical clock. A fixed seed reproduces every byte: chain
tips, table digests, consortium log contents, and the rendered run report.

Scenario files are YAML; see the bundled files under scenarios/ and the
README for the action and assertion vocabulary.
"""

import base64
import dataclasses
import hashlib
import heapq
import logging
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import yaml

from .audit import AuditTarget, run_audit_round
from .consortium import (
    ConsortiumDirectory,
    MemberLog,
    OrderingService,
    generate_x25519,
    make_pending_entry,
    make_transfer_request,
    open_sealed,
    seal_to,
    verify_transfer_response,
)
from .gateway import GatewayConfig, GatewayCore, GatewayError, RouteTable
from .hub import HubNode
from .ledger import (
    AttachFile,
    ChainConfig,
    Hash256,
    KeyPair,
    RegisterCourse,
    RegisterStudent,
    UpdateProfile,
    UpsertGrade,
    block_hash,
    canonical_encode,
    decode_block,
    decode_transaction,
    digest_sha256,
    make_transaction,
    validate_block,
)
from .node import KeyRegistry, PrivateNode, Role
from .statestore import DATA_TABLES

log = logging.getLogger(__name__)

DEPARTMENTS = ("records", "exams", "archive", "admissions", "library")


class ConfigInvalid(Exception):
    pass


class UnknownTarget(Exception):
    pass


class AssertionFailed(Exception):
    """Raised when a scenario assertion (or an action expectation) fails.
    Carries the full rendered report so the caller can show the diff."""

    def __init__(self, message: str, report_text: str = ""):
        super().__init__(message)
        self.report_text = report_text


# --- configuration ----------------------------------------------------------------

FAULT_KINDS = {
    "TamperRow": ("node", "table", "row_key", "field", "new_value"),
    "DropMessages": ("node", "fraction", "window"),
    "CrashNode": ("node", "window"),
    "LagNode": ("node", "blocks"),
}


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    node: str
    scheduled_at: int
    table: str = ""
    row_key: str = ""
    field: str = ""
    new_value: object = None
    fraction: float = 0.0
    window: int = 0
    blocks: int = 0

    def validate(self) -> None:
        if self.kind not in FAULT_KINDS:
            raise ConfigInvalid(f"unknown fault kind {self.kind!r}")
        if self.scheduled_at < 0:
            raise ConfigInvalid("scheduled_at must be >= 0")
        if self.kind == "TamperRow" and not (self.table and self.row_key and self.field):
            raise ConfigInvalid("TamperRow needs table, row_key, and field")
        if self.kind == "DropMessages" and not (0.0 < self.fraction <= 1.0 and self.window > 0):
            raise ConfigInvalid("DropMessages needs fraction in (0,1] and window > 0")
        if self.kind == "CrashNode" and self.window <= 0:
            raise ConfigInvalid("CrashNode needs window > 0")
        if self.kind == "LagNode" and self.blocks <= 0:
            raise ConfigInvalid("LagNode needs blocks > 0")

    @classmethod
    def from_mapping(cls, data: dict, default_at: int = 0) -> "FaultSpec":
        spec = cls(
            kind=data.get("kind", ""),
            node=data.get("node", ""),
            scheduled_at=int(data.get("scheduled_at", default_at)),
            table=data.get("table", ""),
            row_key=data.get("row_key", ""),
            field=data.get("field", ""),
            new_value=data.get("new_value"),
            fraction=float(data.get("fraction", 0.0)),
            window=int(data.get("window", 0)),
            blocks=int(data.get("blocks", 0)),
        )
        spec.validate()
        return spec

    def describe(self) -> str:
        parts = [f"{self.kind} node={self.node} at={self.scheduled_at}"]
        if self.kind == "TamperRow":
            parts.append(f"{self.table}/{self.row_key} {self.field}={self.new_value!r}")
        elif self.kind == "DropMessages":
            parts.append(f"fraction={self.fraction} window={self.window}")
        elif self.kind == "CrashNode":
            parts.append(f"window={self.window}")
        elif self.kind == "LagNode":
            parts.append(f"blocks={self.blocks}")
        return " ".join(parts)


@dataclass
class NetworkConfig:
    universities: int = 1
    nodes_per_university: int = 5
    latency_min: int = 1
    latency_max: int = 3
    loss_rate: float = 0.0
    rng_seed: int = 0
    tick_step: int = 1
    mine_interval: int = 5
    drain_ticks: int = 400
    chain: ChainConfig = field(default_factory=ChainConfig)
    periods: tuple = ("2025S1", "2025S2")

    def validate(self) -> None:
        if self.universities < 1 or self.nodes_per_university < 1:
            raise ConfigInvalid("need at least one university and one node")
        if not (0 <= self.latency_min <= self.latency_max):
            raise ConfigInvalid("latency bounds must satisfy 0 <= min <= max")
        if not (0.0 <= self.loss_rate < 1.0):
            raise ConfigInvalid("loss_rate must be in [0, 1)")
        if self.tick_step < 1 or self.mine_interval < 1 or self.drain_ticks < 0:
            raise ConfigInvalid("tick_step and mine_interval must be >= 1")
        if self.rng_seed < 0 or self.rng_seed > 2**64 - 1:
            raise ConfigInvalid("rng_seed must fit in u64")

    @classmethod
    def from_mapping(cls, data: Optional[dict]) -> "NetworkConfig":
        data = dict(data or {})
        chain_over = data.pop("chain", {}) or {}
        known = {f.name for f in dataclasses.fields(cls)} - {"chain", "periods"}
        unknown = set(data) - known - {"periods"}
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        chain = ChainConfig(**chain_over) if chain_over else ChainConfig()
        periods = tuple(data.pop("periods", ("2025S1", "2025S2")))
        cfg = cls(chain=chain, periods=periods, **{k: type(getattr(cls(), k))(v) for k, v in data.items()})
        cfg.validate()
        return cfg

    def describe(self) -> str:
        return (
            f"universities={self.universities} nodes={self.nodes_per_university} "
            f"latency={self.latency_min}..{self.latency_max} loss={self.loss_rate} "
            f"tick_step={self.tick_step} mine_interval={self.mine_interval}"
        )


# --- simulated transport ------------------------------------------------------------


class SimTransport:
    """In-process message fabric on the logical clock. Gossip messages get
    seeded latency and may be lost; recovery traffic (parent fetch, resync)
    rides a reliable path with unit latency, standing in for request/response
    calls that would be retried anyway."""

    def __init__(self, rng: random.Random, cfg: NetworkConfig):
        self.rng = rng
        self.cfg = cfg
        self._queue: list = []      # (deliver_at, seq, dest_id, payload)
        self._seq = 0
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self._drop_rules: dict = {}     # node_id -> (fraction, until_tick)
        self._down: set = set()

    def send(self, now: int, dest_id: str, payload: tuple, reliable: bool = False) -> None:
        self.sent += 1
        if reliable:
            latency = 1
        else:
            if self.cfg.loss_rate and self.rng.random() < self.cfg.loss_rate:
                self.dropped += 1
                return
            latency = self.rng.randint(self.cfg.latency_min, self.cfg.latency_max)
        heapq.heappush(self._queue, (now + max(1, latency), self._seq, dest_id, payload))
        self._seq += 1

    def set_down(self, node_id: str, down: bool) -> None:
        (self._down.add if down else self._down.discard)(node_id)

    def add_drop_rule(self, node_id: str, fraction: float, until_tick: int) -> None:
        self._drop_rules[node_id] = (fraction, until_tick)

    def pending(self) -> int:
        return len(self._queue)

    def deliver_due(self, now: int, sink: Callable[[str, tuple], None]) -> None:
        while self._queue and self._queue[0][0] <= now:
            _, _, dest_id, payload = heapq.heappop(self._queue)
            if dest_id in self._down:
                self.dropped += 1
                continue
            rule = self._drop_rules.get(dest_id)
            if rule and now <= rule[1] and self.rng.random() < rule[0]:
                self.dropped += 1
                continue
            self.delivered += 1
            sink(dest_id, payload)


# --- topology ------------------------------------------------------------------------


@dataclass
class Account:
    label: str
    key: KeyPair
    role: Role
    subject_id: str
    university: str


@dataclass
class University:
    name: str
    registry: KeyRegistry
    nodes: dict                      # node_id -> PrivateNode
    node_order: list
    peers: dict                      # node_id -> [peer ids]
    route: RouteTable
    gateway: GatewayCore
    hub: HubNode
    member_key: KeyPair
    x_priv: bytes
    member_log: MemberLog
    audit_targets: list
    vote_pubkeys: dict
    audit_key: KeyPair               # Auditor-role service account


class Testbed:
    """A built network plus the run state the scenario loop mutates."""

    def __init__(self, cfg: NetworkConfig):
        cfg.validate()
        self.cfg = cfg
        self.rng = random.Random(cfg.rng_seed)
        self.tick = 0
        self.transport = SimTransport(self.rng, cfg)
        self.directory = ConsortiumDirectory()
        self.ordering = OrderingService(
            self.directory, KeyPair.generate(self._seed_bytes("ordering"))
        )
        self.universities: dict = {}
        self.accounts: dict = {}
        self.results: dict = {}          # action label -> outcome payload
        self.faults: list = []           # all injected FaultSpecs, in order
        self._pending_faults: list = []  # (scheduled_at, insertion idx, FaultSpec)
        self._revive_at: dict = {}       # node_id -> tick
        self._lag: dict = {}             # node_id -> {"need": int, "buffer": [payload]}
        self._sessions: dict = {}        # (uni, label) -> token
        self._audit_rounds = 0

        for u in range(1, cfg.universities + 1):
            name = f"uni-{u}"
            self.universities[name] = self._build_university(name)

        self.ministry_log = MemberLog(
            "ministry", self.directory, self.ordering.ordering_key.public_key
        )
        self.ordering.attach(self.ministry_log.validate_and_append)
        first = self.universities["uni-1"]
        self.ministry_gateway = GatewayCore(
            first.nodes,
            first.route,
            first.registry,
            cfg.chain,
            member_log=self.ministry_log,
            rng=_counting_rng(self._seed_bytes("gw:ministry")),
            clock=self._clock,
        )

    # -- construction ------------------------------------------------------------

    def _seed_bytes(self, label: str) -> bytes:
        return digest_sha256(f"sim:{self.cfg.rng_seed}:{label}".encode())

    def _clock(self) -> float:
        return float(self.tick * self.cfg.tick_step)

    def _build_university(self, name: str) -> University:
        cfg = self.cfg
        registry = KeyRegistry()
        nodes = {}
        node_order = []
        route_map = {}
        for i in range(1, cfg.nodes_per_university + 1):
            node_id = f"{name}-n{i}"
            dept = DEPARTMENTS[(i - 1) % len(DEPARTMENTS)]
            node = PrivateNode(node_id, dept, cfg.chain, registry, clock=self._node_clock())
            nodes[node_id] = node
            node_order.append(node_id)
            route_map.setdefault(dept, node_id)
        peers = {}
        n = len(node_order)
        for i, node_id in enumerate(node_order):
            fan_out = min(cfg.chain.max_peers, n - 1)
            peers[node_id] = [node_order[(i + k) % n] for k in range(1, fan_out + 1)]
        for node_id, node in nodes.items():
            node.on_block_produced(self._gossip_block_hook(name, node_id))
            node.on_tx_accepted(self._gossip_tx_hook(name, node_id))

        member_key = KeyPair.generate(self._seed_bytes(f"{name}:member"))
        x_priv, x_pub = generate_x25519(self._seed_bytes(f"{name}:x"))
        self.directory.register(name, member_key.public_key, x_pub)
        member_log = MemberLog(name, self.directory, self.ordering.ordering_key.public_key)
        self.ordering.attach(member_log.validate_and_append)
        hub = HubNode(
            name, self.directory, self.ordering.submit,
            nodes[node_order[0]], member_log, member_key,
            rng=_counting_rng(self._seed_bytes(f"{name}:seal")),
        )

        audit_key = KeyPair.generate(self._seed_bytes(f"{name}:audit-svc"))
        registry.register(audit_key.public_key, Role.AUDITOR, f"{name}-audit", "Audit Service")
        targets = [
            AuditTarget(nodes[nid], KeyPair.generate(self._seed_bytes(f"vote:{nid}")))
            for nid in node_order
        ]
        vote_pubkeys = {t.node.node_id: t.vote_key.public_key for t in targets}

        route = RouteTable(mapping=route_map, fallback=node_order[0])
        gateway = GatewayCore(
            nodes, route, registry, cfg.chain,
            config=GatewayConfig(),
            audit_targets=targets,
            vote_pubkeys=vote_pubkeys,
            audit_service_key=audit_key,
            rng=_counting_rng(self._seed_bytes(f"gw:{name}")),
            clock=self._clock,
        )
        return University(
            name=name, registry=registry, nodes=nodes, node_order=node_order,
            peers=peers, route=route, gateway=gateway, hub=hub,
            member_key=member_key, x_priv=x_priv, member_log=member_log,
            audit_targets=targets, vote_pubkeys=vote_pubkeys, audit_key=audit_key,
        )

    def _node_clock(self) -> Callable[[], int]:
        return lambda: self.tick * self.cfg.tick_step

    def _gossip_block_hook(self, uni: str, src_id: str) -> Callable:
        def hook(block):
            raw = canonical_encode(block)
            for peer in self.universities[uni].peers[src_id]:
                self.transport.send(self.tick, peer, ("block", raw))
        return hook

    def _gossip_tx_hook(self, uni: str, src_id: str) -> Callable:
        # Transactions ride the reliable path: unlike blocks there is no
        # re-announce or fetch mechanism, and out-of-order nonce arrival
        # would drop them at admission for good.
        def hook(tx):
            raw = canonical_encode(tx)
            for peer in self.universities[uni].peers[src_id]:
                self.transport.send(self.tick, peer, ("tx", raw), reliable=True)
        return hook

    # -- lookup -----------------------------------------------------------------

    def node(self, node_id: str) -> PrivateNode:
        for uni in self.universities.values():
            if node_id in uni.nodes:
                return uni.nodes[node_id]
        raise UnknownTarget(node_id)

    def university_of(self, node_id: str) -> University:
        for uni in self.universities.values():
            if node_id in uni.nodes:
                return uni
        raise UnknownTarget(node_id)

    def university(self, name: str) -> University:
        try:
            return self.universities[name]
        except KeyError:
            raise UnknownTarget(name) from None

    # -- accounts -----------------------------------------------------------------

    def create_account(self, label: str, role: Role, subject_id: str,
                       display_name: str, university: str = "uni-1") -> Account:
        uni = self.university(university)
        key = KeyPair.generate(self._seed_bytes(f"acct:{university}:{label}"))
        uni.registry.register(key.public_key, role, subject_id, display_name)
        account = Account(label, key, role, subject_id, university)
        self.accounts[label] = account
        uni.gateway.provision_password(key.account_id, f"pw-{label}")
        return account

    def account(self, label: str) -> Account:
        try:
            return self.accounts[label]
        except KeyError:
            raise UnknownTarget(f"account {label!r}") from None

    def session(self, label: str) -> str:
        account = self.account(label)
        cached = self._sessions.get((account.university, label))
        gateway = self.university(account.university).gateway
        if cached and gateway.sessions.get(cached):
            return cached
        token = gateway.login(account.key.account_id.hex(), f"pw-{label}")["token"]
        self._sessions[(account.university, label)] = token
        return token

    def sign(self, label: str, op, department: Optional[str] = None):
        """Client-side signing: nonce comes from the node the gateway will
        route this write to."""
        account = self.account(label)
        gateway = self.university(account.university).gateway
        node, _ = gateway.node_for(department)
        nonce = node.account_nonces.get(account.key.account_id, 0)
        nonce += node.mempool.pending_for(account.key.account_id)
        tx = make_transaction(account.key, nonce, op, self.tick * self.cfg.tick_step)
        return canonical_encode(tx).hex()

    # -- faults -------------------------------------------------------------------

    def inject_fault(self, fault: FaultSpec) -> None:
        fault.validate()
        self.node(fault.node)    # raises UnknownTarget for a bad node id
        self.faults.append(fault)
        heapq.heappush(self._pending_faults, (fault.scheduled_at, len(self.faults), fault))

    def _apply_due_faults(self) -> None:
        while self._pending_faults and self._pending_faults[0][0] <= self.tick:
            _, _, fault = heapq.heappop(self._pending_faults)
            self._apply_fault(fault)
        for node_id, when in list(self._revive_at.items()):
            if self.tick >= when:
                del self._revive_at[node_id]
                node = self.node(node_id)
                node.reachable = True
                self.transport.set_down(node_id, False)
                self._resync(node_id)

    def _apply_fault(self, fault: FaultSpec) -> None:
        node = self.node(fault.node)
        if fault.kind == "TamperRow":
            table = node.db.rows(fault.table)
            if fault.row_key not in table:
                raise UnknownTarget(f"{fault.node}: no row {fault.row_key!r} in {fault.table}")
            node.db.set_field(fault.table, fault.row_key, fault.field, fault.new_value)
        elif fault.kind == "CrashNode":
            node.reachable = False
            self.transport.set_down(fault.node, True)
            self._revive_at[fault.node] = fault.scheduled_at + fault.window
        elif fault.kind == "DropMessages":
            self.transport.add_drop_rule(
                fault.node, fault.fraction, fault.scheduled_at + fault.window
            )
        elif fault.kind == "LagNode":
            self._lag[fault.node] = {"need": fault.blocks, "buffer": [], "seen": set()}

    # -- transport delivery ---------------------------------------------------------

    def _deliver(self, dest_id: str, payload: tuple) -> None:
        lag = self._lag.get(dest_id)
        if lag is not None:
            lag["buffer"].append(payload)
            if payload[0] == "block":
                # gossip repeats blocks; the lag depth counts distinct new
                # ones, ignoring stragglers the node already imported
                h = block_hash(decode_block(payload[1]).header)
                if self.node(dest_id).block_by_hash(h) is None:
                    lag["seen"].add(h)
            if len(lag["seen"]) >= lag["need"]:
                buffered = lag["buffer"]
                del self._lag[dest_id]
                for item in buffered:
                    self._apply_payload(dest_id, item)
            return
        self._apply_payload(dest_id, payload)

    def _apply_payload(self, dest_id: str, payload: tuple) -> None:
        kind, raw = payload
        node = self.node(dest_id)
        if kind == "block":
            result = node.import_block(decode_block(raw))
            if result.status == "applied":
                # one-hop relay so gossip crosses the capped peer graph
                for peer in self.university_of(dest_id).peers[dest_id]:
                    self.transport.send(self.tick, peer, payload)
        elif kind == "tx":
            node.receive_gossip_tx(decode_transaction(raw))

    def _recover_missing(self) -> None:
        """Parent fetch plus a resync poll: any node strictly behind a peer
        asks that peer for the missing span over the reliable path."""
        for uni in self.universities.values():
            for node_id in uni.node_order:
                node = uni.nodes[node_id]
                if not node.reachable or node_id in self._lag:
                    continue
                wanted = set(node.missing_parents())
                for peer_id in uni.peers[node_id]:
                    peer = uni.nodes[peer_id]
                    if not peer.reachable:
                        continue
                    for h in sorted(wanted):
                        found = peer.block_by_hash(h)
                        if found is not None:
                            self.transport.send(
                                self.tick, node_id, ("block", canonical_encode(found)),
                                reliable=True,
                            )
                            wanted.discard(h)
                    if peer.height() > node.height() and not wanted:
                        for block in peer.chain[node.height() + 1:]:
                            self.transport.send(
                                self.tick, node_id, ("block", canonical_encode(block)),
                                reliable=True,
                            )
                        break

    def _resync(self, node_id: str) -> None:
        """After a crash window ends, pull everything above our height from
        the first reachable peer."""
        uni = self.university_of(node_id)
        node = uni.nodes[node_id]
        for peer_id in uni.peers[node_id]:
            peer = uni.nodes[peer_id]
            if peer.reachable and peer.height() > node.height():
                for block in peer.chain[node.height() + 1:]:
                    self.transport.send(
                        self.tick, node_id, ("block", canonical_encode(block)), reliable=True
                    )
                return

    # -- mining -------------------------------------------------------------------

    def _auto_mine(self) -> None:
        if self.tick == 0 or self.tick % self.cfg.mine_interval != 0:
            return
        slot = self.tick // self.cfg.mine_interval
        for uni in self.universities.values():
            candidates = [
                nid for nid in uni.node_order
                if uni.nodes[nid].reachable and nid not in self._lag
                and len(uni.nodes[nid].mempool) > 0
            ]
            if not candidates:
                continue
            producer = uni.nodes[candidates[slot % len(candidates)]]
            producer.produce_block()

    # -- the clock ------------------------------------------------------------------

    def step(self) -> None:
        self.tick += 1
        self._apply_due_faults()
        self.transport.deliver_due(self.tick, self._deliver)
        self._recover_missing()
        self._auto_mine()

    def quiescent(self) -> bool:
        if self.transport.pending() or self._lag:
            return False
        for uni in self.universities.values():
            for node in uni.nodes.values():
                if len(node.mempool) or node.missing_parents():
                    return False
        return True

    def settle(self, max_ticks: Optional[int] = None) -> None:
        """Advance until no messages, mempool entries, or orphan gaps remain."""
        budget = self.cfg.drain_ticks if max_ticks is None else max_ticks
        for _ in range(budget):
            if self.quiescent():
                return
            self.step()


def build_network(cfg: NetworkConfig) -> Testbed:
    return Testbed(cfg)


def _counting_rng(seed: bytes) -> Callable[[int], bytes]:
    state = {"n": 0}

    def draw(size: int) -> bytes:
        out = b""
        while len(out) < size:
            out += hashlib.sha256(seed + state["n"].to_bytes(8, "big")).digest()
            state["n"] += 1
        return out[:size]

    return draw


# --- scenario scripts ---------------------------------------------------------------

ACTION_KINDS = (
    "register_student", "register_course", "upsert_grade", "update_profile",
    "attach_file", "export_transcript", "mine", "close_period",
    "open_transfer", "run_audit", "verify_credential", "inject_fault",
)

ASSERTION_KINDS = (
    "chain_valid", "all_converged", "tx_included", "verify_status",
    "transfer_status", "audit_localized", "audit_flag", "audit_converged",
    "height_at_least", "repair_on_chain",
)


@dataclass
class ScenarioScript:
    name: str
    config: dict                 # NetworkConfig overrides
    accounts: list               # account declarations
    actions: list                # [{at, do, ...}] sorted by (at, file order)
    assertions: list

    @classmethod
    def from_mapping(cls, data: dict) -> "ScenarioScript":
        if not isinstance(data, dict) or "name" not in data:
            raise ConfigInvalid("scenario needs a top-level name")
        actions = list(data.get("actions", []))
        for action in actions:
            if action.get("do") not in ACTION_KINDS:
                raise ConfigInvalid(f"unknown action {action.get('do')!r}")
            if "at" not in action:
                raise ConfigInvalid(f"action {action.get('do')!r} is missing 'at'")
        assertions = list(data.get("assertions", []))
        for check in assertions:
            if check.get("check") not in ASSERTION_KINDS:
                raise ConfigInvalid(f"unknown assertion {check.get('check')!r}")
        actions = [a for _, a in sorted(enumerate(actions), key=lambda p: (p[1]["at"], p[0]))]
        return cls(
            name=str(data["name"]),
            config=dict(data.get("config", {})),
            accounts=list(data.get("accounts", [])),
            actions=actions,
            assertions=assertions,
        )


def load_scenario(path: str) -> ScenarioScript:
    with open(path, "r", encoding="utf-8") as fh:
        return ScenarioScript.from_mapping(yaml.safe_load(fh))


@dataclass
class RunReport:
    scenario: str
    seed: int
    config_line: str
    ticks: int
    messages: tuple              # (sent, delivered, dropped)
    actions: list                # (tick, line) pairs
    faults: list
    chains: list                 # rendered per-node tip lines
    digests: list                # rendered per-university digest lines
    log_digest: str
    assertions: list             # (ok: bool, line)
    wall_ms: float = 0.0         # excluded from the rendered text

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.assertions)

    def render_text(self) -> str:
        lines = [
            "run-report v1",
            f"scenario {self.scenario}",
            f"seed {self.seed}",
            f"config {self.config_line}",
            f"ticks {self.ticks}",
            "messages sent=%d delivered=%d dropped=%d" % self.messages,
        ]
        lines.append("actions")
        for tick, text in self.actions:
            lines.append(f"  t={tick} {text}")
        if self.faults:
            lines.append("faults")
            lines.extend(f"  {text}" for text in self.faults)
        lines.append("chains")
        lines.extend(f"  {text}" for text in self.chains)
        lines.append("digests")
        lines.extend(f"  {text}" for text in self.digests)
        lines.append(f"consortium-log {self.log_digest}")
        lines.append("assertions")
        for ok, text in self.assertions:
            lines.append(f"  {'ok  ' if ok else 'FAIL'} {text}")
        lines.append(f"result {'pass' if self.passed else 'fail'}")
        lines.append("end")
        return "\n".join(lines) + "\n"


class ScenarioRunner:
    """Executes one script on one testbed and assembles the report."""

    def __init__(self, testbed: Testbed, script: ScenarioScript):
        self.bed = testbed
        self.script = script
        self.action_log: list = []

    # -- actions ------------------------------------------------------------

    def _record(self, action: dict, outcome: dict, text: str) -> None:
        label = action.get("label")
        if label:
            self.bed.results[label] = outcome
        self.action_log.append((self.bed.tick, text))

    def _gateway_write(self, action: dict, method: str, op, extra: Optional[dict] = None):
        bed = self.bed
        actor = action["actor"]
        token = bed.session(actor)
        gateway = bed.university(bed.account(actor).university).gateway
        department = action.get("department")
        body = {"tx": bed.sign(actor, op, department)}
        body.update(extra or {})
        expect = action.get("expect", "ok")
        try:
            out = getattr(gateway, method)(token, body)
            if expect != "ok":
                raise AssertionFailed(
                    f"action {action['do']} expected {expect} but succeeded")
            outcome = dict(out)
            outcome["actor"] = actor
            self._record(action, outcome, f"{action['do']} ok tx={out['txHash'][:16]}")
            return outcome
        except GatewayError as exc:
            if expect == "ok":
                raise AssertionFailed(
                    f"action {action['do']} failed: {exc.code} {exc.detail}") from exc
            if exc.code != expect and exc.detail != expect:
                raise AssertionFailed(
                    f"action {action['do']} expected {expect}, got {exc.code}:{exc.detail}"
                ) from exc
            outcome = {"error": exc.code, "detail": exc.detail}
            self._record(action, outcome, f"{action['do']} denied={exc.code}")
            return outcome

    def _back_office(self, action: dict, op) -> None:
        """Registrar provisioning writes skip the gateway (it exposes no
        registration endpoints) and go straight to the routed node."""
        bed = self.bed
        actor = action["actor"]
        account = bed.account(actor)
        gateway = bed.university(account.university).gateway
        node, _ = gateway.node_for(action.get("department"))
        tx = decode_transaction(bytes.fromhex(bed.sign(actor, op, action.get("department"))))
        result = node.submit_transaction(tx)
        if not result.accepted:
            raise AssertionFailed(f"action {action['do']} rejected: {result.reason}")
        self._record(action, {"txHash": result.tx_hash.hex(), "actor": actor},
                     f"{action['do']} tx={result.tx_hash.hex()[:16]}")

    def run_action(self, action: dict) -> None:
        bed = self.bed
        do = action["do"]
        if do == "register_student":
            self._back_office(action, RegisterStudent(
                action["student"], action["name"], action.get("major", "GEN")))
        elif do == "register_course":
            owner = action["owner"]
            self._back_office(action, RegisterCourse(
                action["course"], action["title"], action["term"],
                bed.account(owner).subject_id))
        elif do == "upsert_grade":
            self._gateway_write(action, "post_grade", UpsertGrade(
                action["student"], action["course"], action["term"],
                int(action["score"]), action["letter"]))
        elif do == "update_profile":
            self._gateway_write(action, "put_profile", UpdateProfile(
                action["student"], action["field"], action["value"]))
        elif do == "attach_file":
            content = action["content"].encode()
            cid = Hash256(hashlib.sha256(content).digest())
            self._gateway_write(
                action, "post_attachment",
                AttachFile(action["student"], action["course"], cid,
                           action.get("media", "application/pdf"), len(content)),
                extra={"contentB64": base64.b64encode(content).decode()})
        elif do == "export_transcript":
            actor = action["actor"]
            token = bed.session(actor)
            gateway = bed.university(bed.account(actor).university).gateway
            body = {"password": f"pw-{actor}"}
            if "student" in action:
                body["studentId"] = action["student"]
            out = gateway.export_transcript(token, body)
            self._record(action, out, f"export_transcript digest={out['digest'][:16]}")
        elif do == "mine":
            uni = bed.university(action.get("university", "uni-1"))
            node = uni.nodes[action["node"]] if "node" in action else uni.nodes[uni.node_order[0]]
            block = node.produce_block()
            height = block.header.height if block else node.height()
            self._record(action, {"height": height}, f"mine height={height}")
        elif do == "close_period":
            uni = bed.university(action.get("university", "uni-1"))
            outcome = uni.hub.publish_commitments(action["period"])
            if not outcome.accepted:
                raise AssertionFailed(f"close_period failed: {outcome.reason}")
            self._record(action, {"seq": outcome.seq},
                         f"close_period {action['period']} seq={outcome.seq}")
        elif do == "open_transfer":
            self._run_transfer(action)
        elif do == "run_audit":
            self._run_audit(action)
        elif do == "verify_credential":
            self._run_verify(action)
        elif do == "inject_fault":
            fault = FaultSpec.from_mapping(action, default_at=action["at"])
            bed.inject_fault(fault)
            self.action_log.append((bed.tick, f"inject_fault {fault.describe()}"))
        else:    # pragma: no cover - load_scenario rejects unknown kinds
            raise ConfigInvalid(f"unknown action {do!r}")

    def _run_transfer(self, action: dict) -> None:
        bed = self.bed
        host = bed.university(action["university"])
        home = bed.university(action["home"])
        request = make_transfer_request(
            host.member_key,
            bed.directory.get(host.name).member_id,
            bed.directory.get(home.name).member_id,
            action["subject"],
            tuple(action["courses"]),
            bed.tick * bed.cfg.tick_step,
        )
        submitted = bed.ordering.submit(make_pending_entry(
            host.member_key, bed.directory.get(host.name).member_id, request))
        if not submitted.accepted:
            raise AssertionFailed(f"open_transfer submit failed: {submitted.reason}")
        serviced = home.hub.service_transfers()
        status_by_channel = dict(serviced)
        if status_by_channel.get(request.channel_id) != "ok":
            outcome = {"status": status_by_channel.get(request.channel_id, "unanswered")}
            self._record(action, outcome, f"open_transfer {outcome['status']}")
            return
        response = host.member_log.response_for(request.channel_id)
        tamper = action.get("tamper")
        if tamper == "corrupt":
            # raw bit flip: the AEAD seal itself refuses to open
            flipped = bytes(response.payload)
            flipped = flipped[:-1] + bytes([flipped[-1] ^ 0x01])
            response = dataclasses.replace(response, payload=flipped)
        elif tamper:
            # substitution: re-seal a modified transcript to the requester's
            # public key, leaving the signed payloadDigest stale. The seal
            # opens fine; the digest check is what catches it.
            plaintext = open_sealed(host.x_priv, response.payload)
            forged = plaintext[:-1] + bytes([plaintext[-1] ^ 0x01])
            resealed = seal_to(
                bed.directory.get(host.name).x_pub, forged,
                rng=_counting_rng(bed._seed_bytes(f"tamper:{request.channel_id.hex()}")),
            )
            response = dataclasses.replace(response, payload=resealed)
        verdict = verify_transfer_response(host.member_log, request, response, host.x_priv)
        outcome = {"status": verdict.status}
        if verdict.credential:
            outcome["rows"] = verdict.credential.get("rows")
        self._record(action, outcome, f"open_transfer {verdict.status}")

    def _run_audit(self, action: dict) -> None:
        bed = self.bed
        uni = bed.university(action.get("university", "uni-1"))
        bed._audit_rounds += 1
        round_id = f"round-{bed._audit_rounds:04d}"
        repair = action.get("repair", True)
        submit_node = next(
            (uni.nodes[nid] for nid in uni.node_order if uni.nodes[nid].reachable), None)

        def sink(op):
            nonce = submit_node.account_nonces.get(uni.audit_key.account_id, 0)
            nonce += submit_node.mempool.pending_for(uni.audit_key.account_id)
            tx = make_transaction(uni.audit_key, nonce, op, bed.tick * bed.cfg.tick_step)
            return submit_node.submit_transaction(tx).accepted

        reports = run_audit_round(
            uni.audit_targets,
            tuple(action.get("tables", DATA_TABLES)),
            int(action.get("chunk_size", 64)),
            round_id=round_id,
            cfg=bed.cfg.chain,
            registry=uni.registry,
            vote_pubkeys=uni.vote_pubkeys,
            auditor_key=uni.audit_key if repair else None,
            tx_submit=sink if repair else None,
        )
        divergent = sorted({n for r in reports for n in r.divergent})
        repaired = sum(r.repairs_applied for r in reports)
        self._record(action, {"reports": reports, "roundId": round_id},
                      f"run_audit {round_id} divergent={','.join(divergent) or '-'} "
                      f"repairs={repaired}")

    def _run_verify(self, action: dict) -> None:
        bed = self.bed
        uni = bed.university(action.get("university", "uni-1"))
        node = uni.nodes[uni.node_order[0]]
        subject = action["subject"]
        period = action["period"]
        student = node.db.rows("students").get(subject)
        if student is None:
            raise AssertionFailed(f"verify_credential: unknown student {subject!r}")
        rows = [
            {"courseId": r["courseId"], "term": r["term"],
             "score": r["score"], "letter": r["letter"]}
            for r in node.db.rows("grades").values()
            if r["studentId"] == subject and r["term"] == period
        ]
        body = {
            "credentialType": "Transcript",
            "subjectId": subject,
            "studentName": student["name"],
            "period": period,
            "issuer": uni.name,
            "rows": rows,
        }
        perturb = action.get("perturb")
        if perturb:
            field_name, value = perturb["field"], perturb["value"]
            if field_name in ("score", "letter", "courseId", "term"):
                body["rows"][0] = dict(body["rows"][0], **{field_name: value})
            else:
                body[field_name] = value
        out = bed.ministry_gateway.verify_credential(body)
        self._record(action, out, f"verify_credential {out['status']}")

    # -- assertions ----------------------------------------------------------

    def _unis(self, check: dict) -> list:
        if "university" in check:
            return [self.bed.university(check["university"])]
        return [self.bed.universities[k] for k in sorted(self.bed.universities)]

    def evaluate(self, check: dict) -> tuple:
        kind = check["check"]
        try:
            return getattr(self, f"_check_{kind}")(check)
        except KeyError as exc:
            return False, f"{kind}: missing referenced value {exc}"

    def _check_chain_valid(self, check: dict) -> tuple:
        for uni in self._unis(check):
            for node in uni.nodes.values():
                for prev, blk in zip(node.chain, node.chain[1:]):
                    if blk.header.parent_hash != block_hash(prev.header):
                        return False, f"chain_valid: {node.node_id} broken parent link"
                    bad = validate_block(blk, prev.header, self.bed.cfg.chain,
                                         resolve_pubkey=uni.registry.pubkey)
                    if bad:
                        return False, f"chain_valid: {node.node_id} h{blk.header.height} {bad}"
        return True, "chain_valid"

    def _check_all_converged(self, check: dict) -> tuple:
        for uni in self._unis(check):
            nodes = [uni.nodes[nid] for nid in uni.node_order]
            tips = {n.tip_hash() for n in nodes}
            if len(tips) != 1:
                heights = {n.node_id: n.height() for n in nodes}
                return False, f"all_converged: {uni.name} tips differ, heights {heights}"
            for table in DATA_TABLES:
                digests = {n.db.table_digest(table).hex() for n in nodes}
                if len(digests) != 1:
                    return False, f"all_converged: {uni.name} table {table} digests {sorted(digests)}"
        return True, "all_converged"

    def _check_tx_included(self, check: dict) -> tuple:
        outcome = self.bed.results[check["action"]]
        tx_hash = outcome["txHash"]
        account = self.bed.account(outcome["actor"]) if "actor" in outcome else None
        uni = self.bed.university(account.university) if account else self.bed.universities["uni-1"]
        node = uni.nodes[uni.node_order[0]]
        for block in node.chain[1:]:
            for tx in block.txs:
                if tx.tx_hash().hex() == tx_hash:
                    return True, f"tx_included: {tx_hash[:16]} block={block.header.height}"
        return False, f"tx_included: {tx_hash[:16]} not on chain"

    def _check_verify_status(self, check: dict) -> tuple:
        outcome = self.bed.results[check["action"]]
        want, got = check["expect"], outcome["status"]
        ok = want == got
        return ok, f"verify_status: want {want} got {got}"

    def _check_transfer_status(self, check: dict) -> tuple:
        outcome = self.bed.results[check["action"]]
        want, got = check["expect"], outcome["status"]
        return want == got, f"transfer_status: want {want} got {got}"

    def _check_audit_localized(self, check: dict) -> tuple:
        reports = self.bed.results[check["action"]]["reports"]
        node_id, table, row_key = check["node"], check["table"], check["row_key"]
        for report in reports:
            if report.table != table:
                continue
            if node_id not in report.divergent:
                return False, f"audit_localized: {node_id} not divergent in {table}"
            rows = [key for key, _, _ in report.localized.get(node_id, ())]
            if rows == [row_key]:
                return True, f"audit_localized: {node_id} {table}/{row_key}"
            return False, f"audit_localized: {node_id} rows {rows}, want [{row_key}]"
        return False, f"audit_localized: no report for table {table}"

    def _check_audit_flag(self, check: dict) -> tuple:
        reports = self.bed.results[check["action"]]["reports"]
        node_id, flag = check["node"], check["flag"]
        flagged = {n: f for report in reports for n, f in report.flags.items()}
        got = flagged.get(node_id)
        return got == flag, f"audit_flag: {node_id} want {flag} got {got}"

    def _check_audit_converged(self, check: dict) -> tuple:
        reports = self.bed.results[check["action"]]["reports"]
        want = bool(check.get("expect", True))
        got = all(r.converged for r in reports)
        return want == got, f"audit_converged: want {want} got {got}"

    def _check_height_at_least(self, check: dict) -> tuple:
        want = int(check["height"])
        for uni in self._unis(check):
            for node in uni.nodes.values():
                if node.height() < want:
                    return False, f"height_at_least: {node.node_id} at {node.height()} < {want}"
        return True, f"height_at_least: {want}"

    def _check_repair_on_chain(self, check: dict) -> tuple:
        want = int(check.get("count", 1))
        uni = self.bed.university(check.get("university", "uni-1"))
        node = uni.nodes[uni.node_order[0]]
        got = sum(
            1 for block in node.chain[1:] for tx in block.txs
            if tx.op.KIND == "AuditRepair"
        )
        return got == want, f"repair_on_chain: want {want} got {got}"

    # -- the run -------------------------------------------------------------

    def run(self) -> RunReport:
        bed, script = self.bed, self.script
        started = time.monotonic()
        for decl in script.accounts:
            bed.create_account(
                decl["label"], Role(decl["role"]), decl["subject"],
                decl.get("name", decl["label"]), decl.get("university", "uni-1"))

        queue = list(script.actions)
        while queue:
            action = queue[0]
            if action["at"] > bed.tick:
                bed.step()
                continue
            queue.pop(0)
            self.run_action(action)
        bed.settle()

        assertion_rows = [self.evaluate(check) for check in script.assertions]
        report = RunReport(
            scenario=script.name,
            seed=bed.cfg.rng_seed,
            config_line=bed.cfg.describe(),
            ticks=bed.tick,
            messages=(bed.transport.sent, bed.transport.delivered, bed.transport.dropped),
            actions=self.action_log,
            faults=[f.describe() for f in bed.faults],
            chains=self._chain_lines(),
            digests=self._digest_lines(),
            log_digest=digest_sha256(bed.ministry_log.to_snapshot_text().encode()).hex(),
            assertions=assertion_rows,
            wall_ms=(time.monotonic() - started) * 1000.0,
        )
        if not report.passed:
            text = report.render_text()
            failing = [line for ok, line in assertion_rows if not ok]
            raise AssertionFailed("; ".join(failing), report_text=text)
        return report

    def _chain_lines(self) -> list:
        lines = []
        for name in sorted(self.bed.universities):
            uni = self.bed.universities[name]
            for nid in uni.node_order:
                node = uni.nodes[nid]
                lines.append(f"{nid} height={node.height()} tip={node.tip_hash().hex()[:16]}")
        return lines

    def _digest_lines(self) -> list:
        lines = []
        for name in sorted(self.bed.universities):
            uni = self.bed.universities[name]
            reference = uni.nodes[uni.node_order[0]]
            for table in DATA_TABLES:
                digest = reference.db.table_digest(table).hex()
                agree = all(
                    uni.nodes[nid].db.table_digest(table).hex() == digest
                    for nid in uni.node_order
                )
                lines.append(f"{name} {table} {digest} {'uniform' if agree else 'DIVERGENT'}")
        return lines


def run_scenario(testbed: Testbed, script: ScenarioScript) -> RunReport:
    return ScenarioRunner(testbed, script).run()


def run_file(path: str, seed: Optional[int] = None,
             config_path: Optional[str] = None) -> RunReport:
    """CLI entry: scenario config, overlaid by the config file, overlaid by
    the --seed flag."""
    script = load_scenario(path)
    merged = dict(script.config)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            merged.update(yaml.safe_load(fh) or {})
    if seed is not None:
        merged["rng_seed"] = seed
    cfg = NetworkConfig.from_mapping(merged)
    return run_scenario(build_network(cfg), script)
