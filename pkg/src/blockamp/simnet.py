"""Discrete-event gossip simulator for txpool eviction and traffic
amplification experiments.

Messages carry batches of transactions (as devp2p ``Transactions`` and
``NewPooledTransactionHashes`` do). A node handles everything that reaches
it at one instant as a single inbox, in submission order. Pool transitions
are a pure function of (pool state, offered transactions), so nodes with an
identical history share one copy-on-write pool state; traffic, fan-out
sampling and tracing are still computed per node.
"""
from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from . import kernels
from .econ import PricingSchedule, SaturationResult, saturation_cost
from .inference import MessageCounts
from .model import PolicyKind, PropagationPolicy
from .records import InvariantError
from .txpool import (AccountState, Transaction, TxPool, ValidationPolicy, build_block,
                     update_on_block, validate)

MSG_BROADCAST = 0x02
MSG_ANNOUNCE = 0x08
MSG_GET = 0x09
MSG_POOLED = 0x0A
HASH_SIZE = 32

_FULL = 0
_ANN = 1

HONEST_PREFIX = "honest-"
ATTACK_PREFIX = "attack-"


class ConfigError(ValueError):
    """Inconsistent simulation configuration."""


class Role(enum.Enum):
    REGULAR = "regular"
    MODIFIED = "modified"
    ATTACKER = "attacker"
    VALIDATOR = "validator"


class AttackKind(enum.Enum):
    BASELINE = "baseline"
    MEMPURGE = "mempurge"
    AMPLIFICATION = "amplification"


@dataclass(frozen=True)
class NodeSpec:
    node_id: int
    role: Role = Role.REGULAR
    validation: ValidationPolicy = field(default_factory=ValidationPolicy.regular)
    propagation: PropagationPolicy = field(default_factory=PropagationPolicy.sqrt)
    connection_count: int = 0
    latency_ms: float = 0.0

    @classmethod
    def regular(cls, node_id: int, degree: int, **kw) -> "NodeSpec":
        return cls(node_id, Role.REGULAR, ValidationPolicy.regular(), PropagationPolicy.sqrt(),
                   degree, **kw)

    @classmethod
    def modified(cls, node_id: int, degree: int, **kw) -> "NodeSpec":
        """Validation-skipping node; broadcasts full transactions to every peer."""
        return cls(node_id, Role.MODIFIED, ValidationPolicy.modified(),
                   PropagationPolicy.aggressive(), degree, **kw)

    @classmethod
    def validator(cls, node_id: int, degree: int, modified: bool = False, **kw) -> "NodeSpec":
        if modified:
            return cls(node_id, Role.VALIDATOR, ValidationPolicy.modified(),
                       PropagationPolicy.aggressive(), degree, **kw)
        return cls(node_id, Role.VALIDATOR, ValidationPolicy.regular(), PropagationPolicy.sqrt(),
                   degree, **kw)

    @classmethod
    def attacker(cls, node_id: int, **kw) -> "NodeSpec":
        return cls(node_id, Role.ATTACKER, ValidationPolicy.disabled(),
                   PropagationPolicy.aggressive(), 1, **kw)

    @property
    def skips_state_checks(self) -> bool:
        return not (self.validation.check_balance or self.validation.check_nonce)


@dataclass(frozen=True)
class Topology:
    """``random_regular`` (every non-attacker node gets ``degree`` peers) or
    ``explicit`` (``edges`` as node-id pairs).

    With ``connect_modified`` the modified nodes (and a modified validator)
    are rewired into a clique by degree-preserving edge swaps.
    """

    kind: str = "random_regular"
    degree: int = 41
    edges: tuple = ()
    connect_modified: bool = True
    attacker_links: tuple = ()


@dataclass(frozen=True)
class SimConfig:
    nodes: tuple
    topology: Topology = field(default_factory=Topology)
    slot_seconds: float = 12.0
    block_tx_budget: int = 128
    honest_accounts: int = 80
    honest_txs_each: int = 64
    attack_accounts: int = 0
    attack_txs_each: int = 32
    attack_kind: AttackKind | None = None
    seed: int = 0
    target: int | None = None
    pool_capacity: int = 5120
    batch_accounts: int = 40
    honest_gas_range: tuple = (1, 50)
    attack_gas_price: int = 1000
    tx_payload: int = 450
    fetch_announced: bool = True
    trace_monitors: tuple = ()

    def validator_id(self) -> int:
        ids = [n.node_id for n in self.nodes if n.role is Role.VALIDATOR]
        if len(ids) != 1:
            raise ConfigError(f"need exactly one validator, found {len(ids)}")
        return ids[0]

    def target_id(self) -> int:
        return self.validator_id() if self.target is None else self.target


@dataclass
class SimMetrics:
    attack_kind: str
    attack_accounts: int
    honest_ratio_txpool: float
    honest_ratio_block: float
    attack_txs_in_block: int
    attack_cost: int
    honest_in_pool: int
    attack_in_pool: int
    honest_evicted: int
    block_size: int
    bytes_in: tuple
    bytes_out: tuple
    messages: dict

    CSV_FIELDS = ("attack_kind", "attack_accounts", "honest_ratio_txpool", "honest_ratio_block",
                  "attack_txs_in_block", "attack_cost", "honest_in_pool", "attack_in_pool",
                  "honest_evicted", "block_size", "total_bytes_out", "msgs_0x02", "msgs_0x08",
                  "msgs_0x09", "msgs_0x0a")

    def row(self) -> dict:
        return {
            "attack_kind": self.attack_kind,
            "attack_accounts": self.attack_accounts,
            "honest_ratio_txpool": self.honest_ratio_txpool,
            "honest_ratio_block": self.honest_ratio_block,
            "attack_txs_in_block": self.attack_txs_in_block,
            "attack_cost": self.attack_cost,
            "honest_in_pool": self.honest_in_pool,
            "attack_in_pool": self.attack_in_pool,
            "honest_evicted": self.honest_evicted,
            "block_size": self.block_size,
            "total_bytes_out": int(sum(self.bytes_out)),
            "msgs_0x02": self.messages.get(MSG_BROADCAST, 0),
            "msgs_0x08": self.messages.get(MSG_ANNOUNCE, 0),
            "msgs_0x09": self.messages.get(MSG_GET, 0),
            "msgs_0x0a": self.messages.get(MSG_POOLED, 0),
        }


# -- topology -------------------------------------------------------------------

def _rewire_clique(g: nx.Graph, members: Sequence[int], rng: np.random.Generator) -> None:
    """Connect ``members`` pairwise while keeping every node's degree."""
    members = list(members)
    member_set = set(members)
    for i, u in enumerate(members):
        for v in members[i + 1:]:
            if g.has_edge(u, v):
                continue
            ua = sorted(a for a in g[u] if a not in member_set)
            vb = sorted(b for b in g[v] if b not in member_set)
            done = False
            for _ in range(200):
                if not ua or not vb:
                    break
                a = ua[rng.integers(len(ua))]
                b = vb[rng.integers(len(vb))]
                if a == b or g.has_edge(a, b):
                    continue
                g.remove_edge(u, a)
                g.remove_edge(v, b)
                g.add_edge(u, v)
                g.add_edge(a, b)
                done = True
                break
            if not done:
                raise ConfigError(f"could not wire modified nodes {u} and {v} together")


def build_graph(config: SimConfig) -> nx.Graph:
    topo = config.topology
    specs = {n.node_id: n for n in config.nodes}
    if len(specs) != len(config.nodes):
        raise ConfigError("duplicate node ids")
    members = [n.node_id for n in config.nodes if n.role is not Role.ATTACKER]
    attackers = [n.node_id for n in config.nodes if n.role is Role.ATTACKER]
    if topo.kind == "random_regular":
        if any(specs[m].connection_count != topo.degree for m in members):
            raise ConfigError("random_regular topology needs connection_count == degree")
        if topo.degree >= len(members) or (topo.degree * len(members)) % 2:
            raise ConfigError(f"no {topo.degree}-regular graph on {len(members)} nodes")
        base = nx.random_regular_graph(topo.degree, len(members),
                                       seed=int(kernels.stream_key(config.seed, 1) % 2**32))
        g = nx.relabel_nodes(base, dict(enumerate(members)))
        if topo.connect_modified:
            mods = [m for m in members if specs[m].role is Role.MODIFIED
                    or (specs[m].role is Role.VALIDATOR and specs[m].skips_state_checks)]
            _rewire_clique(g, mods, np.random.default_rng(kernels.stream_key(config.seed, 2)))
    elif topo.kind == "explicit":
        g = nx.Graph()
        g.add_nodes_from(members)
        for u, v in topo.edges:
            if u not in specs or v not in specs:
                raise ConfigError(f"edge ({u}, {v}) names an unknown node")
            g.add_edge(u, v)
        for m in members:
            cc = specs[m].connection_count
            if cc and g.degree(m) != cc:
                raise ConfigError(f"node {m} declares {cc} connections but has {g.degree(m)}")
    else:
        raise ConfigError(f"unknown topology kind {topo.kind!r}")
    g.add_nodes_from(attackers)
    for a, t in topo.attacker_links:
        if specs.get(a) is None or specs[a].role is not Role.ATTACKER:
            raise ConfigError(f"attacker link from non-attacker node {a}")
        g.add_edge(a, t)
    return g


# -- transaction plans ----------------------------------------------------------

def honest_transactions(config: SimConfig) -> tuple[list[Transaction], dict]:
    rng = np.random.default_rng(kernels.stream_key(config.seed, 10))
    lo, hi = config.honest_gas_range
    txs, state = [], {}
    for a in range(config.honest_accounts):
        sender = f"{HONEST_PREFIX}{a}"
        price = int(rng.integers(lo, hi + 1))
        state[sender] = AccountState(10**30, 0)
        txs.extend(Transaction(sender, n, 21_000, price, 1, config.tx_payload)
                   for n in range(config.honest_txs_each))
    return txs, state


def attack_transactions(kind: AttackKind, account: int, config: SimConfig
                        ) -> tuple[list[Transaction], AccountState]:
    """The ``attack_txs_each`` transactions one attack account submits."""
    sender = f"{ATTACK_PREFIX}{account}"
    k, price, payload = config.attack_txs_each, config.attack_gas_price, config.tx_payload
    if kind is AttackKind.BASELINE:
        txs = [Transaction(sender, n, 21_000, price, 1, payload) for n in range(k)]
        return txs, AccountState(10**30, 0)
    if kind is AttackKind.MEMPURGE:
        # gapped chain first, then the nonce that would close the gap; funds cover one tx
        txs = [Transaction(sender, n, 21_000, price, 1, payload) for n in range(1, k)]
        txs.append(Transaction(sender, 0, 21_000, price, 1, payload))
        return txs, AccountState(21_000 * price + 1, 0)
    if kind is AttackKind.AMPLIFICATION:
        # past nonces and a transfer larger than the balance: never executable
        txs = [Transaction(sender, n, 21_000, price, 2, payload) for n in range(k)]
        return txs, AccountState(1, k)
    raise ConfigError(f"unknown attack kind {kind}")


# -- simulation engine ------------------------------------------------------------

class _PoolState:
    __slots__ = ("token", "pool", "known")

    def __init__(self, token, pool, known):
        self.token = token
        self.pool = pool
        self.known = known


class _Engine:
    def __init__(self, config: SimConfig, capacity_hint: int):
        self.cfg = config
        self.specs = {n.node_id: n for n in config.nodes}
        self.graph = build_graph(config)
        self.adj = {v: np.array(sorted(self.graph[v]), dtype=np.int64) for v in self.graph}
        self.col = {v: {int(p): j for j, p in enumerate(self.adj[v])} for v in self.adj}
        self.keys = {v: kernels.stream_key(config.seed, 100, v) for v in self.adj}
        self.ctr = dict.fromkeys(self.adj, 0)
        self.chain: dict[str, AccountState] = {}
        self.txs: list[Transaction] = []
        self.sizes = np.zeros(max(capacity_hint, 1), dtype=np.int64)
        self.cap = max(capacity_hint, 1)
        self.n_nodes = max(self.adj) + 1 if self.adj else 0
        self.bytes_in = np.zeros(self.n_nodes, dtype=np.int64)
        self.bytes_out = np.zeros(self.n_nodes, dtype=np.int64)
        self.msgs = {MSG_BROADCAST: 0, MSG_ANNOUNCE: 0, MSG_GET: 0, MSG_POOLED: 0}
        self.trace: list[tuple] = []
        self.monitors = set(config.trace_monitors)
        self.events: list = []
        self.inbox: dict = {}
        self.seq = 0
        self.now = 0.0
        self._token = 0
        self.cache: dict = {}
        self.state_of: dict[int, _PoolState] = {}
        by_policy: dict = {}
        for v in self.adj:
            pol = self.specs[v].validation
            if pol not in by_policy:
                by_policy[pol] = self._new_state(TxPool(config.pool_capacity, pol, self.chain),
                                                 np.zeros(self.cap, dtype=bool))
            self.state_of[v] = by_policy[pol]

    def _new_state(self, pool, known) -> _PoolState:
        self._token += 1
        return _PoolState(self._token, pool, known)

    # registry
    def register(self, tx: Transaction) -> int:
        i = len(self.txs)
        if i >= self.cap:
            raise ConfigError("transaction registry overflow")
        self.txs.append(tx)
        self.sizes[i] = tx.total_size
        return i

    # scheduling
    def _deliver(self, dst: int, t: float, src: int, kind: int, ids: np.ndarray):
        key = (dst, t)
        box = self.inbox.get(key)
        if box is None:
            box = self.inbox[key] = []
            self.seq += 1
            heapq.heappush(self.events, (t, self.seq, dst))
        box.append((src, kind, ids))

    def submit(self, node: int, ids: Sequence[int], t: float):
        self._deliver(node, t, -1, _FULL, np.asarray(ids, dtype=np.int64))

    def send(self, src: int, dst: int, ids: np.ndarray, t: float):
        """Direct 0x02 from ``src`` (e.g. an attacker) to ``dst``."""
        self._account(src, dst, MSG_BROADCAST, int(self.sizes[ids].sum()), len(ids))
        self._trace(dst, src, MSG_BROADCAST, ids, t)
        self._deliver(dst, t + self.specs[src].latency_ms, src, _FULL, ids)

    def _account(self, src, dst, mtype, nbytes, items):
        self.bytes_out[src] += nbytes
        self.bytes_in[dst] += nbytes
        self.msgs[mtype] += items

    def _trace(self, monitor, peer, mtype, ids, t):
        if monitor in self.monitors:
            code = "02" if mtype == MSG_BROADCAST else "08"
            for i in ids:
                tx = self.txs[int(i)]
                self.trace.append((int(round(t)), monitor, peer, code, tx.hash, tx.total_size))

    def run_until(self, until: float):
        while self.events and self.events[0][0] <= until:
            t, _, v = heapq.heappop(self.events)
            self.now = t
            self._process(v, t)

    def quiesce(self):
        self.run_until(math.inf)
        live = {st.token for st in self.state_of.values()}
        self.cache = {k: val for k, val in self.cache.items() if k[0] in live}

    # node step
    def _process(self, v: int, t: float):
        msgs = self.inbox.pop((v, t))
        st = self.state_of[v]
        known = st.known
        full_parts = [ids for _, kind, ids in msgs if kind == _FULL]
        full = np.unique(np.concatenate(full_parts)) if full_parts else np.empty(0, np.int64)
        offered = full
        ann = [(src, ids) for src, kind, ids in msgs if kind == _ANN]
        if ann and self.cfg.fetch_announced:
            a_ids = np.concatenate([ids for _, ids in ann])
            a_src = np.concatenate([np.full(len(ids), src, dtype=np.int64) for src, ids in ann])
            keep = ~known[a_ids] & ~np.isin(a_ids, full, assume_unique=False)
            if keep.any():
                a_ids, a_src = a_ids[keep], a_src[keep]
                uniq, first = np.unique(a_ids, return_index=True)
                src_for = a_src[first]
                self._account_fetch(v, uniq, src_for)
                offered = np.union1d(full, uniq)
        if offered.size:
            offered = offered[~known[offered]]
        if not offered.size:
            return
        key = (st.token, offered.tobytes())
        hit = self.cache.get(key)
        if hit is None:
            hit = self._advance(st, offered)
            self.cache[key] = hit
        new_st, accepted = hit
        self.state_of[v] = new_st
        spec = self.specs[v]
        if accepted.size and spec.role is not Role.ATTACKER:
            self._forward(v, t, accepted, msgs)

    def _account_fetch(self, v, ids, src_for):
        sizes = self.sizes[ids]
        n = self.n_nodes
        req = np.bincount(src_for, minlength=n) * HASH_SIZE
        resp = np.bincount(src_for, weights=sizes, minlength=n).astype(np.int64)
        self.bytes_out[v] += int(req.sum())
        self.bytes_in += req
        self.bytes_out += resp
        self.bytes_in[v] += int(resp.sum())
        self.msgs[MSG_GET] += len(ids)
        self.msgs[MSG_POOLED] += len(ids)

    def _advance(self, st: _PoolState, offered: np.ndarray):
        pool = st.pool.clone()
        known = st.known.copy()
        known[offered] = True
        policy = pool.policy
        accepted = []
        txs = self.txs
        for i in offered.tolist():
            tx = txs[i]
            if not validate(tx, pool.account(tx.sender), policy, pool):
                continue
            if pool.insert(tx).admitted:
                accepted.append(i)
        return self._new_state(pool, known), np.asarray(accepted, dtype=np.int64)

    def _forward(self, v: int, t: float, accepted: np.ndarray, msgs):
        peers = self.adj[v]
        d = peers.size
        if d == 0:
            return
        n = accepted.size
        pol = self.specs[v].propagation
        bmask = np.zeros((n, d), dtype=bool)
        amask = np.zeros((n, d), dtype=bool)
        rows = np.arange(n)[:, None]
        if pol.kind is PolicyKind.AGGRESSIVE:
            bmask[:] = True
        elif pol.kind is PolicyKind.SQRT:
            k = sqrt_peer_count(d)
            sel = kernels.sqrt_fanout(n, d, k, self.keys[v], self.ctr[v])
            self.ctr[v] += n * k
            bmask[rows, sel] = True
            amask = ~bmask
        else:
            kb = min(pol.broadcast_count, d)
            ka = min(pol.announce_count, d - kb)
            sel = kernels.sqrt_fanout(n, d, kb + ka, self.keys[v], self.ctr[v])
            self.ctr[v] += n * (kb + ka)
            bmask[rows, sel[:, :kb]] = True
            amask[rows, sel[:, kb:]] = True
        cols = self.col[v]
        for src, _, ids in msgs:
            j = cols.get(src)
            if j is None:
                continue
            pos = np.searchsorted(accepted, ids[np.isin(ids, accepted)])
            bmask[pos, j] = False
            amask[pos, j] = False
        sizes = self.sizes[accepted]
        b_bytes = sizes @ bmask
        a_items = amask.sum(axis=0)
        lat = self.specs[v].latency_ms
        t_d = t + lat
        for j in range(d):
            p = int(peers[j])
            if b_bytes[j]:
                ids = accepted[bmask[:, j]]
                self._account(v, p, MSG_BROADCAST, int(b_bytes[j]), ids.size)
                self._trace(p, v, MSG_BROADCAST, ids, t_d)
                self._deliver(p, t_d, v, _FULL, ids)
            if a_items[j]:
                ids = accepted[amask[:, j]]
                self._account(v, p, MSG_ANNOUNCE, HASH_SIZE * int(a_items[j]), ids.size)
                self._trace(p, v, MSG_ANNOUNCE, ids, t_d)
                self._deliver(p, t_d, v, _ANN, ids)

    # block production
    def produce_block(self, validator: int, apply: bool):
        pool = self.state_of[validator].pool
        block = build_block(pool, self.chain, self.cfg.block_tx_budget)
        if apply:
            included = [tx.hash for tx in block.included]
            seen = set()
            for st in list(self.state_of.values()):
                if id(st) in seen:
                    continue
                seen.add(id(st))
                update_on_block(st.pool, included, block.new_state)
            self.chain.update(block.new_state)
            self.cache.clear()
        return block


def sqrt_peer_count(x: int) -> int:
    """Peers receiving the full transaction under the sqrt policy (rounded sqrt)."""
    return int(math.floor(math.sqrt(x) + 0.5))


def _check_reachable(engine: _Engine, src: int, dst: int):
    if src == dst:
        return
    if src not in engine.graph or dst not in engine.graph or not nx.has_path(engine.graph, src, dst):
        raise ConfigError(f"validator {dst} cannot hear transactions submitted at node {src}")


def _attack_batches(config: SimConfig, accounts: int) -> list[int]:
    """Cumulative account counts at which attack submission batches end."""
    step = max(1, config.batch_accounts)
    ends = list(range(step, accounts, step))
    if accounts:
        ends.append(accounts)
    return ends


class _Scenario:
    """Honest preload followed by batched attack submissions at the target."""

    def __init__(self, config: SimConfig, accounts: int):
        self.cfg = config
        kind = config.attack_kind
        if accounts and kind is None:
            raise ConfigError("attack_accounts > 0 needs an attack_kind")
        total = (config.honest_accounts * config.honest_txs_each
                 + accounts * config.attack_txs_each + 16)
        self.engine = _Engine(config, total)
        self.validator = config.validator_id()
        self.target = config.target_id()
        if self.target not in self.engine.adj:
            raise ConfigError(f"target node {self.target} is not in the network")
        _check_reachable(self.engine, self.target, self.validator)
        honest, state = honest_transactions(config)
        self.engine.chain.update(state)
        self.honest_total = len(honest)
        self.honest_senders = set(state)
        ids = [self.engine.register(tx) for tx in honest]
        if ids:
            self.engine.submit(self.target, ids, 0.0)
        self.engine.quiesce()
        self.accounts_done = 0
        self.batch_no = 0

    def add_accounts(self, upto: int):
        eng, cfg = self.engine, self.cfg
        while self.accounts_done < upto:
            end = min(upto, self.accounts_done + max(1, cfg.batch_accounts))
            ids = []
            for a in range(self.accounts_done, end):
                txs, st = attack_transactions(cfg.attack_kind, a, cfg)
                eng.chain[f"{ATTACK_PREFIX}{a}"] = st
                ids.extend(eng.register(tx) for tx in txs)
            self.batch_no += 1
            eng.submit(self.target, ids, float(self.batch_no))
            eng.quiesce()
            self.accounts_done = end

    def metrics(self, apply_block: bool) -> SimMetrics:
        eng, cfg = self.engine, self.cfg
        pool = eng.state_of[self.validator].pool
        honest_in = attack_in = 0
        for tx in pool:
            if tx.sender in self.honest_senders:
                honest_in += 1
            elif tx.sender.startswith(ATTACK_PREFIX):
                attack_in += 1
        size = honest_in + attack_in
        if int(eng.bytes_in.sum()) != int(eng.bytes_out.sum()):
            raise InvariantError("bytes sent and received disagree")
        eng.run_until(cfg.slot_seconds * 1000.0)
        block = eng.produce_block(self.validator, apply_block)
        honest_blk = sum(1 for tx in block.included if tx.sender in self.honest_senders)
        attack_blk = [tx for tx in block.included if tx.sender.startswith(ATTACK_PREFIX)]
        return SimMetrics(
            attack_kind=cfg.attack_kind.value if cfg.attack_kind else "none",
            attack_accounts=self.accounts_done,
            honest_ratio_txpool=honest_in / size if size else 1.0,
            honest_ratio_block=honest_blk / cfg.block_tx_budget if cfg.block_tx_budget else 1.0,
            attack_txs_in_block=len(attack_blk),
            attack_cost=sum(tx.gas_limit * tx.gas_price for tx in attack_blk),
            honest_in_pool=honest_in,
            attack_in_pool=attack_in,
            honest_evicted=self.honest_total - honest_in,
            block_size=len(block.included),
            bytes_in=tuple(int(b) for b in eng.bytes_in),
            bytes_out=tuple(int(b) for b in eng.bytes_out),
            messages=dict(eng.msgs),
        )


def run_simulation(config: SimConfig) -> SimMetrics:
    """Honest preload, attack submissions, quiescence, then one block."""
    sc = _Scenario(config, config.attack_accounts)
    sc.add_accounts(config.attack_accounts)
    return sc.metrics(apply_block=True)


def run_attack_scenario(kind: AttackKind, attack_accounts: int, config: SimConfig) -> SimMetrics:
    return run_simulation(replace(config, attack_kind=kind, attack_accounts=attack_accounts))


def sweep_attack(kind: AttackKind, counts: Sequence[int], config: SimConfig) -> list[SimMetrics]:
    """Metrics at each attack-account count.

    Submissions are prefix-consistent, so when every count is a multiple of
    ``batch_accounts`` one run is checkpointed instead of rerun per point.
    """
    counts = list(counts)
    cfg = replace(config, attack_kind=kind)
    step = max(1, cfg.batch_accounts)
    if any(c % step for c in counts) or counts != sorted(counts):
        return [run_attack_scenario(kind, c, cfg) for c in counts]
    sc = _Scenario(cfg, max(counts, default=0))
    out = []
    for c in counts:
        sc.add_accounts(c)
        out.append(sc.metrics(apply_block=False))
    return out


def simulate_with_trace(config: SimConfig) -> tuple[SimMetrics, list[tuple]]:
    """Run ``config`` and return the monitors' message log rows as well."""
    sc = _Scenario(config, config.attack_accounts)
    sc.add_accounts(config.attack_accounts)
    return sc.metrics(apply_block=True), list(sc.engine.trace)


# -- amplification measurement ----------------------------------------------------

@dataclass
class TafMeasurement:
    taf: float
    attacker_bytes: int
    modified_bytes: int
    regular_bytes_in: int
    modified_reached: int


def measure_taf(config: SimConfig, injected_tx_size: int = 560, attacker: int | None = None,
                ) -> TafMeasurement:
    """Traffic modified nodes emit for one invalid tx, over the attacker's bytes."""
    attackers = [n.node_id for n in config.nodes if n.role is Role.ATTACKER]
    if attacker is None:
        if not attackers:
            raise ConfigError("measure_taf needs an attacker node")
        attacker = attackers[0]
    cfg = replace(config, honest_accounts=0, attack_accounts=0, trace_monitors=())
    eng = _Engine(cfg, 4)
    peers = eng.adj.get(attacker)
    if peers is None or peers.size == 0:
        raise ConfigError(f"attacker {attacker} has no peers")
    sender = f"{ATTACK_PREFIX}taf"
    eng.chain[sender] = AccountState(0, 0)
    payload = max(0, injected_tx_size - 110)
    tx = Transaction(sender, 0, 21_000, cfg.attack_gas_price, 10**18, payload,
                     total_size=injected_tx_size)
    i = eng.register(tx)
    ids = np.array([i], dtype=np.int64)
    for p in peers:
        eng.send(attacker, int(p), ids, 0.0)
    eng.quiesce()
    mods = [v for v in eng.adj if eng.specs[v].skips_state_checks
            and eng.specs[v].role in (Role.MODIFIED, Role.VALIDATOR)]
    mod_bytes = int(sum(eng.bytes_out[v] for v in mods))
    reached = sum(1 for v in mods if eng.state_of[v].known[i])
    att = int(eng.bytes_out[attacker])
    reg_in = int(sum(eng.bytes_in[v] for v in eng.adj if eng.specs[v].role is Role.REGULAR))
    return TafMeasurement(mod_bytes / att if att else 0.0, att, mod_bytes, reg_in, reached)


# -- config builders ---------------------------------------------------------------

def network_config(total_nodes: int = 600, degree: int = 41, gamma: float = 0.015,
                   seed: int = 0, modified_policy: PropagationPolicy | None = None,
                   regular_policy: PropagationPolicy | None = None, attacker: bool = True,
                   **overrides) -> SimConfig:
    """Random ``degree``-regular network with round(gamma*N) modified nodes.

    Node 0 is a (fully validating) validator, modified nodes follow, and an
    optional attacker hangs off the first modified node.
    """
    n_mod = int(round(gamma * total_nodes))
    mpol = modified_policy or PropagationPolicy.aggressive()
    rpol = regular_policy or PropagationPolicy.sqrt()
    nodes = [replace(NodeSpec.validator(0, degree), propagation=rpol)]
    for v in range(1, total_nodes):
        if v <= n_mod:
            nodes.append(replace(NodeSpec.modified(v, degree), propagation=mpol))
        else:
            nodes.append(replace(NodeSpec.regular(v, degree), propagation=rpol))
    links = ()
    if attacker:
        nodes.append(NodeSpec.attacker(total_nodes))
        if n_mod == 0:
            links = ((total_nodes, total_nodes - 1),)
        else:
            links = ((total_nodes, 1),)
    topo = Topology("random_regular", degree, attacker_links=links)
    return SimConfig(tuple(nodes), topo, seed=seed, **overrides)


def attack_config(total_nodes: int = 600, degree: int = 8, seed: int = 0,
                  **overrides) -> SimConfig:
    """Eviction-experiment network: the validator runs the modified client and
    receives every RPC submission; all other nodes validate fully."""
    nodes = [NodeSpec.validator(0, degree, modified=True)]
    nodes += [NodeSpec.regular(v, degree) for v in range(1, total_nodes)]
    return SimConfig(tuple(nodes), Topology("random_regular", degree), seed=seed, **overrides)


# -- cost of saturation ------------------------------------------------------------

@dataclass(frozen=True)
class Bandwidths:
    modified_out_bps: float = 2.5e9
    regular_in_bps: float = 12.5e6


def traffic_saturation_cost(population, pricing: PricingSchedule | None = None,
                            bandwidths: Bandwidths = Bandwidths(),
                            external_share: float = 0.8) -> SaturationResult:
    """Monthly egress cost when attackers saturate every modified node.

    ``population`` is a :class:`SimConfig` (roles are counted) or a
    ``(modified_count, regular_count)`` pair.
    """
    if isinstance(population, SimConfig):
        mod = sum(1 for n in population.nodes if n.role is Role.MODIFIED
                  or (n.role is Role.VALIDATOR and n.skips_state_checks))
        reg = sum(1 for n in population.nodes if n.role is Role.REGULAR
                  or (n.role is Role.VALIDATOR and not n.skips_state_checks))
    else:
        mod, reg = population
    return saturation_cost(mod, reg, bandwidths.modified_out_bps, bandwidths.regular_in_bps,
                           pricing, external_share)


# -- estimator fixtures ---------------------------------------------------------------

def sqrt_policy_counts(x: int, m: int, seed: int, peer_id: str = "peer",
                       monitor_index: int = 0) -> MessageCounts:
    """0x02/0x08 counts one monitor receives from a sqrt-policy node with ``x`` peers.

    Uses the same counter-mode fan-out sampling as the simulator's sqrt
    propagation (one draw of round(sqrt(x)) peers per transaction).
    """
    if x < 1 or m < 0:
        raise ValueError("x must be >= 1 and m >= 0")
    if not 0 <= monitor_index < x:
        raise ValueError("monitor_index must name one of the x peers")
    k = sqrt_peer_count(x)
    key = kernels.stream_key(seed, 100, monitor_index)
    if monitor_index == 0:
        hits = kernels.monitor_hits(x, k, m, key)
    else:
        sel = kernels.sqrt_fanout(m, x, k, key)
        hits = int(np.count_nonzero((sel == monitor_index).any(axis=1)))
    return MessageCounts(peer_id, hits, m - hits)
