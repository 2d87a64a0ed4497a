"""Transaction validation, a bounded txpool with price-based eviction, and
forging of the three invalid-transaction classes."""
from __future__ import annotations

import enum
import hashlib
import heapq
import itertools
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, MutableMapping

MIN_ENCODED_SIZE = 110
DEFAULT_CAPACITY = 5120
DEFAULT_MAX_GAP = 64


class ForgeError(ValueError):
    pass


@dataclass(frozen=True)
class Transaction:
    """A signed transaction; ``hash`` covers every field (re-signing model)."""

    sender: str
    nonce: int
    gas_limit: int = 21_000
    gas_price: int = 1
    value: int = 0
    payload_size: int = 0
    data_tag: int = 0
    total_size: int = 0
    hash: str = field(default="", compare=False)

    def __post_init__(self):
        if self.nonce < 0 or self.gas_limit < 0 or self.gas_price < 0 or self.value < 0:
            raise ValueError("transaction fields must be nonnegative")
        minimal = MIN_ENCODED_SIZE + self.payload_size
        if self.total_size < minimal:
            object.__setattr__(self, "total_size", minimal)
        digest = hashlib.blake2b(
            f"{self.sender}|{self.nonce}|{self.gas_limit}|{self.gas_price}|{self.value}|"
            f"{self.payload_size}|{self.data_tag}|{self.total_size}".encode(),
            digest_size=16).hexdigest()
        object.__setattr__(self, "hash", "0x" + digest)

    @property
    def cost(self) -> int:
        return self.gas_limit * self.gas_price + self.value

    def with_changes(self, **kw) -> "Transaction":
        kw.setdefault("total_size", 0 if "payload_size" in kw else self.total_size)
        return replace(self, hash="", **kw)

    def to_row(self) -> list:
        return [self.hash, self.sender, self.nonce, self.gas_limit, self.gas_price,
                self.value, self.payload_size, self.total_size]


TX_FIELDS = ("hash", "sender", "nonce", "gas_limit", "gas_price", "value",
             "payload_size", "total_size")


def tx_from_row(row) -> Transaction:
    tx = Transaction(row[1], int(row[2]), int(row[3]), int(row[4]), int(row[5]),
                     int(row[6]), total_size=int(row[7]))
    return tx


@dataclass(frozen=True)
class AccountState:
    balance: int = 0
    nonce: int = 0

    def __post_init__(self):
        if self.balance < 0 or self.nonce < 0:
            raise ValueError("account state must be nonnegative")


EMPTY_ACCOUNT = AccountState()


@dataclass(frozen=True)
class ValidationPolicy:
    check_stateless: bool = True
    check_balance: bool = True
    check_nonce: bool = True
    gas_bump_percent: int = 10
    max_tx_size: int = 131_072
    update_stage_enabled: bool = True

    def __post_init__(self):
        if self.gas_bump_percent < 0:
            raise ValueError("gas_bump_percent must be >= 0")

    @classmethod
    def regular(cls) -> "ValidationPolicy":
        return cls()

    @classmethod
    def modified(cls) -> "ValidationPolicy":
        """Skips state checks and the gas bump rule."""
        return cls(check_balance=False, check_nonce=False, gas_bump_percent=0)

    @classmethod
    def disabled(cls) -> "ValidationPolicy":
        return cls(False, False, False, 0)


class Reason(enum.Enum):
    OVERSIZE = "oversize"
    INSUFFICIENT_BALANCE = "insufficient_balance"
    PAST_NONCE = "past_nonce"
    UNDERPRICED = "underpriced"


@dataclass(frozen=True)
class Accept:
    def __bool__(self):
        return True


@dataclass(frozen=True)
class Reject:
    reason: Reason

    def __bool__(self):
        return False


ACCEPT = Accept()
_REJECTS = {r: Reject(r) for r in Reason}


def validate(tx: Transaction, state: AccountState, policy: ValidationPolicy,
             pool: "TxPool | None" = None):
    """Run the enabled checks in order; the first failure wins."""
    if policy.check_stateless and tx.total_size > policy.max_tx_size:
        return _REJECTS[Reason.OVERSIZE]
    if policy.check_balance and state.balance < tx.cost:
        return _REJECTS[Reason.INSUFFICIENT_BALANCE]
    if policy.check_nonce and tx.nonce < state.nonce:
        return _REJECTS[Reason.PAST_NONCE]
    if pool is not None:
        top = pool.slot_price(tx.sender, tx.nonce)
        if top is not None and tx.gas_price * 100 < top * (100 + policy.gas_bump_percent):
            return _REJECTS[Reason.UNDERPRICED]
    return ACCEPT


class InsertKind(enum.Enum):
    INSERTED = "inserted"
    REPLACED = "replaced"
    EVICTED_OTHER = "evicted_other"
    REJECTED_FULL = "rejected_full"
    REJECTED_GAP = "rejected_gap"
    ALREADY_KNOWN = "already_known"


@dataclass(frozen=True)
class InsertResult:
    kind: InsertKind
    other: Transaction | None = None

    @property
    def admitted(self) -> bool:
        return self.kind in (InsertKind.INSERTED, InsertKind.REPLACED, InsertKind.EVICTED_OTHER)


_INSERTED = InsertResult(InsertKind.INSERTED)
_FULL = InsertResult(InsertKind.REJECTED_FULL)
_GAP = InsertResult(InsertKind.REJECTED_GAP)
_KNOWN = InsertResult(InsertKind.ALREADY_KNOWN)


class _Entry:
    __slots__ = ("tx", "seq", "pending")

    def __init__(self, tx, seq, pending):
        self.tx = tx
        self.seq = seq
        self.pending = pending


class TxPool:
    """Bounded pool of pending (executable) and queued (gapped) transactions.

    Both sections share ``capacity``. When full, a newcomer evicts the
    cheapest entry (oldest first on ties) only if it pays strictly more; a
    gapped newcomer may only displace queued entries. With a gas bump of
    zero, same-(sender, nonce) duplicates co-reside instead of replacing.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY, policy: ValidationPolicy | None = None,
                 state: Mapping[str, AccountState] | None = None, max_gap: int = DEFAULT_MAX_GAP):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.policy = policy or ValidationPolicy.regular()
        self.state = state if state is not None else {}
        self.max_gap = max_gap
        self._entries: dict[str, _Entry] = {}
        self._slots: dict[str, dict[int, list[str]]] = {}
        self._frontier: dict[str, int] = {}
        self._pending_heap: list = []
        self._queued_heap: list = []
        self._seq = itertools.count()

    # -- queries ---------------------------------------------------------------
    def __len__(self):
        return len(self._entries)

    def __contains__(self, tx_hash):
        return tx_hash in self._entries

    def __iter__(self):
        return (e.tx for e in self._entries.values())

    def get(self, tx_hash) -> Transaction | None:
        e = self._entries.get(tx_hash)
        return None if e is None else e.tx

    def hashes(self) -> set:
        return set(self._entries)

    def is_pending(self, tx_hash) -> bool:
        return self._entries[tx_hash].pending

    def slot_price(self, sender: str, nonce: int) -> int | None:
        slot = self._slots.get(sender)
        if not slot:
            return None
        hs = slot.get(nonce)
        if not hs:
            return None
        return max(self._entries[h].tx.gas_price for h in hs)

    def account(self, sender: str) -> AccountState:
        return self.state.get(sender, EMPTY_ACCOUNT)

    def clone(self, state: Mapping[str, AccountState] | None = None) -> "TxPool":
        """Independent copy sharing the immutable transactions."""
        other = TxPool.__new__(TxPool)
        other.capacity = self.capacity
        other.policy = self.policy
        other.state = self.state if state is None else state
        other.max_gap = self.max_gap
        other._entries = {h: _Entry(e.tx, e.seq, e.pending) for h, e in self._entries.items()}
        other._slots = {s: {n: list(hs) for n, hs in d.items()} for s, d in self._slots.items()}
        other._frontier = dict(self._frontier)
        other._pending_heap = list(self._pending_heap)
        other._queued_heap = list(self._queued_heap)
        start = next(self._seq)
        self._seq = itertools.count(start + 1)
        other._seq = itertools.count(start + 1)
        return other

    # -- internals -------------------------------------------------------------
    def _frontier_of(self, sender: str) -> int:
        f = self._frontier.get(sender)
        if f is None:
            f = self.account(sender).nonce
            slot = self._slots.get(sender)
            if slot:
                while slot.get(f):
                    f += 1
            self._frontier[sender] = f
        return f

    def _push(self, e: _Entry):
        heapq.heappush(self._pending_heap if e.pending else self._queued_heap,
                       (e.tx.gas_price, e.seq, e.tx.hash))

    def _peek(self, heap, pending: bool):
        entries = self._entries
        while heap:
            price, seq, h = heap[0]
            e = entries.get(h)
            if e is not None and e.seq == seq and e.pending is pending:
                return e
            heapq.heappop(heap)
        return None

    def _cheapest(self, gapped: bool):
        q = self._peek(self._queued_heap, False)
        if gapped:
            return q
        p = self._peek(self._pending_heap, True)
        if p is None:
            return q
        if q is None:
            return p
        return p if (p.tx.gas_price, p.seq) < (q.tx.gas_price, q.seq) else q

    def _detach(self, h: str) -> _Entry:
        e = self._entries.pop(h)
        tx = e.tx
        slot = self._slots[tx.sender]
        hs = slot[tx.nonce]
        hs.remove(h)
        if not hs:
            del slot[tx.nonce]
            if not slot:
                del self._slots[tx.sender]
            f = self._frontier.get(tx.sender)
            if f is not None and tx.nonce < f and tx.nonce >= self.account(tx.sender).nonce:
                # a hole opens: everything above it becomes gapped
                self._frontier[tx.sender] = tx.nonce
                n = tx.nonce + 1
                while n < f:
                    for h2 in slot.get(n, ()):
                        e2 = self._entries[h2]
                        if e2.pending:
                            e2.pending = False
                            self._push(e2)
                    n += 1
        return e

    def _attach(self, tx: Transaction, seq: int | None = None):
        s, n = tx.sender, tx.nonce
        f = self._frontier_of(s)
        e = _Entry(tx, next(self._seq) if seq is None else seq, n <= f)
        self._entries[tx.hash] = e
        slot = self._slots.setdefault(s, {})
        slot.setdefault(n, []).append(tx.hash)
        self._push(e)
        if n == f:
            f += 1
            while slot.get(f):
                for h2 in slot[f]:
                    e2 = self._entries[h2]
                    if not e2.pending:
                        e2.pending = True
                        self._push(e2)
                f += 1
            self._frontier[s] = f

    # -- mutation --------------------------------------------------------------
    def insert(self, tx: Transaction) -> InsertResult:
        h = tx.hash
        if h in self._entries:
            return _KNOWN
        s, n = tx.sender, tx.nonce
        slot = self._slots.get(s)
        existing = slot.get(n) if slot else None
        if existing and self.policy.gas_bump_percent > 0:
            old = self._entries[existing[0]]
            pending = old.pending
            for oh in list(existing):
                self._entries.pop(oh)
            del slot[n]
            e = _Entry(tx, next(self._seq), pending)
            self._entries[h] = e
            slot[n] = [h]
            self._push(e)
            return InsertResult(InsertKind.REPLACED, old.tx)
        f = self._frontier_of(s)
        if n > f + self.max_gap:
            return _GAP
        victim = None
        if len(self._entries) >= self.capacity:
            cheapest = self._cheapest(gapped=n > f)
            if cheapest is None or tx.gas_price <= cheapest.tx.gas_price:
                return _FULL
            victim = self._detach(cheapest.tx.hash).tx
        self._attach(tx)
        if victim is None:
            return _INSERTED
        return InsertResult(InsertKind.EVICTED_OTHER, victim)

    def remove(self, tx_hash: str) -> Transaction | None:
        if tx_hash not in self._entries:
            return None
        return self._detach(tx_hash).tx

    def resync(self, senders: Iterable[str] | None = None):
        """Recompute pending/queued status after an account-state change."""
        senders = list(self._slots) if senders is None else list(senders)
        for s in senders:
            self._frontier.pop(s, None)
            slot = self._slots.get(s)
            if not slot:
                continue
            f = self._frontier_of(s)
            for n, hs in slot.items():
                for h in hs:
                    e = self._entries[h]
                    want = n <= f
                    if e.pending is not want:
                        e.pending = want
                        self._push(e)

    def check_invariants(self):
        assert len(self._entries) <= self.capacity, "pool over capacity"
        count = sum(len(hs) for d in self._slots.values() for hs in d.values())
        assert count == len(self._entries), "slot index out of sync"
        for s, slot in self._slots.items():
            f = self._frontier_of(s)
            for n, hs in slot.items():
                for h in hs:
                    assert self._entries[h].pending is (n <= f), "stale pending flag"
                if self.policy.gas_bump_percent > 0:
                    assert len(hs) == 1, "duplicate (sender, nonce) under bump rule"


def pool_insert(pool: TxPool, tx: Transaction) -> InsertResult:
    return pool.insert(tx)


def submit(pool: TxPool, tx: Transaction) -> InsertResult | Reject:
    """Validate against the pool's own policy and state, then insert."""
    verdict = validate(tx, pool.account(tx.sender), pool.policy, pool)
    if not verdict:
        return verdict
    return pool.insert(tx)


def update_on_block(pool: TxPool, included: Iterable[str],
                    new_state: Mapping[str, AccountState]) -> int:
    """Drop included transactions and those the new state invalidates.

    ``new_state`` entries are written into the pool's state mapping, which
    may be shared with other pools.
    """
    if not pool.policy.update_stage_enabled:
        return 0
    removed = 0
    for h in included:
        if pool.remove(h) is not None:
            removed += 1
    if isinstance(pool.state, MutableMapping):
        for acct, st in new_state.items():
            pool.state[acct] = st
    touched = set(new_state)
    for tx in [t for t in pool if t.sender in touched]:
        st = new_state[tx.sender]
        if tx.nonce < st.nonce or st.balance < tx.cost:
            pool.remove(tx.hash)
            removed += 1
    pool.resync(touched)
    return removed


# -- block building -------------------------------------------------------------

@dataclass
class BlockResult:
    included: list[Transaction]
    skipped_invalid: int
    new_state: dict[str, AccountState]
    fees: int


def build_block(pool: TxPool, state: Mapping[str, AccountState], budget: int) -> BlockResult:
    """Greedy highest-price block from executable nonce sequences.

    Reads the pool without modifying it. Entries below the account nonce or
    that the sender cannot afford are skipped and never charged.
    """
    by_sender: dict[str, dict[int, list[Transaction]]] = {}
    for tx in pool:
        by_sender.setdefault(tx.sender, {}).setdefault(tx.nonce, []).append(tx)
    for d in by_sender.values():
        for lst in d.values():
            lst.sort(key=lambda t: -t.gas_price)

    acct = {s: state.get(s, EMPTY_ACCOUNT) for s in by_sender}
    heap = []
    for s, d in by_sender.items():
        txs = d.get(acct[s].nonce)
        if txs:
            heap.append((-txs[0].gas_price, txs[0].hash, s))
    heapq.heapify(heap)

    included, skipped, fees = [], 0, 0
    while heap and len(included) < budget:
        _, _, s = heapq.heappop(heap)
        st = acct[s]
        tx = by_sender[s][st.nonce][0]
        if st.balance < tx.cost:
            skipped += 1
            continue
        included.append(tx)
        fees += tx.gas_limit * tx.gas_price
        st = AccountState(st.balance - tx.cost, st.nonce + 1)
        acct[s] = st
        nxt = by_sender[s].get(st.nonce)
        if nxt:
            heapq.heappush(heap, (-nxt[0].gas_price, nxt[0].hash, s))
    skipped += sum(len(lst) for s, d in by_sender.items() for n, lst in d.items()
                   if n < state.get(s, EMPTY_ACCOUNT).nonce)
    changed = {s: st for s, st in acct.items() if st != state.get(s, EMPTY_ACCOUNT)}
    return BlockResult(included, skipped, changed, fees)


# -- forging --------------------------------------------------------------------

class ForgeKind(enum.Enum):
    INSUFFICIENT_BALANCE = "insufficient_balance"
    PAST_NONCE = "past_nonce"
    DUPLICATION = "duplication"


class Vary(enum.Enum):
    GAS_LIMIT = "gas"
    NONCE = "nonce"
    DATA = "data"
    VALUE = "value"


@dataclass(frozen=True)
class ForgeStrategy:
    kind: ForgeKind
    count: int
    vary: Vary = Vary.DATA
    gas_price: int | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ForgeError("count must be >= 1")


def forge_invalid(strategy: ForgeStrategy, base: Transaction,
                  state_view: AccountState) -> list[Transaction]:
    """Produce ``strategy.count`` transactions no fully-validating node accepts.

    Insufficient-balance forgeries come from fresh, never-funded senders;
    past-nonce ones reuse nonces below ``state_view.nonce``; duplicates keep
    (sender, nonce, gas price) and perturb one field so the hash changes.
    """
    k = strategy.count
    if strategy.kind is ForgeKind.INSUFFICIENT_BALANCE:
        price = strategy.gas_price or max(base.gas_price, 1) * 100
        value = max(base.value, 1)
        tag = hashlib.blake2b(base.hash.encode(), digest_size=4).hexdigest()
        return [base.with_changes(sender=f"forged-{tag}-{i}", nonce=0, gas_price=price, value=value)
                for i in range(k)]
    if strategy.kind is ForgeKind.PAST_NONCE:
        if state_view.nonce < k:
            raise ForgeError(f"need account nonce >= {k}, have {state_view.nonce}")
        price = strategy.gas_price or max(base.gas_price, 1) * 100
        return [base.with_changes(nonce=state_view.nonce - 1 - i, gas_price=price)
                for i in range(k)]
    if strategy.kind is ForgeKind.DUPLICATION:
        vary = strategy.vary
        out = []
        for i in range(k):
            if vary is Vary.GAS_LIMIT:
                out.append(base.with_changes(gas_limit=base.gas_limit + i))
            elif vary is Vary.NONCE:
                out.append(base.with_changes(nonce=base.nonce + i))
            elif vary is Vary.DATA:
                out.append(base.with_changes(data_tag=base.data_tag + i + 1))
            else:
                out.append(base.with_changes(value=base.value + i))
        return out
    raise ForgeError(f"unknown strategy {strategy.kind}")


# -- latency ---------------------------------------------------------------------

@dataclass(frozen=True)
class LatencyConstants:
    stateless_ms: float = 0.08
    stateful_ms: float = 0.89


def validation_latency(tx: Transaction | None, policy: ValidationPolicy,
                       constants: LatencyConstants = LatencyConstants()) -> float:
    """Milliseconds spent validating one transaction under ``policy``.

    One state lookup serves both the balance and the nonce check.
    """
    ms = 0.0
    if policy.check_stateless:
        ms += constants.stateless_ms
    if policy.check_balance or policy.check_nonce:
        ms += constants.stateful_ms
    return ms
