"""Offline analysis of txpool observation logs.

Labels dropped transactions against chain data, finds per-sender spam
bursts, classifies what the sender varied, and compares observation
sources on latency and dropped-transaction ratios.
"""
from __future__ import annotations

import bisect
import datetime as _dt
import enum
import json
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from . import kernels
from .records import InputError, read_records
from .txpool import EMPTY_ACCOUNT, AccountState

DAY_MS = 86_400_000
WEEK_MS = 7 * DAY_MS
SLOT_MS = 12_000
WEI_PER_ETH = 10**18


class CoverageError(ValueError):
    """Chain data ends before the lookup window of some observation."""


@dataclass(frozen=True)
class TxDetails:
    sender: str
    nonce: int
    gas_limit: int
    gas_price: int
    value: int
    payload_digest: str
    size_bytes: int

    @property
    def cost(self) -> int:
        return self.gas_limit * self.gas_price + self.value


@dataclass(frozen=True)
class TxObservation:
    tx_hash: str
    source: str
    timestamp_ms: int
    details: TxDetails | None = None


@dataclass(frozen=True)
class ChainRecord:
    tx_hash: str
    inclusion_timestamp_ms: int
    effective_gas_price: int
    gas_used: int

    @property
    def fee_wei(self) -> int:
        return self.effective_gas_price * self.gas_used


class Classification(enum.Enum):
    GAS = "gas"
    NONCE = "nonce"
    DATA = "data"
    VALUE = "value"
    INSUFFICIENT_BALANCE = "insufficient_balance"
    PAST_NONCE = "past_nonce"
    UNCLASSIFIABLE = "unclassifiable"


# tie-break order for the duplication classes
_VARIED = (
    (Classification.GAS, lambda d: d.gas_limit),
    (Classification.NONCE, lambda d: d.nonce),
    (Classification.DATA, lambda d: d.payload_digest),
    (Classification.VALUE, lambda d: d.value),
)


@dataclass(frozen=True)
class InstanceStats:
    size_avg_bytes: float
    onchain_count: int
    total_cost_usd: float
    median_interval_ms: float
    victim_count: int


@dataclass
class AttackInstance:
    sender: str
    start_ms: int
    end_ms: int
    members: tuple  # (tx_hash, first_seen_ms, TxDetails | None), time-ordered
    dropped_count: int
    classification: Classification | None = None
    stats: InstanceStats | None = None

    @property
    def tx_hashes(self) -> frozenset:
        return frozenset(h for h, _, _ in self.members)

    @property
    def window(self) -> tuple[int, int]:
        return self.start_ms, self.end_ms

    def to_record(self) -> dict:
        rec = {
            "sender": self.sender,
            "start_ms": self.start_ms,
            "end_ms": self.end_ms,
            "tx_count": len(self.members),
            "dropped_count": self.dropped_count,
            "classification": self.classification.value if self.classification else None,
        }
        if self.stats is not None:
            rec.update(vars(self.stats))
        rec["tx_hashes"] = sorted(self.tx_hashes)
        return rec


# -- state oracle -------------------------------------------------------------

class StateOracle(Protocol):
    def state(self, account: str, height: int) -> AccountState: ...


class FileStateOracle:
    """Account snapshots ``account, height, balance, nonce``.

    A query returns the latest snapshot at or below ``height``; accounts
    with no snapshot are empty (zero balance, nonce 0).
    """

    def __init__(self, snapshots: Iterable[tuple[str, int, int, int]] = ()):
        table: dict[str, list] = defaultdict(list)
        for account, height, balance, nonce in snapshots:
            table[account].append((int(height), AccountState(int(balance), int(nonce))))
        self._heights = {}
        self._states = {}
        for account, rows in table.items():
            rows.sort(key=lambda r: r[0])
            self._heights[account] = [h for h, _ in rows]
            self._states[account] = [s for _, s in rows]

    @classmethod
    def from_file(cls, path) -> "FileStateOracle":
        rows = read_records(path, lambda r: (r[0], int(r[1]), int(r[2]), int(r[3])), 4,
                            header_first="account")
        return cls(rows)

    def state(self, account: str, height: int) -> AccountState:
        hs = self._heights.get(account)
        if not hs:
            return EMPTY_ACCOUNT
        i = bisect.bisect_right(hs, height) - 1
        return self._states[account][i] if i >= 0 else EMPTY_ACCOUNT


@dataclass(frozen=True)
class BlockClock:
    """Maps wall-clock milliseconds to block heights on a fixed slot grid."""

    genesis_ms: int = 0
    slot_ms: int = SLOT_MS

    def height_at(self, timestamp_ms: int) -> int:
        return max(0, (timestamp_ms - self.genesis_ms) // self.slot_ms)


# -- core operations ------------------------------------------------------------

def dedupe_observations(observations: Iterable[TxObservation]) -> list[TxObservation]:
    """Earliest observation per (tx_hash, source), in a canonical order."""
    best: dict[tuple, TxObservation] = {}
    for ob in observations:
        key = (ob.tx_hash, ob.source)
        cur = best.get(key)
        if cur is None or ob.timestamp_ms < cur.timestamp_ms:
            best[key] = ob
        elif cur.details is None and ob.details is not None and ob.timestamp_ms == cur.timestamp_ms:
            best[key] = ob
    return sorted(best.values(), key=lambda o: (o.timestamp_ms, o.tx_hash, o.source))


def first_seen(observations: Iterable[TxObservation]) -> dict[str, TxObservation]:
    """Earliest observation of each transaction across all sources."""
    out: dict[str, TxObservation] = {}
    details: dict[str, TxDetails] = {}
    for ob in dedupe_observations(observations):
        if ob.tx_hash not in out:
            out[ob.tx_hash] = ob
        if ob.details is not None:
            details.setdefault(ob.tx_hash, ob.details)
    for h, ob in out.items():
        if ob.details is None and h in details:
            out[h] = TxObservation(ob.tx_hash, ob.source, ob.timestamp_ms, details[h])
    return out


def label_dropped(observations: Iterable[TxObservation], chain: Iterable[ChainRecord],
                  window_days: float = 7.0, chain_end_ms: int | None = None) -> dict[str, bool]:
    """``True`` for transactions not on chain within ``window_days`` of first sight.

    ``chain_end_ms`` is the last instant the chain data covers (defaults to
    the latest inclusion timestamp); every observation's window must fit.
    """
    if window_days < 0:
        raise ValueError("window_days must be >= 0")
    included = {}
    for rec in chain:
        prev = included.get(rec.tx_hash)
        if prev is None or rec.inclusion_timestamp_ms < prev:
            included[rec.tx_hash] = rec.inclusion_timestamp_ms
    seen = first_seen(observations)
    if not seen:
        return {}
    window_ms = window_days * DAY_MS
    end = chain_end_ms if chain_end_ms is not None else max(included.values(), default=None)
    latest = max(ob.timestamp_ms for ob in seen.values())
    if end is None or latest + window_ms > end:
        raise CoverageError(f"chain data must cover up to {latest + window_ms:.0f} ms, "
                            f"ends at {end}")
    labels = {}
    for h, ob in seen.items():
        t = included.get(h)
        labels[h] = t is None or t - ob.timestamp_ms > window_ms
    return labels


def detect_spam_instances(observations: Iterable[TxObservation], dropped: Mapping[str, bool],
                          window_ms: int = SLOT_MS, min_count: int = 100,
                          min_drop_frac: float = 0.95) -> list[AttackInstance]:
    """Per-sender sliding windows with more than ``min_count`` transactions of
    which more than ``min_drop_frac`` were dropped; overlapping hits merge."""
    by_sender: dict[str, list] = defaultdict(list)
    for h, ob in first_seen(observations).items():
        if ob.details is None:
            continue
        by_sender[ob.details.sender].append((ob.timestamp_ms, h, ob.details))
    out = []
    for sender in sorted(by_sender):
        rows = sorted(by_sender[sender], key=lambda r: (r[0], r[1]))
        if len(rows) <= min_count:
            continue
        times = np.fromiter((r[0] for r in rows), dtype=np.int64, count=len(rows))
        flags = np.fromiter((bool(dropped.get(r[1], False)) for r in rows), dtype=np.uint8,
                            count=len(rows))
        for s, e in kernels.burst_windows(times, flags, window_ms, min_count, min_drop_frac):
            members = tuple((h, t, d) for t, h, d in rows[s:e])
            out.append(AttackInstance(sender, int(times[s]), int(times[e - 1]), members,
                                      int(flags[s:e].sum())))
    return out


def classify_instance(instance: AttackInstance, oracle: StateOracle,
                      clock: BlockClock = BlockClock(), lag_blocks: int = 2) -> Classification:
    """What makes the instance's transactions invalid or duplicated.

    State is read ``lag_blocks`` before the instance starts. Balance is
    checked first, then past nonces, then the field with the most distinct
    values (ties: gas limit, nonce, data, value).
    """
    details = [d for _, _, d in instance.members]
    if not details or any(d is None for d in details):
        return Classification.UNCLASSIFIABLE
    height = max(0, clock.height_at(instance.start_ms) - lag_blocks)
    state = oracle.state(instance.sender, height)
    if any(state.balance < d.cost for d in details):
        return Classification.INSUFFICIENT_BALANCE
    if any(d.nonce < state.nonce for d in details):
        return Classification.PAST_NONCE
    best, best_n = Classification.UNCLASSIFIABLE, 0
    for cls, key in _VARIED:
        n = len({key(d) for d in details})
        if n > best_n:
            best, best_n = cls, n
    return best


def _price_on(prices: Mapping, timestamp_ms: int) -> float:
    day = _dt.datetime.fromtimestamp(timestamp_ms / 1000, tz=_dt.timezone.utc).date()
    for key in (day, day.isoformat()):
        if key in prices:
            return float(prices[key])
    raise CoverageError(f"no USD/ETH price for {day.isoformat()}")


def instance_stats(instance: AttackInstance, chain: Iterable[ChainRecord],
                   prices: Mapping, observations: Iterable[TxObservation] = ()) -> InstanceStats:
    """Per-instance size, on-chain, cost, intensity and victim metrics; ``observations`` supplies the victim sources."""
    hashes = instance.tx_hashes
    on_chain = [r for r in chain if r.tx_hash in hashes]
    cost = sum(r.fee_wei / WEI_PER_ETH * _price_on(prices, r.inclusion_timestamp_ms)
               for r in on_chain)
    sizes = [d.size_bytes for _, _, d in instance.members if d is not None]
    times = [t for _, t, _ in instance.members]
    gaps = np.diff(times)
    victims = {ob.source for ob in observations if ob.tx_hash in hashes}
    return InstanceStats(
        size_avg_bytes=float(np.mean(sizes)) if sizes else 0.0,
        onchain_count=len({r.tx_hash for r in on_chain}),
        total_cost_usd=float(cost),
        median_interval_ms=float(np.median(gaps)) if gaps.size else 0.0,
        victim_count=len(victims),
    )


def analyze(observations: Sequence[TxObservation], chain: Sequence[ChainRecord],
            oracle: StateOracle, prices: Mapping | None = None, window_days: float = 7.0,
            chain_end_ms: int | None = None, clock: BlockClock = BlockClock()
            ) -> list[AttackInstance]:
    """Label, detect, classify and (with ``prices``) annotate every instance."""
    labels = label_dropped(observations, chain, window_days, chain_end_ms)
    instances = detect_spam_instances(observations, labels)
    for inst in instances:
        inst.classification = classify_instance(inst, oracle, clock)
        if prices is not None:
            inst.stats = instance_stats(inst, chain, prices, observations)
    return instances


# -- source comparison --------------------------------------------------------------

@dataclass
class SourceComparison:
    sources: tuple
    median_latency_ms: dict
    dropped_ratio: dict  # source -> {week index: ratio}
    cooccurrence: dict = field(default_factory=dict)  # day index -> matrix over sources

    def mean_cooccurrence(self) -> np.ndarray:
        if not self.cooccurrence:
            return np.zeros((len(self.sources), len(self.sources)))
        return np.mean(list(self.cooccurrence.values()), axis=0)


def compare_sources(observations: Iterable[TxObservation], dropped: Mapping[str, bool],
                    bucket_ms: int = WEEK_MS) -> SourceComparison:
    """Propagation lag and dropped ratios per source, plus daily overlap of
    dropped transactions between sources (diagonal: own daily count)."""
    obs = dedupe_observations(observations)
    sources = tuple(sorted({o.source for o in obs}))
    index = {s: i for i, s in enumerate(sources)}
    earliest: dict[str, int] = {}
    for o in obs:
        if o.tx_hash not in earliest or o.timestamp_ms < earliest[o.tx_hash]:
            earliest[o.tx_hash] = o.timestamp_ms
    lat: dict[str, list] = defaultdict(list)
    counts: dict[str, dict] = defaultdict(lambda: defaultdict(lambda: [0, 0]))
    seen_by: dict[str, set] = defaultdict(set)
    for o in obs:
        is_dropped = bool(dropped.get(o.tx_hash, False))
        if not is_dropped and o.tx_hash in dropped:
            lat[o.source].append(o.timestamp_ms - earliest[o.tx_hash])
        c = counts[o.source][o.timestamp_ms // bucket_ms]
        c[0] += is_dropped
        c[1] += 1
        if is_dropped:
            seen_by[o.tx_hash].add(o.source)
    matrices: dict[int, np.ndarray] = {}
    for h, srcs in seen_by.items():
        day = earliest[h] // DAY_MS
        m = matrices.get(day)
        if m is None:
            m = matrices[day] = np.zeros((len(sources), len(sources)), dtype=np.int64)
        ix = [index[s] for s in srcs]
        m[np.ix_(ix, ix)] += 1
    return SourceComparison(
        sources=sources,
        median_latency_ms={s: float(statistics.median(lat[s])) if lat[s] else None
                           for s in sources},
        dropped_ratio={s: {w: d / n for w, (d, n) in sorted(counts[s].items())}
                       for s in sources},
        cooccurrence=dict(sorted(matrices.items())),
    )


# -- summaries and I/O ---------------------------------------------------------------

SUMMARY_FIELDS = ("classification", "cases", "avg_txs", "avg_size_bytes", "avg_onchain",
                  "avg_cost_usd", "avg_median_interval_ms", "avg_victims")


def summarize(instances: Sequence[AttackInstance]) -> list[dict]:
    """One summary row per classification, in enum order."""
    groups: dict[Classification, list] = defaultdict(list)
    for inst in instances:
        groups[inst.classification or Classification.UNCLASSIFIABLE].append(inst)
    rows = []
    for cls in Classification:
        group = groups.get(cls)
        if not group:
            continue
        stats = [g.stats for g in group if g.stats is not None]

        def avg(attr):
            return float(np.mean([getattr(s, attr) for s in stats])) if stats else None

        rows.append({
            "classification": cls.value,
            "cases": len(group),
            "avg_txs": float(np.mean([len(g.members) for g in group])),
            "avg_size_bytes": avg("size_avg_bytes"),
            "avg_onchain": avg("onchain_count"),
            "avg_cost_usd": avg("total_cost_usd"),
            "avg_median_interval_ms": avg("median_interval_ms"),
            "avg_victims": avg("victim_count"),
        })
    return rows


def _parse_observation(row: list[str]) -> TxObservation:
    if len(row) == 3:
        return TxObservation(row[0], row[1], int(row[2]))
    if len(row) != 10:
        raise ValueError(f"expected 3 or 10 fields, got {len(row)}")
    d = TxDetails(row[3], int(row[4]), int(row[5]), int(row[6]), int(row[7]), row[8],
                  int(row[9]))
    return TxObservation(row[0], row[1], int(row[2]), d)


def read_observations(path) -> list[TxObservation]:
    return read_records(path, _parse_observation, 3, header_first="tx_hash")


def read_chain(path) -> list[ChainRecord]:
    return read_records(path, lambda r: ChainRecord(r[0], int(r[1]), int(r[2]), int(r[3])), 4,
                        header_first="tx_hash")


def read_prices(path) -> dict[str, float]:
    def parse(r):
        _dt.date.fromisoformat(r[0])
        return r[0], float(r[1])
    return dict(read_records(path, parse, 2, header_first="date"))


def write_instances_json(path, instances: Sequence[AttackInstance]) -> None:
    with open(path, "w") as fh:
        json.dump([i.to_record() for i in instances], fh, indent=2)
        fh.write("\n")


__all__ = [
    "AttackInstance", "BlockClock", "ChainRecord", "Classification", "CoverageError",
    "FileStateOracle", "InputError", "InstanceStats", "SourceComparison", "StateOracle",
    "TxDetails", "TxObservation", "analyze", "classify_instance", "compare_sources",
    "dedupe_observations", "detect_spam_instances", "first_seen", "instance_stats",
    "label_dropped", "read_chain", "read_observations", "read_prices", "summarize",
    "write_instances_json",
]
