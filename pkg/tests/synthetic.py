"""Synthetic observation corpus with planted spam instances of every class."""
import datetime as dt
import random
from dataclasses import dataclass

from blockamp.detector import (BlockClock, ChainRecord, Classification, FileStateOracle,
                               TxDetails, TxObservation, DAY_MS)

T0 = int(dt.datetime(2024, 1, 1, tzinfo=dt.timezone.utc).timestamp() * 1000)
GWEI = 10**9
SOURCES = ("alpha", "beta", "gamma")


@dataclass
class Corpus:
    observations: list
    chain: list
    oracle: FileStateOracle
    prices: dict
    planted: dict  # sender -> (Classification, frozenset of hashes)
    chain_end_ms: int
    clock: BlockClock


class _Builder:
    def __init__(self, seed):
        self.rng = random.Random(seed)
        self.obs, self.chain, self.snaps = [], [], []
        self.n = 0

    def tx(self, t, details, included_after_ms=None, sources=SOURCES):
        h = f"0x{self.n:064x}"
        self.n += 1
        for s in sources:
            self.obs.append(TxObservation(h, s, t + self.rng.randint(0, 40), details))
        if included_after_ms is not None:
            self.chain.append(ChainRecord(h, t + included_after_ms, 20 * GWEI, 21_000))
        return h

    def burst(self, sender, start, count, make, onchain=(), spacing=10):
        hashes = set()
        for i in range(count):
            inc = 6_000 if i in onchain else None
            hashes.add(self.tx(start + i * spacing, make(i), inc))
        return frozenset(hashes)


def _details(sender, nonce=7, gas=21_000, value=1, data="d0", price=20 * GWEI, size=120):
    return TxDetails(sender, nonce, gas, price, value, data, size)


def build_corpus(seed=0, per_class=2, burst=150):
    """Planted instances (per_class of each class) amid legitimate traffic."""
    b = _Builder(seed)
    rich = 10**24
    plans = {
        Classification.GAS: (lambda s: lambda i: _details(s, gas=21_000 + i), rich, 0),
        Classification.NONCE: (lambda s: lambda i: _details(s, nonce=10 + i), rich, 0),
        Classification.DATA: (lambda s: lambda i: _details(s, data=f"d{i}"), rich, 0),
        Classification.VALUE: (lambda s: lambda i: _details(s, value=1 + i), rich, 0),
        Classification.INSUFFICIENT_BALANCE: (lambda s: lambda i: _details(s, gas=21_000 + i),
                                              0, 0),
        Classification.PAST_NONCE: (lambda s: lambda i: _details(s, nonce=i % 50), rich, 500),
    }
    planted = {}
    t = T0 + DAY_MS // 2
    for k in range(per_class):
        for cls, (maker, balance, nonce) in plans.items():
            sender = f"spam-{cls.value}-{k}"
            b.snaps.append((sender, 0, balance, nonce))
            size = burst + b.rng.randint(0, 30)
            # two members land on chain: still above 95% dropped for >= 101 txs
            hashes = b.burst(sender, t, size, maker(sender), onchain=(0, size // 2))
            planted[sender] = (cls, hashes)
            t += DAY_MS // 3 + b.rng.randint(0, 3_600_000)

    # legitimate burst: half dropped
    b.snaps.append(("exchange", 0, 10**24, 0))
    b.burst("exchange", T0 + 3_600_000, 150, lambda i: _details("exchange", nonce=i),
            onchain=set(range(0, 150, 2)))
    # exactly 100 transactions, all dropped
    b.snaps.append(("hundred", 0, 10**24, 0))
    b.burst("hundred", T0 + 7_200_000, 100, lambda i: _details("hundred", gas=21_000 + i))
    # slow spammer: 150 dropped txs spaced 4 s apart
    b.snaps.append(("slow", 0, 10**24, 0))
    b.burst("slow", T0 + 10_800_000, 150, lambda i: _details("slow", data=f"s{i}"),
            spacing=4_000)
    # background traffic with assorted inclusion delays
    end = t
    for i in range(3_000):
        sender = f"user-{i % 400}"
        when = b.rng.randint(T0, end)
        delay = b.rng.choice([12_000, 60_000, 2 * DAY_MS, 6 * DAY_MS, 8 * DAY_MS, 10 * DAY_MS,
                              13 * DAY_MS, None])
        srcs = b.rng.sample(SOURCES, b.rng.randint(1, 3))
        b.tx(when, _details(sender, nonce=i, data=f"u{i}"), delay, srcs)

    last = max(o.timestamp_ms for o in b.obs)
    days = range((last - T0) // DAY_MS + 20)
    prices = {(dt.date(2024, 1, 1) + dt.timedelta(days=d)).isoformat(): 2000.0 + d
              for d in days}
    return Corpus(b.obs, b.chain, FileStateOracle(b.snaps), prices, planted,
                  last + 15 * DAY_MS, BlockClock(genesis_ms=T0 - 3_600_000))
