import random

import pytest
from hypothesis import given, settings, strategies as st

from blockamp import txpool as tp
from blockamp.txpool import (AccountState, ForgeKind, ForgeStrategy, InsertKind, Reason,
                             Transaction, TxPool, ValidationPolicy, Vary)

REG = ValidationPolicy.regular()
MOD = ValidationPolicy.modified()
ETH = 10**18


def tx(sender="a", nonce=0, price=10, **kw):
    return Transaction(sender, nonce, gas_price=price, **kw)


class TestTransaction:
    def test_hash_tracks_fields(self):
        base = tx()
        assert base.hash == tx().hash
        for change in (dict(nonce=1), dict(gas_limit=22_000), dict(gas_price=11), dict(value=1),
                       dict(payload_size=5), dict(data_tag=3)):
            assert base.with_changes(**change).hash != base.hash

    def test_minimal_size(self):
        assert tx(payload_size=40).total_size == tp.MIN_ENCODED_SIZE + 40
        assert tx(total_size=900).total_size == 900

    def test_row_roundtrip(self):
        t = tx("s", 4, 7, value=3, payload_size=10, total_size=300)
        row = [str(v) for v in t.to_row()]
        back = tp.tx_from_row(row)
        assert back == t and back.hash == row[0]

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            tx(nonce=-1)
        with pytest.raises(ValueError):
            AccountState(-1, 0)


class TestValidate:
    def test_balance(self):
        r = tp.validate(tx(value=ETH), AccountState(0, 0), REG)
        assert not r and r.reason is Reason.INSUFFICIENT_BALANCE

    def test_past_nonce(self):
        r = tp.validate(tx(nonce=5), AccountState(ETH, 10), REG)
        assert r.reason is Reason.PAST_NONCE

    def test_oversize_first(self):
        big = tx(nonce=0, value=ETH, payload_size=200_000)
        assert tp.validate(big, AccountState(0, 5), REG).reason is Reason.OVERSIZE

    def test_order(self):
        t = tx(nonce=1, value=ETH)
        assert tp.validate(t, AccountState(0, 5), REG).reason is Reason.INSUFFICIENT_BALANCE
        assert tp.validate(t, AccountState(2 * ETH, 5), REG).reason is Reason.PAST_NONCE

    def test_gas_bump(self):
        state = {"a": AccountState(ETH, 0)}
        pool = TxPool(10, REG, state)
        assert tp.submit(pool, tx(price=100)).kind is InsertKind.INSERTED
        plus5 = tx(price=105, value=1)
        plus11 = tx(price=111, value=1)
        assert tp.validate(plus5, state["a"], REG, pool).reason is Reason.UNDERPRICED
        assert tp.validate(plus11, state["a"], REG, pool)
        res = tp.submit(pool, plus11)
        assert res.kind is InsertKind.REPLACED and res.other.gas_price == 100
        assert len(pool) == 1

    def test_exact_bump_accepted(self):
        state = {"a": AccountState(ETH, 0)}
        pool = TxPool(10, REG, state)
        tp.submit(pool, tx(price=100))
        assert tp.validate(tx(price=110, value=1), state["a"], REG, pool)

    def test_modified_skips_state(self):
        t = tx(nonce=1, value=ETH)
        assert tp.validate(t, AccountState(0, 5), MOD)
        assert tp.validate(t, AccountState(0, 5), ValidationPolicy.disabled())

    def test_deterministic(self):
        t = tx(value=ETH)
        assert tp.validate(t, AccountState(), REG) == tp.validate(t, AccountState(), REG)


def _full_pool(n=5, price=10, policy=REG):
    state = {f"s{i}": AccountState(ETH, 0) for i in range(n + 5)}
    pool = TxPool(n, policy, state)
    for i in range(n):
        assert pool.insert(tx(f"s{i}", 0, price)).kind is InsertKind.INSERTED
    return pool


class TestInsert:
    def test_below_capacity(self):
        pool = TxPool(3, REG, {})
        assert tp.pool_insert(pool, tx()).kind is InsertKind.INSERTED

    def test_evicts_cheapest(self):
        pool = _full_pool()
        res = pool.insert(tx("new", 0, 20))
        assert res.kind is InsertKind.EVICTED_OTHER
        assert res.other.sender == "s0"  # oldest of the tied cheapest
        assert len(pool) == 5

    def test_rejected_when_not_pricier(self):
        pool = _full_pool()
        assert pool.insert(tx("new", 0, 5)).kind is InsertKind.REJECTED_FULL
        assert pool.insert(tx("new", 0, 10)).kind is InsertKind.REJECTED_FULL

    def test_eviction_matches_bruteforce(self):
        rng = random.Random(4)
        state = {f"s{i}": AccountState(ETH, 0) for i in range(300)}
        pool = TxPool(40, MOD, state)
        order = []
        for i in range(300):
            t = tx(f"s{i}", 0, rng.randint(1, 30))
            before = {h: (pool.get(h).gas_price, order.index(h)) for h in pool.hashes()}
            res = pool.insert(t)
            if res.kind is InsertKind.EVICTED_OTHER:
                victim = min(before, key=lambda h: before[h])
                assert res.other.hash == victim
                assert t.gas_price > before[victim][0]
            elif res.kind is InsertKind.REJECTED_FULL:
                assert t.gas_price <= min(p for p, _ in before.values())
            if res.admitted:
                order.append(t.hash)
            pool.check_invariants()

    def test_already_known(self):
        pool = TxPool(3, REG, {})
        t = tx()
        pool.insert(t)
        assert pool.insert(t).kind is InsertKind.ALREADY_KNOWN

    def test_gap_limit(self):
        pool = TxPool(200, MOD, {"a": AccountState(ETH, 0)}, max_gap=64)
        assert pool.insert(tx("a", 64)).admitted
        assert pool.insert(tx("a", 65 + 1)).kind is InsertKind.REJECTED_GAP

    def test_queued_promotion(self):
        pool = TxPool(10, MOD, {"a": AccountState(ETH, 0)})
        for n in (2, 1):
            pool.insert(tx("a", n))
        assert not pool.is_pending(tx("a", 2).hash)
        pool.insert(tx("a", 0))
        assert all(pool.is_pending(t.hash) for t in pool)
        pool.check_invariants()

    def test_hole_demotes(self):
        pool = TxPool(10, MOD, {"a": AccountState(ETH, 0)})
        for n in range(4):
            pool.insert(tx("a", n))
        pool.remove(tx("a", 1).hash)
        assert pool.is_pending(tx("a", 0).hash)
        assert not pool.is_pending(tx("a", 2).hash)
        pool.check_invariants()

    def test_gapped_newcomer_only_evicts_queued(self):
        state = {"a": AccountState(ETH, 0), "b": AccountState(ETH, 0)}
        pool = TxPool(2, MOD, state)
        pool.insert(tx("a", 0, 1))
        pool.insert(tx("a", 1, 1))
        assert pool.insert(tx("b", 5, 100)).kind is InsertKind.REJECTED_FULL
        assert pool.insert(tx("b", 0, 100)).kind is InsertKind.EVICTED_OTHER


class TestForge:
    base = Transaction("victim", 12, gas_price=5, value=10)

    def test_insufficient_balance(self):
        txs = tp.forge_invalid(ForgeStrategy(ForgeKind.INSUFFICIENT_BALANCE, 3), self.base,
                               AccountState(0, 0))
        assert len(txs) == 3 and len({t.sender for t in txs}) == 3
        for t in txs:
            assert tp.validate(t, AccountState(0, 0), REG).reason is Reason.INSUFFICIENT_BALANCE
            assert tp.validate(t, AccountState(0, 0), ValidationPolicy(check_balance=False))

    def test_past_nonce(self):
        st_ = AccountState(ETH, 10)
        txs = tp.forge_invalid(ForgeStrategy(ForgeKind.PAST_NONCE, 5), self.base, st_)
        assert sorted(t.nonce for t in txs) == [5, 6, 7, 8, 9]
        assert all(tp.validate(t, st_, REG).reason is Reason.PAST_NONCE for t in txs)

    def test_past_nonce_needs_history(self):
        with pytest.raises(tp.ForgeError):
            tp.forge_invalid(ForgeStrategy(ForgeKind.PAST_NONCE, 5), self.base,
                             AccountState(ETH, 3))

    def test_count_positive(self):
        with pytest.raises(tp.ForgeError):
            ForgeStrategy(ForgeKind.DUPLICATION, 0)

    @pytest.mark.parametrize("vary", [Vary.GAS_LIMIT, Vary.DATA, Vary.VALUE])
    def test_duplication_coresides_iff_no_bump(self, vary):
        dups = tp.forge_invalid(ForgeStrategy(ForgeKind.DUPLICATION, 2, vary), self.base,
                                AccountState(ETH, 12))
        assert len({t.hash for t in dups}) == 2
        assert {(t.sender, t.nonce, t.gas_price) for t in dups} == {("victim", 12, 5)}
        state = {"victim": AccountState(ETH, 12)}
        mod = TxPool(10, MOD, state)
        assert all(tp.submit(mod, t).admitted for t in dups) and len(mod) == 2
        mod.check_invariants()
        reg = TxPool(10, REG, state)
        results = [tp.submit(reg, t) for t in dups]
        assert len(reg) == 1 and results[1].reason is Reason.UNDERPRICED


class TestUpdate:
    def test_included_removed(self):
        state = {"a": AccountState(ETH, 0)}
        pool = TxPool(10, REG, state)
        t = tx("a", 0)
        pool.insert(t)
        assert tp.update_on_block(pool, {t.hash}, {"a": AccountState(ETH, 1)}) == 1
        assert t.hash not in pool

    def test_nonce_advance(self):
        state = {"a": AccountState(ETH, 0)}
        pool = TxPool(10, MOD, state)
        pool.insert(tx("a", 5))
        assert tp.update_on_block(pool, set(), {"a": AccountState(ETH, 6)}) == 1

    def test_identity(self):
        state = {"a": AccountState(ETH, 0)}
        pool = TxPool(10, REG, state)
        pool.insert(tx("a", 0))
        assert tp.update_on_block(pool, set(), {}) == 0 and len(pool) == 1

    def test_disabled_stage(self):
        pol = ValidationPolicy(update_stage_enabled=False)
        pool = TxPool(10, pol, {})
        t = tx()
        pool.insert(t)
        assert tp.update_on_block(pool, {t.hash}, {}) == 0


class TestBlock:
    def test_greedy_nonce_order(self):
        state = {"a": AccountState(ETH, 0), "b": AccountState(ETH, 0)}
        pool = TxPool(10, REG, state)
        for t in (tx("a", 0, 5), tx("a", 1, 50), tx("b", 0, 20)):
            pool.insert(t)
        blk = tp.build_block(pool, state, 2)
        assert [(t.sender, t.nonce) for t in blk.included] == [("b", 0), ("a", 0)]
        assert blk.new_state["a"].nonce == 1 and len(pool) == 3

    def test_unaffordable_skipped(self):
        state = {"a": AccountState(0, 0)}
        pool = TxPool(10, MOD, state)
        pool.insert(tx("a", 0, 5, value=1))
        blk = tp.build_block(pool, state, 10)
        assert blk.included == [] and blk.skipped_invalid == 1 and blk.fees == 0


class TestLatency:
    def test_constants(self):
        assert tp.validation_latency(None, REG) == pytest.approx(0.97)
        assert tp.validation_latency(None, ValidationPolicy.disabled()) == 0
        assert tp.validation_latency(None, ValidationPolicy(True, False, False)) == \
            pytest.approx(0.08)
        assert tp.validation_latency(None, ValidationPolicy(True, True, False)) == \
            pytest.approx(0.97)


ops = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 5), st.integers(0, 8),
                         st.integers(1, 20), st.integers(0, 2)), min_size=1, max_size=120)


@settings(max_examples=150, deadline=None)
@given(ops, st.sampled_from([REG, MOD]), st.integers(1, 12))
def test_random_sequences_keep_invariants(seq, policy, cap):
    state = {f"s{i}": AccountState(10**9 if i % 2 else 10**4, 0) for i in range(6)}
    pool = TxPool(cap, policy, state, max_gap=4)
    for op, s, n, price, val in seq:
        sender = f"s{s}"
        if op <= 1:
            t = Transaction(sender, n, gas_price=price, value=val * 10**6)
            r = tp.submit(pool, t)
            if policy is REG and r and r.admitted:
                assert tp.validate(t, state[sender], REG)
        elif op == 2 and len(pool):
            h = sorted(pool.hashes())[n % len(pool)]
            pool.remove(h)
        else:
            blk = tp.build_block(pool, state, 3)
            tp.update_on_block(pool, {t.hash for t in blk.included}, blk.new_state)
            assert not (pool.hashes() & {t.hash for t in blk.included})
        pool.check_invariants()
        if policy is REG:
            for t in pool:
                assert t.nonce >= state[t.sender].nonce or not policy.update_stage_enabled
