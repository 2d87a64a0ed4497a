import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from blockamp import inference as inf
from blockamp.inference import MessageCounts, NO_BROADCAST, PeerEstimate
from blockamp.model import ParameterError, PointMass, Smoothed
from blockamp.records import InputError
from blockamp.simnet import sqrt_policy_counts


class TestEstimator:
    def test_theta(self):
        assert inf.estimate_theta(MessageCounts("p", 20, 80)) == pytest.approx(0.2)
        assert inf.estimate_theta(MessageCounts("p", 50, 0)) == 1.0
        assert inf.estimate_theta(MessageCounts("p", 1000, 4000)) == pytest.approx(0.2)

    def test_no_broadcast_marker(self):
        theta = inf.estimate_theta(MessageCounts("p", 0, 10))
        assert theta is NO_BROADCAST and theta != 0
        est = inf.estimate_peer(MessageCounts("p", 0, 5000))
        assert est.no_broadcast and not inf.filter_estimates([est])

    def test_no_messages(self):
        with pytest.raises(ParameterError):
            inf.estimate_theta(MessageCounts("p", 0, 0))

    def test_reconstruct(self):
        assert inf.reconstruct_peers(1.0) == 1
        assert inf.reconstruct_peers(0.2) == pytest.approx(25)
        assert inf.reconstruct_peers(0.141421) == pytest.approx(50, abs=0.01)
        for bad in (0.0, 1.2, -0.1):
            with pytest.raises(ParameterError):
                inf.reconstruct_peers(bad)

    def test_error_examples(self):
        assert inf.estimate_error(25, 100) == pytest.approx(13.89, abs=0.01)
        assert inf.estimate_error(25, 10_000) == pytest.approx(2.32, abs=0.01)
        assert inf.estimate_error(1, 10**15) == pytest.approx(0, abs=1e-6)

    def test_error_trends(self):
        xs = np.linspace(1, 200, 40)
        ms = np.logspace(1, 7, 40).astype(int)
        grid = np.array([[inf.estimate_error(x, m) for m in ms] for x in xs])
        assert np.all(grid >= 0)
        assert np.all(np.diff(grid, axis=1) < 0)   # decreasing in m
        assert np.all(np.diff(grid, axis=0) > 0)   # increasing in x

    def test_filter(self):
        bad = PeerEstimate("a", 0.2, 25, 0.1, inf.estimate_error(25, 100), m=100, m2=20)
        good = PeerEstimate("b", 0.2, 25, 0.01, inf.estimate_error(25, 10_000), m=10_000,
                            m2=2000)
        assert inf.filter_estimates([bad], 10, min_messages=1) == []
        out = inf.filter_estimates([bad, good], 10, min_messages=1)
        assert [e.peer_id for e in out] == ["b"] and out[0].included
        assert inf.filter_estimates([]) == []
        both = inf.filter_estimates([bad, good], 10, min_messages=1, keep_excluded=True)
        assert [e.included for e in both] == [False, True]
        assert inf.filter_estimates([good], 10, min_messages=20_000) == []

    def test_merge(self):
        a = PeerEstimate("p", 1 / math.sqrt(30), 30, 0.01, 1, m=5000, m2=900)
        b = PeerEstimate("p", 1 / math.sqrt(40), 40, 0.01, 1, m=5000, m2=800)
        assert inf.merge_monitor_views({"A": a, "B": b}).x_hat == pytest.approx(35)
        assert inf.merge_monitor_views({"A": a}).x_hat == pytest.approx(30)
        assert inf.merge_monitor_views({"A": a, "B": a}).x_hat == pytest.approx(30)
        merged = inf.merge_monitor_views({"A": a, "B": b})
        assert merged.monitors == {"A", "B"} and merged.m == 10_000

    def test_merge_conflict(self):
        a = PeerEstimate("p", 0.2, 25, 0.1, 1)
        b = PeerEstimate("q", 0.2, 25, 0.1, 1)
        with pytest.raises(ParameterError):
            inf.merge_monitor_views({"A": a, "B": b})

    def test_sqrt_fixture_consistency(self):
        # x = 50 broadcasts to round(sqrt 50) = 7 peers: theta = 0.14
        hits = [sqrt_policy_counts(50, 200_000, s).m2 / 200_000 for s in range(5)]
        assert np.mean(hits) == pytest.approx(7 / 50, abs=0.003)

    def test_monitor_index_paths_agree(self):
        # peer 0 via the counting kernel and peer 3 via explicit fan-out are
        # both Binomial(m, k/x) draws
        a = sqrt_policy_counts(25, 50_000, 1, monitor_index=0).m2
        b = sqrt_policy_counts(25, 50_000, 1, monitor_index=3).m2
        sd = math.sqrt(50_000 * 0.2 * 0.8)
        assert abs(a - 10_000) < 4 * sd and abs(b - 10_000) < 4 * sd


class TestDistribution:
    def test_matches_scipy_kde(self):
        from scipy.integrate import trapezoid
        from scipy.stats import gaussian_kde
        rng = np.random.default_rng(3)
        xs = rng.gamma(3.0, 13.0, size=400) + 1
        dist = inf.build_distribution(xs)
        kde = gaussian_kde(xs, bw_method="scott")
        ref = kde(dist.grid)
        ref /= trapezoid(ref, dist.grid)
        assert np.max(np.abs(dist.density - ref)) < 1e-9
        assert inf.scott_bandwidth(xs) == pytest.approx(float(np.sqrt(kde.covariance[0, 0])))

    def test_valid_density(self):
        rng = np.random.default_rng(0)
        dist = inf.build_distribution(rng.gamma(2.0, 20.0, 5000) + 1)
        assert isinstance(dist, Smoothed)
        assert dist.mass() == pytest.approx(1.0, abs=1e-6)
        assert np.all(dist.density >= 0)

    def test_mean_within_five_percent(self):
        rng = np.random.default_rng(1)
        xs = rng.gamma(2.0, 20.0, 5000) + 1
        assert inf.build_distribution(xs).mean() == pytest.approx(xs.mean(), rel=0.05)

    def test_skewed_mean_median(self):
        # right-skewed sample with mean ~41 and median ~31
        rng = np.random.default_rng(5)
        xs = np.clip(rng.lognormal(math.log(31), 0.74, 4000), 1, 1000)
        assert xs.mean() == pytest.approx(41, rel=0.05)
        assert np.median(xs) == pytest.approx(31, rel=0.05)
        dist = inf.build_distribution(xs)
        assert dist.mean() == pytest.approx(xs.mean(), rel=0.05)
        assert dist.median() == pytest.approx(np.median(xs), rel=0.05)

    def test_degenerate(self):
        assert inf.build_distribution([41.0] * 20) == PointMass(41.0)

    def test_empty(self):
        with pytest.raises(ParameterError):
            inf.build_distribution([])


class TestClientIdentity:
    def test_public(self):
        c = inf.parse_client_identity("Geth/v1.13.4-stable-3f907d6a/linux-amd64/go1.21.3",
                                      {"3f907d6a"})
        assert (c.software, c.version, c.commit_hash, c.is_public_commit) == \
            ("Geth", "v1.13.4", "3f907d6a", True)
        assert not c.customized

    def test_empty(self):
        assert not inf.parse_client_identity("", {"x"}).parseable

    def test_customized(self):
        c = inf.parse_client_identity("Geth/v1.13.0-stable-deadbeef/linux-amd64/go1.21.0",
                                      {"3f907d6a"})
        assert c.parseable and c.customized

    @given(st.text(max_size=60))
    def test_never_crashes(self, name):
        inf.parse_client_identity(name, {"deadbeef"})

    def test_sqrt_clients(self):
        def ident(name):
            return inf.parse_client_identity(name, {"aaaaaaaa"})
        assert inf.uses_sqrt_policy(ident("Geth/v1.13.4-stable-aaaaaaaa/linux/go1.21"))
        assert inf.uses_sqrt_policy(ident("erigon/v2.48.1-stable-aaaaaaaa/linux/go1.20"))
        assert not inf.uses_sqrt_policy(ident("erigon/v2.55.0-stable-aaaaaaaa/linux/go1.20"))
        assert not inf.uses_sqrt_policy(ident("Nethermind/v1.20.0-stable-aaaaaaaa/linux/dotnet"))


def _write(path, text):
    path.write_text(text)
    return str(path)


class TestPipeline:
    def _log(self, tmp_path, peers):
        lines = ["timestamp_ms,monitor_id,peer_id,msg_type,tx_hash,tx_size"]
        t = 0
        for peer, (m2, m8) in peers.items():
            for i in range(m2):
                lines.append(f"{t},mon,{peer},02,0x{t:x},120")
                t += 1
            for i in range(m8):
                lines.append(f"{t},mon,{peer},08,0x{t:x},120")
                t += 1
        return _write(tmp_path / "log.csv", "\n".join(lines) + "\n")

    def test_provenance(self, tmp_path):
        path = self._log(tmp_path, {
            "good": (400, 1600), "custom": (400, 1600), "erigon": (400, 1600),
            "quiet": (0, 2000), "few": (20, 80), "noisy": (15, 1985), "anon": (400, 1600)})
        names = {
            "good": "Geth/v1.13.4-stable-3f907d6a/linux-amd64/go1.21.3",
            "custom": "Geth/v1.13.4-stable-deadbeef/linux-amd64/go1.21.3",
            "erigon": "erigon/v2.55.1-stable-3f907d6a/linux-amd64/go1.21.3",
            "quiet": "Geth/v1.13.4-stable-3f907d6a/linux-amd64/go1.21.3",
            "few": "Geth/v1.13.4-stable-3f907d6a/linux-amd64/go1.21.3",
            "noisy": "Geth/v1.13.4-stable-3f907d6a/linux-amd64/go1.21.3",
        }
        res = inf.infer_connections(inf.read_message_log(path), names, {"3f907d6a"})
        assert res.provenance == {
            "anon": "unparseable_client", "custom": "customized_client",
            "erigon": "non_sqrt_client", "few": "min_messages", "good": "included",
            "noisy": "error_threshold", "quiet": "no_broadcast"}
        (good,) = [e for e in res.estimates if e.included]
        assert good.x_hat == pytest.approx(25)
        assert res.distribution == PointMass(25.0)

    def test_bad_msg_type_line(self, tmp_path):
        path = _write(tmp_path / "log.csv", "0,m,p,02,0x1,100\n1,m,p,05,0x2,100\n")
        with pytest.raises(InputError) as ei:
            inf.read_message_log(path)
        assert ei.value.line == 2 and "log.csv:2" in str(ei.value)

    def test_short_row(self, tmp_path):
        path = _write(tmp_path / "log.csv", "0,m,p,02\n")
        with pytest.raises(InputError, match="log.csv:1"):
            inf.read_message_log(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError, match="nope.csv"):
            inf.read_message_log(str(tmp_path / "nope.csv"))

    def test_peer_metadata_latest(self, tmp_path):
        path = _write(tmp_path / "peers.csv",
                      "peer_id,node_name,event,timestamp_ms\n"
                      "p,Geth/v1.0.0-stable-aaaaaaaa/x/y,add,5\n"
                      "p,Geth/v1.1.0-stable-bbbbbbbb/x/y,add,9\n"
                      "p,Geth/v1.0.0-stable-aaaaaaaa/x/y,drop,7\n")
        names = inf.latest_names(inf.read_peer_metadata(path))
        assert names == {"p": "Geth/v1.1.0-stable-bbbbbbbb/x/y"}

    def test_allowlist(self, tmp_path):
        path = _write(tmp_path / "allow.txt", "# hashes\n3f907d6a\n0xDEADBEEF00112233\n")
        assert inf.read_allowlist(path) == {"3f907d6a", "deadbeef"}
        bad = _write(tmp_path / "bad.txt", "3f907d6a\nnot-hex\n")
        with pytest.raises(InputError, match="bad.txt:2"):
            inf.read_allowlist(bad)

    def test_density_table(self):
        rng = np.random.default_rng(2)
        dist = inf.build_distribution(rng.gamma(3.0, 10.0, 300) + 1)
        rows = inf.density_table(dist)
        assert len(rows) == 1001 and rows[0][0] == 0.0 and rows[-1][0] == 1000.0
