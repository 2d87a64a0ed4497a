"""Passive peer-count inference.

A sqrt-policy node with ``x`` peers sends the full transaction (0x02) to a
given peer with probability sqrt(x)/x and a hash announcement (0x08)
otherwise. Counting the two message types a monitor receives from a peer
gives a binomial MLE of that probability, hence of ``x``.
"""
from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .model import ParameterError, PointMass, Smoothed
from .records import InputError, read_lines, read_records

DEFAULT_THRESHOLD = 10.0
DEFAULT_MIN_MESSAGES = 1000


class NoBroadcast:
    """Marker for a peer that never sent a full transaction (m2 == 0)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NO_BROADCAST"

    def __bool__(self):
        return False


NO_BROADCAST = NoBroadcast()


@dataclass(frozen=True)
class MessageCounts:
    peer_id: str
    m2: int
    m8: int

    def __post_init__(self):
        if self.m2 < 0 or self.m8 < 0:
            raise ParameterError("message counts must be nonnegative")

    @property
    def m(self) -> int:
        return self.m2 + self.m8


@dataclass(frozen=True)
class PeerEstimate:
    peer_id: str
    theta_hat: float | None
    x_hat: float | None
    ci_halfwidth: float
    error_epsilon: float
    included: bool = False
    m: int = 0
    m2: int = 0
    monitors: frozenset = field(default_factory=frozenset)

    @property
    def no_broadcast(self) -> bool:
        return self.theta_hat is None


def estimate_theta(counts: MessageCounts):
    """MLE of the broadcast probability, or ``NO_BROADCAST`` when m2 == 0."""
    if counts.m < 1:
        raise ParameterError("need at least one message")
    if counts.m2 == 0:
        return NO_BROADCAST
    return counts.m2 / counts.m


def reconstruct_peers(theta_hat: float) -> float:
    if not 0.0 < theta_hat <= 1.0:
        raise ParameterError(f"theta_hat={theta_hat} outside (0, 1]")
    return (1.0 / theta_hat) ** 2


def estimate_error(x_hat: float, m: int) -> float:
    """Drop in reconstructed peers when theta moves up by 1/sqrt(m).

    ``x - (1/sqrt(x) + 1/sqrt(m))**-2``. Peers whose estimate could swing by
    more than the exclusion threshold are treated as unreliable.
    """
    if x_hat < 1 or m < 1:
        raise ParameterError("x_hat and m must be >= 1")
    return x_hat - (1.0 / math.sqrt(x_hat) + 1.0 / math.sqrt(m)) ** -2


def estimate_peer(counts: MessageCounts, monitor: str | None = None) -> PeerEstimate:
    theta = estimate_theta(counts)
    monitors = frozenset() if monitor is None else frozenset([monitor])
    ci = 1.0 / math.sqrt(counts.m)
    if theta is NO_BROADCAST:
        return PeerEstimate(counts.peer_id, None, None, ci, math.inf, False,
                            counts.m, 0, monitors)
    x = reconstruct_peers(theta)
    return PeerEstimate(counts.peer_id, theta, x, ci, estimate_error(x, counts.m),
                        False, counts.m, counts.m2, monitors)


def filter_estimates(estimates: Sequence[PeerEstimate], threshold: float = DEFAULT_THRESHOLD,
                     min_messages: int = DEFAULT_MIN_MESSAGES,
                     keep_excluded: bool = False) -> list[PeerEstimate]:
    """Flag estimates with error <= threshold and enough messages as included.

    Returns only the included ones (in input order) unless ``keep_excluded``.
    """
    if threshold <= 0:
        raise ParameterError("threshold must be positive")
    out = []
    for est in estimates:
        ok = (not est.no_broadcast and est.error_epsilon <= threshold
              and est.m >= min_messages)
        flagged = replace(est, included=ok)
        if ok or keep_excluded:
            out.append(flagged)
    return out


def merge_monitor_views(per_monitor: Mapping[str, PeerEstimate]) -> PeerEstimate:
    """Average the reconstructed peer counts seen by several monitors."""
    if not per_monitor:
        raise ParameterError("no monitor observed this peer")
    views = list(per_monitor.values())
    ids = {v.peer_id for v in views}
    if len(ids) != 1:
        raise ParameterError(f"conflicting peer ids {sorted(ids)}")
    monitors = frozenset(per_monitor) | frozenset().union(*(v.monitors for v in views))
    m = sum(v.m for v in views)
    m2 = sum(v.m2 for v in views)
    usable = [v for v in views if not v.no_broadcast]
    if not usable:
        return PeerEstimate(views[0].peer_id, None, None, 1.0 / math.sqrt(max(m, 1)),
                            math.inf, False, m, m2, monitors)
    if len(usable) == 1 and len(views) == 1:
        return replace(usable[0], monitors=monitors)
    x = sum(v.x_hat for v in usable) / len(usable)
    eps = estimate_error(x, m) if x >= 1 else math.inf
    return PeerEstimate(views[0].peer_id, 1.0 / math.sqrt(x), x, 1.0 / math.sqrt(m),
                        eps, False, m, m2, monitors)


def scott_bandwidth(samples: np.ndarray) -> float:
    return samples.size ** (-1.0 / 5.0) * float(np.std(samples, ddof=1))


def build_distribution(x_hats: Sequence[float], max_connections: int = 1000,
                       step: float = 1.0):
    """Gaussian KDE (Scott bandwidth) on [0, max_connections], renormalized.

    Identical samples have no spread to smooth, so they come back as a
    :class:`PointMass`.
    """
    xs = np.asarray(list(x_hats), dtype=np.float64)
    if xs.size == 0:
        raise ParameterError("need at least one sample")
    if xs.size == 1 or float(np.ptp(xs)) == 0.0:
        return PointMass(float(xs[0]))
    bw = scott_bandwidth(xs)
    grid = np.arange(0.0, max_connections + step / 2, step)
    dens = kernels.kde_grid(xs, bw, grid)
    dx = np.diff(grid)
    mass = float(np.sum(0.5 * (dens[1:] + dens[:-1]) * dx))
    if mass <= 0:
        raise ParameterError("kernel density has no mass inside [0, max_connections]")
    return Smoothed(grid, dens / mass)


# -- client identities --------------------------------------------------------

_VERSION_RE = re.compile(
    r"^(?P<version>v?\d+(?:\.\d+){1,3})(?:-(?P<branch>[A-Za-z0-9.]+))?-(?P<commit>[0-9a-fA-F]{8})$")


@dataclass(frozen=True)
class ClientIdentity:
    raw_name: str
    software: str = ""
    version: str = ""
    commit_hash: str = ""
    is_public_commit: bool = False
    parseable: bool = False

    @property
    def customized(self) -> bool:
        return self.parseable and not self.is_public_commit

    def version_tuple(self) -> tuple:
        return tuple(int(p) for p in self.version.lstrip("v").split("."))


def parse_client_identity(node_name: str, allowlist: Iterable[str] = ()) -> ClientIdentity:
    """Split ``Software/vX.Y.Z-branch-commit/os/lang`` into its parts."""
    name = (node_name or "").strip()
    parts = name.split("/")
    if len(parts) < 2 or not parts[0]:
        return ClientIdentity(name)
    for seg in parts[1:]:
        mo = _VERSION_RE.match(seg)
        if mo:
            commit = mo.group("commit").lower()
            allowed = {h.strip().lower() for h in allowlist}
            return ClientIdentity(name, parts[0], mo.group("version"), commit,
                                  commit in allowed, True)
    return ClientIdentity(name)


def uses_sqrt_policy(identity: ClientIdentity) -> bool:
    """Whether the client differentiates 0x02/0x08 with the sqrt rule.

    Geth always has; Erigon stopped at v2.49.0 (broadcast-to-all, later
    constant 3 broadcast / 6 announce peers).
    """
    if not identity.parseable:
        return False
    sw = identity.software.lower()
    if sw == "geth":
        return True
    if sw == "erigon":
        try:
            return identity.version_tuple() < (2, 49, 0)
        except ValueError:
            return False
    return False


# -- pipeline -------------------------------------------------------------------

@dataclass(frozen=True)
class MessageRecord:
    timestamp_ms: int
    monitor_id: str
    peer_id: str
    msg_type: int
    tx_hash: str
    tx_size: int


def _parse_message(row: list[str]) -> MessageRecord:
    code = row[3].lower().removeprefix("0x")
    if code not in ("02", "2", "08", "8"):
        raise ValueError(f"msg_type must be 02 or 08, got {row[3]!r}")
    return MessageRecord(int(row[0]), row[1], row[2], int(code, 16), row[4], int(row[5]))


def read_message_log(path) -> list[MessageRecord]:
    return read_records(path, _parse_message, 6, header_first="timestamp_ms")


@dataclass(frozen=True)
class PeerEvent:
    peer_id: str
    node_name: str
    event: str
    timestamp_ms: int


def _parse_peer_event(row: list[str]) -> PeerEvent:
    if row[2] not in ("add", "drop"):
        raise ValueError(f"event must be add or drop, got {row[2]!r}")
    return PeerEvent(row[0], row[1], row[2], int(row[3]))


def read_peer_metadata(path) -> list[PeerEvent]:
    return read_records(path, _parse_peer_event, 4, header_first="peer_id")


def read_allowlist(path) -> set[str]:
    out = set()
    for i, line in enumerate(read_lines(path), start=1):
        h = line.lower().removeprefix("0x")
        if not re.fullmatch(r"[0-9a-f]{8,40}", h):
            raise InputError(path, i, f"not a hex commit hash: {line!r}")
        out.add(h[:8])
    return out


def count_messages(records: Iterable[MessageRecord]) -> dict[tuple[str, str], MessageCounts]:
    """Per ``(monitor, peer)`` message counts."""
    tallies: dict[tuple[str, str], list[int]] = defaultdict(lambda: [0, 0])
    for r in records:
        t = tallies[(r.monitor_id, r.peer_id)]
        t[0 if r.msg_type == 2 else 1] += 1
    return {k: MessageCounts(k[1], v[0], v[1]) for k, v in tallies.items()}


@dataclass
class InferenceResult:
    estimates: list[PeerEstimate]          # merged per peer, included flags set
    provenance: dict[str, str]             # peer_id -> "included" or exclusion reason
    identities: dict[str, ClientIdentity]
    distribution: object | None


def infer_connections(records: Iterable[MessageRecord], peer_names: Mapping[str, str],
                      allowlist: Iterable[str], threshold: float = DEFAULT_THRESHOLD,
                      min_messages: int = DEFAULT_MIN_MESSAGES,
                      max_connections: int = 1000) -> InferenceResult:
    """Run counting, client screening, monitor merging, filtering and KDE."""
    allow = {h.lower() for h in allowlist}
    counts = count_messages(records)
    per_peer: dict[str, dict[str, PeerEstimate]] = defaultdict(dict)
    for (monitor, peer), c in counts.items():
        if c.m >= 1:
            per_peer[peer][monitor] = estimate_peer(c, monitor)

    provenance: dict[str, str] = {}
    identities: dict[str, ClientIdentity] = {}
    merged: list[PeerEstimate] = []
    for peer in sorted(per_peer):
        ident = parse_client_identity(peer_names.get(peer, ""), allow)
        identities[peer] = ident
        est = merge_monitor_views(per_peer[peer])
        if not ident.parseable:
            reason = "unparseable_client"
        elif ident.customized:
            reason = "customized_client"
        elif not uses_sqrt_policy(ident):
            reason = "non_sqrt_client"
        elif est.no_broadcast:
            reason = "no_broadcast"
        elif est.m < min_messages:
            reason = "min_messages"
        elif est.error_epsilon > threshold:
            reason = "error_threshold"
        else:
            reason = "included"
        provenance[peer] = reason
        merged.append(replace(est, included=reason == "included"))

    xs = [e.x_hat for e in merged if e.included]
    dist = build_distribution(xs, max_connections) if xs else None
    return InferenceResult(merged, provenance, identities, dist)


def latest_names(events: Iterable[PeerEvent]) -> dict[str, str]:
    """Most recent node name seen per peer."""
    best: dict[str, tuple[int, str]] = {}
    for ev in events:
        prev = best.get(ev.peer_id)
        if prev is None or ev.timestamp_ms >= prev[0]:
            best[ev.peer_id] = (ev.timestamp_ms, ev.node_name)
    return {k: v[1] for k, v in best.items()}


def density_table(dist, max_connections: int = 1000) -> list[tuple[float, float]]:
    """``(x, g(x))`` at unit steps; a point mass becomes a single spike row."""
    if isinstance(dist, Smoothed):
        return [(float(x), float(g)) for x, g in zip(dist.grid, dist.density)]
    if isinstance(dist, PointMass):
        return [(float(dist.x), 1.0)]
    return []
