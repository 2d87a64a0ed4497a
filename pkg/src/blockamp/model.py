"""Closed-form amplification model.

Per-connection waste under each propagation policy, the per-node waste
``f(x)``, network waste over a connection-count distribution, and the
traffic/economic amplification factors.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

_trapz = getattr(np, "trapezoid", None) or np.trapz

ANNOUNCE_SIZE = 32


class ParameterError(ValueError):
    """Raised for out-of-domain model parameters."""


class IntegrationError(ValueError):
    """Raised when a connection distribution is not a valid density."""


class PolicyKind(enum.Enum):
    SQRT = "sqrt"
    AGGRESSIVE = "aggressive"
    CONSTANT_PEERS = "constant"


@dataclass(frozen=True)
class PropagationPolicy:
    """How a node spreads a transaction to its peers.

    ``broadcast_count``/``announce_count`` only apply to ``CONSTANT_PEERS``
    (Erigon >= v2.55: full tx to 3 peers, hash to 6).
    """

    kind: PolicyKind = PolicyKind.SQRT
    broadcast_count: int = 3
    announce_count: int = 6

    def __post_init__(self):
        if self.kind is PolicyKind.CONSTANT_PEERS:
            if self.broadcast_count < 0 or self.announce_count < 0:
                raise ParameterError("constant-peer counts must be nonnegative")

    @classmethod
    def sqrt(cls) -> "PropagationPolicy":
        return cls(PolicyKind.SQRT)

    @classmethod
    def aggressive(cls) -> "PropagationPolicy":
        return cls(PolicyKind.AGGRESSIVE)

    @classmethod
    def constant(cls, broadcast: int = 3, announce: int = 6) -> "PropagationPolicy":
        return cls(PolicyKind.CONSTANT_PEERS, broadcast, announce)

    @classmethod
    def parse(cls, text: str) -> "PropagationPolicy":
        """Parse ``sqrt``, ``aggressive`` or ``constant[:B:A]``."""
        head, *rest = str(text).strip().lower().split(":")
        if head == "sqrt":
            return cls.sqrt()
        if head == "aggressive":
            return cls.aggressive()
        if head in ("constant", "constant_peers", "erigon"):
            if rest:
                return cls.constant(int(rest[0]), int(rest[1]) if len(rest) > 1 else 6)
            return cls.constant()
        raise ParameterError(f"unknown propagation policy {text!r}")

    def label(self) -> str:
        if self.kind is PolicyKind.CONSTANT_PEERS:
            return f"constant:{self.broadcast_count}:{self.announce_count}"
        return self.kind.value


@dataclass(frozen=True)
class AmplificationParams:
    tx_size: float
    gamma: float
    policy: PropagationPolicy = field(default_factory=PropagationPolicy.aggressive)
    total_nodes: int = 6000
    announce_size: float = ANNOUNCE_SIZE
    modified_connections: int = 50
    max_connections: int = 1000
    share_decimals: int | None = 2

    def __post_init__(self):
        if not self.tx_size > 0:
            raise ParameterError("tx_size must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ParameterError("gamma must lie in [0, 1]")
        if self.total_nodes < 1:
            raise ParameterError("total_nodes must be >= 1")
        if self.modified_connections < 1:
            raise ParameterError("modified_connections must be >= 1")
        if self.max_connections < 1:
            raise ParameterError("max_connections must be >= 1")

    @property
    def regular_nodes(self) -> float:
        return (1.0 - self.gamma) * self.total_nodes

    @property
    def modified_nodes(self) -> float:
        return self.gamma * self.total_nodes


@dataclass(frozen=True)
class PointMass:
    x: float


@dataclass(frozen=True)
class Empirical:
    samples: tuple

    def __post_init__(self):
        if len(self.samples) == 0:
            raise IntegrationError("empirical distribution needs samples")
        if min(self.samples) <= 0:
            raise IntegrationError("connection samples must be positive")


@dataclass(frozen=True, eq=False)
class Smoothed:
    """Density tabulated on ``grid`` (ascending, spanning [0, max_connections])."""

    grid: np.ndarray
    density: np.ndarray

    def mass(self) -> float:
        return float(_trapz(self.density, self.grid))

    def mean(self) -> float:
        return float(_trapz(self.grid * self.density, self.grid))

    def cdf(self) -> np.ndarray:
        d, g = self.density, self.grid
        steps = 0.5 * (d[1:] + d[:-1]) * np.diff(g)
        return np.concatenate([[0.0], np.cumsum(steps)])

    def quantile(self, q: float) -> float:
        return float(np.interp(q, self.cdf(), self.grid))

    def median(self) -> float:
        return self.quantile(0.5)


ConnectionDistribution = PointMass | Empirical | Smoothed


def broadcast_share(c: int, decimals: int | None = 2) -> float:
    """Fraction of ``c`` peers that get the full tx under the sqrt policy.

    Rounded to ``decimals`` places by default (sqrt(50)/50 -> 0.14, i.e. 14%
    of peers); pass ``None`` for the unrounded ratio.
    """
    share = math.sqrt(c) / c
    return share if decimals is None else round(share, decimals)


def per_connection_waste(policy: PropagationPolicy, a: float, c: int,
                         announce_size: float = ANNOUNCE_SIZE,
                         share_decimals: int | None = 2) -> float:
    """Expected bytes one modified-node connection delivers per invalid tx."""
    if not a > 0 or not c >= 1:
        raise ParameterError("a and c must be positive")
    if policy.kind is PolicyKind.AGGRESSIVE:
        return float(a)
    if policy.kind is PolicyKind.SQRT:
        share = broadcast_share(c, share_decimals)
        return share * a + (1.0 - share) * announce_size
    # extrapolated: each connection is one of the 3 broadcast / 6 announce targets
    return (min(policy.broadcast_count, c) * a
            + min(policy.announce_count, c) * announce_size) / c


def _conn_waste(params: AmplificationParams) -> float:
    return per_connection_waste(params.policy, params.tx_size, params.modified_connections,
                                params.announce_size, params.share_decimals)


def node_waste(x: float, params: AmplificationParams) -> float:
    """Waste f(x) a regular node with ``x`` active connections receives."""
    if not 0 <= x <= params.max_connections:
        raise ParameterError(f"x={x} outside [0, {params.max_connections}]")
    return _conn_waste(params) * params.gamma * x


def expected_connections(g: ConnectionDistribution, max_connections: int = 1000) -> float:
    """E[x] under ``g``; trapezoid quadrature for tabulated densities."""
    if isinstance(g, PointMass):
        if not 0 <= g.x <= max_connections:
            raise ParameterError(f"point mass {g.x} outside [0, {max_connections}]")
        return float(g.x)
    if isinstance(g, Empirical):
        xs = np.asarray(g.samples, dtype=float)
        if xs.max() > max_connections:
            raise ParameterError("empirical sample exceeds max_connections")
        return float(xs.mean())
    if isinstance(g, Smoothed):
        if g.grid[0] < 0 or g.grid[-1] > max_connections:
            raise IntegrationError("density grid must lie within [0, max_connections]")
        if np.any(np.diff(g.grid) > 1.0):
            raise IntegrationError("density grid step must be <= 1 connection")
        if np.any(g.density < 0):
            raise IntegrationError("density has negative values")
        mass = g.mass()
        if abs(mass - 1.0) > 1e-6:
            raise IntegrationError(f"density integrates to {mass:.9f}, not 1")
        return g.mean()
    raise TypeError(f"unsupported distribution {type(g).__name__}")


def network_waste(params: AmplificationParams, g: ConnectionDistribution) -> float:
    """Bytes of waste summed over all regular nodes for one invalid tx."""
    if isinstance(g, PointMass):
        return params.regular_nodes * node_waste(g.x, params)
    # f is linear in x, so E[f(x)] = f(E[x])
    mean_x = expected_connections(g, params.max_connections)
    return params.regular_nodes * _conn_waste(params) * params.gamma * mean_x


def taf(params: AmplificationParams, g: ConnectionDistribution) -> float:
    return network_waste(params, g) / params.tx_size


def eaf(taf_value: float, p_victim: float, p_attacker: float) -> float:
    """Economic amplification: traffic amplification times the price ratio."""
    if p_attacker == 0:
        raise ZeroDivisionError("attacker price must be nonzero")
    if p_attacker < 0:
        raise ParameterError("attacker price must be positive")
    return taf_value * p_victim / p_attacker


def blended_victim_price(external_share: float = 0.8, external_price: float = 90.0,
                         internal_price: float = 20.0) -> float:
    """Victim USD/TB with part of the egress staying inside the cloud."""
    return external_share * external_price + (1.0 - external_share) * internal_price


def waste_per_modified_node(params: AmplificationParams, g: ConnectionDistribution,
                            modified_count: float | None = None) -> float:
    """Network waste divided over the modified nodes (gamma*N unless given)."""
    divisor = params.modified_nodes if modified_count is None else modified_count
    if divisor <= 0:
        raise ParameterError("no modified nodes to divide waste over")
    return network_waste(params, g) / divisor


def amplification_report(params: AmplificationParams, g: ConnectionDistribution,
                         p_victim: float, p_attacker: float,
                         modified_count: float | None = None) -> dict:
    """One JSON-ready record of the closed-form results."""
    if isinstance(g, PointMass):
        per_node = node_waste(g.x, params)
    else:
        per_node = node_waste(expected_connections(g, params.max_connections), params)
    total = network_waste(params, g)
    t = total / params.tx_size
    return {
        "policy": params.policy.label(),
        "a": params.tx_size,
        "gamma": params.gamma,
        "N": params.total_nodes,
        "waste_per_node": per_node,
        "waste_per_modified_node": (waste_per_modified_node(params, g, modified_count)
                                    if params.gamma > 0 or modified_count else 0.0),
        "waste_network": total,
        "taf": t,
        "eaf": eaf(t, p_victim, p_attacker),
    }


def distribution_from_samples(samples: Sequence[float]) -> Empirical:
    return Empirical(tuple(float(s) for s in samples))
