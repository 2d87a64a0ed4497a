"""Economic models: tiered egress pricing, EAF versus traffic, and the
value of latency for block-bid timing."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import ParameterError

SECONDS_PER_MONTH = 30 * 24 * 3600
BYTES_PER_TB = 1e12


@dataclass(frozen=True)
class PricingSchedule:
    """Tiered USD/TB egress prices.

    ``tiers`` is a sequence of ``(upper_bound_tb, usd_per_tb)``; the last
    tier's bound is ``None`` (unbounded).
    """

    tiers: tuple = ((10.0, 90.0), (50.0, 85.0), (150.0, 70.0), (None, 50.0))

    def __post_init__(self):
        tiers = tuple((None if b is None else float(b), float(p)) for b, p in self.tiers)
        if not tiers:
            raise ParameterError("pricing schedule needs at least one tier")
        if tiers[-1][0] is not None:
            raise ParameterError("final tier must be unbounded")
        bounds = [b for b, _ in tiers[:-1]]
        if any(b is None for b in bounds):
            raise ParameterError("only the final tier may be unbounded")
        if any(b <= 0 for b in bounds) or any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ParameterError("tier bounds must be positive and strictly increasing")
        if any(p <= 0 for _, p in tiers):
            raise ParameterError("tier prices must be positive")
        object.__setattr__(self, "tiers", tiers)

    @classmethod
    def flat(cls, usd_per_tb: float) -> "PricingSchedule":
        return cls(((None, usd_per_tb),))

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence]) -> "PricingSchedule":
        return cls(tuple((None if r[0] in (None, "", "inf") else float(r[0]), float(r[1]))
                         for r in rows))

    def marginal_price(self, traffic_tb: float) -> float:
        for bound, price in self.tiers:
            if bound is None or traffic_tb < bound:
                return price
        return self.tiers[-1][1]


def outbound_cost(traffic_tb: float, schedule: PricingSchedule | None = None) -> float:
    """Monthly USD for ``traffic_tb`` of egress, integrating the tier prices."""
    schedule = schedule or PricingSchedule()
    if traffic_tb < 0:
        raise ParameterError("traffic must be nonnegative")
    cost, lower = 0.0, 0.0
    for bound, price in schedule.tiers:
        upper = math.inf if bound is None else bound
        if traffic_tb <= lower:
            break
        cost += (min(traffic_tb, upper) - lower) * price
        lower = upper
    return cost


def average_price(traffic_tb: float, schedule: PricingSchedule | None = None) -> float:
    """Mean USD/TB paid for ``traffic_tb``; the first-tier rate at zero."""
    schedule = schedule or PricingSchedule()
    first_bound, first_price = schedule.tiers[0]
    if traffic_tb <= 0 or first_bound is None or traffic_tb <= first_bound:
        # exact, so the curve is flat rather than jittering across the first tier
        return first_price
    return outbound_cost(traffic_tb, schedule) / traffic_tb


def eaf_curve(taf: float, traffic_grid: Sequence[float], schedule: PricingSchedule | None = None,
              p_attacker: float = 20.0, external_share: float = 0.8,
              internal_price: float = 20.0) -> list[tuple[float, float]]:
    """EAF as a function of a modified node's monthly egress."""
    schedule = schedule or PricingSchedule()
    if p_attacker <= 0:
        raise ParameterError("attacker price must be positive")
    if not 0.0 <= external_share <= 1.0:
        raise ParameterError("external_share must lie in [0, 1]")
    out = []
    for t in traffic_grid:
        if t < 0:
            raise ParameterError("traffic grid must be nonnegative")
        ext = average_price(external_share * t, schedule)
        p_victim = external_share * ext + (1.0 - external_share) * internal_price
        out.append((float(t), taf * p_victim / p_attacker))
    return out


@dataclass(frozen=True)
class SaturationResult:
    effective_tb: float
    external_tb: float
    per_node_usd: float
    aggregate_usd: float
    modified_count: int
    regular_count: int


def saturation_cost(modified_count: int, regular_count: int,
                    modified_out_bps: float, regular_in_bps: float,
                    schedule: PricingSchedule | None = None, external_share: float = 0.8,
                    seconds: float = SECONDS_PER_MONTH) -> SaturationResult:
    """Monthly egress bill when an attacker saturates modified nodes.

    Bandwidths are bytes/second. Each modified node pushes the smaller of
    its own outbound capacity and its share of the regular nodes' combined
    inbound capacity. Only the external share is billed.
    """
    if modified_count <= 0:
        raise ParameterError("modified_count must be positive")
    if min(modified_out_bps, regular_in_bps) < 0 or regular_count < 0:
        raise ParameterError("bandwidths and counts must be nonnegative")
    out_tb = modified_out_bps * seconds / BYTES_PER_TB
    in_tb = regular_in_bps * seconds / BYTES_PER_TB
    effective = min(out_tb, in_tb * regular_count / modified_count)
    external = external_share * effective
    per_node = outbound_cost(external, schedule)
    return SaturationResult(effective, external, per_node, per_node * modified_count,
                            modified_count, regular_count)


@dataclass(frozen=True)
class LatencyValueModel:
    """Cubic bid-value curve over slot time in seconds (highest power first)."""

    coefficients: tuple = (-1.99, 2.44, 32.5, 40.77)
    avg_bid_eth: float = 0.06
    eth_usd: float = 2500.0
    blocks_per_month: int = 216_000

    def profit(self, x: float) -> float:
        return float(np.polyval(self.coefficients, x))

    def slope(self, x: float) -> float:
        return float(np.polyval(np.polyder(self.coefficients), x))

    def curvature(self, x: float) -> float:
        return float(np.polyval(np.polyder(self.coefficients, 2), x))

    def peak_time(self) -> float:
        """Slot time where the marginal value of latency peaks (P'' = 0)."""
        roots = np.roots(np.polyder(self.coefficients, 2))
        real = [r.real for r in np.atleast_1d(roots) if abs(r.imag) < 1e-12]
        if not real:
            raise ParameterError("bid curve has no inflection point")
        return min(real, key=lambda r: -self.slope(r))


@dataclass(frozen=True)
class LatencyProfit:
    x: float
    pct_per_ms: float
    eth_per_ms: float
    usd_per_ms: float


def latency_profit(model: LatencyValueModel, x: float, method: str = "derivative") -> LatencyProfit:
    """Profit gained per millisecond of latency saved when bidding at ``x`` s.

    ``method="difference"`` uses P(x) - P(x - 1 ms) instead of P'(x)/1000.
    """
    if method == "derivative":
        pct = model.slope(x) / 1000.0
    elif method == "difference":
        pct = model.profit(x) - model.profit(x - 0.001)
    else:
        raise ParameterError(f"unknown method {method!r}")
    eth = model.avg_bid_eth * pct / 100.0
    return LatencyProfit(x, pct, eth, eth * model.eth_usd)


def monthly_benefit(model: LatencyValueModel, ms_saved: float) -> float:
    """USD/month from shaving ``ms_saved`` off every block at the best slot time."""
    if ms_saved < 0:
        raise ParameterError("ms_saved must be nonnegative")
    best = latency_profit(model, model.peak_time())
    return best.usd_per_ms * ms_saved * model.blocks_per_month
