"""Capacity checks and multi-card layer placement for the fully on-chip variant."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import InsufficientCapacity, InvalidCards
from .specs import BITS_PER_TRIT, BoardSpec, MemoryKind, ModelSpec
from .tmat import DEFAULT_CORE, TMatCoreConfig


def weights_capacity(budget_bytes: float) -> float:
    """Trits that fit in ``budget_bytes`` at 1.6 bits each."""
    return budget_bytes * 8 / BITS_PER_TRIT


def interconnect_time(nbytes: float, board: BoardSpec) -> float:
    return nbytes * 8 / board.interconnect_bw


def _layer_sizes(model: ModelSpec) -> list[Fraction]:
    per = Fraction(model.storage_bytes) / model.layers
    return [per] * model.layers


def capacity_lower_bound(model: ModelSpec, board: BoardSpec) -> int:
    """Cards needed if weights could be split at any byte: ceil(storage / budget)."""
    return math.ceil(Fraction(model.storage_bytes) / Fraction(board.onchip_weight_budget))


@dataclass(frozen=True)
class Placement:
    num_cards: int
    ranges: tuple[range, ...]
    card_bytes: tuple[float, ...]

    @property
    def layers_per_card(self) -> tuple[int, ...]:
        return tuple(len(r) for r in self.ranges)

    def describe(self) -> str:
        counts = self.layers_per_card
        if len(set(counts)) == 1:
            return f"{self.num_cards} cards x {counts[0]} layers"
        return f"{self.num_cards} cards, layers " + "+".join(map(str, counts))


def _fits(sizes: Sequence[Fraction], cards: int, cap: Fraction) -> bool:
    used, load = 1, Fraction(0)
    for s in sizes:
        if s > cap:
            return False
        if load + s > cap:
            used += 1
            load = s
        else:
            load += s
    return used <= cards


def _best_bottleneck(sizes: Sequence[Fraction], cards: int) -> Fraction:
    prefix = [Fraction(0)]
    for s in sizes:
        prefix.append(prefix[-1] + s)
    candidates = sorted({prefix[j] - prefix[i] for i in range(len(sizes)) for j in range(i + 1, len(sizes) + 1)})
    lo, hi = 0, len(candidates) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if _fits(sizes, cards, candidates[mid]):
            hi = mid
        else:
            lo = mid + 1
    return candidates[lo]


def plan_placement(model: ModelSpec, board: BoardSpec, num_cards: int) -> Placement:
    """Contiguous layer ranges, one per card, minimising the fullest card.

    Ranges are filled front to back, so leftover layers land on earlier cards.
    """
    if num_cards < 1:
        raise InvalidCards(f"need at least one card, got {num_cards}")
    if num_cards > model.layers:
        raise InvalidCards(f"{num_cards} cards for {model.layers} layers would leave cards empty")
    sizes = _layer_sizes(model)
    budget = Fraction(board.onchip_weight_budget)
    bottleneck = _best_bottleneck(sizes, num_cards)
    if bottleneck > budget:
        raise InsufficientCapacity(float(bottleneck), float(budget), "bytes on the fullest card")

    ranges, loads = [], []
    start = 0
    remaining = sum(sizes)
    for card in range(num_cards):
        cards_after = num_cards - card - 1
        target = remaining / (cards_after + 1)
        end, load = start, Fraction(0)
        while end < len(sizes) - cards_after:
            s = sizes[end]
            if load + s > bottleneck:
                break
            forced = end == start or not _fits(sizes[end:], cards_after, bottleneck)
            if not (forced or abs(load + s - target) <= abs(load - target)):
                break
            load += s
            end += 1
        remaining -= load
        ranges.append(range(start, end))
        loads.append(float(load))
        start = end
    assert start == len(sizes)
    return Placement(num_cards, tuple(ranges), tuple(loads))


def min_cards(model: ModelSpec, board: BoardSpec) -> int:
    """Fewest cards for which a whole-layer placement fits."""
    sizes = _layer_sizes(model)
    budget = Fraction(board.onchip_weight_budget)
    if sizes[0] > budget:
        raise InsufficientCapacity(float(sizes[0]), float(budget), "bytes for a single layer")
    m = capacity_lower_bound(model, board)
    while not _fits(sizes, m, budget):
        m += 1
    return m


class Zone(str, enum.Enum):
    CAPACITY_LIMITED = "capacity-limited"
    BANDWIDTH_LIMITED = "bandwidth-limited"
    OVER_PROVISIONED = "over-provisioned"
    ALIGNED = "aligned"


def alignment_zone(
    required_bw: float,
    required_cap: float,
    provided_bw: float,
    provided_cap: float,
    slack: float = 2.0,
) -> Zone:
    if provided_cap < required_cap:
        return Zone.CAPACITY_LIMITED
    if provided_bw < required_bw:
        return Zone.BANDWIDTH_LIMITED
    if provided_bw > slack * required_bw or provided_cap > slack * required_cap:
        return Zone.OVER_PROVISIONED
    return Zone.ALIGNED


def memory_bandwidth(kind: MemoryKind, board: BoardSpec) -> float:
    """Aggregate bytes/s of every piece of ``kind`` at the core clock."""
    return kind.total_bandwidth_bits / 8 * board.clock_hz


def core_weight_bandwidth(board: BoardSpec, core: TMatCoreConfig = DEFAULT_CORE) -> float:
    """Packed weight bytes/s needed to feed one full core tile per cycle."""
    return core.core_dim**2 * BITS_PER_TRIT / 8 * board.clock_hz
