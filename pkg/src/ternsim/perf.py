"""Analytical throughput / roofline / power model for both architecture variants.

Per-token core time is weight-driven: every stored trit passes through one
TMul once per token, ``core_dim**2`` per cycle, plus the reduction tail of each
of the seven mat-vecs in a layer and a non-matmul overhead per layer
(``overhead_cycles_per_layer + dim / elementwise_lanes``). The overhead
constants are fitted to published end-to-end throughputs; see
``derive_calibration``.

The HBM variant is a roofline: the memory ceiling grows linearly with batch
(weights are streamed once per step and shared by every batch group), the
compute ceiling is the core's per-token rate.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ModelTooLarge, UsageError
from .hardware import interconnect_time, min_cards, plan_placement
from .specs import BITS_PER_TRIT, MATMULS_PER_LAYER, MODEL_PRESETS, BoardSpec, ModelSpec
from .tmat import DEFAULT_CORE, TMatCoreConfig

ON_CHIP = "fully-on-chip"
HBM = "hbm-assisted"
VARIANTS = (ON_CHIP, HBM)


@dataclass(frozen=True)
class CalibrationConstants:
    overhead_cycles_per_layer: int = 15
    elementwise_lanes: int = 8  # 0 drops the dimension-proportional term

    def __post_init__(self):
        if self.overhead_cycles_per_layer < 0 or self.elementwise_lanes < 0:
            raise ValueError("calibration constants must be >= 0")


UNCALIBRATED = CalibrationConstants(0, 0)


@dataclass(frozen=True)
class RooflineParams:
    hbm_efficiency: float = 0.75

    def __post_init__(self):
        if not 0 < self.hbm_efficiency <= 1:
            raise ValueError("hbm_efficiency must be in (0, 1]")

    def effective_bw(self, board: BoardSpec) -> float:
        return self.hbm_efficiency * board.hbm_peak_bw

    @staticmethod
    def peak_compute(board: BoardSpec, core: TMatCoreConfig = DEFAULT_CORE) -> float:
        """Trit MACs per second with every TMul busy."""
        return core.core_dim**2 * board.clock_hz


@dataclass(frozen=True)
class PerfQuery:
    model: ModelSpec
    variant: str = ON_CHIP
    batch: int = 1
    cards: int | None = None  # None: fewest that fit (on-chip) or 1 (HBM)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.batch < 1:
            raise UsageError("batch must be >= 1")
        if self.cards is not None and self.cards < 1:
            raise UsageError("cards must be >= 1")
        if self.variant == HBM and self.cards not in (None, 1):
            raise UsageError("the HBM-assisted variant runs on a single card")


@dataclass(frozen=True)
class PerfReport:
    model: str
    variant: str
    batch: int
    cards: int
    tokens_per_s: float
    cycles_per_token: float
    regime: str  # memory | compute | pipeline
    power_w: float
    efficiency: float
    breakdown: Mapping[str, float]
    intensity: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["breakdown"] = dict(self.breakdown)
        return d


# -- cycles -------------------------------------------------------------------


def layer_overhead_cycles(model: ModelSpec, calib: CalibrationConstants) -> int:
    extra = math.ceil(model.padded_dim / calib.elementwise_lanes) if calib.elementwise_lanes else 0
    return calib.overhead_cycles_per_layer + extra


def cycles_per_token(
    model: ModelSpec,
    calib: CalibrationConstants = CalibrationConstants(),
    core: TMatCoreConfig = DEFAULT_CORE,
) -> float:
    per_layer_trits = model.weight_trits / model.layers
    per_layer = (
        per_layer_trits / core.core_dim**2
        + MATMULS_PER_LAYER * core.reduction_cycles
        + layer_overhead_cycles(model, calib)
    )
    return model.layers * per_layer


def arithmetic_intensity(model: ModelSpec, batch: int = 1) -> float:
    """Ops (2 per MAC) per packed weight byte moved, for one weight pass shared by ``batch``."""
    return batch * 2 * model.weight_trits / model.storage_bytes


# -- power --------------------------------------------------------------------


def power_and_efficiency(
    variant: str, board: BoardSpec, tokens_per_s: float, cards: int = 1, active_cards: int | None = None
) -> tuple[float, float, dict[str, float]]:
    """Idle on-chip cards draw static power only; the HBM card is a constant."""
    p = board.power
    if variant == ON_CHIP:
        active = cards if active_cards is None else active_cards
        if not 0 <= active <= cards:
            raise ValueError("active cards must be between 0 and cards")
        watts = active * p.p0_card + (cards - active) * p.p_static
        breakdown = dict(p.dynamic_breakdown_onchip)
    elif variant == HBM:
        watts = p.p_hbm_variant
        breakdown = dict(p.dynamic_breakdown_hbm)
    else:
        raise UsageError(f"unknown variant {variant!r}")
    return watts, tokens_per_s / watts, breakdown


NODE_SCALING = {"16nm->7nm": 0.35, "16nm->8nm": 0.5}


def project_node_scaling(power_w: float, factor: float) -> float:
    if not factor > 0:
        raise ValueError("scaling factor must be positive")
    return power_w * factor


def scaled_efficiency(efficiency: float, factor: float) -> float:
    """Same throughput at ``factor`` times the power."""
    return efficiency / factor


# -- throughput ---------------------------------------------------------------


def onchip_throughput(
    query: PerfQuery,
    board: BoardSpec,
    calib: CalibrationConstants = CalibrationConstants(),
    core: TMatCoreConfig = DEFAULT_CORE,
) -> PerfReport:
    if query.variant != ON_CHIP:
        raise UsageError("onchip_throughput needs the fully-on-chip variant")
    model = query.model
    m = query.cards if query.cards is not None else min_cards(model, board)
    plan_placement(model, board, m)

    cycles = cycles_per_token(model, calib, core)
    hop = interconnect_time(model.padded_dim, board)  # int8 activations
    single = 1.0 / (cycles / board.clock_hz + (m - 1) * hop)
    active = min(query.batch, m)
    tps = single * active
    watts, eff, breakdown = power_and_efficiency(ON_CHIP, board, tps, m, active)
    return PerfReport(
        model=model.name,
        variant=ON_CHIP,
        batch=query.batch,
        cards=m,
        tokens_per_s=tps,
        cycles_per_token=cycles,
        regime="pipeline" if m > 1 else "compute",
        power_w=watts,
        efficiency=eff,
        breakdown=breakdown,
        intensity=arithmetic_intensity(model, 1),
    )


def memory_bound_tps(model: ModelSpec, board: BoardSpec, roofline: RooflineParams) -> float:
    """Single-batch throughput when each token streams every weight once."""
    return roofline.effective_bw(board) / model.storage_bytes


def compute_bound_tps(
    model: ModelSpec, board: BoardSpec, calib: CalibrationConstants, core: TMatCoreConfig = DEFAULT_CORE
) -> float:
    # batch groups split the TDot lanes, so aggregate core throughput does not change with batch
    return board.clock_hz / cycles_per_token(model, calib, core)


def hbm_throughput(
    query: PerfQuery,
    board: BoardSpec,
    roofline: RooflineParams = RooflineParams(),
    calib: CalibrationConstants = CalibrationConstants(),
    core: TMatCoreConfig = DEFAULT_CORE,
) -> PerfReport:
    if query.variant != HBM:
        raise UsageError("hbm_throughput needs the hbm-assisted variant")
    model = query.model
    if model.storage_bytes > board.hbm_capacity:
        raise ModelTooLarge(
            f"{model.name}: {model.storage_bytes:,.0f} bytes exceed HBM capacity {board.hbm_capacity:,.0f}"
        )
    mem = query.batch * memory_bound_tps(model, board, roofline)
    comp = compute_bound_tps(model, board, calib, core)
    tps = min(mem, comp)
    watts, eff, breakdown = power_and_efficiency(HBM, board, tps)
    return PerfReport(
        model=model.name,
        variant=HBM,
        batch=query.batch,
        cards=1,
        tokens_per_s=tps,
        cycles_per_token=cycles_per_token(model, calib, core),
        regime="memory" if mem < comp else "compute",
        power_w=watts,
        efficiency=eff,
        breakdown=breakdown,
        intensity=arithmetic_intensity(model, query.batch),
    )


def evaluate(
    query: PerfQuery,
    board: BoardSpec,
    roofline: RooflineParams = RooflineParams(),
    calib: CalibrationConstants = CalibrationConstants(),
) -> PerfReport:
    if query.variant == ON_CHIP:
        return onchip_throughput(query, board, calib)
    return hbm_throughput(query, board, roofline, calib)


def batch_threshold(
    model: ModelSpec,
    board: BoardSpec,
    roofline: RooflineParams = RooflineParams(),
    calib: CalibrationConstants = CalibrationConstants(),
) -> float:
    """Batch at which the memory ceiling meets the compute ceiling."""
    return compute_bound_tps(model, board, calib) / memory_bound_tps(model, board, roofline)


def roofline_sweep(
    model: ModelSpec,
    board: BoardSpec,
    batches: Iterable[int],
    roofline: RooflineParams = RooflineParams(),
    calib: CalibrationConstants = CalibrationConstants(),
) -> list[PerfReport]:
    return [hbm_throughput(PerfQuery(model, HBM, b), board, roofline, calib) for b in batches]


def project_7b(
    board: BoardSpec,
    roofline: RooflineParams = RooflineParams(),
    calib: CalibrationConstants = CalibrationConstants(),
    batch: int = 1,
) -> PerfReport:
    return hbm_throughput(PerfQuery(MODEL_PRESETS["7b"], HBM, batch), board, roofline, calib)


# -- calibration ------------------------------------------------------------------


@dataclass(frozen=True)
class Anchor:
    """A published throughput the cycle model should reproduce at its compute/pipeline limit."""

    model: ModelSpec
    tokens_per_s: float
    cards: int = 1


# Published rows where the core, not memory, sets the pace: single-batch on-chip
# (370M over 2 cards) and the saturated B=16 HBM rows.
PUBLISHED_ANCHORS = (
    Anchor(MODEL_PRESETS["370m"], 16_300, cards=2),
    Anchor(MODEL_PRESETS["1.3b"], 5_885),
    Anchor(MODEL_PRESETS["2.7b"], 3_028),
)


def _overhead_needed(a: Anchor, board: BoardSpec, core: TMatCoreConfig) -> float:
    """Per-layer non-matmul cycles that make ``a`` come out exactly."""
    hop = interconnect_time(a.model.padded_dim, board)
    total = board.clock_hz * (1 / a.tokens_per_s - (a.cards - 1) * hop)
    matmul = a.model.weight_trits / core.core_dim**2 + a.model.layers * MATMULS_PER_LAYER * core.reduction_cycles
    return (total - matmul) / a.model.layers


def fit_overhead(
    anchors: Sequence[Anchor] = PUBLISHED_ANCHORS,
    board: BoardSpec = BoardSpec(),
    core: TMatCoreConfig = DEFAULT_CORE,
) -> tuple[float, float]:
    """Least-squares (fixed, per-element) overhead, relative-error weighted."""
    need = np.array([_overhead_needed(a, board, core) for a in anchors])
    A = np.array([[1.0, a.model.padded_dim] for a in anchors])
    w = 1 / need
    fixed, per_elem = np.linalg.lstsq(A * w[:, None], need * w, rcond=None)[0]
    return float(fixed), float(per_elem)


def derive_calibration(
    anchors: Sequence[Anchor] = PUBLISHED_ANCHORS,
    board: BoardSpec = BoardSpec(),
    core: TMatCoreConfig = DEFAULT_CORE,
) -> CalibrationConstants:
    """Round the fit to whole lanes, then pin the fixed part on the first anchor."""
    _, per_elem = fit_overhead(anchors, board, core)
    lanes = max(1, round(1 / per_elem))
    first = anchors[0]
    fixed = _overhead_needed(first, board, core) - math.ceil(first.model.padded_dim / lanes)
    return CalibrationConstants(max(0, round(fixed)), lanes)


def hbm_efficiency_from(model: ModelSpec, tokens_per_s: float, board: BoardSpec) -> float:
    """Fraction of peak HBM bandwidth implied by a memory-bound single-batch throughput."""
    return tokens_per_s * model.storage_bytes / board.hbm_peak_bw


# -- published comparison rows -----------------------------------------------------


@dataclass(frozen=True)
class PublishedRow:
    hardware: str
    model: str
    batch: int
    tokens_per_s: float
    power_w: float | None = None

    @property
    def efficiency(self) -> float | None:
        return None if self.power_w is None else self.tokens_per_s / self.power_w


# published measurements, reported as-is for ratio columns
BASELINES = (
    PublishedRow("FPGA baseline (D5005)", "370m", 1, 62, 13.7),
    PublishedRow("Jetson Orin Nano", "370m", 1, 85, 3.5),
    PublishedRow("Jetson Orin Nano", "370m", 16, 1076, 4.4),
    PublishedRow("FPGA baseline (D5005)", "1.3b", 1, 24, 13.9),
    PublishedRow("A100", "1.3b", 1, 499, 119.6),
    PublishedRow("A100", "1.3b", 16, 7202, 132.5),
    PublishedRow("A100", "2.7b", 1, 250, 124.0),
    PublishedRow("A100", "2.7b", 16, 3660, 139.3),
    PublishedRow("FlightLLM (U280)", "7b", 1, 55, 45),
    PublishedRow("EdgeLLM (VCU128)", "6b", 1, 75, 51),
    PublishedRow("bitnet.cpp (Apple M2)", "7b", 1, 15, 15),
)


def baseline_for(hardware_prefix: str, model: str, batch: int) -> PublishedRow | None:
    for row in BASELINES:
        if row.hardware.startswith(hardware_prefix) and row.model == model and row.batch == batch:
            return row
    return None


def reference_baseline(report: PerfReport) -> PublishedRow | None:
    """The GPU row each report is compared against."""
    gpu = "Jetson" if report.model == "370m" else "A100"
    return baseline_for(gpu, report.model, report.batch)


# -- formatting ---------------------------------------------------------------------

REPORT_COLUMNS = ("model", "variant", "batch", "cards", "tokens_per_s", "power_w", "efficiency", "regime")


def format_table(reports: Sequence[PerfReport], with_baselines: bool = True) -> str:
    header = ["model", "variant", "B", "M", "TP (tk/s)", "Power (W)", "Eff (tk/s/W)", "regime", "AI (op/B)"]
    if with_baselines:
        header += ["vs GPU TP", "vs GPU Eff"]
    rows = [header]
    for r in reports:
        row = [
            r.model,
            r.variant,
            str(r.batch),
            str(r.cards),
            f"{r.tokens_per_s:,.0f}",
            f"{r.power_w:.1f}",
            f"{r.efficiency:,.1f}",
            r.regime,
            f"{r.intensity:g}",
        ]
        if with_baselines:
            base = reference_baseline(r)
            if base is None:
                row += ["-", "-"]
            else:
                row += [f"{r.tokens_per_s / base.tokens_per_s:.1f}x", f"{r.efficiency / base.efficiency:.1f}x"]
        rows.append(row)
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
