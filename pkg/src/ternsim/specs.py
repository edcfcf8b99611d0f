"""Model and board descriptors, presets, and the ``key = value`` config format.

Config files are one ``key = value`` per line; ``#`` starts a comment and
unknown keys are errors. Sizes use decimal units (1 MB = 1e6 bytes) except
the per-piece SRAM capacities, which are in bits as in the FPGA datasheet.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from .errors import ConfigError

MB = 1e6
GB = 1e9
TILE = 256
BITS_PER_TRIT = 1.6
MATMULS_PER_LAYER = 7  # 4 token mixer + 3 GLU


def round_up(n: int, m: int = TILE) -> int:
    return -(-n // m) * m


@dataclass(frozen=True)
class ModelSpec:
    name: str
    dim: int
    layers: int
    storage_bytes: float
    glu_expansion: Fraction = Fraction(8, 3)

    def __post_init__(self):
        if self.dim < 1 or self.layers < 1:
            raise ValueError("dim and layers must be positive")
        if not self.storage_bytes > 0:
            raise ValueError("storage_bytes must be positive")
        object.__setattr__(self, "glu_expansion", Fraction(self.glu_expansion))

    @property
    def padded_dim(self) -> int:
        return round_up(self.dim)

    @property
    def glu_hidden_logical(self) -> int:
        """Unpadded GLU hidden width, ceil(e*d)."""
        return math.ceil(self.glu_expansion * self.dim)

    @property
    def glu_dim(self) -> int:
        """GLU hidden width, e*d rounded up to a whole number of core tiles."""
        return round_up(math.ceil(self.glu_expansion * self.padded_dim))

    @property
    def logical_params(self) -> float:
        """Decoder ternary weights, L * (4 d^2 + 3 e d^2), without tile padding."""
        d = self.dim
        return float(self.layers * (4 * d * d + 3 * self.glu_expansion * d * d))

    @property
    def allocated_params(self) -> int:
        d, h = self.padded_dim, self.glu_dim
        return self.layers * (4 * d * d + 3 * d * h)

    @property
    def weight_trits(self) -> float:
        """Trits the accelerator stores, from the declared packed storage."""
        return self.storage_bytes * 8 / BITS_PER_TRIT

    @property
    def layer_bytes(self) -> float:
        return self.storage_bytes / self.layers


def structural_storage_bytes(dim: int, layers: int, glu_expansion=Fraction(8, 3)) -> float:
    """Packed decoder bytes implied by the layer shapes (no embeddings, no padding)."""
    d = dim
    return float(layers * (4 * d * d + 3 * Fraction(glu_expansion) * d * d)) * BITS_PER_TRIT / 8


MODEL_PRESETS: dict[str, ModelSpec] = {
    "370m": ModelSpec("370m", 1024, 24, 58 * MB),
    "1.3b": ModelSpec("1.3b", 2048, 24, 230 * MB),
    "2.7b": ModelSpec("2.7b", 2560, 32, 480 * MB),
    # no published storage figure; derived from its layer shapes
    "7b": ModelSpec("7b", 4096, 32, structural_storage_bytes(4096, 32)),
}


@dataclass(frozen=True)
class MemoryKind:
    name: str
    capacity_bits: int  # per piece
    bandwidth_bits: int  # per piece per cycle
    pieces: int

    @property
    def total_capacity_bytes(self) -> float:
        return self.capacity_bits * self.pieces / 8

    @property
    def total_bandwidth_bits(self) -> int:
        return self.bandwidth_bits * self.pieces

    @property
    def bw_per_cap(self) -> float:
        return self.bandwidth_bits / self.capacity_bits


KIB = 1024
BRAM = MemoryKind("BRAM", 36 * KIB, 72, 2016)
URAM = MemoryKind("URAM", 288 * KIB, 144, 960)


@dataclass(frozen=True)
class PowerConstants:
    p0_card: float = 31.8
    p_static: float = 4.0
    p_dynamic: float = 27.8
    p_hbm_variant: float = 46.2
    dynamic_breakdown_onchip: Mapping[str, float] = field(
        default_factory=lambda: {"TMat": 27, "BRAM buf": 25, "URAM": 18, "Norm": 18, "Act": 10, "GTY": 2}
    )
    dynamic_breakdown_hbm: Mapping[str, float] = field(
        default_factory=lambda: {"TMat": 37, "HBM": 24, "BRAM buf": 15, "FIFO": 10, "Norm": 9, "Act": 5}
    )

    def __post_init__(self):
        if not math.isclose(self.p0_card, self.p_static + self.p_dynamic, abs_tol=1e-9):
            raise ConfigError(
                f"card power {self.p0_card} W != static {self.p_static} W + dynamic {self.p_dynamic} W"
            )
        for label, b in (("onchip", self.dynamic_breakdown_onchip), ("hbm", self.dynamic_breakdown_hbm)):
            if not math.isclose(sum(b.values()), 100, abs_tol=1e-6):
                raise ConfigError(f"{label} power breakdown sums to {sum(b.values())}, not 100")


@dataclass(frozen=True)
class BoardSpec:
    name: str = "u280"
    on_chip: tuple[MemoryKind, ...] = (BRAM, URAM)
    onchip_weight_budget: float = 42 * MB
    hbm_capacity: float = 8 * GB
    hbm_peak_bw: float = 460 * GB  # bytes/s
    interconnect_bw: float = 200e9  # bits/s
    clock_hz: float = 150e6
    power: PowerConstants = field(default_factory=PowerConstants)

    def __post_init__(self):
        for f in ("onchip_weight_budget", "hbm_capacity", "hbm_peak_bw", "interconnect_bw", "clock_hz"):
            if not getattr(self, f) > 0:
                raise ConfigError(f"{f} must be positive")

    def memory(self, name: str) -> MemoryKind:
        for m in self.on_chip:
            if m.name.lower() == name.lower():
                return m
        raise KeyError(name)


BOARD_PRESETS: dict[str, BoardSpec] = {
    "u280": BoardSpec(),
    # only bandwidth and SRAM are published for this board; the rest are U280 values
    "d5005-baseline": BoardSpec(name="d5005-baseline", onchip_weight_budget=30.5 * MB, hbm_peak_bw=77 * GB),
}


# -- key = value files -------------------------------------------------------


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"{source}:{n}: empty key")
        if k in out:
            raise ConfigError(f"{source}:{n}: duplicate key {k!r}")
        out[k] = v
    return out


def _num(kv: dict, key: str, source: str, cast=float):
    try:
        return cast(kv[key])
    except ValueError:
        raise ConfigError(f"{source}: {key} = {kv[key]!r} is not a valid number") from None


MODEL_KEYS = {"name", "dim", "layers", "storage_bytes", "glu_expansion"}


def model_spec_from_kv(kv: dict[str, str], source: str = "<manifest>") -> ModelSpec:
    missing = {"dim", "layers", "storage_bytes"} - kv.keys()
    if missing:
        raise ConfigError(f"{source}: missing keys {sorted(missing)}")
    try:
        e = Fraction(kv.get("glu_expansion", "8/3"))
    except ValueError:
        raise ConfigError(f"{source}: bad glu_expansion {kv['glu_expansion']!r}") from None
    try:
        return ModelSpec(
            name=kv.get("name", Path(source).stem),
            dim=_num(kv, "dim", source, int),
            layers=_num(kv, "layers", source, int),
            storage_bytes=_num(kv, "storage_bytes", source),
            glu_expansion=e,
        )
    except ValueError as err:
        raise ConfigError(f"{source}: {err}") from None


def model_spec_to_kv(m: ModelSpec) -> dict[str, str]:
    return {
        "name": m.name,
        "dim": str(m.dim),
        "layers": str(m.layers),
        "storage_bytes": repr(float(m.storage_bytes)),
        "glu_expansion": str(m.glu_expansion),
    }


def format_kv(kv: Mapping[str, str], header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    lines += [f"{k} = {v}" for k, v in kv.items()]
    return "\n".join(lines) + "\n"


def load_model_spec(path: str | Path) -> ModelSpec:
    kv = parse_kv(Path(path).read_text(), str(path))
    unknown = kv.keys() - MODEL_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return model_spec_from_kv(kv, str(path))


_BOARD_SCALARS = {
    "onchip_weight_budget": "onchip_weight_budget",
    "hbm_capacity": "hbm_capacity",
    "hbm_peak_bw": "hbm_peak_bw",
    "interconnect_bw": "interconnect_bw",
    "clock_hz": "clock_hz",
}
_POWER_SCALARS = {f"power.{f.name}": f.name for f in fields(PowerConstants) if f.type in ("float", float)}


def board_from_kv(kv: dict[str, str], source: str = "<board>") -> BoardSpec:
    base = BOARD_PRESETS[kv["base"]] if "base" in kv else BoardSpec()
    if "base" in kv and kv["base"] not in BOARD_PRESETS:
        raise ConfigError(f"{source}: unknown base preset {kv['base']!r}")
    board_kw: dict = {}
    power_kw: dict = {}
    mem: dict[str, dict] = {m.name.lower(): asdict(m) for m in base.on_chip}
    breakdowns = {
        "onchip": dict(base.power.dynamic_breakdown_onchip),
        "hbm": dict(base.power.dynamic_breakdown_hbm),
    }
    touched_breakdown: set[str] = set()
    for k, v in kv.items():
        if k in ("base",):
            continue
        if k == "name":
            board_kw["name"] = v
        elif k in _BOARD_SCALARS:
            board_kw[_BOARD_SCALARS[k]] = _num(kv, k, source)
        elif k in _POWER_SCALARS:
            power_kw[_POWER_SCALARS[k]] = _num(kv, k, source)
        elif k.startswith("mem."):
            parts = k.split(".")
            if len(parts) != 3 or parts[2] not in ("capacity_bits", "bandwidth_bits", "pieces"):
                raise ConfigError(f"{source}: unknown key {k!r}")
            entry = mem.setdefault(parts[1], {"name": parts[1].upper()})
            entry[parts[2]] = _num(kv, k, source, int)
        elif k.startswith("breakdown."):
            parts = k.split(".", 2)
            if len(parts) != 3 or parts[1] not in breakdowns:
                raise ConfigError(f"{source}: unknown key {k!r}")
            if parts[1] not in touched_breakdown:
                breakdowns[parts[1]] = {}
                touched_breakdown.add(parts[1])
            breakdowns[parts[1]][parts[2]] = _num(kv, k, source)
        else:
            raise ConfigError(f"{source}: unknown key {k!r}")
    try:
        on_chip = tuple(MemoryKind(**m) for m in mem.values())
    except TypeError:
        raise ConfigError(f"{source}: incomplete memory definition") from None
    if "p0_card" not in power_kw and ("p_static" in power_kw or "p_dynamic" in power_kw):
        power_kw["p0_card"] = power_kw.get("p_static", base.power.p_static) + power_kw.get(
            "p_dynamic", base.power.p_dynamic
        )
    power = replace(
        base.power,
        dynamic_breakdown_onchip=breakdowns["onchip"],
        dynamic_breakdown_hbm=breakdowns["hbm"],
        **power_kw,
    )
    return replace(base, on_chip=on_chip, power=power, **board_kw)


def board_to_kv(b: BoardSpec) -> dict[str, str]:
    kv = {"name": b.name}
    for key, attr in _BOARD_SCALARS.items():
        kv[key] = repr(float(getattr(b, attr)))
    for key, attr in _POWER_SCALARS.items():
        kv[key] = repr(float(getattr(b.power, attr)))
    for m in b.on_chip:
        for attr in ("capacity_bits", "bandwidth_bits", "pieces"):
            kv[f"mem.{m.name.lower()}.{attr}"] = str(getattr(m, attr))
    for label, bd in (("onchip", b.power.dynamic_breakdown_onchip), ("hbm", b.power.dynamic_breakdown_hbm)):
        for part, pct in bd.items():
            kv[f"breakdown.{label}.{part}"] = repr(float(pct))
    return kv


def load_board(path: str | Path) -> BoardSpec:
    return board_from_kv(parse_kv(Path(path).read_text(), str(path)), str(path))


def resolve_model(ref: str) -> ModelSpec:
    """Preset name, manifest file, or a model directory holding manifest.txt."""
    if ref.lower() in MODEL_PRESETS:
        return MODEL_PRESETS[ref.lower()]
    p = Path(ref)
    if p.is_dir():
        p = p / "manifest.txt"
    if p.is_file():
        from .storage import read_manifest

        return read_manifest(p)[0]
    raise ConfigError(f"unknown model {ref!r}: not a preset ({', '.join(MODEL_PRESETS)}) or a manifest")


def resolve_board(ref: str) -> BoardSpec:
    if ref.lower() in BOARD_PRESETS:
        return BOARD_PRESETS[ref.lower()]
    p = Path(ref)
    if p.is_file():
        return load_board(p)
    raise ConfigError(f"unknown board {ref!r}: not a preset ({', '.join(BOARD_PRESETS)}) or a config file")
