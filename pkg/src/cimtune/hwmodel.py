"""CIM macro abstraction, accelerator template and analytic cost equations."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from enum import Enum

KB = 8192  # bits


class ConfigError(ValueError):
    """Invalid macro, accelerator or coefficient description."""


class MacroKind(str, Enum):
    DIGITAL = "digital"
    ANALOG = "analog"


class Tiling(str, Enum):
    AF = "AF"
    PF = "PF"


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def ee_to_mac_energy(ee_tops_w: float) -> float:
    """pJ per MAC from a reported efficiency in TOPS/W (1 MAC = 2 OPs)."""
    if ee_tops_w <= 0:
        raise ConfigError("energy efficiency must be positive")
    return 2.0 / ee_tops_w


@dataclass(frozen=True)
class MacroSpec:
    """Matrix abstraction of one CIM macro.

    One compute step projects an ``al``-long input vector onto one of ``scr``
    resident ``al x pc`` weight planes and yields ``pc`` partial sums.
    """

    kind: MacroKind
    al: int
    pc: int
    scr: int
    icw: int
    wuw: int
    n_input_bitline: int | None = None
    dac_precision: int | None = None
    simultaneous_compute_update: bool = False
    freq_mhz: float = 200.0
    e_mac_pj: float = 0.0
    a_compute_mm2: float = 0.0
    a_bank_mm2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", MacroKind(self.kind))
        for name in ("al", "pc", "scr", "icw", "wuw"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"macro.{name} must be a positive integer, got {v!r}")
        if self.freq_mhz <= 0:
            raise ConfigError("macro.freq_mhz must be > 0")
        for name in ("e_mac_pj", "a_compute_mm2", "a_bank_mm2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"macro.{name} must be >= 0")
        expected = derive_icw(self)
        if expected != self.icw:
            raise ConfigError(
                f"macro.icw={self.icw} inconsistent with {self.kind.value} input width "
                f"(al x {'n_input_bitline' if self.kind is MacroKind.DIGITAL else 'dac_precision'} = {expected})"
            )

    @property
    def input_bits_per_cycle_per_lane(self) -> int:
        return self.n_input_bitline if self.kind is MacroKind.DIGITAL else self.dac_precision


@dataclass(frozen=True)
class AcceleratorConfig:
    """Template instance: an ``mr x mc`` grid of macros plus Input/Output SRAM."""

    macro: MacroSpec
    mr: int
    mc: int
    bw: int
    is_size: int
    os_size: int

    def __post_init__(self):
        for name in ("mr", "mc", "bw", "is_size", "os_size"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"config.{name} must be a positive integer, got {v!r}")

    @property
    def scr(self) -> int:
        return self.macro.scr

    def with_params(self, mr=None, mc=None, scr=None, is_size=None, os_size=None, bw=None):
        macro = self.macro if scr is None else replace(self.macro, scr=scr)
        return AcceleratorConfig(
            macro,
            self.mr if mr is None else mr,
            self.mc if mc is None else mc,
            self.bw if bw is None else bw,
            self.is_size if is_size is None else is_size,
            self.os_size if os_size is None else os_size,
        )

    def params(self) -> tuple[int, int, int, int, int]:
        """(MR, MC, SCR, IS_SIZE, OS_SIZE) with sizes in bits."""
        return (self.mr, self.mc, self.scr, self.is_size, self.os_size)

    def fingerprint(self) -> str:
        doc = json.dumps(config_to_dict(self), sort_keys=True)
        return hashlib.sha1(doc.encode()).hexdigest()[:12]

    def peak_macs_per_cycle(self, dw_in: int) -> float:
        return self.mr * self.mc * self.macro.al * self.macro.pc / compute_cycles(self.macro, dw_in)


@dataclass(frozen=True)
class CostCoefficients:
    """Per-bit access energies (pJ) and area coefficients (mm^2)."""

    e_is_rd: float = 0.0
    e_is_wr: float = 0.0
    e_os_rd: float = 0.0
    e_os_wr: float = 0.0
    e_ema: float = 0.0
    e_cim_update: float = 0.0
    e_acc: float = 0.0  # per accumulated psum word; adder tree is free unless set
    a_is: float = 0.0  # mm^2 per KB
    a_os: float = 0.0  # mm^2 per KB
    a_fixed: float = 0.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ConfigError(f"coefficient {k} must be >= 0, got {v}")


def derive_icw(macro: MacroSpec) -> int:
    """Input-compute bandwidth in bits per cycle."""
    if macro.kind is MacroKind.DIGITAL:
        if macro.n_input_bitline is None:
            raise ConfigError("digital macro requires n_input_bitline")
        return macro.al * macro.n_input_bitline
    if macro.dac_precision is None:
        raise ConfigError("analog macro requires dac_precision")
    return macro.al * macro.dac_precision


def compute_cycles(macro: MacroSpec, dw_in: int) -> int:
    """Cycles for one input vector to pass through the macro."""
    if dw_in < 1:
        raise ConfigError("dw_in must be >= 1")
    return ceil_div(dw_in, macro.input_bits_per_cycle_per_lane)


def update_cycles(macro: MacroSpec, dw_w: int, rows: int | None = None) -> int:
    """Cycles to write one weight column of ``rows`` (default ``al``) elements."""
    if dw_w < 1:
        raise ConfigError("dw_w must be >= 1")
    rows = macro.al if rows is None else rows
    return ceil_div(rows * dw_w, macro.wuw)


def plane_update_cycles(macro: MacroSpec, dw_w: int) -> int:
    """Full ``al x pc`` plane; columns are written one after another."""
    return macro.pc * update_cycles(macro, dw_w)


def resident_shape(cfg: AcceleratorConfig, tiling: Tiling | str) -> tuple[int, int]:
    """(K, N) extent of the weight block resident across the whole array.

    Macro columns extend K, macro rows extend N; the SCR planes extend K under
    AF and N under PF.
    """
    m = cfg.macro
    if Tiling(tiling) is Tiling.AF:
        return m.scr * cfg.mc * m.al, cfg.mr * m.pc
    return cfg.mc * m.al, m.scr * cfg.mr * m.pc


def area_of(cfg: AcceleratorConfig, c: CostCoefficients) -> float:
    m = cfg.macro
    return (
        cfg.mr * cfg.mc * (m.a_compute_mm2 + m.scr * m.a_bank_mm2)
        + c.a_is * cfg.is_size / KB
        + c.a_os * cfg.os_size / KB
        + c.a_fixed
    )


# ---------------------------------------------------------------- file I/O


def parse_size(v) -> int:
    """Bits from an int, or from strings like ``"64KB"``, ``"512b"``, ``"4096"``."""
    if isinstance(v, bool):
        raise ConfigError(f"invalid size {v!r}")
    if isinstance(v, int):
        return v
    if isinstance(v, float) and v.is_integer():
        return int(v)
    if isinstance(v, str):
        s = v.strip().lower().replace(" ", "")
        for suffix, scale in (("kb", KB), ("b", 1)):
            if s.endswith(suffix):
                try:
                    num = float(s[: -len(suffix)])
                except ValueError:
                    raise ConfigError(f"invalid size {v!r}") from None
                bits = num * scale
                if not bits.is_integer():
                    raise ConfigError(f"size {v!r} is not a whole number of bits")
                return int(bits)
        if s.isdigit():
            return int(s)
    raise ConfigError(f"invalid size {v!r}")


_MACRO_FIELDS = {
    "kind", "al", "pc", "scr", "icw", "wuw", "n_input_bitline", "dac_precision",
    "simultaneous_compute_update", "freq_mhz", "e_mac_pj", "ee_tops_w", "a_compute_mm2",
    "a_bank_mm2", "name",
}


def macro_from_dict(d: dict) -> MacroSpec:
    unknown = sorted(set(d) - _MACRO_FIELDS)
    if unknown:
        raise ConfigError(f"macro: unknown field(s) {unknown}")
    d = dict(d)
    d.pop("name", None)
    if "ee_tops_w" in d:
        ee = d.pop("ee_tops_w")
        d.setdefault("e_mac_pj", ee_to_mac_energy(ee))
    for req in ("kind", "al", "pc", "scr", "wuw"):
        if req not in d:
            raise ConfigError(f"macro: missing field {req!r}")
    try:
        kind = MacroKind(d["kind"])
    except ValueError as exc:
        raise ConfigError(f"macro: kind must be 'digital' or 'analog', got {d['kind']!r}") from exc
    d["kind"] = kind
    if "icw" not in d:
        lane = d.get("n_input_bitline") if kind is MacroKind.DIGITAL else d.get("dac_precision")
        if lane is None:
            raise ConfigError("macro: missing icw and the kind-specific input width")
        d["icw"] = d["al"] * lane
    return MacroSpec(**d)


def macro_to_dict(m: MacroSpec) -> dict:
    d = asdict(m)
    d["kind"] = m.kind.value
    return {k: v for k, v in d.items() if v is not None}


_CONFIG_FIELDS = {"mr", "mc", "bw", "is_size", "os_size", "scr", "macro", "name"}


def config_from_dict(d: dict, macro: MacroSpec | None = None) -> AcceleratorConfig:
    unknown = sorted(set(d) - _CONFIG_FIELDS)
    if unknown:
        raise ConfigError(f"config: unknown field(s) {unknown}")
    if "macro" in d:
        if not isinstance(d["macro"], dict):
            raise ConfigError("config: inline 'macro' must be an object")
        macro = macro_from_dict(d["macro"])
    if macro is None:
        raise ConfigError("config: no macro given")
    for req in ("mr", "mc", "bw", "is_size", "os_size"):
        if req not in d:
            raise ConfigError(f"config: missing field {req!r}")
    if "scr" in d:
        macro = replace(macro, scr=d["scr"])
    return AcceleratorConfig(
        macro, d["mr"], d["mc"], d["bw"], parse_size(d["is_size"]), parse_size(d["os_size"])
    )


def config_to_dict(cfg: AcceleratorConfig) -> dict:
    return {
        "macro": macro_to_dict(cfg.macro),
        "mr": cfg.mr,
        "mc": cfg.mc,
        "bw": cfg.bw,
        "is_size": cfg.is_size,
        "os_size": cfg.os_size,
    }


_COEFF_KEYS = {
    "e_is_rd_pj": "e_is_rd",
    "e_is_wr_pj": "e_is_wr",
    "e_os_rd_pj": "e_os_rd",
    "e_os_wr_pj": "e_os_wr",
    "e_ema_pj": "e_ema",
    "e_cim_update_pj": "e_cim_update",
    "e_acc_pj": "e_acc",
    "a_is_mm2_per_kb": "a_is",
    "a_os_mm2_per_kb": "a_os",
    "a_fixed_mm2": "a_fixed",
}


def coeffs_from_dict(d: dict) -> CostCoefficients:
    kw = {}
    for k, v in d.items():
        if k in ("name", "note"):
            continue
        if k not in _COEFF_KEYS:
            raise ConfigError(f"coefficients: unknown field {k!r}")
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"coefficients: {k} must be a number")
        kw[_COEFF_KEYS[k]] = float(v)
    return CostCoefficients(**kw)


def coeffs_to_dict(c: CostCoefficients) -> dict:
    inv = {v: k for k, v in _COEFF_KEYS.items()}
    return {inv[k]: v for k, v in asdict(c).items()}


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


def load_macro(path) -> MacroSpec:
    return macro_from_dict(_load_json(path))


def load_config(path, macro: MacroSpec | None = None) -> AcceleratorConfig:
    return config_from_dict(_load_json(path), macro)


def load_coeffs(path) -> CostCoefficients:
    return coeffs_from_dict(_load_json(path))
