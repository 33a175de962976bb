"""Scenario catalog and loader (JSON or YAML files, or builtin names)."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .energy import gamma_exponent, thresholds
from .symbols import SystemSpec

__all__ = ["BUILTINS", "STAGES", "DataSpec", "GridSpec", "Scenario", "builtin",
           "builtin_names", "load_scenario"]

STAGES = ("reduce", "eigen", "energy-scan", "solve", "gevrey-fit")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    N_t: int = 4097
    K: int = 12
    n_dirs: int = 4
    directions: str = "both"      # n = 1: "both" (+1, -1) or "positive"
    scan_radius_log2: int = 8
    eps_log2: tuple = (3, 4, 5, 6, 7, 8, 9)
    consistency_max_log2: int = 7


@dataclass(frozen=True)
class DataSpec:
    s0: float = 1.5
    delta0: float = 1.0
    seed: int | None = None
    mask: tuple | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    system: SystemSpec
    grid: GridSpec = field(default_factory=GridSpec)
    s_values: tuple = ()
    data: DataSpec = field(default_factory=DataSpec)
    stages: tuple = STAGES
    rtol: float = 1e-9

    def __post_init__(self):
        g, spec = self.grid, self.system
        h = spec.T / (g.N_t - 1)
        if 2.0 ** -max(g.eps_log2) < 4 * h:
            raise ScenarioError(
                f"grid.eps_log2: eps=2^-{max(g.eps_log2)} needs N_t >= "
                f"{int(4 * spec.T * 2 ** max(g.eps_log2)) + 1} (got {g.N_t})")
        gamma = gamma_exponent(spec.alpha, spec.m)
        if (1.0 + 4.0**g.K) ** (-gamma / 2) < 4 * h:
            raise ScenarioError(f"grid.N_t: too coarse for the eps of radius 2^{g.K}")
        if 2.0**g.scan_radius_log2 <= 1.0:
            raise ScenarioError("grid.scan_radius_log2: must be positive")

    def to_dict(self):
        return {
            "name": self.name,
            "system": self.system.to_dict(),
            "grid": {k: list(v) if isinstance(v, tuple) else v
                     for k, v in asdict(self.grid).items()},
            "s_values": list(self.s_values),
            "data": {k: list(v) if isinstance(v, tuple) else v
                     for k, v in asdict(self.data).items()},
            "stages": list(self.stages),
            "rtol": self.rtol,
        }

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# ---------------------------------------------------------------------------
# builtins


def _constant_strict():
    spec = SystemSpec.from_strings(2, 1, 1.0, 1.0, [["0", "1"], ["1", "0"]])
    return Scenario("constant_strict", spec, GridSpec(N_t=2049, K=10), s_values=(1.8,),
                    data=DataSpec(s0=1.5, delta0=1.0))


def _wave_t2():
    spec = SystemSpec.from_strings(2, 1, 1.0, 1.0, [["0", "1"], ["t^2", "0"]])
    return Scenario("wave_t2", spec, GridSpec(N_t=4097, K=12), s_values=(1.8,),
                    data=DataSpec(s0=1.5, delta0=1.0))


def _wave_t2_b():
    spec = SystemSpec.from_strings(2, 1, 1.0, 1.0, [["0", "1"], ["t^2", "0"]],
                                   [["0", "0"], ["1", "0"]])
    return Scenario("wave_t2_b", spec, GridSpec(N_t=4097, K=10), s_values=(1.8,),
                    data=DataSpec(s0=1.5, delta0=1.0))


def _triple_degenerate():
    spec = SystemSpec.from_strings(
        3, 1, 1.0, 1.0, [["0", "1", "0"], ["0", "0", "1"], ["0", "3*t^2", "0"]]
    )
    return Scenario("triple_degenerate", spec, GridSpec(N_t=4097, K=10), s_values=(1.4,),
                    data=DataSpec(s0=1.3, delta0=1.0))


def _holder_abs(alpha):
    if not 0 < alpha <= 1:
        raise ScenarioError(f"holder_abs: alpha must lie in (0, 1], got {alpha}")
    p = 2 * alpha
    entry = "abs(t)" if p == 1 else f"abs(t)^{p!r}"
    spec = SystemSpec.from_strings(2, 1, 1.0, alpha, [["0", "1"], [entry, "0"]])
    s_star, _ = thresholds(alpha, 2)
    s = round(1.0 + 0.9 * (s_star - 1.0), 12)
    # derivatives up to order m-1 must exist at t = 0 for the reduced flow
    stages = STAGES if spec.kink_order() > spec.m - 1 else ("reduce", "eigen", "energy-scan")
    name = f"holder_abs({alpha!r})"
    return Scenario(name, spec, GridSpec(N_t=4097, K=10), s_values=(s,),
                    data=DataSpec(s0=round(1.0 + 0.75 * (s_star - 1.0), 12)),
                    stages=stages)


BUILTINS = {
    "constant_strict": _constant_strict,
    "wave_t2": _wave_t2,
    "wave_t2_b": _wave_t2_b,
    "triple_degenerate": _triple_degenerate,
}

_HOLDER = re.compile(r"^holder_abs\(\s*([0-9.eE+-]+)\s*\)$")


def builtin_names():
    return list(BUILTINS) + ["holder_abs(<alpha>)"]


def builtin(name):
    if name in BUILTINS:
        return BUILTINS[name]()
    m = _HOLDER.match(name)
    if m:
        try:
            a = float(m.group(1))
        except ValueError:
            raise ScenarioError(f"holder_abs: bad alpha {m.group(1)!r}") from None
        return _holder_abs(a)
    raise ScenarioError(f"unknown scenario {name!r}; builtins: {', '.join(builtin_names())}")


# ---------------------------------------------------------------------------
# files


def _check_keys(d, allowed, path):
    extra = set(d) - set(allowed)
    if extra:
        raise ScenarioError(f"{path}: unknown field(s) {sorted(extra)}")


def _typed(value, kind, path):
    try:
        if kind is int:
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError
            return int(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}: expected {kind.__name__}, got {value!r}") from None


def scenario_from_dict(d):
    if not isinstance(d, dict):
        raise ScenarioError("scenario: expected a mapping")
    _check_keys(d, ("name", "system", "grid", "s_values", "data", "stages", "rtol"), "scenario")
    if "name" not in d:
        raise ScenarioError("name: missing field")
    if "system" not in d:
        raise ScenarioError("system: missing field")
    try:
        system = SystemSpec.from_dict(d["system"])
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    g = d.get("grid") or {}
    _check_keys(g, GridSpec.__dataclass_fields__, "grid")
    gkw = {}
    for k, v in g.items():
        if k in ("eps_log2",):
            gkw[k] = tuple(_typed(x, int, f"grid.{k}[{i}]") for i, x in enumerate(v))
        elif k == "directions":
            if v not in ("both", "positive"):
                raise ScenarioError(f"grid.directions: expected 'both' or 'positive', got {v!r}")
            gkw[k] = v
        else:
            gkw[k] = _typed(v, int, f"grid.{k}")
    grid = GridSpec(**gkw)
    if grid.N_t < 65:
        raise ScenarioError("grid.N_t: need at least 65 samples")
    if grid.K < 5:
        raise ScenarioError("grid.K: need K >= 5 (six radii for decay fits)")
    if len(grid.eps_log2) < 5:
        raise ScenarioError("grid.eps_log2: need at least 5 values")
    s_values = tuple(_typed(x, float, f"s_values[{i}]")
                     for i, x in enumerate(d.get("s_values") or ()))
    for i, s in enumerate(s_values):
        if not s >= 1:
            raise ScenarioError(f"s_values[{i}]: Gevrey order must be >= 1")
    dd = d.get("data") or {}
    _check_keys(dd, DataSpec.__dataclass_fields__, "data")
    data = DataSpec(
        s0=_typed(dd.get("s0", 1.5), float, "data.s0"),
        delta0=_typed(dd.get("delta0", 1.0), float, "data.delta0"),
        seed=None if dd.get("seed") is None else _typed(dd["seed"], int, "data.seed"),
        mask=None if dd.get("mask") is None else tuple(
            _typed(x, float, f"data.mask[{i}]") for i, x in enumerate(dd["mask"])),
    )
    if not data.s0 > 1:
        raise ScenarioError("data.s0: must be > 1")
    if not data.delta0 > 0:
        raise ScenarioError("data.delta0: must be positive")
    if data.mask is not None and len(data.mask) != system.m:
        raise ScenarioError(f"data.mask: expected {system.m} entries")
    stages = tuple(d.get("stages") or STAGES)
    for i, st in enumerate(stages):
        if st not in STAGES:
            raise ScenarioError(f"stages[{i}]: unknown stage {st!r}")
    rtol = _typed(d.get("rtol", 1e-9), float, "rtol")
    if not 0 < rtol < 1e-3:
        raise ScenarioError("rtol: must lie in (0, 1e-3)")
    return Scenario(name=str(d["name"]), system=system, grid=grid, s_values=s_values,
                    data=data, stages=stages, rtol=rtol)


def load_scenario(path_or_name):
    """Resolve a builtin name or read a scenario file (``.json``, ``.yaml``, ``.yml``)."""
    p = Path(str(path_or_name))
    if not p.suffix or not p.exists():
        if p.suffix in (".json", ".yaml", ".yml"):
            raise ScenarioError(f"{p}: no such file")
        return builtin(str(path_or_name))
    text = p.read_text()
    try:
        if p.suffix in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except Exception as exc:  # parser-specific exception types
        raise ScenarioError(f"{p}: parse error: {exc}") from None
    return scenario_from_dict(data)
