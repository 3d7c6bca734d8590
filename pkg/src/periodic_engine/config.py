"""Run configuration: profile and parameter specs, JSON run files, validation."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

from . import __version__
from .errors import ConfigError
from .profiles import (Constant, Piece, SampledLinear, Sinusoid, SqrtSinusoid, TemperatureProfile, carnot, constant,
                       sampled, sinusoid, sqrt_sinusoid)
from .synthesis import EngineParams

PRESETS = {
    "constant": ("T", "period"),
    "carnot": ("T_h", "T_c", "period", "hot_fraction"),
    "sinusoid": ("mean", "amplitude", "period", "phase"),
    "sqrt_sinusoid": ("root_mean", "root_amplitude", "period", "phase"),
}

SWEEP_KEYS = {"axis", "values", "protocols", "family", "jump_rule"}
SWEEP_AXES = ("friction", "temperature_ratio")
SWEEP_PROTOCOLS = ("low_friction_optimal", "linear_response")
MC_KEYS = {"n_particles", "dt", "n_cycles_discard", "n_cycles_measure", "n_record", "scheme", "jump_rule",
           "block_size", "stratonovich", "start"}
PARAM_KEYS = {"m", "gamma", "k_B", "t_f", "q0"}


def _load_json(text_or_path: str, what: str):
    text = text_or_path.strip()
    if not text.startswith(("{", "[")):
        if not os.path.exists(text_or_path):
            raise ConfigError(f"{what}: no such file {text_or_path!r}")
        with open(text_or_path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what}: invalid JSON ({exc})") from None


def _reject_unknown(d: dict, allowed: set, what: str):
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{what}: unknown key(s) {sorted(extra)}; allowed: {sorted(allowed)}")


def _number(value, what: str) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a number, got {value!r}") from None
    if not math.isfinite(x):
        raise ConfigError(f"{what} must be finite")
    return x


def _preset(kind: str, values: dict) -> TemperatureProfile:
    names = PRESETS[kind]
    _reject_unknown(values, set(names), f"{kind} profile")
    kw = {k: _number(v, f"{kind}.{k}") for k, v in values.items()}
    required = names[:1] if kind == "constant" else names[:2]
    missing = [k for k in required if k not in kw]
    if missing:
        raise ConfigError(f"{kind} profile needs {missing}")
    return {"constant": constant, "carnot": carnot, "sinusoid": sinusoid, "sqrt_sinusoid": sqrt_sinusoid}[kind](**kw)


def parse_profile_string(spec: str) -> TemperatureProfile:
    """``carnot:4,1``, ``sinusoid:2.5,1.5[,period[,phase]]``, ``sqrt_sinusoid:1.5,0.5``, ``constant:2``, or JSON text / file."""
    text = spec.strip()
    if ":" in text and not text.startswith("{"):
        kind, _, args = text.partition(":")
        kind = kind.strip().lower()
        if kind not in PRESETS:
            raise ConfigError(f"unknown profile preset {kind!r}; choose from {sorted(PRESETS)}")
        parts = [a for a in args.split(",") if a.strip()]
        names = PRESETS[kind]
        if len(parts) > len(names):
            raise ConfigError(f"{kind} takes at most {len(names)} values ({', '.join(names)})")
        return _preset(kind, dict(zip(names, parts)))
    return profile_from_dict(_load_json(text, "profile"))


def profile_from_dict(d) -> TemperatureProfile:
    """Build a profile from ``{"kind": preset, ...}`` or ``{"period": .., "pieces": [..]}``."""
    if not isinstance(d, dict):
        raise ConfigError("profile JSON must be an object")
    d = {k: v for k, v in d.items() if k != "name"}
    if "kind" in d:
        kind = str(d.pop("kind")).lower()
        if kind == "sampled":
            _reject_unknown(d, {"times", "temps", "period"}, "sampled profile")
            if "times" not in d or "temps" not in d:
                raise ConfigError("sampled profile needs 'times' and 'temps'")
            return sampled(d["times"], d["temps"], d.get("period"))
        if kind not in PRESETS:
            raise ConfigError(f"unknown profile kind {kind!r}")
        return _preset(kind, d)
    _reject_unknown(d, {"period", "pieces"}, "profile")
    if "period" not in d or "pieces" not in d:
        raise ConfigError("piecewise profile needs 'period' and 'pieces'")
    period = _number(d["period"], "period")
    pieces = []
    for i, p in enumerate(d["pieces"]):
        if not isinstance(p, dict) or "kind" not in p:
            raise ConfigError(f"piece {i} must be an object with a 'kind'")
        kind = p["kind"]
        common = {"kind", "t_start", "t_end"}
        if kind == "constant":
            _reject_unknown(p, common | {"value"}, f"piece {i}")
            shape = Constant(_number(p["value"], f"piece {i} value"))
        elif kind == "sinusoid":
            _reject_unknown(p, common | {"mean", "amplitude", "omega", "phase"}, f"piece {i}")
            shape = Sinusoid(_number(p["mean"], "mean"), _number(p["amplitude"], "amplitude"),
                             _number(p.get("omega", 2.0 * math.pi / period), "omega"), _number(p.get("phase", 0.0), "phase"))
        elif kind == "sqrt_sinusoid":
            _reject_unknown(p, common | {"root_mean", "root_amplitude", "omega", "phase"}, f"piece {i}")
            shape = SqrtSinusoid(_number(p["root_mean"], "root_mean"), _number(p["root_amplitude"], "root_amplitude"),
                                 _number(p.get("omega", 2.0 * math.pi / period), "omega"),
                                 _number(p.get("phase", 0.0), "phase"))
        elif kind == "sampled":
            _reject_unknown(p, common | {"knots"}, f"piece {i}")
            shape = SampledLinear(tuple((float(t), float(T)) for t, T in p["knots"]))
        else:
            raise ConfigError(f"piece {i}: unknown kind {kind!r}")
        try:
            t0, t1 = _number(p["t_start"], "t_start"), _number(p["t_end"], "t_end")
        except KeyError as exc:
            raise ConfigError(f"piece {i} needs {exc.args[0]!r}") from None
        pieces.append(Piece(t0, t1, shape))
    return TemperatureProfile(period, tuple(pieces))


def profile_label(spec, index: int) -> str:
    if isinstance(spec, str) and spec.strip().startswith("{"):
        try:
            spec = json.loads(spec)
        except json.JSONDecodeError:
            pass
    if isinstance(spec, dict) and "name" in spec:
        return str(spec["name"])
    if isinstance(spec, str) and ":" in spec and not spec.strip().startswith("{"):
        return spec.strip().replace(":", "_").replace(",", "_")
    return f"profile{index}"


def build_params(d: dict, profile: TemperatureProfile) -> EngineParams:
    _reject_unknown(d, PARAM_KEYS, "params")
    kw = {k: _number(v, f"params.{k}") for k, v in d.items()}
    kw.setdefault("t_f", profile.period)
    try:
        return EngineParams(**kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class RunConfig:
    """Fully resolved run configuration. Only result-relevant fields enter the hash."""

    profiles: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    power: float | None = None
    grid: int | None = None
    seed: int = 0
    sweep: dict = field(default_factory=dict)
    montecarlo: dict = field(default_factory=dict)
    out: str = "."
    format: str = "csv"
    jobs: int = 1
    figures: bool = False

    NON_RESULT = ("out", "jobs", "figures")

    def digest(self, command: str) -> str:
        payload = {k: v for k, v in asdict(self).items() if k not in self.NON_RESULT}
        payload["command"] = command
        payload["version"] = __version__
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def load_run_file(path: str) -> dict:
    d = _load_json(path, "config")
    if not isinstance(d, dict):
        raise ConfigError("config file must hold a JSON object")
    allowed = {f.name for f in fields(RunConfig)} | {"profile"}
    _reject_unknown(d, allowed, "config")
    if "profile" in d:
        if "profiles" in d:
            raise ConfigError("config: give either 'profile' or 'profiles'")
        d["profiles"] = [d.pop("profile")]
    return d


def resolve(file_values: dict, overrides: dict) -> RunConfig:
    """Merge run-file values with command-line overrides (``None`` means not given) and validate."""
    merged = dict(file_values)
    for k, v in overrides.items():
        if v is not None:
            merged[k] = v
    cfg = RunConfig(**merged)
    if isinstance(cfg.params, str):
        cfg.params = _load_json(cfg.params, "params")
    if not isinstance(cfg.params, dict):
        raise ConfigError("params must be a JSON object")
    _reject_unknown(cfg.params, PARAM_KEYS, "params")
    if not isinstance(cfg.profiles, list):
        cfg.profiles = [cfg.profiles]
    if cfg.format not in ("csv", "json"):
        raise ConfigError("format must be 'csv' or 'json'")
    if cfg.grid is not None and int(cfg.grid) < 2:
        raise ConfigError("grid must be at least 2")
    if int(cfg.jobs) < 1:
        raise ConfigError("jobs must be at least 1")
    if not 0 <= int(cfg.seed) < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if cfg.power is not None:
        cfg.power = _number(cfg.power, "power")
    _reject_unknown(cfg.sweep, SWEEP_KEYS, "sweep")
    _reject_unknown(cfg.montecarlo, MC_KEYS, "montecarlo")
    return cfg


def build_profiles(cfg: RunConfig, default: str):
    specs = cfg.profiles or [default]
    out = []
    for i, spec in enumerate(specs):
        profile = parse_profile_string(spec) if isinstance(spec, str) else profile_from_dict(spec)
        out.append((profile_label(spec, i), profile))
    labels = [lab for lab, _ in out]
    if len(set(labels)) != len(labels):
        out = [(f"{lab}_{i}", p) for i, (lab, p) in enumerate(out)]
    return out
