"""Scenario configuration: a single human-editable TOML file.

The writer is hand-rolled and canonical (fixed key order, shortest
round-trip float repr), so serialize(parse(serialize(cfg))) is byte
identical and config hashes are stable across runs. Parsing validates the
schema eagerly and reports the dotted path of the offending key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

try:
    import tomllib
except ModuleNotFoundError:  # 3.10: stdlib parser not present yet
    import tomli as tomllib

from .solver import EvolutionConfig


class ConfigError(ValueError):
    """Malformed scenario file; the message carries the key path."""


@dataclass(frozen=True)
class SuiteEntry:
    """One requested verification pass plus its parameter overrides."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.name:
            raise ConfigError("suite entry needs a name")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    n: int = 128
    L: float = 16.0 * math.pi
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    suite: tuple[SuiteEntry, ...] = ()
    output_dir: str = "out"


_EVOLUTION_TYPES = {
    "alpha": float,
    "kappa": float,
    "t_end": float,
    "dt": float,
    "integrator": str,
    "cfl": float,
    "snapshot_every": int,
    "grad_ceiling": float,
    "max_dt_halvings": int,
}


def _want(value, kind, path):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise AssertionError(kind)


def _reject_unknown(table, allowed, path):
    for key in table:
        if key not in allowed:
            raise ConfigError(f"{path}{key}: unknown key")


def parse_config(text: str) -> ScenarioConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"not valid TOML: {exc}") from exc
    _reject_unknown(doc, {"seed", "output_dir", "grid", "evolution", "suite"},
                    "")
    cfg = ScenarioConfig()
    if "seed" in doc:
        cfg = replace(cfg, seed=_want(doc["seed"], int, "seed"))
    if "output_dir" in doc:
        cfg = replace(cfg, output_dir=_want(doc["output_dir"], str,
                                            "output_dir"))
    if "grid" in doc:
        g = doc["grid"]
        if not isinstance(g, dict):
            raise ConfigError("grid: expected a table")
        _reject_unknown(g, {"n", "L"}, "grid.")
        if "n" in g:
            cfg = replace(cfg, n=_want(g["n"], int, "grid.n"))
        if "L" in g:
            cfg = replace(cfg, L=_want(g["L"], float, "grid.L"))
    if "evolution" in doc:
        e = doc["evolution"]
        if not isinstance(e, dict):
            raise ConfigError("evolution: expected a table")
        _reject_unknown(e, set(_EVOLUTION_TYPES), "evolution.")
        kwargs = {k: _want(v, _EVOLUTION_TYPES[k], f"evolution.{k}")
                  for k, v in e.items()}
        try:
            cfg = replace(cfg, evolution=EvolutionConfig(**kwargs))
        except ValueError as exc:
            raise ConfigError(f"evolution: {exc}") from exc
    if "suite" in doc:
        entries = doc["suite"]
        if not isinstance(entries, list):
            raise ConfigError("suite: expected an array of tables")
        parsed = []
        for i, entry in enumerate(entries):
            if not isinstance(entry, dict):
                raise ConfigError(f"suite[{i}]: expected a table")
            if "name" not in entry:
                raise ConfigError(f"suite[{i}].name: required")
            name = _want(entry["name"], str, f"suite[{i}].name")
            params = {}
            for k, v in entry.items():
                if k == "name":
                    continue
                if isinstance(v, bool) or not isinstance(
                        v, (int, float, str)):
                    raise ConfigError(
                        f"suite[{i}].{k}: expected a number or string, "
                        f"got {v!r}")
                params[k] = v
            parsed.append(SuiteEntry(name=name, params=params))
        cfg = replace(cfg, suite=tuple(parsed))
    if cfg.n < 8 or cfg.n & (cfg.n - 1):
        raise ConfigError(f"grid.n: must be a power of two >= 8, got {cfg.n}")
    if cfg.L <= 0.0:
        raise ConfigError(f"grid.L: must be positive, got {cfg.L}")
    return cfg


def load_config(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(value) -> str:
    if isinstance(value, bool):
        raise ConfigError(f"cannot serialize boolean {value!r}")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ConfigError(f"cannot serialize non-finite float {value!r}")
        # keep a decimal point so the value reads back as a float
        text = repr(value)
        return text if ("." in text or "e" in text) else text + ".0"
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    raise ConfigError(f"cannot serialize {type(value).__name__}")


def serialize_config(cfg: ScenarioConfig) -> str:
    lines = [
        f"seed = {_fmt(cfg.seed)}",
        f"output_dir = {_fmt(cfg.output_dir)}",
        "",
        "[grid]",
        f"n = {_fmt(cfg.n)}",
        f"L = {_fmt(cfg.L)}",
        "",
        "[evolution]",
    ]
    e = cfg.evolution
    for key in sorted(_EVOLUTION_TYPES):
        value = getattr(e, key)
        if value is None:
            continue
        lines.append(f"{key} = {_fmt(value)}")
    for entry in cfg.suite:
        lines.append("")
        lines.append("[[suite]]")
        lines.append(f"name = {_fmt(entry.name)}")
        for key in sorted(entry.params):
            lines.append(f"{key} = {_fmt(entry.params[key])}")
    return "\n".join(lines) + "\n"


def save_config(cfg: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_config(cfg))
