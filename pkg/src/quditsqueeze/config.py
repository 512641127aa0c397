"""Run configuration: flat INI sections with typed, unit-suffixed keys.

Unknown sections or keys are rejected loudly; every physical quantity
carries its unit in the key name.  parse(serialize(cfg)) round-trips
exactly.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields

from .env import EnvConfig
from .ppo import PpoConfig


@dataclass
class DeSection:
    population: int = 32
    mutation: float = 0.5
    crossover: float = 0.9
    generations: int = 300


@dataclass
class MetrologySection:
    chi_rad_per_s: float = 2 * 3.141592653589793 * 8.112
    gamma_rad_per_s_per_t: float = 2 * 3.141592653589793 * 13.24e9
    b0_tesla: float = 50e-6
    t_tot_max_s: float = 0.035
    encode_parity: str = "auto"  # "auto" | "-1" | "+1"


@dataclass
class HyperfineSection:
    nuclear_spin: float = 2.5
    electronic_j: float = 8.0
    a_hz: float = -116.2322e6
    b_hz: float = 1091.577e6
    g_j: float = 1.2416
    g_i: float = -0.192
    b_field_tesla: float = 50e-6


@dataclass
class RunConfig:
    environment: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    de: DeSection = field(default_factory=DeSection)
    metrology: MetrologySection = field(default_factory=MetrologySection)
    hyperfine: HyperfineSection = field(default_factory=HyperfineSection)
    seed: int = 0
    out_dir: str = "runs"


_SECTION_FIELDS = {
    "environment": EnvConfig,
    "ppo": PpoConfig,
    "de": DeSection,
    "metrology": MetrologySection,
    "hyperfine": HyperfineSection,
}


def _coerce(raw: str, annotation, key: str):
    if annotation in ("int", int):
        return int(raw)
    if annotation in ("float", float):
        return float(raw)
    if annotation in ("str", str):
        return raw
    if "tuple" in str(annotation):
        return tuple(int(tok) for tok in raw.split(","))
    if "bool" in str(annotation):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    # fields typed float | str ("auto") or int | str
    if raw == "auto":
        return raw
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case
    parser.read_string(text)

    cfg = RunConfig()
    for section in parser.sections():
        if section == "run":
            for key, raw in parser["run"].items():
                if key == "seed":
                    cfg.seed = int(raw)
                elif key == "out_dir":
                    cfg.out_dir = raw
                else:
                    raise KeyError(f"unknown key [run] {key}")
            continue
        if section not in _SECTION_FIELDS:
            raise KeyError(f"unknown config section [{section}]")
        dc_type = _SECTION_FIELDS[section]
        target = getattr(cfg, section)
        known = {f.name: f for f in fields(dc_type)}
        for key, raw in parser[section].items():
            if key not in known:
                raise KeyError(f"unknown key [{section}] {key}")
            setattr(target, key, _coerce(raw, known[key].type, key))
    # re-run validation hooks
    if hasattr(cfg.ppo, "__post_init__"):
        cfg.ppo.__post_init__()
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser["run"] = {"seed": repr(cfg.seed), "out_dir": cfg.out_dir}
    for section, dc_type in _SECTION_FIELDS.items():
        target = getattr(cfg, section)
        parser[section] = {}
        for f in fields(dc_type):
            val = getattr(target, f.name)
            if isinstance(val, tuple):
                parser[section][f.name] = ",".join(map(repr, val))
            elif isinstance(val, bool):
                parser[section][f.name] = "true" if val else "false"
            elif isinstance(val, (int, float)):
                parser[section][f.name] = repr(val)
            else:
                parser[section][f.name] = str(val)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]
