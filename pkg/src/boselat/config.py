"""Experiment configuration: parsing, validation, serialization.

Configs are line-oriented key=value files with sections (INI style) or
the equivalent JSON object; both parse to the same dataclass and
serialization round-trips.  Example::

    [model]
    kind = lattice
    gamma = 1.0
    j0 = 3.0
    j = 1.0
    lengths = 64

    [grid]
    dt = 1e-3
    t_final = 10.0

    [ensemble]
    n_traj = 30000
    master_seed = 7

    [protocol]
    quadrature = p
    n_bins = 20
    sites = 0,1,2,3,4,5
    kernel = analytic
"""

from __future__ import annotations

import configparser
import hashlib
import json
import io
from dataclasses import dataclass, field, asdict

from .errors import BoselatError
from .gaussian import SingleSiteParams
from .lattice import LatticeParams

MODEL_KINDS = ("single-site", "lattice", "fock")


class ConfigError(BoselatError):
    """Raised with a section/field diagnostic on invalid configuration."""


@dataclass
class ExperimentConfig:
    kind: str = "single-site"
    gamma: float = 1.0
    h0: float = 1.0
    j0: float = 3.0
    j: float = 1.0
    lengths: tuple = (64,)
    dt: float = 1e-3
    t_final: float = 10.0
    n_traj: int = 10000
    master_seed: int = 0
    quadrature: str = "x"
    n_bins: int = 20
    sites: tuple = (0,)
    kernel: str = "analytic"
    n_dim: int = 48
    out: str = "."
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"[model] kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.quadrature not in ("x", "p"):
            raise ConfigError("[protocol] quadrature must be 'x' or 'p'")
        if self.dt <= 0 or self.t_final <= 0:
            raise ConfigError("[grid] dt and t_final must be positive")
        if self.n_traj < 1:
            raise ConfigError("[ensemble] n_traj must be >= 1")
        if self.n_bins < 1:
            raise ConfigError("[protocol] n_bins must be >= 1")
        self.lengths = tuple(int(x) for x in self.lengths)
        self.sites = tuple(int(x) for x in self.sites)

    def single_site_params(self) -> SingleSiteParams:
        return SingleSiteParams(h0=self.h0, gamma=self.gamma)

    def lattice_params(self) -> LatticeParams:
        return LatticeParams(j0=self.j0, j=self.j, lengths=self.lengths, gamma=self.gamma)

    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


_SECTIONS = {
    "model": ("kind", "gamma", "h0", "j0", "j", "lengths", "n_dim"),
    "grid": ("dt", "t_final"),
    "ensemble": ("n_traj", "master_seed"),
    "protocol": ("quadrature", "n_bins", "sites", "kernel"),
    "output": ("out",),
}
_INT_KEYS = {"n_traj", "master_seed", "n_bins", "n_dim"}
_TUPLE_KEYS = {"lengths", "sites"}
_STR_KEYS = {"kind", "quadrature", "kernel", "out"}


def _convert(key: str, raw):
    try:
        if key in _TUPLE_KEYS:
            if isinstance(raw, (list, tuple)):
                return tuple(int(x) for x in raw)
            return tuple(int(x) for x in str(raw).replace(",", " ").split())
        if key in _INT_KEYS:
            return int(raw)
        if key in _STR_KEYS:
            return str(raw)
        return float(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field {key!r}: cannot parse value {raw!r}") from exc


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse the key=value section format."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from exc
    kwargs = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            kwargs[key] = _convert(key, raw)
    return ExperimentConfig(**kwargs)


def parse_config_json(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config JSON: {exc}") from exc
    kwargs = {}
    for section, entries in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section {section!r}")
        for key, raw in entries.items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section {section!r}")
            kwargs[key] = _convert(key, raw)
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return parse_config_json(text)
    return parse_config_text(text)


def serialize_config(config: ExperimentConfig) -> str:
    """Key=value text; parse(serialize(c)) == c."""
    d = asdict(config)
    buf = io.StringIO()
    for section, keys in _SECTIONS.items():
        buf.write(f"[{section}]\n")
        for key in keys:
            val = d[key]
            if isinstance(val, tuple):
                val = ",".join(str(x) for x in val)
            buf.write(f"{key} = {val}\n")
        buf.write("\n")
    return buf.getvalue()


def config_to_json(config: ExperimentConfig) -> str:
    d = asdict(config)
    out = {
        section: {key: (list(d[key]) if isinstance(d[key], tuple) else d[key]) for key in keys}
        for section, keys in _SECTIONS.items()
    }
    return json.dumps(out, indent=2)


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()[:16]
