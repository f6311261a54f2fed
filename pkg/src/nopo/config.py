"""TOML/JSON run configuration.

A document has up to five sections::

    [model]    gamma_p, gamma_s = 1, big_g, gamma_i, kappa
    [network]  nodes = 1 | 2, coupling_j
    [run]      engine, p, dt, ramp_time, average_window, n_traj,
               cutoff_signal, cutoff_pump, seed, snapshot_stride,
               checkpoint_times, sample_interval, gauge
    [sweep]    axis = "p" | "j", values
    [output]   path, format

Unknown sections or keys are errors.  A metadata document written by the
command-line tool (a JSON object with a ``config`` member) is accepted as a
configuration and reproduces the run that wrote it.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import NetworkConfig, NopoParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["Config", "load_config", "parse_config", "SCHEMA"]

_REQUIRED = object()

SCHEMA = {
    "model": {"gamma_p": _REQUIRED, "gamma_s": 1.0, "big_g": None, "gamma_i": None,
              "kappa": None},
    "network": {"nodes": 1, "coupling_j": 0.0},
    "run": {"engine": "tpsde", "p": 1.0, "dt": None, "ramp_time": None, "average_window": None,
            "n_traj": None, "cutoff_signal": 30, "cutoff_pump": 4, "seed": 0,
            "snapshot_stride": None, "checkpoint_times": [], "sample_interval": 0.01,
            "gauge": "standard"},
    "sweep": {"axis": "p", "values": []},
    "output": {"path": "nopo_out.csv", "format": "csv"},
}

_INT_KEYS = {("network", "nodes"), ("run", "n_traj"), ("run", "cutoff_signal"),
             ("run", "cutoff_pump"), ("run", "seed"), ("run", "snapshot_stride")}
_STR_KEYS = {("run", "engine"), ("run", "gauge"), ("sweep", "axis"), ("output", "path"),
             ("output", "format")}
_LIST_KEYS = {("run", "checkpoint_times"), ("sweep", "values")}


def _coerce(section, key, value):
    where = f"{section}.{key}"
    if value is None:
        return None
    if (section, key) in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if (section, key) in _LIST_KEYS:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"{where} must hold numbers, got {value!r}") from None
    if isinstance(value, bool):
        raise ConfigError(f"{where} must be numeric, got {value!r}")
    if (section, key) in _INT_KEYS:
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{where} must be a finite number, got {value!r}")
    return float(value)


@dataclass
class Config:
    """Resolved configuration: every key of :data:`SCHEMA`, defaults filled in."""

    model: dict
    network: dict
    run: dict
    sweep: dict
    output: dict
    source: str = field(default="<dict>", compare=False)

    def params(self, p: float | None = None) -> NopoParams:
        m = self.model
        g, gi, kap = m["big_g"], m["gamma_i"], m["kappa"]
        if g is None:
            if gi is None or kap is None:
                raise ConfigError("model.big_g is required unless both gamma_i and kappa are given")
            g = kap**2 / gi
        if gi is not None and kap is None:
            kap = math.sqrt(g * gi)
        base = NopoParams(gamma_p=m["gamma_p"], big_g=g, gamma_s=m["gamma_s"], gamma_i=gi,
                          kappa=kap)
        return base.with_pump(self.run["p"] if p is None else p)

    def network_config(self) -> NetworkConfig:
        n = self.network["nodes"]
        if n not in (1, 2):
            raise ConfigError(f"network.nodes must be 1 or 2, got {n}")
        par = self.params()
        if n == 1:
            if self.network["coupling_j"] != 0:
                raise ConfigError("network.coupling_j must be 0 for a single node")
            return NetworkConfig.solitary(par)
        # coupling is given in units of gamma_s
        return NetworkConfig.pair(par, self.network["coupling_j"] * par.gamma_s)

    def plan(self):
        from .runner import RunPlan
        r = self.run
        return RunPlan(engine=r["engine"], network=self.network_config(), target_p=r["p"],
                       dt=r["dt"], ramp_time=r["ramp_time"], average_window=r["average_window"],
                       n_traj=r["n_traj"], cutoff_signal=r["cutoff_signal"],
                       cutoff_pump=r["cutoff_pump"], master_seed=r["seed"],
                       snapshot_stride=r["snapshot_stride"],
                       checkpoint_times=tuple(r["checkpoint_times"]),
                       sample_interval=r["sample_interval"], gauge=r["gauge"])

    def to_dict(self) -> dict:
        """Plain document without unset (``None``) entries, suitable for JSON or TOML."""
        out = {}
        for sec in SCHEMA:
            out[sec] = {k: v for k, v in getattr(self, sec).items() if v is not None}
        return out

    def override(self, **kw) -> "Config":
        """Copy with ``section.key`` style overrides, e.g. ``override(run__p=2.0)``."""
        doc = self.to_dict()
        for name, value in kw.items():
            if value is None:
                continue
            sec, key = name.split("__")
            doc.setdefault(sec, {})[key] = value
        return parse_config(doc, source=self.source)


def parse_config(doc: dict, source: str = "<dict>") -> Config:
    """Validate a raw document against :data:`SCHEMA`.

    Raises
    ------
    ConfigError
        On unknown sections or keys, wrong types, missing required values,
        or parameters rejected by the model.
    """
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: configuration must be a table")
    if "config" in doc and isinstance(doc["config"], dict):
        doc = doc["config"]
    unknown = set(doc) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {sorted(unknown)}")
    resolved = {}
    for sec, keys in SCHEMA.items():
        raw = doc.get(sec, {})
        if not isinstance(raw, dict):
            raise ConfigError(f"{source}: [{sec}] must be a table")
        bad = set(raw) - set(keys)
        if bad:
            raise ConfigError(f"{source}: unknown key(s) in [{sec}]: "
                              + ", ".join(repr(k) for k in sorted(bad)))
        vals = {}
        for key, dflt in keys.items():
            if key in raw:
                vals[key] = _coerce(sec, key, raw[key])
            elif dflt is _REQUIRED:
                raise ConfigError(f"{source}: missing required key {sec}.{key}")
            else:
                vals[key] = list(dflt) if isinstance(dflt, list) else dflt
        resolved[sec] = vals
    cfg = Config(**resolved, source=source)
    if cfg.output["format"] != "csv":
        raise ConfigError(f"{source}: output.format must be 'csv'")
    if cfg.sweep["axis"] not in ("p", "j"):
        raise ConfigError(f"{source}: sweep.axis must be 'p' or 'j'")
    # validates physics and engine/network compatibility at parse time
    try:
        cfg.plan()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path) -> Config:
    """Read a ``.toml`` or ``.json`` configuration (or metadata) file."""
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(text)
        else:
            doc = tomllib.loads(text.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None
    return parse_config(doc, source=str(path))

