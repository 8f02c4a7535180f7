"""Scenario configuration: sectioned ``key = value`` files plus overrides.

Precedence, lowest to highest: built-in defaults, the config file,
``--set section.key=value`` overrides in command-line order, then the
dedicated ``--seed`` flag.  Unknown sections or keys are errors, so a typo
never silently falls back to a default.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass

import numpy as np

from . import presets
from .channel import ChannelParams
from .detection import DETECTORS, DetectorNoise, ProtocolState, ReceiverModel
from .finitekey import SecurityParams
from .selection import DEFAULT_GRID
from .studies import FINE_GRID, WIDE_GRID

__all__ = ["ConfigError", "ScenarioConfig", "load_config", "SCHEMA"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _float(s):
    return float(s)


def _opt_float(s):
    return None if s.strip().lower() in ("", "none") else float(s)


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError(f"{s!r} is not an integer")
    return int(v)


def _bool(s):
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{s!r} is not a boolean")


def _floats(s):
    return tuple(float(v) for v in s.replace(",", " ").split())


def _choice(*options):
    def parse(s):
        t = s.strip().lower()
        if t not in options:
            raise ValueError(f"{s!r} is not one of {', '.join(options)}")
        return t
    return parse


def _cutoff(s):
    t = s.strip().lower()
    return "critical" if t == "critical" else float(t)


def _grid(s):
    t = s.strip().lower()
    if t in ("default", "fine", "wide"):
        return t
    parts = t.split(":")
    if len(parts) == 3:
        start, stop, step = (float(p) for p in parts)
        if not step > 0 or stop < start:
            raise ValueError("grid start:stop:step needs step > 0 and stop >= start")
        return t
    if _floats(t):
        return t
    raise ValueError(f"{s!r} is not a grid")


# section -> key -> (parser, default as text)
SCHEMA = {
    "channel": {
        "loss_db": (_float, "15"),
        "sigma": (_float, "0.9"),
        "assumed_loss_db": (_opt_float, "none"),
        "assumed_sigma": (_opt_float, "none"),
    },
    "receiver": {
        "noise": (_choice("table", "uniform"), "table"),
        "y0": (_float, "1e-5"),
        "b": (_float, "0"),
        "eta_bob": (_float, repr(presets.ETA_BOB)),
        "eta_d": (_float, repr(presets.ETA_D)),
        "e_mis": (_float, repr(presets.E_MIS)),
        "bob_x_prob": (_float, "0.5"),
    },
    "protocol": {
        "state": (_choice("table", "explicit", "optimize"), "table"),
        "table_loss_db": (_opt_float, "none"),
        "q_x": (_opt_float, "none"),
        "p_mu1": (_opt_float, "none"),
        "p_mu2": (_opt_float, "none"),
        "mu1": (_opt_float, "none"),
        "mu2": (_opt_float, "none"),
        "mu3": (_float, repr(presets.MU3)),
        "n_starts": (_int, "8"),
    },
    "security": {
        "eps_sec": (_float, repr(presets.EPS_SEC)),
        "eps_cor": (_float, repr(presets.EPS_COR)),
        "f_ec": (_float, repr(presets.F_EC)),
        "n_total": (_float, "3e10"),
        "weighted_v1": (_bool, "true"),
    },
    "selection": {
        "mode": (_choice("arts", "prts", "none"), "arts"),
        "cutoff": (_cutoff, "critical"),
        "grid": (_grid, "default"),
    },
    "simulation": {
        "n_pulses": (_float, "1e8"),
        "bin_size": (_int, "6250"),
        "probe_noise": (_float, "0"),
        "use_estimated": (_bool, "false"),
        "workers": (_int, "1"),
        "write_session": (_bool, "false"),
        "seed": (_int, "0"),
    },
    "study": {
        "losses": (_floats, "11 13 15 17 19"),
        "sigmas": (_floats, "0.9"),
        "n_values": (_floats, "3e10"),
        "y0_values": (_floats, "1e-4 1e-6"),
        "target_rate": (_float, "1e-8"),
        "curve_points": (_int, "1000"),
        "fit_eta_min": (_float, "0.2"),
    },
    "probe": {
        "relative_noise": (_float, "0.01"),
        "n_cal": (_int, "50"),
        "degree": (_int, "3"),
        "method": (_choice("fit", "sum"), "fit"),
        "n_test": (_int, "30"),
    },
    "output": {
        "dir": (str, "out"),
        "plot": (_bool, "true"),
    },
}


# execution-only settings, left out of the echo so that outputs do not
# depend on parallelism or on where they are written
NOT_ECHOED = frozenset({("simulation", "workers"), ("output", "dir"), ("output", "plot")})


def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` to its line number in the file text."""
    where, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            continue
        m = re.match(r"\s*([^#;=\s][^=:]*?)\s*[=:]", line)
        if m and section:
            where[(section, m.group(1).strip().lower())] = i
    return where


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully resolved configuration; ``values[section][key]`` is typed."""

    values: dict
    source: str = "<defaults>"

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def seed(self) -> int:
        return self.values["simulation"]["seed"]

    def channel_true(self) -> ChannelParams:
        c = self.values["channel"]
        return ChannelParams.from_loss_db(c["loss_db"], c["sigma"])

    def channel_assumed(self) -> ChannelParams:
        c = self.values["channel"]
        loss = c["loss_db"] if c["assumed_loss_db"] is None else c["assumed_loss_db"]
        sigma = c["sigma"] if c["assumed_sigma"] is None else c["assumed_sigma"]
        return ChannelParams.from_loss_db(loss, sigma)

    def receiver(self, y0: float | None = None) -> ReceiverModel:
        r = self.values["receiver"]
        if y0 is not None or r["noise"] == "uniform":
            n = DetectorNoise(r["y0"] if y0 is None else y0, r["b"])
            noise = {d: n for d in DETECTORS}
        else:
            noise = dict(presets.DETECTOR_NOISE)
        return ReceiverModel(noise, r["eta_bob"], r["eta_d"], r["e_mis"], r["bob_x_prob"])

    def security(self) -> SecurityParams:
        s = self.values["security"]
        return SecurityParams(s["eps_sec"], s["eps_cor"], s["f_ec"], s["n_total"],
                              s["weighted_v1"])

    def state(self) -> ProtocolState | None:
        """The configured state, or ``None`` when it is to be optimised."""
        p = self.values["protocol"]
        if p["state"] == "optimize":
            return None
        if p["state"] == "table":
            loss = p["table_loss_db"]
            if loss is None:
                loss = self.channel_assumed().loss_db
            key = min(presets.OPTIMIZED_STATES, key=lambda k: (abs(k - loss), k))
            return presets.OPTIMIZED_STATES[key]
        free = [p[k] for k in ("q_x", "p_mu1", "p_mu2", "mu1", "mu2")]
        if any(v is None for v in free):
            raise ConfigError("protocol.state = explicit needs q_x, p_mu1, p_mu2, mu1, mu2")
        st = ProtocolState.from_free(*free, mu3=p["mu3"])
        bad = st.violations()
        if bad:
            raise ConfigError("protocol: " + "; ".join(bad))
        return st

    def grid(self) -> tuple:
        g = self.values["selection"]["grid"]
        if g == "default":
            return DEFAULT_GRID
        if g == "fine":
            return FINE_GRID
        if g == "wide":
            return WIDE_GRID
        if ":" in g:
            start, stop, step = (float(v) for v in g.split(":"))
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return tuple(np.round(start + step * np.arange(n), 12))
        return tuple(sorted(_floats(g)))

    def echo(self) -> list[str]:
        """The resolved configuration as ``[section] key = value`` lines.

        Settings in :data:`NOT_ECHOED` are omitted.
        """
        lines = []
        for section, keys in SCHEMA.items():
            for key in keys:
                if (section, key) in NOT_ECHOED:
                    continue
                lines.append(f"[{section}] {key} = {_format(self.values[section][key])}")
        return lines


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return " ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(section, key, text, where):
    parser = SCHEMA[section][key][0]
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError(f"{where}: {section}.{key}: {exc}") from None


def load_config(path=None, overrides=(), seed: int | None = None) -> ScenarioConfig:
    """Resolve defaults, the file at ``path`` and ``section.key=value`` overrides."""
    raw = {s: {k: (d, "default") for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    source = "<defaults>"
    if path is not None:
        source = str(path)
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        lines = _key_lines(text)
        cp = configparser.ConfigParser(interpolation=None,
                                       inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if cp.defaults():
            raise ConfigError(f"{path}: keys outside any section")
        for section in cp.sections():
            s = section.strip().lower()
            if s not in SCHEMA:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, value in cp.items(section):
                at = f"{path}:{lines.get((s, key), '?')}"
                if key not in SCHEMA[s]:
                    raise ConfigError(f"{at}: unknown key {s}.{key}")
                raw[s][key] = (value, at)
    for item in overrides:
        name, sep, value = item.partition("=")
        section, dot, key = name.strip().lower().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not section.key=value")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"override {item!r}: unknown key {section}.{key}")
        raw[section][key] = (value.strip(), f"--set {item}")
    if seed is not None:
        raw["simulation"]["seed"] = (str(seed), "--seed")
    values = {s: {k: _parse_value(s, k, text, where) for k, (text, where) in keys.items()}
              for s, keys in raw.items()}
    cfg = ScenarioConfig(values, source)
    _validate(cfg)
    return cfg


def _validate(cfg: ScenarioConfig) -> None:
    try:
        cfg.channel_true()
        cfg.channel_assumed()
        cfg.receiver()
        cfg.security()
        cfg.state()
        grid = cfg.grid()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not grid or any(b < a for a, b in zip(grid, grid[1:])):
        raise ConfigError("selection.grid must be nonempty and ascending")
    sim = cfg.values["simulation"]
    if not sim["n_pulses"] >= sim["bin_size"] >= 1:
        raise ConfigError("simulation needs n_pulses >= bin_size >= 1")
    if sim["workers"] < 1:
        raise ConfigError("simulation.workers must be at least 1")
