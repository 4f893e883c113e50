"""INI scenario files.

A config file has the sections below; every key is optional unless noted
and falls back to the default shown. Per-user values accept a single value
(applied to every user) or a comma-separated list.

.. code-block:: ini

    [deployment]
    geometry = one_user_5bs     ; built-in name, or "inline"
    bs_positions = 0 0; 60 0    ; inline only, "x y" pairs separated by ";"
    user_positions = 10 5       ; inline only
    bs_antennas = 2
    user_antennas = 2

    [qos]
    load_kbps = 800             ; required
    delay_ms = 50
    xi = 1e-4

    [power]
    p_ref = 4
    kappa = 2.4

    [channel]
    bandwidth_hz = 1e5
    frame_s = 0.01
    d_ref = 1
    eta = 3
    calib_distance = 50
    calib_gain_db = 0

    [montecarlo]
    frames = 10000              ; split evenly into training and held-out frames
    seed = 1

    [tracker]
    mode = batch
    adaptive = true
    step = 0.01
    filter = 0.99
    budget = 2000
    warmup = 1000
    tol = 5e-4
    ceiling = 1e9
    init = 1
    patience = 100              ; sign steps without progress before the ellipsoid search
    polish = true

    [interference]
    grid_m = 0.5
    sigma_th2 = 1

    [run]
    scheme = ibs-ts
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .channel import SCENARIOS, Deployment, PathLossModel, scenario_deployment
from .qos import QoSSpec, load_to_nats
from .scenario import PowerPolicy, Scenario
from .tracker import TrackerConfig

__all__ = ["ScenarioConfig", "load_config", "parse_config", "builtin_configs", "sweep_scenarios", "AXES"]

AXES = ("load", "kappa", "delay-bound", "xi")


def _floats(text: str) -> list:
    return [float(x) for x in text.replace(",", " ").split()]


def _points(text: str) -> np.ndarray:
    pts = [_floats(p) for p in text.split(";") if p.strip()]
    if not pts or any(len(p) != 2 for p in pts):
        raise ValueError(f"expected 'x y; x y; ...', got {text!r}")
    return np.array(pts)


def _per_user(values: list, n: int, what: str) -> tuple:
    if len(values) == 1:
        return tuple(values * n)
    if len(values) != n:
        raise ValueError(f"{what}: expected 1 or {n} values, got {len(values)}")
    return tuple(values)


@dataclass(frozen=True)
class ScenarioConfig:
    deployment: Deployment
    load_kbps: tuple
    delay_ms: tuple
    xi: tuple
    p_ref: float = 4.0
    kappa: float = 2.4
    bandwidth_hz: float = 1e5
    frame_s: float = 0.01
    pathloss: PathLossModel = field(default_factory=PathLossModel)
    frames: int = 10000
    seed: int = 1
    tracker: TrackerConfig = field(default_factory=TrackerConfig.for_schemes)
    scheme: str = "ibs-ts"
    grid_m: float = 0.5
    sigma_th2: float = 1.0
    name: str = ""

    def __post_init__(self):
        n = self.deployment.n_users
        for what in ("load_kbps", "delay_ms", "xi"):
            vals = tuple(float(v) for v in getattr(self, what))
            object.__setattr__(self, what, _per_user(list(vals), n, what))
        if any(v <= 0 for v in self.load_kbps + self.delay_ms):
            raise ValueError("loads and delay bounds must be positive")
        if self.bandwidth_hz <= 0 or self.frame_s <= 0:
            raise ValueError("bandwidth and frame length must be positive")
        if self.frames < 2:
            raise ValueError("need at least two frames")
        if self.grid_m <= 0 or self.sigma_th2 <= 0:
            raise ValueError("grid resolution and threshold must be positive")
        from .harness import SCHEMES

        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; known: {sorted(SCHEMES)}")

    @property
    def n_users(self) -> int:
        return self.deployment.n_users

    def qos(self) -> tuple:
        out = []
        for load, d_ms, xi in zip(self.load_kbps, self.delay_ms, self.xi):
            frames = d_ms * 1e-3 / self.frame_s
            out.append(QoSSpec(load_to_nats(load * 1e3, self.frame_s), frames, xi))
        return tuple(out)

    def scenario(self, workers=None) -> Scenario:
        n_train = self.frames // 2
        return Scenario(
            deployment=self.deployment,
            pathloss=self.pathloss,
            power=PowerPolicy(self.p_ref, self.kappa),
            qos=self.qos(),
            bandwidth=self.bandwidth_hz,
            frame_s=self.frame_s,
            seed=self.seed,
            n_train=n_train,
            n_eval=self.frames - n_train,
            workers=workers,
        )

    def with_axis(self, axis: str, value: float) -> "ScenarioConfig":
        """Copy with every user's parameter on ``axis`` set to ``value``."""
        n = self.n_users
        if axis == "load":
            return replace(self, load_kbps=(value,) * n)
        if axis == "kappa":
            return replace(self, kappa=value)
        if axis == "delay-bound":
            return replace(self, delay_ms=(value,) * n)
        if axis == "xi":
            return replace(self, xi=(value,) * n)
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {AXES}")

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


QOS_AXES = ("load", "delay-bound", "xi")


def sweep_scenarios(cfg: ScenarioConfig, axis: str, values, workers=None) -> list:
    """``(config, scenario)`` per sweep value; QoS axes share one table cache."""
    base = cfg.scenario(workers)
    out = []
    for v in values:
        c = cfg.with_axis(axis, v)
        out.append((c, base.with_qos(c.qos()) if axis in QOS_AXES else c.scenario(workers)))
    return out


def _deployment(cp) -> Deployment:
    sec = cp["deployment"] if cp.has_section("deployment") else {}
    geometry = sec.get("geometry", "one_user_5bs").strip()
    m = [int(x) for x in _floats(sec["bs_antennas"])] if "bs_antennas" in sec else None
    nn = [int(x) for x in _floats(sec["user_antennas"])] if "user_antennas" in sec else None
    if geometry == "inline":
        bs = _points(sec["bs_positions"])
        us = _points(sec["user_positions"])
        return Deployment(bs, m if m is not None else 2, us, nn if nn is not None else 2)
    if geometry not in SCENARIOS:
        raise ValueError(f"unknown geometry {geometry!r}; known: {sorted(SCENARIOS)} or 'inline'")
    return scenario_deployment(geometry,
                               None if m is None else (m[0] if len(m) == 1 else m),
                               None if nn is None else (nn[0] if len(nn) == 1 else nn))


def _tracker(cp) -> TrackerConfig:
    if not cp.has_section("tracker"):
        return TrackerConfig.for_schemes()
    sec = cp["tracker"]
    kw = {}
    for key, conv in (("step", float), ("filter", float), ("tol", float), ("ceiling", float),
                      ("init", float), ("budget", int), ("warmup", int), ("patience", int),
                      ("mode", str)):
        if key in sec:
            kw[key] = conv(sec[key].strip())
    for key in ("adaptive", "polish"):
        if key in sec:
            kw[key] = sec.getboolean(key)
    return TrackerConfig.for_schemes(**kw)


def parse_config(text: str, name: str = "") -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_string(text)
    known = {"deployment", "qos", "power", "channel", "montecarlo", "tracker", "interference", "run"}
    extra = set(cp.sections()) - known
    if extra:
        raise ValueError(f"unknown config sections: {sorted(extra)}")
    if not cp.has_section("qos") or "load_kbps" not in cp["qos"]:
        raise ValueError("config needs [qos] load_kbps")
    dep = _deployment(cp)
    q = cp["qos"]
    p = cp["power"] if cp.has_section("power") else {}
    ch = cp["channel"] if cp.has_section("channel") else {}
    mc = cp["montecarlo"] if cp.has_section("montecarlo") else {}
    itf = cp["interference"] if cp.has_section("interference") else {}
    run = cp["run"] if cp.has_section("run") else {}
    gain_db = float(ch.get("calib_gain_db", 0.0))
    model = PathLossModel.calibrated(
        d_ref=float(ch.get("d_ref", 1.0)), eta=float(ch.get("eta", 3.0)),
        calib_distance=float(ch.get("calib_distance", 50.0)), calib_gain=10 ** (gain_db / 10))
    return ScenarioConfig(
        deployment=dep,
        load_kbps=tuple(_floats(q["load_kbps"])),
        delay_ms=tuple(_floats(q.get("delay_ms", "50"))),
        xi=tuple(_floats(q.get("xi", "1e-4"))),
        p_ref=float(p.get("p_ref", 4.0)),
        kappa=float(p.get("kappa", 2.4)),
        bandwidth_hz=float(ch.get("bandwidth_hz", 1e5)),
        frame_s=float(ch.get("frame_s", 0.01)),
        pathloss=model,
        frames=int(mc.get("frames", 10000)),
        seed=int(mc.get("seed", 1)),
        tracker=_tracker(cp),
        scheme=run.get("scheme", "ibs-ts").strip(),
        grid_m=float(itf.get("grid_m", 0.5)),
        sigma_th2=float(itf.get("sigma_th2", 1.0)),
        name=name,
    )


def builtin_configs() -> dict:
    """Preset configs shipped with the package, by name."""
    root = resources.files("dmimo") / "presets"
    return {p.name[:-4]: p for p in sorted(root.iterdir(), key=lambda p: p.name) if p.name.endswith(".ini")}


def load_config(path) -> ScenarioConfig:
    """Read a config file, or a preset by name when no such file exists."""
    p = Path(path)
    if p.exists():
        return parse_config(p.read_text(), name=p.stem)
    presets = builtin_configs()
    if str(path) in presets:
        return parse_config(presets[str(path)].read_text(), name=str(path))
    raise FileNotFoundError(f"no config file or preset named {path!r}")
