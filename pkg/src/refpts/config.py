"""YAML scenario configuration: parsing, validation and echo.

A config file is a mapping with the keys ``seed``, ``duration_frames``,
``world``, ``agents``, ``fusion``, ``query_fusion``, ``channel``,
``tracker`` and ``transmit``; every key is optional and falls back to the
library defaults. See ``refpts/configs/canonical.yaml`` for a full example.
"""

from __future__ import annotations

import math
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from refpts.core import FusionConfig
from refpts.geometry import Point3, Size3, Velocity2
from refpts.query import QueryFusionConfig
from refpts.sim import (
    AgentSpec,
    ChannelModel,
    ConfigError,
    DetectorProfile,
    GroundTruthObject,
    PoseTrajectory,
    QuerySimConfig,
    ScenarioConfig,
    WorldConfig,
)
from refpts.tracking import TrackerConfig

BUILTIN_PREFIX = "builtin:"


def _take(d: dict, key: str, default: Any) -> Any:
    return d.get(key, default) if d else default


def _tuple(v) -> tuple:
    return tuple(float(x) for x in v)


def _check_keys(section: str, d: Optional[dict], allowed: set[str]) -> None:
    if d is None:
        return
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(extra)}")


def _angle(v) -> float:
    # yaw may be written in degrees as "90deg"
    if isinstance(v, str) and v.endswith("deg"):
        return math.radians(float(v[:-3]))
    return float(v)


def _detector(d: Optional[dict]) -> DetectorProfile:
    _check_keys("detector", d, {
        "fov", "sigma", "fn_rate", "fp_rate", "tp_confidence", "fp_confidence",
        "velocity", "size", "forced_misses",
    })
    base = DetectorProfile()
    d = d or {}
    return DetectorProfile(
        fov_range=_tuple(d.get("fov", base.fov_range)),
        position_noise_sigma=float(d.get("sigma", base.position_noise_sigma)),
        fn_rate=float(d.get("fn_rate", base.fn_rate)),
        fp_rate=float(d.get("fp_rate", base.fp_rate)),
        tp_confidence_range=_tuple(d.get("tp_confidence", base.tp_confidence_range)),
        fp_confidence_range=_tuple(d.get("fp_confidence", base.fp_confidence_range)),
        provides_velocity=bool(d.get("velocity", base.provides_velocity)),
        provides_size=bool(d.get("size", base.provides_size)),
        forced_misses=tuple(tuple(int(x) for x in m) for m in d.get("forced_misses", ())),
    )


def _agent(d: dict) -> AgentSpec:
    _check_keys("agent", d, {"id", "role", "pose", "detector"})
    if "id" not in d:
        raise ConfigError("every agent needs an id")
    pose = d.get("pose") or {}
    _check_keys("pose", pose, {"x", "y", "yaw", "vx", "vy", "yaw_rate"})
    traj = PoseTrajectory(
        x=float(pose.get("x", 0.0)), y=float(pose.get("y", 0.0)),
        yaw=_angle(pose.get("yaw", 0.0)), vx=float(pose.get("vx", 0.0)),
        vy=float(pose.get("vy", 0.0)), yaw_rate=_angle(pose.get("yaw_rate", 0.0)),
    )
    return AgentSpec(int(d["id"]), traj, _detector(d.get("detector")), str(d.get("role", "sender")))


def _world(d: Optional[dict]) -> WorldConfig:
    _check_keys("world", d, {
        "n_objects", "spawn_area", "speed", "length", "width", "height", "n_classes", "wrap",
        "objects",
    })
    b = WorldConfig()
    d = d or {}
    objs = []
    for i, o in enumerate(d.get("objects", ())):
        _check_keys("object", o, {"id", "position", "velocity", "size", "class"})
        size = Size3(*_tuple(o.get("size", (4.5, 1.8, 1.6))))
        pos = _tuple(o["position"])
        if len(pos) == 2:
            pos = (*pos, size.height / 2)
        objs.append(GroundTruthObject(
            int(o.get("id", i)), Point3(*pos), Velocity2(*_tuple(o.get("velocity", (0, 0)))),
            size, int(o.get("class", 0)),
        ))
    return WorldConfig(
        n_objects=int(d.get("n_objects", b.n_objects)),
        spawn_area=_tuple(d.get("spawn_area", b.spawn_area)),
        speed_range=_tuple(d.get("speed", b.speed_range)),
        length_range=_tuple(d.get("length", b.length_range)),
        width_range=_tuple(d.get("width", b.width_range)),
        height_range=_tuple(d.get("height", b.height_range)),
        n_classes=int(d.get("n_classes", b.n_classes)),
        wrap=bool(d.get("wrap", b.wrap)),
        objects=tuple(objs),
    )


def config_from_dict(d: dict) -> ScenarioConfig:
    """Build and validate a :class:`ScenarioConfig`; raises ``ConfigError``."""
    if not isinstance(d, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys("root", d, {
        "seed", "duration_frames", "world", "agents", "fusion", "query_fusion", "channel",
        "tracker", "transmit",
    })
    try:
        fz = d.get("fusion") or {}
        _check_keys("fusion", fz, {
            "tau_d", "visible_range", "use_velocity", "use_size", "matching_policy", "planar",
        })
        fb = FusionConfig()
        fusion = FusionConfig(
            tau_d=float(fz.get("tau_d", fb.tau_d)),
            visible_range=_tuple(fz.get("visible_range", fb.visible_range)),
            use_velocity=bool(fz.get("use_velocity", fb.use_velocity)),
            use_size=bool(fz.get("use_size", fb.use_size)),
            matching_policy=fz.get("matching_policy", fb.matching_policy.value),
            planar_distance=bool(fz.get("planar", fb.planar_distance)),
        )
        qz = d.get("query_fusion")
        query = None
        if qz:
            _check_keys("query_fusion", qz, {"k", "lambda", "embed_dim", "background_confidence"})
            qb = QuerySimConfig()
            query = QuerySimConfig(
                QueryFusionConfig(int(qz.get("k", qb.fusion.k)),
                                  float(qz.get("lambda", qb.fusion.lam))),
                int(qz.get("embed_dim", qb.embed_dim)),
                _tuple(qz.get("background_confidence", qb.background_confidence)),
            )
        cz = d.get("channel") or {}
        _check_keys("channel", cz, {"drop_probability", "latency_frames", "fps"})
        channel = ChannelModel(
            float(cz.get("drop_probability", 0.0)), int(cz.get("latency_frames", 0)),
            float(cz.get("fps", 5.0)),
        )
        tz = d.get("tracker") or {}
        _check_keys("tracker", tz, {"gate_distance", "max_misses", "confidence_decay",
                                    "matching_policy"})
        tb = TrackerConfig(gate_distance=fusion.tau_d)
        tracker = TrackerConfig(
            float(tz.get("gate_distance", tb.gate_distance)),
            int(tz.get("max_misses", tb.max_misses)),
            float(tz.get("confidence_decay", tb.confidence_decay)),
            tz.get("matching_policy", tb.matching_policy.value),
        )
        xz = d.get("transmit") or {}
        _check_keys("transmit", xz, {"attrs", "confidence", "capacity"})
        kw = {}
        if "agents" in d:
            if not isinstance(d["agents"], list):
                raise ConfigError("agents must be a list")
            kw["agents"] = tuple(_agent(a) for a in d["agents"])
        return ScenarioConfig(
            seed=int(d.get("seed", 0)),
            duration_frames=int(d.get("duration_frames", 50)),
            world=_world(d.get("world")),
            fusion=fusion,
            query_fusion=query,
            channel=channel,
            tracker=tracker,
            attrs=str(xz.get("attrs", "pvs")),
            transmit_confidence=bool(xz.get("confidence", False)),
            capacity=int(xz.get("capacity", 900)),
            **kw,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Inverse of :func:`config_from_dict` (up to float formatting)."""
    def det(p: DetectorProfile) -> dict:
        return {
            "fov": list(p.fov_range), "sigma": p.position_noise_sigma, "fn_rate": p.fn_rate,
            "fp_rate": p.fp_rate, "tp_confidence": list(p.tp_confidence_range),
            "fp_confidence": list(p.fp_confidence_range), "velocity": p.provides_velocity,
            "size": p.provides_size, "forced_misses": [list(m) for m in p.forced_misses],
        }

    w = cfg.world
    out = {
        "seed": cfg.seed,
        "duration_frames": cfg.duration_frames,
        "world": {
            "n_objects": w.n_objects, "spawn_area": list(w.spawn_area),
            "speed": list(w.speed_range), "length": list(w.length_range),
            "width": list(w.width_range), "height": list(w.height_range),
            "n_classes": w.n_classes, "wrap": w.wrap,
            "objects": [
                {"id": o.gt_id, "position": list(o.position), "velocity": list(o.velocity),
                 "size": list(o.size), "class": o.class_label}
                for o in w.objects
            ],
        },
        "agents": [
            {
                "id": a.agent_id, "role": a.role,
                "pose": {"x": a.trajectory.x, "y": a.trajectory.y, "yaw": a.trajectory.yaw,
                         "vx": a.trajectory.vx, "vy": a.trajectory.vy,
                         "yaw_rate": a.trajectory.yaw_rate},
                "detector": det(a.detector),
            }
            for a in cfg.agents
        ],
        "fusion": {
            "tau_d": cfg.fusion.tau_d, "visible_range": list(cfg.fusion.visible_range),
            "use_velocity": cfg.fusion.use_velocity, "use_size": cfg.fusion.use_size,
            "matching_policy": cfg.fusion.matching_policy.value,
            "planar": cfg.fusion.planar_distance,
        },
        "query_fusion": None,
        "channel": {
            "drop_probability": cfg.channel.drop_probability,
            "latency_frames": cfg.channel.latency_frames, "fps": cfg.channel.fps,
        },
        "tracker": {
            "gate_distance": cfg.tracker.gate_distance, "max_misses": cfg.tracker.max_misses,
            "confidence_decay": cfg.tracker.confidence_decay,
            "matching_policy": cfg.tracker.matching_policy.value,
        },
        "transmit": {"attrs": cfg.attrs, "confidence": cfg.transmit_confidence,
                     "capacity": cfg.capacity},
    }
    if cfg.query_fusion is not None:
        q = cfg.query_fusion
        out["query_fusion"] = {
            "k": q.fusion.k, "lambda": q.fusion.lam, "embed_dim": q.embed_dim,
            "background_confidence": list(q.background_confidence),
        }
    return out


def read_config_text(path: str | Path) -> str:
    p = str(path)
    if p.startswith(BUILTIN_PREFIX):
        name = p[len(BUILTIN_PREFIX):]
        if not name.endswith(".yaml"):
            name += ".yaml"
        try:
            return resources.files("refpts.configs").joinpath(name).read_text()
        except FileNotFoundError as exc:
            raise ConfigError(f"no builtin config named {name!r}") from exc
    return Path(p).read_text()


def load_yaml(path: str | Path) -> Any:
    try:
        return yaml.safe_load(read_config_text(path))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def load_config(path: str | Path) -> ScenarioConfig:
    return config_from_dict(load_yaml(path) or {})


def apply_overrides(
    cfg: ScenarioConfig,
    *,
    seed: Optional[int] = None,
    duration: Optional[int] = None,
    fps: Optional[float] = None,
    tau_d: Optional[float] = None,
    lam: Optional[float] = None,
    k: Optional[int] = None,
    attrs: Optional[str] = None,
    fn_rate: Optional[float] = None,
    fp_rate: Optional[float] = None,
    points: Optional[int] = None,
) -> ScenarioConfig:
    """Command-line style overrides; rates apply to every sender."""
    try:
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if duration is not None:
            cfg = replace(cfg, duration_frames=int(duration))
        if fps is not None:
            cfg = replace(cfg, channel=replace(cfg.channel, fps=float(fps)))
        if tau_d is not None:
            cfg = replace(cfg, fusion=replace(cfg.fusion, tau_d=float(tau_d)))
        if attrs is not None:
            cfg = replace(
                cfg, attrs=attrs,
                fusion=replace(cfg.fusion, use_velocity="v" in attrs, use_size="s" in attrs),
            )
        if points is not None:
            cfg = replace(cfg, capacity=int(points))
        if k is not None or lam is not None:
            q = cfg.query_fusion or QuerySimConfig()
            qf = replace(
                q.fusion,
                k=int(k) if k is not None else q.fusion.k,
                lam=float(lam) if lam is not None else q.fusion.lam,
            )
            cfg = replace(cfg, query_fusion=replace(q, fusion=qf))
        if fn_rate is not None or fp_rate is not None:
            agents = []
            for a in cfg.agents:
                if a.role == "sender":
                    dp = a.detector
                    dp = replace(
                        dp,
                        fn_rate=float(fn_rate) if fn_rate is not None else dp.fn_rate,
                        fp_rate=float(fp_rate) if fp_rate is not None else dp.fp_rate,
                    )
                    a = replace(a, detector=dp)
                agents.append(a)
            cfg = replace(cfg, agents=tuple(agents))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg
